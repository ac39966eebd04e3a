#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bagclip/corpus.hpp"
#include "bagclip/error.hpp"

namespace bagclip {

struct ImageRef {
  std::string id;  // opaque handle; for file datasets a path
  std::map<std::string, bool> visibility;  // part -> visible; empty = none

  bool operator==(const ImageRef&) const = default;
};

struct SplitSpec {
  std::vector<std::string> train;
  std::vector<std::string> test;

  bool operator==(const SplitSpec&) const = default;
};

struct PairingSample {
  ImageRef image;
  DescriptionRecord text;
  std::string class_name;

  bool operator==(const PairingSample&) const = default;
};

struct BagDataset {
  std::map<std::string, std::vector<ImageRef>> images;
  TextCorpus corpus;
  SplitSpec split;
  // Per-image sampling pool override: class -> one list of allowed text
  // indices per image (parallel to images[class]). Absent class = full pool.
  std::map<std::string, std::vector<std::vector<int>>> pools;
};

// First half of the classes (dataset id order) trains, second half tests;
// odd counts give the extra class to train.
SplitSpec halves_split(const std::vector<std::string>& classes_in_id_order);

using NameMatcher =
    std::function<bool(const std::string&, const std::string&)>;
bool names_equal_icase(const std::string& a, const std::string& b);

struct OverlapResult {
  std::vector<std::string> kept;
  int removed = 0;
};
OverlapResult remove_overlap(const std::vector<std::string>& train_classes,
                             const std::vector<std::string>& test_classes,
                             const NameMatcher& matcher = names_equal_icase);

// One sample per image: its class text drawn uniformly from the image's
// pool, then a seeded shuffle of the whole epoch.
std::vector<PairingSample> sample_epoch_pairs(
    const BagDataset& ds, const std::vector<std::string>& classes,
    std::uint64_t rng_seed);

struct VisibilityStats {
  int excluded_texts = 0;   // (image, text) pairs removed
  int fallback_images = 0;  // pools emptied and restored to full
};

// Excludes texts mentioning keywords of parts flagged not-visible from each
// image's sampling pool. An image whose pool empties falls back to the full
// class pool (counted in stats).
BagDataset visibility_filter(
    const BagDataset& ds,
    const std::map<std::string, std::vector<std::string>>& part_lexicon,
    VisibilityStats* stats = nullptr);

void validate_dataset(const BagDataset& ds);

std::string split_to_json(const SplitSpec& split);
SplitSpec split_from_json(const std::string& text);
void save_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec load_split(const std::filesystem::path& path);

std::string manifest_to_json(
    const std::map<std::string, std::vector<ImageRef>>& images);
std::map<std::string, std::vector<ImageRef>> manifest_from_json(
    const std::string& text);
void save_manifest(const std::map<std::string, std::vector<ImageRef>>& images,
                   const std::filesystem::path& path);
std::map<std::string, std::vector<ImageRef>> load_manifest(
    const std::filesystem::path& path);

}  // namespace bagclip
