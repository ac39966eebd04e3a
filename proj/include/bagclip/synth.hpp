#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bagclip/dataset.hpp"
#include "bagclip/eval.hpp"

namespace bagclip {

// Attribute world: classes are attribute subsets, images are noisy attribute
// indicator vectors, texts mention attributes by token ("attr7"). The
// attribute space splits into a shared pool (first half) plus train-only and
// test-only side pools (a quarter each), so held-out-class performance can
// only come through attributes also seen in training.
struct SyntheticWorldConfig {
  int attr_count = 64;        // divisible by 4
  int n_classes = 40;         // halves split: first half trains
  int images_per_class = 25;
  int visual_texts_per_class = 5;   // one attribute each
  int habitat_texts_per_class = 3;  // one context attribute each
  int visual_shared_attrs = 3;      // drawn from the shared pool
  int context_shared_attrs = 2;
  double noise_sigma = 0.05;
  double attr_visibility_prob = 0.85;  // visual attribute shows in an image
  double context_presence_prob = 0.9;
  std::uint64_t seed = 1;

  bool operator==(const SyntheticWorldConfig&) const = default;
};

struct SyntheticWorld {
  SyntheticWorldConfig config;
  std::vector<std::string> class_names;
  std::vector<std::vector<int>> visual_attrs;   // per class
  std::vector<std::vector<int>> context_attrs;  // per class
  std::map<std::string, Vec> image_features;    // by image id
  BagDataset dataset;

  Vec image_features_of(const ImageRef& img) const;
  TextFeaturizer text_featurizer() const;
  ImageFeaturizer image_featurizer() const;
};

// Indicator vector over attribute tokens ("attr<k>") found in the text;
// texts without attribute tokens map to the zero vector.
Vec parse_attr_text(const std::string& text, int attr_count);

SyntheticWorld build_synthetic_world(const SyntheticWorldConfig& cfg);

// Keyword lexicon for ground-truth visibility masking: one part per
// attribute, keyword equal to its token.
std::map<std::string, std::vector<std::string>> world_part_lexicon(
    const SyntheticWorld& world);

// Binary tasks over per-image attribute visibility: positive text names the
// task attribute, negative text names a sibling attribute of the same class.
std::vector<BinaryTask> make_synthetic_newt(const SyntheticWorld& world,
                                            int n_tasks, std::uint64_t seed);

// Materializes manifest.json, corpus.json, split.json, per-image feature
// files, newt_tasks.csv, newt_items.json and world.json under out_dir.
void write_world(const SyntheticWorld& world,
                 const std::filesystem::path& out_dir);

// "default" or "tiny".
SyntheticWorldConfig synth_preset(const std::string& name);

std::string world_config_to_json(const SyntheticWorldConfig& cfg);
SyntheticWorldConfig world_config_from_json(const std::string& text);

}  // namespace bagclip
