#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "bagclip/corpus.hpp"
#include "bagclip/encoders.hpp"
#include "bagclip/error.hpp"
#include "bagclip/eval.hpp"

namespace bagclip {

enum class SplitMode { halves, explicit_file, overlap_removed };
enum class Strategy { plain, visibility, threshold, maxpool, fixmatch, kd };

const char* to_string(SplitMode m);
const char* to_string(Strategy s);
SplitMode split_mode_from_string(const std::string& s);
Strategy strategy_from_string(const std::string& s);

// One flat JSON file per experiment. Empty manifest means the in-memory
// synthetic world; an empty kind set means all kinds.
struct ExperimentConfig {
  std::string dataset = "synthetic";
  std::string manifest;
  std::string corpus;
  SplitMode split = SplitMode::halves;
  std::string split_file;
  std::set<TextKind> train_kinds;
  std::set<TextKind> test_kinds;
  std::vector<std::set<TextKind>> ablation_kinds;
  Strategy strategy = Strategy::plain;
  std::string lexicon;  // part -> keywords JSON, for the visibility strategy
  BaselineMode baseline = BaselineMode::clip_a;
  std::uint64_t seed = 1;
  std::string out_dir = "run";
  int embed_dim = 32;
  int attr_dim = 0;  // 0 = infer (world config, or world.json next to manifest)
  bool eval_use_ema = true;
  Aggregation eval_aggregation = Aggregation::arithmetic_mean;
  double eval_temperature = 0.0;  // 0 = no temperature in the eval softmax
  double threshold_p_min = 0.5;
  double fixmatch_sigma = 0.05;
  std::string world_preset = "default";
  std::uint64_t world_seed = 0;  // 0 = follow seed
  HyperConfig hyper;

  bool operator==(const ExperimentConfig&) const = default;
};

// Lowercased alphanumerics only: "FGVC Aircraft" -> "fgvcaircraft".
std::string normalize_dataset_name(const std::string& name);

// Bundled per-dataset defaults keyed by dataset name (case and spacing
// ignored). Unknown names fall back to the CUB row with a warning.
HyperConfig hyper_defaults(const std::string& dataset,
                           std::vector<std::string>* warnings = nullptr);

// Parses the flat JSON config. Unknown or mistyped keys raise ConfigError.
// Hyperparameter keys default from hyper_defaults(dataset).
ExperimentConfig parse_config(const std::string& text,
                              std::vector<std::string>* warnings = nullptr);
std::string config_to_json(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::filesystem::path& path,
                             std::vector<std::string>* warnings = nullptr);
void save_config(const ExperimentConfig& cfg,
                 const std::filesystem::path& path);

void validate_config(const ExperimentConfig& cfg);

std::string kinds_to_csv(const std::set<TextKind>& kinds);

}  // namespace bagclip
