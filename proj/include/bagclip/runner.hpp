#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bagclip/config.hpp"
#include "bagclip/dataset.hpp"
#include "bagclip/encoders.hpp"
#include "bagclip/eval.hpp"
#include "bagclip/synth.hpp"

namespace bagclip {

// Data plus featurizers resolved from a config: either the in-memory
// synthetic world (empty manifest) or a file-backed manifest/corpus pair.
struct Workbench {
  BagDataset ds;
  TextFeaturizer text_features;
  ImageFeaturizer image_features;
  int attr_dim = 0;
  std::string corpus_json;  // canonical form, hashed into run metadata
  std::optional<SyntheticWorld> world;
};

Workbench load_workbench(const ExperimentConfig& cfg);

// Reads {"features": [...]} JSON files addressed by image id under root.
ImageFeaturizer make_file_image_featurizer(const std::filesystem::path& root,
                                           int attr_dim);

struct TrainResult {
  EncoderPair live;
  EmaShadow shadow;
  long steps = 0;
  double first_loss_ft = 0.0;
  double last_loss_ft = 0.0;
  std::vector<std::string> log_lines;  // JSON lines, one per step
  VisibilityStats visibility;          // only the visibility strategy fills it
};

// One full fine-tuning run over cfg.hyper.epochs; kinds restrict the
// training texts (empty = all).
TrainResult train_on(const Workbench& wb, const ExperimentConfig& cfg,
                     const std::set<TextKind>& kinds);

// train_on with cfg.train_kinds, persisted under cfg.out_dir: checkpoint/,
// train_log.jsonl and run.json (config snapshot, corpus hash, git describe,
// seed). Returns the checkpoint directory.
std::string run_training(const ExperimentConfig& cfg);

// The four-row baseline comparison on the held-out classes, plus one
// freshly trained row per entry of cfg.ablation_kinds. The headline
// accuracy is the CLIP^FT+A row.
EvalReport run_eval(const ExperimentConfig& cfg,
                    const std::string& checkpoint_dir);

// Reference full-scale accuracies (ViT-B/32) for the four comparison rows,
// kept as context only; desk-scale runs are not comparable.
std::optional<std::vector<std::pair<std::string, double>>>
reference_full_scale(const std::string& dataset);

struct NewtReport {
  std::vector<std::pair<std::string, double>> per_task_ap;
  double mean_ap = 0.0;
};

// Binary-task MAP of a checkpoint; image feature files resolve relative to
// the tasks CSV's directory.
NewtReport run_newt(const std::filesystem::path& tasks_csv,
                    const std::filesystem::path& items_json,
                    const std::filesystem::path& checkpoint_dir,
                    bool use_ema = true);

// Top/bottom similarity rankings for the first texts_per_class test texts of
// each held-out class.
std::vector<RankingReport> run_rankings(const ExperimentConfig& cfg,
                                        const std::string& checkpoint_dir,
                                        int texts_per_class = 1, int top_n = 5,
                                        int bottom_n = 5);

}  // namespace bagclip
