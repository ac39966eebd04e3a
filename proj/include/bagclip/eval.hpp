#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bagclip/corpus.hpp"
#include "bagclip/dataset.hpp"
#include "bagclip/encoders.hpp"

namespace bagclip {

// Map raw inputs into encoder feature space. The toy world provides both;
// real datasets plug their own.
using TextFeaturizer = std::function<Vec(const std::string&)>;
using ImageFeaturizer = std::function<Vec(const ImageRef&)>;

enum class Aggregation { arithmetic_mean, geometric_mean };

struct ClassScore {
  std::string class_name;
  std::vector<double> per_text_similarities;
  double aggregated_prob = 0.0;
};

struct ZeroShotResult {
  int predicted_index = -1;
  std::string predicted_class;
  bool tie = false;  // argmax tied; lowest class index reported
  std::vector<ClassScore> scores;
};

// The scoring rule on raw similarities: softmax jointly over every text of
// every class, then a per-class mean (arithmetic by default, geometric
// optionally) of its texts' probabilities; argmax of the means. The eval
// softmax applies no temperature unless one is passed.
ZeroShotResult aggregate_class_probabilities(
    const std::vector<std::string>& class_names,
    const std::vector<std::vector<double>>& sims,
    Aggregation agg = Aggregation::arithmetic_mean,
    std::optional<double> temperature = std::nullopt);

struct TestTexts {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::string>> texts;  // per class
  std::vector<std::vector<Vec>> features;       // per class, pre-encoder
};

TestTexts build_test_texts(const TextCorpus& corpus,
                           const std::vector<std::string>& test_classes,
                           const std::set<TextKind>& kinds,
                           const TextFeaturizer& featurize);

// Text embeddings computed once per evaluation run.
struct EncodedTexts {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::string>> texts;
  Mat embeds;                // d x total_texts, unit columns
  std::vector<int> offsets;  // class k occupies [offsets[k], offsets[k+1])
};

EncodedTexts encode_texts(const EncoderPair& pair, const TestTexts& texts);

ZeroShotResult classify_encoded(
    const Vec& image_embedding, const EncodedTexts& texts,
    Aggregation agg = Aggregation::arithmetic_mean,
    std::optional<double> temperature = std::nullopt);

ZeroShotResult classify_zero_shot(
    const EncoderPair& pair, const Vec& image_features, const TestTexts& texts,
    Aggregation agg = Aggregation::arithmetic_mean,
    std::optional<double> temperature = std::nullopt);

enum class BaselineMode { clip, clip_a };

// clip: the single template text "a photo of a [class] [domain]".
// clip_a: the class's corpus texts.
std::vector<std::string> baseline_texts(BaselineMode mode,
                                        const ClassSpec& spec,
                                        const TextCorpus& corpus);

struct BinaryTask {
  std::string task_id;
  std::string positive_text;
  std::string negative_text;
  std::vector<std::pair<ImageRef, int>> items;  // label in {0,1}
};

// Textbook AP over labels listed in rank order (best first).
double average_precision(const std::vector<int>& labels_in_rank_order);

// Scores each image by the two-way softmax probability of the positive
// text, ranks descending (stable), and returns AP of the label-1 items.
double binary_task_ap(const EncoderPair& pair, const BinaryTask& task,
                      const ImageFeaturizer& image_features,
                      const TextFeaturizer& text_features);

std::string newt_tasks_to_csv(const std::vector<BinaryTask>& tasks);
std::vector<BinaryTask> newt_tasks_from_csv(const std::string& text);
std::string newt_items_to_json(const std::vector<BinaryTask>& tasks);
// Fills items of matching tasks in place.
void newt_items_from_json(const std::string& text,
                          std::vector<BinaryTask>* tasks);
std::string newt_results_to_csv(
    const std::vector<std::pair<std::string, double>>& per_task_ap);

struct RankedImage {
  std::string image;
  double score = 0.0;
};

std::vector<RankedImage> similarity_ranking(
    const EncoderPair& pair, const std::vector<ImageRef>& images,
    const std::string& query_text, const ImageFeaturizer& image_features,
    const TextFeaturizer& text_features);

struct RankingReport {
  std::string text;
  std::vector<RankedImage> ranked;  // top_n best then bottom_n worst
};

RankingReport similarity_ranking_report(
    const EncoderPair& pair, const std::vector<ImageRef>& images,
    const std::string& query_text, int top_n, int bottom_n,
    const ImageFeaturizer& image_features, const TextFeaturizer& text_features);

// One JSON object per line: {"text": ..., "ranked": [{"image", "score"}]}.
std::string ranking_reports_to_jsonl(const std::vector<RankingReport>& reports);

struct PredictionRecord {
  std::string image;
  std::string true_class;
  std::string predicted_class;
  bool correct = false;
  bool tie = false;
};

struct EvalRow {
  std::string name;
  double accuracy = 0.0;
  std::map<std::string, double> per_class;
};

struct EvalReport {
  double accuracy = 0.0;                    // headline row
  std::map<std::string, double> per_class;  // headline per-class accuracy
  std::vector<PredictionRecord> predictions;
  std::vector<EvalRow> rows;      // baseline comparison, when assembled
  std::vector<EvalRow> ablation;  // per text-kind set, when configured
  std::vector<std::pair<std::string, double>> per_task_ap;
  double mean_ap = 0.0;
  std::vector<RankingReport> rankings;
};

// {"accuracy": ..., "per_class": {...}} plus any non-empty sections.
std::string eval_report_to_json(const EvalReport& report);

}  // namespace bagclip
