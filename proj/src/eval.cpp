#include "bagclip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bagclip/csv.hpp"
#include "json.hpp"

namespace bagclip {

using nlohmann::json;

ZeroShotResult aggregate_class_probabilities(
    const std::vector<std::string>& class_names,
    const std::vector<std::vector<double>>& sims, Aggregation agg,
    std::optional<double> temperature) {
  if (class_names.empty() || class_names.size() != sims.size()) {
    raise(Errc::empty_test_corpus, "no test classes");
  }
  for (std::size_t k = 0; k < sims.size(); ++k) {
    if (sims[k].empty()) {
      raise(Errc::empty_test_corpus,
            "class '" + class_names[k] + "' has no texts");
    }
  }
  const double t = temperature.value_or(1.0);
  if (!(t > 0.0)) raise(Errc::invalid_argument, "temperature must be positive");

  // joint softmax over every (class, text) pair, stabilized by the global max
  double gmax = -std::numeric_limits<double>::infinity();
  for (const auto& row : sims) {
    for (double s : row) {
      if (!std::isfinite(s)) {
        raise(Errc::non_finite_similarity, "similarity has NaN/inf");
      }
      gmax = std::max(gmax, s / t);
    }
  }
  double z = 0.0;
  for (const auto& row : sims) {
    for (double s : row) z += std::exp(s / t - gmax);
  }
  const double log_z = std::log(z);

  ZeroShotResult out;
  out.scores.resize(class_names.size());
  for (std::size_t k = 0; k < sims.size(); ++k) {
    auto& cs = out.scores[k];
    cs.class_name = class_names[k];
    cs.per_text_similarities = sims[k];
    const double lk = static_cast<double>(sims[k].size());
    if (agg == Aggregation::arithmetic_mean) {
      double acc = 0.0;
      for (double s : sims[k]) acc += std::exp(s / t - gmax - log_z);
      cs.aggregated_prob = acc / lk;
    } else {
      // geometric mean of probabilities, via mean of log-probabilities
      double acc = 0.0;
      for (double s : sims[k]) acc += s / t - gmax - log_z;
      cs.aggregated_prob = std::exp(acc / lk);
    }
  }
  out.predicted_index = 0;
  for (std::size_t k = 1; k < out.scores.size(); ++k) {
    if (out.scores[k].aggregated_prob >
        out.scores[static_cast<std::size_t>(out.predicted_index)]
            .aggregated_prob) {
      out.predicted_index = static_cast<int>(k);
    }
  }
  const double best =
      out.scores[static_cast<std::size_t>(out.predicted_index)].aggregated_prob;
  for (std::size_t k = 0; k < out.scores.size(); ++k) {
    if (static_cast<int>(k) != out.predicted_index &&
        out.scores[k].aggregated_prob == best) {
      out.tie = true;
      break;
    }
  }
  out.predicted_class = class_names[static_cast<std::size_t>(out.predicted_index)];
  return out;
}

TestTexts build_test_texts(const TextCorpus& corpus,
                           const std::vector<std::string>& test_classes,
                           const std::set<TextKind>& kinds,
                           const TextFeaturizer& featurize) {
  TestTexts out;
  for (const auto& cls : test_classes) {
    auto texts = corpus.texts_of(cls, kinds);
    if (texts.empty()) {
      raise(Errc::empty_test_corpus,
            "class '" + cls + "' has no texts of the requested kinds");
    }
    std::vector<Vec> feats;
    feats.reserve(texts.size());
    for (const auto& t : texts) feats.push_back(featurize(t));
    out.class_names.push_back(cls);
    out.texts.push_back(std::move(texts));
    out.features.push_back(std::move(feats));
  }
  if (out.class_names.empty()) raise(Errc::empty_test_corpus, "no test classes");
  return out;
}

EncodedTexts encode_texts(const EncoderPair& pair, const TestTexts& texts) {
  if (texts.class_names.empty()) raise(Errc::empty_test_corpus, "no classes");
  EncodedTexts out;
  out.class_names = texts.class_names;
  out.texts = texts.texts;
  int total = 0;
  out.offsets.push_back(0);
  for (const auto& f : texts.features) {
    if (f.empty()) raise(Errc::empty_test_corpus, "class without texts");
    total += static_cast<int>(f.size());
    out.offsets.push_back(total);
  }
  Mat inputs(texts.features[0][0].size(), total);
  int col = 0;
  for (const auto& f : texts.features) {
    for (const auto& v : f) inputs.col(col++) = v;
  }
  out.embeds = forward_batch(pair.text_enc, inputs).e;
  return out;
}

ZeroShotResult classify_encoded(const Vec& image_embedding,
                                const EncodedTexts& texts, Aggregation agg,
                                std::optional<double> temperature) {
  Eigen::RowVectorXd all = image_embedding.transpose() * texts.embeds;
  std::vector<std::vector<double>> sims(texts.class_names.size());
  for (std::size_t k = 0; k < texts.class_names.size(); ++k) {
    for (int m = texts.offsets[k]; m < texts.offsets[k + 1]; ++m) {
      sims[k].push_back(all(m));
    }
  }
  return aggregate_class_probabilities(texts.class_names, sims, agg,
                                       temperature);
}

ZeroShotResult classify_zero_shot(const EncoderPair& pair,
                                  const Vec& image_features,
                                  const TestTexts& texts, Aggregation agg,
                                  std::optional<double> temperature) {
  const Vec e = forward_one(pair.image_enc, image_features);
  return classify_encoded(e, encode_texts(pair, texts), agg, temperature);
}

std::vector<std::string> baseline_texts(BaselineMode mode,
                                        const ClassSpec& spec,
                                        const TextCorpus& corpus) {
  validate_spec(spec);
  if (mode == BaselineMode::clip) {
    return {"a photo of a " + spec.class_name + " " + spec.domain_word};
  }
  return corpus.texts_of(spec.class_name);
}

double average_precision(const std::vector<int>& labels_in_rank_order) {
  int positives = 0, negatives = 0;
  for (int l : labels_in_rank_order) {
    if (l == 1) ++positives;
    else if (l == 0) ++negatives;
    else raise(Errc::invalid_argument, "labels must be 0 or 1");
  }
  if (positives == 0 || negatives == 0) {
    raise(Errc::degenerate_labels, "need both labels for AP");
  }
  // Extended-precision accumulation so short hand-checkable lists round to
  // the exact double (e.g. [1,0,1] -> 5/6).
  long double ap = 0.0L;
  int hits = 0;
  for (std::size_t k = 0; k < labels_in_rank_order.size(); ++k) {
    if (labels_in_rank_order[k] == 1) {
      ++hits;
      ap += static_cast<long double>(hits) / static_cast<long double>(k + 1);
    }
  }
  return static_cast<double>(ap / positives);
}

double binary_task_ap(const EncoderPair& pair, const BinaryTask& task,
                      const ImageFeaturizer& image_features,
                      const TextFeaturizer& text_features) {
  if (task.positive_text.empty() || task.negative_text.empty()) {
    raise(Errc::invalid_argument, "task texts must be non-empty");
  }
  if (task.items.empty()) raise(Errc::degenerate_labels, "task has no items");
  const Vec ep = forward_one(pair.text_enc, text_features(task.positive_text));
  const Vec en = forward_one(pair.text_enc, text_features(task.negative_text));
  struct Scored {
    double score;
    int label;
  };
  std::vector<Scored> scored;
  scored.reserve(task.items.size());
  for (const auto& [img, label] : task.items) {
    const Vec ei = forward_one(pair.image_enc, image_features(img));
    const double s_pos = ei.dot(ep);
    const double s_neg = ei.dot(en);
    // two-way softmax of the text pair
    const double p = 1.0 / (1.0 + std::exp(s_neg - s_pos));
    scored.push_back({p, label});
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const Scored& a, const Scored& b) {
                     return a.score > b.score;
                   });
  std::vector<int> labels;
  labels.reserve(scored.size());
  for (const auto& s : scored) labels.push_back(s.label);
  return average_precision(labels);
}

std::string newt_tasks_to_csv(const std::vector<BinaryTask>& tasks) {
  std::string out = "task,negative_text,positive_text\n";
  for (const auto& t : tasks) {
    out += csv_row({t.task_id, t.negative_text, t.positive_text});
  }
  return out;
}

std::vector<BinaryTask> newt_tasks_from_csv(const std::string& text) {
  auto rows = csv_parse(text);
  if (rows.empty() || rows[0] != std::vector<std::string>{
                                     "task", "negative_text", "positive_text"}) {
    raise(Errc::format_error, "expected header task,negative_text,positive_text");
  }
  std::vector<BinaryTask> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 3) {
      raise(Errc::format_error,
            "row " + std::to_string(i) + ": want 3 fields");
    }
    BinaryTask t;
    t.task_id = rows[i][0];
    t.negative_text = rows[i][1];
    t.positive_text = rows[i][2];
    out.push_back(std::move(t));
  }
  return out;
}

std::string newt_items_to_json(const std::vector<BinaryTask>& tasks) {
  json j = json::object();
  for (const auto& t : tasks) {
    json arr = json::array();
    for (const auto& [img, label] : t.items) {
      arr.push_back({{"image", img.id}, {"label", label}});
    }
    j[t.task_id] = std::move(arr);
  }
  return j.dump(2) + "\n";
}

void newt_items_from_json(const std::string& text,
                          std::vector<BinaryTask>* tasks) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(Errc::format_error, std::string("items JSON: ") + e.what());
  }
  for (auto& t : *tasks) {
    if (!j.contains(t.task_id)) {
      raise(Errc::format_error, "no items for task '" + t.task_id + "'");
    }
    t.items.clear();
    for (const auto& e : j[t.task_id]) {
      ImageRef img{e.at("image").get<std::string>(), {}};
      t.items.emplace_back(std::move(img), e.at("label").get<int>());
    }
  }
}

std::string newt_results_to_csv(
    const std::vector<std::pair<std::string, double>>& per_task_ap) {
  std::string out = "task,ap\n";
  char buf[64];
  for (const auto& [task, ap] : per_task_ap) {
    std::snprintf(buf, sizeof(buf), "%.17g", ap);
    out += csv_row({task, buf});
  }
  return out;
}

std::vector<RankedImage> similarity_ranking(
    const EncoderPair& pair, const std::vector<ImageRef>& images,
    const std::string& query_text, const ImageFeaturizer& image_features,
    const TextFeaturizer& text_features) {
  if (images.empty()) raise(Errc::invalid_argument, "no images to rank");
  const Vec et = forward_one(pair.text_enc, text_features(query_text));
  std::vector<RankedImage> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    const Vec ei = forward_one(pair.image_enc, image_features(img));
    out.push_back({img.id, ei.dot(et)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedImage& a, const RankedImage& b) {
                     return a.score > b.score;
                   });
  return out;
}

RankingReport similarity_ranking_report(
    const EncoderPair& pair, const std::vector<ImageRef>& images,
    const std::string& query_text, int top_n, int bottom_n,
    const ImageFeaturizer& image_features,
    const TextFeaturizer& text_features) {
  auto ranked =
      similarity_ranking(pair, images, query_text, image_features, text_features);
  RankingReport rep;
  rep.text = query_text;
  const int n = static_cast<int>(ranked.size());
  const int t = std::min(std::max(top_n, 0), n);
  const int b = std::min(std::max(bottom_n, 0), n - t);
  rep.ranked.assign(ranked.begin(), ranked.begin() + t);
  rep.ranked.insert(rep.ranked.end(), ranked.end() - b, ranked.end());
  return rep;
}

std::string ranking_reports_to_jsonl(
    const std::vector<RankingReport>& reports) {
  std::string out;
  for (const auto& rep : reports) {
    json arr = json::array();
    for (const auto& r : rep.ranked) {
      arr.push_back({{"image", r.image}, {"score", r.score}});
    }
    json line{{"text", rep.text}, {"ranked", std::move(arr)}};
    out += line.dump() + "\n";
  }
  return out;
}

std::string eval_report_to_json(const EvalReport& report) {
  json j;
  j["accuracy"] = report.accuracy;
  j["per_class"] = json::object();
  for (const auto& [name, acc] : report.per_class) j["per_class"][name] = acc;
  if (!report.rows.empty() || !report.ablation.empty()) {
    auto row_json = [](const EvalRow& row) {
      json r{{"name", row.name}, {"accuracy", row.accuracy}};
      r["per_class"] = json::object();
      for (const auto& [name, acc] : row.per_class) r["per_class"][name] = acc;
      return r;
    };
    j["rows"] = json::array();
    for (const auto& row : report.rows) j["rows"].push_back(row_json(row));
    if (!report.ablation.empty()) {
      j["ablation"] = json::array();
      for (const auto& row : report.ablation)
        j["ablation"].push_back(row_json(row));
    }
  }
  if (!report.predictions.empty()) {
    j["predictions"] = json::array();
    for (const auto& p : report.predictions) {
      j["predictions"].push_back({{"image", p.image},
                                  {"true_class", p.true_class},
                                  {"predicted_class", p.predicted_class},
                                  {"correct", p.correct},
                                  {"tie", p.tie}});
    }
  }
  if (!report.per_task_ap.empty()) {
    j["per_task_ap"] = json::object();
    for (const auto& [task, ap] : report.per_task_ap) j["per_task_ap"][task] = ap;
    j["mean_ap"] = report.mean_ap;
  }
  return j.dump(2) + "\n";
}

}  // namespace bagclip
