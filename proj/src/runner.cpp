#include "bagclip/runner.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "bagclip/loss.hpp"
#include "bagclip/rng.hpp"
#include "bagclip/version.hpp"

namespace fs = std::filesystem;

namespace bagclip {

using json = nlohmann::json;

namespace {

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::io_error, "cannot write " + path.string());
  out << content;
  if (!out) raise(Errc::io_error, "short write to " + path.string());
}

// Index-parallel map; each fn(i) owns slot i of its output.
template <typename Fn>
void parallel_over(int n, Fn&& fn) {
  const unsigned hw = std::thread::hardware_concurrency();
  const int workers = static_cast<int>(std::min<unsigned>(hw ? hw : 1, 8));
  if (workers <= 1 || n < 2 * workers) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::future<void>> futs;
  futs.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    futs.push_back(std::async(std::launch::async, [&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    }));
  }
  for (auto& f : futs) f.get();
}

// Drops every record whose kind is not listed; empty set keeps everything.
BagDataset restrict_kinds(const BagDataset& ds,
                          const std::set<TextKind>& kinds) {
  if (kinds.empty()) return ds;
  BagDataset out = ds;
  out.pools.clear();
  for (auto& [name, recs] : out.corpus.entries) {
    std::vector<DescriptionRecord> kept;
    for (const auto& r : recs) {
      if (kinds.count(r.kind)) kept.push_back(r);
    }
    recs = std::move(kept);
  }
  return out;
}

// One template text per class, mirroring the frozen-baseline text set.
TextCorpus template_corpus(const TextCorpus& corpus) {
  TextCorpus out;
  out.dataset = corpus.dataset;
  out.domain_word = corpus.domain_word;
  for (const auto& [name, recs] : corpus.entries) {
    (void)recs;
    DescriptionRecord rec;
    rec.text = "a photo of a " + name + " " + corpus.domain_word;
    rec.kind = TextKind::visual;
    rec.source = TextSource::template_text;
    rec.raw_line = rec.text;
    out.entries[name] = {rec};
  }
  return out;
}

std::map<std::string, std::vector<std::string>> resolve_lexicon(
    const ExperimentConfig& cfg, const Workbench& wb) {
  if (!cfg.lexicon.empty()) {
    json j = json::parse(read_text_file(cfg.lexicon), nullptr, false);
    if (j.is_discarded() || !j.is_object())
      raise(Errc::config_error, "lexicon must be a JSON object");
    std::map<std::string, std::vector<std::string>> lex;
    for (const auto& [part, keywords] : j.items()) {
      if (!keywords.is_array())
        raise(Errc::config_error, "lexicon values must be keyword arrays");
      lex[part] = keywords.get<std::vector<std::string>>();
    }
    return lex;
  }
  if (wb.world) return world_part_lexicon(*wb.world);
  raise(Errc::config_error,
        "the visibility strategy needs a lexicon for file-backed datasets");
}

struct StepLoss {
  double loss_image = 0.0;
  double loss_text = 0.0;
  double loss_ft = 0.0;  // the bag-loss component actually optimized
  double value = 0.0;    // full objective incl. strategy terms
  Mat dS;
  double dtau = 0.0;
};

StepLoss step_loss(const ExperimentConfig& cfg, const EncoderPair& pair,
                   const EncoderPair& frozen, const Mat& xi, const Mat& xt,
                   const ForwardTrace& tt, const std::vector<int>& labels,
                   const Mat& S, double tau, Rng& noise_rng) {
  StepLoss out;
  auto bag = [&](const TrainBatch& b) {
    auto gi = loss_image_with_grad(b, tau);
    auto gt = loss_text_with_grad(b, tau);
    out.loss_image = gi.value;
    out.loss_text = gt.value;
    out.loss_ft = gi.value + gt.value;
    out.dS = gi.dS + gt.dS;
    out.dtau = gi.dtau + gt.dtau;
    out.value = out.loss_ft;
  };
  auto frozen_similarities = [&]() {
    auto fi = forward_batch(frozen.image_enc, xi);
    auto ft = forward_batch(frozen.text_enc, xt);
    return Mat(fi.e.transpose() * ft.e);
  };

  switch (cfg.strategy) {
    case Strategy::plain:
    case Strategy::visibility:
      bag(make_batch(labels, S));
      break;
    case Strategy::threshold: {
      auto sets = threshold_mask(make_batch(labels, frozen_similarities()),
                                 frozen.tau(), cfg.threshold_p_min);
      bag(with_positive_sets(sets, S));
      break;
    }
    case Strategy::maxpool: {
      auto batch = make_batch(labels, S);
      auto sel = select_max_pairs(batch);
      auto sub = max_pool_subbatch(batch, sel);
      auto gi = loss_image_with_grad(sub, tau);
      auto gt = loss_text_with_grad(sub, tau);
      out.loss_image = gi.value;
      out.loss_text = gt.value;
      out.loss_ft = gi.value + gt.value;
      out.value = out.loss_ft;
      out.dtau = gi.dtau + gt.dtau;
      out.dS = Mat::Zero(S.rows(), S.cols());
      const Mat dsub = gi.dS + gt.dS;
      const int m = static_cast<int>(sel.rows.size());
      for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b) {
          out.dS(sel.rows[a], sel.cols[b]) += dsub(a, b);
        }
      }
      break;
    }
    case Strategy::fixmatch: {
      bag(make_batch(labels, S));
      Mat weak = xi;
      for (Eigen::Index c = 0; c < weak.cols(); ++c) {
        for (Eigen::Index r = 0; r < weak.rows(); ++r) {
          weak(r, c) += noise_rng.next_normal(0.0, cfg.fixmatch_sigma);
        }
      }
      const Mat weak_S = forward_batch(pair.image_enc, weak).e.transpose() * tt.e;
      auto pl = pseudo_label_ce(S, weak_S, tau);
      out.value = fixmatch_combine(out.loss_ft, pl.value);
      out.dS += kFixmatchPseudoWeight * pl.dS;
      out.dtau += kFixmatchPseudoWeight * pl.dtau;
      break;
    }
    case Strategy::kd: {
      bag(make_batch(labels, S));
      auto kg = kd_kl_with_grad(frozen_similarities(), S);
      out.value = kd_combine(out.loss_ft, kg.value);
      out.dS += kKdLossWeight * kg.dS_student;
      break;
    }
  }
  return out;
}

std::optional<double> eval_temperature_of(const ExperimentConfig& cfg) {
  if (cfg.eval_temperature > 0.0) return cfg.eval_temperature;
  return std::nullopt;
}

// Per-class template texts featurized for the CLIP rows.
TestTexts template_test_texts(const TextCorpus& corpus,
                              const std::vector<std::string>& classes,
                              const TextFeaturizer& featurize) {
  TestTexts out;
  for (const auto& name : classes) {
    ClassSpec spec;
    spec.class_name = name;
    spec.domain_word = corpus.domain_word;
    auto texts = baseline_texts(BaselineMode::clip, spec, corpus);
    std::vector<Vec> features;
    features.reserve(texts.size());
    for (const auto& t : texts) features.push_back(featurize(t));
    out.class_names.push_back(name);
    out.texts.push_back(std::move(texts));
    out.features.push_back(std::move(features));
  }
  return out;
}

EvalRow eval_row(const std::string& name, const EncoderPair& pair,
                 const Workbench& wb, const TestTexts& texts,
                 const ExperimentConfig& cfg,
                 std::vector<PredictionRecord>* predictions) {
  const auto encoded = encode_texts(pair, texts);
  const auto temperature = eval_temperature_of(cfg);

  struct Item {
    const ImageRef* image;
    const std::string* cls;
  };
  std::vector<Item> items;
  for (const auto& cls : wb.ds.split.test) {
    auto it = wb.ds.images.find(cls);
    if (it == wb.ds.images.end()) continue;
    for (const auto& img : it->second) items.push_back({&img, &cls});
  }

  std::vector<PredictionRecord> records(items.size());
  parallel_over(static_cast<int>(items.size()), [&](int i) {
    const Vec features = wb.image_features(*items[i].image);
    const Vec embedding = forward_one(pair.image_enc, features);
    auto res =
        classify_encoded(embedding, encoded, cfg.eval_aggregation, temperature);
    PredictionRecord rec;
    rec.image = items[i].image->id;
    rec.true_class = *items[i].cls;
    rec.predicted_class = res.predicted_class;
    rec.correct = res.predicted_class == *items[i].cls;
    rec.tie = res.tie;
    records[i] = std::move(rec);
  });

  EvalRow row;
  row.name = name;
  std::map<std::string, std::pair<int, int>> tallies;  // correct, total
  int correct = 0;
  for (const auto& rec : records) {
    auto& [c, t] = tallies[rec.true_class];
    ++t;
    if (rec.correct) {
      ++c;
      ++correct;
    }
  }
  row.accuracy = records.empty()
                     ? 0.0
                     : static_cast<double>(correct) / records.size();
  for (const auto& [cls, ct] : tallies) {
    row.per_class[cls] = static_cast<double>(ct.first) / ct.second;
  }
  if (predictions) *predictions = std::move(records);
  return row;
}

EncoderPair checkpoint_pair(const Checkpoint& ck, bool use_ema) {
  return use_ema ? ck.ema : ck.live;
}

void check_checkpoint_dims(const Checkpoint& ck, const Workbench& wb) {
  if (ck.live.image_enc.input_dim() != wb.attr_dim ||
      ck.live.text_enc.input_dim() != wb.attr_dim) {
    raise(Errc::dimension_mismatch,
          "checkpoint expects input dim " +
              std::to_string(ck.live.image_enc.input_dim()) +
              " but the dataset provides " + std::to_string(wb.attr_dim));
  }
}

std::string hash_hex(const std::string& payload) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(payload));
  return buf;
}

}  // namespace

ImageFeaturizer make_file_image_featurizer(const fs::path& root,
                                           int attr_dim) {
  return [root, attr_dim](const ImageRef& img) -> Vec {
    const fs::path path = root / img.id;
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("features") ||
        !j["features"].is_array()) {
      raise(Errc::format_error,
            "image file " + path.string() + " lacks a features array");
    }
    const auto& arr = j["features"];
    if (static_cast<int>(arr.size()) != attr_dim) {
      raise(Errc::dimension_mismatch,
            path.string() + " has " + std::to_string(arr.size()) +
                " features, expected " + std::to_string(attr_dim));
    }
    Vec v(attr_dim);
    for (int i = 0; i < attr_dim; ++i) {
      if (!arr[i].is_number())
        raise(Errc::format_error, path.string() + " features must be numbers");
      v(i) = arr[i].get<double>();
    }
    return v;
  };
}

Workbench load_workbench(const ExperimentConfig& cfg) {
  validate_config(cfg);
  Workbench wb;
  if (cfg.manifest.empty()) {
    auto wcfg = synth_preset(cfg.world_preset);
    wcfg.seed = cfg.world_seed != 0 ? cfg.world_seed : cfg.seed;
    auto world = build_synthetic_world(wcfg);
    wb.attr_dim = wcfg.attr_count;
    wb.ds = world.dataset;
    wb.text_features = world.text_featurizer();
    wb.image_features = world.image_featurizer();
    wb.world = std::move(world);
  } else {
    wb.ds.images = load_manifest(cfg.manifest);
    wb.ds.corpus = load_corpus(cfg.corpus);
    switch (cfg.split) {
      case SplitMode::halves: {
        std::vector<std::string> classes;
        classes.reserve(wb.ds.images.size());
        for (const auto& [name, refs] : wb.ds.images) {
          (void)refs;
          classes.push_back(name);
        }
        wb.ds.split = halves_split(classes);
        break;
      }
      case SplitMode::explicit_file:
        wb.ds.split = load_split(cfg.split_file);
        break;
      case SplitMode::overlap_removed: {
        auto split = load_split(cfg.split_file);
        split.test = remove_overlap(split.train, split.test).kept;
        wb.ds.split = split;
        break;
      }
    }
    int attr_dim = cfg.attr_dim;
    if (attr_dim == 0) {
      const fs::path world_json =
          fs::path(cfg.manifest).parent_path() / "world.json";
      if (!fs::exists(world_json)) {
        raise(Errc::config_error,
              "attr_dim required: no world.json next to the manifest");
      }
      attr_dim = world_config_from_json(read_text_file(world_json)).attr_count;
    }
    wb.attr_dim = attr_dim;
    wb.text_features = [attr_dim](const std::string& text) {
      return parse_attr_text(text, attr_dim);
    };
    wb.image_features =
        make_file_image_featurizer(fs::path(cfg.manifest).parent_path(),
                                   attr_dim);
  }
  wb.corpus_json = corpus_to_json(wb.ds.corpus);
  validate_dataset(wb.ds);
  return wb;
}

TrainResult train_on(const Workbench& wb, const ExperimentConfig& cfg,
                     const std::set<TextKind>& kinds) {
  validate_hyper(cfg.hyper);
  const HyperConfig& hp = cfg.hyper;

  TrainResult result;
  BagDataset ds = restrict_kinds(wb.ds, kinds);
  if (cfg.baseline == BaselineMode::clip) {
    ds.corpus = template_corpus(wb.ds.corpus);
    ds.pools.clear();
  }
  if (cfg.strategy == Strategy::visibility) {
    ds = visibility_filter(ds, resolve_lexicon(cfg, wb), &result.visibility);
  }

  EncoderPair pair =
      make_toy_pair(cfg.embed_dim, wb.attr_dim, cfg.seed, hp.temperature_init);
  const EncoderPair frozen = pair;
  EmaShadow shadow = make_shadow(pair, hp.momentum);
  AdamW opt(&pair, hp);
  Rng noise_rng(mix_seed(cfg.seed, 0xF18A));

  std::map<std::string, int> class_ids;
  for (const auto& cls : ds.split.train) {
    class_ids.emplace(cls, static_cast<int>(class_ids.size()));
  }

  long step = 0;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    const auto samples = sample_epoch_pairs(ds, ds.split.train,
                                            mix_seed(cfg.seed, 9000 + epoch));
    for (std::size_t start = 0; start < samples.size();
         start += static_cast<std::size_t>(hp.batch_size)) {
      const int n = static_cast<int>(
          std::min<std::size_t>(samples.size() - start,
                                static_cast<std::size_t>(hp.batch_size)));
      Mat xi(wb.attr_dim, n), xt(wb.attr_dim, n);
      std::vector<int> labels(n);
      for (int k = 0; k < n; ++k) {
        const auto& s = samples[start + k];
        xi.col(k) = wb.image_features(s.image);
        xt.col(k) = wb.text_features(s.text.text);
        labels[k] = class_ids.at(s.class_name);
      }

      const auto ti = forward_batch(pair.image_enc, xi);
      const auto tt = forward_batch(pair.text_enc, xt);
      const Mat S = ti.e.transpose() * tt.e;
      const double tau = pair.tau();

      StepLoss sl = step_loss(cfg, pair, frozen, xi, xt, tt, labels, S, tau,
                              noise_rng);
      if (!std::isfinite(sl.value) || !sl.dS.allFinite() ||
          !std::isfinite(sl.dtau)) {
        raise(Errc::numerical_divergence,
              "non-finite loss at step " + std::to_string(step + 1) +
                  " (loss=" + std::to_string(sl.value) +
                  ", tau=" + std::to_string(tau) + ")");
      }

      PairGrads grads;
      grads.image = backward_batch(pair.image_enc, ti, Mat(tt.e * sl.dS.transpose()));
      grads.text = backward_batch(pair.text_enc, tt, Mat(ti.e * sl.dS));
      grads.dlog_tau = sl.dtau * tau;
      opt.step(grads);
      ema_update(shadow, pair);
      ++step;

      json line{{"step", step},
                {"loss_ft", sl.loss_ft},
                {"loss_image", sl.loss_image},
                {"loss_text", sl.loss_text},
                {"tau", tau}};
      result.log_lines.push_back(line.dump());
      if (step == 1) result.first_loss_ft = sl.loss_ft;
      result.last_loss_ft = sl.loss_ft;
    }
  }

  result.live = std::move(pair);
  result.shadow = std::move(shadow);
  result.steps = step;
  return result;
}

std::string run_training(const ExperimentConfig& cfg) {
  const Workbench wb = load_workbench(cfg);
  TrainResult tr = train_on(wb, cfg, cfg.train_kinds);

  const fs::path out(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) raise(Errc::io_error, "cannot create " + out.string());

  const fs::path ckpt = out / "checkpoint";
  save_checkpoint(ckpt, tr.live, tr.shadow, tr.steps);

  std::string log;
  for (const auto& line : tr.log_lines) log += line + "\n";
  write_text_file(out / "train_log.jsonl", log);
  save_config(cfg, out / "config.json");

  json run{{"config", "config.json"},
           {"corpus_hash", hash_hex(wb.corpus_json)},
           {"git_describe", BAGCLIP_GIT_DESCRIBE},
           {"seed", cfg.seed},
           {"steps", tr.steps},
           {"version", BAGCLIP_VERSION}};
  if (tr.steps > 0) {
    run["first_loss_ft"] = tr.first_loss_ft;
    run["last_loss_ft"] = tr.last_loss_ft;
  }
  if (cfg.strategy == Strategy::visibility) {
    run["visibility_excluded_texts"] = tr.visibility.excluded_texts;
    run["visibility_fallback_images"] = tr.visibility.fallback_images;
  }
  write_text_file(out / "run.json", run.dump(2) + "\n");
  return ckpt.string();
}

EvalReport run_eval(const ExperimentConfig& cfg,
                    const std::string& checkpoint_dir) {
  const Workbench wb = load_workbench(cfg);
  if (wb.ds.split.test.empty()) {
    raise(Errc::empty_test_corpus, "no held-out classes to evaluate");
  }

  const Checkpoint ck = load_checkpoint(checkpoint_dir);
  check_checkpoint_dims(ck, wb);
  const EncoderPair ft = checkpoint_pair(ck, cfg.eval_use_ema);
  const EncoderPair init =
      make_toy_pair(cfg.embed_dim, wb.attr_dim, cfg.seed,
                    cfg.hyper.temperature_init);

  const auto& test_classes = wb.ds.split.test;
  const TestTexts tmpl =
      template_test_texts(wb.ds.corpus, test_classes, wb.text_features);
  const TestTexts corpus_texts = build_test_texts(
      wb.ds.corpus, test_classes, cfg.test_kinds, wb.text_features);

  EvalReport report;
  report.rows.push_back(eval_row("CLIP", init, wb, tmpl, cfg, nullptr));
  report.rows.push_back(
      eval_row("CLIP+A", init, wb, corpus_texts, cfg, nullptr));
  report.rows.push_back(eval_row("CLIP^FT", ft, wb, tmpl, cfg, nullptr));
  report.rows.push_back(eval_row("CLIP^FT+A", ft, wb, corpus_texts, cfg,
                                 &report.predictions));
  report.accuracy = report.rows.back().accuracy;
  report.per_class = report.rows.back().per_class;

  for (const auto& kinds : cfg.ablation_kinds) {
    TrainResult tr = train_on(wb, cfg, kinds);
    const EncoderPair pair = cfg.eval_use_ema
                                 ? as_pair(tr.shadow, tr.live.log_tau)
                                 : tr.live;
    const TestTexts texts =
        build_test_texts(wb.ds.corpus, test_classes, kinds, wb.text_features);
    report.ablation.push_back(
        eval_row("CLIP^FT+A[" + kinds_to_csv(kinds) + "]", pair, wb, texts,
                 cfg, nullptr));
  }
  return report;
}

std::optional<std::vector<std::pair<std::string, double>>>
reference_full_scale(const std::string& dataset) {
  static const std::map<std::string, std::array<double, 4>> kReference = {
      {"cub", {50.54, 50.71, 50.81, 53.34}},
      {"stanfordcars", {69.72, 69.47, 69.61, 71.63}},
      {"fgvcaircraft", {29.27, 30.35, 31.10, 36.41}},
      {"flowers102", {71.78, 75.37, 73.68, 77.05}},
      {"food101", {88.32, 90.08, 88.32, 93.71}},
  };
  const auto it = kReference.find(normalize_dataset_name(dataset));
  if (it == kReference.end()) return std::nullopt;
  static const char* kRows[] = {"CLIP", "CLIP+A", "CLIP^FT", "CLIP^FT+A"};
  std::vector<std::pair<std::string, double>> out;
  for (int i = 0; i < 4; ++i) out.emplace_back(kRows[i], it->second[i]);
  return out;
}

NewtReport run_newt(const fs::path& tasks_csv, const fs::path& items_json,
                    const fs::path& checkpoint_dir, bool use_ema) {
  auto tasks = newt_tasks_from_csv(read_text_file(tasks_csv));
  newt_items_from_json(read_text_file(items_json), &tasks);

  const Checkpoint ck = load_checkpoint(checkpoint_dir);
  const EncoderPair pair = checkpoint_pair(ck, use_ema);
  const int attr_dim = pair.text_enc.input_dim();
  const TextFeaturizer text_features = [attr_dim](const std::string& text) {
    return parse_attr_text(text, attr_dim);
  };
  const ImageFeaturizer image_features =
      make_file_image_featurizer(tasks_csv.parent_path(), attr_dim);

  NewtReport report;
  report.per_task_ap.resize(tasks.size());
  parallel_over(static_cast<int>(tasks.size()), [&](int i) {
    report.per_task_ap[i] = {
        tasks[i].task_id,
        binary_task_ap(pair, tasks[i], image_features, text_features)};
  });
  double sum = 0.0;
  for (const auto& [task, ap] : report.per_task_ap) sum += ap;
  if (!report.per_task_ap.empty()) {
    report.mean_ap = sum / static_cast<double>(report.per_task_ap.size());
  }
  return report;
}

std::vector<RankingReport> run_rankings(const ExperimentConfig& cfg,
                                        const std::string& checkpoint_dir,
                                        int texts_per_class, int top_n,
                                        int bottom_n) {
  const Workbench wb = load_workbench(cfg);
  const Checkpoint ck = load_checkpoint(checkpoint_dir);
  check_checkpoint_dims(ck, wb);
  const EncoderPair pair = checkpoint_pair(ck, cfg.eval_use_ema);

  std::vector<RankingReport> reports;
  for (const auto& cls : wb.ds.split.test) {
    const auto texts = wb.ds.corpus.texts_of(cls, cfg.test_kinds);
    const auto it = wb.ds.images.find(cls);
    if (it == wb.ds.images.end()) continue;
    const int n_texts =
        std::min<int>(texts_per_class, static_cast<int>(texts.size()));
    for (int t = 0; t < n_texts; ++t) {
      reports.push_back(similarity_ranking_report(pair, it->second, texts[t],
                                                  top_n, bottom_n,
                                                  wb.image_features,
                                                  wb.text_features));
    }
  }
  return reports;
}

}  // namespace bagclip
