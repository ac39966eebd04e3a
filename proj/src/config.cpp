#include "bagclip/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace bagclip {

using json = nlohmann::json;

const char* to_string(SplitMode m) {
  switch (m) {
    case SplitMode::halves: return "halves";
    case SplitMode::explicit_file: return "explicit";
    case SplitMode::overlap_removed: return "overlap-removed";
  }
  return "halves";
}

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::plain: return "plain";
    case Strategy::visibility: return "visibility";
    case Strategy::threshold: return "threshold";
    case Strategy::maxpool: return "maxpool";
    case Strategy::fixmatch: return "fixmatch";
    case Strategy::kd: return "kd";
  }
  return "plain";
}

SplitMode split_mode_from_string(const std::string& s) {
  if (s == "halves") return SplitMode::halves;
  if (s == "explicit") return SplitMode::explicit_file;
  if (s == "overlap-removed") return SplitMode::overlap_removed;
  raise(Errc::config_error, "unknown split mode '" + s +
                                "' (expected halves, explicit, or "
                                "overlap-removed)");
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "plain") return Strategy::plain;
  if (s == "visibility") return Strategy::visibility;
  if (s == "threshold") return Strategy::threshold;
  if (s == "maxpool") return Strategy::maxpool;
  if (s == "fixmatch") return Strategy::fixmatch;
  if (s == "kd") return Strategy::kd;
  raise(Errc::config_error, "unknown strategy '" + s + "'");
}

std::string kinds_to_csv(const std::set<TextKind>& kinds) {
  std::string out;
  for (TextKind k : kinds) {
    if (!out.empty()) out += ",";
    out += to_string(k);
  }
  return out;
}

std::string normalize_dataset_name(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

namespace {

struct HyperRow {
  const char* key;
  double lr_proj, lr_main, wd_proj, wd_main, temp_init;
  int epochs = 15;
};

// Appendix table; temperature lr 1e-2, wd 1e-6, momentum 0.98 and batch 1024
// are shared by every row.
constexpr HyperRow kHyperRows[] = {
    {"cub", 6e-7, 1e-7, 1e-1, 1e-1, 1.3},
    {"fgvcaircraft", 4e-7, 1e-7, 1e-6, 1e-6, 1.8},
    {"stanfordcars", 3e-7, 1e-7, 1e-2, 1e-2, 1.6},
    {"flowers102", 7e-7, 1e-7, 1e-2, 1e-3, 2.0},
    {"nabirds", 8e-7, 1e-7, 1e-6, 1e-6, 1.0},
    {"inaturalist", 1e-7, 5e-8, 1e-3, 1e-3, 1.0, 5},
    {"inat", 1e-7, 5e-8, 1e-3, 1e-3, 1.0, 5},
    {"eurosat", 2e-6, 5e-7, 1e-6, 1e-6, 1.8},
    {"food101", 1e-7, 5e-8, 1e-6, 1e-6, 2.0},
    {"imagenet", 2e-6, 5e-7, 1e-6, 1e-6, 1.8},
    {"caltech101", 1e-7, 5e-8, 1e-3, 1e-3, 2.0},
    {"dtd", 5e-7, 2e-7, 1e-6, 1e-6, 2.0},
    {"oxfordpets", 8e-7, 2e-7, 1e-4, 1e-4, 2.0},
    {"sun397", 1e-6, 5e-7, 1e-6, 1e-6, 2.0},
    {"ucf101", 8e-7, 2e-7, 1e-6, 1e-6, 2.0},
};

HyperConfig from_row(const HyperRow& row) {
  HyperConfig h;
  h.lr_proj = row.lr_proj;
  h.lr_main = row.lr_main;
  h.wd_proj = row.wd_proj;
  h.wd_main = row.wd_main;
  h.temperature_init = row.temp_init;
  h.temperature_lr = 1e-2;
  h.temperature_wd = 1e-6;
  h.momentum = 0.98;
  h.epochs = row.epochs;
  h.batch_size = 1024;
  return h;
}

HyperConfig synthetic_row() {
  HyperConfig h;  // toy-scale struct defaults
  return h;
}

std::set<TextKind> kinds_from_value(const json& v, const char* key) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    return s.empty() ? std::set<TextKind>{} : parse_kinds(s);
  }
  if (v.is_array()) {
    std::set<TextKind> out;
    for (const auto& item : v) {
      if (!item.is_string())
        raise(Errc::config_error, std::string(key) + " entries must be strings");
      out.insert(text_kind_from_string(item.get<std::string>()));
    }
    return out;
  }
  raise(Errc::config_error,
        std::string(key) + " must be a comma list or array of kinds");
}

double number_of(const json& v, const char* key) {
  if (!v.is_number())
    raise(Errc::config_error, std::string(key) + " must be a number");
  return v.get<double>();
}

int int_of(const json& v, const char* key) {
  if (!v.is_number_integer())
    raise(Errc::config_error, std::string(key) + " must be an integer");
  return v.get<int>();
}

std::string string_of(const json& v, const char* key) {
  if (!v.is_string())
    raise(Errc::config_error, std::string(key) + " must be a string");
  return v.get<std::string>();
}

std::uint64_t u64_of(const json& v, const char* key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0)
    return static_cast<std::uint64_t>(v.get<long long>());
  raise(Errc::config_error,
        std::string(key) + " must be a non-negative integer");
}

}  // namespace

HyperConfig hyper_defaults(const std::string& dataset,
                           std::vector<std::string>* warnings) {
  const std::string key = normalize_dataset_name(dataset);
  if (key == "synthetic") return synthetic_row();
  for (const auto& row : kHyperRows) {
    if (key == row.key) return from_row(row);
  }
  if (warnings) {
    warnings->push_back("unknown dataset '" + dataset +
                        "'; using the CUB hyperparameter row");
  }
  return from_row(kHyperRows[0]);
}

ExperimentConfig parse_config(const std::string& text,
                              std::vector<std::string>* warnings) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    raise(Errc::config_error, "config must be a JSON object");

  ExperimentConfig cfg;
  if (j.contains("dataset")) cfg.dataset = string_of(j["dataset"], "dataset");
  cfg.hyper = hyper_defaults(cfg.dataset, warnings);

  for (const auto& [key, value] : j.items()) {
    if (key == "dataset") {
    } else if (key == "manifest") {
      cfg.manifest = string_of(value, "manifest");
    } else if (key == "corpus") {
      cfg.corpus = string_of(value, "corpus");
    } else if (key == "split") {
      cfg.split = split_mode_from_string(string_of(value, "split"));
    } else if (key == "split_file") {
      cfg.split_file = string_of(value, "split_file");
    } else if (key == "train_kinds") {
      cfg.train_kinds = kinds_from_value(value, "train_kinds");
    } else if (key == "test_kinds") {
      cfg.test_kinds = kinds_from_value(value, "test_kinds");
    } else if (key == "ablation_kinds") {
      if (!value.is_array())
        raise(Errc::config_error, "ablation_kinds must be an array");
      cfg.ablation_kinds.clear();
      for (const auto& item : value)
        cfg.ablation_kinds.push_back(kinds_from_value(item, "ablation_kinds"));
    } else if (key == "strategy") {
      cfg.strategy = strategy_from_string(string_of(value, "strategy"));
    } else if (key == "lexicon") {
      cfg.lexicon = string_of(value, "lexicon");
    } else if (key == "baseline") {
      const auto s = string_of(value, "baseline");
      if (s == "clip") cfg.baseline = BaselineMode::clip;
      else if (s == "clip_a") cfg.baseline = BaselineMode::clip_a;
      else raise(Errc::config_error, "baseline must be clip or clip_a");
    } else if (key == "seed") {
      cfg.seed = u64_of(value, "seed");
    } else if (key == "out_dir") {
      cfg.out_dir = string_of(value, "out_dir");
    } else if (key == "embed_dim") {
      cfg.embed_dim = int_of(value, "embed_dim");
    } else if (key == "attr_dim") {
      cfg.attr_dim = int_of(value, "attr_dim");
    } else if (key == "eval_weights") {
      const auto s = string_of(value, "eval_weights");
      if (s == "ema") cfg.eval_use_ema = true;
      else if (s == "live") cfg.eval_use_ema = false;
      else raise(Errc::config_error, "eval_weights must be ema or live");
    } else if (key == "eval_aggregation") {
      const auto s = string_of(value, "eval_aggregation");
      if (s == "arithmetic") cfg.eval_aggregation = Aggregation::arithmetic_mean;
      else if (s == "geometric") cfg.eval_aggregation = Aggregation::geometric_mean;
      else raise(Errc::config_error,
                 "eval_aggregation must be arithmetic or geometric");
    } else if (key == "eval_temperature") {
      cfg.eval_temperature = number_of(value, "eval_temperature");
    } else if (key == "threshold_p_min") {
      cfg.threshold_p_min = number_of(value, "threshold_p_min");
    } else if (key == "fixmatch_sigma") {
      cfg.fixmatch_sigma = number_of(value, "fixmatch_sigma");
    } else if (key == "world_preset") {
      cfg.world_preset = string_of(value, "world_preset");
    } else if (key == "world_seed") {
      cfg.world_seed = u64_of(value, "world_seed");
    } else if (key == "lr_proj") {
      cfg.hyper.lr_proj = number_of(value, "lr_proj");
    } else if (key == "lr_main") {
      cfg.hyper.lr_main = number_of(value, "lr_main");
    } else if (key == "wd_proj") {
      cfg.hyper.wd_proj = number_of(value, "wd_proj");
    } else if (key == "wd_main") {
      cfg.hyper.wd_main = number_of(value, "wd_main");
    } else if (key == "temp_init") {
      cfg.hyper.temperature_init = number_of(value, "temp_init");
    } else if (key == "temp_lr") {
      cfg.hyper.temperature_lr = number_of(value, "temp_lr");
    } else if (key == "temp_wd") {
      cfg.hyper.temperature_wd = number_of(value, "temp_wd");
    } else if (key == "momentum") {
      cfg.hyper.momentum = number_of(value, "momentum");
    } else if (key == "epochs") {
      cfg.hyper.epochs = int_of(value, "epochs");
    } else if (key == "batch") {
      cfg.hyper.batch_size = int_of(value, "batch");
    } else {
      raise(Errc::config_error, "unknown config key '" + key + "'");
    }
  }

  validate_config(cfg);
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = cfg.dataset;
  j["manifest"] = cfg.manifest;
  j["corpus"] = cfg.corpus;
  j["split"] = to_string(cfg.split);
  j["split_file"] = cfg.split_file;
  j["train_kinds"] = kinds_to_csv(cfg.train_kinds);
  j["test_kinds"] = kinds_to_csv(cfg.test_kinds);
  j["ablation_kinds"] = json::array();
  for (const auto& kinds : cfg.ablation_kinds)
    j["ablation_kinds"].push_back(kinds_to_csv(kinds));
  j["strategy"] = to_string(cfg.strategy);
  j["lexicon"] = cfg.lexicon;
  j["baseline"] = cfg.baseline == BaselineMode::clip ? "clip" : "clip_a";
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["embed_dim"] = cfg.embed_dim;
  j["attr_dim"] = cfg.attr_dim;
  j["eval_weights"] = cfg.eval_use_ema ? "ema" : "live";
  j["eval_aggregation"] =
      cfg.eval_aggregation == Aggregation::arithmetic_mean ? "arithmetic"
                                                           : "geometric";
  j["eval_temperature"] = cfg.eval_temperature;
  j["threshold_p_min"] = cfg.threshold_p_min;
  j["fixmatch_sigma"] = cfg.fixmatch_sigma;
  j["world_preset"] = cfg.world_preset;
  j["world_seed"] = cfg.world_seed;
  j["lr_proj"] = cfg.hyper.lr_proj;
  j["lr_main"] = cfg.hyper.lr_main;
  j["wd_proj"] = cfg.hyper.wd_proj;
  j["wd_main"] = cfg.hyper.wd_main;
  j["temp_init"] = cfg.hyper.temperature_init;
  j["temp_lr"] = cfg.hyper.temperature_lr;
  j["temp_wd"] = cfg.hyper.temperature_wd;
  j["momentum"] = cfg.hyper.momentum;
  j["epochs"] = cfg.hyper.epochs;
  j["batch"] = cfg.hyper.batch_size;
  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) raise(Errc::io_error, "cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), warnings);
}

void save_config(const ExperimentConfig& cfg,
                 const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::io_error, "cannot write config " + path.string());
  out << config_to_json(cfg);
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.dataset.empty()) raise(Errc::config_error, "dataset must be named");
  if (cfg.embed_dim <= 0)
    raise(Errc::config_error, "embed_dim must be positive");
  if (cfg.attr_dim < 0)
    raise(Errc::config_error, "attr_dim must be non-negative");
  if (cfg.split != SplitMode::halves && cfg.split_file.empty())
    raise(Errc::config_error,
          std::string(to_string(cfg.split)) + " split needs split_file");
  if (!cfg.manifest.empty() && cfg.corpus.empty())
    raise(Errc::config_error, "a file-backed dataset needs a corpus path");
  if (cfg.eval_temperature < 0.0)
    raise(Errc::config_error, "eval_temperature must be >= 0");
  if (cfg.threshold_p_min < 0.0 || cfg.threshold_p_min > 1.0)
    raise(Errc::config_error, "threshold_p_min must be in [0, 1]");
  if (cfg.fixmatch_sigma < 0.0)
    raise(Errc::config_error, "fixmatch_sigma must be >= 0");
  try {
    validate_hyper(cfg.hyper);
  } catch (const Error& e) {
    raise(Errc::config_error, e.what());
  }
}

}  // namespace bagclip
