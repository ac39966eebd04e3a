#include "bagclip.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "json.hpp"

#include "bagclip/config.hpp"
#include "bagclip/corpus.hpp"
#include "bagclip/llm.hpp"
#include "bagclip/runner.hpp"
#include "bagclip/synth.hpp"
#include "bagclip/version.hpp"

namespace {

using bagclip::Errc;
using json = nlohmann::json;

thread_local std::string t_last_error;

bagclip_status status_of(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return BAGCLIP_E_INVALID_ARGUMENT;
    case Errc::missing_field: return BAGCLIP_E_MISSING_FIELD;
    case Errc::no_taxonomy_fields: return BAGCLIP_E_NO_TAXONOMY_FIELDS;
    case Errc::provider_error: return BAGCLIP_E_PROVIDER;
    case Errc::format_error: return BAGCLIP_E_FORMAT;
    case Errc::cache_conflict: return BAGCLIP_E_CACHE_CONFLICT;
    case Errc::unknown_class: return BAGCLIP_E_UNKNOWN_CLASS;
    case Errc::too_few_classes: return BAGCLIP_E_TOO_FEW_CLASSES;
    case Errc::empty_corpus_for_class: return BAGCLIP_E_EMPTY_CORPUS_FOR_CLASS;
    case Errc::missing_visibility: return BAGCLIP_E_MISSING_VISIBILITY;
    case Errc::dimension_mismatch: return BAGCLIP_E_DIMENSION_MISMATCH;
    case Errc::shape_mismatch: return BAGCLIP_E_SHAPE_MISMATCH;
    case Errc::non_finite_similarity: return BAGCLIP_E_NON_FINITE_SIMILARITY;
    case Errc::degenerate_labels: return BAGCLIP_E_DEGENERATE_LABELS;
    case Errc::empty_test_corpus: return BAGCLIP_E_EMPTY_TEST_CORPUS;
    case Errc::missing_checkpoint: return BAGCLIP_E_MISSING_CHECKPOINT;
    case Errc::config_error: return BAGCLIP_E_CONFIG;
    case Errc::numerical_divergence: return BAGCLIP_E_NUMERICAL_DIVERGENCE;
    case Errc::io_error: return BAGCLIP_E_IO;
  }
  return BAGCLIP_E_INTERNAL;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

bagclip_status fail(bagclip_status code, const std::string& message) {
  t_last_error = message;
  return code;
}

// Runs fn, translating exceptions into status codes.
template <typename Fn>
bagclip_status guarded(Fn&& fn) {
  try {
    fn();
    t_last_error.clear();
    return BAGCLIP_OK;
  } catch (const bagclip::Error& e) {
    return fail(status_of(e.code()), e.what());
  } catch (const std::exception& e) {
    return fail(BAGCLIP_E_INTERNAL, e.what());
  } catch (...) {
    return fail(BAGCLIP_E_INTERNAL, "unknown error");
  }
}

bagclip_status require(const void* p, const char* name) {
  if (p) return BAGCLIP_OK;
  return fail(BAGCLIP_E_INVALID_ARGUMENT,
              std::string(name) + " must not be null");
}

std::string warnings_json(const std::vector<std::string>& warnings) {
  json arr = json::array();
  for (const auto& w : warnings) arr.push_back(w);
  return arr.dump();
}

}  // namespace

struct bagclip_corpus {
  bagclip::TextCorpus corpus;
};

extern "C" {

const char* bagclip_version(void) { return BAGCLIP_VERSION; }

const char* bagclip_last_error(void) { return t_last_error.c_str(); }

void bagclip_string_free(char* s) { std::free(s); }

bagclip_status bagclip_corpus_parse(const char* json_text,
                                    bagclip_corpus** out) {
  if (auto st = require(json_text, "json_text")) return st;
  if (auto st = require(out, "out")) return st;
  return guarded([&] {
    *out = new bagclip_corpus{bagclip::corpus_from_json(json_text)};
  });
}

bagclip_status bagclip_corpus_load(const char* path, bagclip_corpus** out) {
  if (auto st = require(path, "path")) return st;
  if (auto st = require(out, "out")) return st;
  return guarded([&] {
    *out = new bagclip_corpus{bagclip::load_corpus(path)};
  });
}

void bagclip_corpus_release(bagclip_corpus* corpus) { delete corpus; }

bagclip_status bagclip_corpus_to_json(const bagclip_corpus* corpus,
                                      char** json_out) {
  if (auto st = require(corpus, "corpus")) return st;
  if (auto st = require(json_out, "json_out")) return st;
  return guarded([&] {
    *json_out = dup_string(bagclip::corpus_to_json(corpus->corpus));
  });
}

bagclip_status bagclip_corpus_class_count(const bagclip_corpus* corpus,
                                          size_t* count_out) {
  if (auto st = require(corpus, "corpus")) return st;
  if (auto st = require(count_out, "count_out")) return st;
  *count_out = corpus->corpus.entries.size();
  t_last_error.clear();
  return BAGCLIP_OK;
}

bagclip_status bagclip_corpus_text_count(const bagclip_corpus* corpus,
                                         size_t* count_out) {
  if (auto st = require(corpus, "corpus")) return st;
  if (auto st = require(count_out, "count_out")) return st;
  *count_out = corpus->corpus.text_count();
  t_last_error.clear();
  return BAGCLIP_OK;
}

bagclip_status bagclip_corpus_texts_of(const bagclip_corpus* corpus,
                                       const char* class_name,
                                       const char* kinds_csv,
                                       char** json_out) {
  if (auto st = require(corpus, "corpus")) return st;
  if (auto st = require(class_name, "class_name")) return st;
  if (auto st = require(json_out, "json_out")) return st;
  return guarded([&] {
    std::set<bagclip::TextKind> kinds;
    if (kinds_csv && *kinds_csv) kinds = bagclip::parse_kinds(kinds_csv);
    json arr = json::array();
    for (const auto& t : corpus->corpus.texts_of(class_name, kinds)) {
      arr.push_back(t);
    }
    *json_out = dup_string(arr.dump());
  });
}

bagclip_status bagclip_corpus_vet_sheet(const bagclip_corpus* corpus,
                                        const char* classes_csv,
                                        char** csv_out) {
  if (auto st = require(corpus, "corpus")) return st;
  if (auto st = require(classes_csv, "classes_csv")) return st;
  if (auto st = require(csv_out, "csv_out")) return st;
  return guarded([&] {
    std::vector<std::string> classes;
    std::string current;
    for (const char* p = classes_csv;; ++p) {
      if (*p == ',' || *p == '\0') {
        if (!current.empty()) classes.push_back(current);
        current.clear();
        if (*p == '\0') break;
      } else {
        current += *p;
      }
    }
    *csv_out =
        dup_string(bagclip::export_vetting_sheet(corpus->corpus, classes));
  });
}

bagclip_status bagclip_generate_corpus(const char* specs_json,
                                       const char* dataset,
                                       const char* kinds_csv,
                                       const char* provider_id,
                                       const char* model, int jobs,
                                       char** corpus_json_out,
                                       char** warnings_json_out) {
  if (auto st = require(specs_json, "specs_json")) return st;
  if (auto st = require(dataset, "dataset")) return st;
  if (auto st = require(kinds_csv, "kinds_csv")) return st;
  if (auto st = require(provider_id, "provider_id")) return st;
  if (auto st = require(corpus_json_out, "corpus_json_out")) return st;
  return guarded([&] {
    auto specs = bagclip::class_specs_from_json(specs_json);
    auto kinds = bagclip::parse_kinds(kinds_csv);
    auto provider = bagclip::make_provider(provider_id);
    bagclip::LLMClientConfig cfg;
    if (model && *model) cfg.model = model;
    auto cache = std::make_shared<bagclip::ResponseCache>(
        bagclip::ResponseCache::root_from_env_or(".bagclip_cache"));
    bagclip::LLMClient client(provider, cfg, cache);
    auto result = bagclip::generate_corpus(specs, dataset, kinds, client,
                                           jobs > 0 ? jobs : 1);
    *corpus_json_out = dup_string(bagclip::corpus_to_json(result.corpus));
    if (warnings_json_out) {
      *warnings_json_out = dup_string(warnings_json(result.warnings));
    }
  });
}

bagclip_status bagclip_config_normalize(const char* config_json,
                                        char** normalized_json_out,
                                        char** warnings_json_out) {
  if (auto st = require(config_json, "config_json")) return st;
  if (auto st = require(normalized_json_out, "normalized_json_out")) return st;
  return guarded([&] {
    std::vector<std::string> warnings;
    auto cfg = bagclip::parse_config(config_json, &warnings);
    *normalized_json_out = dup_string(bagclip::config_to_json(cfg));
    if (warnings_json_out) {
      *warnings_json_out = dup_string(warnings_json(warnings));
    }
  });
}

bagclip_status bagclip_run_training(const char* config_json,
                                    char** checkpoint_dir_out) {
  if (auto st = require(config_json, "config_json")) return st;
  if (auto st = require(checkpoint_dir_out, "checkpoint_dir_out")) return st;
  return guarded([&] {
    auto cfg = bagclip::parse_config(config_json);
    *checkpoint_dir_out = dup_string(bagclip::run_training(cfg));
  });
}

bagclip_status bagclip_run_eval(const char* config_json,
                                const char* checkpoint_dir,
                                char** report_json_out) {
  if (auto st = require(config_json, "config_json")) return st;
  if (auto st = require(checkpoint_dir, "checkpoint_dir")) return st;
  if (auto st = require(report_json_out, "report_json_out")) return st;
  return guarded([&] {
    auto cfg = bagclip::parse_config(config_json);
    auto report = bagclip::run_eval(cfg, checkpoint_dir);
    json j = json::parse(bagclip::eval_report_to_json(report));
    if (auto ref = bagclip::reference_full_scale(cfg.dataset)) {
      json refs = json::object();
      for (const auto& [row, value] : *ref) refs[row] = value;
      j["reference_full_scale"] = std::move(refs);
    }
    *report_json_out = dup_string(j.dump(2) + "\n");
  });
}

bagclip_status bagclip_write_world(const char* preset, uint64_t seed,
                                   const char* out_dir) {
  if (auto st = require(preset, "preset")) return st;
  if (auto st = require(out_dir, "out_dir")) return st;
  return guarded([&] {
    auto cfg = bagclip::synth_preset(preset);
    if (seed != 0) cfg.seed = seed;
    auto world = bagclip::build_synthetic_world(cfg);
    bagclip::write_world(world, out_dir);
  });
}

bagclip_status bagclip_run_newt(const char* tasks_csv_path,
                                const char* items_json_path,
                                const char* checkpoint_dir, int use_ema,
                                char** results_csv_out, double* mean_ap_out) {
  if (auto st = require(tasks_csv_path, "tasks_csv_path")) return st;
  if (auto st = require(items_json_path, "items_json_path")) return st;
  if (auto st = require(checkpoint_dir, "checkpoint_dir")) return st;
  if (auto st = require(results_csv_out, "results_csv_out")) return st;
  return guarded([&] {
    auto report = bagclip::run_newt(tasks_csv_path, items_json_path,
                                    checkpoint_dir, use_ema != 0);
    *results_csv_out = dup_string(bagclip::newt_results_to_csv(report.per_task_ap));
    if (mean_ap_out) *mean_ap_out = report.mean_ap;
  });
}

bagclip_status bagclip_run_rankings(const char* config_json,
                                    const char* checkpoint_dir,
                                    int texts_per_class, int top_n,
                                    int bottom_n, char** jsonl_out) {
  if (auto st = require(config_json, "config_json")) return st;
  if (auto st = require(checkpoint_dir, "checkpoint_dir")) return st;
  if (auto st = require(jsonl_out, "jsonl_out")) return st;
  return guarded([&] {
    auto cfg = bagclip::parse_config(config_json);
    auto reports = bagclip::run_rankings(cfg, checkpoint_dir, texts_per_class,
                                         top_n, bottom_n);
    *jsonl_out = dup_string(bagclip::ranking_reports_to_jsonl(reports));
  });
}

}  // extern "C"
