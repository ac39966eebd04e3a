/* C API for the bagclip shared library. All functions return a
 * bagclip_status; on failure bagclip_last_error() holds a message for the
 * calling thread. Strings returned through char** are heap-allocated and
 * must be released with bagclip_string_free. */
#ifndef BAGCLIP_H
#define BAGCLIP_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bagclip_status {
  BAGCLIP_OK = 0,
  BAGCLIP_E_INVALID_ARGUMENT = 1,
  BAGCLIP_E_MISSING_FIELD = 2,
  BAGCLIP_E_NO_TAXONOMY_FIELDS = 3,
  BAGCLIP_E_PROVIDER = 4,
  BAGCLIP_E_FORMAT = 5,
  BAGCLIP_E_CACHE_CONFLICT = 6,
  BAGCLIP_E_UNKNOWN_CLASS = 7,
  BAGCLIP_E_TOO_FEW_CLASSES = 8,
  BAGCLIP_E_EMPTY_CORPUS_FOR_CLASS = 9,
  BAGCLIP_E_MISSING_VISIBILITY = 10,
  BAGCLIP_E_DIMENSION_MISMATCH = 11,
  BAGCLIP_E_SHAPE_MISMATCH = 12,
  BAGCLIP_E_NON_FINITE_SIMILARITY = 13,
  BAGCLIP_E_DEGENERATE_LABELS = 14,
  BAGCLIP_E_EMPTY_TEST_CORPUS = 15,
  BAGCLIP_E_MISSING_CHECKPOINT = 16,
  BAGCLIP_E_CONFIG = 17,
  BAGCLIP_E_NUMERICAL_DIVERGENCE = 18,
  BAGCLIP_E_IO = 19,
  BAGCLIP_E_INTERNAL = 100
} bagclip_status;

/* Library version string ("0.1.0"). Never freed. */
const char* bagclip_version(void);

/* Message of the last failure on this thread; empty string if none. */
const char* bagclip_last_error(void);

void bagclip_string_free(char* s);

/* ---- corpus handles ---------------------------------------------------- */

typedef struct bagclip_corpus bagclip_corpus;

bagclip_status bagclip_corpus_parse(const char* json_text,
                                    bagclip_corpus** out);
bagclip_status bagclip_corpus_load(const char* path, bagclip_corpus** out);
void bagclip_corpus_release(bagclip_corpus* corpus);

bagclip_status bagclip_corpus_to_json(const bagclip_corpus* corpus,
                                      char** json_out);
bagclip_status bagclip_corpus_class_count(const bagclip_corpus* corpus,
                                          size_t* count_out);
bagclip_status bagclip_corpus_text_count(const bagclip_corpus* corpus,
                                         size_t* count_out);

/* JSON array of the class's texts; kinds_csv like "visual,habitat", empty
 * or NULL for all kinds. */
bagclip_status bagclip_corpus_texts_of(const bagclip_corpus* corpus,
                                       const char* class_name,
                                       const char* kinds_csv, char** json_out);

/* "class,text,correct" sheet for the named classes (CSV list). */
bagclip_status bagclip_corpus_vet_sheet(const bagclip_corpus* corpus,
                                        const char* classes_csv,
                                        char** csv_out);

/* ---- corpus generation -------------------------------------------------- */

/* specs_json: JSON array of class specs (class_name, domain_word, optional
 * organism_type/scientific_name/family/order, class_id). provider_id:
 * "stub" or "openai". model NULL for the default. Honors BAGCLIP_CACHE.
 * corpus_json_out receives the canonical corpus file content;
 * warnings_json_out (optional) a JSON array of warnings. */
bagclip_status bagclip_generate_corpus(const char* specs_json,
                                       const char* dataset,
                                       const char* kinds_csv,
                                       const char* provider_id,
                                       const char* model, int jobs,
                                       char** corpus_json_out,
                                       char** warnings_json_out);

/* ---- experiments -------------------------------------------------------- */

/* Parses a config, applies per-dataset defaults, returns the canonical
 * serialized form. warnings_json_out as above. */
bagclip_status bagclip_config_normalize(const char* config_json,
                                        char** normalized_json_out,
                                        char** warnings_json_out);

/* Trains per config, persists checkpoint/log/metadata under out_dir;
 * checkpoint_dir_out receives the checkpoint directory path. */
bagclip_status bagclip_run_training(const char* config_json,
                                    char** checkpoint_dir_out);

/* Baseline comparison plus configured ablations; report_json_out receives
 * the results JSON (accuracy, per_class, rows, reference context). */
bagclip_status bagclip_run_eval(const char* config_json,
                                const char* checkpoint_dir,
                                char** report_json_out);

/* Writes a synthetic world ("default" or "tiny" preset) under out_dir;
 * seed 0 keeps the preset's seed. */
bagclip_status bagclip_write_world(const char* preset, uint64_t seed,
                                   const char* out_dir);

/* Binary-task MAP of a checkpoint. Image feature paths in the items file
 * resolve relative to the tasks CSV. results_csv_out receives the
 * "task,ap" table, mean_ap_out (optional) the mean. */
bagclip_status bagclip_run_newt(const char* tasks_csv_path,
                                const char* items_json_path,
                                const char* checkpoint_dir, int use_ema,
                                char** results_csv_out, double* mean_ap_out);

/* Similarity-ranking report (JSON lines) for held-out classes. */
bagclip_status bagclip_run_rankings(const char* config_json,
                                    const char* checkpoint_dir,
                                    int texts_per_class, int top_n,
                                    int bottom_n, char** jsonl_out);

#ifdef __cplusplus
}
#endif

#endif /* BAGCLIP_H */
