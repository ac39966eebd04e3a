#pragma once

#include <stdexcept>
#include <string>

namespace bagclip {

enum class Errc {
  invalid_argument,
  missing_field,
  no_taxonomy_fields,
  provider_error,
  format_error,
  cache_conflict,
  unknown_class,
  too_few_classes,
  empty_corpus_for_class,
  missing_visibility,
  dimension_mismatch,
  shape_mismatch,
  non_finite_similarity,
  degenerate_labels,
  empty_test_corpus,
  missing_checkpoint,
  config_error,
  numerical_divergence,
  io_error,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace bagclip
