#include "bagclip/error.hpp"

namespace bagclip {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::missing_field: return "MissingField";
    case Errc::no_taxonomy_fields: return "NoTaxonomyFields";
    case Errc::provider_error: return "ProviderError";
    case Errc::format_error: return "FormatError";
    case Errc::cache_conflict: return "CacheConflict";
    case Errc::unknown_class: return "UnknownClass";
    case Errc::too_few_classes: return "TooFewClasses";
    case Errc::empty_corpus_for_class: return "EmptyCorpusForClass";
    case Errc::missing_visibility: return "MissingVisibility";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::non_finite_similarity: return "NonFiniteSimilarity";
    case Errc::degenerate_labels: return "DegenerateLabels";
    case Errc::empty_test_corpus: return "EmptyTestCorpus";
    case Errc::missing_checkpoint: return "MissingCheckpoint";
    case Errc::config_error: return "ConfigError";
    case Errc::numerical_divergence: return "NumericalDivergence";
    case Errc::io_error: return "IoError";
  }
  return "UnknownError";
}

}  // namespace bagclip
