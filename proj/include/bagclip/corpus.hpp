#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bagclip/error.hpp"

namespace bagclip {

struct ClassSpec {
  std::string class_name;
  std::string domain_word;     // "bird", "organism", ...
  std::string organism_type;   // optional; "plant" etc. (iNat-style queries)
  std::string scientific_name; // required when organism_type is set
  std::string family;
  std::string order;
  int class_id = 0;
};

enum class TextKind { visual, habitat, taxonomy };
enum class TextSource { gpt4, gpt3, llama, human, template_text };

const char* to_string(TextKind k);
const char* to_string(TextSource s);
TextKind text_kind_from_string(const std::string& s);
TextSource text_source_from_string(const std::string& s);

struct DescriptionRecord {
  std::string text;
  TextKind kind = TextKind::visual;
  TextSource source = TextSource::template_text;
  std::string raw_line;

  bool operator==(const DescriptionRecord&) const = default;
};

struct TextCorpus {
  std::string dataset;
  std::string domain_word;
  std::map<std::string, std::vector<DescriptionRecord>> entries;

  bool operator==(const TextCorpus&) const = default;

  // Texts of one class filtered by kind; empty kind set = all kinds.
  std::vector<std::string> texts_of(const std::string& class_name,
                                    const std::set<TextKind>& kinds = {}) const;
  std::size_t text_count() const;
};

void validate_spec(const ClassSpec& spec);

// "a Common Tern" or "a Bay Laurel, a type of plant with scientific name
// Laurus nobilis" when organism_type is present.
std::string class_mention(const ClassSpec& spec);

// The word standing for the organism in generated texts: organism_type when
// present, otherwise domain_word.
std::string subject_word(const ClassSpec& spec);

std::string build_visual_prompt(const ClassSpec& spec);
std::string build_habitat_prompt(const ClassSpec& spec);
std::vector<DescriptionRecord> build_taxonomy_texts(const ClassSpec& spec);

// Splits a raw LLM response into description records. If any line carries a
// list marker ("- ", "* ", bullet, "1." / "1)"), only marked lines are kept
// (prose preambles and closers are dropped); otherwise every non-empty line
// counts. Visual lines are rewritten onto the "a photo of a [class] [domain]"
// stem; habitat/taxonomy lines are kept as stripped. Idempotent.
std::vector<DescriptionRecord> normalize_response(const std::string& response,
                                                  const ClassSpec& spec,
                                                  TextKind kind,
                                                  TextSource source);

// Vetting sheet for human fact-checking: header "class,text,correct", one
// row per text, correctness column left blank.
std::string export_vetting_sheet(const TextCorpus& corpus,
                                 const std::vector<std::string>& classes);

std::string corpus_to_json(const TextCorpus& corpus);
TextCorpus corpus_from_json(const std::string& text);
void save_corpus(const TextCorpus& corpus, const std::filesystem::path& path);
TextCorpus load_corpus(const std::filesystem::path& path);

std::vector<ClassSpec> class_specs_from_json(const std::string& text);
std::vector<ClassSpec> load_class_specs(const std::filesystem::path& path);

std::set<TextKind> parse_kinds(const std::string& csv_list);

}  // namespace bagclip
