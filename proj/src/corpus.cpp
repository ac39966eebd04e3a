#include "bagclip/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "bagclip/csv.hpp"
#include "json.hpp"

namespace bagclip {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool starts_with_icase(const std::string& text, const std::string& prefix) {
  if (text.size() < prefix.size()) return false;
  return lower(text.substr(0, prefix.size())) == lower(prefix);
}

std::string plural(const std::string& word) { return word + "s"; }

// Strips one leading list marker: "-", "*", en dash, bullet, or "12." /
// "12)" numbering, each followed by whitespace. Returns true if a marker
// was found; *content receives the line after the marker.
bool strip_marker(const std::string& line, std::string* content) {
  const std::string t = trim(line);
  auto after = [&](std::size_t pos) {
    if (pos >= t.size() || (t[pos] != ' ' && t[pos] != '\t')) return false;
    *content = trim(t.substr(pos));
    return true;
  };
  if (!t.empty() && (t[0] == '-' || t[0] == '*')) return after(1);
  // UTF-8 bullet (U+2022) and en dash (U+2013)
  if (t.size() >= 3 && (t.compare(0, 3, "\xE2\x80\xA2") == 0 ||
                        t.compare(0, 3, "\xE2\x80\x93") == 0)) {
    return after(3);
  }
  std::size_t i = 0;
  while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
  if (i > 0 && i < t.size() && (t[i] == '.' || t[i] == ')')) return after(i + 1);
  return false;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Rewrites a visual line onto the schema stem. Lines already carrying the
// "a photo of" stem pass through, which makes the rewrite idempotent.
std::string assemble_visual(const std::string& line, const ClassSpec& spec) {
  if (starts_with_icase(line, "a photo of")) return line;
  const std::string stem =
      "a photo of a " + spec.class_name + " " + spec.domain_word;
  const std::string subject = subject_word(spec);
  // Peel an optional article, then match the subject word(s).
  std::size_t pos = 0;
  for (const char* article : {"a ", "an ", "the "}) {
    if (starts_with_icase(line, article)) {
      pos = std::string(article).size();
      break;
    }
  }
  if (line.size() > pos + subject.size() &&
      lower(line.substr(pos, subject.size())) == lower(subject)) {
    std::size_t end = pos + subject.size();
    char next = line[end];
    if (!std::isalnum(static_cast<unsigned char>(next))) {
      return stem + line.substr(end);
    }
  }
  // The line ignored the requested stem entirely; keep its content after a
  // comma so the schema prefix still holds.
  std::string rest = line;
  rest[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(rest[0])));
  return stem + ", " + rest;
}

}  // namespace

const char* to_string(TextKind k) {
  switch (k) {
    case TextKind::visual: return "visual";
    case TextKind::habitat: return "habitat";
    case TextKind::taxonomy: return "taxonomy";
  }
  return "visual";
}

const char* to_string(TextSource s) {
  switch (s) {
    case TextSource::gpt4: return "gpt4";
    case TextSource::gpt3: return "gpt3";
    case TextSource::llama: return "llama";
    case TextSource::human: return "human";
    case TextSource::template_text: return "template";
  }
  return "template";
}

TextKind text_kind_from_string(const std::string& s) {
  if (s == "visual") return TextKind::visual;
  if (s == "habitat") return TextKind::habitat;
  if (s == "taxonomy") return TextKind::taxonomy;
  raise(Errc::format_error, "unknown text kind '" + s + "'");
}

TextSource text_source_from_string(const std::string& s) {
  if (s == "gpt4") return TextSource::gpt4;
  if (s == "gpt3") return TextSource::gpt3;
  if (s == "llama") return TextSource::llama;
  if (s == "human") return TextSource::human;
  if (s == "template") return TextSource::template_text;
  raise(Errc::format_error, "unknown text source '" + s + "'");
}

std::vector<std::string> TextCorpus::texts_of(
    const std::string& class_name, const std::set<TextKind>& kinds) const {
  auto it = entries.find(class_name);
  if (it == entries.end()) {
    raise(Errc::unknown_class, "class '" + class_name + "' not in corpus");
  }
  std::vector<std::string> out;
  for (const auto& rec : it->second) {
    if (kinds.empty() || kinds.count(rec.kind)) out.push_back(rec.text);
  }
  return out;
}

std::size_t TextCorpus::text_count() const {
  std::size_t n = 0;
  for (const auto& [_, recs] : entries) n += recs.size();
  return n;
}

void validate_spec(const ClassSpec& spec) {
  if (spec.class_name.empty()) raise(Errc::missing_field, "class_name empty");
  if (spec.domain_word.empty()) raise(Errc::missing_field, "domain_word empty");
  if (!spec.organism_type.empty() && spec.scientific_name.empty()) {
    raise(Errc::missing_field,
          "scientific_name required when organism_type is set ('" +
              spec.class_name + "')");
  }
}

std::string class_mention(const ClassSpec& spec) {
  std::string m = "a " + spec.class_name;
  if (!spec.organism_type.empty()) {
    m += ", a type of " + spec.organism_type + " with scientific name " +
         spec.scientific_name;
  }
  return m;
}

std::string subject_word(const ClassSpec& spec) {
  return spec.organism_type.empty() ? spec.domain_word : spec.organism_type;
}

std::string build_visual_prompt(const ClassSpec& spec) {
  validate_spec(spec);
  const std::string subject = subject_word(spec);
  return "What characteristics can be used to differentiate " +
         class_mention(spec) + " from other " + plural(spec.domain_word) +
         " based on just a photo? Provide an exhaustive list of all "
         "attributes that can be used to identify the " +
         subject + " uniquely. Texts should be of the form \"" + subject +
         " with [characteristic]\".";
}

std::string build_habitat_prompt(const ClassSpec& spec) {
  validate_spec(spec);
  return "Where can we find " + class_mention(spec) +
         "? Produce a list of habitat and geographic location information "
         "that can be used to identify the " +
         subject_word(spec) + ".";
}

std::vector<DescriptionRecord> build_taxonomy_texts(const ClassSpec& spec) {
  validate_spec(spec);
  if (spec.scientific_name.empty() && spec.family.empty() &&
      spec.order.empty()) {
    raise(Errc::no_taxonomy_fields,
          "no scientific_name/family/order for '" + spec.class_name + "'");
  }
  const std::string stem =
      "a photo of " + spec.class_name + " " + spec.domain_word;
  std::vector<DescriptionRecord> out;
  auto add = [&](const std::string& text) {
    out.push_back({text, TextKind::taxonomy, TextSource::template_text, text});
  };
  if (!spec.scientific_name.empty()) {
    add(stem + ", with scientific name " + spec.scientific_name);
  }
  if (!spec.family.empty()) {
    add(stem + ", with family name " + spec.family);
  }
  if (!spec.order.empty()) {
    add(stem + ", of the order " + spec.order);
  }
  return out;
}

std::vector<DescriptionRecord> normalize_response(const std::string& response,
                                                  const ClassSpec& spec,
                                                  TextKind kind,
                                                  TextSource source) {
  validate_spec(spec);
  const auto lines = split_lines(response);
  bool any_marker = false;
  for (const auto& line : lines) {
    std::string c;
    if (strip_marker(line, &c)) {
      any_marker = true;
      break;
    }
  }
  std::vector<DescriptionRecord> out;
  for (const auto& line : lines) {
    std::string content;
    if (any_marker) {
      if (!strip_marker(line, &content)) continue;
    } else {
      content = trim(line);
    }
    if (content.empty()) continue;
    DescriptionRecord rec;
    rec.kind = kind;
    rec.source = source;
    rec.raw_line = line;
    rec.text =
        kind == TextKind::visual ? assemble_visual(content, spec) : content;
    out.push_back(std::move(rec));
  }
  if (out.empty()) {
    raise(Errc::format_error,
          "no usable lines in response for '" + spec.class_name + "'");
  }
  return out;
}

std::string export_vetting_sheet(const TextCorpus& corpus,
                                 const std::vector<std::string>& classes) {
  std::string out = "class,text,correct\n";
  for (const auto& cls : classes) {
    auto it = corpus.entries.find(cls);
    if (it == corpus.entries.end()) {
      raise(Errc::unknown_class, "class '" + cls + "' not in corpus");
    }
    for (const auto& rec : it->second) {
      out += csv_row({cls, rec.text, ""});
    }
  }
  return out;
}

std::string corpus_to_json(const TextCorpus& corpus) {
  json j;
  j["dataset"] = corpus.dataset;
  j["domain_word"] = corpus.domain_word;
  json classes = json::object();
  for (const auto& [name, recs] : corpus.entries) {
    json arr = json::array();
    for (const auto& rec : recs) {
      arr.push_back({{"text", rec.text},
                     {"kind", to_string(rec.kind)},
                     {"source", to_string(rec.source)},
                     {"raw_line", rec.raw_line}});
    }
    classes[name] = std::move(arr);
  }
  j["classes"] = std::move(classes);
  return j.dump(2) + "\n";
}

TextCorpus corpus_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(Errc::format_error, std::string("corpus JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("dataset") || !j.contains("domain_word") ||
      !j.contains("classes") || !j["classes"].is_object()) {
    raise(Errc::format_error, "corpus JSON: missing dataset/domain_word/classes");
  }
  TextCorpus c;
  try {
    c.dataset = j["dataset"].get<std::string>();
    c.domain_word = j["domain_word"].get<std::string>();
    for (const auto& [name, arr] : j["classes"].items()) {
      std::vector<DescriptionRecord> recs;
      for (const auto& e : arr) {
        DescriptionRecord rec;
        rec.text = e.at("text").get<std::string>();
        rec.kind = text_kind_from_string(e.at("kind").get<std::string>());
        rec.source = text_source_from_string(e.at("source").get<std::string>());
        rec.raw_line = e.at("raw_line").get<std::string>();
        recs.push_back(std::move(rec));
      }
      c.entries[name] = std::move(recs);
    }
  } catch (const json::exception& e) {
    raise(Errc::format_error, std::string("corpus JSON: ") + e.what());
  }
  return c;
}

void save_corpus(const TextCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(Errc::io_error, "cannot write " + path.string());
  f << corpus_to_json(corpus);
}

TextCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(Errc::io_error, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return corpus_from_json(ss.str());
}

std::vector<ClassSpec> class_specs_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(Errc::format_error, std::string("class specs JSON: ") + e.what());
  }
  if (!j.is_array()) raise(Errc::format_error, "class specs JSON: want array");
  std::vector<ClassSpec> out;
  for (const auto& e : j) {
    ClassSpec s;
    s.class_name = e.value("class_name", "");
    s.domain_word = e.value("domain_word", "");
    s.organism_type = e.value("organism_type", "");
    s.scientific_name = e.value("scientific_name", "");
    s.family = e.value("family", "");
    s.order = e.value("order", "");
    s.class_id = e.value("class_id", static_cast<int>(out.size()));
    validate_spec(s);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ClassSpec> load_class_specs(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(Errc::io_error, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return class_specs_from_json(ss.str());
}

std::set<TextKind> parse_kinds(const std::string& csv_list) {
  std::set<TextKind> out;
  std::stringstream ss(csv_list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.insert(text_kind_from_string(item));
  }
  if (out.empty()) raise(Errc::format_error, "empty kind list");
  return out;
}

}  // namespace bagclip
