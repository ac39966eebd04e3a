#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>

#include "bagclip/corpus.hpp"
#include "bagclip/error.hpp"
#include "bagclip/llm.hpp"

using namespace bagclip;
namespace fs = std::filesystem;

namespace {

template <typename Fn>
Errc thrown_code(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected bagclip::Error");
  return Errc::invalid_argument;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> seq{0};
    path = fs::temp_directory_path() /
           ("bagclip_test_" + tag + "_" + std::to_string(seq++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

ClassSpec tern() { return {.class_name = "Common Tern", .domain_word = "bird"}; }

ClassSpec laurel() {
  return {.class_name = "Bay Laurel",
          .domain_word = "plant",
          .organism_type = "plant",
          .scientific_name = "Laurus nobilis"};
}

}  // namespace

TEST_CASE("visual prompt exact wording") {
  const std::string p = build_visual_prompt(tern());
  CHECK(p ==
        "What characteristics can be used to differentiate a Common Tern "
        "from other birds based on just a photo? Provide an exhaustive list "
        "of all attributes that can be used to identify the bird uniquely. "
        "Texts should be of the form \"bird with [characteristic]\".");
  // Pure function: byte-identical on repeat.
  CHECK(p == build_visual_prompt(tern()));
}

TEST_CASE("visual prompt carries scientific-name mention") {
  const std::string p = build_visual_prompt(laurel());
  CHECK(p.find("a Bay Laurel, a type of plant with scientific name "
               "Laurus nobilis") != std::string::npos);
}

TEST_CASE("prompt builders reject incomplete specs") {
  CHECK(thrown_code([] {
          build_visual_prompt({.class_name = "X", .domain_word = ""});
        }) == Errc::missing_field);
  CHECK(thrown_code([] {
          build_visual_prompt({.class_name = "", .domain_word = "bird"});
        }) == Errc::missing_field);
  // organism_type without scientific_name is rejected.
  CHECK(thrown_code([] {
          build_habitat_prompt({.class_name = "X",
                                .domain_word = "plant",
                                .organism_type = "plant"});
        }) == Errc::missing_field);
}

TEST_CASE("habitat prompt exact wording") {
  CHECK(build_habitat_prompt(tern()) ==
        "Where can we find a Common Tern? Produce a list of habitat and "
        "geographic location information that can be used to identify the "
        "bird.");
  const std::string p = build_habitat_prompt(
      {.class_name = "White Spruce",
       .domain_word = "plant",
       .organism_type = "plant",
       .scientific_name = "Picea glauca"});
  CHECK(p.find("a type of plant with scientific name Picea glauca") !=
        std::string::npos);
  CHECK(build_habitat_prompt(tern()) == build_habitat_prompt(tern()));
}

TEST_CASE("taxonomy texts, one per available field") {
  ClassSpec s = laurel();
  auto recs = build_taxonomy_texts(s);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].text ==
        "a photo of Bay Laurel plant, with scientific name Laurus nobilis");
  CHECK(recs[0].kind == TextKind::taxonomy);
  CHECK(recs[0].source == TextSource::template_text);

  s.family = "Lauraceae";
  s.order = "Laurales";
  recs = build_taxonomy_texts(s);
  REQUIRE(recs.size() == 3);
  CHECK(recs[1].text == "a photo of Bay Laurel plant, with family name Lauraceae");
  CHECK(recs[2].text == "a photo of Bay Laurel plant, of the order Laurales");

  CHECK(thrown_code([] { build_taxonomy_texts(tern()); }) ==
        Errc::no_taxonomy_fields);
}

TEST_CASE("normalize rewrites bullet lines onto the photo stem") {
  auto recs = normalize_response(
      "- A bird with a slender, pointed bill and a black cap.\n", tern(),
      TextKind::visual, TextSource::gpt4);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].text ==
        "a photo of a Common Tern bird with a slender, pointed bill and a "
        "black cap.");
  CHECK(recs[0].raw_line ==
        "- A bird with a slender, pointed bill and a black cap.");
  CHECK(recs[0].source == TextSource::gpt4);
}

TEST_CASE("normalize drops preamble when any line is markered") {
  const std::string resp =
      "Sure! Here are some characteristics:\n"
      "- bird with bright red wing patches\n"
      "1. bird with a forked tail\n"
      "2) bird with black leg bands\n"
      "\n"
      "I hope this helps!\n";
  auto recs =
      normalize_response(resp, tern(), TextKind::visual, TextSource::llama);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].text == "a photo of a Common Tern bird with bright red wing patches");
  CHECK(recs[1].text == "a photo of a Common Tern bird with a forked tail");
  CHECK(recs[2].text == "a photo of a Common Tern bird with black leg bands");
}

TEST_CASE("normalize keeps bare lines when nothing is markered") {
  auto recs = normalize_response("bird with long wings\nbird with red feet\n",
                                 tern(), TextKind::visual, TextSource::gpt3);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].text == "a photo of a Common Tern bird with long wings");
  CHECK(recs[1].text == "a photo of a Common Tern bird with red feet");
}

TEST_CASE("normalize falls back to comma splice for off-schema lines") {
  auto recs = normalize_response("Has a jet black cap.\n", tern(),
                                 TextKind::visual, TextSource::gpt4);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].text == "a photo of a Common Tern bird, has a jet black cap.");
}

TEST_CASE("normalize leaves habitat lines unprefixed") {
  auto recs = normalize_response("- Found along coastal beaches.\n", tern(),
                                 TextKind::habitat, TextSource::gpt4);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].text == "Found along coastal beaches.");
}

TEST_CASE("normalize is idempotent and keeps the photo stem") {
  const std::string resp =
      "- bird with a slender bill\n"
      "- The bird with white underparts\n"
      "- Nests on sandy ground\n";
  auto once =
      normalize_response(resp, tern(), TextKind::visual, TextSource::gpt4);
  for (const auto& rec : once) {
    CHECK(rec.text.rfind("a photo of", 0) == 0);
  }
  std::string joined;
  for (const auto& rec : once) joined += rec.text + "\n";
  auto twice =
      normalize_response(joined, tern(), TextKind::visual, TextSource::gpt4);
  REQUIRE(twice.size() == once.size());
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(twice[i].text == once[i].text);
  }
}

TEST_CASE("normalize rejects responses with no usable lines") {
  CHECK(thrown_code([] {
          normalize_response("", tern(), TextKind::visual, TextSource::gpt4);
        }) == Errc::format_error);
  CHECK(thrown_code([] {
          normalize_response("   \n\t\n", tern(), TextKind::visual,
                             TextSource::gpt4);
        }) == Errc::format_error);
}

TEST_CASE("vetting sheet layout") {
  TextCorpus corpus;
  corpus.dataset = "cub";
  corpus.domain_word = "bird";
  corpus.entries["Common Tern"] = {
      {"a photo of a Common Tern bird with a black cap", TextKind::visual,
       TextSource::gpt4, "raw"},
      {"Found near coasts", TextKind::habitat, TextSource::gpt4, "raw"},
  };
  const std::string sheet = export_vetting_sheet(corpus, {"Common Tern"});
  CHECK(sheet ==
        "class,text,correct\n"
        "Common Tern,a photo of a Common Tern bird with a black cap,\n"
        "Common Tern,Found near coasts,\n");
  CHECK(export_vetting_sheet(corpus, {}) == "class,text,correct\n");
  CHECK(thrown_code([&] { export_vetting_sheet(corpus, {"Missing"}); }) ==
        Errc::unknown_class);
}

TEST_CASE("corpus JSON round trip is bit exact") {
  TextCorpus corpus;
  corpus.dataset = "cub";
  corpus.domain_word = "bird";
  corpus.entries["Common Tern"] = {
      {"a photo of a Common Tern bird with a, comma", TextKind::visual,
       TextSource::gpt4, "- raw \"quoted\" line"},
      {"Found near coasts", TextKind::habitat, TextSource::llama, "x"},
      {"a photo of Common Tern bird, of the order Charadriiformes",
       TextKind::taxonomy, TextSource::template_text, "t"},
  };
  corpus.entries["Arctic Tern"] = {
      {"a photo of a Arctic Tern bird with short legs", TextKind::visual,
       TextSource::human, "h"},
  };
  const std::string j1 = corpus_to_json(corpus);
  CHECK(j1.back() == '\n');
  TextCorpus back = corpus_from_json(j1);
  CHECK(back == corpus);
  CHECK(corpus_to_json(back) == j1);

  TempDir tmp("corpusio");
  const fs::path p = tmp.path / "corpus.json";
  save_corpus(corpus, p);
  CHECK(load_corpus(p) == corpus);

  CHECK(thrown_code([] { corpus_from_json("not json"); }) ==
        Errc::format_error);
  CHECK(thrown_code([] { corpus_from_json("{\"dataset\":\"x\"}"); }) ==
        Errc::format_error);
}

TEST_CASE("texts_of filters by kind") {
  TextCorpus corpus;
  corpus.entries["c"] = {
      {"v1", TextKind::visual, TextSource::gpt4, ""},
      {"h1", TextKind::habitat, TextSource::gpt4, ""},
      {"t1", TextKind::taxonomy, TextSource::template_text, ""},
  };
  CHECK(corpus.texts_of("c").size() == 3);
  CHECK(corpus.texts_of("c", {TextKind::visual}) ==
        std::vector<std::string>{"v1"});
  CHECK(corpus.texts_of("c", {TextKind::habitat, TextKind::taxonomy}) ==
        std::vector<std::string>{"h1", "t1"});
  CHECK(corpus.text_count() == 3);
  CHECK(thrown_code([&] { corpus.texts_of("nope"); }) == Errc::unknown_class);
}

TEST_CASE("parse_kinds handles lists, spaces, and bad names") {
  CHECK(parse_kinds("visual") == std::set<TextKind>{TextKind::visual});
  CHECK(parse_kinds("visual, habitat") ==
        std::set<TextKind>{TextKind::visual, TextKind::habitat});
  CHECK(parse_kinds("visual,visual").size() == 1);
  CHECK(parse_kinds("visual,habitat,taxonomy").size() == 3);
  CHECK(thrown_code([] { parse_kinds(""); }) == Errc::format_error);
  CHECK(thrown_code([] { parse_kinds("smell"); }) == Errc::format_error);
}

TEST_CASE("class specs JSON parsing") {
  const std::string txt = R"([
    {"class_name": "Common Tern", "domain_word": "bird"},
    {"class_name": "Bay Laurel", "domain_word": "plant",
     "organism_type": "plant", "scientific_name": "Laurus nobilis",
     "family": "Lauraceae", "order": "Laurales", "class_id": 7}
  ])";
  auto specs = class_specs_from_json(txt);
  REQUIRE(specs.size() == 2);
  CHECK(specs[0].class_name == "Common Tern");
  CHECK(specs[0].class_id == 0);  // defaults to position
  CHECK(specs[1].scientific_name == "Laurus nobilis");
  CHECK(specs[1].class_id == 7);
  CHECK(thrown_code([] { class_specs_from_json("{}"); }) ==
        Errc::format_error);
  CHECK(thrown_code([] {
          class_specs_from_json("[{\"domain_word\":\"bird\"}]");
        }) == Errc::missing_field);
}

TEST_CASE("response cache round trips and refuses conflicting rewrites") {
  TempDir tmp("cache");
  ResponseCache cache(tmp.path);
  CHECK(!cache.get("stub", "m", "prompt"));
  cache.put("stub", "m", "prompt", "resp\nwith lines");
  auto hit = cache.get("stub", "m", "prompt");
  REQUIRE(hit.has_value());
  CHECK(*hit == "resp\nwith lines");
  // Same payload again is fine; a different one is a hard error.
  cache.put("stub", "m", "prompt", "resp\nwith lines");
  CHECK(thrown_code([&] { cache.put("stub", "m", "prompt", "other"); }) ==
        Errc::cache_conflict);
  // Distinct models key separately.
  cache.put("stub", "m2", "prompt", "other");
  CHECK(*cache.get("stub", "m2", "prompt") == "other");
}

TEST_CASE("complete_cached hits the cache and retries on provider errors") {
  TempDir tmp("client");
  auto cache = std::make_shared<ResponseCache>(tmp.path);
  LLMClientConfig cfg;
  cfg.backoff_initial = std::chrono::milliseconds(1);

  int calls = 0;
  auto counting = std::make_shared<FunctionProvider>(
      "count", [&calls](const std::string&) {
        ++calls;
        return std::string("- bird with tracked feature\n");
      });
  LLMClient client(counting, cfg, cache);
  const std::string r1 = client.complete_cached("p1", "role");
  const std::string r2 = client.complete_cached("p1", "role");
  CHECK(r1 == r2);
  CHECK(calls == 1);  // second call served from cache

  int flaky_calls = 0;
  auto flaky = std::make_shared<FunctionProvider>(
      "flaky", [&flaky_calls](const std::string&) -> std::string {
        if (++flaky_calls < 3) raise(Errc::provider_error, "transient");
        return "- bird with persistence\n";
      });
  LLMClient flaky_client(flaky, cfg, cache);
  CHECK(flaky_client.complete_cached("p2", "role") ==
        "- bird with persistence\n");
  CHECK(flaky_calls == 3);

  auto broken = std::make_shared<FunctionProvider>(
      "broken", [](const std::string&) -> std::string {
        raise(Errc::provider_error, "down");
      });
  LLMClient broken_client(broken, cfg, cache);
  CHECK(thrown_code([&] { broken_client.complete_cached("p3", "role"); }) ==
        Errc::provider_error);
}

TEST_CASE("system role substitutes the subject word") {
  TempDir tmp("role");
  LLMClient client(make_stub_provider(), LLMClientConfig{},
                   std::make_shared<ResponseCache>(tmp.path));
  CHECK(client.system_role_for(TextKind::visual, tern()) ==
        "You are a helpful assistant who can identify any bird based on its "
        "photo.");
  CHECK(client.system_role_for(TextKind::habitat, laurel()) ==
        "You are a helpful assistant who knows about the habitat of any "
        "plant.");
  CHECK(client.source() == TextSource::gpt4);  // from default model name
}

TEST_CASE("query_and_normalize returns cached records bit-identically") {
  TempDir tmp("qn");
  auto cache = std::make_shared<ResponseCache>(tmp.path);
  LLMClient client(make_stub_provider(), LLMClientConfig{}, cache);
  const std::string prompt = build_visual_prompt(tern());
  auto first = query_and_normalize(client, prompt, tern(), TextKind::visual);
  auto second = query_and_normalize(client, prompt, tern(), TextKind::visual);
  REQUIRE(!first.empty());
  CHECK(first == second);
  for (const auto& rec : first) {
    CHECK(rec.text.rfind("a photo of", 0) == 0);
  }
}

TEST_CASE("generate_corpus builds all kinds and warns on missing taxonomy") {
  TempDir tmp("gen");
  auto cache = std::make_shared<ResponseCache>(tmp.path);
  LLMClient client(make_stub_provider(), LLMClientConfig{}, cache);
  std::vector<ClassSpec> specs = {tern(), laurel()};
  auto result = generate_corpus(
      specs, "cub",
      {TextKind::visual, TextKind::habitat, TextKind::taxonomy}, client);
  CHECK(result.corpus.dataset == "cub");
  CHECK(result.corpus.entries.size() == 2);
  // The tern spec has no taxonomy fields: warning, not an error.
  REQUIRE(result.warnings.size() == 1);
  CHECK(result.warnings[0].find("Common Tern") != std::string::npos);
  CHECK(result.corpus.texts_of("Common Tern", {TextKind::taxonomy}).empty());
  CHECK(result.corpus.texts_of("Common Tern", {TextKind::visual}).size() == 5);
  CHECK(result.corpus.texts_of("Common Tern", {TextKind::habitat}).size() == 5);
  CHECK(result.corpus.texts_of("Bay Laurel", {TextKind::taxonomy}).size() == 1);
  // Stub responses are deterministic, so a rerun reproduces the corpus.
  auto again = generate_corpus(
      specs, "cub",
      {TextKind::visual, TextKind::habitat, TextKind::taxonomy}, client);
  CHECK(again.corpus == result.corpus);
}
