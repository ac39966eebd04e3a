#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "bagclip.h"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    std::exit(1);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    std::cerr << "error: cannot write " << path << "\n";
    std::exit(1);
  }
  out << content;
}

void check(bagclip_status status) {
  if (status != BAGCLIP_OK) {
    std::cerr << "error: " << bagclip_last_error() << "\n";
    std::exit(1);
  }
}

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { bagclip_string_free(ptr); }
  std::string str() const { return ptr ? ptr : ""; }
};

void print_warnings(const OwnedString& warnings) {
  if (!warnings.ptr) return;
  auto arr = nlohmann::json::parse(warnings.str(), nullptr, false);
  if (!arr.is_array()) return;
  for (const auto& w : arr) {
    if (w.is_string()) std::cerr << "warning: " << w.get<std::string>() << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"class description corpus tools"};
  app.set_version_flag("--version", bagclip_version());
  app.require_subcommand(1);

  auto* gen = app.add_subcommand(
      "generate", "query a provider for per-class description texts");
  std::string dataset, specs_path, out_path, model;
  std::string kinds = "visual,habitat,taxonomy";
  std::string provider = "stub";
  int jobs = 1;
  gen->add_option("--dataset", dataset, "dataset name")->required();
  gen->add_option("--kinds", kinds, "comma list from visual,habitat,taxonomy");
  gen->add_option("--provider", provider, "provider id (stub, openai)");
  gen->add_option("--out", out_path, "corpus JSON output path")->required();
  gen->add_option("--specs", specs_path, "class spec JSON array file")
      ->required();
  gen->add_option("--model", model, "override the provider model id");
  gen->add_option("--jobs", jobs, "concurrent provider requests");

  auto* vet = app.add_subcommand("vet", "export a fact-checking sheet");
  std::string in_path, classes_csv, vet_out;
  vet->add_option("--in", in_path, "corpus JSON path")->required();
  vet->add_option("--classes", classes_csv, "comma list of class names")
      ->required();
  vet->add_option("--out", vet_out, "CSV output path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    const std::string specs = read_file(specs_path);
    OwnedString corpus_json, warnings;
    check(bagclip_generate_corpus(specs.c_str(), dataset.c_str(),
                                  kinds.c_str(), provider.c_str(),
                                  model.empty() ? nullptr : model.c_str(),
                                  jobs, &corpus_json.ptr, &warnings.ptr));
    print_warnings(warnings);
    write_file(out_path, corpus_json.str());

    bagclip_corpus* corpus = nullptr;
    check(bagclip_corpus_parse(corpus_json.ptr, &corpus));
    size_t classes = 0, texts = 0;
    bagclip_corpus_class_count(corpus, &classes);
    bagclip_corpus_text_count(corpus, &texts);
    bagclip_corpus_release(corpus);
    std::cout << "wrote " << texts << " texts for " << classes
              << " classes to " << out_path << "\n";
  }

  if (vet->parsed()) {
    bagclip_corpus* corpus = nullptr;
    check(bagclip_corpus_load(in_path.c_str(), &corpus));
    OwnedString sheet;
    const bagclip_status status =
        bagclip_corpus_vet_sheet(corpus, classes_csv.c_str(), &sheet.ptr);
    bagclip_corpus_release(corpus);
    check(status);
    if (vet_out.empty()) {
      std::cout << sheet.str();
    } else {
      write_file(vet_out, sheet.str());
      std::cout << "wrote vetting sheet to " << vet_out << "\n";
    }
  }

  return 0;
}
