#include "bagclip/llm.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include "bagclip/rng.hpp"
#include "httplib.h"
#include "json.hpp"

namespace bagclip {

using nlohmann::json;

// --- cache -----------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path root)
    : root_(std::move(root)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) raise(Errc::io_error, "cannot create cache dir " + root_.string());
}

std::filesystem::path ResponseCache::root_from_env_or(
    const std::filesystem::path& fallback) {
  const char* env = std::getenv("BAGCLIP_CACHE");
  if (env && *env) return env;
  return fallback;
}

std::filesystem::path ResponseCache::key_path(const std::string& provider,
                                              const std::string& model,
                                              const std::string& prompt) const {
  const std::string key = provider + '\x1f' + model + '\x1f' + prompt;
  char name[32];
  std::snprintf(name, sizeof(name), "%016llx.json",
                static_cast<unsigned long long>(fnv1a64(key)));
  return root_ / name;
}

std::optional<std::string> ResponseCache::get(const std::string& provider,
                                              const std::string& model,
                                              const std::string& prompt) const {
  std::lock_guard lock(mu_);
  const auto path = key_path(provider, model, prompt);
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  json j;
  try {
    f >> j;
  } catch (const json::exception&) {
    raise(Errc::io_error, "corrupt cache entry " + path.string());
  }
  if (j.value("provider", "") != provider || j.value("model", "") != model ||
      j.value("prompt", "") != prompt) {
    raise(Errc::cache_conflict, "cache key collision at " + path.string());
  }
  return j.value("response", "");
}

void ResponseCache::put(const std::string& provider, const std::string& model,
                        const std::string& prompt,
                        const std::string& response) {
  std::lock_guard lock(mu_);
  const auto path = key_path(provider, model, prompt);
  if (std::filesystem::exists(path)) {
    std::ifstream f(path, std::ios::binary);
    json j;
    try {
      f >> j;
    } catch (const json::exception&) {
      raise(Errc::io_error, "corrupt cache entry " + path.string());
    }
    if (j.value("provider", "") != provider || j.value("model", "") != model ||
        j.value("prompt", "") != prompt) {
      raise(Errc::cache_conflict, "cache key collision at " + path.string());
    }
    if (j.value("response", "") != response) {
      raise(Errc::cache_conflict,
            "conflicting write for cached prompt (" + path.string() + ")");
    }
    return;
  }
  json j{{"provider", provider},
         {"model", model},
         {"prompt", prompt},
         {"response", response}};
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) raise(Errc::io_error, "cannot write " + tmp);
    f << j.dump(2) << '\n';
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) raise(Errc::io_error, "cannot commit cache entry " + path.string());
}

// --- client ----------------------------------------------------------------

LLMClient::LLMClient(std::shared_ptr<Provider> provider, LLMClientConfig cfg,
                     std::shared_ptr<ResponseCache> cache)
    : provider_(std::move(provider)),
      cfg_(std::move(cfg)),
      cache_(std::move(cache)) {
  if (!provider_) raise(Errc::invalid_argument, "null provider");
}

std::string LLMClient::complete_cached(const std::string& prompt,
                                       const std::string& system_role) {
  if (prompt.empty()) raise(Errc::invalid_argument, "empty prompt");
  if (cache_) {
    if (auto hit = cache_->get(provider_->id(), cfg_.model, prompt)) {
      return *hit;
    }
  }
  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(cfg_.backoff_initial * (1 << (attempt - 1)));
    }
    try {
      std::string response =
          provider_->complete(cfg_.model, system_role, prompt, cfg_.temperature);
      if (cache_) {
        cache_->put(provider_->id(), cfg_.model, prompt, response);
      }
      return response;
    } catch (const Error& e) {
      if (e.code() != Errc::provider_error) throw;
      last_error = e.what();
    }
  }
  raise(Errc::provider_error,
        "retries exhausted (" + std::to_string(cfg_.max_retries) +
            "): " + last_error);
}

std::string LLMClient::system_role_for(TextKind kind,
                                       const ClassSpec& spec) const {
  std::string role = kind == TextKind::habitat ? cfg_.system_role_habitat
                                               : cfg_.system_role_visual;
  const std::string placeholder = "[domain]";
  const std::string subject = subject_word(spec);
  std::size_t pos;
  while ((pos = role.find(placeholder)) != std::string::npos) {
    role.replace(pos, placeholder.size(), subject);
  }
  return role;
}

TextSource LLMClient::source() const {
  const std::string m = cfg_.model;
  auto contains = [&](const char* s) { return m.find(s) != std::string::npos; };
  if (contains("gpt-4") || contains("gpt4")) return TextSource::gpt4;
  if (contains("gpt-3") || contains("gpt3")) return TextSource::gpt3;
  if (contains("llama") || contains("Llama") || contains("LLaMA")) {
    return TextSource::llama;
  }
  if (contains("human")) return TextSource::human;
  return TextSource::template_text;
}

std::vector<DescriptionRecord> query_and_normalize(LLMClient& client,
                                                   const std::string& prompt,
                                                   const ClassSpec& spec,
                                                   TextKind kind) {
  if (prompt.empty()) raise(Errc::invalid_argument, "empty prompt");
  const std::string response =
      client.complete_cached(prompt, client.system_role_for(kind, spec));
  return normalize_response(response, spec, kind, client.source());
}

GenerateResult generate_corpus(const std::vector<ClassSpec>& specs,
                               const std::string& dataset,
                               const std::set<TextKind>& kinds,
                               LLMClient& client, int jobs) {
  if (specs.empty()) raise(Errc::invalid_argument, "no class specs");
  if (kinds.empty()) raise(Errc::invalid_argument, "no text kinds requested");
  if (jobs < 1) jobs = 1;

  GenerateResult result;
  result.corpus.dataset = dataset;
  result.corpus.domain_word = specs.front().domain_word;

  struct ClassOut {
    std::vector<DescriptionRecord> recs;
    std::vector<std::string> warnings;
  };
  auto one_class = [&](const ClassSpec& spec) {
    ClassOut out;
    if (kinds.count(TextKind::visual)) {
      auto recs = query_and_normalize(client, build_visual_prompt(spec), spec,
                                      TextKind::visual);
      out.recs.insert(out.recs.end(), recs.begin(), recs.end());
    }
    if (kinds.count(TextKind::habitat)) {
      auto recs = query_and_normalize(client, build_habitat_prompt(spec), spec,
                                      TextKind::habitat);
      out.recs.insert(out.recs.end(), recs.begin(), recs.end());
    }
    if (kinds.count(TextKind::taxonomy)) {
      if (spec.scientific_name.empty() && spec.family.empty() &&
          spec.order.empty()) {
        out.warnings.push_back("no taxonomy fields for '" + spec.class_name +
                               "'; taxonomy texts skipped");
      } else {
        auto recs = build_taxonomy_texts(spec);
        out.recs.insert(out.recs.end(), recs.begin(), recs.end());
      }
    }
    return out;
  };

  std::vector<ClassOut> outs(specs.size());
  // Waves of `jobs` keep concurrency bounded; results land by index so the
  // output is independent of completion order.
  for (std::size_t base = 0; base < specs.size();
       base += static_cast<std::size_t>(jobs)) {
    std::vector<std::future<ClassOut>> wave;
    const std::size_t end =
        std::min(specs.size(), base + static_cast<std::size_t>(jobs));
    for (std::size_t i = base; i < end; ++i) {
      if (jobs == 1) {
        outs[i] = one_class(specs[i]);
      } else {
        wave.push_back(std::async(std::launch::async, one_class,
                                  std::cref(specs[i])));
      }
    }
    for (std::size_t i = base; i < base + wave.size(); ++i) {
      outs[i] = wave[i - base].get();
    }
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    result.corpus.entries[specs[i].class_name] = std::move(outs[i].recs);
    for (auto& w : outs[i].warnings) result.warnings.push_back(std::move(w));
  }
  return result;
}

// --- providers ---------------------------------------------------------------

namespace {

class HttpProvider : public Provider {
 public:
  std::string id() const override { return "openai"; }

  std::string complete(const std::string& model,
                       const std::string& system_role,
                       const std::string& prompt,
                       double temperature) override {
    const char* base_env = std::getenv("BAGCLIP_API_BASE");
    std::string base = base_env && *base_env ? base_env
                                             : "https://api.openai.com/v1";
    // split scheme://host[:port] from the path prefix
    std::string host = base, path_prefix;
    auto scheme_end = base.find("://");
    std::size_t path_start =
        base.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start != std::string::npos) {
      host = base.substr(0, path_start);
      path_prefix = base.substr(path_start);
    }
    while (!path_prefix.empty() && path_prefix.back() == '/') {
      path_prefix.pop_back();
    }

    const char* key = std::getenv("OPENAI_API_KEY");
    json body{{"model", model},
              {"temperature", temperature},
              {"messages",
               {{{"role", "system"}, {"content", system_role}},
                {{"role", "user"}, {"content", prompt}}}}};

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (host.rfind("https", 0) == 0) {
      raise(Errc::provider_error, "TLS support not built; set BAGCLIP_API_BASE "
                                  "to an http:// endpoint");
    }
#endif
    httplib::Client cli(host);
    cli.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = cli.Post(path_prefix + "/chat/completions", headers,
                        body.dump(), "application/json");
    if (!res) {
      raise(Errc::provider_error,
            "transport failure: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      raise(Errc::provider_error, "HTTP " + std::to_string(res->status) +
                                      ": " + res->body.substr(0, 200));
    }
    try {
      json j = json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content")
          .get<std::string>();
    } catch (const json::exception& e) {
      raise(Errc::provider_error, std::string("bad response JSON: ") + e.what());
    }
  }
};

// Deterministic offline lines keyed on the prompt hash. Visual prompts carry
// the requested stem inside `Texts should be of the form "..."`; reuse it so
// the normalizer exercises its usual path.
class StubProvider : public Provider {
 public:
  std::string id() const override { return "stub"; }

  std::string complete(const std::string&, const std::string&,
                       const std::string& prompt, double) override {
    const std::uint64_t h = fnv1a64(prompt);
    char tag[16];
    std::snprintf(tag, sizeof(tag), "%06llx",
                  static_cast<unsigned long long>(h & 0xffffff));
    std::string stem;
    const std::string marker = "of the form \"";
    auto pos = prompt.find(marker);
    if (pos != std::string::npos) {
      auto end = prompt.find(" with [characteristic]", pos);
      if (end != std::string::npos) {
        stem = prompt.substr(pos + marker.size(), end - pos - marker.size());
      }
    }
    std::string out;
    for (int i = 0; i < 5; ++i) {
      if (!stem.empty()) {
        out += "- " + stem + " with synthetic field marker " + tag + "-" +
               std::to_string(i) + ".\n";
      } else {
        out += "- Found in synthetic region " + std::string(tag) + "-" +
               std::to_string(i) + ".\n";
      }
    }
    return out;
  }
};

}  // namespace

std::shared_ptr<Provider> make_http_provider() {
  return std::make_shared<HttpProvider>();
}

std::shared_ptr<Provider> make_stub_provider() {
  return std::make_shared<StubProvider>();
}

std::shared_ptr<Provider> make_provider(const std::string& provider_id) {
  if (provider_id == "stub") return make_stub_provider();
  if (provider_id == "openai") return make_http_provider();
  raise(Errc::config_error, "unknown provider '" + provider_id + "'");
}

}  // namespace bagclip
