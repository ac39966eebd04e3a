#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "bagclip/corpus.hpp"
#include "bagclip/error.hpp"

namespace bagclip {

// Transport seam. Implementations must be safe to call from several threads.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string id() const = 0;
  virtual std::string complete(const std::string& model,
                               const std::string& system_role,
                               const std::string& prompt,
                               double temperature) = 0;
};

// Content-addressed response store: one JSON file per (provider, model,
// prompt) key. Writes are serialized; rewriting an existing key with a
// different response is an error rather than last-writer-wins.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path root);

  // Honors BAGCLIP_CACHE when set.
  static std::filesystem::path root_from_env_or(
      const std::filesystem::path& fallback);

  std::optional<std::string> get(const std::string& provider,
                                 const std::string& model,
                                 const std::string& prompt) const;
  void put(const std::string& provider, const std::string& model,
           const std::string& prompt, const std::string& response);

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path key_path(const std::string& provider,
                                 const std::string& model,
                                 const std::string& prompt) const;

  std::filesystem::path root_;
  mutable std::mutex mu_;
};

struct LLMClientConfig {
  std::string model = "gpt-4-0613";
  double temperature = 0.0;  // deterministic decoding
  std::string system_role_visual =
      "You are a helpful assistant who can identify any [domain] based on "
      "its photo.";
  std::string system_role_habitat =
      "You are a helpful assistant who knows about the habitat of any "
      "[domain].";
  int max_retries = 3;
  std::chrono::milliseconds backoff_initial{250};
};

class LLMClient {
 public:
  LLMClient(std::shared_ptr<Provider> provider, LLMClientConfig cfg,
            std::shared_ptr<ResponseCache> cache);

  // Cache-first completion; on miss calls the provider with retries and
  // exponential backoff, then persists the response.
  std::string complete_cached(const std::string& prompt,
                              const std::string& system_role);

  std::string system_role_for(TextKind kind, const ClassSpec& spec) const;
  TextSource source() const;
  const LLMClientConfig& config() const { return cfg_; }

 private:
  std::shared_ptr<Provider> provider_;
  LLMClientConfig cfg_;
  std::shared_ptr<ResponseCache> cache_;
};

std::vector<DescriptionRecord> query_and_normalize(LLMClient& client,
                                                   const std::string& prompt,
                                                   const ClassSpec& spec,
                                                   TextKind kind);

struct GenerateResult {
  TextCorpus corpus;
  std::vector<std::string> warnings;
};

GenerateResult generate_corpus(const std::vector<ClassSpec>& specs,
                               const std::string& dataset,
                               const std::set<TextKind>& kinds,
                               LLMClient& client, int jobs = 1);

// OpenAI-style chat completions over HTTP. Base URL from BAGCLIP_API_BASE
// (default https://api.openai.com/v1), bearer token from OPENAI_API_KEY.
std::shared_ptr<Provider> make_http_provider();

// Offline deterministic generator for demos and pipeline tests.
std::shared_ptr<Provider> make_stub_provider();

// In-process hook for tests.
class FunctionProvider : public Provider {
 public:
  using Fn = std::function<std::string(const std::string& prompt)>;
  FunctionProvider(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}
  std::string id() const override { return id_; }
  std::string complete(const std::string&, const std::string&,
                       const std::string& prompt, double) override {
    return fn_(prompt);
  }

 private:
  std::string id_;
  Fn fn_;
};

// "stub" or "openai".
std::shared_ptr<Provider> make_provider(const std::string& provider_id);

}  // namespace bagclip
