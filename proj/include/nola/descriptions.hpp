#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nola/dataset.hpp"
#include "nola/error.hpp"

namespace nola {

enum class DescriptionSource { cache_file, llm_client };

/// LLM-generated text descriptions per class, plus the question templates
/// that produced them.
struct DescriptionSet {
  std::string dataset;
  std::vector<std::string> templates;
  /// Manifest class order.
  std::vector<std::string> class_names;
  std::map<std::string, std::vector<std::string>> per_class;
  DescriptionSource source = DescriptionSource::cache_file;

  std::size_t total() const;
  /// K when every class has the same number of descriptions.
  std::optional<std::size_t> uniform_k() const;
  const std::vector<std::string>& descriptions(std::size_t class_index) const {
    return per_class.at(class_names.at(class_index));
  }
  /// Equality of content; provenance (`source`) is ignored.
  bool same_content(const DescriptionSet& other) const;
};

/// Substitutes every "{}" in `question` with `class_name`.
std::string format_template(const std::string& question, const std::string& class_name);

DescriptionSet load_descriptions(const std::filesystem::path& path, const DatasetManifest& manifest);
void save_descriptions(const DescriptionSet& set, const std::filesystem::path& path);

/// Appends class-name templates (e.g. "a photo of a {}.") to `templates` and
/// their formatted text to every class's descriptions.
void add_class_templates(DescriptionSet& set, const std::vector<std::string>& class_templates);

/// Prompt string in, list of completions out.
class LLMClient {
 public:
  virtual ~LLMClient() = default;
  virtual std::vector<std::string> complete(const std::string& prompt) = 0;
};

/// Retryable failure (rate limit or timeout). The caller skips the pair and
/// keeps going; the partial result is reported at the end.
class RetryableClientError : public Error {
 public:
  RetryableClientError(const std::string& message, double retry_after_seconds = 0.0)
      : Error(ErrorCode::RateLimited, message), retry_after_(retry_after_seconds) {}
  double retry_after_seconds() const { return retry_after_; }

 private:
  double retry_after_;
};

struct FailedRequest {
  std::string class_name;
  std::string question;
  std::string prompt;
  std::string reason;
};

/// Thrown by generate_descriptions when some requests were rate limited.
/// Everything that completed is preserved in `partial()`.
class RateLimitedError : public Error {
 public:
  RateLimitedError(DescriptionSet partial, std::vector<FailedRequest> failed, double retry_after_seconds);

  const DescriptionSet& partial() const { return partial_; }
  const std::vector<FailedRequest>& failed() const { return failed_; }
  double retry_after_seconds() const { return retry_after_; }
  std::size_t completed_entries() const { return partial_.total(); }

 private:
  DescriptionSet partial_;
  std::vector<FailedRequest> failed_;
  double retry_after_;
};

/// Queries the LLM once per (class, question) pair. On success the set is
/// written to `cache_path` (when given) so later runs can use
/// load_descriptions.
DescriptionSet generate_descriptions(LLMClient& client, const DatasetManifest& manifest,
                                     const std::vector<std::string>& templates,
                                     const std::optional<std::filesystem::path>& cache_path = std::nullopt);

/// Offline client. Answers through `responder`; calls listed in
/// `fail_on_calls` (1-based) raise a retryable timeout instead.
class MockLLMClient : public LLMClient {
 public:
  using Responder = std::function<std::vector<std::string>(const std::string& prompt)>;

  explicit MockLLMClient(Responder responder = echo_responder()) : responder_(std::move(responder)) {}

  std::vector<std::string> complete(const std::string& prompt) override;

  void fail_on_call(std::size_t call_number) { fail_on_.push_back(call_number); }
  std::size_t calls() const { return calls_; }
  const std::vector<std::string>& prompts() const { return prompts_; }

  static Responder echo_responder();

 private:
  Responder responder_;
  std::vector<std::size_t> fail_on_;
  std::size_t calls_ = 0;
  std::vector<std::string> prompts_;
};

struct HttpClientSettings {
  std::string endpoint;  ///< e.g. https://api.openai.com/v1/chat/completions
  std::string api_key;
  std::string model = "gpt-3.5-turbo";
  int completions_per_prompt = 1;
  double temperature = 0.99;
  int timeout_seconds = 60;

  /// Reads NOLA_LLM_ENDPOINT and NOLA_LLM_KEY. Throws ClientUnavailable when
  /// the endpoint is unset.
  static HttpClientSettings from_environment();
};

/// OpenAI-compatible chat-completions client.
class HttpLLMClient : public LLMClient {
 public:
  explicit HttpLLMClient(HttpClientSettings settings);
  std::vector<std::string> complete(const std::string& prompt) override;

 private:
  HttpClientSettings settings_;
};

}  // namespace nola
