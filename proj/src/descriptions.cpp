#include "nola/descriptions.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace nola {

std::size_t DescriptionSet::total() const {
  std::size_t n = 0;
  for (const auto& [name, d] : per_class) n += d.size();
  return n;
}

std::optional<std::size_t> DescriptionSet::uniform_k() const {
  if (per_class.empty()) return std::nullopt;
  const std::size_t k = per_class.begin()->second.size();
  for (const auto& [name, d] : per_class)
    if (d.size() != k) return std::nullopt;
  return k;
}

bool DescriptionSet::same_content(const DescriptionSet& other) const {
  return dataset == other.dataset && templates == other.templates && class_names == other.class_names &&
         per_class == other.per_class;
}

std::string format_template(const std::string& question, const std::string& class_name) {
  const std::string placeholder = "{}";
  if (question.find(placeholder) == std::string::npos)
    throw Error(ErrorCode::PlaceholderMissing, "template has no {} placeholder: \"" + question + "\"");
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = question.find(placeholder, pos);
    if (hit == std::string::npos) break;
    out.append(question, pos, hit - pos);
    out += class_name;
    pos = hit + placeholder.size();
  }
  out.append(question, pos, std::string::npos);
  return out;
}

DescriptionSet load_descriptions(const fs::path& path, const DatasetManifest& manifest) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  json doc;
  try {
    std::ifstream in(path);
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("classes") || !doc["classes"].is_object())
    throw Error(ErrorCode::ParseError, path.string() + ": expected object with 'classes'");

  DescriptionSet set;
  set.source = DescriptionSource::cache_file;
  set.dataset = doc.value("dataset", manifest.name);
  if (doc.contains("templates")) {
    if (!doc["templates"].is_array()) throw Error(ErrorCode::ParseError, "templates must be an array");
    for (const json& t : doc["templates"]) {
      if (!t.is_string()) throw Error(ErrorCode::ParseError, "templates entries must be strings");
      set.templates.push_back(t.get<std::string>());
    }
  }
  set.class_names = manifest.class_names;

  std::vector<std::string> missing;
  for (const auto& name : manifest.class_names) {
    auto it = doc["classes"].find(name);
    if (it == doc["classes"].end() || !it->is_array() || it->empty()) {
      missing.push_back(name);
      continue;
    }
    std::vector<std::string> descs;
    for (const json& d : *it) {
      if (!d.is_string()) throw Error(ErrorCode::ParseError, "class '" + name + "': descriptions must be strings");
      if (d.get<std::string>().empty()) throw Error(ErrorCode::ParseError, "class '" + name + "': empty description");
      descs.push_back(d.get<std::string>());
    }
    set.per_class[name] = std::move(descs);
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw Error(ErrorCode::MissingClass, names);
  }
  return set;
}

void save_descriptions(const DescriptionSet& set, const fs::path& path) {
  json classes = json::object();
  for (const auto& name : set.class_names) {
    auto it = set.per_class.find(name);
    classes[name] = it == set.per_class.end() ? std::vector<std::string>{} : it->second;
  }
  const json doc{{"dataset", set.dataset}, {"templates", set.templates}, {"classes", classes}};
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

void add_class_templates(DescriptionSet& set, const std::vector<std::string>& class_templates) {
  for (const auto& t : class_templates) {
    format_template(t, "x");  // placeholder check before mutating
    set.templates.push_back(t);
  }
  for (const auto& name : set.class_names) {
    auto& d = set.per_class[name];
    for (const auto& t : class_templates) d.push_back(format_template(t, name));
  }
}

RateLimitedError::RateLimitedError(DescriptionSet partial, std::vector<FailedRequest> failed,
                                   double retry_after_seconds)
    : Error(ErrorCode::RateLimited, std::to_string(failed.size()) + " request(s) failed, " +
                                        std::to_string(partial.total()) + " description(s) kept"),
      partial_(std::move(partial)),
      failed_(std::move(failed)),
      retry_after_(retry_after_seconds) {}

DescriptionSet generate_descriptions(LLMClient& client, const DatasetManifest& manifest,
                                     const std::vector<std::string>& templates,
                                     const std::optional<fs::path>& cache_path) {
  if (templates.empty()) throw Error(ErrorCode::PlaceholderMissing, "no templates given");
  for (const auto& t : templates) format_template(t, "x");

  DescriptionSet set;
  set.dataset = manifest.name;
  set.templates = templates;
  set.class_names = manifest.class_names;
  set.source = DescriptionSource::llm_client;

  std::vector<FailedRequest> failed;
  double retry_after = 0.0;
  for (const auto& name : manifest.class_names) {
    auto& out = set.per_class[name];
    for (const auto& t : templates) {
      const std::string prompt = format_template(t, name);
      try {
        for (auto& d : client.complete(prompt))
          if (!d.empty()) out.push_back(std::move(d));
      } catch (const RetryableClientError& e) {
        spdlog::warn("description request failed for '{}': {}", name, e.what());
        failed.push_back({name, t, prompt, e.what()});
        retry_after = std::max(retry_after, e.retry_after_seconds());
      }
    }
  }
  if (!failed.empty()) throw RateLimitedError(std::move(set), std::move(failed), retry_after);

  std::vector<std::string> empty;
  for (const auto& name : set.class_names)
    if (set.per_class[name].empty()) empty.push_back(name);
  if (!empty.empty()) throw Error(ErrorCode::MissingClass, "LLM returned nothing for " + empty.front());

  if (cache_path) save_descriptions(set, *cache_path);
  return set;
}

std::vector<std::string> MockLLMClient::complete(const std::string& prompt) {
  ++calls_;
  prompts_.push_back(prompt);
  if (std::find(fail_on_.begin(), fail_on_.end(), calls_) != fail_on_.end())
    throw RetryableClientError("timeout on call " + std::to_string(calls_), 1.0);
  return responder_(prompt);
}

MockLLMClient::Responder MockLLMClient::echo_responder() {
  return [](const std::string& prompt) { return std::vector<std::string>{"desc(" + prompt + ")"}; };
}

HttpClientSettings HttpClientSettings::from_environment() {
  HttpClientSettings s;
  const char* endpoint = std::getenv("NOLA_LLM_ENDPOINT");
  if (endpoint == nullptr || *endpoint == '\0')
    throw Error(ErrorCode::ClientUnavailable, "NOLA_LLM_ENDPOINT is not set");
  s.endpoint = endpoint;
  if (const char* key = std::getenv("NOLA_LLM_KEY")) s.api_key = key;
  return s;
}

}  // namespace nola
