#include <httplib.h>

#include <nlohmann/json.hpp>

#include "nola/descriptions.hpp"

using nlohmann::json;

namespace nola {
namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw Error(ErrorCode::ClientUnavailable, "endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

HttpLLMClient::HttpLLMClient(HttpClientSettings settings) : settings_(std::move(settings)) {
  if (settings_.endpoint.empty()) throw Error(ErrorCode::ClientUnavailable, "no endpoint configured");
}

std::vector<std::string> HttpLLMClient::complete(const std::string& prompt) {
  const Endpoint ep = split_url(settings_.endpoint);
  httplib::Client cli(ep.origin);
  cli.set_connection_timeout(settings_.timeout_seconds, 0);
  cli.set_read_timeout(settings_.timeout_seconds, 0);

  httplib::Headers headers;
  if (!settings_.api_key.empty()) headers.emplace("Authorization", "Bearer " + settings_.api_key);
  const json body{{"model", settings_.model},
                  {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
                  {"n", settings_.completions_per_prompt},
                  {"temperature", settings_.temperature}};

  auto res = cli.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::Write)
      throw RetryableClientError("timeout talking to " + ep.origin);
    throw Error(ErrorCode::ClientUnavailable, ep.origin + ": " + httplib::to_string(err));
  }
  if (res->status == 429 || res->status >= 500) {
    double retry_after = 0.0;
    if (res->has_header("Retry-After")) {
      try {
        retry_after = std::stod(res->get_header_value("Retry-After"));
      } catch (...) {
      }
    }
    throw RetryableClientError("HTTP " + std::to_string(res->status), retry_after);
  }
  if (res->status != 200)
    throw Error(ErrorCode::ClientUnavailable, "HTTP " + std::to_string(res->status) + ": " + res->body);

  std::vector<std::string> out;
  try {
    const json doc = json::parse(res->body);
    for (const json& choice : doc.at("choices")) {
      std::string text = trim(choice.at("message").at("content").get<std::string>());
      if (!text.empty()) out.push_back(std::move(text));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed completion response: ") + e.what());
  }
  return out;
}

}  // namespace nola
