#pragma once

#include <chrono>
#include <string>
#include <utility>

#include "claimlab/detail/httplib.hpp"
#include <json.hpp>

#include "claimlab/errors.hpp"

namespace claimlab {

// A remote JSON-over-HTTP endpoint (embedding or chat completion).
struct HttpEndpoint {
  std::string url;  // e.g. http://localhost:8000/v1/chat/completions
  std::string model;
  std::string api_key;  // sent as a bearer token when non-empty
  double timeout_seconds = 30.0;
};

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint URL lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// POSTs a JSON body and returns the parsed JSON reply. Any transport failure,
// non-2xx status or unparsable body raises TransportError.
inline nlohmann::json post_json(const HttpEndpoint& endpoint, const nlohmann::json& body) {
  const auto [origin, path] = detail::split_url(endpoint.url);
  httplib::Client client(origin);
  const auto timeout = std::chrono::duration<double>(endpoint.timeout_seconds);
  const auto sec = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout - sec);
  client.set_connection_timeout(sec.count(), usec.count());
  client.set_read_timeout(sec.count(), usec.count());
  client.set_write_timeout(sec.count(), usec.count());
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) throw TransportError(endpoint.url + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw TransportError(endpoint.url + ": HTTP status " + std::to_string(res->status));
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(endpoint.url + ": reply is not JSON (" + e.what() + ")");
  }
}

}  // namespace claimlab
