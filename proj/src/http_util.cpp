// SPDX-License-Identifier: Apache-2.0
#include "atr/http_util.hpp"

#include <httplib.h>

#include "atr/error.hpp"

namespace atr {

UrlParts split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("URL without scheme: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("unsupported URL scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  UrlParts parts;
  parts.origin = url.substr(0, path_start);
  if (parts.origin.size() <= scheme_end + 3) throw ConfigError("URL without host: " + url);
  if (path_start != std::string::npos) parts.path = url.substr(path_start);
  while (!parts.path.empty() && parts.path.back() == '/') parts.path.pop_back();
  return parts;
}

namespace {

httplib::Client make_client(const UrlParts& parts, std::chrono::milliseconds timeout) {
  httplib::Client cli(parts.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());
  return cli;
}

std::string check(const httplib::Result& res, const std::string& what) {
  if (!res) throw TransportError(what + ": " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw TransportError(what + ": HTTP " + std::to_string(res->status));
  if (res->status < 200 || res->status >= 300)
    throw ProtocolError(what + ": HTTP " + std::to_string(res->status) + " " + res->body.substr(0, 200));
  return res->body;
}

}  // namespace

std::string http_post_json(const std::string& base_url, const std::string& path, const std::string& body,
                           const std::vector<std::pair<std::string, std::string>>& headers,
                           std::chrono::milliseconds timeout) {
  const auto parts = split_url(base_url);
  auto cli = make_client(parts, timeout);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  return check(cli.Post(parts.path + path, h, body, "application/json"), "POST " + base_url + path);
}

std::string http_get(const std::string& base_url, const std::string& path, std::chrono::milliseconds timeout) {
  const auto parts = split_url(base_url);
  auto cli = make_client(parts, timeout);
  return check(cli.Get(parts.path + path), "GET " + base_url + path);
}

}  // namespace atr
