// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace atr {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix without trailing slash, may be empty
};

/// Throws ConfigError for anything that is not http(s)://host[:port][/path].
UrlParts split_url(const std::string& url);

/// POSTs JSON and returns the body of a 2xx answer. Connection failures, timeouts, 429 and 5xx
/// raise TransportError; other statuses raise ProtocolError.
std::string http_post_json(const std::string& base_url, const std::string& path, const std::string& body,
                           const std::vector<std::pair<std::string, std::string>>& headers,
                           std::chrono::milliseconds timeout);

std::string http_get(const std::string& base_url, const std::string& path, std::chrono::milliseconds timeout);

}  // namespace atr
