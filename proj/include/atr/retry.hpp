// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <thread>

#include "atr/error.hpp"

namespace atr {

/// Calls `fn` until it stops throwing TransportError, at most 1 + max_retries times, sleeping
/// backoff * 2^attempt between attempts. Other exceptions propagate immediately.
template <typename Fn>
auto with_retries(int max_retries, std::chrono::milliseconds backoff, Fn&& fn) -> decltype(fn()) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError& e) {
      if (attempt >= max_retries)
        throw TransportError(std::string(e.what()) + " (gave up after " + std::to_string(attempt + 1) +
                             " attempts)");
      if (backoff.count() > 0) std::this_thread::sleep_for(backoff * (1 << std::min(attempt, 10)));
    }
  }
}

}  // namespace atr
