#pragma once

#include <chrono>
#include <thread>

#include "pathaudit/error.hpp"

namespace pathaudit::services {

template <typename Fn>
auto with_retries(int retries, int backoff_ms, Fn&& fn) -> decltype(fn()) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError&) {
      if (attempt >= retries) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms << attempt));
    }
  }
}

}  // namespace pathaudit::services
