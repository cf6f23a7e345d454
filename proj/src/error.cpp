#include "fedsim/error.hpp"

#include <atomic>
#include <iostream>

namespace fedsim {

namespace {
std::atomic<bool> g_warnings_enabled{true};
}  // namespace

void log_warning(const std::string& message) {
  if (g_warnings_enabled.load(std::memory_order_relaxed)) {
    std::clog << "warning: " << message << '\n';
  }
}

void set_warnings_enabled(bool enabled) {
  g_warnings_enabled.store(enabled, std::memory_order_relaxed);
}

}  // namespace fedsim
