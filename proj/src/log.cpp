#include "ttscore/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace ttscore {
namespace {

std::atomic<std::size_t> g_warnings{0};
std::mutex g_sink_mutex;
WarningSink g_sink;

}  // namespace

void warn(const std::string& message) {
  ++g_warnings;
  std::lock_guard lock(g_sink_mutex);
  if (g_sink) {
    g_sink(message);
  } else {
    std::cerr << "ttscore: warning: " << message << '\n';
  }
}

std::size_t warning_count() { return g_warnings.load(); }

void reset_warning_count() { g_warnings = 0; }

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(g_sink_mutex);
  std::swap(g_sink, sink);
  return sink;
}

}  // namespace ttscore
