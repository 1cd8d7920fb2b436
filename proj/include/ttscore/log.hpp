#pragma once

#include <cstddef>
#include <functional>
#include <string>

namespace ttscore {

// Warnings go to stderr unless a sink is installed. The counter lets
// validators assert a warning-free run.
void warn(const std::string& message);
std::size_t warning_count();
void reset_warning_count();

using WarningSink = std::function<void(const std::string&)>;
/// Returns the previous sink. An empty sink restores stderr output.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace ttscore
