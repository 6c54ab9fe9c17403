#pragma once

#include <functional>
#include <string>

namespace gma {

/// Warnings go to stderr as "warning: <text>" unless a sink is installed.
void warn(const std::string& message);

/// Replaces the warning sink; pass nullptr to restore stderr. Returns the
/// previous sink.
using WarningSink = std::function<void(const std::string&)>;
WarningSink set_warning_sink(WarningSink sink);

}  // namespace gma
