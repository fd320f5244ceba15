#pragma once

// Renders a latency breakdown as markdown, CSV, or JSON. All three carry the
// same numbers (milliseconds, three decimals).

#include "rtvla/costmodel.hpp"

#include <string>

namespace rtvla {

// format: "markdown" | "csv" | "json"; anything else throws invalid_argument.
std::string render_report(const Breakdown& b, const std::string& format);

}  // namespace rtvla
