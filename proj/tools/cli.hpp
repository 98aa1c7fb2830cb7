#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace seqread::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Runs the command line; returns the process exit code (0 success, 1
// runtime or data error, 2 usage or configuration error).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// "start:stop:step", inclusive of stop within half a step, or a single value.
std::vector<double> parse_grid(const std::string& text);

// FNV-1a 64 of the compact JSON dump, as 16 hex digits.
std::string config_digest(const nlohmann::json& config);

}  // namespace seqread::cli
