#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "transrank/eval/speediness.hpp"

namespace transrank::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFormat = 3;

/// Runs one command. args[0] is the program name. Diagnostics go to `err`,
/// progress and summaries to `out`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

/// Box plot of normalized speediness per probe rate: boxes span q25..q75,
/// whiskers q05..q95, a bar marks the median.
std::string speediness_svg(std::span<const eval::QuantileRow> rows);

/// Transform sets of the ablation preset, each run under both frameworks.
std::vector<std::string> ablation_transform_sets();

}  // namespace transrank::cli
