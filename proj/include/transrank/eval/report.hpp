#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "transrank/eval/retrieval.hpp"
#include "transrank/eval/speediness.hpp"

namespace transrank::eval {

using MetricRow = std::pair<std::string, double>;

/// `metric,value` rows, values in shortest round-trip form.
void write_metric_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);
std::vector<MetricRow> read_metric_csv(const std::filesystem::path& path);

std::vector<MetricRow> retrieval_rows(const RetrievalReport& report);

/// `rate,q05,q25,q50,q75,q95`.
void write_quantile_csv(const std::filesystem::path& path, std::span<const QuantileRow> rows);

/// Shortest round-trip representation of a double.
std::string format_double(double v);

}  // namespace transrank::eval
