#include "transrank/eval/report.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace transrank::eval {

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("cannot format a double");
  return std::string(buf, end);
}

void write_metric_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "metric,value\n";
  for (const auto& [name, value] : rows) {
    if (name.find_first_of(",\n") != std::string::npos) throw std::invalid_argument("metric name '" + name + "' needs quoting");
    os << name << ',' << format_double(value) << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<MetricRow> read_metric_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "metric,value") {
    throw std::runtime_error(path.string() + ": missing metric,value header");
  }
  std::vector<MetricRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    double v = 0;
    const char* first = comma == std::string::npos ? nullptr : line.data() + comma + 1;
    const char* last = line.data() + line.size();
    if (first == nullptr || std::from_chars(first, last, v).ptr != last) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed metric row");
    }
    rows.emplace_back(line.substr(0, comma), v);
  }
  return rows;
}

std::vector<MetricRow> retrieval_rows(const RetrievalReport& report) {
  return {{"R@1", report.r1},
          {"R@5", report.r5},
          {"R@10", report.r10},
          {"queries", static_cast<double>(report.queries)},
          {"excluded", static_cast<double>(report.excluded)}};
}

void write_quantile_csv(const std::filesystem::path& path, std::span<const QuantileRow> rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "rate,q05,q25,q50,q75,q95\n";
  for (const auto& r : rows) {
    os << r.rate << ',' << format_double(r.q05) << ',' << format_double(r.q25) << ',' << format_double(r.q50) << ','
       << format_double(r.q75) << ',' << format_double(r.q95) << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace transrank::eval
