#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "transrank/eval/features.hpp"
#include "transrank/synthdata/dataset.hpp"
#include "transrank/train/pretrain.hpp"
#include "transrank/train/transfer.hpp"

namespace transrank::train {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::uint64_t seed = 0;
  std::string dir;  // empty: generate the splits in memory from the fields below
  std::size_t train = 800;
  std::size_t test = 200;
  GeneratorParams params;

  DatasetSpec spec() const { return {seed, train, test, params}; }
};

/// Everything a run depends on. Sections: top level (seed, workers),
/// [data], [pretrain], [transfer], [eval].
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  DataConfig data;
  PretrainConfig pretrain;
  TransferConfig transfer;
  eval::EvalConfig eval;

  void validate() const;
};

/// `key = value` lines, `#` comments, `[section]` headers. Keys override the
/// values already in `cfg`; unknown sections or keys, duplicates and bad
/// values throw ConfigError naming `origin` and the line.
void apply_config(RunConfig& cfg, std::string_view text, const std::string& origin = "config");
RunConfig parse_config(std::string_view text, const std::string& origin = "config");
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its value; parse_config of the result gives back `cfg`.
std::string format_config(const RunConfig& cfg);
/// The [pretrain] section body alone.
std::string format_pretrain(const PretrainConfig& cfg);

std::uint64_t fnv1a(std::string_view bytes);

/// Loads data.dir/<split> or generates the split from the [data] fields.
Dataset open_split(const DataConfig& data, const std::string& split, std::size_t workers = 1);

}  // namespace transrank::train
