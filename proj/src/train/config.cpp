#include "transrank/train/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "transrank/eval/report.hpp"

namespace transrank::train {

namespace {

struct Field {
  std::string key;
  std::function<void(std::string_view)> set;
  std::function<std::string()> get;
};

using Sections = std::vector<std::pair<std::string, std::vector<Field>>>;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename U>
U parse_number(std::string_view text) {
  U v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw std::invalid_argument("'" + std::string(text) + "' is not a valid number");
  }
  return v;
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_bool(std::string_view text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw std::invalid_argument("'" + std::string(text) + "' is not true or false");
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + eval::format_double(v[i]);
  return out;
}

template <typename U>
Field number(std::string key, U& ref) {
  return {std::move(key), [&ref](std::string_view t) { ref = parse_number<U>(t); },
          [&ref] {
            if constexpr (std::is_floating_point_v<U>) {
              return eval::format_double(ref);
            } else {
              return std::to_string(ref);
            }
          }};
}

Field doubles(std::string key, std::vector<double>& ref) {
  return {std::move(key),
          [&ref](std::string_view t) {
            std::vector<double> v;
            for (auto item : split_list(t)) v.push_back(parse_number<double>(item));
            ref = std::move(v);
          },
          [&ref] { return join_doubles(ref); }};
}

Field transforms(std::string key, std::vector<TemporalTransform>& ref) {
  return {std::move(key), [&ref](std::string_view t) { ref = parse_transform_list(t); },
          [&ref] { return format_transform_list(ref); }};
}

std::vector<Field> data_fields(DataConfig& d) {
  auto& p = d.params;
  return {number("seed", d.seed),
          {"dir", [&d](std::string_view t) { d.dir = std::string(t); }, [&d] { return d.dir; }},
          number("train", d.train),
          number("test", d.test),
          number("frames", p.frames),
          number("size", p.size),
          number("speed_min", p.speed_min),
          number("speed_max", p.speed_max),
          number("sprite_min", p.sprite_min),
          number("sprite_max", p.sprite_max),
          number("background_mean", p.background_mean),
          number("noise_sigma", p.noise_sigma),
          number("sprite_level", p.sprite_level),
          number("oscillation_period", p.oscillation_period),
          number("walk_turn_sigma", p.walk_turn_sigma),
          number("trail_length", p.trail_length),
          number("trail_decay", p.trail_decay)};
}

std::vector<Field> pretrain_fields(PretrainConfig& c) {
  return {transforms("transforms", c.transforms),
          {"framework", [&c](std::string_view t) { c.framework = parse_framework(std::string(t)); },
           [&c] { return framework_name(c.framework); }},
          {"head", [&c](std::string_view t) { c.head = parse_head_kind(std::string(t)); },
           [&c] { return head_kind_name(c.head); }},
          number("hidden", c.hidden),
          {"spatial", [&c](std::string_view t) { c.spatial = parse_bool(t); },
           [&c] { return std::string(c.spatial ? "true" : "false"); }},
          number("spatial_weight", c.spatial_weight),
          number("margin", c.margin),
          number("epochs", c.epochs),
          number("batch_videos", c.batch_videos),
          number("lr", c.lr),
          number("momentum", c.momentum),
          number("weight_decay", c.weight_decay),
          number("grad_clip", c.grad_clip),
          number("jitter_min", c.jitter_min),
          number("jitter_max", c.jitter_max),
          number("crop_area_min", c.crop_area_min),
          number("clip_length", c.clip_length),
          number("frame_size", c.frame_size),
          {"channels",
           [&c](std::string_view t) {
             const auto items = split_list(t);
             if (items.size() != kStages) throw std::invalid_argument("channels needs three comma-separated widths");
             for (std::size_t s = 0; s < kStages; ++s) c.channels[s] = parse_number<std::size_t>(items[s]);
           },
           [&c] {
             return std::to_string(c.channels[0]) + "," + std::to_string(c.channels[1]) + "," +
                    std::to_string(c.channels[2]);
           }}};
}

std::vector<Field> transfer_fields(TransferConfig& c) {
  return {{"mode", [&c](std::string_view t) { c.mode = parse_transfer_mode(std::string(t)); },
           [&c] { return transfer_mode_name(c.mode); }},
          number("epochs", c.epochs),
          doubles("lr_grid", c.lr_grid),
          doubles("milestones", c.milestones),
          number("lr_factor", c.lr_factor),
          number("momentum", c.momentum),
          number("weight_decay", c.weight_decay),
          number("dropout", c.dropout),
          number("batch_videos", c.batch_videos)};
}

std::vector<Field> eval_fields(eval::EvalConfig& c) {
  return {number("clips", c.clips),
          number("crop", c.crop),
          transforms("probe_rates", c.probe_rates),
          number("speediness_clips", c.speediness_clips),
          number("probe_hidden", c.probe_hidden),
          number("probe_epochs", c.probe_epochs),
          number("probe_lr", c.probe_lr),
          number("probe_batch", c.probe_batch),
          number("sync_windows", c.sync_windows),
          number("order_windows", c.order_windows),
          number("order_gap_min", c.order_gap_min),
          number("order_gap_max", c.order_gap_max)};
}

Sections sections(RunConfig& cfg) {
  return {{"", {number("seed", cfg.seed), number("workers", cfg.workers)}},
          {"data", data_fields(cfg.data)},
          {"pretrain", pretrain_fields(cfg.pretrain)},
          {"transfer", transfer_fields(cfg.transfer)},
          {"eval", eval_fields(cfg.eval)}};
}

}  // namespace

void RunConfig::validate() const {
  data.params.validate();
  if (data.train == 0 || data.test == 0) throw std::invalid_argument("data splits must not be empty");
  if (workers == 0) throw std::invalid_argument("workers must be positive");
  pretrain.validate();
  transfer.validate();
  eval.validate();
}

void apply_config(RunConfig& cfg, std::string_view text, const std::string& origin) {
  auto table = sections(cfg);
  std::vector<Field>* current = &table.front().second;
  std::string section;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      current = nullptr;
      for (auto& [name, fields] : table) {
        if (name == section && !name.empty()) current = &fields;
      }
      if (current == nullptr) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const std::string qualified = section.empty() ? key : section + "." + key;
    Field* field = nullptr;
    for (auto& f : *current) {
      if (f.key == key) field = &f;
    }
    if (field == nullptr) throw ConfigError(where + "unknown key '" + qualified + "'");
    if (!seen.insert(qualified).second) throw ConfigError(where + "duplicate key '" + qualified + "'");
    try {
      field->set(value);
    } catch (const std::exception& e) {
      throw ConfigError(where + qualified + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

RunConfig parse_config(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  apply_config(cfg, text, origin);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string format_config(const RunConfig& cfg) {
  auto table = sections(const_cast<RunConfig&>(cfg));
  std::string out;
  for (const auto& [name, fields] : table) {
    if (!name.empty()) out += "\n[" + name + "]\n";
    for (const auto& f : fields) out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

std::string format_pretrain(const PretrainConfig& cfg) {
  std::string out;
  for (const auto& f : pretrain_fields(const_cast<PretrainConfig&>(cfg))) out += f.key + " = " + f.get() + "\n";
  return out;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

Dataset open_split(const DataConfig& data, const std::string& split, std::size_t workers) {
  if (!data.dir.empty()) return load_dataset(std::filesystem::path(data.dir) / split);
  return generate_split(data.spec(), split, workers);
}

}  // namespace transrank::train
