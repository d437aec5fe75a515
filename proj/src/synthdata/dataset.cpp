#include "transrank/synthdata/dataset.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "transrank/numerics/parallel.hpp"

namespace transrank {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic = {'T', 'R', 'K', 'V'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is, const fs::path& path) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw DatasetFormatError(path.string() + ": truncated header");
  }
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint32_t narrow(std::size_t v) {
  if (v > 0xffffffffu) throw std::invalid_argument("video dimension does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

std::string format_speed(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return buf.data();
}

template <typename T>
T parse_field(std::string_view field, const std::string& where) {
  T value{};
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw DatasetFormatError(where + ": bad field '" + std::string(field) + "'");
  }
  return value;
}

fs::path video_relpath(std::uint64_t id) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%06llu.trkv", static_cast<unsigned long long>(id));
  return fs::path("videos") / buf.data();
}

}  // namespace

void write_video(const fs::path& path, const FrameVolume& v) {
  if (v.data.size() != v.channels * v.length * v.height * v.width) {
    throw std::invalid_argument("frame volume size does not match its dimensions");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, kVideoFormatVersion);
  for (auto d : {v.channels, v.length, v.height, v.width}) put_u32(os, narrow(d));
  os.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(v.data.size()));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

FrameVolume read_video(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4)) throw DatasetFormatError(path.string() + ": truncated header");
  if (magic != kMagic) throw DatasetFormatError(path.string() + ": not a TRKV video (bad magic)");
  const auto version = get_u32(is, path);
  if (version != kVideoFormatVersion) {
    throw DatasetFormatError(path.string() + ": unsupported format version " + std::to_string(version));
  }
  FrameVolume v;
  v.channels = get_u32(is, path);
  v.length = get_u32(is, path);
  v.height = get_u32(is, path);
  v.width = get_u32(is, path);
  const std::size_t bytes = v.channels * v.length * v.height * v.width;
  if (bytes == 0) throw DatasetFormatError(path.string() + ": empty video");
  v.data.resize(bytes);
  if (!is.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(bytes))) {
    throw DatasetFormatError(path.string() + ": truncated frame data");
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw DatasetFormatError(path.string() + ": trailing bytes after frame data");
  }
  return v;
}

void write_manifest(const fs::path& dir, const Manifest& manifest) {
  std::ofstream os(dir / kManifestName, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (const auto& r : manifest.records) {
    os << r.id << '\t' << r.category << '\t' << format_speed(r.speed) << '\t' << r.path << '\n';
  }
  if (!os) throw std::runtime_error("manifest write failed in " + dir.string());
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path file = dir / kManifestName;
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open " + file.string());
  Manifest m;
  m.split = fs::absolute(dir).lexically_normal().filename().string();
  if (m.split.empty()) m.split = fs::absolute(dir).lexically_normal().parent_path().filename().string();
  std::unordered_set<std::uint64_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = file.string() + ":" + std::to_string(lineno);
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (std::size_t tab; (tab = rest.find('\t')) != std::string_view::npos;) {
      fields.push_back(rest.substr(0, tab));
      rest.remove_prefix(tab + 1);
    }
    fields.push_back(rest);
    if (fields.size() != 4) throw DatasetFormatError(where + ": expected 4 tab-separated fields");
    VideoRecord r;
    r.id = parse_field<std::uint64_t>(fields[0], where);
    r.category = parse_field<int>(fields[1], where);
    r.speed = parse_field<double>(fields[2], where);
    r.path = std::string(fields[3]);
    if (r.category < 0 || r.category >= kMotionCategories) throw DatasetFormatError(where + ": bad category");
    if (!seen.insert(r.id).second) throw DatasetFormatError(where + ": duplicate id " + std::to_string(r.id));
    m.records.push_back(std::move(r));
  }
  return m;
}

Manifest write_dataset(std::span<const SyntheticVideo> videos, const fs::path& dir) {
  fs::create_directories(dir / "videos");
  Manifest m;
  m.split = dir.filename().string();
  for (const auto& v : videos) {
    const fs::path rel = video_relpath(v.id);
    write_video(dir / rel, v.frames);
    m.records.push_back({v.id, static_cast<int>(v.category), v.speed, rel.generic_string()});
  }
  write_manifest(dir, m);
  return m;
}

Dataset load_dataset(const fs::path& dir, std::size_t limit) {
  Dataset d;
  d.manifest = read_manifest(dir);
  if (limit > 0 && d.manifest.records.size() > limit) d.manifest.records.resize(limit);
  d.videos.reserve(d.manifest.records.size());
  for (const auto& r : d.manifest.records) d.videos.push_back(read_video(dir / r.path));
  return d;
}

void build_dataset(const fs::path& out, const DatasetSpec& spec, std::size_t workers) {
  spec.params.validate();
  struct Split {
    const char* name;
    std::uint64_t first;
    std::size_t count;
  };
  for (const Split s : {Split{"train", 0, spec.train}, Split{"test", spec.train, spec.test}}) {
    const fs::path dir = out / s.name;
    fs::create_directories(dir / "videos");
    Manifest m;
    m.split = s.name;
    m.records.resize(s.count);
    // Each video is written as soon as it exists so memory stays flat.
    parallel_for(s.count, workers, [&](std::size_t i) {
      const std::uint64_t id = s.first + i;
      const auto video = generate_video(spec.seed, id, spec.params);
      const fs::path rel = video_relpath(id);
      write_video(dir / rel, video.frames);
      m.records[i] = {id, static_cast<int>(video.category), video.speed, rel.generic_string()};
    });
    write_manifest(dir, m);
  }
}

Dataset generate_split(const DatasetSpec& spec, const std::string& split, std::size_t workers) {
  spec.params.validate();
  if (split != "train" && split != "test") throw std::invalid_argument("unknown split '" + split + "'");
  const std::uint64_t first = split == "train" ? 0 : spec.train;
  const std::size_t count = split == "train" ? spec.train : spec.test;
  Dataset d;
  d.manifest.split = split;
  d.manifest.records.resize(count);
  d.videos.resize(count);
  parallel_for(count, workers, [&](std::size_t i) {
    const std::uint64_t id = first + i;
    auto video = generate_video(spec.seed, id, spec.params);
    d.manifest.records[i] = {id, static_cast<int>(video.category), video.speed, video_relpath(id).generic_string()};
    d.videos[i] = std::move(video.frames);
  });
  return d;
}

}  // namespace transrank
