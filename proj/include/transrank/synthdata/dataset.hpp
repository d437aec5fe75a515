#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "transrank/synthdata/generator.hpp"

namespace transrank {

/// Malformed or truncated video / manifest file.
class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kVideoFormatVersion = 1;

/// Binary video file: "TRKV", u32 version, u32 C,T,H,W (all little-endian),
/// then the bytes in C,T,H,W order.
void write_video(const std::filesystem::path& path, const FrameVolume& frames);
FrameVolume read_video(const std::filesystem::path& path);

struct VideoRecord {
  std::uint64_t id = 0;
  int category = 0;
  double speed = 0;
  std::string path;  // relative to the manifest directory
  bool operator==(const VideoRecord&) const = default;
};

struct Manifest {
  std::string split;  // name of the split directory
  std::vector<VideoRecord> records;
};

inline constexpr const char* kManifestName = "manifest.tsv";

/// Writes `dir/manifest.tsv`, one `id TAB category TAB speed TAB path` line per record.
void write_manifest(const std::filesystem::path& dir, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& dir);

/// Writes every video under dir/videos and the manifest next to them.
Manifest write_dataset(std::span<const SyntheticVideo> videos, const std::filesystem::path& dir);

/// A split held in memory.
struct Dataset {
  Manifest manifest;
  std::vector<FrameVolume> videos;

  std::size_t size() const { return videos.size(); }
  int label(std::size_t i) const { return manifest.records[i].category; }
};

/// Loads the first `limit` records of a split (0: all).
Dataset load_dataset(const std::filesystem::path& dir, std::size_t limit = 0);

struct DatasetSpec {
  std::uint64_t seed = 0;
  std::size_t train = 800;
  std::size_t test = 200;
  GeneratorParams params;
};

/// Generates and writes out/train and out/test. Test ids follow the train ids,
/// so both splits are category balanced and never share a video.
void build_dataset(const std::filesystem::path& out, const DatasetSpec& spec, std::size_t workers = 1);

/// The same split build_dataset would write ("train" or "test"), kept in memory.
/// Record paths are the ones the on-disk split would use.
Dataset generate_split(const DatasetSpec& spec, const std::string& split, std::size_t workers = 1);

}  // namespace transrank
