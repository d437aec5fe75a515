#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "transrank/numerics/tensor.hpp"

namespace transrank {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Ordered named tensors. Order is preserved through save/load.
class Checkpoint {
 public:
  void set(const std::string& name, Tensor value);
  const Tensor* find(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  bool operator==(const Checkpoint& other) const;

  // Integers up to 2^64 stored losslessly as four 16-bit chunks.
  void set_u64(const std::string& name, std::uint64_t v);
  std::uint64_t get_u64(const std::string& name) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// "TRKC", u32 version, u32 count, then per tensor: u16 name length, name,
/// u8 rank, u32 dims, f32 values. All little-endian.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace transrank
