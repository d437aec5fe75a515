#include "transrank/model/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace transrank {

namespace {

constexpr std::array<char, 4> kMagic = {'T', 'R', 'K', 'C'};

template <typename U>
void put(std::ostream& os, U v) {
  std::array<char, sizeof(U)> b{};
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), b.size());
}

template <typename U>
U get(std::istream& is, const std::string& what) {
  std::array<unsigned char, sizeof(U)> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size())) {
    throw CheckpointError("truncated checkpoint while reading " + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
  return v;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), a.size() * sizeof(float)) == 0;
}

}  // namespace

void Checkpoint::set(const std::string& name, Tensor value) {
  if (name.empty() || name.size() > 0xffff) throw std::invalid_argument("bad checkpoint tensor name");
  for (auto& [n, t] : entries_) {
    if (n == name) {
      t = std::move(value);
      return;
    }
  }
  entries_.emplace_back(name, std::move(value));
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& Checkpoint::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (t == nullptr) throw CheckpointError("checkpoint has no tensor '" + name + "'");
  return *t;
}

bool Checkpoint::operator==(const Checkpoint& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (!bitwise_equal(entries_[i].second, other.entries_[i].second)) return false;
  }
  return true;
}

void Checkpoint::set_u64(const std::string& name, std::uint64_t v) {
  Tensor t({4});
  for (std::size_t i = 0; i < 4; ++i) t[i] = static_cast<float>((v >> (16 * i)) & 0xffff);
  set(name, std::move(t));
}

std::uint64_t Checkpoint::get_u64(const std::string& name) const {
  const Tensor& t = at(name);
  if (t.shape() != Shape{4}) throw CheckpointError("'" + name + "' is not an integer record");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const float chunk = t[i];
    if (!(chunk >= 0 && chunk <= 65535) || chunk != static_cast<float>(static_cast<std::uint64_t>(chunk))) {
      throw CheckpointError("'" + name + "' holds a malformed integer chunk");
    }
    v |= static_cast<std::uint64_t>(chunk) << (16 * i);
  }
  return v;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  // Write to a sibling file first so a crash never leaves a torn checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.entries().size()));
    for (const auto& [name, t] : ckpt.entries()) {
      put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      if (t.rank() > 255) throw std::invalid_argument("tensor rank too large for a checkpoint");
      put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
      for (auto d : t.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
      for (float v : t.data()) put<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
    }
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic) {
    throw CheckpointError(path.string() + ": not a TRKC checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(is, "tensor count");
  const auto file_bytes = std::filesystem::file_size(path);
  Checkpoint ckpt;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint16_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError(path.string() + ": truncated tensor name");
    const auto rank = get<std::uint8_t>(is, name + " rank");
    Shape shape;
    for (std::uint8_t r = 0; r < rank; ++r) shape.push_back(get<std::uint32_t>(is, name + " dims"));
    std::uint64_t numel = 1;
    for (auto d : shape) numel *= d;
    if (numel * sizeof(float) > file_bytes) {
      throw CheckpointError(path.string() + ": tensor '" + name + "' is larger than the file");
    }
    Tensor t;
    try {
      t = Tensor(shape);
    } catch (const ShapeError& e) {
      throw CheckpointError(path.string() + ": " + name + ": " + e.what());
    }
    for (auto& v : t.data()) v = std::bit_cast<float>(get<std::uint32_t>(is, name + " values"));
    if (ckpt.contains(name)) throw CheckpointError(path.string() + ": duplicate tensor '" + name + "'");
    ckpt.set(name, std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError(path.string() + ": trailing bytes after the last tensor");
  }
  return ckpt;
}

}  // namespace transrank
