#include "uda/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace uda {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw std::runtime_error("checkpoint " + path.string() + ": truncated file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string printable_magic(const char* m) {
  std::string s;
  for (int i = 0; i < 8; ++i) {
    const auto c = static_cast<unsigned char>(m[i]);
    if (c >= 32 && c < 127) {
      s += static_cast<char>(c);
    } else {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "\\x%02x", c);
      s += buf;
    }
  }
  return s;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const std::vector<Matrix<float>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint " + path.string() + ": cannot open for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_le<std::uint32_t>(os, 2);
    put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.rows()));
    put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) put_le<float>(os, t.data()[i]);
  }
  if (!os) throw std::runtime_error("checkpoint " + path.string() + ": write failed");
}

std::vector<Matrix<float>> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint " + path.string() + ": cannot open");
  char magic[8];
  if (!is.read(magic, sizeof(magic))) {
    throw std::runtime_error("checkpoint " + path.string() + ": truncated file");
  }
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic, expected \"" +
                             printable_magic(kCheckpointMagic) + "\" found \"" +
                             printable_magic(magic) + "\"");
  }
  const auto version = get_le<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported version, expected " +
                             std::to_string(kCheckpointVersion) + " found " +
                             std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(is, path);
  std::vector<Matrix<float>> tensors;
  tensors.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto rank = get_le<std::uint32_t>(is, path);
    if (rank < 1 || rank > 2) {
      throw std::runtime_error("checkpoint " + path.string() + ": unsupported tensor rank " +
                               std::to_string(rank));
    }
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t d = 0; d < rank; ++d) dims[d] = get_le<std::uint64_t>(is, path);
    if (rank == 1) std::swap(dims[0], dims[1]);
    if (dims[0] * dims[1] > (1ull << 28)) {
      throw std::runtime_error("checkpoint " + path.string() + ": implausible tensor size");
    }
    Matrix<float> t(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = get_le<float>(is, path);
    tensors.push_back(std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("checkpoint " + path.string() + ": trailing bytes after tensors");
  }
  return tensors;
}

}  // namespace uda
