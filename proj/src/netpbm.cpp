#include "uda/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>
#include <string>

namespace uda {

namespace {

struct Header {
  int width = 0;
  int height = 0;
};

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

// Reads one whitespace-delimited header integer, skipping '#' comments.
int read_header_int(std::istream& is, const std::filesystem::path& path) {
  int c = is.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      is.get();
    } else if (c == '#') {
      std::string comment;
      std::getline(is, comment);
    } else {
      break;
    }
    c = is.peek();
  }
  if (c == EOF || !std::isdigit(c)) fail(path, "malformed header");
  long value = 0;
  while (std::isdigit(is.peek())) {
    value = value * 10 + (is.get() - '0');
    if (value > 1'000'000) fail(path, "header value too large");
  }
  return static_cast<int>(value);
}

Header read_header(std::istream& is, const std::filesystem::path& path, const char* magic) {
  char m[2];
  if (!is.read(m, 2) || m[0] != magic[0] || m[1] != magic[1]) {
    fail(path, std::string("not a binary netpbm file, expected magic ") + magic);
  }
  Header h;
  h.width = read_header_int(is, path);
  h.height = read_header_int(is, path);
  const int maxval = read_header_int(is, path);
  if (h.width < 1 || h.height < 1) fail(path, "invalid dimensions");
  if (maxval != 255) fail(path, "unsupported maxval " + std::to_string(maxval) + " (expected 255)");
  if (!std::isspace(is.get())) fail(path, "malformed header");
  return h;
}

std::vector<std::uint8_t> read_payload(std::istream& is, const std::filesystem::path& path,
                                       std::size_t bytes) {
  std::vector<std::uint8_t> data(bytes);
  if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes))) {
    fail(path, "truncated pixel data");
  }
  return data;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(path, "cannot open for writing");
  return os;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  auto os = open_out(path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size()));
  if (!os) fail(path, "write failed");
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  const Header h = read_header(is, path, "P6");
  auto data = read_payload(is, path, 3 * static_cast<std::size_t>(h.width) * h.height);
  return RgbImage(h.width, h.height, std::move(data));
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  std::vector<std::uint8_t> bytes(labels.labels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (labels.labels[i] < 0 || labels.labels[i] > 255) fail(path, "label outside [0, 255]");
    bytes[i] = static_cast<std::uint8_t>(labels.labels[i]);
  }
  auto os = open_out(path);
  os << "P5\n" << labels.width << " " << labels.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(path, "write failed");
}

LabelMap read_label_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  const Header h = read_header(is, path, "P5");
  const auto bytes = read_payload(is, path, static_cast<std::size_t>(h.width) * h.height);
  LabelMap m{h.width, h.height, std::vector<int>(bytes.begin(), bytes.end())};
  return m;
}

}  // namespace uda
