#include "avr/io_util.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "avr/error.hpp"

namespace avr::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

template <typename T>
void write_raw(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) {
    throw DataError("unexpected end of binary stream");
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::string_view what) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw DataError("invalid number '" + std::string(text) + "' for " + std::string(what));
  }
  return v;
}

std::uint64_t parse_u64(std::string_view text, std::string_view what) {
  std::uint64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw DataError("invalid count '" + std::string(text) + "' for " + std::string(what));
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

void write_u8(std::ostream& out, std::uint8_t v) { write_raw(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { write_raw(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_raw(out, v); }
void write_f32(std::ostream& out, float v) { write_raw(out, v); }
void write_f64(std::ostream& out, double v) { write_raw(out, v); }

void write_string(std::ostream& out, std::string_view s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint8_t read_u8(std::istream& in) { return read_raw<std::uint8_t>(in); }
std::uint32_t read_u32(std::istream& in) { return read_raw<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_raw<std::uint64_t>(in); }
float read_f32(std::istream& in) { return read_raw<float>(in); }
double read_f64(std::istream& in) { return read_raw<double>(in); }

std::string read_string(std::istream& in, std::size_t max_len) {
  const auto len = read_u32(in);
  if (len > max_len) {
    throw DataError("string length " + std::to_string(len) + " exceeds limit");
  }
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) {
    throw DataError("unexpected end of binary stream");
  }
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open '" + path + "' for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot open '" + path + "' for writing");
  }
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) {
    throw DataError("write to '" + path + "' failed");
  }
}

}  // namespace avr::io
