#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace avr::io {

/// Shortest round-trippable decimal form of a double.
std::string format_double(double v);

/// Strict decimal parse; throws DataError naming `what` on failure.
double parse_double(std::string_view text, std::string_view what);
std::uint64_t parse_u64(std::string_view text, std::string_view what);

/// Splits on runs of spaces and tabs.
std::vector<std::string_view> split_ws(std::string_view line);
std::vector<std::string_view> split_tabs(std::string_view line);

/// 64-bit FNV-1a, stable across platforms.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
void write_string(std::ostream& out, std::string_view s);

std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);
std::string read_string(std::istream& in, std::size_t max_len = 1u << 20);

std::string read_file(const std::string& path);
/// Writes atomically enough for our purposes: truncate then write; throws on failure.
void write_file(const std::string& path, std::string_view contents);

}  // namespace avr::io
