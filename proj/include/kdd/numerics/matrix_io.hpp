#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "kdd/numerics/matrix.hpp"

namespace kdd {

// Shortest round-trip decimal form, '.' separator regardless of locale.
std::string format_double(double v);
double parse_double(std::string_view text);

// CSV: one row per line, no header.
std::string to_csv(const Matrix& m);
Matrix from_csv(std::string_view text);

// Binary: "DDMX", u32 rows, u32 cols, little-endian f64 payload.
void write_binary(std::ostream& out, const Matrix& m);
// Reads one matrix; base_offset is added to byte offsets in FormatError.
Matrix read_binary(std::istream& in, std::size_t base_offset = 0);
std::size_t binary_size(const Matrix& m) noexcept;

void save_csv(const std::filesystem::path& path, const Matrix& m);
Matrix load_csv(const std::filesystem::path& path);
void save_binary(const std::filesystem::path& path, const Matrix& m);
Matrix load_binary(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace kdd
