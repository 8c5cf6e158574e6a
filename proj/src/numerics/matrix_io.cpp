#include "kdd/numerics/matrix_io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "kdd/error.hpp"

namespace kdd {

namespace {

constexpr std::array<char, 4> kMagic = {'D', 'D', 'M', 'X'};

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b.data(), 8);
}

template <std::size_t N>
void get_bytes(std::istream& in, std::array<unsigned char, N>& b, std::size_t offset, const char* what) {
  in.read(reinterpret_cast<char*>(b.data()), N);
  if (in.gcount() != static_cast<std::streamsize>(N))
    throw FormatError(offset + static_cast<std::size_t>(in.gcount()), std::string("truncated ") + what);
}

}  // namespace

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw InvalidInput("format_double failed");
  return std::string(buf.data(), ptr);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw InvalidInput("not a number: '" + std::string(text) + "'");
  return v;
}

std::string to_csv(const Matrix& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

Matrix from_csv(std::string_view text) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const auto field = line.substr(start, comma == std::string_view::npos ? line.size() - start : comma - start);
      values.push_back(parse_double(field));
      ++count;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (rows == 0) cols = count;
    else if (count != cols) throw InvalidShape("ragged CSV at row " + std::to_string(rows));
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

std::size_t binary_size(const Matrix& m) noexcept { return 12 + 8 * m.size(); }

void write_binary(std::ostream& out, const Matrix& m) {
  out.write(kMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) put_f64(out, v);
}

Matrix read_binary(std::istream& in, std::size_t base_offset) {
  std::array<unsigned char, 4> magic{};
  get_bytes(in, magic, base_offset, "matrix magic");
  if (std::memcmp(magic.data(), kMagic.data(), 4) != 0) throw FormatError(base_offset, "bad matrix magic");
  std::array<unsigned char, 4> b{};
  get_bytes(in, b, base_offset + 4, "matrix rows");
  const std::uint32_t rows = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  get_bytes(in, b, base_offset + 8, "matrix cols");
  const std::uint32_t cols = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  std::vector<double> values(static_cast<std::size_t>(rows) * cols);
  std::size_t offset = base_offset + 12;
  for (double& v : values) {
    std::array<unsigned char, 8> d{};
    get_bytes(in, d, offset, "matrix payload");
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | d[static_cast<std::size_t>(i)];
    v = std::bit_cast<double>(bits);
    offset += 8;
  }
  return Matrix(rows, cols, std::move(values));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

void save_csv(const std::filesystem::path& path, const Matrix& m) { write_file(path, to_csv(m)); }
Matrix load_csv(const std::filesystem::path& path) { return from_csv(read_file(path)); }

void save_binary(const std::filesystem::path& path, const Matrix& m) {
  std::ostringstream ss(std::ios::binary);
  write_binary(ss, m);
  write_file(path, ss.str());
}

Matrix load_binary(const std::filesystem::path& path) {
  std::istringstream in(read_file(path), std::ios::binary);
  return read_binary(in);
}

}  // namespace kdd
