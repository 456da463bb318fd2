#pragma once

// Binary field containers and small CSV helpers. All binary data is
// little-endian regardless of host.

#include <adnorm/errors.hpp>
#include <adnorm/grf.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace adnorm::io {

/// Shortest round-trip decimal (17 significant digits).
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Fixed 6-decimal rendering for summary tables.
inline std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 8);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 4);
}

inline void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t read_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw FormatError("unexpected end of binary file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("unexpected end of binary file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

inline void expect_magic(std::istream& in, const char* magic) {
  const std::size_t n = std::strlen(magic);
  std::string got(n, '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(n)) || got != magic) {
    throw FormatError(std::string("bad magic, expected ") + magic);
  }
}

// ---------------------------------------------------------------------------
// GRFS1: "GRFS1", u8 geometry (0 unit square, 1 sphere), u32 rows, u32 cols,
// f64 radius_km, u64 M, u64 count; then per sample f64 beta, f64 nu, f64 p,
// u64 seed, u8 label, M x f64 values.

inline void write_samples(std::ostream& out, const grf::GridSpec& grid, const std::vector<grf::FieldSample>& samples) {
  out.write("GRFS1", 5);
  out.put(static_cast<char>(grid.is_sphere() ? 1 : 0));
  write_u32(out, static_cast<std::uint32_t>(grid.rows()));
  write_u32(out, static_cast<std::uint32_t>(grid.cols()));
  write_f64(out, grid.is_sphere() ? grid.radius_km() : 0.0);
  write_u64(out, grid.size());
  write_u64(out, samples.size());
  for (const auto& s : samples) {
    if (s.values.size() != grid.size()) throw DimensionError("write_samples: sample size does not match grid");
    write_f64(out, s.meta.beta);
    write_f64(out, s.meta.nu);
    write_f64(out, s.meta.exponent_p);
    write_u64(out, s.meta.seed);
    out.put(static_cast<char>(s.meta.label));
    for (double v : s.values) write_f64(out, v);
  }
}

inline std::vector<grf::FieldSample> read_samples(std::istream& in) {
  expect_magic(in, "GRFS1");
  const int tag = in.get();
  const auto rows = static_cast<int>(read_u32(in));
  const auto cols = static_cast<int>(read_u32(in));
  const double radius = read_f64(in);
  grf::GridSpec grid;
  if (tag == 0) grid = grf::GridSpec::unit_square(rows, cols);
  else if (tag == 1) grid = grf::GridSpec::sphere(rows, cols, radius);
  else throw FormatError("GRFS1: unknown geometry tag");
  const std::uint64_t m = read_u64(in);
  if (m != grid.size()) throw FormatError("GRFS1: M does not match grid dimensions");
  const std::uint64_t count = read_u64(in);
  std::vector<grf::FieldSample> out;
  out.reserve(count);
  for (std::uint64_t s = 0; s < count; ++s) {
    grf::FieldSample fs;
    fs.grid = grid;
    fs.meta.beta = read_f64(in);
    fs.meta.nu = read_f64(in);
    fs.meta.exponent_p = read_f64(in);
    fs.meta.seed = read_u64(in);
    const int label = in.get();
    if (label != 0 && label != 1) throw FormatError("GRFS1: bad label");
    fs.meta.label = static_cast<grf::Label>(label);
    fs.values.resize(m);
    for (auto& v : fs.values) v = read_f64(in);
    out.push_back(std::move(fs));
  }
  return out;
}

inline void save_samples(const std::string& path, const grf::GridSpec& grid, const std::vector<grf::FieldSample>& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  write_samples(out, grid, s);
}

inline std::vector<grf::FieldSample> load_samples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  return read_samples(in);
}

/// One row per sample: metadata columns, then v0..v{M-1}.
inline void write_samples_csv(std::ostream& out, const std::vector<grf::FieldSample>& samples) {
  if (samples.empty()) return;
  const std::size_t m = samples.front().values.size();
  out << "sample_id,beta,nu,p,seed,label";
  for (std::size_t i = 0; i < m; ++i) out << ",v" << i;
  out << "\n";
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& f = samples[s];
    out << s << "," << fmt(f.meta.beta) << "," << fmt(f.meta.nu) << "," << fmt(f.meta.exponent_p) << ","
        << f.meta.seed << "," << static_cast<int>(f.meta.label);
    for (double v : f.values) out << "," << fmt(v);
    out << "\n";
  }
}

/// Splits one CSV line on commas (no quoting).
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("cannot parse '" + s + "' as a number in " + what);
  }
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace adnorm::io
