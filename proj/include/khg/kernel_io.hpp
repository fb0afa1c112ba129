#ifndef KHG_KERNEL_IO_HPP
#define KHG_KERNEL_IO_HPP

#include <khg/error.hpp>
#include <khg/grid.hpp>
#include <khg/kernel.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

// KHGK layout (little-endian):
//   "KHGK" | u32 version=1 | u32 n_int | u32 n_bnd | f64 hx | f64 hy
//   | G_vol row-major f64 | G_bnd row-major f64

namespace khg {

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}

inline void put_f64(std::vector<unsigned char>& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(p[k]) << (8 * k);
  return v;
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline constexpr std::uint32_t kKernelFormatVersion = 1;

inline std::vector<unsigned char> encode_kernel(const DiscreteKernel& k) {
  std::vector<unsigned char> out = {'K', 'H', 'G', 'K'};
  const auto n = k.n_int(), m = k.n_bnd();
  out.reserve(static_cast<std::size_t>(32 + 8 * n * (n + m)));
  detail::put_u32(out, kKernelFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(n));
  detail::put_u32(out, static_cast<std::uint32_t>(m));
  detail::put_f64(out, k.hx);
  detail::put_f64(out, k.hy);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) detail::put_f64(out, k.g_vol(i, j));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index b = 0; b < m; ++b) detail::put_f64(out, k.g_bnd(i, b));
  return out;
}

/// Decodes a KHGK blob; `name` is echoed in error messages.
inline DiscreteKernel decode_kernel(const std::vector<unsigned char>& in, const std::string& name) {
  auto bad = [&](const std::string& why) { fail(ErrorKind::format, name + ": " + why); };
  if (in.size() < 32) bad("file too short for a KHGK header");
  if (std::memcmp(in.data(), "KHGK", 4) != 0) bad("bad magic bytes (expected KHGK)");
  if (detail::get_u32(in.data() + 4) != kKernelFormatVersion) bad("unsupported KHGK version");
  const std::uint64_t n = detail::get_u32(in.data() + 8);
  const std::uint64_t m = detail::get_u32(in.data() + 12);
  if (in.size() != 32 + 8 * n * (n + m)) bad("payload size does not match the header");

  DiscreteKernel k;
  k.hx = detail::get_f64(in.data() + 16);
  k.hy = detail::get_f64(in.data() + 24);
  k.g_vol.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  k.g_bnd.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  const unsigned char* p = in.data() + 32;
  for (Eigen::Index i = 0; i < k.g_vol.rows(); ++i)
    for (Eigen::Index j = 0; j < k.g_vol.cols(); ++j, p += 8) k.g_vol(i, j) = detail::get_f64(p);
  for (Eigen::Index i = 0; i < k.g_bnd.rows(); ++i)
    for (Eigen::Index b = 0; b < k.g_bnd.cols(); ++b, p += 8) k.g_bnd(i, b) = detail::get_f64(p);
  return k;
}

inline void write_kernel(const std::string& path, const DiscreteKernel& k) {
  const auto bytes = encode_kernel(k);
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::missing_input, "cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Reads a kernel and checks it against the grid it will be applied on.
inline DiscreteKernel read_kernel(const std::string& path, const Grid& g) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::missing_input, "kernel file " + path + " not found");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  DiscreteKernel k = decode_kernel(bytes, path);
  const bool dims_ok = static_cast<std::size_t>(k.n_int()) == g.n_cells() &&
                       static_cast<std::size_t>(k.n_bnd()) == g.n_boundary();
  const bool spacing_ok = std::abs(k.hx - g.hx()) <= 1e-12 * g.hx() &&
                          std::abs(k.hy - g.hy()) <= 1e-12 * g.hy();
  if (!dims_ok || !spacing_ok)
    fail(ErrorKind::format, path + ": kernel dimensions/spacing do not match the manifest grid");
  k.bnd_weights = g.boundary_weights();
  return k;
}

}  // namespace khg

#endif  // KHG_KERNEL_IO_HPP
