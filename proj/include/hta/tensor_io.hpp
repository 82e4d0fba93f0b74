#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "hta/tensor.hpp"

// Raw tensor file format (used repo-wide): magic "TSR1", u32 little-endian
// rank, rank x u32 little-endian extents, then the row-major f64
// little-endian payload. Lossless for arbitrary tensors.

namespace hta {

static_assert(std::endian::native == std::endian::little,
              "tensor file i/o assumes a little-endian host");

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw std::runtime_error(std::string("tensor read: truncated ") + what);
  return v;
}

}  // namespace detail

inline void write_tsr(std::ostream& os, const Tensor& t) {
  os.write("TSR1", 4);
  detail::write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
  for (std::size_t e : t.shape())
    detail::write_u32(os, static_cast<std::uint32_t>(e));
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw std::runtime_error("tensor write failed");
}

inline Tensor read_tsr(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TSR1", 4) != 0)
    throw std::runtime_error("tensor read: bad magic, not a TSR1 file");
  const std::uint32_t rank = detail::read_u32(is, "rank");
  if (rank == 0 || rank > 32)
    throw std::runtime_error("tensor read: implausible rank " +
                             std::to_string(rank));
  Shape shape(rank);
  std::size_t total = 1;
  for (std::uint32_t r = 0; r < rank; ++r) {
    const std::uint32_t e = detail::read_u32(is, "extent");
    if (e == 0) throw std::runtime_error("tensor read: zero extent");
    shape[r] = e;
    total *= e;
    if (total > (std::size_t{1} << 31))
      throw std::runtime_error("tensor read: implausible element count");
  }
  std::vector<double> data(total);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(total * sizeof(double)));
  if (!is) throw std::runtime_error("tensor read: truncated payload");
  return Tensor(std::move(shape), std::move(data));
}

inline void write_tsr(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  write_tsr(os, t);
}

inline Tensor read_tsr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  return read_tsr(is);
}

}  // namespace hta
