#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dancer/errors.hpp"
#include "dancer/tensor.hpp"

namespace dancer {

// Container layout: magic "DNCR" | u32 version=1 | u32 tensor count |
// per tensor: u16 name length, UTF-8 name, u8 dtype (0 = float32), u8 rank,
// rank x u32 dims, little-endian row-major float payload | trailing u32 CRC
// (zlib crc32 of all preceding bytes). All integers little-endian.

using NamedTensorList = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const NamedTensorList& tensors) {
  static_assert(sizeof(float) == 4);
  std::set<std::string> names;
  std::vector<std::uint8_t> buf;
  buf.push_back('D');
  buf.push_back('N');
  buf.push_back('C');
  buf.push_back('R');
  detail::put_u32(buf, 1u);  // version
  detail::put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (!names.insert(name).second)
      throw DataError("checkpoint: duplicate tensor name " + name);
    if (name.size() > 0xffff) throw DataError("checkpoint: tensor name too long: " + name);
    detail::put_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    buf.push_back(0);  // dtype float32
    buf.push_back(static_cast<std::uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      detail::put_u32(buf, static_cast<std::uint32_t>(t.dim(i)));
    const std::size_t bytes = t.numel() * 4;
    const std::size_t off = buf.size();
    buf.resize(off + bytes);
    // This build targets little-endian hosts; floats are stored verbatim.
    std::memcpy(buf.data() + off, t.ptr(), bytes);
  }
  const std::uint32_t crc =
      static_cast<std::uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
  detail::put_u32(buf, crc);

  // Atomic publish: write to a sibling temp file, then rename over the target.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot open " + tmp + " for writing");
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("checkpoint: short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline NamedTensorList load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("checkpoint: cannot open " + path);
  const auto size = static_cast<std::size_t>(f.tellg());
  if (size < 16) throw DataError("checkpoint: truncated file " + path);
  std::vector<std::uint8_t> buf(size);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (!f) throw DataError("checkpoint: short read from " + path);

  const std::uint32_t stored_crc = detail::get_u32(buf.data() + size - 4);
  const std::uint32_t actual_crc =
      static_cast<std::uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(size - 4)));
  if (stored_crc != actual_crc)
    throw DataError("checkpoint: CRC mismatch in " + path + " (file corrupted)");

  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > size - 4) throw DataError("checkpoint: truncated record in " + path);
  };
  need(4);
  if (std::memcmp(buf.data(), "DNCR", 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  pos = 4;
  need(8);
  const std::uint32_t version = detail::get_u32(buf.data() + pos);
  pos += 4;
  if (version != 1)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(buf.data() + pos);
  pos += 4;

  NamedTensorList out;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    need(2);
    const std::uint16_t name_len = detail::get_u16(buf.data() + pos);
    pos += 2;
    need(name_len);
    std::string name(reinterpret_cast<const char*>(buf.data() + pos), name_len);
    pos += name_len;
    if (!names.insert(name).second)
      throw DataError("checkpoint: duplicate tensor name " + name);
    need(2);
    const std::uint8_t dtype = buf[pos++];
    if (dtype != 0) throw DataError("checkpoint: unsupported dtype in " + name);
    const std::uint8_t rank = buf[pos++];
    need(static_cast<std::size_t>(rank) * 4);
    Shape shape(rank);
    std::size_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      shape[static_cast<std::size_t>(d)] = static_cast<int>(detail::get_u32(buf.data() + pos));
      pos += 4;
      numel *= static_cast<std::size_t>(shape[static_cast<std::size_t>(d)]);
    }
    need(numel * 4);
    auto t = Tensor::zeros(shape);
    std::memcpy(t.ptr(), buf.data() + pos, numel * 4);
    pos += numel * 4;
    out.emplace_back(std::move(name), std::move(t));
  }
  if (pos != size - 4) throw DataError("checkpoint: trailing bytes in " + path);
  return out;
}

/// Packs a UTF-8 string as a rank-1 tensor (one byte per float) so metadata
/// can ride in the container without a second dtype.
inline Tensor string_to_tensor(const std::string& s) {
  auto t = Tensor::zeros({static_cast<int>(s.size())});
  for (std::size_t i = 0; i < s.size(); ++i)
    t.at(i) = static_cast<float>(static_cast<unsigned char>(s[i]));
  return t;
}

inline std::string tensor_to_string(const Tensor& t) {
  std::string s(t.numel(), '\0');
  for (std::size_t i = 0; i < t.numel(); ++i)
    s[i] = static_cast<char>(static_cast<unsigned char>(t.at(i)));
  return s;
}

}  // namespace dancer
