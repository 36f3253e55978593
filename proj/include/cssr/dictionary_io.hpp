#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "cssr/dictionary.hpp"
#include "cssr/errors.hpp"
#include "cssr/image_io.hpp"

namespace cssr {

// Dictionary file layout, all integers little-endian:
//   "CSSRDICT"  magic, 8 bytes
//   u32 version (1) | u8 class (0 smooth, 1 texture, 2 edge, 255 pooled)
//   u8 scale | u16 patchSize | u32 K | u32 hrDim | u32 lrDim | u64 seed
//   Dh, row-major f64 (hrDim x K) | Dl, row-major f64 (lrDim x K)
//   u32 CRC-32 over every byte after the magic and before the checksum

inline constexpr std::string_view kDictionaryMagic = "CSSRDICT";
inline constexpr std::uint32_t kDictionaryVersion = 1;
inline constexpr std::uint8_t kPooledClassByte = 255;
inline constexpr std::size_t kDictionaryHeaderSize = 8 + 4 + 1 + 1 + 2 + 4 + 4 + 4 + 8;

namespace detail {
template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::string_view in, std::size_t& pos) {
  if (in.size() - pos < sizeof(T)) throw FormatError("dictionary file is truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(v);
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}
}  // namespace detail

inline std::string encode_dictionary(const DictionaryPair& d) {
  std::string out(kDictionaryMagic);
  detail::put_le<std::uint32_t>(out, kDictionaryVersion);
  detail::put_le<std::uint8_t>(out, d.cls ? static_cast<std::uint8_t>(*d.cls) : kPooledClassByte);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(d.scale));
  detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(d.patchSize));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.atoms()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.hr_dim()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.lr_dim()));
  detail::put_le<std::uint64_t>(out, d.meta.seed);
  for (const Matrix* m : {&d.dh, &d.dl})
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>((*m)(r, c)));
  detail::put_le<std::uint32_t>(out, detail::crc32_of(std::string_view(out).substr(kDictionaryMagic.size())));
  return out;
}

inline DictionaryPair decode_dictionary(std::string_view in) {
  if (in.size() < kDictionaryMagic.size() || in.substr(0, kDictionaryMagic.size()) != kDictionaryMagic)
    throw FormatError("not a dictionary file (magic mismatch)");
  std::size_t pos = kDictionaryMagic.size();
  const auto version = detail::get_le<std::uint32_t>(in, pos);
  if (version != kDictionaryVersion) throw FormatError("unsupported dictionary version " + std::to_string(version));
  const auto cls = detail::get_le<std::uint8_t>(in, pos);
  const auto scale = detail::get_le<std::uint8_t>(in, pos);
  const auto patch = detail::get_le<std::uint16_t>(in, pos);
  const auto K = detail::get_le<std::uint32_t>(in, pos);
  const auto hrDim = detail::get_le<std::uint32_t>(in, pos);
  const auto lrDim = detail::get_le<std::uint32_t>(in, pos);
  const auto seed = detail::get_le<std::uint64_t>(in, pos);

  if (cls > 2 && cls != kPooledClassByte) throw FormatError("invalid class byte in dictionary header");
  if (patch == 0 || K == 0) throw FormatError("dictionary header has zero patch size or atom count");
  const std::uint64_t p2 = static_cast<std::uint64_t>(patch) * patch;
  if (hrDim != p2 || (lrDim != p2 && lrDim != 4 * p2))
    throw FormatError("dictionary dimensions are inconsistent with its patch size");
  const std::uint64_t payload = 8ull * (static_cast<std::uint64_t>(hrDim) + lrDim) * K;
  if (in.size() - pos != payload + 4) {
    if (in.size() - pos < payload + 4) throw FormatError("dictionary file is truncated");
    throw FormatError("dictionary file has trailing bytes");
  }
  const std::size_t crc_pos = pos + payload;
  std::size_t tmp = crc_pos;
  const auto stored = detail::get_le<std::uint32_t>(in, tmp);
  if (stored != detail::crc32_of(in.substr(kDictionaryMagic.size(), crc_pos - kDictionaryMagic.size())))
    throw FormatError("dictionary checksum mismatch");

  DictionaryPair d;
  if (cls != kPooledClassByte) d.cls = static_cast<PatchClass>(cls);
  d.scale = scale;
  d.patchSize = patch;
  d.meta.seed = seed;
  d.dh.resize(hrDim, K);
  d.dl.resize(lrDim, K);
  for (Matrix* m : {&d.dh, &d.dl})
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) (*m)(r, c) = std::bit_cast<double>(detail::get_le<std::uint64_t>(in, pos));
  return d;
}

inline void save_dictionary(const DictionaryPair& d, const std::filesystem::path& path) {
  atomic_write(path, encode_dictionary(d));
}

inline DictionaryPair load_dictionary(const std::filesystem::path& path) {
  return decode_dictionary(read_file_bytes(path));
}

}  // namespace cssr
