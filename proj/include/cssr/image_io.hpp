#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include "cssr/errors.hpp"
#include "cssr/image.hpp"

namespace cssr {

/// Writes bytes to path via a sibling temporary file and a rename, so readers
/// never observe a partially written file.
inline void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint8_t quantize8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

inline std::uint16_t quantize16(double v) {
  return static_cast<std::uint16_t>(std::clamp(std::lround(v * 257.0), 0L, 65535L));
}

// --- PGM (binary P5) --------------------------------------------------------

namespace detail {
inline long pgm_header_int(std::string_view data, std::size_t& pos) {
  for (;;) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos < data.size() && data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t start = pos;
  while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) ++pos;
  if (start == pos) throw FormatError("malformed PGM header");
  return std::stol(std::string(data.substr(start, pos - start)));
}
}  // namespace detail

/// Decodes P5 data. 16-bit samples are rescaled onto 0-255.
inline Image decode_pgm(std::string_view data) {
  if (data.size() < 2 || data[0] != 'P' || data[1] != '5') throw FormatError("not a binary PGM (P5) file");
  std::size_t pos = 2;
  const long w = detail::pgm_header_int(data, pos);
  const long h = detail::pgm_header_int(data, pos);
  const long maxval = detail::pgm_header_int(data, pos);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw FormatError("PGM header values out of range");
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos])))
    throw FormatError("malformed PGM header");
  ++pos;
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (data.size() - pos < n * bytes_per) throw FormatError("truncated PGM pixel data");
  std::vector<double> px(n);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data()) + pos;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bytes_per == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
    px[i] = maxval == 255 ? static_cast<double>(v) : v * 255.0 / static_cast<double>(maxval);
  }
  return Image(static_cast<int>(w), static_cast<int>(h), std::move(px));
}

inline std::string encode_pgm(const Image& img, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("PGM bit depth must be 8 or 16");
  std::ostringstream out;
  out << "P5\n" << img.width() << ' ' << img.height() << '\n' << (bit_depth == 8 ? 255 : 65535) << '\n';
  std::string bytes = out.str();
  for (double v : img.pixels()) {
    if (bit_depth == 8) {
      bytes.push_back(static_cast<char>(quantize8(v)));
    } else {
      const std::uint16_t q = quantize16(v);
      bytes.push_back(static_cast<char>(q >> 8));
      bytes.push_back(static_cast<char>(q & 0xff));
    }
  }
  return bytes;
}

inline Image read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file_bytes(path)); }

inline void write_pgm(const std::filesystem::path& path, const Image& img, int bit_depth = 8) {
  atomic_write(path, encode_pgm(img, bit_depth));
}

// --- PNG (libpng simplified API) ----------------------------------------------

namespace detail {
struct PngImage {
  png_image img{};
  PngImage() {
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

inline std::string png_bytes(const png_image& templ, const void* buffer) {
  png_image img = templ;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, buffer, 0, nullptr))
    throw Error(std::string("PNG encode failed: ") + img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, buffer, 0, nullptr))
    throw Error(std::string("PNG encode failed: ") + img.message);
  out.resize(size);
  return out;
}
}  // namespace detail

/// Reads any PNG as grayscale 0-255 (color inputs are converted to luma by
/// libpng; 16-bit inputs are rescaled).
inline Image read_png(const std::filesystem::path& path) {
  const std::string data = read_file_bytes(path);
  detail::PngImage png;
  if (!png_image_begin_read_from_memory(&png.img, data.data(), data.size()))
    throw FormatError("cannot decode PNG " + path.string() + ": " + png.img.message);
  const bool wide = (png.img.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  png.img.format = wide ? PNG_FORMAT_LINEAR_Y : PNG_FORMAT_GRAY;
  const int w = static_cast<int>(png.img.width), h = static_cast<int>(png.img.height);
  std::vector<double> px(static_cast<std::size_t>(w) * h);
  if (wide) {
    std::vector<std::uint16_t> buf(px.size());
    if (!png_image_finish_read(&png.img, nullptr, buf.data(), 0, nullptr))
      throw FormatError("cannot decode PNG " + path.string() + ": " + png.img.message);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = buf[i] / 257.0;
  } else {
    std::vector<std::uint8_t> buf(px.size());
    if (!png_image_finish_read(&png.img, nullptr, buf.data(), 0, nullptr))
      throw FormatError("cannot decode PNG " + path.string() + ": " + png.img.message);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = buf[i];
  }
  return Image(w, h, std::move(px));
}

inline bool png_is_color(const std::filesystem::path& path) {
  const std::string data = read_file_bytes(path);
  detail::PngImage png;
  if (!png_image_begin_read_from_memory(&png.img, data.data(), data.size()))
    throw FormatError("cannot decode PNG " + path.string() + ": " + png.img.message);
  return (png.img.format & PNG_FORMAT_FLAG_COLOR) != 0;
}

inline ColorImage read_png_color(const std::filesystem::path& path) {
  const std::string data = read_file_bytes(path);
  detail::PngImage png;
  if (!png_image_begin_read_from_memory(&png.img, data.data(), data.size()))
    throw FormatError("cannot decode PNG " + path.string() + ": " + png.img.message);
  png.img.format = PNG_FORMAT_RGB;
  const int w = static_cast<int>(png.img.width), h = static_cast<int>(png.img.height);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * 3);
  if (!png_image_finish_read(&png.img, nullptr, buf.data(), 0, nullptr))
    throw FormatError("cannot decode PNG " + path.string() + ": " + png.img.message);
  ColorImage out{Image(w, h), Image(w, h), Image(w, h)};
  for (std::size_t i = 0; i < out.r.size(); ++i) {
    out.r.pixels()[i] = buf[3 * i];
    out.g.pixels()[i] = buf[3 * i + 1];
    out.b.pixels()[i] = buf[3 * i + 2];
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("PNG bit depth must be 8 or 16");
  png_image templ{};
  templ.version = PNG_IMAGE_VERSION;
  templ.width = static_cast<png_uint_32>(img.width());
  templ.height = static_cast<png_uint_32>(img.height());
  if (bit_depth == 8) {
    templ.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(img.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = quantize8(img.pixels()[i]);
    atomic_write(path, detail::png_bytes(templ, buf.data()));
  } else {
    templ.format = PNG_FORMAT_LINEAR_Y;
    std::vector<std::uint16_t> buf(img.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = quantize16(img.pixels()[i]);
    atomic_write(path, detail::png_bytes(templ, buf.data()));
  }
}

inline void write_png_color(const std::filesystem::path& path, const ColorImage& rgb) {
  check_same_shape(rgb.r, rgb.g, rgb.b);
  png_image templ{};
  templ.version = PNG_IMAGE_VERSION;
  templ.width = static_cast<png_uint_32>(rgb.r.width());
  templ.height = static_cast<png_uint_32>(rgb.r.height());
  templ.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(rgb.r.size() * 3);
  for (std::size_t i = 0; i < rgb.r.size(); ++i) {
    buf[3 * i] = quantize8(rgb.r.pixels()[i]);
    buf[3 * i + 1] = quantize8(rgb.g.pixels()[i]);
    buf[3 * i + 2] = quantize8(rgb.b.pixels()[i]);
  }
  atomic_write(path, detail::png_bytes(templ, buf.data()));
}

inline bool has_extension(const std::filesystem::path& path, std::string_view ext) {
  std::string e = path.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

/// Dispatches on extension: .png, otherwise PGM.
inline Image read_image(const std::filesystem::path& path) {
  return has_extension(path, ".png") ? read_png(path) : read_pgm(path);
}

inline void write_image(const std::filesystem::path& path, const Image& img, int bit_depth = 8) {
  if (has_extension(path, ".png"))
    write_png(path, img, bit_depth);
  else
    write_pgm(path, img, bit_depth);
}

}  // namespace cssr
