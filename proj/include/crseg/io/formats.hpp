#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crseg/image.hpp"
#include "crseg/inpaint.hpp"
#include "crseg/mask_ops.hpp"
#include "crseg/numerics/params.hpp"
#include "crseg/radar.hpp"

// On-disk formats. All binary integers and floats are little-endian.
//
// MaskStack (.maskstack)
//   char[4]  "CRMS"
//   u32      version (1)
//   u32      C, H, W
//   C times: u32 byte length, UTF-8 legend name
//   C*H*W    f32 values, channel-major, each plane row-major
//
// Checkpoint (.ckpt)
//   char[4]  "CRCK"
//   u32      version (1)
//   u32      metadata entry count; each: u32 len, key bytes, u32 len, value bytes
//   u32      parameter count; each (in name order):
//            u32 len, name bytes, u32 rank, u64 extents[rank], f64 values[product]
//
// Radar text (.txt): '#' comment lines, then one record per point:
//   frame_id x y z rcs doppler label      (label -1 when unlabelled)
// Numbers are written with 17 significant digits so they round-trip.
//
// Images are binary PPM (P6, 8 bit). Argmax masks are exported as 8-bit
// palette PNGs for inspection.

namespace crseg::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("unexpected end of data");
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, std::size_t limit = 1 << 20) {
  const auto n = get<std::uint32_t>(in);
  if (n > limit) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError("unexpected end of data in string");
  return s;
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const char* what) {
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0) throw FormatError(std::string("not a ") + what + " file (bad magic)");
}

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = true) {
  std::ofstream out(p, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& p, bool binary = true) {
  std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot read " + p.string());
  return in;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

using detail::format_double;

// --- MaskStack --------------------------------------------------------------

inline void write_maskstack(std::ostream& out, const masks::MaskStack& m) {
  out.write("CRMS", 4);
  detail::put<std::uint32_t>(out, 1);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.channels()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.height()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.width()));
  for (const auto& name : m.legend()) detail::put_string(out, name);
  for (double v : m.values()) detail::put<float>(out, static_cast<float>(v));
}

inline masks::MaskStack read_maskstack(std::istream& in) {
  detail::expect_magic(in, "CRMS", "maskstack");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != 1) throw FormatError("unsupported maskstack version " + std::to_string(version));
  const auto c = detail::get<std::uint32_t>(in);
  const auto h = detail::get<std::uint32_t>(in);
  const auto w = detail::get<std::uint32_t>(in);
  if (c == 0 || c > 256 || static_cast<std::uint64_t>(h) * w > (1u << 26)) throw FormatError("implausible maskstack extents");
  std::vector<std::string> legend;
  for (std::uint32_t i = 0; i < c; ++i) legend.push_back(detail::get_string(in, 4096));
  std::vector<double> values(static_cast<std::size_t>(c) * h * w);
  for (auto& v : values) v = detail::get<float>(in);
  try {
    return masks::MaskStack(h, w, std::move(legend), std::move(values));
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
}

inline void save_maskstack(const std::filesystem::path& p, const masks::MaskStack& m) {
  auto out = detail::open_out(p);
  write_maskstack(out, m);
  if (!out) throw IoError("failed writing " + p.string());
}

inline masks::MaskStack load_maskstack(const std::filesystem::path& p) {
  auto in = detail::open_in(p);
  try {
    return read_maskstack(in);
  } catch (const FormatError& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

// --- radar text ------------------------------------------------------------

inline void write_radar_text(std::ostream& out, const radar::RadarFrame& frame) {
  out << "# crseg radar v1\n# frame_id x y z rcs doppler label\n";
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const auto& p = frame.points[i];
    const long label = frame.labels ? static_cast<long>((*frame.labels)[i]) : -1L;
    out << frame.frame_id << ' ' << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z) << ' '
        << format_double(p.rcs) << ' ' << format_double(p.doppler) << ' ' << label << '\n';
  }
}

inline radar::RadarFrame read_radar_text(std::istream& in, const std::string& frame_id) {
  radar::RadarFrame frame;
  frame.frame_id = frame_id;
  std::vector<std::size_t> labels;
  std::size_t unlabelled = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id;
    radar::RadarPoint p;
    long label = 0;
    if (!(ls >> id >> p.x >> p.y >> p.z >> p.rcs >> p.doppler >> label)) {
      throw FormatError("radar line " + std::to_string(line_no) + ": expected 7 fields");
    }
    if (id != frame_id) throw FormatError("radar line " + std::to_string(line_no) + ": frame id '" + id + "' unexpected");
    if (!p.finite()) throw FormatError("radar line " + std::to_string(line_no) + ": non-finite value");
    if (label < 0) {
      ++unlabelled;
    } else {
      labels.push_back(static_cast<std::size_t>(label));
    }
    frame.points.push_back(p);
  }
  if (unlabelled != 0 && unlabelled != frame.points.size()) throw FormatError("radar file mixes labelled and unlabelled points");
  if (unlabelled == 0) frame.labels = std::move(labels);
  frame.validate();
  return frame;
}

inline void save_radar(const std::filesystem::path& p, const radar::RadarFrame& f) {
  auto out = detail::open_out(p, false);
  write_radar_text(out, f);
}

inline radar::RadarFrame load_radar(const std::filesystem::path& p, const std::string& frame_id) {
  auto in = detail::open_in(p, false);
  try {
    return read_radar_text(in, frame_id);
  } catch (const FormatError& e) {
    throw FormatError(p.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

// --- images --------------------------------------------------------------

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_ppm(std::ostream& out, const Image& img) {
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (double v : img.rgb) out.put(static_cast<char>(to_byte(v)));
}

inline Image read_ppm(std::istream& in) {
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P6" || maxval != 255 || w == 0 || h == 0 || w * h > (1u << 26)) {
    throw FormatError("not an 8-bit binary PPM");
  }
  in.get();
  Image img(h, w);
  for (auto& v : img.rgb) {
    const int c = in.get();
    if (c == EOF) throw FormatError("truncated PPM data");
    v = static_cast<double>(c) / 255.0;
  }
  return img;
}

/// Rounds every channel to the nearest 8-bit level, as a PPM round trip would.
inline Image quantize(Image img) {
  for (auto& v : img.rgb) v = static_cast<double>(to_byte(v)) / 255.0;
  return img;
}

inline void save_ppm(const std::filesystem::path& p, const Image& img) {
  auto out = detail::open_out(p);
  write_ppm(out, img);
}

inline Image load_ppm(const std::filesystem::path& p) {
  auto in = detail::open_in(p);
  try {
    return read_ppm(in);
  } catch (const FormatError& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

namespace detail {

inline void png_chunk(std::ostream& out, const char* type, const std::vector<unsigned char>& data) {
  const auto be32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  be32(static_cast<std::uint32_t>(data.size()));
  out.write(type, 4);
  if (!data.empty()) out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  be32(static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// 8-bit indexed PNG of per-pixel class indices, coloured with the mock
/// inpainter palette.
inline void write_label_png(std::ostream& out, std::span<const std::size_t> labels, std::size_t height, std::size_t width) {
  if (labels.size() != height * width) throw std::invalid_argument("write_label_png: label count mismatch");
  static const unsigned char signature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  out.write(reinterpret_cast<const char*>(signature), 8);
  std::vector<unsigned char> ihdr(13, 0);
  for (int i = 0; i < 4; ++i) {
    ihdr[i] = static_cast<unsigned char>(width >> (24 - 8 * i));
    ihdr[4 + i] = static_cast<unsigned char>(height >> (24 - 8 * i));
  }
  ihdr[8] = 8;  // bit depth
  ihdr[9] = 3;  // palette colour
  detail::png_chunk(out, "IHDR", ihdr);
  std::vector<unsigned char> plte;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    for (double v : inpaint::MockTextureInpainter::base_color(c)) plte.push_back(to_byte(v));
  detail::png_chunk(out, "PLTE", plte);
  std::vector<unsigned char> raw;
  raw.reserve(height * (width + 1));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back(0);
    for (std::size_t x = 0; x < width; ++x) raw.push_back(static_cast<unsigned char>(labels[y * width + x]));
  }
  uLongf size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> z(size);
  if (compress2(z.data(), &size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw IoError("zlib compression failed");
  }
  z.resize(size);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", {});
}

inline void save_label_png(const std::filesystem::path& p, const masks::MaskStack& m) {
  auto out = detail::open_out(p);
  const auto labels = m.argmax();
  write_label_png(out, labels, m.height(), m.width());
}

// --- checkpoints ---------------------------------------------------------

using Metadata = std::vector<std::pair<std::string, std::string>>;

inline void write_checkpoint(std::ostream& out, const numerics::ParameterSet& params, const Metadata& meta) {
  out.write("CRCK", 4);
  detail::put<std::uint32_t>(out, 1);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    detail::put_string(out, k);
    detail::put_string(out, v);
  }
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_string(out, name);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put<std::uint64_t>(out, e);
    for (double v : t.data()) detail::put<double>(out, v);
  }
}

struct Checkpoint {
  numerics::ParameterSet params;
  Metadata meta;

  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    throw FormatError("checkpoint lacks metadata key '" + key + "'");
  }
};

inline Checkpoint read_checkpoint(std::istream& in) {
  detail::expect_magic(in, "CRCK", "checkpoint");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto n_meta = detail::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = detail::get_string(in);
    auto v = detail::get_string(in);
    ck.meta.emplace_back(std::move(k), std::move(v));
  }
  const auto n_params = detail::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    auto name = detail::get_string(in);
    const auto rank = detail::get<std::uint32_t>(in);
    if (rank > 8) throw FormatError("parameter '" + name + "' has implausible rank");
    numerics::Shape shape(rank);
    for (auto& e : shape) e = detail::get<std::uint64_t>(in);
    if (numerics::element_count(shape) > (1u << 28)) throw FormatError("parameter '" + name + "' is implausibly large");
    std::vector<double> values(numerics::element_count(shape));
    for (auto& v : values) v = detail::get<double>(in);
    ck.params.add(name, numerics::Tensor(shape, std::move(values)));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& p, const numerics::ParameterSet& params, const Metadata& meta) {
  auto out = detail::open_out(p);
  write_checkpoint(out, params, meta);
  if (!out) throw IoError("failed writing " + p.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& p) {
  auto in = detail::open_in(p);
  try {
    return read_checkpoint(in);
  } catch (const FormatError& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

}  // namespace crseg::io
