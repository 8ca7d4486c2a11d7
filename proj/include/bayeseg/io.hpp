#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "bayeseg/grid.hpp"
#include "bayeseg/model.hpp"
#include "bayeseg/pipeline.hpp"

namespace bayeseg {

// ---------------------------------------------------------------------------
// Raw float interchange format: magic "BSG1", u32 width, u32 height, then
// width*height little-endian f32.  This is the lossless path; PNG output is
// for human inspection only.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("raw read: truncated file");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  write_u32(os, u);
}

inline float read_f32(std::istream& is) {
  const std::uint32_t u = read_u32(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

inline void write_raw(const std::string& path, const ImageGrid& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write("BSG1", 4);
  detail::write_u32(os, static_cast<std::uint32_t>(g.width));
  detail::write_u32(os, static_cast<std::uint32_t>(g.height));
  for (double v : g.data) detail::write_f32(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline ImageGrid read_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "BSG1", 4) != 0)
    throw std::runtime_error("bad magic in raw file: " + path);
  const std::uint32_t w = detail::read_u32(is);
  const std::uint32_t h = detail::read_u32(is);
  if (w == 0 || h == 0 || w > (1u << 20) || h > (1u << 20))
    throw std::runtime_error("bad dimensions in raw file: " + path);
  ImageGrid g(static_cast<int>(w), static_cast<int>(h));
  for (double& v : g.data) v = detail::read_f32(is);
  return g;
}

// ---------------------------------------------------------------------------
// Grayscale PNG, 8- or 16-bit.  Intensities are scaled to [0,1] on read.

inline ImageGrid read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open: " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("png decode failed: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("png is not grayscale: " + path);
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_swap(png);  // little-endian rows below
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> row(rowbytes);

  ImageGrid g(w, h);
  const double scale = depth == 16 ? 65535.0 : 255.0;
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      if (depth == 16) {
        const unsigned v = row[2 * x] | (row[2 * x + 1] << 8);
        g.at(x, y) = v / scale;
      } else {
        g.at(x, y) = row[x] / scale;
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return g;
}

namespace detail {

inline void write_png_rows(const std::string& path, int w, int h, int depth,
                           const std::vector<std::vector<unsigned char>>& rows) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open for write: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("png encode failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (const auto& r : rows)
    png_write_row(png, const_cast<png_bytep>(r.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace detail

/// 16-bit grayscale PNG, min-max scaled; the scale and offset go into a
/// sidecar text file so values can be recovered approximately.
inline void write_png16(const std::string& path, const ImageGrid& g) {
  double lo = g.data[0], hi = g.data[0];
  for (double v : g.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi > lo ? hi - lo : 1.0;
  std::vector<std::vector<unsigned char>> rows(
      g.height, std::vector<unsigned char>(2 * g.width));
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const unsigned v = static_cast<unsigned>(
          std::lround((g.at(x, y) - lo) / range * 65535.0));
      rows[y][2 * x] = static_cast<unsigned char>((v >> 8) & 0xff);  // PNG is big-endian
      rows[y][2 * x + 1] = static_cast<unsigned char>(v & 0xff);
    }
  detail::write_png_rows(path, g.width, g.height, 16, rows);
  std::ofstream side(path + ".scale.txt");
  side << "min = " << lo << "\nmax = " << hi << "\n";
}

/// 8-bit PNG whose pixel values are class ids directly (K <= 256).
inline void write_png_labels(const std::string& path, const ImageGrid& g) {
  std::vector<std::vector<unsigned char>> rows(
      g.height, std::vector<unsigned char>(g.width));
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const int v = static_cast<int>(g.at(x, y));
      if (v < 0 || v > 255)
        throw std::domain_error("write_png_labels: class id outside [0,255]");
      rows[y][x] = static_cast<unsigned char>(v);
    }
  detail::write_png_rows(path, g.width, g.height, 8, rows);
}

/// Reads a label PNG: 8-bit pixel values are class ids (no scaling).
inline ImageGrid read_png_labels(const std::string& path) {
  ImageGrid g = read_png(path);
  for (double& v : g.data) v = std::round(v * 255.0);
  return g;
}

enum class MapEncoding { kRaw, kPng16, kPngLabels };

inline void write_map(const std::string& path, const ImageGrid& g,
                      MapEncoding enc) {
  switch (enc) {
    case MapEncoding::kRaw: write_raw(path, g); break;
    case MapEncoding::kPng16: write_png16(path, g); break;
    case MapEncoding::kPngLabels: write_png_labels(path, g); break;
  }
}

/// Dispatch on extension: .png via libpng (scaled to [0,1]), anything else
/// as the raw "BSG1" format.
inline ImageGrid read_image(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0)
    return read_png(path);
  return read_raw(path);
}

// ---------------------------------------------------------------------------
// Variational state container: magic "BVS1", u32 version, u32 width/height/K,
// u32 field count, then per field a name (u32 length + bytes), u32 channel
// count, and the channel data as little-endian f32.

inline void serialize_state(const std::string& path,
                            const VariationalState& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write("BVS1", 4);
  detail::write_u32(os, 1);  // version
  detail::write_u32(os, static_cast<std::uint32_t>(s.width()));
  detail::write_u32(os, static_cast<std::uint32_t>(s.height()));
  detail::write_u32(os, static_cast<std::uint32_t>(s.K()));

  auto write_named = [&os](const std::string& name,
                           const std::vector<ImageGrid>& grids) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(grids.size()));
    for (const auto& g : grids)
      for (double v : g.data) detail::write_f32(os, static_cast<float>(v));
  };

  // The pi vectors ride along as K x 1 grids.
  ImageGrid pi_alpha(s.K(), 1), pi_beta(s.K(), 1);
  for (int k = 0; k < s.K(); ++k) {
    pi_alpha[k] = s.q_pi.alpha[k];
    pi_beta[k] = s.q_pi.beta[k];
  }

  detail::write_u32(os, 14);  // field count
  write_named("x.mean", s.q_x.mean);
  write_named("x.log_variance", s.q_x.log_variance);
  write_named("m.mean", s.q_m.mean);
  write_named("m.log_variance", s.q_m.log_variance);
  write_named("z.mean", s.q_z.mean);
  write_named("z.log_variance", s.q_z.log_variance);
  write_named("rho.shape", s.q_rho.shape);
  write_named("rho.rate", s.q_rho.rate);
  write_named("upsilon.shape", s.q_upsilon.shape);
  write_named("upsilon.rate", s.q_upsilon.rate);
  write_named("omega.shape", s.q_omega.shape);
  write_named("omega.rate", s.q_omega.rate);
  write_named("pi.alpha", {pi_alpha});
  write_named("pi.beta", {pi_beta});
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline VariationalState deserialize_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "BVS1", 4) != 0)
    throw std::runtime_error("bad magic in state file: " + path);
  if (detail::read_u32(is) != 1)
    throw std::runtime_error("unsupported state file version: " + path);
  const int w = static_cast<int>(detail::read_u32(is));
  const int h = static_cast<int>(detail::read_u32(is));
  const int K = static_cast<int>(detail::read_u32(is));
  if (w <= 0 || h <= 0 || K <= 0)
    throw std::runtime_error("bad header in state file: " + path);
  const std::uint32_t field_count = detail::read_u32(is);

  std::map<std::string, std::vector<ImageGrid>> fields;
  for (std::uint32_t f = 0; f < field_count; ++f) {
    const std::uint32_t name_len = detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t channels = detail::read_u32(is);
    const bool is_pi = name.rfind("pi.", 0) == 0;
    std::vector<ImageGrid> grids(channels,
                                 is_pi ? ImageGrid(K, 1) : ImageGrid(w, h));
    for (auto& g : grids)
      for (double& v : g.data) v = detail::read_f32(is);
    if (!is) throw std::runtime_error("truncated state file: " + path);
    fields[name] = std::move(grids);
  }

  auto take = [&fields, &path](const std::string& name) {
    auto it = fields.find(name);
    if (it == fields.end())
      throw std::runtime_error("state file missing field '" + name + "': " + path);
    return std::move(it->second);
  };

  VariationalState s;
  s.q_x.mean = take("x.mean");
  s.q_x.log_variance = take("x.log_variance");
  s.q_m.mean = take("m.mean");
  s.q_m.log_variance = take("m.log_variance");
  s.q_z.mean = take("z.mean");
  s.q_z.log_variance = take("z.log_variance");
  s.q_rho.shape = take("rho.shape");
  s.q_rho.rate = take("rho.rate");
  s.q_upsilon.shape = take("upsilon.shape");
  s.q_upsilon.rate = take("upsilon.rate");
  s.q_omega.shape = take("omega.shape");
  s.q_omega.rate = take("omega.rate");
  const ImageGrid pa = take("pi.alpha")[0];
  const ImageGrid pb = take("pi.beta")[0];
  s.q_pi.alpha.assign(pa.data.begin(), pa.data.end());
  s.q_pi.beta.assign(pb.data.begin(), pb.data.end());
  return s;
}

}  // namespace bayeseg
