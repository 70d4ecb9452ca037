#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "orchard/errors.hpp"
#include "orchard/tensor.hpp"

#ifdef ORCHARD_HAS_JPEG
#include <csetjmp>
#include <jpeglib.h>
#endif
#ifdef ORCHARD_HAS_PNG
#include <png.h>
#endif

namespace orchard::data {

// Planar RGB raster, values in [0,1], channel-major (R plane, G plane, B plane).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> planes;  // size 3 * height * width

  float at(std::size_t channel, std::size_t y, std::size_t x) const {
    return planes[(channel * height + y) * width + x];
  }
};

// --- PPM codec (always available; keeps tests hermetic) ------------------------

namespace detail {

inline void skip_ppm_space(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
}

inline std::size_t read_ppm_int(const std::string& bytes, std::size_t& pos, const std::string& path) {
  skip_ppm_space(bytes, pos);
  if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    throw decode_error("ppm: malformed header in " + path);
  }
  std::size_t v = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    ++pos;
  }
  return v;
}

}  // namespace detail

inline Image decode_ppm(const std::string& bytes, const std::string& path) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '3')) {
    throw decode_error("ppm: not a P6/P3 file: " + path);
  }
  const bool binary = bytes[1] == '6';
  std::size_t pos = 2;
  const std::size_t w = detail::read_ppm_int(bytes, pos, path);
  const std::size_t h = detail::read_ppm_int(bytes, pos, path);
  const std::size_t maxval = detail::read_ppm_int(bytes, pos, path);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw decode_error("ppm: unsupported dimensions or maxval in " + path);
  }

  Image img;
  img.width = w;
  img.height = h;
  img.planes.assign(3 * w * h, 0.f);
  const float denom = static_cast<float>(maxval);

  if (binary) {
    ++pos;  // single whitespace byte after maxval
    if (bytes.size() - pos < 3 * w * h) throw decode_error("ppm: truncated pixel data in " + path);
    for (std::size_t i = 0; i < w * h; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        img.planes[c * w * h + i] =
            static_cast<float>(static_cast<unsigned char>(bytes[pos + i * 3 + c])) / denom;
      }
  } else {
    for (std::size_t i = 0; i < w * h; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t v = detail::read_ppm_int(bytes, pos, path);
        if (v > maxval) throw decode_error("ppm: sample exceeds maxval in " + path);
        img.planes[c * w * h + i] = static_cast<float>(v) / denom;
      }
  }
  return img;
}

inline void encode_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("ppm: cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  const std::size_t n = img.width * img.height;
  std::vector<unsigned char> row(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::min(1.0f, std::max(0.0f, img.planes[c * n + i]));
      row[i * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
}

// --- optional compressed codecs -------------------------------------------------

#ifdef ORCHARD_HAS_JPEG
namespace detail {
struct JpegErrorTrap {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};
inline void jpeg_error_exit_trap(j_common_ptr cinfo) {
  auto* trap = reinterpret_cast<JpegErrorTrap*>(cinfo->err);
  std::longjmp(trap->jump, 1);
}
}  // namespace detail

inline Image decode_jpeg(const std::string& bytes, const std::string& path) {
  jpeg_decompress_struct cinfo;
  detail::JpegErrorTrap trap;
  cinfo.err = jpeg_std_error(&trap.mgr);
  trap.mgr.error_exit = detail::jpeg_error_exit_trap;
  std::vector<unsigned char> rowbuf;
  Image img;
  if (setjmp(trap.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw decode_error("jpeg: failed to decode " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = cinfo.output_width;
  img.height = cinfo.output_height;
  img.planes.assign(3 * img.width * img.height, 0.f);
  rowbuf.resize(img.width * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* rows[1] = {rowbuf.data()};
    const std::size_t y = cinfo.output_scanline;
    jpeg_read_scanlines(&cinfo, rows, 1);
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        img.planes[(c * img.height + y) * img.width + x] = rowbuf[x * 3 + c] / 255.0f;
      }
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}
#endif

#ifdef ORCHARD_HAS_PNG
inline Image decode_png(const std::string& bytes, const std::string& path) {
  png_image pimg;
  std::memset(&pimg, 0, sizeof(pimg));
  pimg.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pimg, bytes.data(), bytes.size())) {
    throw decode_error("png: failed to parse " + path);
  }
  pimg.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(pimg));
  if (!png_image_finish_read(&pimg, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&pimg);
    throw decode_error("png: failed to decode " + path);
  }
  Image img;
  img.width = pimg.width;
  img.height = pimg.height;
  img.planes.assign(3 * img.width * img.height, 0.f);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        img.planes[(c * img.height + y) * img.width + x] =
            buf[(y * img.width + x) * 3 + c] / 255.0f;
      }
  png_image_free(&pimg);
  return img;
}
#endif

// Decode boundary: dispatches on magic bytes, not file extension.
inline Image decode_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw decode_error("image: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '3')) {
    return decode_ppm(bytes, path);
  }
  if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
      static_cast<unsigned char>(bytes[1]) == 0xD8) {
#ifdef ORCHARD_HAS_JPEG
    return decode_jpeg(bytes, path);
#else
    throw decode_error("image: JPEG support not built in, cannot decode " + path);
#endif
  }
  if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes[1] == 'P') {
#ifdef ORCHARD_HAS_PNG
    return decode_png(bytes, path);
#else
    throw decode_error("image: PNG support not built in, cannot decode " + path);
#endif
  }
  throw decode_error("image: unrecognized format: " + path);
}

// --- bilinear resize -------------------------------------------------------------
//
// Half-pixel-center sampling: src = (dst + 0.5) * (in/out) - 0.5, with edge
// clamping. A constant image is invariant under this map.
inline Image resize_bilinear(const Image& src, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw contract_error("resize: target extents must be positive");
  if (src.width == out_w && src.height == out_h) return src;
  Image dst;
  dst.width = out_w;
  dst.height = out_h;
  dst.planes.assign(3 * out_w * out_h, 0.f);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    const double cy = std::min(std::max(fy, 0.0), static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(cy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = cy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      const double cx = std::min(std::max(fx, 0.0), static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(cx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = cx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1);
        const double bot = (1.0 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1);
        dst.planes[(c * out_h + y) * out_w + x] = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return dst;
}

inline Tensor image_to_tensor(const Image& img) {
  std::vector<float> data(img.planes.begin(), img.planes.end());
  return Tensor::from_data({3, img.height, img.width}, std::move(data));
}

// Decode + scale to [0,1] + bilinear resize to a square target resolution.
inline Tensor load_image(const std::string& path, std::size_t target_resolution) {
  if (target_resolution == 0) throw contract_error("load_image: resolution must be positive");
  const Image img = decode_image(path);
  return image_to_tensor(resize_bilinear(img, target_resolution, target_resolution));
}

}  // namespace orchard::data
