#include "mcnet/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace mcnet {

ImageGray::ImageGray(int w, int h, uint8_t fill) : width(w), height(h) {
  if (w < 16 || h < 16)
    throw RuntimeFail("ImageGray: dimensions must be >= 16, got " + std::to_string(w) + "x" +
                      std::to_string(h));
  pixels.assign(static_cast<size_t>(w) * static_cast<size_t>(h), fill);
}

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  std::string tail = s.substr(s.size() - suffix.size());
  for (auto& c : tail) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return tail == suffix;
}

int pgm_next_value(std::istream& is) {
  // skips whitespace and '#' comments per the PNM spec
  for (;;) {
    int c = is.get();
    if (c == EOF) throw RuntimeFail("pgm: truncated header");
    if (std::isspace(c)) continue;
    if (c == '#') {
      while (c != '\n' && c != EOF) c = is.get();
      continue;
    }
    int v = 0;
    while (std::isdigit(c)) {
      v = v * 10 + (c - '0');
      c = is.get();
    }
    return v;
  }
}

}  // namespace

ImageGray read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFail("cannot open " + path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '5') throw RuntimeFail(path + ": not a P5 PGM file");
  int w = pgm_next_value(is);
  int h = pgm_next_value(is);
  int maxval = pgm_next_value(is);
  if (maxval != 255) throw RuntimeFail(path + ": only 8-bit PGM supported (maxval 255)");
  ImageGray img(w, h);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.size()))
    throw RuntimeFail(path + ": truncated pixel data");
  return img;
}

void write_pgm(const std::string& path, const ImageGray& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFail("cannot write " + path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.size()));
  if (!os) throw RuntimeFail("write failed: " + path);
}

ImageGray read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw RuntimeFail("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw RuntimeFail(path + ": png read failed");
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR)
    png_set_rgb_to_gray(png, 1, -1, -1);  // default luminosity coefficients
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  int w = static_cast<int>(png_get_image_width(png, info));
  int h = static_cast<int>(png_get_image_height(png, info));
  ImageGray img(w, h);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int r = 0; r < h; ++r) rows[static_cast<size_t>(r)] = img.pixels.data() + static_cast<size_t>(r) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

void write_png(const std::string& path, const ImageGray& img) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw RuntimeFail("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw RuntimeFail(path + ": png write failed");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < img.height; ++r)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(r) * img.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

ImageGray read_image(const std::string& path) {
  if (has_suffix(path, ".png")) return read_png(path);
  if (has_suffix(path, ".pgm")) return read_pgm(path);
  throw RuntimeFail(path + ": unsupported image format (expected .pgm or .png)");
}

void write_image(const std::string& path, const ImageGray& img) {
  if (has_suffix(path, ".png")) return write_png(path, img);
  if (has_suffix(path, ".pgm")) return write_pgm(path, img);
  throw RuntimeFail(path + ": unsupported image format (expected .pgm or .png)");
}

// ---------------------------------------------------------------------------
// Bicubic resize.

namespace {

double cubic_keys(double x) {
  x = std::abs(x);
  if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

struct ResampleTap {
  int first;                   // first source index (clamped later)
  std::vector<double> weights; // normalized
};

std::vector<ResampleTap> build_taps(int in, int out) {
  double scale = static_cast<double>(out) / static_cast<double>(in);
  // antialiasing: widen the kernel by 1/scale when shrinking
  double kscale = scale < 1.0 ? scale : 1.0;
  double support = 2.0 / kscale;
  std::vector<ResampleTap> taps(static_cast<size_t>(out));
  for (int i = 0; i < out; ++i) {
    double u = (static_cast<double>(i) + 0.5) / scale - 0.5;
    int lo = static_cast<int>(std::ceil(u - support));
    int hi = static_cast<int>(std::floor(u + support));
    ResampleTap tap;
    tap.first = lo;
    double sum = 0;
    for (int j = lo; j <= hi; ++j) {
      double w = cubic_keys((u - static_cast<double>(j)) * kscale) * kscale;
      tap.weights.push_back(w);
      sum += w;
    }
    for (double& w : tap.weights) w /= sum;
    taps[static_cast<size_t>(i)] = std::move(tap);
  }
  return taps;
}

}  // namespace

ImageGray resize_square(const ImageGray& img, int out_size) {
  if (img.width != img.height)
    throw RuntimeFail("resize: input must be square, got " + std::to_string(img.width) + "x" +
                      std::to_string(img.height));
  if (out_size < 16) throw RuntimeFail("resize: output size must be >= 16");
  if (img.width == out_size) return img;

  int in = img.width;
  auto taps = build_taps(in, out_size);

  // horizontal pass
  std::vector<double> tmp(static_cast<size_t>(in) * static_cast<size_t>(out_size));
  for (int r = 0; r < in; ++r) {
    for (int c = 0; c < out_size; ++c) {
      const ResampleTap& tap = taps[static_cast<size_t>(c)];
      double acc = 0;
      for (size_t t = 0; t < tap.weights.size(); ++t) {
        int j = tap.first + static_cast<int>(t);
        j = j < 0 ? 0 : (j >= in ? in - 1 : j);
        acc += tap.weights[t] * static_cast<double>(img.at(r, j));
      }
      tmp[static_cast<size_t>(r) * out_size + c] = acc;
    }
  }

  // vertical pass, then round half away from zero and clamp
  ImageGray out(out_size, out_size);
  for (int c = 0; c < out_size; ++c) {
    for (int r = 0; r < out_size; ++r) {
      const ResampleTap& tap = taps[static_cast<size_t>(r)];
      double acc = 0;
      for (size_t t = 0; t < tap.weights.size(); ++t) {
        int j = tap.first + static_cast<int>(t);
        j = j < 0 ? 0 : (j >= in ? in - 1 : j);
        acc += tap.weights[t] * tmp[static_cast<size_t>(j) * out_size + c];
      }
      double v = std::round(acc);
      out.at(r, c) = static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
    }
  }
  return out;
}

}  // namespace mcnet
