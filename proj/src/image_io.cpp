#include "dlpr/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace dlpr::io {

using optics::GrayImage;

namespace {

// Skips PNM whitespace and '#' comment lines.
int next_pnm_token(std::istream& in) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      in.unget();
      return c;
    }
    c = in.get();
  }
  return EOF;
}

long read_pnm_int(std::istream& in) {
  if (next_pnm_token(in) == EOF) throw IoError("truncated PGM header");
  long v = 0;
  if (!(in >> v)) throw IoError("malformed PGM header");
  return v;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || (magic[1] != '2' && magic[1] != '5'))
    throw IoError(path.string() + " is not a PGM (P2/P5) file");
  const bool binary = magic[1] == '5';
  const long w = read_pnm_int(in);
  const long h = read_pnm_int(in);
  const long maxval = read_pnm_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw IoError("bad PGM dimensions in " + path.string());
  GrayImage img(static_cast<int>(h), static_cast<int>(w));
  if (binary) {
    in.get();  // single whitespace after maxval
    if (maxval < 256) {
      in.read(reinterpret_cast<char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
      if (!in) throw IoError("truncated PGM data in " + path.string());
    } else {
      std::vector<unsigned char> buf(img.pixels.size() * 2);
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
      if (!in) throw IoError("truncated PGM data in " + path.string());
      for (size_t i = 0; i < img.pixels.size(); ++i) {
        const long v = (buf[2 * i] << 8) | buf[2 * i + 1];
        img.pixels[i] = static_cast<std::uint8_t>(v * 255 / maxval);
      }
    }
  } else {
    for (auto& p : img.pixels) {
      const long v = read_pnm_int(in);
      p = static_cast<std::uint8_t>(v * 255 / maxval);
    }
  }
  return img;
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng init failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng failed to decode " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_strip_alpha(png);
  const int color = png_get_color_type(png, info);
  if (color & PNG_COLOR_MASK_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_COLOR)
    png_set_rgb_to_gray(png, PNG_ERROR_ACTION_NONE, -1.0, -1.0);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  GrayImage img(h, w);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int r = 0; r < h; ++r)
    rows[static_cast<size_t>(r)] = img.pixels.data() + static_cast<size_t>(r) * w;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

GrayImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  unsigned char magic[8] = {};
  in.read(reinterpret_cast<char*>(magic), 8);
  in.close();
  if (magic[0] == 'P' && (magic[1] == '2' || magic[1] == '5'))
    return read_pgm(path);
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (std::memcmp(magic, png_sig, 8) == 0) return read_png_gray(path);
  throw IoError(path.string() + ": unsupported image format (PGM/PNG only)");
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

GrayImage resize_into_grid(const GrayImage& src, int grid, int margin) {
  if (grid < 2 || margin < 0 || 2 * margin >= grid)
    throw UsageError("resize_into_grid: bad grid/margin");
  const int avail = grid - 2 * margin;
  const double scale =
      std::min(static_cast<double>(avail) / src.width,
               static_cast<double>(avail) / src.height);
  const int nw = std::max(1, static_cast<int>(std::lround(src.width * scale)));
  const int nh = std::max(1, static_cast<int>(std::lround(src.height * scale)));

  GrayImage out(grid, grid, 0);
  const int r0 = (grid - nh) / 2;
  const int c0 = (grid - nw) / 2;
  for (int r = 0; r < nh; ++r) {
    // map output pixel centers back into source coordinates
    const double sy = (r + 0.5) * src.height / nh - 0.5;
    const int y0 = static_cast<int>(std::floor(sy));
    const double fy = sy - y0;
    for (int c = 0; c < nw; ++c) {
      const double sx = (c + 0.5) * src.width / nw - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const double fx = sx - x0;
      auto sample = [&](int y, int x) -> double {
        y = std::clamp(y, 0, src.height - 1);
        x = std::clamp(x, 0, src.width - 1);
        return src.at(y, x);
      };
      const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                       fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
      out.at(r0 + r, c0 + c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return out;
}

}  // namespace dlpr::io
