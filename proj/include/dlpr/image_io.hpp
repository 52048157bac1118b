#pragma once

#include <filesystem>
#include <string>

#include "dlpr/optics.hpp"

namespace dlpr::io {

// PGM (P2/P5) and grayscale-converted PNG input; PGM (P5) output.
optics::GrayImage read_pgm(const std::filesystem::path& path);
optics::GrayImage read_png_gray(const std::filesystem::path& path);

// Dispatches on file magic; throws IoError for anything unreadable.
optics::GrayImage read_image(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const optics::GrayImage& img);

// Aspect-preserving bilinear resize into a grid x grid canvas with a
// gray-0 border of at least `margin` pixels on each side.
optics::GrayImage resize_into_grid(const optics::GrayImage& src, int grid,
                                   int margin);

}  // namespace dlpr::io
