#pragma once

#include "mvmae/image.hpp"

#include <filesystem>

namespace mvmae {

struct RawImage {
  ImageTensor pixels;  // single channel, raw intensity units
  double full_scale = 255.0;
};

/// Decodes a JPEG/PNG/PGM file as grayscale. Throws IngestionError.
RawImage load_grayscale(const std::filesystem::path& path);

/// Writes channel 0 as an 8-bit PNG, mapping [lo, hi] onto [0, 255].
void save_grayscale_png(const std::filesystem::path& path, const ImageTensor& image, double lo, double hi);

}  // namespace mvmae
