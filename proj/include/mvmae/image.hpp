#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mvmae {

enum class Interpolation { nearest, bilinear };

Interpolation parse_interpolation(const std::string& name);
std::string to_string(Interpolation mode);

/// Channel-major (C x H x W) real-valued image with its provenance reference.
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;
  std::string provenance;

  ImageTensor() = default;
  ImageTensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool same_shape(const ImageTensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

/// Crops the (top, left, h, w) window; the window must lie inside the image.
ImageTensor crop(const ImageTensor& img, int top, int left, int h, int w);
/// Largest centered square crop.
ImageTensor center_square_crop(const ImageTensor& img);
/// Resizes every channel to out_h x out_w. Pixel centers are aligned
/// (half-pixel convention) for both modes.
ImageTensor resize(const ImageTensor& img, int out_h, int out_w, Interpolation mode);
ImageTensor flip_horizontal(const ImageTensor& img);

}  // namespace mvmae
