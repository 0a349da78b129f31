#include "mvmae/image.hpp"

#include "mvmae/errors.hpp"

#include <algorithm>
#include <cmath>

namespace mvmae {

Interpolation parse_interpolation(const std::string& name) {
  if (name == "nearest") return Interpolation::nearest;
  if (name == "bilinear") return Interpolation::bilinear;
  throw ConfigError("unknown interpolation mode '" + name + "'");
}

std::string to_string(Interpolation mode) {
  return mode == Interpolation::nearest ? "nearest" : "bilinear";
}

ImageTensor crop(const ImageTensor& img, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > img.height || left + w > img.width) {
    throw InternalError("crop window outside image");
  }
  ImageTensor out(img.channels, h, w);
  out.provenance = img.provenance;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, top + y, left + x);
    }
  }
  return out;
}

ImageTensor center_square_crop(const ImageTensor& img) {
  const int side = std::min(img.height, img.width);
  return crop(img, (img.height - side) / 2, (img.width - side) / 2, side, side);
}

namespace {

// Maps output index to a source coordinate under the half-pixel convention.
double source_coord(int out_index, double scale) { return (out_index + 0.5) * scale - 0.5; }

}  // namespace

ImageTensor resize(const ImageTensor& img, int out_h, int out_w, Interpolation mode) {
  if (out_h < 1 || out_w < 1) throw ConfigError("resize target must be positive");
  if (img.height < 1 || img.width < 1) throw InternalError("resize of empty image");
  ImageTensor out(img.channels, out_h, out_w);
  out.provenance = img.provenance;
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;

  if (mode == Interpolation::nearest) {
    for (int y = 0; y < out_h; ++y) {
      const int iy = std::min(img.height - 1, static_cast<int>(std::floor((y + 0.5) * sy)));
      for (int x = 0; x < out_w; ++x) {
        const int ix = std::min(img.width - 1, static_cast<int>(std::floor((x + 0.5) * sx)));
        for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = img.at(c, iy, ix);
      }
    }
    return out;
  }

  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp(source_coord(y, sy), 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp(source_coord(x, sx), 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(c, y0, x0) * (1.0 - wx) + img.at(c, y0, x1) * wx;
        const double bot = img.at(c, y1, x0) * (1.0 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

ImageTensor flip_horizontal(const ImageTensor& img) {
  ImageTensor out(img.channels, img.height, img.width);
  out.provenance = img.provenance;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    }
  }
  return out;
}

}  // namespace mvmae
