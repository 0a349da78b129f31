#include "mvmae/image_io.hpp"

#include "mvmae/errors.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

namespace mvmae {

RawImage load_grayscale(const std::filesystem::path& path) {
  const std::string ref = path.string();
  if (!std::filesystem::exists(path)) throw IngestionError(ref, "file not found");
  cv::Mat mat;
  try {
    mat = cv::imread(ref, cv::IMREAD_GRAYSCALE | cv::IMREAD_ANYDEPTH);
  } catch (const cv::Exception& e) {
    throw IngestionError(ref, e.what());
  }
  if (mat.empty()) throw IngestionError(ref, "unsupported or corrupt image");

  RawImage out;
  out.full_scale = mat.depth() == CV_16U ? 65535.0 : 255.0;
  out.pixels = ImageTensor(1, mat.rows, mat.cols);
  out.pixels.provenance = ref;
  cv::Mat as_double;
  mat.convertTo(as_double, CV_64F);
  for (int y = 0; y < mat.rows; ++y) {
    const auto* row = as_double.ptr<double>(y);
    std::copy(row, row + mat.cols, out.pixels.data.begin() + static_cast<std::ptrdiff_t>(y) * mat.cols);
  }
  return out;
}

void save_grayscale_png(const std::filesystem::path& path, const ImageTensor& image, double lo, double hi) {
  cv::Mat mat(image.height, image.width, CV_8U);
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double v = std::clamp((image.at(0, y, x) - lo) / span, 0.0, 1.0);
      mat.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  if (!cv::imwrite(path.string(), mat)) throw IngestionError(path.string(), "cannot write image");
}

}  // namespace mvmae
