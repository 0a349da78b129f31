#include "mvmae/errors.hpp"
#include "mvmae/image.hpp"
#include "mvmae/image_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace mvmae;

TEST_CASE("crop and flip") {
  ImageTensor img(1, 3, 4);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) img.at(0, y, x) = 10 * y + x;
  const ImageTensor c = crop(img, 1, 1, 2, 2);
  CHECK(c.at(0, 0, 0) == 11);
  CHECK(c.at(0, 1, 1) == 22);
  CHECK_THROWS_AS(crop(img, 2, 0, 2, 2), InternalError);
  const ImageTensor sq = center_square_crop(img);
  CHECK(sq.width == 3);
  CHECK(sq.at(0, 0, 0) == 0);  // (4 - 3) / 2 = 0 columns dropped on the left
  const ImageTensor f = flip_horizontal(img);
  CHECK(f.at(0, 2, 0) == 23);
  CHECK(flip_horizontal(f).data == img.data);
}

TEST_CASE("resize keeps constants and identity sizes") {
  ImageTensor img(2, 7, 9, 0.25);
  for (auto mode : {Interpolation::nearest, Interpolation::bilinear}) {
    const ImageTensor r = resize(img, 5, 13, mode);
    for (double v : r.data) CHECK(v == doctest::Approx(0.25));
  }
  ImageTensor ramp(1, 4, 4);
  for (int i = 0; i < 16; ++i) ramp.data[static_cast<std::size_t>(i)] = i;
  CHECK(resize(ramp, 4, 4, Interpolation::bilinear).data == ramp.data);
  CHECK(resize(ramp, 4, 4, Interpolation::nearest).data == ramp.data);
  // bilinear 2x downsample of a ramp averages neighbouring pixel pairs
  const ImageTensor half = resize(ramp, 2, 2, Interpolation::bilinear);
  CHECK(half.at(0, 0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(parse_interpolation("nearest") == Interpolation::nearest);
  CHECK_THROWS_AS(parse_interpolation("cubic"), ConfigError);
}

TEST_CASE("png round trip and decode errors") {
  const auto dir = std::filesystem::temp_directory_path() / "mvmae_test_png";
  std::filesystem::create_directories(dir);
  ImageTensor img(1, 6, 5);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i * 8);
  save_grayscale_png(dir / "a.png", img, 0.0, 255.0);
  const RawImage back = load_grayscale(dir / "a.png");
  CHECK(back.full_scale == 255.0);
  CHECK(back.pixels.data == img.data);

  std::ofstream(dir / "junk.png") << "not an image";
  CHECK_THROWS_AS(load_grayscale(dir / "junk.png"), IngestionError);
  CHECK_THROWS_AS(load_grayscale(dir / "missing.png"), IngestionError);
  std::filesystem::remove_all(dir);
}
