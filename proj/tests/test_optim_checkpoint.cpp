#include "mvmae/checkpoint.hpp"
#include "mvmae/config.hpp"
#include "mvmae/errors.hpp"
#include "mvmae/optim.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace mvmae;

TEST_CASE("learning-rate schedule") {
  const LrSchedule s{1.0, 0.1, 10, 110};
  CHECK(s.at(0) == doctest::Approx(0.1));  // (step + 1) / warmup
  CHECK(s.at(9) == doctest::Approx(1.0));
  CHECK(s.at(10) == doctest::Approx(1.0));
  // cosine midpoint
  CHECK(s.at(60) == doctest::Approx(0.1 + 0.9 * 0.5 * (1 + std::cos(std::numbers::pi * 0.5))));
  CHECK(s.at(110) == doctest::Approx(0.1));
  CHECK(s.at(500) == doctest::Approx(0.1));
  for (std::int64_t t = 11; t < 110; ++t) CHECK(s.at(t) <= s.at(t - 1) + 1e-15);
}

TEST_CASE("AdamW with zero learning rate leaves parameters untouched") {
  ag::Parameter w{ag::Matrix::Constant(3, 2, 0.5), {}};
  w.grad = ag::Matrix::Constant(3, 2, 2.0);
  AdamW opt({&w}, AdamWOptions{});
  opt.step(0.0);
  CHECK(w.value == ag::Matrix::Constant(3, 2, 0.5));
  CHECK(opt.steps() == 1);
}

TEST_CASE("first AdamW step moves by lr in the gradient sign") {
  // bias-corrected first step is g / (|g| + eps) for every coordinate
  ag::Parameter b{ag::Matrix::Zero(1, 3), {}};
  b.grad = (ag::Matrix(1, 3) << 4.0, -0.01, 0.0).finished();
  AdamW opt({&b}, AdamWOptions{0.9, 0.999, 1e-8, 0.5});
  opt.step(0.1);
  CHECK(b.value(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(b.value(0, 1) == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(b.value(0, 2) == 0.0);  // row vector: no decay

  ag::Parameter w{ag::Matrix::Ones(2, 2), {}};
  w.zero_grad();
  AdamW decay({&w}, AdamWOptions{0.9, 0.999, 1e-8, 0.5});
  decay.step(0.1);
  CHECK(w.value(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  BackboneConfig cfg;
  cfg.init_seed = 42;
  const VisionBackbone net(cfg);
  Checkpoint ck;
  ck.params = net.params();
  ck.metadata.backbone = to_json(cfg);
  ck.metadata.seed = 7;
  ck.metadata.step = 1234;
  ck.metadata.objective = "mvmae";
  ck.metadata.extra["note"] = "x";

  const auto path = std::filesystem::temp_directory_path() / "mvmae_test.ckpt";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.metadata == ck.metadata);
  REQUIRE(back.params.entries().size() == ck.params.entries().size());
  for (std::size_t i = 0; i < ck.params.entries().size(); ++i) {
    CHECK(back.params.entries()[i].first == ck.params.entries()[i].first);
    CHECK(back.params.entries()[i].second.value == ck.params.entries()[i].second.value);
  }
  CHECK(parameter_hash(back.params) == parameter_hash(ck.params));

  // truncated file
  std::filesystem::resize_file(path, 20);
  CHECK_THROWS_AS(load_checkpoint(path), SchemaError);
  std::ofstream(path, std::ios::binary) << "garbage";
  CHECK_THROWS_AS(load_checkpoint(path), SchemaError);
  std::filesystem::remove(path);
}

TEST_CASE("load_parameters copies matching names only") {
  BackboneConfig cfg;
  const VisionBackbone a(cfg);
  cfg.init_seed = 3;
  VisionBackbone b(cfg);
  CHECK(parameter_hash(a.params(), "encoder.") != parameter_hash(b.params(), "encoder."));
  const std::uint64_t decoder_before = parameter_hash(b.params(), "decoder.");
  const std::size_t copied = load_parameters(b.params(), a.params(), "encoder.");
  CHECK(copied == b.params().select("encoder.").size());
  CHECK(parameter_hash(a.params(), "encoder.") == parameter_hash(b.params(), "encoder."));
  CHECK(parameter_hash(b.params(), "decoder.") == decoder_before);
}
