#include "mvmae/metrics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace mvmae;

namespace {

std::optional<double> run(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<std::uint8_t> labels(y.begin(), y.end());
  return auroc(s, labels);
}

}  // namespace

TEST_CASE("auroc trivial cases") {
  CHECK(*run({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(*run({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
  CHECK(*run({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
  CHECK_FALSE(run({0.1, 0.2}, {1, 1}).has_value());
  CHECK_FALSE(run({0.1, 0.2}, {0, 0}).has_value());
  CHECK_FALSE(run({}, {}).has_value());
}

TEST_CASE("auroc equals the pairwise oracle on small random sets with ties") {
  std::mt19937_64 rng(21);
  int compared = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 11);
    const int levels = 1 + static_cast<int>(rng() % 5);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = static_cast<double>(rng() % static_cast<unsigned>(levels)) / levels;
      y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
    }
    const auto got = run(s, y);
    const bool both = std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0;
    REQUIRE(got.has_value() == both);
    if (both) {
      CHECK(*got == oracle::pairwise_auroc(s, y));
      ++compared;
    }
  }
  CHECK(compared > 200);
}

TEST_CASE("macro_auroc skips single-class labels") {
  // 4 samples x 3 labels, row-major; label 2 is all negative.
  const std::vector<double> s{0.9, 0.1, 0.3, 0.8, 0.2, 0.4, 0.3, 0.7, 0.5, 0.1, 0.9, 0.6};
  const std::vector<std::uint8_t> y{1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 0};
  const MacroAuroc m = macro_auroc(s, y, 3);
  REQUIRE(m.per_label.size() == 3);
  CHECK(*m.per_label[0] == 1.0);
  CHECK(*m.per_label[1] == oracle::pairwise_auroc({0.1, 0.2, 0.7, 0.9}, {0, 1, 0, 1}));
  CHECK_FALSE(m.per_label[2].has_value());
  CHECK(m.evaluated == 2);
  CHECK(std::abs(m.macro - (*m.per_label[0] + *m.per_label[1]) / 2.0) <= 1e-12);
}

TEST_CASE("macro_auroc with no evaluable label is NaN") {
  const MacroAuroc m = macro_auroc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}, 1);
  CHECK(m.evaluated == 0);
  CHECK(std::isnan(m.macro));
}
