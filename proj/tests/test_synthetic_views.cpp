#include "mvmae/errors.hpp"
#include "mvmae/synthetic_views.hpp"

#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>

using namespace mvmae;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.num_pairs = 200;
  return s;
}

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Label marginals under the latent prior: the primitive count is uniform on
// [min, max] and the present types are a uniform subset of that size.
std::vector<double> analytic_marginals(const SyntheticSpec& s) {
  const int k = s.latent_classes;
  std::vector<double> p(static_cast<std::size_t>(s.num_labels), 0.0);
  const double per_count = 1.0 / (s.max_primitives - s.min_primitives + 1);
  for (unsigned mask = 0; mask < (1u << k); ++mask) {
    const int c = std::popcount(mask);
    if (c < s.min_primitives || c > s.max_primitives) continue;
    const double prob = per_count / binomial(k, c);
    std::vector<std::uint8_t> presence(static_cast<std::size_t>(k));
    for (int t = 0; t < k; ++t) presence[static_cast<std::size_t>(t)] = (mask >> t) & 1u;
    const LabelVector labels = synthetic_label_function(presence, s.num_labels);
    for (std::size_t j = 0; j < labels.size(); ++j) p[j] += prob * labels[j];
  }
  return p;
}

}  // namespace

TEST_CASE("fixed seed gives a bit-identical dataset") {
  const SyntheticDataset a = generate_synthetic(small_spec());
  const SyntheticDataset b = generate_synthetic(small_spec());
  REQUIRE(a.dataset.pairs == b.dataset.pairs);
  CHECK(a.dataset.split == b.dataset.split);
  for (const auto& p : a.dataset.pairs) {
    REQUIRE(a.dataset.images->get(p.frontal_ref).data == b.dataset.images->get(p.frontal_ref).data);
    REQUIRE(a.dataset.images->get(p.lateral_ref).data == b.dataset.images->get(p.lateral_ref).data);
  }
  SyntheticSpec other = small_spec();
  other.seed = 1;
  CHECK_FALSE(generate_synthetic(other).dataset.pairs == a.dataset.pairs);
}

TEST_CASE("degenerate generator renders identical views") {
  SyntheticSpec s = small_spec();
  s.noise_std = 0.0;
  s.lateral_shear = 0.0;
  SyntheticDataset d = generate_synthetic(s);
  for (const auto& p : d.dataset.pairs) {
    REQUIRE(d.dataset.images->get(p.frontal_ref).data == d.dataset.images->get(p.lateral_ref).data);
  }
}

TEST_CASE("labels are a function of the latent only") {
  SyntheticSpec s = small_spec();
  SyntheticSpec noisy = s;
  noisy.noise_std = 0.7;
  const SyntheticDataset a = generate_synthetic(s);
  const SyntheticDataset b = generate_synthetic(noisy);
  for (std::size_t i = 0; i < a.dataset.pairs.size(); ++i) {
    std::vector<std::uint8_t> presence(static_cast<std::size_t>(s.latent_classes), 0);
    for (const Primitive& p : a.latents[i]) presence[static_cast<std::size_t>(p.type)] = 1;
    REQUIRE(a.dataset.pairs[i].labels == synthetic_label_function(presence, s.num_labels));
    REQUIRE(b.dataset.pairs[i].labels == a.dataset.pairs[i].labels);
    const int count = static_cast<int>(a.latents[i].size());
    CHECK(count >= s.min_primitives);
    CHECK(count <= s.max_primitives);
  }
}

TEST_CASE("label marginals match the analytic prior") {
  SyntheticSpec s;
  s.num_pairs = 2000;
  s.latent_classes = 8;
  const SyntheticDataset d = generate_synthetic(s);
  const std::vector<double> p = analytic_marginals(s);
  CHECK(p[0] == doctest::Approx(3.0 / 8.0));  // mean primitive count over 8 types
  for (int j = 0; j < s.num_labels; ++j) {
    double hits = 0;
    for (const auto& pair : d.dataset.pairs) hits += pair.labels[static_cast<std::size_t>(j)];
    const double freq = hits / s.num_pairs;
    const double pj = p[static_cast<std::size_t>(j)];
    const double se = std::sqrt(pj * (1 - pj) / s.num_pairs);
    CHECK_MESSAGE(std::abs(freq - pj) <= 3 * se, "label " << j << " freq " << freq << " expected " << pj);
  }
}

TEST_CASE("frontal images identify their lateral partner") {
  const SyntheticDataset d = generate_synthetic(small_spec());
  const auto& pairs = d.dataset.pairs;
  const std::size_t n = 100;  // held-out block
  const std::size_t offset = pairs.size() - n;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = d.dataset.images->get(pairs[offset + i].frontal_ref).data;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& l = d.dataset.images->get(pairs[offset + j].lateral_ref).data;
      double dist = 0.0;
      for (std::size_t k = 0; k < f.size(); ++k) dist += (f[k] - l[k]) * (f[k] - l[k]);
      if (dist < best) {
        best = dist;
        arg = j;
      }
    }
    correct += arg == i ? 1 : 0;
  }
  // chance is 1 in 100
  CHECK(correct >= 10);
}

TEST_CASE("subjects are split-disjoint and config errors surface") {
  const SyntheticDataset d = generate_synthetic(small_spec());
  CHECK(d.dataset.split.sizes() == std::array<std::size_t, 3>{80, 10, 10});
  SyntheticSpec bad = small_spec();
  bad.image_size = 30;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
  bad = small_spec();
  bad.noise_std = -1;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
}

TEST_CASE("export writes a manifest the regular loader accepts") {
  const auto dir = std::filesystem::temp_directory_path() / "mvmae_test_export";
  std::filesystem::remove_all(dir);
  SyntheticSpec s = small_spec();
  s.num_pairs = 10;
  s.pairs_per_subject = 1;
  const SyntheticDataset d = generate_synthetic(s);
  export_synthetic(d, dir);
  const auto studies = load_manifest(dir / "manifest.tsv");
  REQUIRE(studies.size() == 10);
  CHECK(enumerate_pairs(studies).size() == 10);
  CHECK(collapse_labels(studies[3].raw_labels) == d.dataset.pairs[3].labels);
  std::filesystem::remove_all(dir);
}
