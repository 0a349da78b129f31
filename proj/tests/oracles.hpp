#pragma once

// Independent reference implementations used to check the library. They
// favor directness over speed and share no code with src/.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradRelTol = 1e-4;

/// Central difference of f with respect to x(i, j); x is restored afterwards.
inline double central_difference(const std::function<double()>& f, Eigen::MatrixXd& x, Eigen::Index i,
                                 Eigen::Index j, double h = kFdStep) {
  const double saved = x(i, j);
  x(i, j) = saved + h;
  const double up = f();
  x(i, j) = saved - h;
  const double down = f();
  x(i, j) = saved;
  return (up - down) / (2.0 * h);
}

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// Worst relative error over every coordinate of x (or `samples` random ones when > 0).
inline double max_gradient_error(const std::function<double()>& f, Eigen::MatrixXd& x, const Eigen::MatrixXd& grad,
                                 int samples = 0, std::uint64_t seed = 1) {
  double worst = 0.0;
  auto check = [&](Eigen::Index i, Eigen::Index j) {
    worst = std::max(worst, relative_error(grad(i, j), central_difference(f, x, i, j)));
  };
  if (samples <= 0) {
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) check(i, j);
  } else {
    std::uint64_t s = seed;
    for (int k = 0; k < samples; ++k) {
      s = s * 6364136223846793005ULL + 1442695040888963407ULL;
      const auto flat = static_cast<Eigen::Index>((s >> 33) % static_cast<std::uint64_t>(x.size()));
      check(flat % x.rows(), flat / x.rows());
    }
  }
  return worst;
}

/// Mann-Whitney AUROC by exhaustive comparison of every positive/negative pair.
inline double pairwise_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t p = 0; p < scores.size(); ++p) {
    if (labels[p] != 1) continue;
    for (std::size_t n = 0; n < scores.size(); ++n) {
      if (labels[n] != 0) continue;
      pairs += 1.0;
      if (scores[p] > scores[n]) wins += 1.0;
      else if (scores[p] == scores[n]) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Cross-view contrastive loss, term by term: for each view v and anchor i,
/// the positive is the other view of study i, and the denominator sums both
/// views of every other study (plus the positive when `include_positive`).
inline double contrastive_terms(const Eigen::MatrixXd& zf, const Eigen::MatrixXd& zl, double tau,
                                bool include_positive) {
  const Eigen::Index n = zf.rows();
  double total = 0.0;
  for (int v = 0; v < 2; ++v) {
    const Eigen::MatrixXd& a = v == 0 ? zf : zl;
    const Eigen::MatrixXd& b = v == 0 ? zl : zf;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double positive = a.row(i).dot(b.row(i)) / tau;
      double denom = include_positive ? std::exp(positive) : 0.0;
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k == i) continue;
        denom += std::exp(a.row(i).dot(a.row(k)) / tau);
        denom += std::exp(a.row(i).dot(b.row(k)) / tau);
      }
      total += positive - std::log(denom);
    }
  }
  return -total / (2.0 * static_cast<double>(n));
}

inline Eigen::MatrixXd unit_rows(Eigen::MatrixXd m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

}  // namespace oracle
