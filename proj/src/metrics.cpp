#include "mvmae/metrics.hpp"

#include "mvmae/errors.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace mvmae {

std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw InternalError("auroc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the Mann-Whitney U as an integer: 2 per (pos > neg), 1 per tie.
  std::uint64_t twice_u = 0;
  std::uint64_t neg_below = 0;
  std::uint64_t n_pos = 0;
  std::uint64_t n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos_here = 0;
    std::uint64_t neg_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] != 0 ? pos_here : neg_here) += 1;
      ++j;
    }
    twice_u += pos_here * (2 * neg_below + neg_here);
    neg_below += neg_here;
    n_pos += pos_here;
    n_neg += neg_here;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MacroAuroc macro_auroc(std::span<const double> scores, std::span<const std::uint8_t> labels,
                       std::size_t num_labels) {
  if (num_labels == 0 || scores.size() != labels.size() || scores.size() % num_labels != 0) {
    throw InternalError("macro_auroc: inconsistent shapes");
  }
  const std::size_t n = scores.size() / num_labels;
  MacroAuroc out;
  double sum = 0.0;
  std::vector<double> s(n);
  std::vector<std::uint8_t> y(n);
  for (std::size_t l = 0; l < num_labels; ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = scores[i * num_labels + l];
      y[i] = labels[i * num_labels + l];
    }
    auto a = auroc(s, y);
    if (a) {
      sum += *a;
      ++out.evaluated;
    }
    out.per_label.push_back(a);
  }
  out.macro = out.evaluated > 0 ? sum / static_cast<double>(out.evaluated) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace mvmae
