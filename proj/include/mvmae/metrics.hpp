#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace mvmae {

/// Mann-Whitney AUROC: P(score+ > score-) + 1/2 P(tie). Empty when the labels
/// contain a single class (the label is then skipped by macro averaging).
std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MacroAuroc {
  std::vector<std::optional<double>> per_label;
  double macro = 0.0;
  std::size_t evaluated = 0;
};

/// Per-label AUROC over a row-major (samples x labels) score matrix, and
/// their mean over labels that are not skipped.
MacroAuroc macro_auroc(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t num_labels);

}  // namespace mvmae
