#include "mvmae/objectives.hpp"

#include "mvmae/errors.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <vector>

namespace mvmae {

std::string_view to_string(View v) { return v == View::frontal ? "frontal" : "lateral"; }

AlignMode parse_align_mode(const std::string& name) {
  if (name == "shared-visible") return AlignMode::shared_visible;
  if (name == "cls-only") return AlignMode::cls_only;
  throw ConfigError("unknown alignment mode '" + name + "'");
}

std::string to_string(AlignMode m) { return m == AlignMode::shared_visible ? "shared-visible" : "cls-only"; }

ContrastiveDenominator parse_denominator(const std::string& name) {
  if (name == "negatives-only") return ContrastiveDenominator::negatives_only;
  if (name == "simclr-standard") return ContrastiveDenominator::simclr_standard;
  throw ConfigError("unknown contrastive denominator '" + name + "'");
}

std::string to_string(ContrastiveDenominator d) {
  return d == ContrastiveDenominator::negatives_only ? "negatives-only" : "simclr-standard";
}

RecLoss rec_loss(const MatrixXd& reconstruction, const MatrixXd& target, const MaskPlan& plan,
                 bool normalize_targets) {
  if (reconstruction.rows() != target.rows() || reconstruction.cols() != target.cols() ||
      reconstruction.rows() != plan.num_tokens) {
    throw InternalError("rec_loss: shape mismatch");
  }
  if (plan.masked.empty()) throw UndefinedLossError("reconstruction loss needs at least one masked position");

  RecLoss out;
  out.grad_reconstruction = MatrixXd::Zero(reconstruction.rows(), reconstruction.cols());
  const double denom = static_cast<double>(plan.masked.size()) * static_cast<double>(reconstruction.cols());
  double sum = 0.0;
  for (int t : plan.masked) {
    Eigen::RowVectorXd goal = target.row(t);
    if (normalize_targets) {
      const double mean = goal.mean();
      const double var = (goal.array() - mean).square().mean();
      goal = (goal.array() - mean) / std::sqrt(var + 1e-6);
    }
    const Eigen::RowVectorXd diff = reconstruction.row(t) - goal;
    sum += diff.squaredNorm();
    out.grad_reconstruction.row(t) = diff * (2.0 / denom);
  }
  out.value = sum / denom;
  return out;
}

AlignLoss align_loss(const LatentSequence& lat_f, const LatentSequence& lat_l, AlignMode mode) {
  const Eigen::Index d = lat_f.cls.size();
  if (lat_l.cls.size() != d || lat_f.tokens.cols() != lat_l.tokens.cols() ||
      (lat_f.tokens.rows() > 0 && lat_f.tokens.cols() != d)) {
    throw InternalError("align_loss: latents come from different widths");
  }
  AlignLoss out;
  out.grad_f = LatentSequence{VectorXd::Zero(d), MatrixXd::Zero(lat_f.tokens.rows(), lat_f.tokens.cols()),
                              lat_f.positions};
  out.grad_l = LatentSequence{VectorXd::Zero(d), MatrixXd::Zero(lat_l.tokens.rows(), lat_l.tokens.cols()),
                              lat_l.positions};

  std::vector<std::pair<Eigen::Index, Eigen::Index>> matches;
  if (mode == AlignMode::shared_visible) {
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < lat_f.positions.size() && j < lat_l.positions.size()) {
      if (lat_f.positions[i] == lat_l.positions[j]) {
        matches.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        ++i;
        ++j;
      } else if (lat_f.positions[i] < lat_l.positions[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  if (matches.empty()) {
    out.cls_fallback = mode == AlignMode::shared_visible;
    out.correspondences = 1;
    const VectorXd diff = lat_f.cls - lat_l.cls;
    out.value = diff.squaredNorm() / static_cast<double>(d);
    out.grad_f.cls = diff * (2.0 / static_cast<double>(d));
    out.grad_l.cls = -out.grad_f.cls;
    return out;
  }

  out.correspondences = matches.size();
  const double denom = static_cast<double>(matches.size()) * static_cast<double>(d);
  double sum = 0.0;
  for (const auto& [i, j] : matches) {
    const Eigen::RowVectorXd diff = lat_f.tokens.row(i) - lat_l.tokens.row(j);
    sum += diff.squaredNorm();
    out.grad_f.tokens.row(i) = diff * (2.0 / denom);
    out.grad_l.tokens.row(j) = -diff * (2.0 / denom);
  }
  out.value = sum / denom;
  return out;
}

bool LossBreakdown::finite() const {
  bool ok = std::isfinite(align) && std::isfinite(beta) && std::isfinite(total);
  for (const auto& [_, v] : rec_per_view) ok = ok && std::isfinite(v);
  if (contrastive) ok = ok && std::isfinite(*contrastive);
  return ok;
}

LossBreakdown mvmae_loss(double rec_f, double rec_l, const AlignLoss& align, double beta) {
  LossBreakdown out;
  out.rec_per_view = {{View::frontal, rec_f}, {View::lateral, rec_l}};
  out.align = align.value;
  out.beta = beta;
  out.align_cls_fallback = align.cls_fallback;
  out.total = 0.5 * (rec_f + rec_l) + beta * align.value;
  if (!out.finite()) throw NumericError("non-finite MVMAE loss");
  return out;
}

LossBreakdown contrastive_breakdown(double contrastive) {
  LossBreakdown out;
  out.contrastive = contrastive;
  out.total = contrastive;
  if (!out.finite()) throw NumericError("non-finite contrastive loss");
  return out;
}

void ContrastiveBatch::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (z_f.rows() != z_l.rows() || z_f.cols() != z_l.cols()) {
    throw ContractError("frontal and lateral embedding batches differ in shape");
  }
  if (z_f.rows() < 2) throw ContractError("contrastive loss needs at least two studies");
  for (Eigen::Index i = 0; i < z_f.rows(); ++i) {
    if (std::abs(z_f.row(i).norm() - 1.0) > 1e-6 || std::abs(z_l.row(i).norm() - 1.0) > 1e-6) {
      throw ContractError("embedding row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

ContrastiveLoss contrastive_loss(const ContrastiveBatch& batch, ContrastiveDenominator denominator) {
  batch.validate();
  const Eigen::Index n = batch.z_f.rows();
  const double inv_tau = 1.0 / batch.temperature;
  const std::array<const MatrixXd*, 2> z{&batch.z_f, &batch.z_l};

  ContrastiveLoss out;
  std::array<MatrixXd, 2> grad{MatrixXd::Zero(n, batch.z_f.cols()), MatrixXd::Zero(n, batch.z_f.cols())};
  const double w = -1.0 / (2.0 * static_cast<double>(n));  // dL / d(Gamma)
  double sum_gamma = 0.0;

  for (int v = 0; v < 2; ++v) {
    const MatrixXd& same = *z[static_cast<std::size_t>(v)];
    const MatrixXd& other = *z[static_cast<std::size_t>(1 - v)];
    // Similarity logits of every anchor against both views of every study.
    const MatrixXd s_same = (same * same.transpose()) * inv_tau;
    const MatrixXd s_other = (same * other.transpose()) * inv_tau;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pos = s_other(i, i);
      // log-sum-exp over the denominator terms, shifted by their maximum.
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k == i) continue;
        m = std::max({m, s_same(i, k), s_other(i, k)});
      }
      if (denominator == ContrastiveDenominator::simclr_standard) m = std::max(m, pos);
      double denom = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k == i) continue;
        denom += std::exp(s_same(i, k) - m) + std::exp(s_other(i, k) - m);
      }
      if (denominator == ContrastiveDenominator::simclr_standard) denom += std::exp(pos - m);
      const double log_denom = m + std::log(denom);
      sum_gamma += pos - log_denom;

      // d(Gamma)/d(logit) is +1 for the numerator and -softmax weight for
      // every denominator term; chain through logit = a.b / tau.
      MatrixXd& g_same = grad[static_cast<std::size_t>(v)];
      MatrixXd& g_other = grad[static_cast<std::size_t>(1 - v)];
      double d_pos = 1.0;
      if (denominator == ContrastiveDenominator::simclr_standard) d_pos -= std::exp(pos - log_denom);
      g_same.row(i) += w * d_pos * inv_tau * other.row(i);
      g_other.row(i) += w * d_pos * inv_tau * same.row(i);
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k == i) continue;
        const double p_same = std::exp(s_same(i, k) - log_denom);
        const double p_other = std::exp(s_other(i, k) - log_denom);
        g_same.row(i) -= w * inv_tau * (p_same * same.row(k) + p_other * other.row(k));
        g_same.row(k) -= w * inv_tau * p_same * same.row(i);
        g_other.row(k) -= w * inv_tau * p_other * same.row(i);
      }
    }
  }
  out.value = w * sum_gamma;
  out.grad_z_f = std::move(grad[0]);
  out.grad_z_l = std::move(grad[1]);
  return out;
}

MatrixXd normalize_embeddings(const MatrixXd& raw) {
  MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double norm = raw.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericError("embedding row " + std::to_string(i) + " has zero or non-finite norm", i);
    }
    out.row(i) = raw.row(i) / norm;
  }
  return out;
}

MatrixXd normalize_backward(const MatrixXd& raw, const MatrixXd& grad_normalized) {
  MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double norm = raw.row(i).norm();
    const Eigen::RowVectorXd u = raw.row(i) / norm;
    const Eigen::RowVectorXd g = grad_normalized.row(i);
    out.row(i) = (g - u * u.dot(g)) / norm;
  }
  return out;
}

ContrastiveBatch gather_negatives(const ContrastiveBatch& local, const GatherContext& context) {
  if (context.world_size < 1 || context.rank < 0 || context.rank >= context.world_size) {
    throw DistributedContractError("invalid world size / rank");
  }
  if (context.world_size == 1) return local;
  if (context.peers.size() != static_cast<std::size_t>(context.world_size)) {
    throw DistributedContractError("gather needs one batch per rank");
  }
  const Eigen::Index n = local.z_f.rows();
  const Eigen::Index d = local.z_f.cols();
  for (const ContrastiveBatch& b : context.peers) {
    if (b.z_f.rows() != n || b.z_l.rows() != n || b.z_f.cols() != d || b.z_l.cols() != d) {
      throw DistributedContractError("ranks presented batches of different sizes");
    }
    if (b.temperature != local.temperature) throw DistributedContractError("ranks disagree on temperature");
  }
  ContrastiveBatch out;
  out.temperature = local.temperature;
  out.z_f.resize(n * context.world_size, d);
  out.z_l.resize(n * context.world_size, d);
  for (int r = 0; r < context.world_size; ++r) {
    out.z_f.middleRows(r * n, n) = context.peers[static_cast<std::size_t>(r)].z_f;
    out.z_l.middleRows(r * n, n) = context.peers[static_cast<std::size_t>(r)].z_l;
  }
  return out;
}

BceLoss bce_with_logits(const MatrixXd& logits, const MatrixXd& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw InternalError("bce_with_logits: shape mismatch");
  }
  const double count = static_cast<double>(logits.size());
  BceLoss out;
  out.grad_logits.resize(logits.rows(), logits.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double x = logits.data()[i];
    const double y = targets.data()[i];
    sum += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    out.grad_logits.data()[i] = (1.0 / (1.0 + std::exp(-x)) - y) / count;
  }
  out.value = sum / count;
  return out;
}

}  // namespace mvmae
