#include "mvmae/train_eval.hpp"

#include "mvmae/errors.hpp"
#include "mvmae/optim.hpp"
#include "mvmae/synthetic_views.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

namespace mvmae {

namespace {

const ImageTensor& view_image(PairedDataset& data, std::size_t pair, View view) {
  const ViewPair& p = data.pairs[pair];
  return data.images->get(view == View::frontal ? p.frontal_ref : p.lateral_ref);
}

Eigen::MatrixXd label_matrix(const PairedDataset& data, std::span<const std::size_t> ids) {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(ids.size()), data.num_labels);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (int l = 0; l < data.num_labels; ++l) {
      y(static_cast<Eigen::Index>(i), l) = data.pairs[ids[i]].labels[static_cast<std::size_t>(l)];
    }
  }
  return y;
}

double macro_of(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& targets) {
  const std::size_t n = static_cast<std::size_t>(probs.rows());
  const std::size_t L = static_cast<std::size_t>(probs.cols());
  std::vector<double> s(n * L);
  std::vector<std::uint8_t> y(n * L);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < L; ++l) {
      s[i * L + l] = probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l));
      y[i * L + l] = targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) > 0.5 ? 1 : 0;
    }
  }
  return macro_auroc(s, y, L).macro;
}

// Configured epochs, stretched so a small label budget still gets at least
// `min_steps` optimizer steps. Zero epochs stays zero.
int stage_epochs(const StageConfig& stage, std::int64_t steps_per_epoch) {
  if (stage.epochs == 0 || steps_per_epoch <= 0) return stage.epochs;
  const std::int64_t needed = (stage.min_steps + steps_per_epoch - 1) / steps_per_epoch;
  return static_cast<int>(std::max<std::int64_t>(stage.epochs, needed));
}

LrSchedule schedule_for(const StageConfig& stage, std::int64_t steps_per_epoch) {
  LrSchedule s;
  s.base_lr = stage.optimizer.lr;
  s.min_lr = std::min(stage.optimizer.min_lr, stage.optimizer.lr);
  s.warmup_steps = stage.optimizer.warmup_epochs * steps_per_epoch;
  s.total_steps = std::max<std::int64_t>(1, stage_epochs(stage, steps_per_epoch) * steps_per_epoch);
  return s;
}

AdamWOptions adam_options(const StageConfig& stage) {
  return AdamWOptions{stage.optimizer.beta1, stage.optimizer.beta2, stage.optimizer.eps,
                      stage.optimizer.weight_decay};
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& logits) {
  return logits.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

std::size_t sweep_workers(int requested, std::size_t seeds) {
  std::size_t n = requested > 0 ? static_cast<std::size_t>(requested) : std::thread::hardware_concurrency();
  return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(1, seeds));
}

}  // namespace

Objective parse_objective(const std::string& name) {
  if (name == "mvmae") return Objective::mvmae;
  if (name == "contrastive") return Objective::contrastive;
  if (name == "supervised") return Objective::supervised;
  throw ConfigError("unknown objective '" + name + "'");
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::mvmae: return "mvmae";
    case Objective::contrastive: return "contrastive";
    case Objective::supervised: return "supervised";
  }
  return "";
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::frontal: return "Frontal";
    case Scenario::lateral: return "Lateral";
    case Scenario::ensemble: return "Ensemble";
  }
  return "";
}

Scenario parse_scenario(const std::string& name) {
  if (name == "Frontal") return Scenario::frontal;
  if (name == "Lateral") return Scenario::lateral;
  if (name == "Ensemble") return Scenario::ensemble;
  throw SchemaError("unknown scenario '" + name + "'");
}

ImageTensor augment(const ImageTensor& image, const AugmentConfig& config, std::mt19937_64& rng) {
  ImageTensor out = image;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (config.random_resized_crop) {
    const double area = static_cast<double>(image.height) * image.width;
    const double scale = config.crop_min_scale + (1.0 - config.crop_min_scale) * unit(rng);
    const double log_ratio = std::log(3.0 / 4.0) + (std::log(4.0 / 3.0) - std::log(3.0 / 4.0)) * unit(rng);
    const double ratio = std::exp(log_ratio);
    const int w = std::clamp(static_cast<int>(std::lround(std::sqrt(scale * area * ratio))), 1, image.width);
    const int h = std::clamp(static_cast<int>(std::lround(std::sqrt(scale * area / ratio))), 1, image.height);
    std::uniform_int_distribution<int> top(0, image.height - h);
    std::uniform_int_distribution<int> left(0, image.width - w);
    const int t = top(rng);
    const int l = left(rng);
    out = resize(crop(image, t, l, h, w), image.height, image.width, Interpolation::bilinear);
  }
  if (config.horizontal_flip && unit(rng) < 0.5) out = flip_horizontal(out);
  if (config.intensity_jitter) {
    const double s = config.jitter_strength;
    const double brightness = (2.0 * unit(rng) - 1.0) * s;
    const double contrast = 1.0 + (2.0 * unit(rng) - 1.0) * s;
    const double mean = std::accumulate(out.data.begin(), out.data.end(), 0.0) / static_cast<double>(out.data.size());
    for (double& v : out.data) v = (v - mean) * contrast + mean + brightness;
  }
  return out;
}

void standardize_images(PairedDataset& data) {
  double sum = 0.0;
  double sq = 0.0;
  double count = 0.0;
  for (std::size_t i : data.indices(Split::train)) {
    for (View v : {View::frontal, View::lateral}) {
      for (double x : view_image(data, i, v).data) {
        sum += x;
        sq += x * x;
        count += 1.0;
      }
    }
  }
  if (count == 0.0) return;
  const double mean = sum / count;
  const double sd = std::sqrt(std::max(sq / count - mean * mean, 1e-12));
  for (const ViewPair& p : data.pairs) {
    for (const std::string* ref : {&p.frontal_ref, &p.lateral_ref}) {
      ImageTensor img = data.images->get(*ref);
      for (double& x : img.data) x = (x - mean) / sd;
      data.images->insert(*ref, std::move(img));
    }
  }
}

PairedDataset make_dataset(const RunConfig& config) {
  if (config.data.source == "synthetic") {
    SyntheticSpec spec = config.data.synthetic;
    spec.patch_size = config.backbone.grid.patch_size;
    spec.split_ratios = config.data.split_ratios;
    PairedDataset data = generate_synthetic(spec).dataset;
    standardize_images(data);
    return data;
  }
  std::filesystem::path root = config.data.data_root;
  if (root.empty()) {
    if (const char* env = std::getenv("MVMAE_DATA_ROOT")) root = env;
  }
  return load_manifest_dataset(config.data.manifest, root, config.data.preprocess, config.data.split_ratios,
                               config.seed);
}

BackboneConfig backbone_for_seed(const BackboneConfig& base, std::uint64_t seed) {
  BackboneConfig c = base;
  c.init_seed = mix_seed(base.init_seed, seed);
  return c;
}

LossBreakdown mvmae_pair_loss(VisionBackbone& backbone, const Eigen::MatrixXd& patches_f,
                              const Eigen::MatrixXd& patches_l, const MaskPlan& plan_f, const MaskPlan& plan_l,
                              const ObjectiveConfig& objective, double grad_scale) {
  ag::Tape tape(grad_scale != 0.0);
  const ag::Var lat_f = backbone.encode(tape, select_visible(patches_f, plan_f));
  const ag::Var lat_l = backbone.encode(tape, select_visible(patches_l, plan_l));
  const ag::Var rec_f = backbone.decode(tape, lat_f, plan_f);
  const ag::Var rec_l = backbone.decode(tape, lat_l, plan_l);

  const RecLoss loss_f = rec_loss(tape.value(rec_f), patches_f, plan_f, objective.norm_pix_loss);
  const RecLoss loss_l = rec_loss(tape.value(rec_l), patches_l, plan_l, objective.norm_pix_loss);
  const AlignLoss align = align_loss(to_latent_sequence(tape.value(lat_f), plan_f.visible),
                                     to_latent_sequence(tape.value(lat_l), plan_l.visible), objective.align_mode);
  LossBreakdown out = mvmae_loss(loss_f.value, loss_l.value, align, objective.beta);
  if (grad_scale == 0.0) return out;

  auto rows = [](const LatentSequence& g) {
    Eigen::MatrixXd m(g.tokens.rows() + 1, g.cls.size());
    m.row(0) = g.cls.transpose();
    m.bottomRows(g.tokens.rows()) = g.tokens;
    return m;
  };
  const std::array<std::pair<ag::Var, ag::Matrix>, 4> seeds{
      std::pair{rec_f, loss_f.grad_reconstruction * (0.5 * grad_scale)},
      std::pair{rec_l, loss_l.grad_reconstruction * (0.5 * grad_scale)},
      std::pair{lat_f, rows(align.grad_f) * (objective.beta * grad_scale)},
      std::pair{lat_l, rows(align.grad_l) * (objective.beta * grad_scale)}};
  tape.backward(seeds);
  return out;
}

LossBreakdown contrastive_batch_loss(VisionBackbone& backbone, std::span<const Eigen::MatrixXd> patches_f,
                                     std::span<const Eigen::MatrixXd> patches_l, const ObjectiveConfig& objective,
                                     double grad_scale) {
  if (patches_f.size() != patches_l.size()) throw ContractError("unequal view batches");
  const auto n = static_cast<Eigen::Index>(patches_f.size());
  const int T = backbone.config().grid.num_tokens();
  const MaskPlan full = empty_mask(T);
  const bool record = grad_scale != 0.0;
  std::vector<ag::Tape> tapes;
  std::vector<std::array<ag::Var, 2>> cls_vars;
  tapes.reserve(static_cast<std::size_t>(n));
  Eigen::MatrixXd raw_f(n, backbone.config().embed_dim);
  Eigen::MatrixXd raw_l(n, backbone.config().embed_dim);
  const std::array<int, 1> first{0};
  for (Eigen::Index i = 0; i < n; ++i) {
    ag::Tape& t = tapes.emplace_back(record);
    const ag::Var cf =
        ag::gather_rows(t, backbone.encode(t, select_visible(patches_f[static_cast<std::size_t>(i)], full)), first);
    const ag::Var cl =
        ag::gather_rows(t, backbone.encode(t, select_visible(patches_l[static_cast<std::size_t>(i)], full)), first);
    raw_f.row(i) = t.value(cf).row(0);
    raw_l.row(i) = t.value(cl).row(0);
    cls_vars.push_back({cf, cl});
  }
  ContrastiveBatch batch{normalize_embeddings(raw_f), normalize_embeddings(raw_l), objective.temperature};
  const ContrastiveLoss loss = contrastive_loss(batch, objective.denominator);
  LossBreakdown out = contrastive_breakdown(loss.value);
  if (!record) return out;

  const Eigen::MatrixXd g_f = normalize_backward(raw_f, loss.grad_z_f) * grad_scale;
  const Eigen::MatrixXd g_l = normalize_backward(raw_l, loss.grad_z_l) * grad_scale;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::array<std::pair<ag::Var, ag::Matrix>, 2> seeds{
        std::pair{cls_vars[static_cast<std::size_t>(i)][0], ag::Matrix(g_f.row(i))},
        std::pair{cls_vars[static_cast<std::size_t>(i)][1], ag::Matrix(g_l.row(i))}};
    tapes[static_cast<std::size_t>(i)].backward(seeds);
  }
  return out;
}

PretrainResult pretrain(const RunConfig& config, Objective objective, PairedDataset& data, std::uint64_t seed) {
  if (objective == Objective::supervised) throw ConfigError("pretrain objective must be mvmae or contrastive");
  const StageConfig& stage = config.pretrain;
  VisionBackbone backbone(backbone_for_seed(config.backbone, seed));
  const PatchGrid& grid = backbone.config().grid;

  std::vector<std::size_t> ids = data.indices(Split::train);
  const auto batch_size = static_cast<std::size_t>(stage.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((ids.size() + batch_size - 1) / batch_size);
  const LrSchedule schedule = schedule_for(stage, steps_per_epoch);
  AdamW opt(backbone.params().select(objective == Objective::mvmae ? "" : "encoder."), adam_options(stage));
  std::mt19937_64 rng(mix_seed(seed, 17));

  PretrainResult result;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < stage_epochs(stage, steps_per_epoch); ++epoch) {
    std::shuffle(ids.begin(), ids.end(), rng);
    EpochLoss acc{epoch, 0.0, 0.0, 0.0, 0.0};
    std::size_t counted = 0;
    for (std::size_t start = 0; start < ids.size(); start += batch_size) {
      const std::size_t end = std::min(ids.size(), start + batch_size);
      const std::size_t b = end - start;
      if (objective == Objective::contrastive && b < 2) continue;
      opt.zero_grad();
      std::vector<Eigen::MatrixXd> pf;
      std::vector<Eigen::MatrixXd> pl;
      for (std::size_t k = start; k < end; ++k) {
        pf.push_back(patchify(augment(view_image(data, ids[k], View::frontal), stage.augment, rng), grid));
        pl.push_back(patchify(augment(view_image(data, ids[k], View::lateral), stage.augment, rng), grid));
      }
      double batch_loss = 0.0;
      if (objective == Objective::mvmae) {
        for (std::size_t k = 0; k < b; ++k) {
          const MaskPlan mf = sample_mask(grid.num_tokens(), config.objective.mask_ratio, rng);
          const MaskPlan ml = sample_mask(grid.num_tokens(), config.objective.mask_ratio, rng);
          const LossBreakdown l = mvmae_pair_loss(backbone, pf[k], pl[k], mf, ml, config.objective, 1.0 / b);
          batch_loss += l.total / b;
          acc.rec += 0.5 * (l.rec_per_view.at(View::frontal) + l.rec_per_view.at(View::lateral));
          acc.align += l.align;
        }
        counted += b;
      } else {
        const LossBreakdown l = contrastive_batch_loss(backbone, pf, pl, config.objective, 1.0);
        batch_loss = l.total;
        acc.contrastive += l.total * b;
        counted += b;
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("pretraining diverged at step " + std::to_string(step), static_cast<long>(step));
      }
      acc.total += batch_loss * b;
      opt.step(schedule.at(step));
      ++step;
    }
    if (counted > 0) {
      acc.total /= static_cast<double>(counted);
      acc.rec /= static_cast<double>(counted);
      acc.align /= static_cast<double>(counted);
      acc.contrastive /= static_cast<double>(counted);
    }
    result.log.push_back(acc);
  }

  result.checkpoint.params = backbone.params();
  result.checkpoint.metadata.backbone = to_json(backbone.config());
  result.checkpoint.metadata.seed = seed;
  result.checkpoint.metadata.step = step;
  result.checkpoint.metadata.objective = to_string(objective);
  return result;
}

LabelBudget sample_budget(const PairedDataset& data, long size, std::uint64_t seed) {
  std::vector<std::size_t> pool = data.indices(Split::train);
  if (size != kFullBudget && (size < 1 || static_cast<std::size_t>(size) > pool.size())) {
    throw ConfigError("label budget " + std::to_string(size) + " exceeds the " + std::to_string(pool.size()) +
                      " training pairs");
  }
  std::mt19937_64 rng(mix_seed(seed, 29));
  std::shuffle(pool.begin(), pool.end(), rng);
  if (size != kFullBudget) pool.resize(static_cast<std::size_t>(size));
  return LabelBudget{size, seed, std::move(pool)};
}

Classifier::Classifier(const BackboneConfig& backbone, int num_labels, View view, std::uint64_t head_seed)
    : backbone_(backbone), view_(view), num_labels_(num_labels) {
  std::mt19937_64 rng(head_seed);
  head_.add("head.weight", trunc_normal(backbone.embed_dim, num_labels, 0.02, rng));
  head_.add("head.bias", ag::Matrix::Zero(1, num_labels));
}

ag::Var Classifier::logits(ag::Tape& t, const ImageTensor& image) {
  const PatchGrid& grid = backbone_.config().grid;
  const std::array<int, 1> first{0};
  const ag::Var lat = backbone_.encode(t, select_visible(patchify(image, grid), empty_mask(grid.num_tokens())));
  return ag::linear(t, ag::gather_rows(t, lat, first), t.param(head_.at("head.weight")),
                    t.param(head_.at("head.bias")));
}

Eigen::RowVectorXd Classifier::head_logits(const Eigen::VectorXd& cls) const {
  return cls.transpose() * head_.at("head.weight").value + head_.at("head.bias").value.row(0);
}

Eigen::RowVectorXd Classifier::logits(const ImageTensor& image) const {
  return head_logits(backbone_.cls_embedding(image));
}

Checkpoint Classifier::to_checkpoint(const std::string& objective, std::uint64_t seed, std::int64_t step) const {
  Checkpoint c;
  c.params = backbone_.params();
  for (const auto& [name, p] : head_.entries()) c.params.add(name, p.value);
  c.metadata.backbone = to_json(backbone_.config());
  c.metadata.seed = seed;
  c.metadata.step = step;
  c.metadata.objective = objective;
  c.metadata.extra = {{"view", std::string(to_string(view_))}, {"num_labels", num_labels_}};
  return c;
}

Classifier Classifier::from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.metadata.extra.contains("view") || !ckpt.metadata.extra.contains("num_labels")) {
    throw ContractError("checkpoint does not hold a classifier");
  }
  const View view = ckpt.metadata.extra.at("view").get<std::string>() == "lateral" ? View::lateral : View::frontal;
  Classifier c(backbone_config_from_json(ckpt.metadata.backbone), ckpt.metadata.extra.at("num_labels").get<int>(),
               view, 0);
  load_parameters(c.backbone_.params(), ckpt.params);
  load_parameters(c.head_, ckpt.params);
  return c;
}

ClassifierResult finetune(const Checkpoint* init, const LabelBudget& budget, const RunConfig& config,
                          PairedDataset& data, View view, std::uint64_t seed) {
  const StageConfig& stage = config.finetune;
  if (budget.pair_ids.empty()) throw ConfigError("label budget is empty");
  for (std::size_t id : budget.pair_ids) {
    if (data.split.of(data.pairs[id].subject_id) != Split::train) {
      throw ContractError("label budget contains a non-training pair");
    }
  }
  Classifier clf(backbone_for_seed(config.backbone, seed), data.num_labels, view, mix_seed(seed, 41));
  if (init != nullptr) {
    if (load_parameters(clf.backbone().params(), init->params, "encoder.") == 0) {
      throw ContractError("initial checkpoint holds no encoder parameters");
    }
  }
  std::vector<ag::Parameter*> trainable = clf.backbone().params().select("encoder.");
  for (ag::Parameter* p : clf.head().select()) trainable.push_back(p);
  std::vector<std::size_t> ids = budget.pair_ids;
  const auto batch_size = static_cast<std::size_t>(stage.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((ids.size() + batch_size - 1) / batch_size);
  const LrSchedule schedule = schedule_for(stage, steps_per_epoch);
  AdamW opt(trainable, adam_options(stage));
  std::mt19937_64 rng(mix_seed(seed, 53));

  const std::vector<std::size_t> val_ids = data.indices(Split::val);
  const Eigen::MatrixXd val_targets = label_matrix(data, val_ids);

  ClassifierResult result{clf, {}};
  double best = -1.0;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < stage_epochs(stage, steps_per_epoch); ++epoch) {
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t start = 0; start < ids.size(); start += batch_size) {
      const std::size_t end = std::min(ids.size(), start + batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      opt.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        ag::Tape tape;
        const ag::Var logits = clf.logits(tape, augment(view_image(data, ids[k], view), stage.augment, rng));
        Eigen::MatrixXd target(1, data.num_labels);
        for (int l = 0; l < data.num_labels; ++l) target(0, l) = data.pairs[ids[k]].labels[static_cast<std::size_t>(l)];
        const BceLoss loss = bce_with_logits(tape.value(logits), target);
        if (!std::isfinite(loss.value)) {
          throw NumericError("fine-tuning diverged at step " + std::to_string(step), static_cast<long>(step));
        }
        const std::array<std::pair<ag::Var, ag::Matrix>, 1> seeds{std::pair{logits, loss.grad_logits * scale}};
        tape.backward(seeds);
      }
      opt.step(schedule.at(step));
      ++step;
    }
    if (!val_ids.empty()) {
      const double macro = macro_of(score_view(clf, data, val_ids, view).probs, val_targets);
      result.history.val_macro.push_back(macro);
      if (std::isfinite(macro) && macro > best) {
        best = macro;
        result.history.best_epoch = epoch;
        result.classifier = clf;
      }
    }
  }
  if (result.history.best_epoch < 0) result.classifier = clf;
  result.history.steps = step;
  return result;
}

LinearHead train_linear_head(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                             const Eigen::MatrixXd* val_features, const Eigen::MatrixXd* val_targets,
                             const StageConfig& stage, std::uint64_t seed, TrainHistory* history) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (n == 0 || targets.rows() != features.rows()) throw ContractError("probe features and targets disagree");
  // Features are standardized with training statistics (an affine-free batch
  // norm); the returned head has the standardization folded in.
  const Eigen::RowVectorXd mu = features.colwise().mean();
  const Eigen::RowVectorXd sigma =
      ((features.rowwise() - mu).array().square().colwise().mean() + 1e-6).sqrt().matrix();
  auto standardize = [&](const Eigen::MatrixXd& f) -> Eigen::MatrixXd {
    return (f.rowwise() - mu).array().rowwise() / sigma.array();
  };
  auto fold = [&](const Eigen::MatrixXd& w, const Eigen::MatrixXd& b) {
    LinearHead h;
    h.weight = w.array().colwise() / sigma.transpose().array();
    h.bias = b.row(0) - mu * h.weight;
    return h;
  };
  const Eigen::MatrixXd x_train = standardize(features);
  Eigen::MatrixXd x_val;
  if (val_features != nullptr) x_val = standardize(*val_features);
  std::mt19937_64 rng(seed);
  ag::Parameter weight{trunc_normal(static_cast<int>(features.cols()), static_cast<int>(targets.cols()), 0.02, rng),
                       {}};
  ag::Parameter bias{ag::Matrix::Zero(1, targets.cols()), {}};
  AdamW opt({&weight, &bias}, adam_options(stage));
  const auto batch_size = static_cast<std::size_t>(stage.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((n + batch_size - 1) / batch_size);
  const LrSchedule schedule = schedule_for(stage, steps_per_epoch);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  LinearHead best = fold(weight.value, bias.value);
  double best_macro = -1.0;
  TrainHistory local;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < stage_epochs(stage, steps_per_epoch); ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t end = std::min(n, start + batch_size);
      Eigen::MatrixXd x(static_cast<Eigen::Index>(end - start), features.cols());
      Eigen::MatrixXd y(static_cast<Eigen::Index>(end - start), targets.cols());
      for (std::size_t k = start; k < end; ++k) {
        x.row(static_cast<Eigen::Index>(k - start)) = x_train.row(static_cast<Eigen::Index>(order[k]));
        y.row(static_cast<Eigen::Index>(k - start)) = targets.row(static_cast<Eigen::Index>(order[k]));
      }
      opt.zero_grad();
      ag::Tape tape;
      const ag::Var logits = ag::linear(tape, tape.constant(x), tape.param(weight), tape.param(bias));
      const BceLoss loss = bce_with_logits(tape.value(logits), y);
      // bce averages over rows and labels; rescale so each label has unit weight.
      const std::array<std::pair<ag::Var, ag::Matrix>, 1> seeds{
          std::pair{logits, loss.grad_logits * static_cast<double>(targets.cols())}};
      tape.backward(seeds);
      opt.step(schedule.at(step));
      ++step;
    }
    if (val_features != nullptr && val_targets != nullptr && val_features->rows() > 0) {
      Eigen::MatrixXd logits = x_val * weight.value;
      logits.rowwise() += bias.value.row(0);
      const double macro = macro_of(sigmoid(logits), *val_targets);
      local.val_macro.push_back(macro);
      if (std::isfinite(macro) && macro > best_macro) {
        best_macro = macro;
        local.best_epoch = epoch;
        best = fold(weight.value, bias.value);
      }
    }
  }
  if (local.best_epoch < 0) best = fold(weight.value, bias.value);
  local.steps = step;
  if (history != nullptr) *history = local;
  return best;
}

ClassifierResult linear_probe(const Checkpoint* init, const LabelBudget& budget, const RunConfig& config,
                              PairedDataset& data, View view, std::uint64_t seed) {
  if (init == nullptr) throw ContractError("linear probing requires a pretrained checkpoint");
  if (budget.pair_ids.empty()) throw ConfigError("label budget is empty");
  Classifier clf(backbone_config_from_json(init->metadata.backbone), data.num_labels, view, mix_seed(seed, 41));
  load_parameters(clf.backbone().params(), init->params);

  // The encoder is frozen, so CLS features are computed once, unaugmented.
  auto features = [&](std::span<const std::size_t> ids) {
    Eigen::MatrixXd f(static_cast<Eigen::Index>(ids.size()), clf.backbone().config().embed_dim);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      f.row(static_cast<Eigen::Index>(i)) = clf.backbone().cls_embedding(view_image(data, ids[i], view)).transpose();
    }
    return f;
  };
  const std::vector<std::size_t> val_ids = data.indices(Split::val);
  const Eigen::MatrixXd train_x = features(budget.pair_ids);
  const Eigen::MatrixXd train_y = label_matrix(data, budget.pair_ids);
  const Eigen::MatrixXd val_x = features(val_ids);
  const Eigen::MatrixXd val_y = label_matrix(data, val_ids);

  TrainHistory history;
  const LinearHead head =
      train_linear_head(train_x, train_y, &val_x, &val_y, config.probe, mix_seed(seed, 67), &history);
  clf.head().at("head.weight").value = head.weight;
  clf.head().at("head.bias").value = head.bias;
  return ClassifierResult{std::move(clf), std::move(history)};
}

Eigen::MatrixXd score_images(const Classifier& classifier, std::span<const ImageTensor* const> images) {
  Eigen::MatrixXd logits(static_cast<Eigen::Index>(images.size()), classifier.num_labels());
  for (std::size_t i = 0; i < images.size(); ++i) {
    logits.row(static_cast<Eigen::Index>(i)) = classifier.logits(*images[i]);
  }
  return sigmoid(logits);
}

ViewScores score_view(const Classifier& classifier, PairedDataset& data, std::span<const std::size_t> pair_ids,
                      View view) {
  std::vector<const ImageTensor*> images;
  images.reserve(pair_ids.size());
  for (std::size_t id : pair_ids) images.push_back(&view_image(data, id, view));
  return ViewScores{std::vector<std::size_t>(pair_ids.begin(), pair_ids.end()), score_images(classifier, images)};
}

ViewScores ensemble_scores(const ViewScores& frontal, const ViewScores& lateral) {
  if (frontal.pair_ids != lateral.pair_ids) throw ContractError("ensemble inputs cover different pairs");
  if (frontal.probs.rows() != lateral.probs.rows() || frontal.probs.cols() != lateral.probs.cols()) {
    throw ContractError("ensemble inputs differ in label width");
  }
  return ViewScores{frontal.pair_ids, (frontal.probs + lateral.probs) * 0.5};
}

std::vector<std::string> label_names(int num_labels) {
  std::vector<std::string> names;
  for (int l = 0; l < num_labels; ++l) {
    if (num_labels == static_cast<int>(kNumChexpertLabels)) {
      names.emplace_back(kChexpertLabels[static_cast<std::size_t>(l)]);
    } else {
      names.push_back("label_" + std::to_string(l));
    }
  }
  return names;
}

EvalReport make_report(const ViewScores& scores, const PairedDataset& data, const std::string& method,
                       Scenario scenario, long budget, std::uint64_t seed) {
  const std::size_t n = scores.pair_ids.size();
  const auto L = static_cast<std::size_t>(data.num_labels);
  std::vector<double> s(n * L);
  std::vector<std::uint8_t> y(n * L);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < L; ++l) {
      s[i * L + l] = scores.probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l));
      y[i * L + l] = data.pairs[scores.pair_ids[i]].labels[l];
    }
  }
  const MacroAuroc m = macro_auroc(s, y, L);
  EvalReport r;
  r.method = method;
  r.scenario = scenario;
  r.budget = budget;
  r.seed = seed;
  r.label_names = label_names(data.num_labels);
  r.per_label = m.per_label;
  r.macro_auroc = m.macro;
  r.num_samples = n;
  return r;
}

std::vector<EvalReport> evaluate(const Classifier& frontal, const Classifier& lateral, PairedDataset& data,
                                 Split split, const std::string& method, long budget, std::uint64_t seed) {
  const std::vector<std::size_t> ids = data.indices(split);
  const ViewScores f = score_view(frontal, data, ids, View::frontal);
  const ViewScores l = score_view(lateral, data, ids, View::lateral);
  return {make_report(f, data, method, Scenario::frontal, budget, seed),
          make_report(l, data, method, Scenario::lateral, budget, seed),
          make_report(ensemble_scores(f, l), data, method, Scenario::ensemble, budget, seed)};
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_eval_csv(const std::filesystem::path& path, std::span<const EvalReport> reports) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << kEvalCsvHeader << '\n';
  for (const EvalReport& r : reports) {
    for (std::size_t l = 0; l < r.per_label.size(); ++l) {
      out << r.method << ',' << to_string(r.scenario) << ',' << budget_name(r.budget) << ',' << r.seed << ','
          << r.label_names[l] << ',' << (r.per_label[l] ? format_double(*r.per_label[l]) : "skipped") << ','
          << format_double(r.macro_auroc) << '\n';
    }
  }
}

std::optional<double> mean_macro(std::span<const EvalReport> reports, const std::string& method, Scenario scenario,
                                 long budget) {
  double sum = 0.0;
  int n = 0;
  for (const EvalReport& r : reports) {
    if (r.method == method && r.scenario == scenario && r.budget == budget) {
      sum += r.macro_auroc;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

SweepResult run_sweep(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream* log) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - t0).count(); };
  std::mutex log_mutex;
  auto say = [&](const std::string& msg) {
    const std::lock_guard lock(log_mutex);
    if (log != nullptr) *log << "[" << format_double(std::round(elapsed() * 10.0) / 10.0) << "s] " << msg << std::endl;
  };

  PairedDataset data = make_dataset(config);
  say("dataset: " + std::to_string(data.pairs.size()) + " pairs, train/val/test subjects " +
      std::to_string(data.split.sizes()[0]) + "/" + std::to_string(data.split.sizes()[1]) + "/" +
      std::to_string(data.split.sizes()[2]));
  std::vector<long> probe_budgets = config.eval.probe_budgets;
  if (probe_budgets.empty()) {
    long smallest = config.eval.budgets.front();
    for (long b : config.eval.budgets) {
      if (smallest == kFullBudget || (b != kFullBudget && b < smallest)) smallest = b;
    }
    probe_budgets.push_back(smallest);
  }

  // Seeds are independent; each worker owns its dataset copy so lazy image
  // loading never races, and results are merged back in seed order.
  struct SeedOutput {
    std::vector<EvalReport> reports;
    std::vector<std::pair<std::string, std::vector<EpochLoss>>> logs;
  };
  auto run_seed = [&](std::uint64_t seed, PairedDataset& ds, SeedOutput& out) {
    for (const std::string& method : config.eval.methods) {
      const Objective objective = parse_objective(method);
      std::optional<Checkpoint> init;
      if (objective != Objective::supervised) {
        PretrainResult pre = pretrain(config, objective, ds, seed);
        say("seed " + std::to_string(seed) + " pretrained " + method + " final loss " +
            (pre.log.empty() ? std::string("n/a") : format_double(pre.log.back().total)));
        if (!out_dir.empty()) {
          save_checkpoint(out_dir / ("pretrain_" + method + "_seed" + std::to_string(seed) + ".ckpt"),
                          pre.checkpoint);
        }
        out.logs.emplace_back(method + "/seed" + std::to_string(seed), pre.log);
        init = std::move(pre.checkpoint);
      }
      const Checkpoint* init_ptr = init ? &*init : nullptr;
      auto record = [&](const std::string& name, const std::string& stage, long budget_size,
                        const Classifier& f, const Classifier& l) {
        auto reports = evaluate(f, l, ds, Split::test, name, budget_size, seed);
        say("seed " + std::to_string(seed) + " " + method + " " + stage + " budget " + budget_name(budget_size) +
            " macro F/L/E " + format_double(reports[0].macro_auroc) + " / " + format_double(reports[1].macro_auroc) +
            " / " + format_double(reports[2].macro_auroc));
        out.reports.insert(out.reports.end(), reports.begin(), reports.end());
      };
      for (long budget_size : config.eval.budgets) {
        const LabelBudget budget = sample_budget(ds, budget_size, seed);
        const ClassifierResult f = finetune(init_ptr, budget, config, ds, View::frontal, seed);
        const ClassifierResult l = finetune(init_ptr, budget, config, ds, View::lateral, seed);
        record(method, "finetune", budget_size, f.classifier, l.classifier);
      }
      if (init_ptr != nullptr && config.eval.linear_probe) {
        for (long budget_size : probe_budgets) {
          const LabelBudget budget = sample_budget(ds, budget_size, seed);
          const ClassifierResult f = linear_probe(init_ptr, budget, config, ds, View::frontal, seed);
          const ClassifierResult l = linear_probe(init_ptr, budget, config, ds, View::lateral, seed);
          record(method + "-probe", "probe", budget_size, f.classifier, l.classifier);
        }
      }
    }
  };

  const std::size_t n_seeds = config.eval.seeds.size();
  std::vector<SeedOutput> outputs(n_seeds);
  const std::size_t workers = sweep_workers(config.eval.workers, n_seeds);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_seeds; ++i) run_seed(config.eval.seeds[i], data, outputs[i]);
  } else {
    say("running " + std::to_string(workers) + " seeds in parallel");
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          PairedDataset own = make_dataset(config);
          for (std::size_t i = next++; i < n_seeds; i = next++) run_seed(config.eval.seeds[i], own, outputs[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  SweepResult result;
  for (SeedOutput& o : outputs) {
    result.reports.insert(result.reports.end(), o.reports.begin(), o.reports.end());
    for (auto& entry : o.logs) result.pretrain_logs.push_back(std::move(entry));
  }
  result.wall_seconds = elapsed();
  if (!out_dir.empty()) {
    write_eval_csv(out_dir / "sweep.csv", result.reports);
    std::ofstream losses(out_dir / "pretrain_loss.csv", std::ios::binary | std::ios::trunc);
    losses << "run,epoch,total,rec,align,contrastive\n";
    for (const auto& [run, epochs] : result.pretrain_logs) {
      for (const EpochLoss& e : epochs) {
        losses << run << ',' << e.epoch << ',' << format_double(e.total) << ',' << format_double(e.rec) << ','
               << format_double(e.align) << ',' << format_double(e.contrastive) << '\n';
      }
    }
  }
  return result;
}

}  // namespace mvmae
