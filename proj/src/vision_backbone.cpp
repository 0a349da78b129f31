#include "mvmae/vision_backbone.hpp"

#include "mvmae/errors.hpp"

#include <array>
#include <cmath>
#include <cstring>

namespace mvmae {

BackboneConfig BackboneConfig::from_preset(const std::string& name) {
  BackboneConfig c;
  c.preset = name;
  if (name == "vit-desk") {
    return c;
  }
  if (name == "vit-b") {
    c.grid = PatchGrid{224, 16, 3};
    c.embed_dim = 768;
    c.depth = 12;
    c.num_heads = 12;
    c.mlp_ratio = 4.0;
    c.decoder_dim = 512;
    c.decoder_depth = 8;
    c.decoder_heads = 16;
    return c;
  }
  throw ConfigError("unknown backbone preset '" + name + "'");
}

void BackboneConfig::validate() const {
  grid.validate();
  if (embed_dim < 1 || depth < 1 || num_heads < 1) throw ConfigError("encoder sizes must be positive");
  if (embed_dim % num_heads != 0) throw ConfigError("embed_dim must be divisible by num_heads");
  if (decoder_dim < 1 || decoder_depth < 1 || decoder_heads < 1) throw ConfigError("decoder sizes must be positive");
  if (decoder_dim % decoder_heads != 0) throw ConfigError("decoder_dim must be divisible by decoder_heads");
  if (embed_dim % 4 != 0 || decoder_dim % 4 != 0) throw ConfigError("embed_dim and decoder_dim must be multiples of 4");
  if (decoder_depth >= depth) throw ConfigError("decoder must be shallower than the encoder");
  if (!(mlp_ratio > 0.0) || mlp_hidden() < 1 || decoder_mlp_hidden() < 1) throw ConfigError("mlp_ratio too small");
}

ag::Parameter& ParameterStore::add(const std::string& name, ag::Matrix init) {
  if (contains(name)) throw InternalError("duplicate parameter " + name);
  ag::Parameter p;
  p.value = std::move(init);
  p.zero_grad();
  entries_.emplace_back(name, std::move(p));
  return entries_.back().second;
}

ag::Parameter& ParameterStore::at(const std::string& name) {
  for (auto& [n, p] : entries_) {
    if (n == name) return p;
  }
  throw InternalError("unknown parameter " + name);
}

const ag::Parameter& ParameterStore::at(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->at(name);
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& [n, _] : entries_) {
    if (n == name) return true;
  }
  return false;
}

std::vector<ag::Parameter*> ParameterStore::select(const std::string& prefix) {
  std::vector<ag::Parameter*> out;
  for (auto& [n, p] : entries_) {
    if (n.starts_with(prefix)) out.push_back(&p);
  }
  return out;
}

std::size_t ParameterStore::count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, p] : entries_) {
    if (name.starts_with(prefix)) n += static_cast<std::size_t>(p.value.size());
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : entries_) p.zero_grad();
}

std::uint64_t parameter_hash(const ParameterStore& params, const std::string& prefix) {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, p] : params.entries()) {
    if (!name.starts_with(prefix)) continue;
    mix(name.data(), name.size());
    const std::int64_t shape[2] = {p.value.rows(), p.value.cols()};
    mix(shape, sizeof(shape));
    mix(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double));
  }
  return h;
}

Eigen::MatrixXd sinusoidal_positions_2d(int side, int width) {
  if (width % 4 != 0) throw ConfigError("2D position encoding needs a width divisible by 4");
  const int quarter = width / 4;
  Eigen::MatrixXd pe(side * side, width);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const int row = r * side + c;
      // First half encodes the grid row, second half the column.
      for (int axis = 0; axis < 2; ++axis) {
        const double pos = axis == 0 ? r : c;
        for (int i = 0; i < quarter; ++i) {
          const double omega = std::pow(10000.0, -static_cast<double>(i) / quarter);
          pe(row, axis * 2 * quarter + i) = std::sin(pos * omega);
          pe(row, axis * 2 * quarter + quarter + i) = std::cos(pos * omega);
        }
      }
    }
  }
  return pe;
}

Eigen::MatrixXd trunc_normal(int rows, int cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v = normal(rng);
    while (std::abs(v) > 2.0) v = normal(rng);
    m.data()[i] = v * std;
  }
  return m;
}

Eigen::MatrixXd xavier_uniform(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Eigen::MatrixXd m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

void VisionBackbone::add_block(const std::string& prefix, int width, int hidden, std::mt19937_64& rng) {
  params_.add(prefix + "ln1.gamma", ag::Matrix::Ones(1, width));
  params_.add(prefix + "ln1.beta", ag::Matrix::Zero(1, width));
  params_.add(prefix + "qkv.weight", xavier_uniform(width, 3 * width, rng));
  params_.add(prefix + "qkv.bias", ag::Matrix::Zero(1, 3 * width));
  params_.add(prefix + "proj.weight", xavier_uniform(width, width, rng));
  params_.add(prefix + "proj.bias", ag::Matrix::Zero(1, width));
  params_.add(prefix + "ln2.gamma", ag::Matrix::Ones(1, width));
  params_.add(prefix + "ln2.beta", ag::Matrix::Zero(1, width));
  params_.add(prefix + "fc1.weight", xavier_uniform(width, hidden, rng));
  params_.add(prefix + "fc1.bias", ag::Matrix::Zero(1, hidden));
  params_.add(prefix + "fc2.weight", xavier_uniform(hidden, width, rng));
  params_.add(prefix + "fc2.bias", ag::Matrix::Zero(1, width));
}

VisionBackbone::VisionBackbone(BackboneConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  const int d = config_.embed_dim;
  const int dd = config_.decoder_dim;
  const int pd = config_.grid.patch_dim();

  params_.add("encoder.patch_embed.weight", xavier_uniform(pd, d, rng));
  params_.add("encoder.patch_embed.bias", ag::Matrix::Zero(1, d));
  params_.add("encoder.cls_token", trunc_normal(1, d, 0.02, rng));
  for (int i = 0; i < config_.depth; ++i) {
    add_block("encoder.blocks." + std::to_string(i) + ".", d, config_.mlp_hidden(), rng);
  }
  params_.add("encoder.norm.gamma", ag::Matrix::Ones(1, d));
  params_.add("encoder.norm.beta", ag::Matrix::Zero(1, d));

  params_.add("decoder.embed.weight", xavier_uniform(d, dd, rng));
  params_.add("decoder.embed.bias", ag::Matrix::Zero(1, dd));
  params_.add("decoder.mask_token", trunc_normal(1, dd, 0.02, rng));
  for (int i = 0; i < config_.decoder_depth; ++i) {
    add_block("decoder.blocks." + std::to_string(i) + ".", dd, config_.decoder_mlp_hidden(), rng);
  }
  params_.add("decoder.norm.gamma", ag::Matrix::Ones(1, dd));
  params_.add("decoder.norm.beta", ag::Matrix::Zero(1, dd));
  params_.add("decoder.pred.weight", xavier_uniform(dd, pd, rng));
  params_.add("decoder.pred.bias", ag::Matrix::Zero(1, pd));

  enc_pos_ = sinusoidal_positions_2d(config_.grid.tokens_per_side(), d);
  dec_pos_ = sinusoidal_positions_2d(config_.grid.tokens_per_side(), dd);
}

ag::Var VisionBackbone::block(ag::Tape& t, ag::Var x, const std::string& prefix, int heads) {
  auto P = [&](const char* name) { return t.param(params_.at(prefix + name)); };
  const int w = static_cast<int>(t.value(x).cols());
  ag::Var h = ag::layer_norm(t, x, P("ln1.gamma"), P("ln1.beta"));
  ag::Var qkv = ag::linear(t, h, P("qkv.weight"), P("qkv.bias"));
  ag::Var q = ag::slice_cols(t, qkv, 0, w);
  ag::Var k = ag::slice_cols(t, qkv, w, w);
  ag::Var v = ag::slice_cols(t, qkv, 2 * w, w);
  ag::Var a = ag::attention(t, q, k, v, heads);
  x = ag::add(t, x, ag::linear(t, a, P("proj.weight"), P("proj.bias")));
  h = ag::layer_norm(t, x, P("ln2.gamma"), P("ln2.beta"));
  h = ag::gelu(t, ag::linear(t, h, P("fc1.weight"), P("fc1.bias")));
  return ag::add(t, x, ag::linear(t, h, P("fc2.weight"), P("fc2.bias")));
}

ag::Var VisionBackbone::encode(ag::Tape& t, const VisibleTokens& visible) {
  const int T = config_.grid.num_tokens();
  if (visible.tokens.rows() != static_cast<Eigen::Index>(visible.positions.size()) ||
      visible.tokens.cols() != config_.grid.patch_dim()) {
    throw InternalError("visible token matrix has the wrong shape");
  }
  Eigen::MatrixXd pos(visible.tokens.rows(), config_.embed_dim);
  for (std::size_t i = 0; i < visible.positions.size(); ++i) {
    const int p = visible.positions[i];
    if (p < 0 || p >= T) throw InternalError("token position out of range");
    pos.row(static_cast<Eigen::Index>(i)) = enc_pos_.row(p);
  }

  ag::Var x = ag::linear(t, t.constant(visible.tokens), t.param(params_.at("encoder.patch_embed.weight")),
                         t.param(params_.at("encoder.patch_embed.bias")));
  x = ag::add(t, x, t.constant(std::move(pos)));
  const std::array<ag::Var, 2> parts{t.param(params_.at("encoder.cls_token")), x};
  x = ag::concat_rows(t, parts);
  for (int i = 0; i < config_.depth; ++i) {
    x = block(t, x, "encoder.blocks." + std::to_string(i) + ".", config_.num_heads);
    if (!t.value(x).allFinite()) {
      throw NumericError("non-finite activation in encoder block " + std::to_string(i), i);
    }
  }
  x = ag::layer_norm(t, x, t.param(params_.at("encoder.norm.gamma")), t.param(params_.at("encoder.norm.beta")));
  if (!t.value(x).allFinite()) {
    throw NumericError("non-finite activation in encoder norm", config_.depth);
  }
  return x;
}

ag::Var VisionBackbone::decode(ag::Tape& t, ag::Var latents, const MaskPlan& plan) {
  const int T = config_.grid.num_tokens();
  const auto n_vis = static_cast<int>(plan.visible.size());
  if (plan.num_tokens != T || t.value(latents).rows() != 1 + n_vis ||
      t.value(latents).cols() != config_.embed_dim) {
    throw InternalError("latents are inconsistent with the mask plan");
  }
  ag::Var x = ag::linear(t, latents, t.param(params_.at("decoder.embed.weight")),
                         t.param(params_.at("decoder.embed.bias")));
  const std::array<ag::Var, 2> parts{x, t.param(params_.at("decoder.mask_token"))};
  x = ag::concat_rows(t, parts);

  // Row 0 stays CLS; row 1 + t is the visible latent at t or the mask token.
  std::vector<int> layout(static_cast<std::size_t>(T) + 1);
  layout[0] = 0;
  const int mask_row = 1 + n_vis;
  std::size_t vi = 0;
  for (int pos = 0; pos < T; ++pos) {
    if (vi < plan.visible.size() && plan.visible[vi] == pos) {
      layout[static_cast<std::size_t>(pos) + 1] = 1 + static_cast<int>(vi++);
    } else {
      layout[static_cast<std::size_t>(pos) + 1] = mask_row;
    }
  }
  x = ag::gather_rows(t, x, layout);
  Eigen::MatrixXd pos = Eigen::MatrixXd::Zero(T + 1, config_.decoder_dim);
  pos.bottomRows(T) = dec_pos_;
  x = ag::add(t, x, t.constant(std::move(pos)));
  for (int i = 0; i < config_.decoder_depth; ++i) {
    x = block(t, x, "decoder.blocks." + std::to_string(i) + ".", config_.decoder_heads);
    if (!t.value(x).allFinite()) {
      throw NumericError("non-finite activation in decoder block " + std::to_string(i), config_.depth + i);
    }
  }
  x = ag::layer_norm(t, x, t.param(params_.at("decoder.norm.gamma")), t.param(params_.at("decoder.norm.beta")));
  x = ag::linear(t, x, t.param(params_.at("decoder.pred.weight")), t.param(params_.at("decoder.pred.bias")));
  std::vector<int> drop_cls(static_cast<std::size_t>(T));
  for (int pos_i = 0; pos_i < T; ++pos_i) drop_cls[static_cast<std::size_t>(pos_i)] = pos_i + 1;
  return ag::gather_rows(t, x, drop_cls);
}

LatentSequence to_latent_sequence(const Eigen::MatrixXd& rows, const std::vector<int>& positions) {
  LatentSequence out;
  out.cls = rows.row(0).transpose();
  out.tokens = rows.bottomRows(rows.rows() - 1);
  out.positions = positions;
  return out;
}

LatentSequence VisionBackbone::encode(const VisibleTokens& visible) const {
  ag::Tape t(false);
  auto* self = const_cast<VisionBackbone*>(this);  // a non-recording tape never writes parameters
  return to_latent_sequence(t.value(self->encode(t, visible)), visible.positions);
}

Eigen::MatrixXd VisionBackbone::decode(const LatentSequence& latents, const MaskPlan& plan) const {
  ag::Tape t(false);
  Eigen::MatrixXd rows(latents.tokens.rows() + 1, config_.embed_dim);
  rows.row(0) = latents.cls.transpose();
  rows.bottomRows(latents.tokens.rows()) = latents.tokens;
  auto* self = const_cast<VisionBackbone*>(this);
  return t.value(self->decode(t, t.constant(std::move(rows)), plan));
}

Eigen::VectorXd VisionBackbone::cls_embedding(const ImageTensor& image) const {
  const Eigen::MatrixXd tokens = patchify(image, config_.grid);
  return encode(select_visible(tokens, empty_mask(config_.grid.num_tokens()))).cls;
}

}  // namespace mvmae
