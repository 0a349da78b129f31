#include "mvmae/config.hpp"

#include "mvmae/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace mvmae {

namespace {

// Walks one JSON object, reading known keys and rejecting the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key '" + field(key) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_optimizer(const json& j, const std::string& path, OptimizerConfig& o) {
  Reader r(j, path);
  r.get("lr", o.lr);
  r.get("min_lr", o.min_lr);
  r.get("weight_decay", o.weight_decay);
  r.get("beta1", o.beta1);
  r.get("beta2", o.beta2);
  r.get("eps", o.eps);
  r.get("warmup_epochs", o.warmup_epochs);
  r.finish();
  if (o.lr < 0.0 || o.min_lr < 0.0) throw ConfigError(path + ": learning rates must be non-negative");
  if (o.warmup_epochs < 0) throw ConfigError(path + ".warmup_epochs: must be non-negative");
}

void read_augment(const json& j, const std::string& path, AugmentConfig& a) {
  Reader r(j, path);
  r.get("random_resized_crop", a.random_resized_crop);
  r.get("crop_min_scale", a.crop_min_scale);
  r.get("horizontal_flip", a.horizontal_flip);
  r.get("intensity_jitter", a.intensity_jitter);
  r.get("jitter_strength", a.jitter_strength);
  r.finish();
  if (!(a.crop_min_scale > 0.0 && a.crop_min_scale <= 1.0)) {
    throw ConfigError(path + ".crop_min_scale: must lie in (0, 1]");
  }
}

void read_stage(const json& j, const std::string& path, StageConfig& s) {
  Reader r(j, path);
  r.get("epochs", s.epochs);
  r.get("min_steps", s.min_steps);
  r.get("batch_size", s.batch_size);
  if (const json* o = r.child("optimizer")) read_optimizer(*o, r.field("optimizer"), s.optimizer);
  if (const json* a = r.child("augment")) read_augment(*a, r.field("augment"), s.augment);
  r.finish();
  if (s.epochs < 0) throw ConfigError(path + ".epochs: must be non-negative");
  if (s.min_steps < 0) throw ConfigError(path + ".min_steps: must be non-negative");
  if (s.batch_size < 1) throw ConfigError(path + ".batch_size: must be positive");
}

json to_json(const StageConfig& s) {
  const auto& o = s.optimizer;
  const auto& a = s.augment;
  return json{{"epochs", s.epochs},
              {"min_steps", s.min_steps},
              {"batch_size", s.batch_size},
              {"optimizer",
               {{"lr", o.lr},
                {"min_lr", o.min_lr},
                {"weight_decay", o.weight_decay},
                {"beta1", o.beta1},
                {"beta2", o.beta2},
                {"eps", o.eps},
                {"warmup_epochs", o.warmup_epochs}}},
              {"augment",
               {{"random_resized_crop", a.random_resized_crop},
                {"crop_min_scale", a.crop_min_scale},
                {"horizontal_flip", a.horizontal_flip},
                {"intensity_jitter", a.intensity_jitter},
                {"jitter_strength", a.jitter_strength}}}};
}

template <class T>
T parse_enum(Reader& r, const char* key, T fallback, T (*parse)(const std::string&)) {
  std::string name;
  r.get(key, name);
  if (name.empty()) return fallback;
  try {
    return parse(name);
  } catch (const ConfigError& e) {
    throw ConfigError(r.field(key) + ": " + e.what());
  }
}

}  // namespace

std::string budget_name(long budget) { return budget == kFullBudget ? "full" : std::to_string(budget); }

long parse_budget(const json& j) {
  if (j.is_string() && j.get<std::string>() == "full") return kFullBudget;
  if (j.is_number_integer() && j.get<long>() > 0) return j.get<long>();
  throw ConfigError("budget must be a positive integer or \"full\"");
}

json to_json(const BackboneConfig& c) {
  return json{{"preset", c.preset},
              {"image_size", c.grid.image_size},
              {"patch_size", c.grid.patch_size},
              {"channels", c.grid.channels},
              {"embed_dim", c.embed_dim},
              {"depth", c.depth},
              {"num_heads", c.num_heads},
              {"mlp_ratio", c.mlp_ratio},
              {"decoder_dim", c.decoder_dim},
              {"decoder_depth", c.decoder_depth},
              {"decoder_heads", c.decoder_heads},
              {"init_seed", c.init_seed}};
}

BackboneConfig backbone_config_from_json(const json& j) {
  Reader r(j, "backbone");
  std::string preset = "vit-desk";
  r.get("preset", preset);
  BackboneConfig c;
  try {
    c = BackboneConfig::from_preset(preset);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("backbone.preset: ") + e.what());
  }
  r.get("image_size", c.grid.image_size);
  r.get("patch_size", c.grid.patch_size);
  r.get("channels", c.grid.channels);
  r.get("embed_dim", c.embed_dim);
  r.get("depth", c.depth);
  r.get("num_heads", c.num_heads);
  r.get("mlp_ratio", c.mlp_ratio);
  r.get("decoder_dim", c.decoder_dim);
  r.get("decoder_depth", c.decoder_depth);
  r.get("decoder_heads", c.decoder_heads);
  r.get("init_seed", c.init_seed);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("backbone: ") + e.what());
  }
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  r.get("schema_version", c.schema_version);
  if (c.schema_version != kConfigSchemaVersion) {
    throw ConfigError("schema_version: unsupported version " + std::to_string(c.schema_version));
  }
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);

  if (const json* d = r.child("data")) {
    Reader dr(*d, "data");
    dr.get("source", c.data.source);
    dr.get("manifest", c.data.manifest);
    dr.get("data_root", c.data.data_root);
    dr.get("split_ratios", c.data.split_ratios);
    if (const json* p = dr.child("preprocess")) {
      Reader pr(*p, "data.preprocess");
      auto& pp = c.data.preprocess;
      pr.get("image_size", pp.image_size);
      pr.get("channels", pp.channels);
      pr.get("mean", pp.mean);
      pr.get("std", pp.std);
      pp.interpolation = parse_enum<Interpolation>(pr, "interpolation", pp.interpolation, parse_interpolation);
      pr.finish();
    }
    if (const json* s = dr.child("synthetic")) {
      Reader sr(*s, "data.synthetic");
      auto& sp = c.data.synthetic;
      sr.get("image_size", sp.image_size);
      sr.get("num_pairs", sp.num_pairs);
      sr.get("num_labels", sp.num_labels);
      sr.get("latent_classes", sp.latent_classes);
      sr.get("min_primitives", sp.min_primitives);
      sr.get("max_primitives", sp.max_primitives);
      sr.get("noise_std", sp.noise_std);
      sr.get("primitive_scale", sp.primitive_scale);
      sr.get("position_jitter", sp.position_jitter);
      sr.get("lateral_shear", sp.lateral_shear);
      sr.get("pairs_per_subject", sp.pairs_per_subject);
      sr.get("seed", sp.seed);
      sr.finish();
    }
    dr.finish();
    if (c.data.source != "synthetic" && c.data.source != "manifest") {
      throw ConfigError("data.source: must be \"synthetic\" or \"manifest\"");
    }
  }
  if (const json* b = r.child("backbone")) c.backbone = backbone_config_from_json(*b);

  if (const json* o = r.child("objective")) {
    Reader orr(*o, "objective");
    orr.get("mask_ratio", c.objective.mask_ratio);
    orr.get("beta", c.objective.beta);
    orr.get("temperature", c.objective.temperature);
    orr.get("norm_pix_loss", c.objective.norm_pix_loss);
    c.objective.align_mode = parse_enum<AlignMode>(orr, "align_mode", c.objective.align_mode, parse_align_mode);
    c.objective.denominator =
        parse_enum<ContrastiveDenominator>(orr, "denominator", c.objective.denominator, parse_denominator);
    orr.finish();
  }
  if (const json* s = r.child("pretrain")) read_stage(*s, "pretrain", c.pretrain);
  if (const json* s = r.child("finetune")) read_stage(*s, "finetune", c.finetune);
  if (const json* s = r.child("probe")) read_stage(*s, "probe", c.probe);

  if (const json* e = r.child("eval")) {
    Reader er(*e, "eval");
    er.get("methods", c.eval.methods);
    er.get("seeds", c.eval.seeds);
    er.get("linear_probe", c.eval.linear_probe);
    er.get("workers", c.eval.workers);
    auto budgets = [&](const char* key, std::vector<long>& out) {
      if (const json* b = er.child(key)) {
        if (!b->is_array()) throw ConfigError(er.field(key) + ": expected an array");
        out.clear();
        for (const json& item : *b) {
          try {
            out.push_back(parse_budget(item));
          } catch (const ConfigError& err) {
            throw ConfigError(er.field(key) + ": " + err.what());
          }
        }
      }
    };
    budgets("budgets", c.eval.budgets);
    budgets("probe_budgets", c.eval.probe_budgets);
    er.finish();
  }
  if (const json* a = r.child("acceptance")) {
    Reader ar(*a, "acceptance");
    ar.get("min_pretrain_margin", c.acceptance.min_pretrain_margin);
    ar.get("min_finetune_over_probe", c.acceptance.min_finetune_over_probe);
    ar.finish();
  }
  r.finish();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  backbone.validate();
  if (!(objective.mask_ratio >= 0.0 && objective.mask_ratio <= 1.0)) {
    throw ConfigError("objective.mask_ratio: must lie in [0, 1]");
  }
  if (!(objective.temperature > 0.0)) throw ConfigError("objective.temperature: must be positive");
  const double sum = data.split_ratios[0] + data.split_ratios[1] + data.split_ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("data.split_ratios: must sum to 1");
  if (data.source == "synthetic") {
    SyntheticSpec spec = data.synthetic;
    spec.patch_size = backbone.grid.patch_size;
    try {
      spec.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("data.synthetic: ") + e.what());
    }
    if (spec.image_size != backbone.grid.image_size || backbone.grid.channels != 1) {
      throw ConfigError("backbone: synthetic data needs image_size " + std::to_string(spec.image_size) +
                        " and 1 channel");
    }
  } else {
    if (data.manifest.empty()) throw ConfigError("data.manifest: required when data.source is \"manifest\"");
    try {
      data.preprocess.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("data.preprocess: ") + e.what());
    }
    if (data.preprocess.image_size != backbone.grid.image_size || data.preprocess.channels != backbone.grid.channels) {
      throw ConfigError("backbone: image_size/channels must match data.preprocess");
    }
  }
  for (const std::string& m : eval.methods) {
    if (m != "supervised" && m != "mvmae" && m != "contrastive") {
      throw ConfigError("eval.methods: unknown method '" + m + "'");
    }
  }
  if (eval.budgets.empty()) throw ConfigError("eval.budgets: at least one budget is required");
  if (eval.seeds.empty()) throw ConfigError("eval.seeds: at least one seed is required");
  if (eval.workers < 0) throw ConfigError("eval.workers: must be non-negative");
}

json to_json(const RunConfig& c) {
  const auto& pp = c.data.preprocess;
  const auto& sp = c.data.synthetic;
  json budgets = json::array();
  for (long b : c.eval.budgets) budgets.push_back(b == kFullBudget ? json("full") : json(b));
  json probe_budgets = json::array();
  for (long b : c.eval.probe_budgets) probe_budgets.push_back(b == kFullBudget ? json("full") : json(b));
  return json{
      {"schema_version", c.schema_version},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"source", c.data.source},
        {"manifest", c.data.manifest},
        {"data_root", c.data.data_root},
        {"split_ratios", c.data.split_ratios},
        {"preprocess",
         {{"image_size", pp.image_size},
          {"channels", pp.channels},
          {"mean", pp.mean},
          {"std", pp.std},
          {"interpolation", to_string(pp.interpolation)}}},
        {"synthetic",
         {{"image_size", sp.image_size},
          {"num_pairs", sp.num_pairs},
          {"num_labels", sp.num_labels},
          {"latent_classes", sp.latent_classes},
          {"min_primitives", sp.min_primitives},
          {"max_primitives", sp.max_primitives},
          {"noise_std", sp.noise_std},
          {"primitive_scale", sp.primitive_scale},
          {"position_jitter", sp.position_jitter},
          {"lateral_shear", sp.lateral_shear},
          {"pairs_per_subject", sp.pairs_per_subject},
          {"seed", sp.seed}}}}},
      {"backbone", to_json(c.backbone)},
      {"objective",
       {{"mask_ratio", c.objective.mask_ratio},
        {"beta", c.objective.beta},
        {"temperature", c.objective.temperature},
        {"align_mode", to_string(c.objective.align_mode)},
        {"denominator", to_string(c.objective.denominator)},
        {"norm_pix_loss", c.objective.norm_pix_loss}}},
      {"pretrain", to_json(c.pretrain)},
      {"finetune", to_json(c.finetune)},
      {"probe", to_json(c.probe)},
      {"eval",
       {{"methods", c.eval.methods},
        {"budgets", budgets},
        {"seeds", c.eval.seeds},
        {"linear_probe", c.eval.linear_probe},
        {"workers", c.eval.workers},
        {"probe_budgets", probe_budgets}}},
      {"acceptance",
       {{"min_pretrain_margin", c.acceptance.min_pretrain_margin},
        {"min_finetune_over_probe", c.acceptance.min_finetune_over_probe}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(json& document, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json* node = &document;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("override: unknown config key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("override: '" + path + "' is not a scalar field");
  json value = json::parse(raw, nullptr, false);
  *node = value.is_discarded() ? json(raw) : value;
}

std::string config_hash(const RunConfig& c) {
  const std::string text = to_json(c).dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mvmae
