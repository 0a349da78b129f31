#include "mvmae/synthetic_views.hpp"

#include "mvmae/errors.hpp"
#include "mvmae/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace mvmae {

namespace {

constexpr int kCellsPerSide = 4;

std::string pad5(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", i);
  return buf;
}

// Anchor cell of a primitive type; 5 is coprime with 16 so types < 16 get
// distinct cells.
std::pair<double, double> anchor(int type, int image_size) {
  const int cell = (type * 5 + 1) % (kCellsPerSide * kCellsPerSide);
  const double size = static_cast<double>(image_size) / kCellsPerSide;
  return {(cell % kCellsPerSide + 0.5) * size, (cell / kCellsPerSide + 0.5) * size};
}

// Shape indicator in units where the cell is 8 pixels wide at scale 1.
bool inside(int shape, double u, double v) {
  const double r = std::hypot(u, v);
  switch (shape) {
    case 0: return r <= 2.5;
    case 1: return std::abs(u) <= 2.0 && std::abs(v) <= 2.0;
    case 2: return r >= 2.0 && r <= 3.2;
    default: return (std::abs(u) <= 0.75 && std::abs(v) <= 3.0) || (std::abs(v) <= 0.75 && std::abs(u) <= 3.0);
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (patch_size < 1 || image_size < 1 || image_size % patch_size != 0) {
    throw ConfigError("synthetic image_size must be divisible by the patch size");
  }
  if (num_pairs < 1 || num_labels < 1) throw ConfigError("num_pairs and num_labels must be positive");
  if (latent_classes < 2 || latent_classes > kCellsPerSide * kCellsPerSide) {
    throw ConfigError("latent_classes must lie in [2, 16]");
  }
  if (min_primitives < 1 || max_primitives < min_primitives || max_primitives > latent_classes) {
    throw ConfigError("primitive count range is invalid");
  }
  if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
  if (!(primitive_scale > 0.0)) throw ConfigError("primitive_scale must be positive");
  if (position_jitter < 0) throw ConfigError("position_jitter must be non-negative");
  if (pairs_per_subject < 1) throw ConfigError("pairs_per_subject must be positive");
  if ((num_pairs + pairs_per_subject - 1) / pairs_per_subject < 3) {
    throw ConfigError("synthetic data needs at least 3 subjects");
  }
}

LabelVector synthetic_label_function(const std::vector<std::uint8_t>& presence, int num_labels) {
  const int k = static_cast<int>(presence.size());
  LabelVector labels(static_cast<std::size_t>(num_labels), 0);
  for (int j = 0; j < num_labels; ++j) {
    if (j < k) {
      labels[static_cast<std::size_t>(j)] = presence[static_cast<std::size_t>(j)];
      continue;
    }
    const int m = j - k;
    const int a = m % k;
    const int b = (a + 1 + (m / k) % (k - 1)) % k;
    const bool pa = presence[static_cast<std::size_t>(a)] != 0;
    const bool pb = presence[static_cast<std::size_t>(b)] != 0;
    labels[static_cast<std::size_t>(j)] = static_cast<std::uint8_t>(m % 2 == 0 ? (pa && pb) : (pa || pb));
  }
  return labels;
}

ImageTensor render_view(const std::vector<Primitive>& latent, const SyntheticSpec& spec, double shear) {
  const int n = spec.image_size;
  const double unit = n / 32.0;
  ImageTensor img(1, n, n);
  const double center = n / 2.0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // Lateral pixels sample the frontal layout through a horizontal shear.
      const double sx = x + 0.5 + shear * (y + 0.5 - center);
      const double sy = y + 0.5;
      double v = 0.0;
      for (const Primitive& p : latent) {
        const auto [ax, ay] = anchor(p.type, n);
        const double u = (sx - ax - p.dx * unit) / (unit * spec.primitive_scale);
        const double w = (sy - ay - p.dy * unit) / (unit * spec.primitive_scale);
        if (inside(p.type % 4, u, w)) v = std::max(v, p.intensity);
      }
      img.at(0, y, x) = v;
    }
  }
  return img;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 latent_rng(spec.seed);
  std::mt19937_64 noise_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> count_dist(spec.min_primitives, spec.max_primitives);
  std::uniform_int_distribution<int> jitter(-spec.position_jitter, spec.position_jitter);
  std::uniform_real_distribution<double> intensity(0.6, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  SyntheticDataset out;
  PairedDataset& ds = out.dataset;
  ds.num_labels = spec.num_labels;
  ds.images = std::make_shared<ImageStore>();
  std::set<std::string> subjects;

  std::vector<int> types(static_cast<std::size_t>(spec.latent_classes));
  for (int i = 0; i < spec.num_pairs; ++i) {
    std::iota(types.begin(), types.end(), 0);
    const int count = count_dist(latent_rng);
    for (int j = 0; j < count; ++j) {
      std::uniform_int_distribution<int> pick(j, spec.latent_classes - 1);
      std::swap(types[static_cast<std::size_t>(j)], types[static_cast<std::size_t>(pick(latent_rng))]);
    }
    std::vector<Primitive> latent;
    std::vector<std::uint8_t> presence(static_cast<std::size_t>(spec.latent_classes), 0);
    for (int j = 0; j < count; ++j) {
      const int type = types[static_cast<std::size_t>(j)];
      presence[static_cast<std::size_t>(type)] = 1;
      const int jx = jitter(latent_rng);
      const int jy = jitter(latent_rng);
      latent.push_back(Primitive{type, static_cast<double>(jx), static_cast<double>(jy), intensity(latent_rng)});
    }

    ImageTensor frontal = render_view(latent, spec, 0.0);
    ImageTensor lateral = render_view(latent, spec, spec.lateral_shear);
    for (double& v : frontal.data) v += spec.noise_std * noise(noise_rng);
    for (double& v : lateral.data) v += spec.noise_std * noise(noise_rng);

    const std::string id = pad5(i);
    ViewPair pair;
    pair.study_id = "syn-study-" + id;
    pair.subject_id = "syn-subject-" + pad5(i / spec.pairs_per_subject);
    pair.frontal_ref = "syn/" + id + "_frontal.png";
    pair.lateral_ref = "syn/" + id + "_lateral.png";
    pair.labels = synthetic_label_function(presence, spec.num_labels);
    frontal.provenance = pair.frontal_ref;
    lateral.provenance = pair.lateral_ref;
    ds.images->insert(pair.frontal_ref, std::move(frontal));
    ds.images->insert(pair.lateral_ref, std::move(lateral));
    subjects.insert(pair.subject_id);
    ds.pairs.push_back(std::move(pair));
    out.latents.push_back(std::move(latent));
  }
  ds.split = split_subjects(subjects, spec.split_ratios, spec.seed);
  return out;
}

void export_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir) {
  const PairedDataset& ds = data.dataset;
  if (ds.num_labels != static_cast<int>(kNumChexpertLabels)) {
    throw ConfigError("manifest export needs exactly 14 labels");
  }
  std::filesystem::create_directories(dir / "syn");
  std::vector<StudyRecord> studies;
  for (const ViewPair& p : ds.pairs) {
    StudyRecord s{p.study_id, p.subject_id, {p.frontal_ref}, {p.lateral_ref}, {}};
    for (std::uint8_t l : p.labels) s.raw_labels.push_back(l != 0 ? LabelState::positive : LabelState::negative);
    save_grayscale_png(dir / p.frontal_ref, ds.images->get(p.frontal_ref), 0.0, 1.0);
    save_grayscale_png(dir / p.lateral_ref, ds.images->get(p.lateral_ref), 0.0, 1.0);
    studies.push_back(std::move(s));
  }
  write_manifest(dir / "manifest.tsv", studies);
}

}  // namespace mvmae
