#include "mvmae/data_pipeline.hpp"

#include "mvmae/errors.hpp"
#include "mvmae/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace mvmae {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

Projection parse_projection(std::string_view token) {
  if (token == "PA") return Projection::PA;
  if (token == "AP") return Projection::AP;
  if (token == "LL") return Projection::LL;
  if (token == "Lateral" || token == "LATERAL") return Projection::Lateral;
  throw SchemaError("bad projection token '" + std::string(token) + "'");
}

ViewFamily family_of(Projection p) {
  return (p == Projection::PA || p == Projection::AP) ? ViewFamily::frontal : ViewFamily::lateral;
}

LabelState parse_label_state(std::string_view token) {
  if (token == "positive" || token == "1" || token == "1.0") return LabelState::positive;
  if (token == "negative" || token == "0" || token == "0.0") return LabelState::negative;
  if (token == "not-mentioned" || token == "not_mentioned" || token.empty()) return LabelState::not_mentioned;
  if (token == "uncertain" || token == "-1" || token == "-1.0") return LabelState::uncertain;
  throw SchemaError("unknown label state '" + std::string(token) + "'");
}

std::string_view to_string(LabelState s) {
  switch (s) {
    case LabelState::positive: return "positive";
    case LabelState::negative: return "negative";
    case LabelState::not_mentioned: return "not-mentioned";
    case LabelState::uncertain: return "uncertain";
  }
  return "";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "";
}

Split parse_split(std::string_view token) {
  if (token == "train") return Split::train;
  if (token == "val") return Split::val;
  if (token == "test") return Split::test;
  throw SchemaError("unknown split '" + std::string(token) + "'");
}

Split SplitAssignment::of(const std::string& subject_id) const {
  const auto it = by_subject.find(subject_id);
  if (it == by_subject.end()) throw ContractError("subject '" + subject_id + "' has no split");
  return it->second;
}

std::array<std::size_t, 3> SplitAssignment::sizes() const {
  std::array<std::size_t, 3> n{};
  for (const auto& [_, s] : by_subject) ++n[static_cast<std::size_t>(s)];
  return n;
}

std::vector<ViewPair> enumerate_pairs(std::span<const StudyRecord> studies) {
  std::vector<ViewPair> pairs;
  std::set<std::pair<std::string, std::string>> seen;
  for (const StudyRecord& s : studies) {
    if (s.frontal_refs.empty() || s.lateral_refs.empty()) continue;
    const LabelVector labels = collapse_labels(s.raw_labels);
    for (const std::string& f : s.frontal_refs) {
      for (const std::string& l : s.lateral_refs) {
        if (!seen.emplace(f, l).second) {
          throw MalformedMetadataError("duplicate pair (" + f + ", " + l + ") in study " + s.study_id);
        }
        pairs.push_back(ViewPair{s.study_id, s.subject_id, f, l, labels});
      }
    }
  }
  return pairs;
}

LabelVector collapse_labels(std::span<const LabelState> raw) {
  if (raw.size() != kNumChexpertLabels) {
    throw SchemaError("label vector has " + std::to_string(raw.size()) + " entries, expected 14");
  }
  LabelVector out(raw.size());
  std::transform(raw.begin(), raw.end(), out.begin(),
                 [](LabelState s) { return static_cast<std::uint8_t>(s == LabelState::positive); });
  return out;
}

std::array<std::size_t, 3> largest_remainder_counts(std::size_t n, const std::array<double, 3>& ratios) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  for (double r : ratios) {
    if (r < 0.0) throw ConfigError("split ratios must be non-negative");
  }
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    // Guard against 0.1 * 10 = 0.9999... landing one short.
    const double fl = std::floor(exact + 1e-9);
    counts[i] = static_cast<std::size_t>(fl);
    // Rounded so that equal remainders compare equal despite float noise.
    remainder[i] = std::round((exact - fl) * 1e9) / 1e9;
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

SplitAssignment split_subjects(const std::set<std::string>& subject_ids, const std::array<double, 3>& ratios,
                               std::uint64_t seed) {
  const auto counts = largest_remainder_counts(subject_ids.size(), ratios);
  if (subject_ids.size() < 3) throw ConfigError("at least 3 subjects are required to split");
  std::vector<std::string> ids(subject_ids.begin(), subject_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  SplitAssignment out;
  out.seed = seed;
  out.ratios = ratios;
  std::size_t i = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < counts[s]; ++k, ++i) out.by_subject.emplace(ids[i], static_cast<Split>(s));
  }
  return out;
}

void PreprocessConfig::validate() const {
  if (image_size < 1) throw ConfigError("image_size must be positive");
  if (channels < 1) throw ConfigError("channels must be positive");
  if (mean.size() != static_cast<std::size_t>(channels) || std.size() != static_cast<std::size_t>(channels)) {
    throw ConfigError("mean/std must have one entry per channel");
  }
  for (double s : std) {
    if (!(s > 0.0)) throw ConfigError("std entries must be positive");
  }
}

ImageTensor preprocess_image(const ImageTensor& raw, double full_scale, const PreprocessConfig& config) {
  config.validate();
  if (raw.height < 1 || raw.width < 1 || raw.data.empty()) {
    throw IngestionError(raw.provenance, "empty image");
  }
  if (raw.channels != 1) throw IngestionError(raw.provenance, "expected a single-channel image");
  const ImageTensor square = center_square_crop(raw);
  const ImageTensor resized = resize(square, config.image_size, config.image_size, config.interpolation);

  ImageTensor out(config.channels, config.image_size, config.image_size);
  out.provenance = raw.provenance;
  const std::size_t plane = static_cast<std::size_t>(config.image_size) * config.image_size;
  for (int c = 0; c < config.channels; ++c) {
    const double m = config.mean[static_cast<std::size_t>(c)];
    const double s = config.std[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < plane; ++i) {
      const double unit = std::clamp(resized.data[i] / full_scale, 0.0, 1.0);
      out.data[static_cast<std::size_t>(c) * plane + i] = (unit - m) / s;
    }
  }
  return out;
}

std::vector<StudyRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("missing version header line", 1);
  strip_cr(line);
  if (line != kManifestHeader) throw SchemaError("unrecognized manifest version '" + line + "'", 1);
  if (!std::getline(in, line)) return {};
  strip_cr(line);
  const auto header = split_tabs(line);
  const std::array<std::string_view, 4> required{"subject_id", "study_id", "image_path", "projection"};
  if (header.size() != required.size() + kNumChexpertLabels) {
    throw SchemaError("expected " + std::to_string(required.size() + kNumChexpertLabels) + " columns, found " +
                          std::to_string(header.size()),
                      2);
  }
  for (std::size_t i = 0; i < required.size(); ++i) {
    if (header[i] != required[i]) throw SchemaError("missing column '" + std::string(required[i]) + "'", 2);
  }

  std::vector<StudyRecord> studies;
  std::unordered_map<std::string, std::size_t> by_study;
  std::set<std::string> seen_refs;
  long row = 2;
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != header.size()) {
      throw SchemaError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cols.size()),
                        row);
    }
    std::vector<LabelState> labels;
    labels.reserve(kNumChexpertLabels);
    try {
      const Projection proj = parse_projection(cols[3]);
      for (std::size_t i = 0; i < kNumChexpertLabels; ++i) labels.push_back(parse_label_state(cols[4 + i]));
      if (cols[0].empty() || cols[1].empty() || cols[2].empty()) throw SchemaError("empty identifier field");
      if (!seen_refs.insert(cols[2]).second) throw SchemaError("duplicate image reference '" + cols[2] + "'");

      auto [it, fresh] = by_study.emplace(cols[1], studies.size());
      if (fresh) studies.push_back(StudyRecord{cols[1], cols[0], {}, {}, labels});
      StudyRecord& s = studies[it->second];
      if (s.subject_id != cols[0]) throw SchemaError("study " + cols[1] + " listed under two subjects");
      if (s.raw_labels != labels) throw SchemaError("study " + cols[1] + " has inconsistent labels");
      (family_of(proj) == ViewFamily::frontal ? s.frontal_refs : s.lateral_refs).push_back(cols[2]);
    } catch (const SchemaError& e) {
      if (e.row() >= 0) throw;
      throw SchemaError(e.what(), row);
    }
  }
  return studies;
}

void write_manifest(const std::filesystem::path& path, std::span<const StudyRecord> studies) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n' << "subject_id\tstudy_id\timage_path\tprojection";
  for (auto name : kChexpertLabels) out << '\t' << name;
  out << '\n';
  auto row = [&](const StudyRecord& s, const std::string& ref, std::string_view proj) {
    out << s.subject_id << '\t' << s.study_id << '\t' << ref << '\t' << proj;
    for (LabelState l : s.raw_labels) out << '\t' << to_string(l);
    out << '\n';
  };
  for (const StudyRecord& s : studies) {
    if (s.raw_labels.size() != kNumChexpertLabels) throw SchemaError("study " + s.study_id + " needs 14 labels");
    for (const auto& f : s.frontal_refs) row(s, f, "PA");
    for (const auto& l : s.lateral_refs) row(s, l, "LL");
  }
}

void write_pairs(const std::filesystem::path& path, std::span<const ViewPair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write pair file " + path.string());
  out << "subject_id\tstudy_id\tfrontal_ref\tlateral_ref\tlabels\n";
  for (const ViewPair& p : pairs) {
    out << p.subject_id << '\t' << p.study_id << '\t' << p.frontal_ref << '\t' << p.lateral_ref << '\t';
    for (std::uint8_t l : p.labels) out << static_cast<char>('0' + l);
    out << '\n';
  }
}

std::vector<ViewPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open pair file " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<ViewPair> pairs;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 5) throw SchemaError("expected 5 fields", row);
    ViewPair p{cols[1], cols[0], cols[2], cols[3], {}};
    for (char c : cols[4]) {
      if (c != '0' && c != '1') throw SchemaError("labels must be binary digits", row);
      p.labels.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_split(const std::filesystem::path& path, const SplitAssignment& split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write split file " + path.string());
  out << "subject_id\tsplit\n";
  for (const auto& [subject, s] : split.by_subject) out << subject << '\t' << to_string(s) << '\n';
}

void ImageStore::insert(std::string ref, ImageTensor image) { cache_.insert_or_assign(std::move(ref), std::move(image)); }

const ImageTensor& ImageStore::get(const std::string& ref) {
  if (audit_) audit_->insert(ref);
  auto it = cache_.find(ref);
  if (it != cache_.end()) return it->second;
  if (!loader_) throw IngestionError(ref, "unknown image reference");
  return cache_.emplace(ref, loader_(ref)).first->second;
}

void ImageStore::start_audit() { audit_.emplace(); }

std::set<std::string> ImageStore::stop_audit() {
  std::set<std::string> out = audit_ ? std::move(*audit_) : std::set<std::string>{};
  audit_.reset();
  return out;
}

std::vector<std::size_t> PairedDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (split.of(pairs[i].subject_id) == s) out.push_back(i);
  }
  return out;
}

PairedDataset load_manifest_dataset(const std::filesystem::path& manifest, const std::filesystem::path& data_root,
                                    const PreprocessConfig& preprocess, const std::array<double, 3>& ratios,
                                    std::uint64_t seed) {
  preprocess.validate();
  const auto studies = load_manifest(manifest);
  PairedDataset ds;
  ds.pairs = enumerate_pairs(studies);
  std::set<std::string> subjects;
  for (const auto& p : ds.pairs) subjects.insert(p.subject_id);
  ds.split = split_subjects(subjects, ratios, seed);
  ds.images = std::make_shared<ImageStore>([data_root, preprocess](const std::string& ref) {
    std::filesystem::path p(ref);
    if (p.is_relative()) p = data_root / p;
    RawImage raw = load_grayscale(p);
    raw.pixels.provenance = ref;
    return preprocess_image(raw.pixels, raw.full_scale, preprocess);
  });
  return ds;
}

}  // namespace mvmae
