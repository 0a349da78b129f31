#include "mvmae/data_pipeline.hpp"
#include "mvmae/errors.hpp"
#include "mvmae/image_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace mvmae;
namespace fs = std::filesystem;

namespace {

std::vector<LabelState> states(LabelState s) { return std::vector<LabelState>(kNumChexpertLabels, s); }

StudyRecord study(const std::string& id, const std::string& subject, int frontal, int lateral) {
  StudyRecord s{id, subject, {}, {}, states(LabelState::negative)};
  for (int i = 0; i < frontal; ++i) s.frontal_refs.push_back(id + "/f" + std::to_string(i) + ".png");
  for (int i = 0; i < lateral; ++i) s.lateral_refs.push_back(id + "/l" + std::to_string(i) + ".png");
  return s;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mvmae_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string manifest_header() {
  std::string h = std::string(kManifestHeader) + "\nsubject_id\tstudy_id\timage_path\tprojection";
  for (auto n : kChexpertLabels) h += "\t" + std::string(n);
  return h + "\n";
}

std::string manifest_row(const std::string& subject, const std::string& study, const std::string& path,
                         const std::string& projection, const std::string& label = "0") {
  std::string r = subject + "\t" + study + "\t" + path + "\t" + projection;
  for (std::size_t i = 0; i < kNumChexpertLabels; ++i) r += "\t" + label;
  return r + "\n";
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Independent apportionment with integer weights (ratios = w / 10).
std::array<std::size_t, 3> integer_largest_remainder(std::size_t n, const std::array<int, 3>& w) {
  std::array<std::size_t, 3> counts{};
  std::array<std::size_t, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    counts[i] = n * static_cast<std::size_t>(w[i]) / 10;
    rem[i] = n * static_cast<std::size_t>(w[i]) % 10;
    assigned += counts[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (rem[i] > rem[best]) best = i;
    }
    ++counts[best];
    rem[best] = 0;
    ++assigned;
  }
  return counts;
}

}  // namespace

TEST_CASE("enumerate_pairs follows the cross product") {
  const std::vector<StudyRecord> one{study("s1", "p1", 2, 1)};
  CHECK(enumerate_pairs(one).size() == 2);
  const std::vector<StudyRecord> none{study("s1", "p1", 1, 0)};
  CHECK(enumerate_pairs(none).empty());
  CHECK(enumerate_pairs(std::vector<StudyRecord>{}).empty());

  const std::vector<StudyRecord> three{study("a", "p1", 1, 1), study("b", "p1", 2, 2), study("c", "p2", 3, 0)};
  const auto pairs = enumerate_pairs(three);
  REQUIRE(pairs.size() == 5);
  // study, then frontal index, then lateral index
  CHECK(pairs[1].frontal_ref == "b/f0.png");
  CHECK(pairs[1].lateral_ref == "b/l0.png");
  CHECK(pairs[2].lateral_ref == "b/l1.png");
  CHECK(pairs[3].frontal_ref == "b/f1.png");
  CHECK(pairs[4].subject_id == "p1");
}

TEST_CASE("enumerate_pairs rejects a repeated pair") {
  StudyRecord a = study("a", "p1", 1, 1);
  StudyRecord b = a;
  b.study_id = "b";
  const std::vector<StudyRecord> both{a, b};
  CHECK_THROWS_AS(enumerate_pairs(both), MalformedMetadataError);
}

TEST_CASE("pair count identity on random manifests") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> n_studies(0, 30);
  std::uniform_int_distribution<int> n_views(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<StudyRecord> studies;
    std::size_t expected = 0;
    const int k = n_studies(rng);
    for (int i = 0; i < k; ++i) {
      const int f = n_views(rng);
      const int l = n_views(rng);
      studies.push_back(study("t" + std::to_string(trial) + "s" + std::to_string(i), "p" + std::to_string(i % 7), f, l));
      expected += static_cast<std::size_t>(f * l);
    }
    CHECK(enumerate_pairs(studies).size() == expected);
  }
}

TEST_CASE("collapse_labels keeps explicit positives only") {
  CHECK(collapse_labels(states(LabelState::positive)) == LabelVector(14, 1));
  CHECK(collapse_labels(states(LabelState::uncertain)) == LabelVector(14, 0));
  auto raw = states(LabelState::negative);
  raw[0] = LabelState::uncertain;
  raw[1] = LabelState::not_mentioned;
  raw[3] = LabelState::positive;
  const LabelVector got = collapse_labels(raw);
  CHECK(got[0] == 0);
  CHECK(got[1] == 0);
  CHECK(got[2] == 0);
  CHECK(got[3] == 1);
  CHECK_THROWS_AS(collapse_labels(std::vector<LabelState>(13, LabelState::positive)), SchemaError);
  CHECK_THROWS_AS(parse_label_state("maybe"), SchemaError);
  CHECK(parse_label_state("-1") == LabelState::uncertain);
  CHECK(parse_label_state("") == LabelState::not_mentioned);
}

TEST_CASE("largest-remainder split sizes") {
  CHECK(largest_remainder_counts(10, {0.8, 0.1, 0.1}) == std::array<std::size_t, 3>{8, 1, 1});
  CHECK(largest_remainder_counts(1000, {0.8, 0.1, 0.1}) == std::array<std::size_t, 3>{800, 100, 100});
  CHECK_THROWS_AS(largest_remainder_counts(10, {0.8, 0.1, 0.2}), ConfigError);

  const std::array<std::array<int, 3>, 5> weights{{{8, 1, 1}, {7, 2, 1}, {6, 3, 1}, {5, 4, 1}, {4, 3, 3}}};
  for (const auto& w : weights) {
    const std::array<double, 3> r{w[0] / 10.0, w[1] / 10.0, w[2] / 10.0};
    for (std::size_t n = 3; n <= 400; ++n) {
      REQUIRE(largest_remainder_counts(n, r) == integer_largest_remainder(n, w));
    }
  }
}

TEST_CASE("split_subjects is a deterministic partition") {
  std::set<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.insert("p" + std::to_string(i));
  const SplitAssignment a = split_subjects(ids, {0.8, 0.1, 0.1}, 3);
  CHECK(a.sizes() == std::array<std::size_t, 3>{8, 1, 1});
  CHECK(a == split_subjects(ids, {0.8, 0.1, 0.1}, 3));
  CHECK(a.by_subject.size() == ids.size());
  CHECK_THROWS_AS(split_subjects({"a", "b"}, {0.8, 0.1, 0.1}, 0), ConfigError);
  CHECK_THROWS_AS(split_subjects(ids, {0.5, 0.1, 0.1}, 0), ConfigError);
}

TEST_CASE("no subject straddles splits") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> subject(0, 999);
  std::uniform_int_distribution<int> n_views(1, 3);
  std::vector<StudyRecord> studies;
  for (int i = 0; i < 4000; ++i) {
    studies.push_back(study("s" + std::to_string(i), "p" + std::to_string(subject(rng)), n_views(rng), n_views(rng)));
  }
  const auto pairs = enumerate_pairs(studies);
  std::set<std::string> ids;
  for (const auto& p : pairs) ids.insert(p.subject_id);
  const SplitAssignment split = split_subjects(ids, {0.8, 0.1, 0.1}, 9);

  // brute force over all emitted pairs: a subject seen in two splits is a leak
  std::map<std::string, std::set<Split>> seen;
  for (const auto& p : pairs) seen[p.subject_id].insert(split.of(p.subject_id));
  std::size_t leaks = 0;
  for (const auto& [subject_id, splits] : seen) leaks += splits.size() > 1 ? 1 : 0;
  CHECK(leaks == 0);
  CHECK(split.sizes() == largest_remainder_counts(ids.size(), {0.8, 0.1, 0.1}));
}

TEST_CASE("preprocess_image crops, resizes and standardizes") {
  PreprocessConfig cfg;
  ImageTensor raw(1, 512, 640);
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 640; ++x) raw.at(0, y, x) = (x >= 64 && x < 576) ? 255.0 : 0.0;
  const ImageTensor out = preprocess_image(raw, 255.0, cfg);
  CHECK(out.channels == 3);
  CHECK(out.height == 224);
  CHECK(out.width == 224);
  // the centered 512x512 window holds only the bright band
  for (int c = 0; c < 3; ++c) {
    const double expected = (1.0 - cfg.mean[c]) / cfg.std[c];
    CHECK(out.at(c, 0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(out.at(c, 223, 223) == doctest::Approx(expected).epsilon(1e-12));
  }

  const ImageTensor zero = preprocess_image(ImageTensor(1, 30, 20), 255.0, cfg);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 224; y += 37) CHECK(zero.at(c, y, y) == -cfg.mean[c] / cfg.std[c]);
  }

  ImageTensor empty;
  empty.provenance = "broken.png";
  try {
    (void)preprocess_image(empty, 255.0, cfg);
    FAIL("expected IngestionError");
  } catch (const IngestionError& e) {
    CHECK(e.ref() == "broken.png");
  }
}

TEST_CASE("nearest-neighbour checkerboard downsample") {
  PreprocessConfig cfg;
  cfg.channels = 1;
  cfg.mean = {0.0};
  cfg.std = {1.0};
  cfg.interpolation = Interpolation::nearest;
  ImageTensor raw(1, 448, 448);
  for (int y = 0; y < 448; ++y)
    for (int x = 0; x < 448; ++x) raw.at(0, y, x) = ((y / 2 + x / 2) % 2) * 255.0;
  const ImageTensor out = preprocess_image(raw, 255.0, cfg);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) REQUIRE(out.at(0, y, x) == static_cast<double>((y + x) % 2));
}

TEST_CASE("manifest parsing") {
  const fs::path dir = temp_dir("manifest");
  write_text(dir / "empty.tsv", manifest_header());
  CHECK(load_manifest(dir / "empty.tsv").empty());

  write_text(dir / "m.tsv", manifest_header() + manifest_row("p1", "s1", "a.png", "PA", "1") +
                                manifest_row("p1", "s1", "b.png", "LL", "1") +
                                manifest_row("p2", "s2", "c.png", "AP", "-1") +
                                manifest_row("p2", "s2", "d.png", "Lateral", "-1"));
  const auto studies = load_manifest(dir / "m.tsv");
  REQUIRE(studies.size() == 2);
  CHECK(studies[0].frontal_refs == std::vector<std::string>{"a.png"});
  CHECK(studies[0].lateral_refs == std::vector<std::string>{"b.png"});
  CHECK(studies[1].frontal_refs == std::vector<std::string>{"c.png"});
  CHECK(studies[1].raw_labels[0] == LabelState::uncertain);

  // rewriting and re-reading is lossless
  write_manifest(dir / "again.tsv", studies);
  CHECK(load_manifest(dir / "again.tsv")[1].lateral_refs == studies[1].lateral_refs);

  write_text(dir / "bad_proj.tsv", manifest_header() + manifest_row("p1", "s1", "a.png", "PA") +
                                       manifest_row("p1", "s1", "b.png", "XX"));
  try {
    (void)load_manifest(dir / "bad_proj.tsv");
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.row() == 4);
  }

  std::string short_row = manifest_row("p1", "s1", "a.png", "PA");
  short_row.erase(short_row.rfind('\t'));
  short_row += "\n";
  write_text(dir / "short.tsv", manifest_header() + short_row);
  CHECK_THROWS_AS(load_manifest(dir / "short.tsv"), SchemaError);

  write_text(dir / "no_version.tsv", "subject_id\n");
  CHECK_THROWS_AS(load_manifest(dir / "no_version.tsv"), SchemaError);
  fs::remove_all(dir);
}

TEST_CASE("manifest dataset loads images lazily and deterministically") {
  const fs::path dir = temp_dir("dataset");
  std::string text = manifest_header();
  for (int s = 0; s < 6; ++s) {
    const std::string id = std::to_string(s);
    text += manifest_row("p" + id, "s" + id, "f" + id + ".png", "PA");
    text += manifest_row("p" + id, "s" + id, "l" + id + ".png", "LL");
    ImageTensor img(1, 40, 50, 10.0 * s);
    save_grayscale_png(dir / ("f" + id + ".png"), img, 0.0, 255.0);
    save_grayscale_png(dir / ("l" + id + ".png"), img, 0.0, 255.0);
  }
  write_text(dir / "m.tsv", text);
  PreprocessConfig cfg;
  cfg.image_size = 32;
  cfg.channels = 1;
  cfg.mean = {0.0};
  cfg.std = {1.0};
  PairedDataset a = load_manifest_dataset(dir / "m.tsv", dir, cfg, {0.8, 0.1, 0.1}, 1);
  PairedDataset b = load_manifest_dataset(dir / "m.tsv", dir, cfg, {0.8, 0.1, 0.1}, 1);
  CHECK(a.pairs == b.pairs);
  CHECK(a.split == b.split);
  const ImageTensor& img = a.images->get("f3.png");
  CHECK(img.height == 32);
  CHECK(img.at(0, 5, 5) == doctest::Approx(30.0 / 255.0));
  CHECK_THROWS_AS(a.images->get("missing.png"), IngestionError);
  fs::remove_all(dir);
}
