#pragma once

// Study metadata -> frontal/lateral view pairs with collapsed labels,
// subject-level splits and standardized image tensors.

#include "mvmae/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mvmae {

inline constexpr std::size_t kNumChexpertLabels = 14;

/// CheXpert label order as published with MIMIC-CXR-JPG.
inline constexpr std::array<std::string_view, kNumChexpertLabels> kChexpertLabels = {
    "Atelectasis",      "Cardiomegaly",     "Consolidation", "Edema",
    "Enlarged Cardiomediastinum", "Fracture", "Lung Lesion", "Lung Opacity",
    "No Finding",       "Pleural Effusion", "Pleural Other", "Pneumonia",
    "Pneumothorax",     "Support Devices"};

enum class Projection { PA, AP, LL, Lateral };
enum class ViewFamily { frontal, lateral };
enum class LabelState { positive, negative, not_mentioned, uncertain };
enum class Split { train, val, test };

Projection parse_projection(std::string_view token);
ViewFamily family_of(Projection p);
/// Accepts the symbolic tokens (positive, negative, not-mentioned, uncertain)
/// and the MIMIC-CXR-JPG numeric codes (1, 0, empty, -1).
LabelState parse_label_state(std::string_view token);
std::string_view to_string(LabelState s);
std::string_view to_string(Split s);
Split parse_split(std::string_view token);

using LabelVector = std::vector<std::uint8_t>;

struct StudyRecord {
  std::string study_id;
  std::string subject_id;
  std::vector<std::string> frontal_refs;
  std::vector<std::string> lateral_refs;
  std::vector<LabelState> raw_labels;
};

struct ViewPair {
  std::string study_id;
  std::string subject_id;
  std::string frontal_ref;
  std::string lateral_ref;
  LabelVector labels;

  bool operator==(const ViewPair&) const = default;
};

struct SplitAssignment {
  std::map<std::string, Split> by_subject;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};

  Split of(const std::string& subject_id) const;
  std::array<std::size_t, 3> sizes() const;
  bool operator==(const SplitAssignment&) const = default;
};

/// Every frontal x lateral combination per study, in study / frontal / lateral
/// order. Throws MalformedMetadataError on a repeated (frontal, lateral) pair.
std::vector<ViewPair> enumerate_pairs(std::span<const StudyRecord> studies);

/// positive -> 1, every other state -> 0. Throws SchemaError unless 14 entries.
LabelVector collapse_labels(std::span<const LabelState> raw);

/// Largest-remainder apportionment of n items; ties go to the earlier slot.
std::array<std::size_t, 3> largest_remainder_counts(std::size_t n, const std::array<double, 3>& ratios);

/// Seeded shuffle of the (sorted) subject ids, then contiguous train/val/test blocks.
SplitAssignment split_subjects(const std::set<std::string>& subject_ids, const std::array<double, 3>& ratios,
                               std::uint64_t seed);

struct PreprocessConfig {
  int image_size = 224;
  int channels = 3;
  std::vector<double> mean{0.485, 0.456, 0.406};
  std::vector<double> std{0.229, 0.224, 0.225};
  Interpolation interpolation = Interpolation::bilinear;

  void validate() const;
};

/// Center square crop, isotropic resize, rescale by `full_scale` into [0,1],
/// channel replication and per-channel standardization. `raw` is single-channel.
ImageTensor preprocess_image(const ImageTensor& raw, double full_scale, const PreprocessConfig& config);

inline constexpr std::string_view kManifestHeader = "# mvmae-manifest v1";

/// Parses the tab-separated manifest (version line, column header, one row per
/// image). Rows of one study are merged in first-appearance order.
std::vector<StudyRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const StudyRecord> studies);

void write_pairs(const std::filesystem::path& path, std::span<const ViewPair> pairs);
std::vector<ViewPair> read_pairs(const std::filesystem::path& path);
/// Two columns: subject_id, split.
void write_split(const std::filesystem::path& path, const SplitAssignment& split);

/// Resolves image references to tensors, caching them, and optionally records
/// every reference it serves so callers can audit split access.
class ImageStore {
 public:
  using Loader = std::function<ImageTensor(const std::string& ref)>;

  ImageStore() = default;
  explicit ImageStore(Loader loader) : loader_(std::move(loader)) {}

  void insert(std::string ref, ImageTensor image);
  const ImageTensor& get(const std::string& ref);

  void start_audit();
  std::set<std::string> stop_audit();

 private:
  Loader loader_;
  std::unordered_map<std::string, ImageTensor> cache_;
  std::optional<std::set<std::string>> audit_;
};

struct PairedDataset {
  std::vector<ViewPair> pairs;
  SplitAssignment split;
  std::shared_ptr<ImageStore> images;
  int num_labels = static_cast<int>(kNumChexpertLabels);

  std::vector<std::size_t> indices(Split s) const;
};

/// Manifest -> pairs -> split, with images loaded lazily from `data_root`
/// (relative paths) and preprocessed on first use.
PairedDataset load_manifest_dataset(const std::filesystem::path& manifest, const std::filesystem::path& data_root,
                                    const PreprocessConfig& preprocess, const std::array<double, 3>& ratios,
                                    std::uint64_t seed);

}  // namespace mvmae
