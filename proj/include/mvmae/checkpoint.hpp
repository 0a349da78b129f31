#pragma once

// Checkpoint container: named parameter arrays plus a JSON metadata record.
//
// Layout (host byte order, little-endian on supported targets):
//   "MVMAECK1" | u64 metadata length | metadata JSON bytes | u64 entry count
//   per entry: u32 name length | name | i64 rows | i64 cols | rows*cols f64 (column-major)

#include "mvmae/vision_backbone.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace mvmae {

struct CheckpointMetadata {
  nlohmann::json backbone;  // BackboneConfig as JSON
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::string objective;    // mvmae | contrastive | init | finetune | probe
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const CheckpointMetadata&) const = default;
};

struct Checkpoint {
  CheckpointMetadata metadata;
  ParameterStore params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every parameter of `from` whose name exists in `into` (shapes must
/// agree). Returns the number of arrays copied.
std::size_t load_parameters(ParameterStore& into, const ParameterStore& from, const std::string& prefix = "");

}  // namespace mvmae
