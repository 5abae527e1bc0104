#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cus3d/types.hpp"

namespace cus3d {

// Blob encoding shared by every on-disk tensor: row-major, little-endian
// IEEE-754 float32, no header. Shapes are recorded by the owning manifest.
void write_blob(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_blob(const std::filesystem::path& path, std::size_t expected_count,
                             const std::string& field);

// Integer tensors (labels, cluster ids, valid flags) are stored as exactly
// representable floats.
std::vector<float> to_float_blob(std::span<const std::int32_t> values);
std::vector<std::int32_t> from_float_blob(std::span<const float> values, const std::string& field);

struct Violation {
  std::string field;
  std::string message;
};

// Checks every type invariant of the bundle; empty result means valid.
std::vector<Violation> validate_bundle(const SceneBundle& bundle);

SceneBundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const SceneBundle& bundle, const std::filesystem::path& dir);

// PointFeatureField persistence: pointfeat.bin, pointlabels.bin,
// pointvalid.bin plus a pointfield.json sidecar holding the shapes.
void save_feature_field(const FeatureField& field, const std::filesystem::path& dir);
FeatureField load_feature_field(const std::filesystem::path& dir);

}  // namespace cus3d
