#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cus3d/types.hpp"

namespace cus3d {

inline constexpr double kDefaultEpsDepth = 0.05;

// Pinhole projection with a depth-consistency test. Returns the row-major
// pixel index v*width + u of the nearest pixel, or nothing when the point is
// behind the camera, outside the image, over a missing depth reading, or
// farther than eps_depth from the recorded depth (occluded).
std::optional<std::size_t> project_point(const std::array<double, 3>& p, const CameraModel& cam,
                                         const Matrix& depth, double eps_depth);

// Per-point lists of (frame, feature) in CSR layout: point i owns entries
// [offsets[i], offsets[i+1]), frames ascending.
struct RawPointFeatures {
  std::vector<std::size_t> offsets;  // N + 1
  std::vector<std::uint32_t> frame;  // per entry
  Matrix features;                   // entries x d

  std::size_t point_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t count(std::size_t point) const { return offsets[point + 1] - offsets[point]; }
  std::span<const float> feature(std::size_t entry) const { return features.row(entry); }
  bool operator==(const RawPointFeatures&) const = default;
};

// Collects the pixel feature of every frame in which the point projects onto
// a valid pixel. `fields[k]` belongs to `frames[k]`.
RawPointFeatures gather_raw_features(const PointSet& points, std::span<const FrameObservation> frames,
                                     std::span<const PixelFeatureField> fields, double eps_depth = kDefaultEpsDepth,
                                     int threads = 1);

// Cache format: rawfeat.bin (entries x d), rawframes.bin (entries),
// rawindex.bin (N + 1 offsets) and a rawfeat.json sidecar with the shapes.
void save_raw_features(const RawPointFeatures& raw, const std::filesystem::path& dir);
RawPointFeatures load_raw_features(const std::filesystem::path& dir);

}  // namespace cus3d
