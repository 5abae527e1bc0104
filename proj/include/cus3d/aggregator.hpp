#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cus3d/projector.hpp"
#include "cus3d/types.hpp"

namespace cus3d {

inline constexpr double kDefaultRadius = 0.1;

struct ObjectMasks {
  std::vector<std::int32_t> mask_of_point;  // -1 = unassigned
  std::int32_t mask_count = 0;
};

// Object masks from cluster information. Cluster ids are relabelled densely in
// ascending id order. Offsets are applied to the coordinates and the shifted
// points are grouped by single linkage at `radius` (distance <= radius);
// points with a non-finite shifted position stay at -1.
ObjectMasks build_object_masks(const PointSet& points, double radius = kDefaultRadius);

struct MaskVote {
  std::int32_t label = kIgnoreLabel;
  std::vector<std::size_t> keep;  // positions in the input list, ascending
};

// Labels every raw feature of one mask and keeps those matching the modal
// label. Empty input yields nothing.
std::optional<MaskVote> vote_mask_label(std::span<const std::span<const float>> features, const TextPrototypes& text);

// Object-level 3D filter and pooling. Per mask: vote, screen, then for each
// point average its own surviving features (m >= 1) or inherit the mean of the
// mask's whole keep-set (m = 0). Points outside any mask fall back to the
// unfiltered mean of their own features.
PointFeatureField aggregate(const PointSet& points, const ObjectMasks& masks, const RawPointFeatures& raw,
                            const TextPrototypes& text, int threads = 1);

// Plain fusion used when the 3D filter is off: per point, the mean of all its
// raw features, labelled by cosine argmax. Points without features are invalid.
PointFeatureField aggregate_unfiltered(const RawPointFeatures& raw, const TextPrototypes& text, int threads = 1);

}  // namespace cus3d
