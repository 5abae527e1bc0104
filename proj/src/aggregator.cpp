#include "cus3d/aggregator.hpp"

#include <cmath>
#include <map>
#include <unordered_map>

#include "cus3d/error.hpp"
#include "cus3d/parallel.hpp"
#include "cus3d/pixel_assigner.hpp"
#include "cus3d/union_find.hpp"

namespace cus3d {

namespace {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

ObjectMasks masks_from_ids(const std::vector<std::int32_t>& ids) {
  std::map<std::int32_t, std::int32_t> dense;
  for (auto id : ids) {
    if (id >= 0) dense.emplace(id, 0);
  }
  std::int32_t next = 0;
  for (auto& [id, m] : dense) m = next++;
  ObjectMasks out;
  out.mask_count = next;
  out.mask_of_point.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out.mask_of_point[i] = ids[i] >= 0 ? dense.at(ids[i]) : -1;
  return out;
}

ObjectMasks masks_from_offsets(const Matrix& coords, const Matrix& offsets, double radius) {
  const std::size_t n = coords.rows;
  std::vector<std::array<double, 3>> shifted(n);
  std::vector<std::uint8_t> usable(n, 0);
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> grid;
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = true;
    for (int a = 0; a < 3; ++a) {
      shifted[i][a] = double(coords(i, a)) + double(offsets(i, a));
      ok = ok && std::isfinite(shifted[i][a]) && std::abs(shifted[i][a] / radius) < 1e15;
    }
    if (!ok) continue;
    usable[i] = 1;
    const CellKey key{static_cast<std::int64_t>(std::floor(shifted[i][0] / radius)),
                      static_cast<std::int64_t>(std::floor(shifted[i][1] / radius)),
                      static_cast<std::int64_t>(std::floor(shifted[i][2] / radius))};
    grid[key].push_back(i);
  }

  const double r2 = radius * radius;
  UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!usable[i]) continue;
    const auto& s = shifted[i];
    const std::int64_t cx = static_cast<std::int64_t>(std::floor(s[0] / radius));
    const std::int64_t cy = static_cast<std::int64_t>(std::floor(s[1] / radius));
    const std::int64_t cz = static_cast<std::int64_t>(std::floor(s[2] / radius));
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = grid.find({cx + dx, cy + dy, cz + dz});
          if (it == grid.end()) continue;
          for (auto j : it->second) {
            if (j <= i) continue;
            const double ex = s[0] - shifted[j][0];
            const double ey = s[1] - shifted[j][1];
            const double ez = s[2] - shifted[j][2];
            if (ex * ex + ey * ey + ez * ez <= r2) uf.unite(i, j);
          }
        }
      }
    }
  }

  // Dense ids in order of each component's lowest point index.
  ObjectMasks out;
  out.mask_of_point.assign(n, -1);
  std::unordered_map<std::size_t, std::int32_t> root_to_mask;
  for (std::size_t i = 0; i < n; ++i) {
    if (!usable[i]) continue;
    const auto [it, inserted] = root_to_mask.emplace(uf.find(i), out.mask_count);
    if (inserted) ++out.mask_count;
    out.mask_of_point[i] = it->second;
  }
  return out;
}

void write_mean(std::span<const double> acc, std::size_t count, std::span<float> dst) {
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<float>(acc[k] / static_cast<double>(count));
}

void accumulate(std::vector<double>& acc, std::span<const float> v) {
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
}

// Unfiltered mean of one point's raw features. A mean that cancels to zero
// carries no direction, so the point is left invalid.
void pool_unfiltered(const RawPointFeatures& raw, std::size_t i, const Classifier& clf, std::vector<double>& acc,
                     PointFeatureField& out) {
  const std::size_t count = raw.count(i);
  if (count == 0) return;
  std::fill(acc.begin(), acc.end(), 0.0);
  for (auto e = raw.offsets[i]; e < raw.offsets[i + 1]; ++e) accumulate(acc, raw.feature(e));
  auto dst = out.features.row(i);
  write_mean(acc, count, dst);
  if (norm(dst) == 0.0) {
    std::fill(dst.begin(), dst.end(), 0.0f);
    return;
  }
  out.valid[i] = 1;
  out.labels[i] = clf.classify(dst);
}

std::vector<std::int32_t> label_entries(const RawPointFeatures& raw, const Classifier& clf, int threads) {
  std::vector<std::int32_t> labels(raw.frame.size());
  parallel_for(labels.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t e = begin; e < end; ++e) labels[e] = clf.classify(raw.feature(e));
  });
  return labels;
}

}  // namespace

ObjectMasks build_object_masks(const PointSet& points, double radius) {
  if (points.cluster_ids) {
    if (points.cluster_ids->size() != points.size()) {
      throw Error(ErrorKind::InvalidArgument, "length differs from point count", "cluster_ids");
    }
    return masks_from_ids(*points.cluster_ids);
  }
  if (points.cluster_offsets) {
    if (!(radius > 0.0) || !std::isfinite(radius)) {
      throw Error(ErrorKind::InvalidArgument, "radius must be positive and finite", "radius");
    }
    if (points.cluster_offsets->rows != points.size() || points.cluster_offsets->cols != 3) {
      throw Error(ErrorKind::InvalidArgument, "offsets must be N x 3", "cluster_offsets");
    }
    return masks_from_offsets(points.coords, *points.cluster_offsets, radius);
  }
  throw Error(ErrorKind::InvalidArgument, "neither cluster_ids nor cluster_offsets present", "clusters");
}

std::optional<MaskVote> vote_mask_label(std::span<const std::span<const float>> features, const TextPrototypes& text) {
  if (features.empty()) return std::nullopt;
  const Classifier clf(text);
  std::vector<std::int32_t> labels(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) labels[i] = clf.classify(features[i]);
  MaskVote vote;
  vote.label = modal_label(labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == vote.label) vote.keep.push_back(i);
  }
  return vote;
}

PointFeatureField aggregate(const PointSet& points, const ObjectMasks& masks, const RawPointFeatures& raw,
                            const TextPrototypes& text, int threads) {
  const std::size_t n = points.size();
  if (masks.mask_of_point.size() != n || raw.point_count() != n) {
    throw Error(ErrorKind::InvalidArgument, "points, masks and raw features disagree on N", "aggregate");
  }
  const std::size_t d = text.dim();
  if (!raw.frame.empty() && raw.features.cols != d) {
    throw Error(ErrorKind::InvalidArgument, "raw feature dimension differs from text", "raw");
  }
  const Classifier clf(text);
  const auto entry_label = label_entries(raw, clf, threads);

  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(masks.mask_count));
  std::vector<std::size_t> loose;
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = masks.mask_of_point[i];
    if (m < -1 || m >= masks.mask_count) throw Error(ErrorKind::InvalidArgument, "mask id out of range", "masks");
    if (m >= 0) {
      members[static_cast<std::size_t>(m)].push_back(i);
    } else {
      loose.push_back(i);
    }
  }

  PointFeatureField out(n, d);
  const std::size_t ncls = text.count();

  parallel_for(members.size(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> counts(ncls);
    std::vector<double> mask_acc(d);
    std::vector<double> acc(d);
    for (std::size_t m = begin; m < end; ++m) {
      const auto& pts = members[m];
      std::fill(counts.begin(), counts.end(), 0);
      std::size_t total = 0;
      for (auto i : pts) {
        for (auto e = raw.offsets[i]; e < raw.offsets[i + 1]; ++e) {
          ++counts[static_cast<std::size_t>(entry_label[e])];
          ++total;
        }
      }
      if (total == 0) continue;  // nothing observed: the mask's points stay invalid
      std::size_t label = 0;
      for (std::size_t c = 1; c < ncls; ++c) {
        if (counts[c] > counts[label]) label = c;
      }
      const auto lab = static_cast<std::int32_t>(label);

      std::fill(mask_acc.begin(), mask_acc.end(), 0.0);
      for (auto i : pts) {
        for (auto e = raw.offsets[i]; e < raw.offsets[i + 1]; ++e) {
          if (entry_label[e] == lab) accumulate(mask_acc, raw.feature(e));
        }
      }
      const std::size_t kept_total = counts[label];

      for (auto i : pts) {
        std::fill(acc.begin(), acc.end(), 0.0);
        std::size_t own = 0;
        for (auto e = raw.offsets[i]; e < raw.offsets[i + 1]; ++e) {
          if (entry_label[e] != lab) continue;
          accumulate(acc, raw.feature(e));
          ++own;
        }
        if (own >= 1) {
          write_mean(acc, own, out.features.row(i));
        } else {
          write_mean(mask_acc, kept_total, out.features.row(i));
        }
        out.valid[i] = 1;
        out.labels[i] = lab;
      }
    }
  });

  parallel_for(loose.size(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(d);
    for (std::size_t li = begin; li < end; ++li) pool_unfiltered(raw, loose[li], clf, acc, out);
  });
  return out;
}

PointFeatureField aggregate_unfiltered(const RawPointFeatures& raw, const TextPrototypes& text, int threads) {
  const std::size_t n = raw.point_count();
  const std::size_t d = text.dim();
  if (!raw.frame.empty() && raw.features.cols != d) {
    throw Error(ErrorKind::InvalidArgument, "raw feature dimension differs from text", "raw");
  }
  const Classifier clf(text);
  PointFeatureField out(n, d);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(d);
    for (std::size_t i = begin; i < end; ++i) pool_unfiltered(raw, i, clf, acc, out);
  });
  return out;
}

}  // namespace cus3d
