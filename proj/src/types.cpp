#include "cus3d/types.hpp"

#include <cmath>
#include <cstring>

namespace cus3d {

std::size_t FeatureField::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v ? 1 : 0;
  return n;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols || a.data.size() != b.data.size()) return false;
  return a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool bitwise_equal(const SceneBundle& a, const SceneBundle& b) {
  if (a.dim != b.dim || a.seed != b.seed || a.scene_id != b.scene_id) return false;
  if (!bitwise_equal(a.points.coords, b.points.coords)) return false;
  if (a.points.cluster_ids != b.points.cluster_ids) return false;
  if (a.points.cluster_offsets.has_value() != b.points.cluster_offsets.has_value()) return false;
  if (a.points.cluster_offsets && !bitwise_equal(*a.points.cluster_offsets, *b.points.cluster_offsets)) {
    return false;
  }
  if (a.gt != b.gt) return false;
  if (a.text.names != b.text.names || !bitwise_equal(a.text.rows, b.text.rows)) return false;
  if (a.frames.size() != b.frames.size()) return false;
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    const auto& fa = a.frames[k];
    const auto& fb = b.frames[k];
    const auto& ca = fa.camera;
    const auto& cb = fb.camera;
    if (ca.width != cb.width || ca.height != cb.height) return false;
    const float ia[4] = {ca.fx, ca.fy, ca.cx, ca.cy};
    const float ib[4] = {cb.fx, cb.fy, cb.cx, cb.cy};
    if (std::memcmp(ia, ib, sizeof(ia)) != 0) return false;
    if (std::memcmp(ca.pose.data(), cb.pose.data(), sizeof(float) * 16) != 0) return false;
    if (!bitwise_equal(fa.depth, fb.depth) || !bitwise_equal(fa.mask_probs, fb.mask_probs) ||
        !bitwise_equal(fa.mask_embeddings, fb.mask_embeddings)) {
      return false;
    }
  }
  return true;
}

bool bitwise_equal(const FeatureField& a, const FeatureField& b) {
  return a.valid == b.valid && a.labels == b.labels && bitwise_equal(a.features, b.features);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const float> a, std::span<const float> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace cus3d
