// Brute-force reference implementations and fixtures shared by the unit and
// acceptance tests. Deliberately written without the library's helpers.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <algorithm>
#include <cstdio>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cus3d/types.hpp"

namespace oracle {

using cus3d::Matrix;
using cus3d::TextPrototypes;

inline long double cos_ld(std::span<const float> a, std::span<const float> b) {
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += static_cast<long double>(a[k]) * b[k];
    aa += static_cast<long double>(a[k]) * a[k];
    bb += static_cast<long double>(b[k]) * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

// Exhaustive cosine scan; the first maximum wins.
inline std::int32_t classify(std::span<const float> f, const TextPrototypes& text) {
  std::int32_t best = 0;
  long double best_cos = cos_ld(f, text.rows.row(0));
  for (std::size_t c = 1; c < text.count(); ++c) {
    const long double cs = cos_ld(f, text.rows.row(c));
    if (cs > best_cos) {
      best_cos = cs;
      best = static_cast<std::int32_t>(c);
    }
  }
  return best;
}

struct Vote {
  std::int32_t label;
  std::vector<std::size_t> kept;
};

// Count per class with an array, take the lowest class among the maxima.
inline Vote vote(const std::vector<std::vector<float>>& feats, const TextPrototypes& text) {
  std::vector<std::int32_t> labels;
  std::vector<std::size_t> count(text.count(), 0);
  for (const auto& f : feats) {
    labels.push_back(classify(f, text));
    ++count[static_cast<std::size_t>(labels.back())];
  }
  std::size_t top = 0;
  for (std::size_t c = 0; c < count.size(); ++c) top = std::max(top, count[c]);
  Vote v{-1, {}};
  for (std::size_t c = 0; c < count.size() && v.label < 0; ++c) {
    if (count[c] == top) v.label = static_cast<std::int32_t>(c);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == v.label) v.kept.push_back(i);
  }
  return v;
}

struct Scores {
  double acc = 0;
  double miou = 0;
  std::vector<double> iou;  // NaN when undefined
};

// Per-class TP/FP/FN by direct counting over all points.
inline Scores evaluate(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt, std::size_t C) {
  Scores s;
  std::size_t counted = 0;
  std::size_t right = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0) continue;
    ++counted;
    if (pred[i] == gt[i]) ++right;
  }
  s.acc = counted ? double(right) / double(counted) : 0.0;
  double sum = 0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const auto cc = static_cast<std::int32_t>(c);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] < 0) continue;
      if (gt[i] == cc && pred[i] == cc) ++tp;
      if (gt[i] != cc && pred[i] == cc) ++fp;
      if (gt[i] == cc && pred[i] != cc) ++fn;
    }
    if (tp + fp + fn == 0) {
      s.iou.push_back(NAN);
    } else {
      s.iou.push_back(double(tp) / double(tp + fp + fn));
      sum += s.iou.back();
      ++defined;
    }
  }
  s.miou = defined ? sum / double(defined) : 0.0;
  return s;
}

// Pinhole projection written out longhand; returns the pixel index if the
// point lands inside the image with a consistent depth reading.
inline std::optional<std::size_t> visible_pixel(const std::array<float, 3>& p, const cus3d::CameraModel& cam,
                                                const Matrix& depth, double eps) {
  double cam_xyz[3];
  for (int r = 0; r < 3; ++r) {
    cam_xyz[r] = double(cam.pose[r * 4 + 3]);
    for (int c = 0; c < 3; ++c) cam_xyz[r] += double(cam.pose[r * 4 + c]) * double(p[c]);
  }
  if (cam_xyz[2] <= 0) return std::nullopt;
  const double u = double(cam.fx) * cam_xyz[0] / cam_xyz[2] + double(cam.cx);
  const double v = double(cam.fy) * cam_xyz[1] / cam_xyz[2] + double(cam.cy);
  const double ur = u < 0 ? -std::floor(-u + 0.5) : std::floor(u + 0.5);
  const double vr = v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5);
  if (ur < 0 || vr < 0 || ur > cam.width - 1 || vr > cam.height - 1) return std::nullopt;
  const auto ui = static_cast<std::size_t>(ur);
  const auto vi = static_cast<std::size_t>(vr);
  const double z = depth.data[vi * static_cast<std::size_t>(cam.width) + ui];
  if (z == 0.0 || std::fabs(z - cam_xyz[2]) > eps) return std::nullopt;
  return vi * static_cast<std::size_t>(cam.width) + ui;
}

// Unit-norm random prototypes (not necessarily orthogonal).
inline TextPrototypes random_text(std::size_t C, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  TextPrototypes t;
  t.rows = Matrix(C, d);
  for (auto& x : t.rows.data) x = g(rng);
  for (std::size_t c = 0; c < C; ++c) t.names.push_back("c" + std::to_string(c));
  return t;
}

// Identity rows: prototype c is the c-th basis vector of R^d.
inline TextPrototypes basis_text(std::size_t C, std::size_t d) {
  TextPrototypes t;
  t.rows = Matrix(C, d);
  for (std::size_t c = 0; c < C; ++c) {
    t.rows(c, c) = 1.0f;
    t.names.push_back("c" + std::to_string(c));
  }
  return t;
}

// 1 point, 0 frames, C=1, d=2.
inline cus3d::SceneBundle minimal_bundle() {
  cus3d::SceneBundle b;
  b.scene_id = "minimal";
  b.seed = 3;
  b.dim = 2;
  b.points.coords = Matrix(1, 3);
  b.points.coords.data = {0.25f, -1.5f, 2.0f};
  b.points.cluster_ids = std::vector<std::int32_t>{0};
  b.text.rows = Matrix(1, 2);
  b.text.rows.data = {0.6f, 0.8f};
  b.text.names = {"chair"};
  b.gt = cus3d::LabelMap{0};
  return b;
}

// One 2x2 frame looking down +z from the origin, one mask everywhere.
inline cus3d::FrameObservation flat_frame(std::size_t d, float depth_value) {
  cus3d::FrameObservation f;
  f.camera.fx = f.camera.fy = 1.0f;
  f.camera.cx = f.camera.cy = 0.5f;
  f.camera.width = f.camera.height = 2;
  f.depth = Matrix(2, 2, depth_value);
  f.mask_probs = Matrix(4, 1, 1.0f);
  f.mask_embeddings = Matrix(1, d);
  f.mask_embeddings(0, 0) = 1.0f;
  return f;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cus3d_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

inline std::vector<char> slurp(const std::filesystem::path& p) {
  std::FILE* f = std::fopen(p.string().c_str(), "rb");
  std::vector<char> out;
  if (!f) return out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) out.insert(out.end(), buf, buf + n);
  std::fclose(f);
  return out;
}

}  // namespace oracle
