#include "cus3d/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "cus3d/error.hpp"
#include "cus3d/rng.hpp"

namespace cus3d {

namespace {

constexpr std::array<const char*, 20> kNames{
    "wall",    "floor",   "cabinet", "bed",          "chair",   "sofa",          "table",  "door",
    "window",  "bookshelf", "picture", "counter",    "desk",    "curtain",       "refrigerator",
    "shower curtain", "toilet", "sink", "bathtub", "otherfurniture"};

constexpr int kPlacementAttempts = 1000;
constexpr double kGap = 0.4;
constexpr int kSurfaceAttempts = 64;

// Stream salts, one per independent draw sequence.
enum Salt : std::uint64_t { kProto = 1, kLayout, kSurface, kCamera, kMaskEmb, kNoise };

struct Box {
  std::array<double, 3> lo;
  std::array<double, 3> hi;
  std::int32_t category;
};

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 unit(const Vec3& a) {
  const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  return {a[0] / n, a[1] / n, a[2] / n};
}

TextPrototypes make_prototypes(const SynthConfig& cfg) {
  Rng rng(Rng::derive(cfg.seed, kProto));
  const std::size_t C = cfg.categories;
  const std::size_t d = cfg.dim;
  std::vector<std::vector<double>> basis;
  TextPrototypes text;
  text.rows = Matrix(C, d);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    // Gram-Schmidt against earlier prototypes while they still span < d dims.
    if (c < d) {
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& b : basis) {
          double p = 0.0;
          for (std::size_t k = 0; k < d; ++k) p += v[k] * b[k];
          for (std::size_t k = 0; k < d; ++k) v[k] -= p * b[k];
        }
      }
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    for (std::size_t k = 0; k < d; ++k) text.rows(c, k) = static_cast<float>(v[k]);
    if (c < d) basis.push_back(std::move(v));
    text.names.push_back(c < kNames.size() ? std::string(kNames[c]) : "class_" + std::to_string(c));
  }
  return text;
}

std::vector<Box> place_boxes(const SynthConfig& cfg) {
  Rng rng(Rng::derive(cfg.seed, kLayout));
  const std::size_t C = cfg.categories;
  // Every category appears once before any repeats.
  std::vector<std::int32_t> order(C);
  for (std::size_t c = 0; c < C; ++c) order[c] = static_cast<std::int32_t>(c);
  rng.shuffle(std::span<std::int32_t>(order));

  std::vector<Box> boxes;
  const double A = cfg.arena;
  for (std::size_t k = 0; k < cfg.objects; ++k) {
    const std::int32_t category =
        k < C ? order[k] : static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(C)));
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const double sx = rng.uniform(0.4, 1.0);
      const double sy = rng.uniform(0.4, 1.0);
      const double h = rng.uniform(0.3, 1.0);
      if (sx >= 2.0 * A || sy >= 2.0 * A) continue;
      const double cx = rng.uniform(-A + sx / 2, A - sx / 2);
      const double cy = rng.uniform(-A + sy / 2, A - sy / 2);
      Box b{{cx - sx / 2, cy - sy / 2, 0.0}, {cx + sx / 2, cy + sy / 2, h}, category};
      const bool clear = std::none_of(boxes.begin(), boxes.end(), [&](const Box& o) {
        return b.lo[0] < o.hi[0] + kGap && o.lo[0] < b.hi[0] + kGap && b.lo[1] < o.hi[1] + kGap &&
               o.lo[1] < b.hi[1] + kGap;
      });
      if (clear) {
        boxes.push_back(b);
        placed = true;
      }
    }
    if (!placed) {
      throw Error(ErrorKind::InvalidArgument,
                  "unsatisfiable layout: object " + std::to_string(k) + " could not be placed after " +
                      std::to_string(kPlacementAttempts) + " attempts",
                  "objects");
    }
  }
  return boxes;
}

// One area-weighted sample on the top or a side face (the floor face is never
// observed).
Vec3 surface_point(const Box& b, Rng& rng) {
  const double sx = b.hi[0] - b.lo[0];
  const double sy = b.hi[1] - b.lo[1];
  const double h = b.hi[2] - b.lo[2];
  const std::array<double, 5> area{sx * sy, sx * h, sx * h, sy * h, sy * h};
  double total = 0.0;
  for (double a : area) total += a;
  double r = rng.uniform() * total;
  std::size_t face = 0;
  while (face + 1 < area.size() && r >= area[face]) r -= area[face++];
  const double s = rng.uniform();
  const double t = rng.uniform();
  const double x = b.lo[0] + s * sx;
  const double y = b.lo[1] + s * sy;
  const double z = b.lo[2] + t * h;
  switch (face) {
    case 0: return {x, b.lo[1] + t * sy, b.hi[2]};
    case 1: return {x, b.lo[1], z};
    case 2: return {x, b.hi[1], z};
    case 3: return {b.lo[0], y, z};
    default: return {b.hi[0], y, z};
  }
}

// Smallest positive ray parameter hitting the box, or +inf.
double ray_box(const Vec3& o, const Vec3& dir, const Box& b) {
  double tn = -std::numeric_limits<double>::infinity();
  double tf = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (o[a] < b.lo[a] || o[a] > b.hi[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t0 = (b.lo[a] - o[a]) / dir[a];
    double t1 = (b.hi[a] - o[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    tn = std::max(tn, t0);
    tf = std::min(tf, t1);
  }
  if (tn > tf || tn <= 1e-9) return std::numeric_limits<double>::infinity();
  return tn;
}

CameraModel ring_camera(const SynthConfig& cfg, std::size_t k, double phase) {
  CameraModel cam;
  cam.width = cfg.width;
  cam.height = cfg.height;
  cam.fx = cam.fy = static_cast<float>(0.7 * cfg.width);
  cam.cx = static_cast<float>(cfg.width / 2);
  cam.cy = static_cast<float>(cfg.height / 2);
  const double angle = phase + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(cfg.frames);
  const double radius = 2.2 * cfg.arena;
  const Vec3 eye{radius * std::cos(angle), radius * std::sin(angle), 1.6 * cfg.arena + 0.5};
  const Vec3 target{0.0, 0.0, 0.3};
  const Vec3 fwd = unit(sub(target, eye));
  const Vec3 right = unit(cross(fwd, {0.0, 0.0, 1.0}));
  const Vec3 down = cross(fwd, right);
  const std::array<Vec3, 3> R{right, down, fwd};
  for (int r = 0; r < 3; ++r) {
    double t = 0.0;
    for (int c = 0; c < 3; ++c) {
      cam.pose[r * 4 + c] = static_cast<float>(R[r][c]);
      t -= R[r][c] * eye[c];
    }
    cam.pose[r * 4 + 3] = static_cast<float>(t);
  }
  return cam;
}

// Ray-cast depth (camera z) and the hit object per pixel (-1 for background).
void render(const CameraModel& cam, const std::vector<Box>& boxes, Matrix& depth, std::vector<std::int32_t>& hit) {
  const auto& T = cam.pose;
  // Camera centre and rotation in world frame from the float pose, so the
  // rendered depth agrees with what the projector recomputes.
  std::array<double, 9> R{};
  for (int i = 0; i < 9; ++i) R[i] = T[(i / 3) * 4 + i % 3];
  const Vec3 t{T[3], T[7], T[11]};
  Vec3 eye{};
  for (int c = 0; c < 3; ++c) eye[c] = -(R[0 * 3 + c] * t[0] + R[1 * 3 + c] * t[1] + R[2 * 3 + c] * t[2]);

  depth = Matrix(static_cast<std::size_t>(cam.height), static_cast<std::size_t>(cam.width));
  hit.assign(cam.pixel_count(), -1);
  for (std::int32_t v = 0; v < cam.height; ++v) {
    for (std::int32_t u = 0; u < cam.width; ++u) {
      const Vec3 dc{(u - double(cam.cx)) / cam.fx, (v - double(cam.cy)) / cam.fy, 1.0};
      Vec3 dw{};
      for (int c = 0; c < 3; ++c) dw[c] = R[0 * 3 + c] * dc[0] + R[1 * 3 + c] * dc[1] + R[2 * 3 + c] * dc[2];
      double best = std::numeric_limits<double>::infinity();
      std::int32_t who = -1;
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const double s = ray_box(eye, dw, boxes[b]);
        if (s < best) {
          best = s;
          who = static_cast<std::int32_t>(b);
        }
      }
      if (who >= 0) {
        // dc has unit z, so the ray parameter is the camera-frame depth.
        depth(static_cast<std::size_t>(v), static_cast<std::size_t>(u)) = static_cast<float>(best);
        hit[static_cast<std::size_t>(v) * cam.width + u] = who;
      }
    }
  }
}

void noisy_prototype(const TextPrototypes& text, std::size_t c, double sigma, Rng& rng, std::span<float> out) {
  const auto p = text.rows.row(c);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<float>(p[k] + sigma * rng.normal());
}

}  // namespace

void validate_config(const SynthConfig& cfg) {
  if (cfg.categories == 0) throw Error(ErrorKind::InvalidArgument, "need at least one category", "categories");
  if (cfg.dim == 0) throw Error(ErrorKind::InvalidArgument, "must be positive", "dim");
  if (cfg.objects == 0) throw Error(ErrorKind::InvalidArgument, "need at least one object", "objects");
  if (cfg.points_per_object == 0) throw Error(ErrorKind::InvalidArgument, "must be positive", "points_per_object");
  if (cfg.frames == 0) throw Error(ErrorKind::InvalidArgument, "need at least one frame", "frames");
  if (cfg.width < 2 || cfg.height < 2) throw Error(ErrorKind::InvalidArgument, "image must be at least 2x2", "image");
  if (!(cfg.p2d >= 0.0 && cfg.p2d <= 1.0)) throw Error(ErrorKind::InvalidArgument, "must be in [0, 1]", "p2d");
  if (!(cfg.p3d >= 0.0 && cfg.p3d <= 1.0)) throw Error(ErrorKind::InvalidArgument, "must be in [0, 1]", "p3d");
  if (!(cfg.sigma >= 0.0) || !std::isfinite(cfg.sigma)) throw Error(ErrorKind::InvalidArgument, "must be >= 0", "sigma");
  if (cfg.masks_per_object == 0) throw Error(ErrorKind::InvalidArgument, "must be positive", "masks_per_object");
  if (!(cfg.arena > 0.5) || !std::isfinite(cfg.arena)) {
    throw Error(ErrorKind::InvalidArgument, "must exceed 0.5 m", "arena");
  }
}

std::vector<std::string> config_warnings(const SynthConfig& cfg) {
  std::vector<std::string> out;
  if (cfg.dim < cfg.categories) {
    out.push_back("dim " + std::to_string(cfg.dim) + " < categories " + std::to_string(cfg.categories) +
                  ": prototypes beyond the first dim are not orthogonal");
  }
  if (cfg.objects < cfg.categories) out.push_back("fewer objects than categories: some classes never appear");
  return out;
}

SceneBundle gen_scene(const SynthConfig& cfg) {
  validate_config(cfg);
  SceneBundle b;
  b.scene_id = "synth_" + std::to_string(cfg.seed);
  b.seed = cfg.seed;
  b.dim = cfg.dim;
  b.text = make_prototypes(cfg);
  const auto boxes = place_boxes(cfg);

  Rng cam_rng(Rng::derive(cfg.seed, kCamera));
  const double phase = cam_rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<std::vector<std::int32_t>> hits(cfg.frames);
  b.frames.resize(cfg.frames);
  for (std::size_t k = 0; k < cfg.frames; ++k) {
    b.frames[k].camera = ring_camera(cfg, k, phase);
    render(b.frames[k].camera, boxes, b.frames[k].depth, hits[k]);
  }

  Rng surf(Rng::derive(cfg.seed, kSurface));
  std::vector<Vec3> pts;
  std::vector<std::int32_t> owner;
  // Points come from surface patches some frame observes, as in a scan fused
  // from the same frames; after kSurfaceAttempts misses a draw is kept anyway.
  const auto observed = [&](const Vec3& exact) {
    const Vec3 p{float(exact[0]), float(exact[1]), float(exact[2])};  // as stored
    return std::any_of(b.frames.begin(), b.frames.end(), [&](const FrameObservation& f) {
      return project_point(p, f.camera, f.depth, kDefaultEpsDepth).has_value();
    });
  };
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    for (std::size_t i = 0; i < cfg.points_per_object; ++i) {
      Vec3 p = surface_point(boxes[k], surf);
      for (int attempt = 1; attempt < kSurfaceAttempts && !observed(p); ++attempt) p = surface_point(boxes[k], surf);
      pts.push_back(p);
      owner.push_back(static_cast<std::int32_t>(k));
    }
  }
  const std::size_t n = pts.size();
  b.points.coords = Matrix(n, 3);
  LabelMap gt(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) b.points.coords(i, a) = static_cast<float>(pts[i][a]);
    gt[i] = boxes[static_cast<std::size_t>(owner[i])].category;
  }
  b.gt = std::move(gt);
  if (cfg.cluster_offsets) {
    std::vector<Vec3> centroid(boxes.size(), Vec3{0, 0, 0});
    std::vector<std::size_t> count(boxes.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(owner[i]);
      for (int a = 0; a < 3; ++a) centroid[k][a] += b.points.coords(i, a);
      ++count[k];
    }
    Matrix off(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(owner[i]);
      for (int a = 0; a < 3; ++a) {
        off(i, a) = static_cast<float>(centroid[k][a] / static_cast<double>(count[k]) - b.points.coords(i, a));
      }
    }
    b.points.cluster_offsets = std::move(off);
  } else {
    b.points.cluster_ids = std::move(owner);
  }

  Rng emb_rng(Rng::derive(cfg.seed, kMaskEmb));
  for (std::size_t k = 0; k < cfg.frames; ++k) {
    FrameObservation& f = b.frames[k];
    const auto& hit = hits[k];
    std::vector<std::uint8_t> seen(boxes.size(), 0);
    for (auto h : hit) {
      if (h >= 0) seen[static_cast<std::size_t>(h)] = 1;
    }
    std::vector<std::int32_t> first_mask(boxes.size(), -1);
    std::size_t m = 0;
    for (std::size_t o = 0; o < boxes.size(); ++o) {
      if (!seen[o]) continue;
      first_mask[o] = static_cast<std::int32_t>(m);
      m += cfg.masks_per_object;
    }
    f.mask_embeddings = Matrix(m, cfg.dim);
    for (std::size_t o = 0; o < boxes.size(); ++o) {
      if (first_mask[o] < 0) continue;
      for (std::size_t r = 0; r < cfg.masks_per_object; ++r) {
        noisy_prototype(b.text, static_cast<std::size_t>(boxes[o].category), cfg.sigma, emb_rng,
                        f.mask_embeddings.row(static_cast<std::size_t>(first_mask[o]) + r));
      }
    }
    f.mask_probs = Matrix(f.camera.pixel_count(), m);
    for (std::size_t p = 0; p < hit.size(); ++p) {
      if (hit[p] < 0) continue;
      const auto j0 = static_cast<std::size_t>(first_mask[static_cast<std::size_t>(hit[p])]);
      for (std::size_t r = 0; r < cfg.masks_per_object; ++r) f.mask_probs(p, j0 + r) = 1.0f;
    }
  }
  return b;
}

SceneBundle inject_noise(const SceneBundle& bundle, const NoiseConfig& noise) {
  if (!(noise.p2d >= 0.0 && noise.p2d <= 1.0)) throw Error(ErrorKind::InvalidArgument, "must be in [0, 1]", "p2d");
  if (!(noise.p3d >= 0.0 && noise.p3d <= 1.0)) throw Error(ErrorKind::InvalidArgument, "must be in [0, 1]", "p3d");
  SceneBundle out = bundle;
  const std::size_t C = bundle.text.count();
  if (C < 2 || (noise.p2d == 0.0 && noise.p3d == 0.0)) return out;
  const Classifier clf(bundle.text);
  const std::size_t d = bundle.text.dim();
  Rng rng(Rng::derive(noise.seed, kNoise));

  for (auto& f : out.frames) {
    const std::size_t npix = f.camera.pixel_count();

    // Label of the pixel under the candidate-mask vote; -1 without candidates.
    std::vector<std::int32_t> mask_label(f.mask_count());
    for (std::size_t j = 0; j < f.mask_count(); ++j) mask_label[j] = clf.classify(f.mask_embeddings.row(j));
    const auto pixel_label = [&](std::size_t p) -> std::int32_t {
      std::vector<std::int32_t> labels;
      for (auto j : candidate_masks(f.mask_probs.row(p), noise.beta)) labels.push_back(mask_label[j]);
      return labels.empty() ? kIgnoreLabel : modal_label(labels);
    };

    // 3D stage.
    std::vector<std::int32_t> corrupt(npix, kIgnoreLabel);
    if (noise.p3d > 0.0) {
      for (std::size_t i = 0; i < out.points.size(); ++i) {
        const auto c = out.points.coords.row(i);
        const auto pix = project_point({c[0], c[1], c[2]}, f.camera, f.depth, noise.eps_depth);
        if (!pix || !rng.bernoulli(noise.p3d)) continue;
        if (corrupt[*pix] != kIgnoreLabel) continue;
        const std::int32_t own = pixel_label(*pix);
        if (own == kIgnoreLabel) continue;
        auto wrong = static_cast<std::int32_t>(rng.below(C - 1));
        if (wrong >= own) ++wrong;
        corrupt[*pix] = wrong;
      }
      std::vector<std::int32_t> column(C, -1);
      std::size_t extra = 0;
      for (auto w : corrupt) {
        if (w != kIgnoreLabel && column[static_cast<std::size_t>(w)] < 0) column[static_cast<std::size_t>(w)] = 0;
      }
      for (std::size_t c = 0; c < C; ++c) {
        if (column[c] == 0) column[c] = static_cast<std::int32_t>(f.mask_count() + extra++);
      }
      if (extra > 0) {
        const std::size_t m0 = f.mask_count();
        const std::size_t m1 = m0 + extra;
        Matrix probs(npix, m1);
        for (std::size_t p = 0; p < npix; ++p) {
          if (corrupt[p] != kIgnoreLabel) {
            probs(p, static_cast<std::size_t>(column[static_cast<std::size_t>(corrupt[p])])) = 1.0f;
          } else {
            std::copy_n(f.mask_probs.row(p).begin(), m0, probs.row(p).begin());
          }
        }
        Matrix emb(m1, d);
        std::copy(f.mask_embeddings.data.begin(), f.mask_embeddings.data.end(), emb.data.begin());
        for (std::size_t c = 0; c < C; ++c) {
          if (column[c] >= 0) noisy_prototype(bundle.text, c, noise.sigma, rng, emb.row(static_cast<std::size_t>(column[c])));
        }
        f.mask_probs = std::move(probs);
        f.mask_embeddings = std::move(emb);
        mask_label.resize(m1);
        for (std::size_t j = m0; j < m1; ++j) mask_label[j] = clf.classify(f.mask_embeddings.row(j));
      }
    }

    // 2D stage.
    if (noise.p2d > 0.0 && f.mask_count() > 0) {
      const std::size_t m = f.mask_count();
      std::vector<std::size_t> area(m, 0);
      for (std::size_t p = 0; p < npix; ++p) {
        for (auto j : candidate_masks(f.mask_probs.row(p), noise.beta)) ++area[j];
      }
      std::vector<std::size_t> by_area(m);
      for (std::size_t j = 0; j < m; ++j) by_area[j] = j;
      std::stable_sort(by_area.begin(), by_area.end(), [&](auto a, auto b) { return area[a] > area[b]; });
      std::vector<std::int32_t> labels(npix);
      for (std::size_t p = 0; p < npix; ++p) labels[p] = pixel_label(p);
      for (std::size_t p = 0; p < npix; ++p) {
        if (labels[p] == kIgnoreLabel || !rng.bernoulli(noise.p2d)) continue;
        for (auto j : by_area) {
          if (mask_label[j] != labels[p]) {
            f.mask_probs(p, j) = 1.0f;
            break;
          }
        }
      }
    }
  }
  return out;
}

SceneBundle synthesize(const SynthConfig& cfg) {
  NoiseConfig noise;
  noise.p2d = cfg.p2d;
  noise.p3d = cfg.p3d;
  noise.sigma = cfg.sigma;
  noise.seed = Rng::derive(cfg.seed, kNoise);
  return inject_noise(gen_scene(cfg), noise);
}

}  // namespace cus3d
