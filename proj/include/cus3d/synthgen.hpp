#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cus3d/pixel_assigner.hpp"
#include "cus3d/projector.hpp"
#include "cus3d/types.hpp"

namespace cus3d {

struct SynthConfig {
  std::size_t categories = 6;
  std::size_t dim = 16;
  std::size_t objects = 6;
  std::size_t points_per_object = 200;
  std::size_t frames = 6;
  std::int32_t width = 96;
  std::int32_t height = 72;
  double p2d = 0.0;
  double p3d = 0.0;
  double sigma = 0.05;
  // Every visible object contributes this many identical-footprint masks per
  // frame, standing in for the overlapping proposals a mask generator makes.
  std::size_t masks_per_object = 2;
  bool cluster_offsets = false;  // emit offsets instead of cluster ids
  double arena = 2.0;            // half extent of the square floor, meters
  std::uint64_t seed = 0;
};

// Throws ErrorKind::InvalidArgument naming the first bad field.
void validate_config(const SynthConfig& cfg);

// Non-fatal remarks about a valid config (e.g. d < C).
std::vector<std::string> config_warnings(const SynthConfig& cfg);

// Noise-free scene: orthonormal prototypes, box objects on the floor, ring
// cameras with ray-cast depth and one mask group per visible object.
SceneBundle gen_scene(const SynthConfig& cfg);

struct NoiseConfig {
  double p2d = 0.0;
  double p3d = 0.0;
  double sigma = 0.05;  // noise on the embeddings of corruption masks
  double beta = kDefaultBeta;
  double eps_depth = kDefaultEpsDepth;
  std::uint64_t seed = 0;
};

// 3D stage: each visible (point, frame) pair is corrupted with probability
// p3d; the pixel it lands on loses its masks and joins a per-frame mask of a
// different class. 2D stage: each covered pixel with probability p2d also
// joins the largest mask of a class other than its own. Geometry and gt are
// never touched.
SceneBundle inject_noise(const SceneBundle& bundle, const NoiseConfig& noise);

// gen_scene followed by inject_noise with cfg.p2d / cfg.p3d / cfg.sigma.
SceneBundle synthesize(const SynthConfig& cfg);

}  // namespace cus3d
