#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cus3d/aggregator.hpp"
#include "cus3d/distiller.hpp"
#include "cus3d/pixel_assigner.hpp"
#include "cus3d/projector.hpp"
#include "cus3d/synthgen.hpp"
#include "cus3d/types.hpp"

namespace cus3d {

struct OdpOptions {
  double beta = kDefaultBeta;
  double eps_depth = kDefaultEpsDepth;
  double radius = kDefaultRadius;
  bool filter_2d = true;
  bool filter_3d = true;
  std::size_t frame_stride = 1;
  int threads = 1;
};

void validate_options(const OdpOptions& opts);

// Pixel features for every used frame, in frame order.
std::vector<PixelFeatureField> assign_frames(const SceneBundle& bundle, const OdpOptions& opts);

// Raw per-point features gathered from every used frame.
RawPointFeatures gather(const SceneBundle& bundle, const OdpOptions& opts);

// Object-level denoising projection: pixel assignment, projection and object
// aggregation, each stage optionally without its filter.
PointFeatureField run_odp(const SceneBundle& bundle, const OdpOptions& opts);

struct AblationConfig {
  SynthConfig synth;              // p2d / p3d / seed apply per run
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  OdpOptions odp;
  bool student_axis = false;      // also distil a student from each teacher
  StudentConfig student;
};

struct AblationCell {
  bool filter_2d = false;
  bool filter_3d = false;
  bool student = false;
  double miou = 0.0;  // mean over seeds
  double acc = 0.0;
  std::vector<double> miou_per_seed;
  std::vector<double> acc_per_seed;
};

// Filter ablation grid over the same noisy bundles. Rows are ordered (2D, 3D) =
// off/off, on/off, off/on, on/on, each first without and then (when
// student_axis is set) with the student. Metrics count every gt point; a
// point left without a feature is a miss.
std::vector<AblationCell> ablation_matrix(const AblationConfig& cfg);

std::string ablation_csv(const std::vector<AblationCell>& cells);
std::string ablation_json(const std::vector<AblationCell>& cells, const AblationConfig& cfg);

}  // namespace cus3d
