#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cus3d/types.hpp"

namespace cus3d {

// Valid points get their cosine-argmax category, invalid ones kIgnoreLabel.
LabelMap classify_points(const PointFeatureField& field, const TextPrototypes& text, int threads = 1);

// Per-point cosine similarity to a query embedding; invalid points are NaN.
std::vector<float> query_similarity(const PointFeatureField& field, std::span<const float> query);

struct SplitReport {
  std::vector<std::int32_t> seen;
  std::vector<std::int32_t> unseen;
  double miou_seen = 0.0;
  double miou_unseen = 0.0;
  std::optional<double> hiou;  // absent when both split mIoUs are zero
};

struct EvalReport {
  std::size_t classes = 0;
  // classes x (classes + 1): rows are ground truth, the last column counts
  // points whose prediction was kIgnoreLabel (rejected).
  std::vector<std::uint64_t> confusion;
  std::uint64_t counted = 0;
  double acc = 0.0;
  double mean_class_acc = 0.0;
  std::vector<double> per_class_iou;   // NaN where the class is absent from gt and pred
  std::vector<std::uint8_t> defined;   // 1 where per_class_iou is defined
  double miou = 0.0;
  std::optional<SplitReport> split;

  std::uint64_t at(std::size_t gt, std::size_t pred) const { return confusion[gt * (classes + 1) + pred]; }
  std::uint64_t rejected(std::size_t gt) const { return confusion[gt * (classes + 1) + classes]; }
};

// Confusion over points with gt != ignore. A predicted ignore counts as a
// miss for its gt class. IoU_c = TP / (TP + FP + FN); classes absent from
// both gt and pred are excluded from the mean.
EvalReport evaluate(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, std::size_t classes,
                    std::int32_t ignore = kIgnoreLabel);

// Mean IoU over a subset of classes, skipping undefined ones (0 if none defined).
double subset_miou(const EvalReport& report, std::span<const std::int32_t> classes);

// Adds seen/unseen mIoU and their harmonic mean. `unseen` lists category
// indices; every other category is seen.
void attach_split(EvalReport& report, std::span<const std::int32_t> unseen);

// Harmonic mean 2ab/(a+b). Throws when both are zero or either is negative.
double hiou(double miou_seen, double miou_unseen);

// JSON text with per-class IoU keyed by category name.
std::string report_to_json(const EvalReport& report, std::span<const std::string> names);

}  // namespace cus3d
