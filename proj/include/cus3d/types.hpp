#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cus3d {

inline constexpr std::int32_t kIgnoreLabel = -1;

// Dense row-major tensor. Every on-disk blob maps onto a float Matrix; the
// student network works in MatrixD.
template <typename T>
struct BasicMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  BasicMatrix() = default;
  BasicMatrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  std::span<T> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const T> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  T operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool empty() const { return data.empty(); }
  bool operator==(const BasicMatrix&) const = default;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

// Per-pixel or per-point category assignment; kIgnoreLabel marks invalid.
using LabelMap = std::vector<std::int32_t>;

struct TextPrototypes {
  Matrix rows;  // C x d
  std::vector<std::string> names;

  std::size_t count() const { return rows.rows; }
  std::size_t dim() const { return rows.cols; }
  bool operator==(const TextPrototypes&) const = default;
};

struct CameraModel {
  float fx = 1.0f;
  float fy = 1.0f;
  float cx = 0.0f;
  float cy = 0.0f;
  std::int32_t width = 1;
  std::int32_t height = 1;
  // World-to-camera rigid transform, row-major 4x4.
  std::array<float, 16> pose{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  bool operator==(const CameraModel&) const = default;
};

struct FrameObservation {
  CameraModel camera;
  Matrix depth;            // height x width, meters, 0 = no reading
  Matrix mask_probs;       // (width*height) x m
  Matrix mask_embeddings;  // m x d

  std::size_t mask_count() const { return mask_embeddings.rows; }
  bool operator==(const FrameObservation&) const = default;
};

struct PointSet {
  Matrix coords;  // N x 3
  std::optional<std::vector<std::int32_t>> cluster_ids;
  std::optional<Matrix> cluster_offsets;  // N x 3

  std::size_t size() const { return coords.rows; }
  bool operator==(const PointSet&) const = default;
};

struct SceneBundle {
  PointSet points;
  std::vector<FrameObservation> frames;
  TextPrototypes text;
  std::optional<LabelMap> gt;
  std::string scene_id;
  std::uint64_t seed = 0;
  std::size_t dim = 0;

  bool operator==(const SceneBundle&) const = default;
};

// Pixel-wise (F_pixel) or point-wise (F_point) features. Invalid entries hold
// an all-zero feature and label kIgnoreLabel.
struct FeatureField {
  Matrix features;  // n x d
  std::vector<std::uint8_t> valid;
  LabelMap labels;

  FeatureField() = default;
  FeatureField(std::size_t n, std::size_t d) : features(n, d), valid(n, 0), labels(n, kIgnoreLabel) {}

  std::size_t size() const { return valid.size(); }
  std::size_t dim() const { return features.cols; }
  std::size_t valid_count() const;
  bool operator==(const FeatureField&) const = default;
};

using PixelFeatureField = FeatureField;
using PointFeatureField = FeatureField;

// Bitwise comparison of every tensor; unlike operator== it distinguishes
// -0.0 from 0.0 and treats identical NaN payloads as equal.
bool bitwise_equal(const Matrix& a, const Matrix& b);
bool bitwise_equal(const SceneBundle& a, const SceneBundle& b);
bool bitwise_equal(const FeatureField& a, const FeatureField& b);

// Small vector kernels shared by every module. Accumulation is double.
double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> a);
double cosine(std::span<const float> a, std::span<const float> b);

}  // namespace cus3d
