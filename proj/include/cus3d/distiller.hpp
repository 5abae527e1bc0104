#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cus3d/types.hpp"

namespace cus3d {

enum class Activation { Relu, Tanh, Identity };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct StudentConfig {
  std::vector<std::size_t> encoder_widths{64, 64};
  std::size_t head_width = 64;  // width of the two hidden head layers
  std::size_t out_dim = 0;      // 0: take d from the bundle
  Activation activation = Activation::Relu;
  double lr0 = 1e-3;
  double momentum = 0.9;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lambda_feature = 1.0;  // 0 switches the feature term off (loss ablation)
  double lambda_label = 1.0;
  double tau = 0.07;
  std::uint64_t seed = 0;
  // With an unseen split, points whose teacher label is unseen are dropped
  // from both terms; false keeps them in the feature term only.
  bool unseen_excluded_from_feature_loss = true;
};

// Throws ErrorKind::InvalidArgument naming the first bad field.
void validate_config(const StudentConfig& cfg);

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;    // out
  bool operator==(const DenseLayer&) const = default;
};

// Point-wise MLP: (normalised x, y, z) -> encoder -> three-layer projection
// head -> d. The activation follows every layer except the last.
struct StudentModel {
  std::array<double, 3> input_center{0, 0, 0};
  double input_scale = 1.0;
  std::vector<DenseLayer> layers;
  std::size_t encoder_layers = 0;
  Activation activation = Activation::Relu;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out; }
  std::size_t parameter_count() const;
  bool operator==(const StudentModel&) const = default;
};

// Fan-in uniform initialisation U(-1/sqrt(in), 1/sqrt(in)) from cfg.seed;
// input normalisation is fitted to `coords` (bounding-box centre and half
// extent).
StudentModel init_student(const StudentConfig& cfg, std::size_t out_dim, const Matrix& coords);

// N x 3 coordinates -> N x d outputs (fo).
MatrixD forward(const StudentModel& model, const Matrix& coords);

// Feature loss: 1 - mean_i cos(fo_i, fc_i). Throws on a zero-norm row.
double feature_loss(const MatrixD& fo, const MatrixD& fc);

// Label loss with a temperature-softened student side:
// mean_i CE(softmax(cos(fo_i, text) / tau), onehot(argmax_c cos(fc_i, text))).
double label_loss(const MatrixD& fo, const MatrixD& fc, const TextPrototypes& text, double tau);

// feature_loss + lambda_label * label_loss.
double total_loss(const MatrixD& fo, const MatrixD& fc, const TextPrototypes& text, double lambda_label, double tau);

// Loss value and its gradient with respect to every output row. Rows with
// feature_mask[i] == 0 are left out of the feature term, rows with
// teacher_label[i] < 0 out of the label term; each term averages over the
// rows it includes.
struct LossGrad {
  double feature = 0.0;
  double label = 0.0;
  double total = 0.0;
  MatrixD grad;  // same shape as fo
};
LossGrad loss_and_gradient(const MatrixD& fo, const MatrixD& fc, std::span<const std::int32_t> teacher_label,
                           std::span<const std::uint8_t> feature_mask, const TextPrototypes& text,
                           double lambda_feature, double lambda_label, double tau);

// Teacher class per row (cosine argmax of fc against the prototypes).
std::vector<std::int32_t> teacher_labels(const MatrixD& fc, const TextPrototypes& text);

// Analytic gradient of the batch loss with respect to every parameter,
// in layer order (weights then bias per layer).
std::vector<double> parameter_gradient(const StudentModel& model, const Matrix& coords, const MatrixD& fc,
                                       const TextPrototypes& text, double lambda_feature, double lambda_label,
                                       double tau);

// Max over parameters of |g_analytic - g_fd| / max(1, |g_analytic|, |g_fd|),
// with central differences at step 1e-5 on total_loss (feature weight 1).
double grad_check(const StudentModel& model, const Matrix& coords, const MatrixD& fc, const TextPrototypes& text,
                  double tau, double lambda_label, double step = 1e-5);

struct EpochLoss {
  std::size_t epoch = 0;
  double lr = 0.0;
  double feature = 0.0;
  double label = 0.0;
  double total = 0.0;
};

struct TrainResult {
  StudentModel model;
  std::vector<EpochLoss> curve;
};

// Cosine-annealed learning rate for `epoch` in [0, epochs).
double cosine_lr(double lr0, std::size_t epoch, std::size_t epochs);

// Distils the teacher field into a student. Only teacher-valid points are
// used; `unseen` lists category indices withheld from supervision.
TrainResult train(const SceneBundle& bundle, const PointFeatureField& teacher, const StudentConfig& cfg,
                  std::span<const std::int32_t> unseen = {});

// Student features for every point, labelled against the prototypes.
PointFeatureField predict(const StudentModel& model, const Matrix& coords, const TextPrototypes& text);

std::string loss_curve_csv(std::span<const EpochLoss> curve);

// Checkpoint: model.json (architecture, normalisation, seed, step) plus
// layer_<k>_weight.bin / layer_<k>_bias.bin. Weights are stored as float32,
// so a reloaded model matches the trained one to float precision.
void save_model(const StudentModel& model, const std::filesystem::path& dir);
StudentModel load_model(const std::filesystem::path& dir);

}  // namespace cus3d
