#include "cus3d/distiller.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "cus3d/bundle_io.hpp"
#include "cus3d/error.hpp"
#include "cus3d/pixel_assigner.hpp"
#include "cus3d/rng.hpp"

namespace cus3d {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw Error(ErrorKind::InvalidArgument, "unknown activation '" + name + "'", "activation");
}

void validate_config(const StudentConfig& cfg) {
  for (auto w : cfg.encoder_widths) {
    if (w == 0) throw Error(ErrorKind::InvalidArgument, "widths must be positive", "encoder_widths");
  }
  if (cfg.head_width == 0) throw Error(ErrorKind::InvalidArgument, "must be positive", "head_width");
  if (!(cfg.lr0 > 0.0) || !std::isfinite(cfg.lr0)) throw Error(ErrorKind::InvalidArgument, "must be > 0", "lr0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "must be in [0, 1)", "momentum");
  }
  if (cfg.batch_size == 0) throw Error(ErrorKind::InvalidArgument, "must be positive", "batch_size");
  if (!(cfg.lambda_feature >= 0.0) || !std::isfinite(cfg.lambda_feature)) {
    throw Error(ErrorKind::InvalidArgument, "must be >= 0", "lambda_feature");
  }
  if (!(cfg.lambda_label >= 0.0) || !std::isfinite(cfg.lambda_label)) {
    throw Error(ErrorKind::InvalidArgument, "must be >= 0", "lambda_label");
  }
  if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) throw Error(ErrorKind::InvalidArgument, "must be > 0", "tau");
}

std::size_t StudentModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

double activate_grad(Activation a, double pre, double post) {
  switch (a) {
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - post * post;
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

// Activations of one sample: post[0] is the normalised input, pre[k] / post[k+1]
// belong to layer k.
struct Trace {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;
};

void normalise_input(const StudentModel& m, std::span<const float> c, std::vector<double>& x) {
  x.resize(3);
  for (int a = 0; a < 3; ++a) x[a] = (double(c[a]) - m.input_center[a]) / m.input_scale;
}

void forward_one(const StudentModel& m, std::span<const float> coord, Trace& t) {
  const std::size_t L = m.layers.size();
  t.pre.resize(L);
  t.post.resize(L + 1);
  normalise_input(m, coord, t.post[0]);
  for (std::size_t k = 0; k < L; ++k) {
    const auto& layer = m.layers[k];
    const auto& in = t.post[k];
    auto& pre = t.pre[k];
    auto& post = t.post[k + 1];
    pre.resize(layer.out);
    post.resize(layer.out);
    const bool last = k + 1 == L;
    for (std::size_t o = 0; o < layer.out; ++o) {
      double s = layer.bias[o];
      const double* w = layer.weight.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) s += w[i] * in[i];
      pre[o] = s;
      post[o] = last ? s : activate(m.activation, s);
    }
  }
}

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
void backward_one(const StudentModel& m, const Trace& t, std::span<const double> dout, std::vector<DenseLayer>& grads) {
  const std::size_t L = m.layers.size();
  std::vector<double> delta(dout.begin(), dout.end());
  std::vector<double> next;
  for (std::size_t k = L; k-- > 0;) {
    const auto& layer = m.layers[k];
    auto& g = grads[k];
    if (k + 1 != L) {
      for (std::size_t o = 0; o < layer.out; ++o) delta[o] *= activate_grad(m.activation, t.pre[k][o], t.post[k + 1][o]);
    }
    const auto& in = t.post[k];
    for (std::size_t o = 0; o < layer.out; ++o) {
      g.bias[o] += delta[o];
      double* gw = g.weight.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) gw[i] += delta[o] * in[i];
    }
    if (k == 0) break;
    next.assign(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = layer.weight.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) next[i] += w[i] * delta[o];
    }
    delta.swap(next);
  }
}

std::vector<DenseLayer> zero_like(const StudentModel& m) {
  std::vector<DenseLayer> g;
  g.reserve(m.layers.size());
  for (const auto& l : m.layers) {
    g.push_back({l.in, l.out, std::vector<double>(l.weight.size(), 0.0), std::vector<double>(l.bias.size(), 0.0)});
  }
  return g;
}

void fill_zero(std::vector<DenseLayer>& g) {
  for (auto& l : g) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

std::vector<double> flatten(const std::vector<DenseLayer>& layers) {
  std::vector<double> out;
  for (const auto& l : layers) {
    out.insert(out.end(), l.weight.begin(), l.weight.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

std::vector<double*> parameter_slots(StudentModel& m) {
  std::vector<double*> out;
  for (auto& l : m.layers) {
    for (auto& w : l.weight) out.push_back(&w);
    for (auto& b : l.bias) out.push_back(&b);
  }
  return out;
}

double row_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double row_dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Unit-normalised prototypes in double.
MatrixD unit_text(const TextPrototypes& text) {
  MatrixD t(text.count(), text.dim());
  for (std::size_t c = 0; c < text.count(); ++c) {
    const auto r = text.rows.row(c);
    const double n = norm(r);
    if (n == 0.0) throw Error(ErrorKind::Numeric, "zero-norm prototype", "text");
    for (std::size_t k = 0; k < r.size(); ++k) t(c, k) = double(r[k]) / n;
  }
  return t;
}

void check_pair(const MatrixD& fo, const MatrixD& fc) {
  if (fo.rows != fc.rows || fo.cols != fc.cols) {
    throw Error(ErrorKind::InvalidArgument, "fo and fc shapes differ", "loss");
  }
  if (fo.rows == 0) throw Error(ErrorKind::InvalidArgument, "empty batch", "loss");
}

std::vector<std::uint8_t> all_rows(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

}  // namespace

StudentModel init_student(const StudentConfig& cfg, std::size_t out_dim, const Matrix& coords) {
  validate_config(cfg);
  if (out_dim == 0) throw Error(ErrorKind::InvalidArgument, "output dimension must be positive", "out_dim");
  StudentModel m;
  m.activation = cfg.activation;
  m.seed = cfg.seed;
  m.encoder_layers = cfg.encoder_widths.size();

  if (coords.rows > 0) {
    std::array<double, 3> lo{INFINITY, INFINITY, INFINITY};
    std::array<double, 3> hi{-INFINITY, -INFINITY, -INFINITY};
    for (std::size_t i = 0; i < coords.rows; ++i) {
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], double(coords(i, a)));
        hi[a] = std::max(hi[a], double(coords(i, a)));
      }
    }
    double half = 0.0;
    for (int a = 0; a < 3; ++a) {
      m.input_center[a] = 0.5 * (lo[a] + hi[a]);
      half = std::max(half, 0.5 * (hi[a] - lo[a]));
    }
    m.input_scale = half > 1e-9 ? half : 1.0;
  }

  std::vector<std::size_t> widths{3};
  widths.insert(widths.end(), cfg.encoder_widths.begin(), cfg.encoder_widths.end());
  widths.push_back(cfg.head_width);
  widths.push_back(cfg.head_width);
  widths.push_back(out_dim);

  Rng rng(Rng::derive(cfg.seed, 0x1417));
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    DenseLayer l;
    l.in = widths[k];
    l.out = widths[k + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    l.weight.resize(l.in * l.out);
    l.bias.resize(l.out);
    for (auto& w : l.weight) w = rng.uniform(-bound, bound);
    for (auto& b : l.bias) b = rng.uniform(-bound, bound);
    m.layers.push_back(std::move(l));
  }
  return m;
}

MatrixD forward(const StudentModel& model, const Matrix& coords) {
  if (coords.cols != 3) throw Error(ErrorKind::InvalidArgument, "coordinates must be N x 3", "coords");
  if (model.layers.empty()) throw Error(ErrorKind::InvalidArgument, "model has no layers", "model");
  MatrixD out(coords.rows, model.out_dim());
  Trace t;
  for (std::size_t i = 0; i < coords.rows; ++i) {
    forward_one(model, coords.row(i), t);
    const auto& y = t.post.back();
    for (std::size_t k = 0; k < y.size(); ++k) {
      if (!std::isfinite(y[k])) {
        throw Error(ErrorKind::Numeric, "non-finite activation at point " + std::to_string(i), "forward");
      }
      out(i, k) = y[k];
    }
  }
  return out;
}

std::vector<std::int32_t> teacher_labels(const MatrixD& fc, const TextPrototypes& text) {
  const MatrixD t = unit_text(text);
  std::vector<std::int32_t> labels(fc.rows);
  for (std::size_t i = 0; i < fc.rows; ++i) {
    const auto f = fc.row(i);
    const double n = row_norm(f);
    if (n == 0.0) throw Error(ErrorKind::Numeric, "zero-norm teacher feature at row " + std::to_string(i), "fc");
    std::int32_t best = 0;
    double best_cos = -INFINITY;
    for (std::size_t c = 0; c < t.rows; ++c) {
      const double cs = row_dot(f, t.row(c)) / n;
      if (cs > best_cos) {
        best_cos = cs;
        best = static_cast<std::int32_t>(c);
      }
    }
    labels[i] = best;
  }
  return labels;
}

LossGrad loss_and_gradient(const MatrixD& fo, const MatrixD& fc, std::span<const std::int32_t> teacher_label,
                           std::span<const std::uint8_t> feature_mask, const TextPrototypes& text,
                           double lambda_feature, double lambda_label, double tau) {
  check_pair(fo, fc);
  const std::size_t n = fo.rows;
  const std::size_t d = fo.cols;
  if (teacher_label.size() != n || feature_mask.size() != n) {
    throw Error(ErrorKind::InvalidArgument, "per-row masks must match the batch", "loss");
  }
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidArgument, "must be > 0", "tau");

  std::size_t n_feat = 0;
  std::size_t n_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    n_feat += feature_mask[i] ? 1 : 0;
    n_label += teacher_label[i] >= 0 ? 1 : 0;
  }
  const bool use_label = n_label > 0 && lambda_label != 0.0;
  MatrixD t;
  if (use_label) {
    t = unit_text(text);
    if (t.cols != d) throw Error(ErrorKind::InvalidArgument, "text dimension differs from outputs", "text");
  }

  LossGrad r;
  r.grad = MatrixD(n, d);
  double cos_sum = 0.0;
  double ce_sum = 0.0;
  std::vector<double> cosines(t.rows);
  std::vector<double> g(t.rows);
  for (std::size_t i = 0; i < n; ++i) {
    const auto o = fo.row(i);
    auto grad = r.grad.row(i);
    const double no = row_norm(o);
    const bool in_feat = feature_mask[i] != 0;
    const bool in_label = use_label && teacher_label[i] >= 0;
    if (!in_feat && !in_label) continue;
    if (no == 0.0 || !std::isfinite(no)) {
      throw Error(ErrorKind::Numeric, "zero-norm or non-finite output at row " + std::to_string(i), "fo");
    }
    if (in_feat) {
      const auto c = fc.row(i);
      const double nc = row_norm(c);
      if (nc == 0.0) throw Error(ErrorKind::Numeric, "zero-norm teacher feature at row " + std::to_string(i), "fc");
      const double cs = row_dot(o, c) / (no * nc);
      cos_sum += cs;
      // d(-cos)/d(o) scaled by the term weight and 1/n_feat.
      const double w = -lambda_feature / static_cast<double>(n_feat);
      for (std::size_t k = 0; k < d; ++k) grad[k] += w * (c[k] / (no * nc) - cs * o[k] / (no * no));
    }
    if (in_label) {
      const auto y = static_cast<std::size_t>(teacher_label[i]);
      if (y >= t.rows) throw Error(ErrorKind::InvalidArgument, "teacher label out of range", "teacher_label");
      double zmax = -INFINITY;
      for (std::size_t c = 0; c < t.rows; ++c) {
        cosines[c] = row_dot(o, t.row(c)) / no;
        zmax = std::max(zmax, cosines[c] / tau);
      }
      double zsum = 0.0;
      for (std::size_t c = 0; c < t.rows; ++c) zsum += std::exp(cosines[c] / tau - zmax);
      const double lse = zmax + std::log(zsum);
      ce_sum += lse - cosines[y] / tau;
      // dCE/dz_c = p_c - [c == y]; dz_c/do = (t_c / |o| - cos_c * o / |o|^2) / tau.
      const double w = lambda_label / static_cast<double>(n_label);
      double radial = 0.0;
      for (std::size_t c = 0; c < t.rows; ++c) {
        const double p = std::exp(cosines[c] / tau - lse);
        g[c] = (p - (c == y ? 1.0 : 0.0)) / tau;
        radial += g[c] * cosines[c];
      }
      for (std::size_t k = 0; k < d; ++k) {
        double tangential = 0.0;
        for (std::size_t c = 0; c < t.rows; ++c) tangential += g[c] * t(c, k);
        grad[k] += w * (tangential / no - radial * o[k] / (no * no));
      }
    }
  }
  r.feature = n_feat ? 1.0 - cos_sum / static_cast<double>(n_feat) : 0.0;
  r.label = n_label ? ce_sum / static_cast<double>(n_label) : 0.0;
  r.total = lambda_feature * r.feature + (use_label ? lambda_label * r.label : 0.0);
  return r;
}

double feature_loss(const MatrixD& fo, const MatrixD& fc) {
  check_pair(fo, fc);
  double s = 0.0;
  for (std::size_t i = 0; i < fo.rows; ++i) {
    const double no = row_norm(fo.row(i));
    const double nc = row_norm(fc.row(i));
    if (no == 0.0 || nc == 0.0) throw Error(ErrorKind::Numeric, "zero-norm vector at row " + std::to_string(i), "loss");
    s += row_dot(fo.row(i), fc.row(i)) / (no * nc);
  }
  return 1.0 - s / static_cast<double>(fo.rows);
}

double label_loss(const MatrixD& fo, const MatrixD& fc, const TextPrototypes& text, double tau) {
  check_pair(fo, fc);
  if (text.count() < 2) throw Error(ErrorKind::InvalidArgument, "label loss needs at least two categories", "text");
  const auto labels = teacher_labels(fc, text);
  const std::vector<std::uint8_t> none(fo.rows, 0);
  return loss_and_gradient(fo, fc, labels, none, text, 0.0, 1.0, tau).label;
}

double total_loss(const MatrixD& fo, const MatrixD& fc, const TextPrototypes& text, double lambda_label, double tau) {
  const double f = feature_loss(fo, fc);
  if (lambda_label == 0.0) return f;
  return f + lambda_label * label_loss(fo, fc, text, tau);
}

std::vector<double> parameter_gradient(const StudentModel& model, const Matrix& coords, const MatrixD& fc,
                                       const TextPrototypes& text, double lambda_feature, double lambda_label,
                                       double tau) {
  const MatrixD fo = forward(model, coords);
  const auto labels = teacher_labels(fc, text);
  const auto mask = all_rows(fo.rows);
  const auto lg = loss_and_gradient(fo, fc, labels, mask, text, lambda_feature, lambda_label, tau);
  auto grads = zero_like(model);
  Trace t;
  for (std::size_t i = 0; i < coords.rows; ++i) {
    forward_one(model, coords.row(i), t);
    backward_one(model, t, lg.grad.row(i), grads);
  }
  return flatten(grads);
}

double grad_check(const StudentModel& model, const Matrix& coords, const MatrixD& fc, const TextPrototypes& text,
                  double tau, double lambda_label, double step) {
  const auto analytic = parameter_gradient(model, coords, fc, text, 1.0, lambda_label, tau);
  const auto labels = teacher_labels(fc, text);
  const auto mask = all_rows(coords.rows);
  const auto loss_at = [&](const StudentModel& m) {
    return loss_and_gradient(forward(m, coords), fc, labels, mask, text, 1.0, lambda_label, tau).total;
  };
  StudentModel probe = model;
  auto slots = parameter_slots(probe);
  double worst = 0.0;
  for (std::size_t p = 0; p < slots.size(); ++p) {
    const double saved = *slots[p];
    *slots[p] = saved + step;
    const double up = loss_at(probe);
    *slots[p] = saved - step;
    const double down = loss_at(probe);
    *slots[p] = saved;
    const double fd = (up - down) / (2.0 * step);
    const double ga = analytic[p];
    const double err = std::abs(ga - fd) / std::max({1.0, std::abs(ga), std::abs(fd)});
    worst = std::max(worst, err);
  }
  return worst;
}

double cosine_lr(double lr0, std::size_t epoch, std::size_t epochs) {
  if (epochs == 0) return lr0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

TrainResult train(const SceneBundle& bundle, const PointFeatureField& teacher, const StudentConfig& cfg,
                  std::span<const std::int32_t> unseen) {
  validate_config(cfg);
  const std::size_t n = bundle.points.size();
  const std::size_t d = cfg.out_dim ? cfg.out_dim : bundle.dim;
  if (teacher.size() != n) throw Error(ErrorKind::InvalidArgument, "teacher size differs from point count", "teacher");
  if (teacher.dim() != d || bundle.text.dim() != d) {
    throw Error(ErrorKind::InvalidArgument, "teacher, text and student output dimensions differ", "out_dim");
  }
  std::vector<std::uint8_t> is_unseen(bundle.text.count(), 0);
  for (auto c : unseen) {
    if (c < 0 || static_cast<std::size_t>(c) >= is_unseen.size()) {
      throw Error(ErrorKind::InvalidArgument, "unseen category out of range", "unseen");
    }
    is_unseen[static_cast<std::size_t>(c)] = 1;
  }

  // Training set: teacher-valid points with a usable direction.
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> row_label;
  std::vector<std::uint8_t> row_feat;
  const Classifier clf(bundle.text);
  for (std::size_t i = 0; i < n; ++i) {
    if (!teacher.valid[i] || norm(teacher.features.row(i)) == 0.0) continue;
    std::int32_t label = clf.classify(teacher.features.row(i));
    std::uint8_t feat = 1;
    if (is_unseen[static_cast<std::size_t>(label)]) {
      if (cfg.unseen_excluded_from_feature_loss) continue;
      label = -1;
    }
    rows.push_back(i);
    row_label.push_back(label);
    row_feat.push_back(feat);
  }
  if (rows.empty()) throw Error(ErrorKind::InvalidArgument, "no valid teacher points to train on", "teacher");

  TrainResult result;
  result.model = init_student(cfg, d, bundle.points.coords);
  StudentModel& model = result.model;
  auto grads = zero_like(model);
  auto velocity = zero_like(model);

  Rng rng(Rng::derive(cfg.seed, 0x7EA));
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t bs = cfg.batch_size;
  std::vector<Trace> traces(bs);
  MatrixD fo_b(bs, d);
  MatrixD fc_b(bs, d);
  std::vector<std::int32_t> lab_b(bs);
  std::vector<std::uint8_t> feat_b(bs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr0, epoch, cfg.epochs);
    rng.shuffle(std::span<std::size_t>(order));
    EpochLoss rec{epoch, lr, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t b = std::min(bs, order.size() - start);
      fo_b.rows = fc_b.rows = b;
      fo_b.data.resize(b * d);
      fc_b.data.resize(b * d);
      lab_b.resize(b);
      feat_b.resize(b);
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t r = order[start + j];
        const std::size_t i = rows[r];
        forward_one(model, bundle.points.coords.row(i), traces[j]);
        const auto& y = traces[j].post.back();
        const auto src = teacher.features.row(i);
        for (std::size_t k = 0; k < d; ++k) {
          fo_b(j, k) = y[k];
          fc_b(j, k) = src[k];
        }
        lab_b[j] = row_label[r];
        feat_b[j] = row_feat[r];
      }
      const auto lg = loss_and_gradient(fo_b, fc_b, lab_b, feat_b, bundle.text, cfg.lambda_feature,
                                        cfg.lambda_label, cfg.tau);
      if (!std::isfinite(lg.total)) {
        throw Error(ErrorKind::Numeric, "loss diverged at epoch " + std::to_string(epoch), "train");
      }
      fill_zero(grads);
      for (std::size_t j = 0; j < b; ++j) backward_one(model, traces[j], lg.grad.row(j), grads);

      for (std::size_t k = 0; k < model.layers.size(); ++k) {
        auto& layer = model.layers[k];
        auto update = [&](std::vector<double>& param, std::vector<double>& vel, const std::vector<double>& g) {
          for (std::size_t q = 0; q < param.size(); ++q) {
            vel[q] = cfg.momentum * vel[q] + g[q];
            param[q] -= lr * vel[q];
          }
        };
        update(layer.weight, velocity[k].weight, grads[k].weight);
        update(layer.bias, velocity[k].bias, grads[k].bias);
      }
      ++model.step;
      for (const auto& layer : model.layers) {
        for (double w : layer.weight) {
          if (!std::isfinite(w)) throw Error(ErrorKind::Numeric, "parameters diverged at epoch " + std::to_string(epoch), "train");
        }
      }
      const double wgt = static_cast<double>(b) / static_cast<double>(order.size());
      rec.feature += wgt * lg.feature;
      rec.label += wgt * lg.label;
      rec.total += wgt * lg.total;
    }
    result.curve.push_back(rec);
  }
  return result;
}

PointFeatureField predict(const StudentModel& model, const Matrix& coords, const TextPrototypes& text) {
  const MatrixD fo = forward(model, coords);
  if (fo.cols != text.dim()) throw Error(ErrorKind::InvalidArgument, "model output dimension differs from text", "model");
  const Classifier clf(text);
  PointFeatureField out(coords.rows, fo.cols);
  for (std::size_t i = 0; i < coords.rows; ++i) {
    auto dst = out.features.row(i);
    for (std::size_t k = 0; k < fo.cols; ++k) dst[k] = static_cast<float>(fo(i, k));
    if (norm(dst) == 0.0) {
      std::fill(dst.begin(), dst.end(), 0.0f);
      continue;
    }
    out.valid[i] = 1;
    out.labels[i] = clf.classify(dst);
  }
  return out;
}

std::string loss_curve_csv(std::span<const EpochLoss> curve) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,lr,feature_loss,label_loss,total\n";
  for (const auto& e : curve) {
    out << e.epoch << ',' << e.lr << ',' << e.feature << ',' << e.label << ',' << e.total << '\n';
  }
  return out.str();
}

void save_model(const StudentModel& model, const std::filesystem::path& dir) {
  using nlohmann::json;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory: " + ec.message(), dir.string());
  json j;
  j["format"] = "cus3d.student";
  j["version"] = 1;
  j["activation"] = to_string(model.activation);
  j["encoder_layers"] = model.encoder_layers;
  j["head_layers"] = model.layers.size() - model.encoder_layers;
  j["input_center"] = model.input_center;
  j["input_scale"] = model.input_scale;
  j["seed"] = model.seed;
  j["step"] = model.step;
  json layers = json::array();
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& l = model.layers[k];
    const std::string w = "layer_" + std::to_string(k) + "_weight.bin";
    const std::string b = "layer_" + std::to_string(k) + "_bias.bin";
    write_blob(dir / w, std::vector<float>(l.weight.begin(), l.weight.end()));
    write_blob(dir / b, std::vector<float>(l.bias.begin(), l.bias.end()));
    layers.push_back({{"in", l.in},
                      {"out", l.out},
                      {"weight", {{"file", w}, {"shape", {l.out, l.in}}}},
                      {"bias", {{"file", b}, {"shape", {l.out}}}}});
  }
  j["layers"] = std::move(layers);
  std::ofstream out(dir / "model.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open for writing", (dir / "model.json").string());
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorKind::Io, "write failed", (dir / "model.json").string());
}

StudentModel load_model(const std::filesystem::path& dir) {
  using nlohmann::json;
  std::ifstream in(dir / "model.json", std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "missing file", "model.json");
  StudentModel m;
  try {
    const json j = json::parse(in);
    if (j.at("format").get<std::string>() != "cus3d.student") {
      throw Error(ErrorKind::Format, "not a student checkpoint", "format");
    }
    m.activation = activation_from_string(j.at("activation").get<std::string>());
    m.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    m.input_center = j.at("input_center").get<std::array<double, 3>>();
    m.input_scale = j.at("input_scale").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.step = j.at("step").get<std::uint64_t>();
    std::size_t prev_out = 3;
    for (const auto& jl : j.at("layers")) {
      DenseLayer l;
      l.in = jl.at("in").get<std::size_t>();
      l.out = jl.at("out").get<std::size_t>();
      if (l.in != prev_out || l.out == 0) throw Error(ErrorKind::Format, "layer shapes do not chain", "layers");
      prev_out = l.out;
      const auto w = read_blob(dir / jl.at("weight").at("file").get<std::string>(), l.in * l.out, "weight");
      const auto b = read_blob(dir / jl.at("bias").at("file").get<std::string>(), l.out, "bias");
      l.weight.assign(w.begin(), w.end());
      l.bias.assign(b.begin(), b.end());
      m.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("bad checkpoint: ") + e.what(), "model.json");
  }
  if (m.layers.empty() || m.encoder_layers > m.layers.size()) {
    throw Error(ErrorKind::Format, "inconsistent layer counts", "layers");
  }
  if (!(m.input_scale > 0.0)) throw Error(ErrorKind::Format, "input_scale must be positive", "input_scale");
  return m;
}

}  // namespace cus3d
