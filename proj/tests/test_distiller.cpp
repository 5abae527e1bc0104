#include <doctest.h>

#include <cmath>
#include <random>

#include "cus3d/distiller.hpp"
#include "cus3d/error.hpp"
#include "cus3d/pipeline.hpp"
#include "cus3d/synthgen.hpp"
#include "oracles.hpp"

using namespace cus3d;

namespace {

MatrixD mat(std::size_t r, std::size_t c, std::vector<double> v) {
  MatrixD m(r, c);
  m.data = std::move(v);
  return m;
}

MatrixD random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  MatrixD m(r, c);
  for (auto& x : m.data) x = g(rng);
  return m;
}

Matrix random_coords(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  Matrix m(n, 3);
  for (auto& x : m.data) x = u(rng);
  return m;
}

// 3 -> 1 -> 2 model with hand-set weights.
StudentModel tiny_model(Activation act) {
  StudentModel m;
  m.activation = act;
  m.encoder_layers = 1;
  m.layers.push_back(DenseLayer{3, 1, {1, 2, 3}, {0.5}});
  m.layers.push_back(DenseLayer{1, 2, {2, -1}, {0, 1}});
  return m;
}

struct Scene {
  SceneBundle bundle;
  PointFeatureField teacher;
};

Scene tiny_scene() {
  SynthConfig c;
  c.categories = 3;
  c.objects = 3;
  c.points_per_object = 40;
  c.frames = 4;
  c.width = 48;
  c.height = 36;
  c.sigma = 0.0;
  c.seed = 21;
  Scene s{synthesize(c), {}};
  s.teacher = run_odp(s.bundle, OdpOptions{});
  return s;
}

StudentConfig small_student() {
  StudentConfig cfg;
  cfg.encoder_widths = {32, 32};
  cfg.head_width = 32;
  cfg.seed = 5;
  return cfg;
}

// Cross-entropy of softmax(logits) at the target, computed longhand.
double hand_ce(std::vector<double> logits, std::size_t target) {
  double z = 0;
  for (double l : logits) z += std::exp(l);
  return std::log(z) - logits[target];
}

}  // namespace

TEST_SUITE("distiller") {
  TEST_CASE("zero model gives zero outputs") {
    StudentConfig cfg = small_student();
    std::mt19937_64 rng(1);
    const auto coords = random_coords(5, rng);
    auto m = init_student(cfg, 4, coords);
    for (auto& l : m.layers) {
      std::fill(l.weight.begin(), l.weight.end(), 0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    for (double x : forward(m, coords).data) CHECK(x == 0.0);
  }

  TEST_CASE("hand-computed forward pass") {
    Matrix p(2, 3);
    p.data = {1, 1, 1, -1, -1, -1};
    const auto lin = forward(tiny_model(Activation::Identity), p);
    // h = 1 + 2 + 3 + 0.5 = 6.5; out = (2h, 1 - h).
    CHECK(lin(0, 0) == 13.0);
    CHECK(lin(0, 1) == -5.5);
    CHECK(lin(1, 0) == -11.0);
    // ReLU clips the hidden unit of the second point: h = -5.5 -> 0.
    const auto relu = forward(tiny_model(Activation::Relu), p);
    CHECK(relu(1, 0) == 0.0);
    CHECK(relu(1, 1) == 1.0);
    // Input normalisation: (3,3,3) with centre 1 and scale 2 maps to (1,1,1).
    auto shifted = tiny_model(Activation::Identity);
    shifted.input_center = {1, 1, 1};
    shifted.input_scale = 2.0;
    Matrix q(1, 3);
    q.data = {3, 3, 3};
    CHECK(forward(shifted, q)(0, 0) == 13.0);
  }

  TEST_CASE("permuting points permutes outputs") {
    std::mt19937_64 rng(2);
    const auto coords = random_coords(6, rng);
    const auto m = init_student(small_student(), 5, coords);
    const auto out = forward(m, coords);
    Matrix rev(6, 3);
    for (std::size_t i = 0; i < 6; ++i) {
      for (int a = 0; a < 3; ++a) rev(i, a) = coords(5 - i, a);
    }
    const auto rout = forward(m, rev);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t k = 0; k < 5; ++k) CHECK(rout(i, k) == out(5 - i, k));
    }
  }

  TEST_CASE("feature loss examples") {
    const auto a = mat(2, 2, {1, 0, 0.3, 0.4});
    CHECK(std::abs(feature_loss(a, a)) <= 1e-12);
    CHECK(std::abs(feature_loss(mat(1, 2, {1, 0}), mat(1, 2, {0, 3})) - 1.0) <= 1e-12);
    CHECK(std::abs(feature_loss(mat(1, 2, {1, 2}), mat(1, 2, {-2, -4})) - 2.0) <= 1e-12);
    CHECK_THROWS_AS(feature_loss(mat(1, 2, {0, 0}), mat(1, 2, {1, 0})), Error);
  }

  TEST_CASE("feature loss is scale invariant and symmetric") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
      const auto x = random_mat(4, 6, rng);
      const auto y = random_mat(4, 6, rng);
      auto sx = x;
      for (auto& v : sx.data) v *= 3.7;
      CHECK(std::abs(feature_loss(x, sx)) <= 1e-12);
      CHECK(feature_loss(x, y) == doctest::Approx(feature_loss(y, x)).epsilon(1e-14));
    }
  }

  TEST_CASE("label loss: uniform cosines give ln C") {
    // Rows e_0..e_19 of R^21; the output e_20 is orthogonal to every prototype.
    const auto t = oracle::basis_text(20, 21);
    MatrixD fo(1, 21);
    fo(0, 20) = 1.0;
    MatrixD fc(1, 21);
    fc(0, 3) = 1.0;
    CHECK(std::abs(label_loss(fo, fc, t, 0.07) - std::log(20.0)) <= 1e-9);
  }

  TEST_CASE("label loss: sharp temperature at the teacher class") {
    const auto t = oracle::basis_text(5, 5);
    const auto fo = mat(1, 5, {1, 0, 0, 0, 0});
    CHECK(label_loss(fo, fo, t, 1e-3) < 1e-2);
  }

  TEST_CASE("label loss: N=2, C=3, tau=0.5 by hand") {
    const auto t = oracle::basis_text(3, 3);
    const auto fo = mat(2, 3, {1, 0, 0, 0, 0.6, 0.8});
    const auto fc = mat(2, 3, {1, 0, 0, 0, 1, 0});
    const double want = 0.5 * (hand_ce({2.0, 0.0, 0.0}, 0) + hand_ce({0.0, 1.2, 1.6}, 1));
    CHECK(label_loss(fo, fc, t, 0.5) == doctest::Approx(want).epsilon(1e-12));
  }

  TEST_CASE("label loss is not symmetric") {
    const auto t = oracle::basis_text(3, 3);
    const auto a = mat(1, 3, {1, 0.9, 0});
    const auto b = mat(1, 3, {0, 1, 0});
    CHECK(std::abs(label_loss(a, b, t, 0.5) - label_loss(b, a, t, 0.5)) > 1e-3);
    CHECK_THROWS_AS(label_loss(a, b, oracle::basis_text(1, 3), 0.5), Error);
  }

  TEST_CASE("total loss combines the two terms") {
    std::mt19937_64 rng(4);
    const auto t = oracle::random_text(4, 6, rng);
    const auto fo = random_mat(5, 6, rng);
    const auto fc = random_mat(5, 6, rng);
    CHECK(total_loss(fo, fc, t, 0.0, 0.07) == feature_loss(fo, fc));
    const double f = feature_loss(fo, fc);
    const double l = label_loss(fo, fc, t, 0.2);
    CHECK(total_loss(fo, fc, t, 0.7, 0.2) == doctest::Approx(f + 0.7 * l).epsilon(1e-14));
    CHECK(total_loss(fc, fc, t, 0.7, 0.2) == doctest::Approx(0.7 * label_loss(fc, fc, t, 0.2)).epsilon(1e-12));
    double prev = -1.0;
    for (double lam : {0.0, 0.1, 0.5, 1.0, 4.0}) {
      const double v = total_loss(fo, fc, t, lam, 0.2);
      CHECK(v >= prev);
      prev = v;
    }
  }

  TEST_CASE("loss gradient matches finite differences on the outputs") {
    std::mt19937_64 rng(5);
    const auto t = oracle::random_text(4, 5, rng);
    const auto fo = random_mat(3, 5, rng);
    const auto fc = random_mat(3, 5, rng);
    const auto labels = teacher_labels(fc, t);
    const std::vector<std::uint8_t> mask{1, 0, 1};
    const auto lg = loss_and_gradient(fo, fc, labels, mask, t, 0.8, 0.6, 0.3);
    for (std::size_t k = 0; k < fo.data.size(); ++k) {
      auto up = fo, down = fo;
      up.data[k] += 1e-6;
      down.data[k] -= 1e-6;
      const double fd = (loss_and_gradient(up, fc, labels, mask, t, 0.8, 0.6, 0.3).total -
                         loss_and_gradient(down, fc, labels, mask, t, 0.8, 0.6, 0.3).total) /
                        2e-6;
      CHECK(lg.grad.data[k] == doctest::Approx(fd).epsilon(1e-6));
    }
  }

  TEST_CASE("grad_check: single linear layer, feature loss only") {
    std::mt19937_64 rng(6);
    StudentModel m;
    m.activation = Activation::Identity;
    m.layers.push_back(DenseLayer{3, 4, {}, {}});
    std::normal_distribution<double> g;
    m.layers[0].weight.resize(12);
    m.layers[0].bias.resize(4);
    for (auto& w : m.layers[0].weight) w = g(rng);
    for (auto& b : m.layers[0].bias) b = g(rng);
    const auto coords = random_coords(6, rng);
    const auto t = oracle::random_text(3, 4, rng);
    const auto fc = random_mat(6, 4, rng);
    CHECK(grad_check(m, coords, fc, t, 0.07, 0.0) <= 1e-6);
  }

  TEST_CASE("grad_check: full model, both losses, every activation") {
    std::mt19937_64 rng(7);
    for (auto act : {Activation::Tanh, Activation::Relu, Activation::Identity}) {
      StudentConfig cfg;
      cfg.encoder_widths = {6, 5};
      cfg.head_width = 7;
      cfg.activation = act;
      cfg.seed = rng();
      const auto coords = random_coords(8, rng);
      const auto m = init_student(cfg, 4, coords);
      const auto t = oracle::random_text(3, 4, rng);
      const auto fc = random_mat(8, 4, rng);
      CAPTURE(to_string(act));
      CHECK(grad_check(m, coords, fc, t, 0.5, 1.0) <= 1e-4);
    }
  }

  TEST_CASE("grad_check at a stationary point") {
    std::mt19937_64 rng(8);
    StudentConfig cfg;
    cfg.encoder_widths = {5};
    cfg.head_width = 5;
    cfg.activation = Activation::Tanh;
    const auto coords = random_coords(4, rng);
    const auto m = init_student(cfg, 3, coords);
    const auto fc = forward(m, coords);
    const auto t = oracle::random_text(3, 3, rng);
    for (double g : parameter_gradient(m, coords, fc, t, 1.0, 0.0, 0.07)) CHECK(std::abs(g) <= 1e-8);
    // The analytic side is zero, so the comparison measures the central
    // difference's own O(h^2) term; at h = 1e-5 that sits near 1e-7.
    CHECK(grad_check(m, coords, fc, t, 0.07, 0.0, 1e-6) <= 1e-8);
  }

  TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(1e-3, 0, 100) == 1e-3);
    CHECK(cosine_lr(1e-3, 50, 100) == doctest::Approx(5e-4));
    CHECK(cosine_lr(1e-3, 99, 100) < 1e-6);
  }

  TEST_CASE("config validation") {
    StudentConfig cfg;
    cfg.tau = 0.0;
    CHECK_THROWS_AS(validate_config(cfg), Error);
    cfg = StudentConfig{};
    cfg.lr0 = -1;
    CHECK_THROWS_AS(validate_config(cfg), Error);
    cfg = StudentConfig{};
    cfg.encoder_widths = {8, 0};
    CHECK_THROWS_AS(validate_config(cfg), Error);
    CHECK_THROWS_AS(activation_from_string("swish"), Error);
  }

  TEST_CASE("zero epochs returns the initialisation") {
    const auto s = tiny_scene();
    auto cfg = small_student();
    cfg.epochs = 0;
    const auto r = train(s.bundle, s.teacher, cfg);
    CHECK(r.curve.empty());
    CHECK(r.model == init_student(cfg, s.bundle.dim, s.bundle.points.coords));
  }

  TEST_CASE("no valid teacher points is an error") {
    const auto s = tiny_scene();
    const PointFeatureField empty(s.bundle.points.size(), s.bundle.dim);
    CHECK_THROWS_AS(train(s.bundle, empty, small_student()), Error);
  }

  TEST_CASE("training is bitwise reproducible") {
    const auto s = tiny_scene();
    auto cfg = small_student();
    cfg.epochs = 5;
    const auto a = train(s.bundle, s.teacher, cfg);
    const auto b = train(s.bundle, s.teacher, cfg);
    CHECK(a.model == b.model);
    CHECK(loss_curve_csv(a.curve) == loss_curve_csv(b.curve));
    cfg.seed = 6;
    CHECK_FALSE(train(s.bundle, s.teacher, cfg).model == a.model);
  }

  TEST_CASE("feature-only training converges and its curve settles") {
    const auto s = tiny_scene();
    auto cfg = small_student();
    cfg.lambda_label = 0.0;
    cfg.epochs = 200;
    cfg.batch_size = 16;
    cfg.lr0 = 0.01;
    const auto r = train(s.bundle, s.teacher, cfg);
    REQUIRE(r.curve.size() == 200);
    CHECK(r.curve.back().feature < 0.05);
    for (std::size_t e = 11; e < r.curve.size(); ++e) {
      CAPTURE(e);
      CHECK(r.curve[e].total <= r.curve[e - 1].total + 1e-3);
    }
    for (const auto& row : r.curve) CHECK(std::isfinite(row.total));
  }

  TEST_CASE("checkpoint round-trip") {
    const auto s = tiny_scene();
    auto cfg = small_student();
    cfg.epochs = 3;
    const auto r = train(s.bundle, s.teacher, cfg);
    const auto dir = oracle::temp_dir("model");
    save_model(r.model, dir);
    const auto back = load_model(dir);
    CHECK(back.layers.size() == r.model.layers.size());
    CHECK(back.step == r.model.step);
    CHECK(back.activation == r.model.activation);
    for (std::size_t l = 0; l < back.layers.size(); ++l) {
      for (std::size_t k = 0; k < back.layers[l].weight.size(); ++k) {
        CHECK(back.layers[l].weight[k] == static_cast<double>(static_cast<float>(r.model.layers[l].weight[k])));
      }
    }
    // Saving the reloaded model again is lossless.
    const auto dir2 = oracle::temp_dir("model2");
    save_model(back, dir2);
    CHECK(load_model(dir2) == back);
    const auto p = predict(back, s.bundle.points.coords, s.bundle.text);
    CHECK(p.size() == s.bundle.points.size());
  }

  TEST_CASE("unseen categories are withheld") {
    const auto s = tiny_scene();
    auto cfg = small_student();
    cfg.epochs = 2;
    const std::vector<std::int32_t> unseen{2};
    const auto a = train(s.bundle, s.teacher, cfg, unseen);
    cfg.unseen_excluded_from_feature_loss = false;
    const auto b = train(s.bundle, s.teacher, cfg, unseen);
    CHECK_FALSE(a.model == b.model);
    const std::vector<std::int32_t> bad{7};
    CHECK_THROWS_AS(train(s.bundle, s.teacher, cfg, bad), Error);
  }
}
