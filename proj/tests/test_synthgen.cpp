#include <doctest.h>

#include <cmath>

#include "cus3d/bundle_io.hpp"
#include "cus3d/error.hpp"
#include "cus3d/pipeline.hpp"
#include "cus3d/semantics.hpp"
#include "cus3d/synthgen.hpp"
#include "oracles.hpp"

using namespace cus3d;

namespace {

SynthConfig small(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.points_per_object = 80;
  c.width = 64;
  c.height = 48;
  return c;
}

double valid_miou(const PointFeatureField& field, const SceneBundle& b) {
  LabelMap pred, gt;
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (!field.valid[i]) continue;
    pred.push_back(field.labels[i]);
    gt.push_back((*b.gt)[i]);
  }
  return evaluate(pred, gt, b.text.count()).miou;
}

void check_same_geometry(const SceneBundle& a, const SceneBundle& b) {
  CHECK(a.points == b.points);
  CHECK(a.gt == b.gt);
  CHECK(a.text == b.text);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    CHECK(a.frames[k].camera == b.frames[k].camera);
    CHECK(bitwise_equal(a.frames[k].depth, b.frames[k].depth));
  }
}

}  // namespace

TEST_SUITE("synthgen") {
  TEST_CASE("same seed gives bitwise-identical bundles") {
    auto c = small(3);
    c.p2d = 0.3;
    c.p3d = 0.3;
    CHECK(bitwise_equal(synthesize(c), synthesize(c)));
    auto d = c;
    d.seed = 4;
    CHECK_FALSE(bitwise_equal(synthesize(c), synthesize(d)));
  }

  TEST_CASE("prototypes are orthonormal and bundles validate") {
    const auto b = gen_scene(small(1));
    const auto& t = b.text.rows;
    for (std::size_t a = 0; a < t.rows; ++a) {
      for (std::size_t c = 0; c < t.rows; ++c) {
        const double want = a == c ? 1.0 : 0.0;
        CHECK(dot(t.row(a), t.row(c)) == doctest::Approx(want).epsilon(1e-6));
      }
    }
    CHECK(b.text.names[0] == "wall");
    CHECK(validate_bundle(b).empty());
  }

  TEST_CASE("noiseless scenes are recovered exactly") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto c = small(seed);
      c.sigma = 0.0;
      c.cluster_offsets = seed % 2 == 0;
      const auto b = synthesize(c);
      const auto field = run_odp(b, OdpOptions{});
      CHECK(field.valid_count() > 0);
      CHECK(valid_miou(field, b) == 1.0);
    }
  }

  TEST_CASE("seed 11, C=5, 4 objects, 6 frames: every point is visible") {
    SynthConfig c;
    c.categories = 5;
    c.objects = 4;
    c.frames = 6;
    c.seed = 11;
    const auto b = gen_scene(c);
    std::size_t hidden = 0;
    for (std::size_t i = 0; i < b.points.size(); ++i) {
      const auto r = b.points.coords.row(i);
      const std::array<float, 3> p{r[0], r[1], r[2]};
      bool seen = false;
      for (const auto& f : b.frames) {
        seen = seen || oracle::visible_pixel(p, f.camera, f.depth, kDefaultEpsDepth).has_value();
      }
      hidden += !seen;
    }
    CHECK(hidden == 0);
    CHECK(run_odp(b, OdpOptions{}).valid_count() == b.points.size());
  }

  TEST_CASE("zero noise leaves the bundle unchanged") {
    const auto b = gen_scene(small(2));
    NoiseConfig n;
    n.seed = 99;
    CHECK(bitwise_equal(inject_noise(b, n), b));
  }

  TEST_CASE("noise never moves geometry or ground truth") {
    const auto b = gen_scene(small(5));
    NoiseConfig n;
    n.p2d = 0.5;
    n.p3d = 0.5;
    n.seed = 1;
    const auto noisy = inject_noise(b, n);
    check_same_geometry(b, noisy);
    CHECK(validate_bundle(noisy).empty());
    CHECK_FALSE(bitwise_equal(noisy, b));
  }

  TEST_CASE("corruption pattern is fixed by the noise seed") {
    const auto b = gen_scene(small(6));
    NoiseConfig n;
    n.p2d = 0.3;
    n.p3d = 0.3;
    n.seed = 17;
    CHECK(bitwise_equal(inject_noise(b, n), inject_noise(b, n)));
    auto m = n;
    m.seed = 18;
    CHECK_FALSE(bitwise_equal(inject_noise(b, n), inject_noise(b, m)));
  }

  TEST_CASE("p3d=1 with two classes breaks unfiltered fusion") {
    auto c = small(7);
    c.categories = 2;
    c.objects = 4;
    c.p3d = 1.0;
    const auto b = synthesize(c);
    OdpOptions off;
    off.filter_3d = false;
    const auto field = run_odp(b, off);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < field.size(); ++i) wrong += field.labels[i] != (*b.gt)[i];
    CHECK(wrong > 0);
  }

  TEST_CASE("unsatisfiable layout is reported") {
    auto c = small(0);
    c.objects = 60;
    c.arena = 1.0;
    try {
      (void)gen_scene(c);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidArgument);
      CHECK(e.field() == "objects");
    }
  }

  TEST_CASE("config validation and warnings") {
    auto c = small(0);
    c.p2d = 1.5;
    CHECK_THROWS_AS(validate_config(c), Error);
    c = small(0);
    c.sigma = -1;
    CHECK_THROWS_AS(validate_config(c), Error);
    c = small(0);
    c.categories = 20;
    c.dim = 8;
    CHECK_NOTHROW(validate_config(c));
    CHECK_FALSE(config_warnings(c).empty());
    CHECK(config_warnings(small(0)).empty());
  }

  TEST_CASE("noiseless ablation: every cell is near 1") {
    AblationConfig a;
    a.synth = small(0);
    a.seeds = {0, 1};
    for (const auto& cell : ablation_matrix(a)) CHECK(cell.miou >= 0.99);
  }

  TEST_CASE("2D noise only: the 3D filter adds little") {
    AblationConfig a;
    a.synth = small(0);
    a.synth.p2d = 0.3;
    a.seeds = {0, 1, 2};
    const auto cells = ablation_matrix(a);
    REQUIRE(cells.size() == 4);
    // Rows: off/off, 2D, 3D, both.
    CHECK(std::abs(cells[1].miou - cells[3].miou) <= 0.02);
    CHECK(cells[1].miou > cells[0].miou);
  }
}
