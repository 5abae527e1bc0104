#include <doctest.h>

#include <algorithm>

#include <json.hpp>

#include "cus3d/error.hpp"
#include "cus3d/pipeline.hpp"
#include "cus3d/synthgen.hpp"

using namespace cus3d;

namespace {

SceneBundle noisy(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.points_per_object = 60;
  c.p2d = 0.3;
  c.p3d = 0.3;
  return synthesize(c);
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("every stage is thread-count invariant") {
    const auto b = noisy(1);
    for (bool f2 : {false, true}) {
      for (bool f3 : {false, true}) {
        OdpOptions one;
        one.filter_2d = f2;
        one.filter_3d = f3;
        OdpOptions many = one;
        many.threads = 4;
        CHECK(gather(b, one) == gather(b, many));
        CHECK(bitwise_equal(run_odp(b, one), run_odp(b, many)));
      }
    }
  }

  TEST_CASE("frame stride skips frames") {
    const auto b = noisy(2);
    OdpOptions all;
    OdpOptions half;
    half.frame_stride = 2;
    CHECK(assign_frames(b, all).size() == b.frames.size());
    CHECK(assign_frames(b, half).size() == (b.frames.size() + 1) / 2);
    const auto raw = gather(b, half);
    for (auto k : raw.frame) CHECK(k % 2 == 0);
  }

  TEST_CASE("option validation") {
    OdpOptions o;
    o.frame_stride = 0;
    CHECK_THROWS_AS(validate_options(o), Error);
    o = OdpOptions{};
    o.beta = 1.5;
    CHECK_THROWS_AS(validate_options(o), Error);
    o = OdpOptions{};
    o.eps_depth = -0.1;
    CHECK_THROWS_AS(validate_options(o), Error);
    o = OdpOptions{};
    o.threads = 0;
    CHECK_THROWS_AS(validate_options(o), Error);
  }

  TEST_CASE("ablation grid layout and serialisation") {
    AblationConfig a;
    a.synth.points_per_object = 40;
    a.synth.p2d = 0.3;
    a.synth.p3d = 0.3;
    a.seeds = {0, 1};
    a.student_axis = true;
    a.student.encoder_widths = {16};
    a.student.head_width = 16;
    a.student.epochs = 3;
    const auto cells = ablation_matrix(a);
    REQUIRE(cells.size() == 8);
    const bool want[8][3] = {{0, 0, 0}, {0, 0, 1}, {1, 0, 0}, {1, 0, 1},
                             {0, 1, 0}, {0, 1, 1}, {1, 1, 0}, {1, 1, 1}};
    for (std::size_t r = 0; r < 8; ++r) {
      CHECK(cells[r].filter_2d == want[r][0]);
      CHECK(cells[r].filter_3d == want[r][1]);
      CHECK(cells[r].student == want[r][2]);
      CHECK(cells[r].miou_per_seed.size() == 2);
    }
    const auto csv = ablation_csv(cells);
    CHECK(csv.rfind("filter_2d,filter_3d,student,miou,acc\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
    const auto j = nlohmann::json::parse(ablation_json(cells, a));
    CHECK(j.at("rows").size() == 8);
    CHECK(ablation_matrix(a).front().miou == cells.front().miou);
  }

  TEST_CASE("ablation with threads matches single-threaded") {
    AblationConfig a;
    a.synth.points_per_object = 40;
    a.synth.p2d = 0.3;
    a.synth.p3d = 0.3;
    a.seeds = {3};
    const auto one = ablation_matrix(a);
    a.odp.threads = 3;
    const auto many = ablation_matrix(a);
    REQUIRE(one.size() == many.size());
    for (std::size_t r = 0; r < one.size(); ++r) {
      CHECK(one[r].miou == many[r].miou);
      CHECK(one[r].acc == many[r].acc);
    }
  }
}
