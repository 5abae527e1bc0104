#include <doctest.h>

#include <numeric>
#include <random>

#include "cus3d/aggregator.hpp"
#include "cus3d/error.hpp"
#include "cus3d/pipeline.hpp"
#include "cus3d/semantics.hpp"
#include "cus3d/synthgen.hpp"
#include "oracles.hpp"

using namespace cus3d;

namespace {

// Raw features built from explicit per-point lists.
RawPointFeatures make_raw(const std::vector<std::vector<std::vector<float>>>& per_point, std::size_t d) {
  RawPointFeatures r;
  r.offsets.push_back(0);
  std::vector<float> data;
  for (const auto& list : per_point) {
    std::uint32_t k = 0;
    for (const auto& f : list) {
      r.frame.push_back(k++);
      data.insert(data.end(), f.begin(), f.end());
    }
    r.offsets.push_back(r.frame.size());
  }
  r.features = Matrix(r.frame.size(), d);
  r.features.data = data;
  return r;
}

PointSet zeros(std::size_t n) {
  PointSet p;
  p.coords = Matrix(n, 3);
  return p;
}

std::vector<std::span<const float>> spans(const std::vector<std::vector<float>>& v) {
  std::vector<std::span<const float>> out;
  for (const auto& x : v) out.emplace_back(x);
  return out;
}

// Connected components by breadth-first search over all pairs; ids follow
// the lowest point index of each component.
std::vector<std::int32_t> brute_components(const std::vector<std::array<double, 3>>& s, double r) {
  const std::size_t n = s.size();
  std::vector<std::int32_t> id(n, -1);
  std::int32_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (id[i] >= 0) continue;
    std::vector<std::size_t> queue{i};
    id[i] = next;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const auto a = queue[q];
      for (std::size_t j = 0; j < n; ++j) {
        if (id[j] >= 0) continue;
        double d2 = 0;
        for (int k = 0; k < 3; ++k) d2 += (s[a][k] - s[j][k]) * (s[a][k] - s[j][k]);
        if (d2 <= r * r) {
          id[j] = next;
          queue.push_back(j);
        }
      }
    }
    ++next;
  }
  return id;
}

double label_accuracy(const LabelMap& pred, const LabelMap& gt) {
  std::size_t right = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) right += pred[i] == gt[i];
  return double(right) / double(gt.size());
}

}  // namespace

TEST_SUITE("aggregator") {
  TEST_CASE("cluster ids are relabelled densely") {
    PointSet p = zeros(3);
    p.cluster_ids = std::vector<std::int32_t>{5, 5, 9};
    const auto m = build_object_masks(p);
    CHECK(m.mask_of_point == std::vector<std::int32_t>{0, 0, 1});
    CHECK(m.mask_count == 2);

    p.cluster_ids = std::vector<std::int32_t>{9, -1, 2};
    const auto m2 = build_object_masks(p);
    CHECK(m2.mask_of_point == std::vector<std::int32_t>{1, -1, 0});
  }

  TEST_CASE("no cluster information is an error") {
    CHECK_THROWS_AS(build_object_masks(zeros(2)), Error);
  }

  TEST_CASE("two offset groups collapse to two masks") {
    PointSet p = zeros(8);
    p.cluster_offsets = Matrix(8, 3);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(-0.5f, 0.5f);
    for (std::size_t i = 0; i < 8; ++i) {
      const float cx = (i % 2 == 0) ? 0.0f : 1.0f;
      for (int a = 0; a < 3; ++a) p.coords(i, a) = u(rng);
      p.cluster_offsets->operator()(i, 0) = cx - p.coords(i, 0);
      p.cluster_offsets->operator()(i, 1) = -p.coords(i, 1);
      p.cluster_offsets->operator()(i, 2) = -p.coords(i, 2);
    }
    const auto m = build_object_masks(p, 0.2);
    CHECK(m.mask_count == 2);
    for (std::size_t i = 0; i < 8; ++i) CHECK(m.mask_of_point[i] == static_cast<std::int32_t>(i % 2));
  }

  TEST_CASE("zero offsets within the radius form one mask") {
    PointSet p = zeros(4);
    p.coords.data = {0, 0, 0, 0.05f, 0, 0, 0, 0.05f, 0, 0, 0, 0.05f};
    p.cluster_offsets = Matrix(4, 3);
    const auto m = build_object_masks(p, 0.1);
    CHECK(m.mask_count == 1);
  }

  TEST_CASE("NaN offsets leave the point unassigned") {
    PointSet p = zeros(2);
    p.cluster_offsets = Matrix(2, 3);
    (*p.cluster_offsets)(1, 0) = NAN;
    const auto m = build_object_masks(p, 0.1);
    CHECK(m.mask_of_point == std::vector<std::int32_t>{0, -1});
  }

  TEST_CASE("offset clustering matches brute-force components") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 5 + rng() % 60;
      PointSet p = zeros(n);
      p.cluster_offsets = Matrix(n, 3);
      for (auto& x : p.coords.data) x = u(rng);
      for (auto& x : p.cluster_offsets->data) x = 0.3f * u(rng);
      const double radius = 0.05 + 0.3 * (rng() % 100) / 100.0;
      std::vector<std::array<double, 3>> s(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) s[i][a] = double(p.coords(i, a)) + double((*p.cluster_offsets)(i, a));
      }
      const auto want = brute_components(s, radius);
      const auto got = build_object_masks(p, radius);
      REQUIRE(got.mask_of_point == want);
      CHECK(got.mask_count == *std::max_element(want.begin(), want.end()) + 1);
    }
  }

  TEST_CASE("vote_mask_label examples") {
    const auto t = oracle::basis_text(8, 8);
    auto e = [&](std::size_t c) {
      const auto r = t.rows.row(c);
      return std::vector<float>(r.begin(), r.end());
    };
    const std::vector<std::vector<float>> f{e(7), e(7), e(7), e(2)};
    const auto v = vote_mask_label(spans(f), t);
    REQUIRE(v);
    CHECK(v->label == 7);
    CHECK(v->keep == std::vector<std::size_t>{0, 1, 2});
    CHECK_FALSE(vote_mask_label({}, t));
  }

  TEST_CASE("a stray bed view inside a chair mask is screened out") {
    // 0 = chair, 1 = bed. Point 0 saw chair, chair, bed; its neighbours saw chair.
    const auto t = oracle::basis_text(2, 2);
    const std::vector<float> chair_a{1.0f, 0.1f}, chair_b{0.9f, 0.3f}, bed{0.2f, 1.0f};
    const auto raw = make_raw({{chair_a, chair_b, bed}, {chair_a}, {chair_b}}, 2);
    PointSet p = zeros(3);
    p.cluster_ids = std::vector<std::int32_t>{4, 4, 4};
    const auto out = aggregate(p, build_object_masks(p), raw, t);
    CHECK(out.labels == LabelMap{0, 0, 0});
    CHECK(out.features(0, 0) == doctest::Approx(0.95));
    CHECK(out.features(0, 1) == doctest::Approx(0.2));
    // Unfiltered averaging keeps the bed view in the mean.
    const auto plain = aggregate_unfiltered(raw, t);
    CHECK(plain.features(0, 1) == doctest::Approx((0.1 + 0.3 + 1.0) / 3.0));
  }

  TEST_CASE("point without features inherits the keep-set mean") {
    const auto t = oracle::basis_text(2, 2);
    const std::vector<float> a{1.0f, 0.0f}, b{0.5f, 0.2f}, c{0.0f, 1.0f};
    const auto raw = make_raw({{a}, {b, c}, {}}, 2);
    PointSet p = zeros(3);
    p.cluster_ids = std::vector<std::int32_t>{0, 0, 0};
    const auto out = aggregate(p, build_object_masks(p), raw, t);
    CHECK(out.valid == std::vector<std::uint8_t>{1, 1, 1});
    CHECK(out.labels == LabelMap{0, 0, 0});
    // Point 1 keeps only b; point 2 gets mean(a, b).
    CHECK(out.features(1, 0) == doctest::Approx(0.5));
    CHECK(out.features(1, 1) == doctest::Approx(0.2));
    CHECK(out.features(2, 0) == doctest::Approx(0.75));
    CHECK(out.features(2, 1) == doctest::Approx(0.1));
  }

  TEST_CASE("unobserved masks are invalid, loose points fall back to plain averaging") {
    const auto t = oracle::basis_text(2, 2);
    const std::vector<float> a{1.0f, 0.0f}, c{0.0f, 1.0f};
    const auto raw = make_raw({{}, {}, {a, c, c}, {}}, 2);
    PointSet p = zeros(4);
    p.cluster_ids = std::vector<std::int32_t>{3, 3, -1, -1};
    const auto out = aggregate(p, build_object_masks(p), raw, t);
    CHECK(out.valid == std::vector<std::uint8_t>{0, 0, 1, 0});
    CHECK(out.labels == LabelMap{-1, -1, 1, -1});
    CHECK(out.features(2, 0) == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("agreeing features give plain per-point means") {
    const auto t = oracle::basis_text(3, 3);
    const std::vector<float> a{0.0f, 1.0f, 0.2f}, b{0.1f, 0.8f, 0.0f};
    const auto raw = make_raw({{a, b}, {b}}, 3);
    PointSet p = zeros(2);
    p.cluster_ids = std::vector<std::int32_t>{1, 1};
    const auto out = aggregate(p, build_object_masks(p), raw, t);
    CHECK(out.labels == LabelMap{1, 1});
    CHECK(out.features(0, 0) == doctest::Approx(0.05));
    CHECK(out.features(0, 1) == doctest::Approx(0.9));
    CHECK(out.features(1, 1) == doctest::Approx(0.8));
  }

  TEST_CASE("random masks: idempotence, consistency and equivariance") {
    std::mt19937_64 rng(3);
    std::normal_distribution<float> g;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t C = 2 + rng() % 4;
      const std::size_t d = 6;
      const auto t = oracle::random_text(C, d, rng);
      const std::size_t n = 4 + rng() % 20;
      std::vector<std::vector<std::vector<float>>> lists(n);
      for (auto& l : lists) {
        const std::size_t k = rng() % 4;
        for (std::size_t e = 0; e < k; ++e) {
          std::vector<float> f(d);
          for (auto& x : f) x = g(rng);
          l.push_back(f);
        }
      }
      PointSet p = zeros(n);
      p.cluster_ids = std::vector<std::int32_t>(n);
      for (auto& id : *p.cluster_ids) id = static_cast<std::int32_t>(rng() % 4) - 1;
      const auto masks = build_object_masks(p);
      const auto out = aggregate(p, masks, make_raw(lists, d), t);

      // Every valid point of a mask carries the same label.
      std::vector<std::int32_t> mask_label(static_cast<std::size_t>(masks.mask_count), kIgnoreLabel);
      for (std::size_t i = 0; i < n; ++i) {
        const auto m = masks.mask_of_point[i];
        if (m < 0 || !out.valid[i]) continue;
        auto& ml = mask_label[static_cast<std::size_t>(m)];
        if (ml == kIgnoreLabel) ml = out.labels[i];
        CHECK(out.labels[i] == ml);
      }

      // Idempotence per mask.
      for (std::int32_t m = 0; m < masks.mask_count; ++m) {
        std::vector<std::vector<float>> feats;
        for (std::size_t i = 0; i < n; ++i) {
          if (masks.mask_of_point[i] == m) feats.insert(feats.end(), lists[i].begin(), lists[i].end());
        }
        const auto v = vote_mask_label(spans(feats), t);
        if (!v) continue;
        std::vector<std::vector<float>> kept;
        for (auto k : v->keep) kept.push_back(feats[k]);
        const auto again = vote_mask_label(spans(kept), t);
        REQUIRE(again);
        CHECK(again->label == v->label);
        CHECK(again->keep.size() == kept.size());
      }

      // Permuting points permutes the outputs.
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<std::vector<std::vector<float>>> plists(n);
      PointSet pp = zeros(n);
      pp.cluster_ids = std::vector<std::int32_t>(n);
      for (std::size_t i = 0; i < n; ++i) {
        plists[i] = lists[perm[i]];
        (*pp.cluster_ids)[i] = (*p.cluster_ids)[perm[i]];
      }
      const auto pout = aggregate(pp, build_object_masks(pp), make_raw(plists, d), t);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(pout.valid[i] == out.valid[perm[i]]);
        CHECK(pout.labels[i] == out.labels[perm[i]]);
        for (std::size_t k = 0; k < d; ++k) CHECK(pout.features(i, k) == out.features(perm[i], k));
      }
    }
  }

  TEST_CASE("noiseless scenes: every valid label equals ground truth") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SynthConfig c;
      c.seed = seed;
      c.points_per_object = 80;
      c.cluster_offsets = seed % 2 == 1;
      const auto b = synthesize(c);
      const auto out = run_odp(b, OdpOptions{});
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (out.valid[i]) REQUIRE(out.labels[i] == (*b.gt)[i]);
      }
    }
  }

  TEST_CASE("30% cross-frame noise: the 3D filter beats plain averaging") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SynthConfig c;
      c.seed = seed;
      c.points_per_object = 80;
      c.p3d = 0.3;
      const auto b = synthesize(c);
      OdpOptions on;
      OdpOptions off;
      off.filter_3d = false;
      const double filtered = label_accuracy(run_odp(b, on).labels, *b.gt);
      const double plain = label_accuracy(run_odp(b, off).labels, *b.gt);
      CAPTURE(seed);
      CHECK(filtered > plain);
    }
  }

  TEST_CASE("thread count does not change the output") {
    SynthConfig c;
    c.seed = 8;
    c.p2d = 0.2;
    c.p3d = 0.2;
    const auto b = synthesize(c);
    const auto masks = build_object_masks(b.points);
    const auto raw = gather(b, OdpOptions{});
    const auto one = aggregate(b.points, masks, raw, b.text, 1);
    CHECK(bitwise_equal(one, aggregate(b.points, masks, raw, b.text, 4)));
    CHECK(bitwise_equal(aggregate_unfiltered(raw, b.text, 1), aggregate_unfiltered(raw, b.text, 3)));
  }
}
