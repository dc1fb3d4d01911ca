#include <cmath>

#include "bat/loss.hpp"
#include "bat/rng.hpp"
#include "doctest.h"

using namespace bat;

namespace {

// toy head geometry: 4x4 grid, stride 16, 64 px crop
RunConfig toy() { return RunConfig{}; }

HeadMaps random_maps(int grid, std::uint64_t seed) {
  HeadMaps m;
  m.grid = grid;
  std::size_t n = std::size_t(grid) * grid;
  SplitMix64 rng(seed);
  m.score.resize(n);
  for (auto& v : m.score) v = 0.05 + 0.9 * rng.u01();
  m.offset.resize(2 * n);
  for (auto& v : m.offset) v = rng.u01() - 0.5;
  m.size.resize(2 * n);
  for (auto& v : m.size) v = 0.08 + 0.6 * rng.u01();
  return m;
}

}  // namespace

TEST_CASE("gaussian target map values") {
  // sigma = 1/3 cell: e^{-4.5} one cell out, e^{-9} diagonal
  auto t = gaussian_target_map(4, 1, 2, 1.0 / 3.0);
  CHECK(t[1 * 4 + 2] == 1.0);
  CHECK(t[1 * 4 + 3] == doctest::Approx(0.011108996538242306).epsilon(1e-14));
  CHECK(t[0 * 4 + 2] == doctest::Approx(0.011108996538242306).epsilon(1e-14));
  CHECK(t[0 * 4 + 1] == doctest::Approx(0.00012340980408667956).epsilon(1e-14));

  // the peak stays exactly 1 for awkward sigmas
  auto t2 = gaussian_target_map(5, 3, 3, 0.7391);
  CHECK(t2[3 * 5 + 3] == 1.0);

  CHECK_THROWS_AS(gaussian_target_map(4, 0, 0, 0.0), std::invalid_argument);
}

TEST_CASE("giou hand cases") {
  // disjoint, gap 1 wide: IoU 0, union 2, enclosure 3
  GiouGrad g = giou_with_grad(BBox{0, 0, 1, 1}, BBox{2, 0, 1, 1});
  CHECK(g.giou == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));

  // overlap by one quarter: 1/7 - 2/9
  g = giou_with_grad(BBox{0, 0, 2, 2}, BBox{1, 1, 2, 2});
  CHECK(g.giou == doctest::Approx(-0.07936507936507936).epsilon(1e-14));

  // identical boxes
  g = giou_with_grad(BBox{3, 4, 5, 6}, BBox{3, 4, 5, 6});
  CHECK(g.giou == doctest::Approx(1.0));

  // gt contained in pred: enclosure equals pred area
  g = giou_with_grad(BBox{0, 0, 4, 4}, BBox{1, 1, 2, 2});
  CHECK(g.giou == doctest::Approx(0.25));

  CHECK_THROWS_AS(giou_with_grad(BBox{0, 0, 0, 1}, BBox{0, 0, 1, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(giou_with_grad(BBox{0, 0, 1, 1}, BBox{0, 0, 1, -2}),
                  std::invalid_argument);
}

TEST_CASE("giou gradient matches finite differences") {
  SplitMix64 rng(404);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    BBox p{rng.u01() * 40, rng.u01() * 40, 4 + rng.u01() * 30, 4 + rng.u01() * 30};
    BBox gt{rng.u01() * 40, rng.u01() * 40, 4 + rng.u01() * 30, 4 + rng.u01() * 30};
    GiouGrad g = giou_with_grad(p, gt);

    auto eval = [&](double dcx, double dcy, double dw, double dh) {
      BBox q{p.x + dcx - dw / 2, p.y + dcy - dh / 2, p.w + dw, p.h + dh};
      return giou_with_grad(q, gt).giou;
    };
    double fd_cx = (eval(h, 0, 0, 0) - eval(-h, 0, 0, 0)) / (2 * h);
    double fd_cy = (eval(0, h, 0, 0) - eval(0, -h, 0, 0)) / (2 * h);
    double fd_w = (eval(0, 0, h, 0) - eval(0, 0, -h, 0)) / (2 * h);
    double fd_h = (eval(0, 0, 0, h) - eval(0, 0, 0, -h)) / (2 * h);
    CHECK(std::abs(g.d_cx - fd_cx) / std::max(1.0, std::abs(fd_cx)) < 1e-6);
    CHECK(std::abs(g.d_cy - fd_cy) / std::max(1.0, std::abs(fd_cy)) < 1e-6);
    CHECK(std::abs(g.d_w - fd_w) / std::max(1.0, std::abs(fd_w)) < 1e-6);
    CHECK(std::abs(g.d_h - fd_h) / std::max(1.0, std::abs(fd_h)) < 1e-6);
  }
}

TEST_CASE("focal term hand values") {
  // 1x1 grid isolates the positive cell: p = 0.6
  RunConfig cfg;
  cfg.image_size_template = 16;
  cfg.image_size_search = 16;
  cfg.d_t = 16;
  cfg.num_heads = 2;
  cfg.num_layers = 1;
  cfg.layer_set = {1};
  HeadMaps m;
  m.grid = 1;
  m.score = {0.6};
  m.offset = {0.0, 0.0};
  m.size = {0.5, 0.5};
  BBox gt{4, 4, 8, 8};
  LossResult r = compute_loss(m, gt, cfg);
  CHECK(r.parts.cls == doctest::Approx(0.08173209980255854).epsilon(1e-14));
  CHECK(r.seeds.d_score[0] == doctest::Approx(-0.6753271656794593).epsilon(1e-12));

  // 2x2 grid, sigma tuned so the side neighbors weigh (1-t)=0.5 and the
  // diagonal 0.75: cls = pos(0.6) + 2 neg(0.5, 0.3) + neg(0.25, 0.3)
  RunConfig cfg2;
  cfg2.image_size_template = 16;
  cfg2.image_size_search = 32;
  cfg2.d_t = 16;
  cfg2.num_heads = 2;
  cfg2.num_layers = 1;
  cfg2.layer_set = {1};
  cfg2.gaussian_sigma = 16.0 * 0.8493218002880191;
  HeadMaps m2;
  m2.grid = 2;
  m2.score = {0.6, 0.3, 0.3, 0.3};
  m2.offset.assign(8, 0.0);
  m2.size.assign(8, 0.25);
  BBox gt2{4, 4, 8, 8};  // center (8,8) -> cell (0,0)
  LossResult r2 = compute_loss(m2, gt2, cfg2);
  CHECK(r2.parts.cls == doctest::Approx(0.09590156925512458).epsilon(1e-12));
}

TEST_CASE("box terms from an engineered miss") {
  RunConfig cfg = toy();  // grid 4, stride 16, crop 64
  HeadMaps m;
  m.grid = 4;
  m.score.assign(16, 0.5);
  m.offset.assign(32, 0.0);
  m.size.assign(32, 0.125);  // 8 px sides
  // gt (0,0,8,8), center cell (0,0); push the predicted center to (36,4)
  m.offset[0] = 1.75;
  m.offset[16] = -0.25;
  BBox gt{0, 0, 8, 8};
  LossResult r = compute_loss(m, gt, cfg);
  // boxes (32,0,8,8) vs (0,0,8,8): union 128, enclosure 320
  CHECK(r.parts.iou == doctest::Approx(1.6).epsilon(1e-14));
  CHECK(r.parts.l1 == doctest::Approx(0.125).epsilon(1e-14));
  CHECK(r.parts.total ==
        doctest::Approx(r.parts.cls + 2.0 * 1.6 + 5.0 * 0.125).epsilon(1e-13));

  // off-cell offset and size seeds stay zero
  for (std::size_t i = 0; i < 16; ++i) {
    if (i == 0) continue;
    CHECK(r.seeds.d_offset[i] == 0.0);
    CHECK(r.seeds.d_offset[16 + i] == 0.0);
    CHECK(r.seeds.d_size[i] == 0.0);
    CHECK(r.seeds.d_size[16 + i] == 0.0);
  }

  CHECK_THROWS_AS(compute_loss(m, BBox{1, 1, 0, 5}, cfg), std::invalid_argument);
}

TEST_CASE("loss seeds match finite differences of the total") {
  RunConfig cfg = toy();
  const double h = 1e-6;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    HeadMaps m = random_maps(4, seed);
    SplitMix64 rng(900 + seed);
    BBox gt{2 + rng.u01() * 30, 2 + rng.u01() * 30, 6 + rng.u01() * 20,
            6 + rng.u01() * 20};
    LossResult r = compute_loss(m, gt, cfg);

    auto total_with = [&](std::vector<double> HeadMaps::* field, std::size_t idx,
                          double delta) {
      HeadMaps q = m;
      (q.*field)[idx] += delta;
      return compute_loss(q, gt, cfg).parts.total;
    };

    for (std::size_t i = 0; i < m.score.size(); ++i) {
      double fd = (total_with(&HeadMaps::score, i, h) - total_with(&HeadMaps::score, i, -h)) /
                  (2 * h);
      CHECK(std::abs(r.seeds.d_score[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-5);
    }
    for (std::size_t i = 0; i < m.offset.size(); ++i) {
      double fd = (total_with(&HeadMaps::offset, i, h) -
                   total_with(&HeadMaps::offset, i, -h)) /
                  (2 * h);
      CHECK(std::abs(r.seeds.d_offset[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-5);
    }
    for (std::size_t i = 0; i < m.size.size(); ++i) {
      double fd =
          (total_with(&HeadMaps::size, i, h) - total_with(&HeadMaps::size, i, -h)) / (2 * h);
      CHECK(std::abs(r.seeds.d_size[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-5);
    }
  }
}

TEST_CASE("saturated scores stay finite") {
  RunConfig cfg = toy();
  HeadMaps m;
  m.grid = 4;
  m.score.assign(16, 0.0);
  m.score[5] = 1.0;
  m.offset.assign(32, 0.0);
  m.size.assign(32, 0.2);
  BBox gt{24, 24, 16, 16};  // center cell (1,1) = index 5
  LossResult r = compute_loss(m, gt, cfg);
  CHECK(std::isfinite(r.parts.total));
  for (double v : r.seeds.d_score) CHECK(std::isfinite(v));
}
