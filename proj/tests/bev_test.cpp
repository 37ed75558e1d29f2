#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "rda/bev_adapter.hpp"

using namespace rda;
using namespace rda::bev;

namespace {

// Per-cell oracle: brute-force point-in-rectangle on every cell centre.
bool oracle_occupied(const ObjectBox& o, double x, double y) {
  const double c = std::cos(o.yaw), s = std::sin(o.yaw);
  const double dx = x - o.x, dy = y - o.y;
  return std::abs(dx * c + dy * s) <= o.length / 2 && std::abs(-dx * s + dy * c) <= o.width / 2;
}

std::size_t occupied_count(const BevFeature& f) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < f.height(); ++r) {
    for (std::size_t c = 0; c < f.width(); ++c) n += f.at(0, r, c) == 1.0;
  }
  return n;
}

}  // namespace

TEST(Rasterize, EmptySceneIsZero) {
  const auto f = rasterize_scene({});
  EXPECT_EQ(f.data.shape(), (nn::Shape{4, 64, 64}));
  EXPECT_TRUE(std::all_of(f.data.values().begin(), f.data.values().end(), [](double v) { return v == 0.0; }));
}

TEST(Rasterize, AxisAlignedBoxCoversEightByFour) {
  const ObjectBox box{8.0, 0.0, 4.0, 2.0, 0.0};
  const auto f = rasterize_scene({box});
  EXPECT_EQ(occupied_count(f), 32u);
  const BevSpec spec;
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t c = 0; c < 64; ++c) {
      EXPECT_EQ(f.at(0, r, c) == 1.0, oracle_occupied(box, cell_center(r, spec), cell_center(c, spec)));
    }
  }
}

TEST(Rasterize, VelocityAndClassChannels) {
  const ObjectBox box{8.0, 0.0, 4.0, 2.0, 0.0, 2.0, 0.0, ObjectClass::pedestrian};
  const auto f = rasterize_scene({box});
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t c = 0; c < 64; ++c) {
      const bool occ = f.at(0, r, c) == 1.0;
      EXPECT_EQ(f.at(1, r, c), occ ? 2.0 : 0.0);
      EXPECT_EQ(f.at(2, r, c), 0.0);
      EXPECT_EQ(f.at(3, r, c), occ ? 0.5 : 0.0);
    }
  }
}

TEST(Rasterize, RotatedBoxesMatchOracle) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> pos(-18.0, 18.0), size(0.5, 6.0), yaw(-kPi, kPi);
  const BevSpec spec;
  for (int trial = 0; trial < 50; ++trial) {
    const ObjectBox box{pos(rng), pos(rng), size(rng), size(rng), yaw(rng)};
    const auto f = rasterize_scene({box});
    for (std::size_t r = 0; r < 64; ++r) {
      for (std::size_t c = 0; c < 64; ++c) {
        ASSERT_EQ(f.at(0, r, c) == 1.0, oracle_occupied(box, cell_center(r, spec), cell_center(c, spec)));
      }
    }
  }
}

TEST(Rasterize, OutsideObjectsSkipped) {
  const auto f = rasterize_scene({ObjectBox{40.0, 0.0, 4.0, 2.0, 0.0}, ObjectBox{8.0, 0.0, 4.0, 2.0, 0.0}});
  EXPECT_EQ(f.skipped, 1u);
  EXPECT_EQ(occupied_count(f), 32u);
}

TEST(Rasterize, ShiftByOneCellShiftsFootprint) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(-10.0, 10.0), size(0.7, 5.0), yaw(-kPi, kPi);
  for (int trial = 0; trial < 30; ++trial) {
    const ObjectBox a{pos(rng), pos(rng), size(rng), size(rng), yaw(rng)};
    ObjectBox b = a;
    b.x += 0.5;
    const auto fa = rasterize_scene({a}), fb = rasterize_scene({b});
    for (std::size_t r = 0; r + 1 < 64; ++r) {
      for (std::size_t c = 0; c < 64; ++c) ASSERT_EQ(fa.at(0, r, c), fb.at(0, r + 1, c));
    }
  }
}

TEST(Rasterize, BadSpecRejected) {
  EXPECT_THROW(rasterize_scene({}, BevSpec{0.0, 0.5}), std::invalid_argument);
  EXPECT_THROW(rasterize_scene({}, BevSpec{10.0, 0.3}), std::invalid_argument);
}

TEST(Flatten, ShapeArithmetic) {
  nn::Array a({2, 4, 4});
  const auto v = grid_flatten(a, 2, 2);
  EXPECT_EQ(v.count(), 4u);
  EXPECT_EQ(v.dim(), 8u);
  const auto d = grid_flatten(rasterize_scene({}), 8, 8);
  EXPECT_EQ(d.count(), 64u);
  EXPECT_EQ(d.dim(), 256u);
}

TEST(Flatten, IndexArithmeticOracle) {
  nn::Array a({2, 4, 4});
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t x = 0; x < 4; ++x) a[(c * 4 + y) * 4 + x] = 100.0 * c + 10.0 * y + x;
    }
  }
  const auto v = grid_flatten(a, 2, 2);
  const double* t0 = v.tokens.data();
  EXPECT_EQ((std::vector<double>(t0, t0 + 8)), (std::vector<double>{0, 1, 10, 11, 100, 101, 110, 111}));
  const double* t3 = v.tokens.data() + 3 * 8;
  EXPECT_EQ(t3[0], 22.0);
  EXPECT_EQ(t3[7], 133.0);
}

TEST(Flatten, NonDivisibleRejected) {
  EXPECT_THROW(grid_flatten(nn::Array({2, 5, 4}), 2, 2), GridError);
  EXPECT_THROW(grid_flatten(nn::Array({2, 4, 4}), 0, 2), GridError);
  EXPECT_THROW(grid_flatten(nn::Array({4, 4}), 2, 2), GridError);
}

TEST(Flatten, RandomShapesRoundTrip) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> small(1, 4);
  std::normal_distribution<double> val(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = small(rng), h = small(rng), w = small(rng);
    const std::size_t H = h * small(rng), W = w * small(rng);
    nn::Array a({C, H, W});
    for (auto& x : a.storage()) x = val(rng);
    const auto v = grid_flatten(a, h, w);
    EXPECT_EQ(v.count(), (H / h) * (W / w));
    EXPECT_EQ(v.dim(), C * h * w);
    EXPECT_EQ(unflatten(v), a);
    std::span<const double> sa = a.values(), sv = v.tokens.values();
    std::vector<double> x(sa.begin(), sa.end()), y(sv.begin(), sv.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    EXPECT_EQ(x, y);
  }
}
