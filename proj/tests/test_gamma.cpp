#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "scenecaps/gamma.hpp"
#include "scenecaps/sdf.hpp"

using namespace scenecaps;

namespace {

// Brute-force oracle: project every corner of every part box onto the parent
// axes u = (cos θ, sin θ) and v = (−sin θ, cos θ) and take the extents.
struct Box {
  double cx, cy, w, h;
};

Box oracle_box(const std::vector<AttributeVector>& parts, double parent_rot) {
  const double t = 2.0 * M_PI * parent_rot;
  const double ux = std::cos(t), uy = std::sin(t);
  double lo_u = 1e300, hi_u = -1e300, lo_v = 1e300, hi_v = -1e300;
  for (const auto& p : parts) {
    const double a = 2.0 * M_PI * p.rot;
    for (int sx : {-1, 1})
      for (int sy : {-1, 1}) {
        const double lx = sx * p.size.x / 2, ly = sy * p.size.y / 2;
        const double x = p.pos.x + std::cos(a) * lx - std::sin(a) * ly;
        const double y = p.pos.y + std::sin(a) * lx + std::cos(a) * ly;
        const double u = x * ux + y * uy, v = -x * uy + y * ux;
        lo_u = std::min(lo_u, u), hi_u = std::max(hi_u, u);
        lo_v = std::min(lo_v, v), hi_v = std::max(hi_v, v);
      }
  }
  const double mu = (lo_u + hi_u) / 2, mv = (lo_v + hi_v) / 2;
  return {mu * ux - mv * uy, mu * uy + mv * ux, hi_u - lo_u, hi_v - lo_v};
}

}  // namespace

TEST(Gamma, MatchesCornerEnumerationAndWeightedMeans) {
  std::mt19937_64 rng(17);
  for (int set = 0; set < 1000; ++set) {
    const int n = 1 + static_cast<int>(rng() % 6);
    std::vector<AttributeVector> parts;
    for (int i = 0; i < n; ++i)
      parts.push_back({{uniform01(rng), uniform01(rng)}, uniform01(rng), {uniform(rng, 0.01, 0.4), uniform(rng, 0.01, 0.4)},
                       {uniform01(rng), uniform01(rng)}});
    const double parent_rot = uniform01(rng);
    const auto g = gamma_semantic(parts, parent_rot);
    const Box b = oracle_box(parts, parent_rot);
    EXPECT_NEAR(g.pos.x, b.cx, 1e-9);
    EXPECT_NEAR(g.pos.y, b.cy, 1e-9);
    EXPECT_NEAR(g.size.x, b.w, 1e-9);
    EXPECT_NEAR(g.size.y, b.h, 1e-9);
    EXPECT_NEAR(g.rot, parent_rot, 1e-12);
    for (int k = 0; k < 2; ++k) {
      double num = 0, den = 0;
      for (const auto& p : parts) {
        const double w = std::sqrt(p.size.x * p.size.x + p.size.y * p.size.y);
        num += w * p.style[k];
        den += w;
      }
      EXPECT_NEAR(g.style[k], num / den, 1e-12);
    }
  }
}

TEST(Gamma, StylesOnlyAverageOverPartsCarryingThem) {
  const AttributeVector a{{0.3, 0.5}, 0.0, {0.2, 0.2}, {0.8}};
  const AttributeVector b{{0.7, 0.5}, 0.0, {0.1, 0.1}, {0.4, 0.6}};
  const std::vector<std::string> na{"intensity"}, nb{"intensity", "heat"};
  const std::vector<GammaPart> parts{{&a, na, false}, {&b, nb, false}};
  const std::vector<std::string> out{"intensity", "heat", "charm"};
  const auto g = gamma_semantic(parts, out);
  EXPECT_NEAR(g.style[0], (0.8 * 2 + 0.4 * 1) / 3.0, 1e-12);
  EXPECT_NEAR(g.style[1], 0.6, 1e-12);
  EXPECT_EQ(g.style[2], 0.0);
  EXPECT_FALSE(weighted_style(parts, "charm"));
}

TEST(Gamma, ContinuousPartsFollowTheParentFrame) {
  // A circle's box is taken in the parent frame, so it does not grow when the parent rotates.
  const AttributeVector c{{0.5, 0.5}, 0.3, {0.2, 0.2}, {}};
  const std::vector<std::string> none;
  const std::vector<GammaPart> parts{{&c, none, true}};
  const auto g = gamma_semantic(parts, none, 0.125);
  EXPECT_NEAR(g.size.x, 0.2, 1e-12);
  EXPECT_NEAR(g.size.y, 0.2, 1e-12);
  EXPECT_THROW(gamma_semantic(std::span<const AttributeVector>{}), DimensionError);
}

TEST(Gamma, ReferenceRotation) {
  EXPECT_NEAR(reference_rotation({0, 0}, {0, 1}, 0.0), 0.25, 1e-12);
  EXPECT_NEAR(reference_rotation({0, 0}, {1, 0}, 0.25), 0.75, 1e-12);
  const auto corners = bounding_corners({{0.5, 0.5}, 0.25, {0.2, 0.1}, {}});
  EXPECT_NEAR(corners[0].x, 0.55, 1e-12);
  EXPECT_NEAR(corners[0].y, 0.4, 1e-12);
}
