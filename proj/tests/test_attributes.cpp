#include <gtest/gtest.h>

#include <random>

#include "scenecaps/attributes.hpp"

using namespace scenecaps;

TEST(Attributes, WrapAndCyclicDistance) {
  EXPECT_DOUBLE_EQ(wrap_unit(1.25), 0.25);
  EXPECT_DOUBLE_EQ(wrap_unit(-0.25), 0.75);
  EXPECT_GE(wrap_unit(-1e-18), 0.0);
  EXPECT_LT(wrap_unit(-1e-18), 1.0);
  EXPECT_NEAR(cyclic_distance(0.95, 0.05), 0.1, 1e-12);
  EXPECT_NEAR(cyclic_distance(0.1, 0.2, 0.25), 0.1, 1e-12);
  EXPECT_NEAR(cyclic_distance(0.0, 0.24, 0.25), 0.01, 1e-12);
}

TEST(Attributes, RotateIsQuarterTurnInImageCoordinates) {
  const Vec2 r = rotate({1.0, 0.0}, 0.25);
  EXPECT_NEAR(r.x, 0.0, 1e-15);
  EXPECT_NEAR(r.y, 1.0, 1e-15);
}

TEST(Attributes, SchemaSlotsAndReservedNames) {
  auto s = AttributeSchema::with_styles({"intensity", "heat"});
  EXPECT_EQ(s.dims(), 7u);
  EXPECT_EQ(s.slot_names(), (std::vector<std::string>{"pos.x", "pos.y", "rot", "size.w", "size.h", "intensity", "heat"}));
  EXPECT_EQ(s.style_index("heat"), 1u);
  EXPECT_THROW(s.add_style({.name = "rot"}), DataError);
  EXPECT_THROW(s.add_style({.name = "heat"}), DataError);
}

TEST(Attributes, FlatRoundTrip) {
  AttributeVector a{{0.1, 0.2}, 0.3, {0.4, 0.5}, {0.6, 0.7}};
  EXPECT_EQ(AttributeVector::from_flat(a.flat()), a);
  EXPECT_EQ(a.flat(), (std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7}));
}

TEST(Attributes, SquareEquivalentsSwapSizeOnQuarterTurns) {
  AttributeVector a{{0.5, 0.5}, 0.1, {0.2, 0.4}, {}};
  const auto eq = rotational_equivalents(a, {4, true});
  ASSERT_EQ(eq.size(), 4u);
  EXPECT_NEAR(eq[1].rot, 0.35, 1e-12);
  EXPECT_DOUBLE_EQ(eq[1].size.x, 0.4);
  EXPECT_DOUBLE_EQ(eq[1].size.y, 0.2);
  EXPECT_DOUBLE_EQ(eq[2].size.x, 0.2);
  const auto c = canonicalize(a, {4, true});
  EXPECT_NEAR(c.rot, 0.1, 1e-12);
  const auto circle = canonicalize(a, {0, false});
  EXPECT_EQ(circle.rot, 0.0);
}

TEST(Attributes, ErrorsUseClosestEquivalent) {
  AttributeVector truth{{0.5, 0.5}, 0.02, {0.2, 0.4}, {0.5}};
  AttributeVector est{{0.51, 0.5}, 0.27, {0.4, 0.2}, {0.45}};
  const auto e = attribute_errors(est, truth, {4, true});
  EXPECT_NEAR(e[0], 0.01, 1e-12);
  EXPECT_NEAR(e[2], 0.0, 1e-12);
  EXPECT_NEAR(e[3], 0.0, 1e-12);
  EXPECT_NEAR(e[5], 0.05, 1e-12);
  // with no symmetry the same estimate is a quarter turn off
  EXPECT_NEAR(attribute_errors(est, truth, {1, false})[2], 0.25, 1e-12);
}

TEST(Attributes, EmbeddingRoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (RotationalSymmetry sym : {RotationalSymmetry{1, false}, RotationalSymmetry{3, false}}) {
    for (int i = 0; i < 50; ++i) {
      AttributeVector a{{u(rng), u(rng)}, u(rng) / sym.period, {u(rng), u(rng)}, {u(rng)}};
      std::vector<double> flat;
      embed_into(a, sym, flat);
      ASSERT_EQ(flat.size(), embedded_width(1, sym));
      const auto b = unembed(flat, 1, sym);
      EXPECT_NEAR(b.pos.x, a.pos.x, 1e-12);
      EXPECT_NEAR(cyclic_distance(b.rot, a.rot), 0.0, 1e-12);
      EXPECT_NEAR(b.style[0], a.style[0], 1e-12);
    }
  }
  EXPECT_EQ(embedded_width(2, {0, false}), 6u);
}
