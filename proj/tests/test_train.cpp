#include <gtest/gtest.h>

#include <fstream>

#include "scenecaps/grammar.hpp"
#include "scenecaps/train.hpp"

using namespace scenecaps;
using nlohmann::json;

namespace {

Grammar space() {
  std::ifstream in(std::string(SCENECAPS_DATA_DIR) + "/grammars/space.json");
  return Grammar::from_json(json::parse(in));
}

std::vector<AttributeVector> ship_parts(const Grammar& g, std::mt19937_64& rng) {
  const AttributeVector a{{uniform(rng, 0.35, 0.65), uniform(rng, 0.35, 0.65)},
                          uniform01(rng),
                          {uniform(rng, 0.35, 0.5), uniform(rng, 0.35, 0.5)},
                          {uniform(rng, 0.75, 1.0)}};
  const auto t = g.expand(g.require("ship"), a, rng);
  std::vector<AttributeVector> out;
  for (const auto& c : t.children) out.push_back(c.attrs);
  return out;
}

struct ShipFixture {
  CapsuleNetwork net = CapsuleNetwork::with_primitives();
  std::size_t ship = 0;
  std::vector<RouteSample> samples;

  ShipFixture() {
    const Grammar g = space();
    std::mt19937_64 rng(8);
    for (int i = 0; i < 6; ++i) samples.push_back({ship_parts(g, rng), {}});
    ship = net.add_semantic_capsule("ship", {"intensity"});
    add_route(net, ship, {net.require("square"), net.require("triangle"), net.require("triangle"),
                          net.require("triangle"), net.require("circle")},
              samples[0].parts);
  }
};

SemanticTrainConfig quick_config() {
  SemanticTrainConfig c;
  c.augment.count = 1500;
  c.train.steps = 2500;
  return c;
}

}  // namespace

TEST(Train, PrimitiveDatasetShapesAndDeterminism) {
  const auto cap = make_primitive_capsule(1, Shape::square);
  std::mt19937_64 a(3), b(3);
  const auto d1 = synth_primitive_dataset(cap, 40, a);
  const auto d2 = synth_primitive_dataset(cap, 40, b);
  EXPECT_EQ(d1.data.inputs.rows(), 28 * 28);
  EXPECT_EQ(d1.data.targets.rows(), static_cast<Eigen::Index>(encoder_width(Shape::square)));
  EXPECT_EQ(d1.data.inputs, d2.data.inputs);
  for (std::size_t i = 0; i < d1.attrs.size(); ++i) {
    const auto t = encoder_targets(Shape::square, d1.attrs[i]);
    for (std::size_t k = 0; k < t.size(); ++k) EXPECT_DOUBLE_EQ(d1.data.targets(k, i), t[k]);
    EXPECT_GE(d1.attrs[i].pos.x, 0.35);
    EXPECT_LE(d1.attrs[i].size.y, 0.85);
  }
  EXPECT_EQ(default_primitive_config(Shape::triangle).train.steps > default_primitive_config(Shape::circle).train.steps,
            true);
}

TEST(Train, TransformMovesTheWholeBindingRigidly) {
  RouteSample s{{{{0.4, 0.5}, 0.1, {0.1, 0.2}, {0.5}}, {{0.6, 0.5}, 0.2, {0.1, 0.1}, {0.5}}}, {}};
  const auto t = transform_sample(s, {0.5, 0.5}, 0.25, 2.0, {0.3, 0.3});
  EXPECT_NEAR(t.parts[0].pos.x, 0.3, 1e-12);
  EXPECT_NEAR(t.parts[0].pos.y, 0.1, 1e-12);
  EXPECT_NEAR(t.parts[1].pos.y, 0.5, 1e-12);
  EXPECT_NEAR(t.parts[0].rot, 0.35, 1e-12);
  EXPECT_NEAR(t.parts[0].size.y, 0.4, 1e-12);
  EXPECT_EQ(t.parts[0].style, s.parts[0].style);
}

TEST(Train, FrameAndSpread) {
  const std::vector<AttributeVector> parts{{{0.2, 0.5}, 0.0, {0.1, 0.1}, {}},
                                           {{0.5, 0.5}, 0.0, {0.1, 0.1}, {}},
                                           {{0.2, 0.9}, 0.0, {0.1, 0.1}, {}}};
  EXPECT_NEAR(binding_spread(parts), 0.5 / std::hypot(0.1, 0.1), 1e-12);
  const std::vector<SlotInfo> slots(3, SlotInfo{{}, {1, false}});
  const auto f = choose_frame(parts, slots);
  EXPECT_NE(f.a, f.b);
  // the example's own frame comes out at rotation zero
  Route r;
  r.frame = f;
  EXPECT_NEAR(cyclic_distance(route_rotation(r, parts, slots), 0.0), 0.0, 1e-12);
}

TEST(Train, AugmentedLabelsComeFromTheClosedForm) {
  ShipFixture fx;
  const Capsule& cap = fx.net.capsule(fx.ship);
  const Route& route = cap.routes[0];
  const auto slots = fx.net.slots(route);
  AugmentConfig cfg;
  cfg.count = 200;
  std::mt19937_64 rng(1);
  const auto set = augment(cap, route, slots, fx.samples, cfg, rng);
  ASSERT_EQ(set.samples.size(), fx.samples.size() + 200);
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    EXPECT_EQ(set.labels[i], route_forward(cap, route, set.samples[i].parts, slots));
    for (const auto& p : set.samples[i].parts) {
      for (const auto& c : bounding_corners(p)) {
        EXPECT_GE(c.x, -1e-9);
        EXPECT_LE(c.x, 1 + 1e-9);
      }
    }
  }
  EXPECT_THROW(augment(cap, route, slots, fx.samples, AugmentConfig{.scale_lo = 0.0}, rng), DataError);
}

TEST(Train, UnusedStylesAreFoundOverSamples) {
  std::vector<RouteSample> s{{{{{0.5, 0.5}, 0, {0.1, 0.1}, {0.01, 0.7}}}, {}}};
  const std::vector<SlotInfo> slots{{{"intensity", "heat"}, {1, false}}};
  EXPECT_EQ(unused_styles(s, slots, 0.02), std::vector<std::string>{"intensity"});
}

TEST(Train, SemanticRouteRoundTrips) {
  ShipFixture fx;
  const auto report = train_semantic(fx.net, fx.ship, 0, quick_config(), fx.samples);
  EXPECT_TRUE(report.passed) << report.max_mae;
  const Capsule& cap = fx.net.capsule(fx.ship);
  const auto slots = fx.net.slots(cap.routes[0]);
  std::mt19937_64 rng(99);
  const Grammar g = space();
  for (int i = 0; i < 20; ++i) {
    const auto parts = ship_parts(g, rng);
    const auto err = round_trip_errors(cap, cap.routes[0], slots, parts);
    EXPECT_LE(*std::max_element(err.begin(), err.end()), 0.1);
  }
}

TEST(Train, RouteEditsAreValidated) {
  ShipFixture fx;
  const std::vector<AttributeVector> one{{{0.5, 0.5}, 0, {0.1, 0.1}, {1.0}}};
  EXPECT_THROW(add_route(fx.net, fx.ship, {fx.ship}, one), DataError);
  EXPECT_THROW(add_route(fx.net, fx.net.require("circle"), {fx.net.require("square")}, one), DataError);
  EXPECT_THROW(add_route(fx.net, fx.ship, {fx.net.require("square"), fx.net.require("circle")}, one), DimensionError);
  EXPECT_THROW(train_semantic(fx.net, fx.net.require("circle"), 0), DataError);
  EXPECT_EQ(add_route(fx.net, fx.ship, {fx.net.require("square")}, one), 1u);
}
