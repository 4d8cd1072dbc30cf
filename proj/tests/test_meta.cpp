#include <gtest/gtest.h>

#include <filesystem>

#include "scenecaps/meta.hpp"

using namespace scenecaps;
using nlohmann::json;

namespace {

FeatureSet features(std::initializer_list<int> ids) {
  FeatureSet f;
  for (int i : ids) f.values[static_cast<std::size_t>(i - 1)] = true;
  return f;
}

// Column sums over the active rows, computed directly from the seeded JSON.
std::array<std::uint64_t, 4> oracle_sums(const json& matrix, const FeatureSet& f) {
  std::array<std::uint64_t, 4> s{};
  const char* cols[] = {"A1", "A2", "B1", "B2"};
  for (std::size_t r = 0; r < kFeatureCount; ++r)
    if (f[r])
      for (int c = 0; c < 4; ++c) s[c] += matrix["features"][r]["counts"][cols[c]].get<std::uint64_t>();
  return s;
}

}  // namespace

TEST(Meta, SeededMatrixDecisions) {
  const auto m = DecisionMatrix::seeded();
  const json mj = m.to_json();

  const auto f2 = features({2});
  const auto d2 = decide(m, f2);
  EXPECT_EQ(d2.sums, oracle_sums(mj, f2));
  EXPECT_EQ(d2.sums, (std::array<std::uint64_t, 4>{5, 19, 1, 0}));
  EXPECT_EQ(d2.cause, Cause::A2);

  const auto f14 = features({1, 4});
  const auto d14 = decide(m, f14);
  EXPECT_EQ(d14.sums, oracle_sums(mj, f14));
  EXPECT_EQ(d14.sums, (std::array<std::uint64_t, 4>{5, 3, 26, 14}));
  EXPECT_EQ(d14.cause, Cause::B1);

  EXPECT_FALSE(decide(m, FeatureSet{}).cause);
  EXPECT_FALSE(decide(DecisionMatrix::zeros(), f2).cause);
}

TEST(Meta, TiesGoToTheOracle) {
  auto m = DecisionMatrix::zeros();
  m.increment(0, Cause::A1);
  m.increment(0, Cause::B2);
  EXPECT_FALSE(decide(m, features({1})).cause);
  update_matrix(m, features({1, 3}), Cause::B2);
  EXPECT_EQ(decide(m, features({1})).cause, Cause::B2);
  EXPECT_EQ(m.rows()[2].counts[3], 1u);
}

TEST(Meta, MatrixPersistsExactly) {
  const auto path = std::filesystem::temp_directory_path() / "scenecaps_matrix.json";
  auto m = DecisionMatrix::seeded();
  update_matrix(m, features({5, 6}), Cause::A1);
  m.save(path);
  EXPECT_EQ(DecisionMatrix::load(path), m);
  std::filesystem::remove(path);
  EXPECT_EQ(DecisionMatrix::load(path), DecisionMatrix::zeros());
  EXPECT_THROW(DecisionMatrix::from_json(json::parse(R"({"features": []})")), DataError);
}

TEST(Meta, CauseSpellings) {
  EXPECT_EQ(parse_cause("A.2"), Cause::A2);
  EXPECT_EQ(parse_cause("B1"), Cause::B1);
  EXPECT_FALSE(parse_cause("C3"));
  EXPECT_EQ(cause_name(Cause::B2), "B2");
  EXPECT_EQ(FeatureSet::from_json(features({2, 6}).to_json()), features({2, 6}));
}

TEST(Meta, QuestionTemplates) {
  QuestionContext ctx{{"triangle", "circle", "triangle", "square", "triangle"}, "ship", {"intensity"}};
  EXPECT_EQ(pose_question(Cause::A2, ctx),
            "What new symbol best describes these parts: 3× triangle, 1× circle, 1× square?");
  EXPECT_EQ(pose_question(std::nullopt, ctx), pose_question(Cause::A2, ctx));
  EXPECT_NE(pose_question(Cause::A1, ctx).find("ship"), std::string::npos);
  EXPECT_NE(pose_question(Cause::B2, ctx).find("intensity"), std::string::npos);
  EXPECT_NE(pose_question(Cause::B1, ctx).find("ship"), std::string::npos);
}

TEST(Meta, AnswerJsonAndValidation) {
  const auto a = OracleAnswer::from_json(json::parse(R"({"cause": "A.2", "name": "ship",
      "groups": [{"name": "booster", "parts": [0, {"capsule": "triangle", "near": [0.3, 0.5]}]}, [3]]})"));
  EXPECT_EQ(a.cause, Cause::A2);
  ASSERT_EQ(a.groups.size(), 2u);
  EXPECT_EQ(a.groups[0].parts[1].capsule, "triangle");
  EXPECT_EQ(a.groups[0].parts[1].near.x, 0.3);
  EXPECT_EQ(OracleAnswer::from_json(a.to_json()).to_json(), a.to_json());

  EXPECT_THROW(OracleAnswer::from_json(json::parse(R"({"cause": "A2"})")), DataError);
  EXPECT_THROW(OracleAnswer::from_json(json::parse(R"({"cause": "A2", "name": "x", "groups": [[]]})")), InvalidGrouping);
  EXPECT_THROW(OracleAnswer::from_json(json::parse(R"({"cause": "A2", "name": "x", "groups": [[-1]]})")), InvalidGrouping);
  EXPECT_THROW(OracleAnswer::from_json(json::parse(R"({"cause": "A2", "name": "x", "groups": [[0, 1], [2]]})")),
               InvalidGrouping);
  EXPECT_THROW(OracleAnswer::from_json(json::parse(R"({"cause": "Z9"})")), DataError);
}

TEST(Meta, QueryJsonRoundTrip) {
  OracleQuery q;
  q.id = 4;
  q.scene = "s1";
  q.graph_version = 2;
  q.proposal = Cause::A1;
  q.question = "Are these parts another configuration of asteroid?";
  q.features = features({1});
  q.roots = {"n0", "n3"};
  q.crops = {"/v1/scenes/s1/nodes/n0/crop.png"};
  EXPECT_EQ(OracleQuery::from_json(q.to_json()).to_json(), q.to_json());
  q.status = QueryStatus::answered;
  q.answer = OracleAnswer{Cause::A1, "asteroid", {}};
  EXPECT_EQ(OracleQuery::from_json(q.to_json()).to_json(), q.to_json());
}

TEST(Meta, ScriptedOracleConsumesInOrder) {
  ScriptedOracle o(json::parse(R"({"answers": [
      {"match": "oracle", "answer": {"cause": "A2", "name": "ship"}},
      {"match": "A.1", "answer": {"cause": "A1", "name": "asteroid"}}]})"));
  OracleQuery q;
  EXPECT_EQ(o.answer(q).name, "ship");
  q.proposal = Cause::A2;
  EXPECT_THROW(o.answer(q), DataError);
  q.proposal = Cause::A1;
  EXPECT_EQ(o.answer(q).cause, Cause::A1);
  EXPECT_TRUE(o.exhausted());
  EXPECT_THROW(o.answer(q), DataError);
  EXPECT_THROW(ScriptedOracle(json::parse(R"([{"match": "maybe", "answer": {"cause": "A1"}}])")), DataError);
}
