#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "scenecaps/network.hpp"
#include "scenecaps/train.hpp"

namespace scenecaps {

/// Why the network failed to explain a scene with a single axiom.
enum class Cause { A1, A2, B1, B2 };
constexpr std::array<Cause, 4> kCauses{Cause::A1, Cause::A2, Cause::B1, Cause::B2};

std::string_view cause_name(Cause c);
/// Accepts "A1" and "A.1" spellings.
std::optional<Cause> parse_cause(std::string_view s);

/// Grouping that names an invalid set of parts (reused or unknown node).
class InvalidGrouping : public DataError {
 public:
  using DataError::DataError;
};

constexpr std::size_t kFeatureCount = 6;

struct FeatureSet {
  // F1 roots share a known parent, F2 they do not, F3 tracked parts (always
  // false here), F4 one never-used slot mismatches, F5 only geometry
  // mismatches, F6 most slots mismatch.
  std::array<bool, kFeatureCount> values{};

  bool operator[](std::size_t i) const { return values[i]; }
  bool any() const;
  nlohmann::json to_json() const;
  static FeatureSet from_json(const nlohmann::json& j);
  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

struct FeatureEvaluation {
  FeatureSet features;
  std::optional<std::size_t> omega;       // index into graph.near_misses
  std::vector<std::string> mismatched;    // slot names with Z below one half
};

bool detect_incompleteness(const SceneGraph& graph);

FeatureEvaluation evaluate_features(const CapsuleNetwork& network, const SceneGraph& graph, double epsilon = 0.02);

/// Feature rows × cause columns of confirmed-cause counts.
class DecisionMatrix {
 public:
  struct Row {
    std::string id;
    std::string description;
    std::array<std::uint64_t, 4> counts{};
  };

  /// Six feature rows, all counts zero.
  static DecisionMatrix zeros();
  /// Example counts of a matrix trained on an earlier session.
  static DecisionMatrix seeded();

  const std::vector<Row>& rows() const { return rows_; }
  nlohmann::json to_json() const;
  static DecisionMatrix from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  /// Missing file → zeros().
  static DecisionMatrix load(const std::filesystem::path& path);

  void increment(std::size_t row, Cause cause);
  friend bool operator==(const DecisionMatrix&, const DecisionMatrix&) = default;

 private:
  std::vector<Row> rows_;
};

bool operator==(const DecisionMatrix::Row& a, const DecisionMatrix::Row& b);

struct Decision {
  std::optional<Cause> cause;  // nullopt: ask the oracle
  std::array<std::uint64_t, 4> sums{};
};

Decision decide(const DecisionMatrix& matrix, const FeatureSet& features);
void update_matrix(DecisionMatrix& matrix, const FeatureSet& features, Cause confirmed);

struct QuestionContext {
  std::vector<std::string> parts;       // capsule names of the unexplained roots
  std::string capsule;                  // candidate parent, if any
  std::vector<std::string> mismatched;  // mismatched slot names
};

QuestionContext question_context(const CapsuleNetwork& network, const SceneGraph& graph,
                                 const FeatureEvaluation& features);

/// Question for the oracle. With no cause the A.2 wording is used, since
/// naming the parts is what every cause needs first.
std::string pose_question(std::optional<Cause> cause, const QuestionContext& context);

/// Selects one observed root: by position in graph.roots, or the root of a
/// given capsule closest to a normalized point.
struct PartRef {
  std::optional<std::size_t> root;
  std::string capsule;
  Vec2 near{0.5, 0.5};

  nlohmann::json to_json() const;
  static PartRef from_json(const nlohmann::json& j);
};

struct PartGroup {
  std::string name;
  std::vector<PartRef> parts;
};

struct OracleAnswer {
  Cause cause = Cause::A2;
  std::string name;               // noun (A.2), adjective (B.2) or capsule (A.1/B.1)
  std::vector<PartGroup> groups;  // A.2: named sub-objects; A.1: parts of the new route

  nlohmann::json to_json() const;
  static OracleAnswer from_json(const nlohmann::json& j);
  void validate() const;
};

enum class QueryStatus { pending, answered };

struct OracleQuery {
  std::uint64_t id = 0;
  std::string scene;
  std::size_t graph_version = 0;
  std::optional<Cause> proposal;
  std::string question;
  FeatureSet features;
  std::string candidate;             // Ω's capsule name, if any
  std::vector<std::string> mismatched;
  std::vector<std::string> roots;    // node ids
  std::vector<std::string> crops;    // crop image URLs
  QueryStatus status = QueryStatus::pending;
  std::optional<OracleAnswer> answer;
  nlohmann::json applied;

  nlohmann::json to_json() const;
  static OracleQuery from_json(const nlohmann::json& j);
};

/// Builds the query for an incomplete scene (crops left empty).
OracleQuery make_query(const CapsuleNetwork& network, const DecisionMatrix& matrix, const SceneGraph& graph,
                       std::uint64_t id, const std::string& scene, std::size_t graph_version);

struct ApplySummary {
  std::vector<std::string> edits;
  std::vector<std::size_t> created;  // capsule ids
  std::vector<SemanticReport> reports;

  nlohmann::json to_json() const;
};

/// Makes sure the graph's pass is in memory (commits it if no entry of the
/// pass exists) and returns the memory entry id per node.
std::vector<std::uint64_t> ensure_committed(CapsuleNetwork& network, const SceneGraph& graph);

/// Applies a confirmed answer: structural edit, retraining, memory entries
/// for new observations, and the matrix update.
ApplySummary apply_answer(CapsuleNetwork& network, DecisionMatrix& matrix, const SceneGraph& graph,
                          const FeatureSet& features, const OracleAnswer& answer,
                          const SemanticTrainConfig& config = {});

/// Answers from a script file: a JSON list of {match, answer} consumed in
/// order; `match` is "any", "oracle" (no proposal) or a cause.
class ScriptedOracle {
 public:
  explicit ScriptedOracle(const nlohmann::json& script);
  static ScriptedOracle load(const std::filesystem::path& path);

  bool exhausted() const { return next_ >= entries_.size(); }
  std::size_t remaining() const { return entries_.size() - next_; }
  /// Next answer; throws DataError if it does not match the query.
  OracleAnswer answer(const OracleQuery& query);

 private:
  struct Entry {
    std::string match;
    OracleAnswer answer;
  };
  std::vector<Entry> entries_;
  std::size_t next_ = 0;
};

}  // namespace scenecaps
