#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scenecaps/meta.hpp"
#include "scenecaps/network.hpp"

namespace scenecaps {

/// Ordered scenes plus the scripted oracle answers for them.
struct WalkthroughScript {
  std::vector<std::filesystem::path> scenes;
  nlohmann::json answers = nlohmann::json::array();

  /// {"scenes": [paths relative to the script], "answers": [{match, answer}]}
  static WalkthroughScript load(const std::filesystem::path& path);
  void validate() const;
};

struct SceneRecord {
  std::filesystem::path image;
  std::vector<SceneGraph> graphs;  // initial detection, then one per applied answer
  std::vector<OracleQuery> queries;
};

struct WalkthroughConfig {
  std::size_t max_queries_per_scene = 3;
  SemanticTrainConfig training;
};

/// Receives one JSON object per transcript line.
using TranscriptSink = std::function<void(const nlohmann::json&)>;

/// Presents each scene, asks the oracle while the scene has several observed
/// axioms, applies the answers and re-detects.
std::vector<SceneRecord> run_walkthrough(CapsuleNetwork& network, DecisionMatrix& matrix,
                                         const WalkthroughScript& script, const WalkthroughConfig& config = {},
                                         const TranscriptSink& sink = {});

/// Compact summary of a graph's roots: [{node, capsule, p}].
nlohmann::json roots_summary(const CapsuleNetwork& network, const SceneGraph& graph);

}  // namespace scenecaps
