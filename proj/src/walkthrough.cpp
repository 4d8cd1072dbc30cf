#include "scenecaps/walkthrough.hpp"

#include <fstream>

#include "scenecaps/image_io.hpp"

namespace scenecaps {

using nlohmann::json;

WalkthroughScript WalkthroughScript::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read walkthrough script " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed walkthrough script: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("scenes") || !doc.at("scenes").is_array())
    throw DataError("walkthrough script needs a list of scenes");
  WalkthroughScript s;
  const auto base = path.parent_path();
  for (const auto& p : doc.at("scenes")) s.scenes.push_back(base / p.get<std::string>());
  s.answers = doc.value("answers", json::array());
  s.validate();
  return s;
}

void WalkthroughScript::validate() const {
  if (scenes.empty()) throw DataError("walkthrough script has no scenes");
  (void)ScriptedOracle(answers);
}

json roots_summary(const CapsuleNetwork& network, const SceneGraph& graph) {
  json out = json::array();
  for (auto r : graph.roots)
    out.push_back({{"node", SceneGraph::node_id(r)},
                   {"capsule", network.capsule(graph.nodes[r].capsule).name},
                   {"p", graph.nodes[r].p}});
  return out;
}

std::vector<SceneRecord> run_walkthrough(CapsuleNetwork& network, DecisionMatrix& matrix,
                                         const WalkthroughScript& script, const WalkthroughConfig& config,
                                         const TranscriptSink& sink) {
  if (!network.primitives_trained()) throw DataError("walkthrough needs trained primitive capsules");
  auto emit = [&](const json& j) {
    if (sink) sink(j);
  };
  ScriptedOracle oracle(script.answers);
  std::vector<SceneRecord> records;
  std::uint64_t query_id = 0;
  for (std::size_t i = 0; i < script.scenes.size(); ++i) {
    SceneRecord rec;
    rec.image = script.scenes[i];
    const PixelLayer image = read_image(rec.image);
    rec.graphs.push_back(detect(network, image, network.next_pass++, rec.image.filename().string()));
    commit(network, rec.graphs.back());
    emit({{"event", "scene"},
          {"index", i},
          {"image", rec.image.filename().string()},
          {"pass", rec.graphs.back().pass_id},
          {"roots", roots_summary(network, rec.graphs.back())}});
    while (detect_incompleteness(rec.graphs.back()) && rec.queries.size() < config.max_queries_per_scene) {
      const SceneGraph& graph = rec.graphs.back();
      OracleQuery query = make_query(network, matrix, graph, ++query_id, rec.image.filename().string(),
                                     rec.graphs.size() - 1);
      emit({{"event", "query"}, {"query", query.to_json()}});
      if (oracle.exhausted()) {
        emit({{"event", "unanswered"}, {"query", query.id}});
        rec.queries.push_back(std::move(query));
        break;
      }
      const OracleAnswer answer = oracle.answer(query);
      const ApplySummary summary = apply_answer(network, matrix, graph, query.features, answer, config.training);
      query.status = QueryStatus::answered;
      query.answer = answer;
      query.applied = summary.to_json();
      emit({{"event", "answer"}, {"query", query.id}, {"answer", answer.to_json()}, {"applied", query.applied}});
      rec.queries.push_back(std::move(query));
      rec.graphs.push_back(detect(network, image, network.next_pass++, rec.image.filename().string()));
      emit({{"event", "redetect"},
            {"index", i},
            {"version", rec.graphs.size() - 1},
            {"pass", rec.graphs.back().pass_id},
            {"roots", roots_summary(network, rec.graphs.back())}});
    }
    records.push_back(std::move(rec));
  }
  json caps = json::array();
  for (const auto& c : network.capsules) caps.push_back({{"name", c.name}, {"routes", c.routes.size()}});
  emit({{"event", "final"}, {"capsules", caps}, {"matrix", matrix.to_json()}});
  return records;
}

}  // namespace scenecaps
