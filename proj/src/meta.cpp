#include "scenecaps/meta.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace scenecaps {

using nlohmann::json;

std::string_view cause_name(Cause c) {
  switch (c) {
    case Cause::A1: return "A1";
    case Cause::A2: return "A2";
    case Cause::B1: return "B1";
    case Cause::B2: return "B2";
  }
  return "A2";
}

std::optional<Cause> parse_cause(std::string_view s) {
  std::string t;
  for (char c : s)
    if (c != '.') t += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Cause c : kCauses)
    if (t == cause_name(c)) return c;
  return std::nullopt;
}

namespace {

json cause_json(std::optional<Cause> c) { return c ? json(std::string(cause_name(*c))) : json(nullptr); }

Cause require_cause(const json& j) {
  if (!j.is_string()) throw DataError("cause must be a string");
  auto c = parse_cause(j.get<std::string>());
  if (!c) throw DataError("unknown cause '" + j.get<std::string>() + "'");
  return *c;
}

bool is_geometry(const std::string& slot) {
  return slot == "pos.x" || slot == "pos.y" || slot == "rot" || slot == "size.w" || slot == "size.h";
}

}  // namespace

// ---------------------------------------------------------------- features

bool FeatureSet::any() const { return std::any_of(values.begin(), values.end(), [](bool b) { return b; }); }

json FeatureSet::to_json() const {
  json j = json::object();
  for (std::size_t i = 0; i < kFeatureCount; ++i) j["F" + std::to_string(i + 1)] = values[i];
  return j;
}

FeatureSet FeatureSet::from_json(const json& j) {
  FeatureSet f;
  for (std::size_t i = 0; i < kFeatureCount; ++i) f.values[i] = j.value("F" + std::to_string(i + 1), false);
  return f;
}

bool detect_incompleteness(const SceneGraph& graph) { return graph.roots.size() > 1; }

FeatureEvaluation evaluate_features(const CapsuleNetwork& network, const SceneGraph& graph, double epsilon) {
  FeatureEvaluation out;
  const std::set<std::size_t> roots(graph.roots.begin(), graph.roots.end());
  auto over_roots = [&](const NearMiss& m) {
    return std::all_of(m.parts.begin(), m.parts.end(), [&](std::size_t p) { return roots.count(p) > 0; });
  };
  for (std::size_t i = 0; i < graph.near_misses.size() && !out.omega; ++i)
    if (over_roots(graph.near_misses[i])) out.omega = i;
  out.features.values[0] = out.omega.has_value();
  out.features.values[1] = !out.omega.has_value();
  if (!out.omega && !graph.near_misses.empty()) out.omega = 0;
  if (!out.omega) return out;

  const NearMiss& m = graph.near_misses[*out.omega];
  const Capsule& cap = network.capsule(m.capsule);
  const Route& route = cap.routes.at(m.route);
  std::vector<std::string> all;
  std::map<std::string, std::set<std::size_t>> owners;  // slot name → capsules carrying it
  for (std::size_t s = 0; s < route.parts.size(); ++s) {
    const auto names = network.capsule(route.parts[s]).schema.slot_names();
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (std::find(all.begin(), all.end(), names[k]) == all.end()) all.push_back(names[k]);
      owners[names[k]].insert(route.parts[s]);
      if (s < m.z.size() && k < m.z[s].size() && m.z[s][k] < 0.5 &&
          std::find(out.mismatched.begin(), out.mismatched.end(), names[k]) == out.mismatched.end())
        out.mismatched.push_back(names[k]);
    }
  }
  for (const auto& n : cap.schema.slot_names()) owners[n].insert(cap.id);

  if (out.mismatched.size() == 1) {
    const std::string& slot = out.mismatched.front();
    bool seen = false;
    for (auto owner : owners[slot]) {
      const auto names = network.capsule(owner).schema.slot_names();
      const auto k = static_cast<std::size_t>(std::find(names.begin(), names.end(), slot) - names.begin());
      for (const auto* e : network.memory.for_capsule(owner))
        if (k < e->attrs.size() && e->attrs[k] > epsilon) seen = true;
    }
    out.features.values[3] = !seen;
  }
  out.features.values[4] = !out.mismatched.empty() && std::all_of(out.mismatched.begin(), out.mismatched.end(), is_geometry);
  out.features.values[5] = out.mismatched.size() * 2 > all.size();
  return out;
}

// ---------------------------------------------------------------- decision matrix

namespace {

const char* const kFeatureDescriptions[kFeatureCount] = {
    "Observed axioms have the same parent capsule",
    "Observed axioms have no common parent capsule",
    "Parts were tracked from previous scenes",
    "One slot mismatches and no memory entry uses it",
    "Mismatch only in position, rotation or size",
    "Mismatch in more than half of the slots",
};

}  // namespace

bool operator==(const DecisionMatrix::Row& a, const DecisionMatrix::Row& b) {
  return a.id == b.id && a.description == b.description && a.counts == b.counts;
}

DecisionMatrix DecisionMatrix::zeros() {
  DecisionMatrix m;
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    m.rows_.push_back({"F" + std::to_string(i + 1), kFeatureDescriptions[i], {}});
  return m;
}

DecisionMatrix DecisionMatrix::seeded() {
  DecisionMatrix m = zeros();
  const std::array<std::array<std::uint64_t, 4>, kFeatureCount> counts{{
      {4, 3, 14, 12},
      {5, 19, 1, 0},
      {14, 1, 17, 12},
      {1, 0, 12, 2},
      {4, 3, 13, 10},
      {12, 14, 4, 4},
  }};
  for (std::size_t i = 0; i < kFeatureCount; ++i) m.rows_[i].counts = counts[i];
  return m;
}

json DecisionMatrix::to_json() const {
  json rows = json::array();
  for (const auto& r : rows_) {
    json counts = json::object();
    for (Cause c : kCauses) counts[std::string(cause_name(c))] = r.counts[static_cast<std::size_t>(c)];
    rows.push_back({{"id", r.id}, {"desc", r.description}, {"counts", counts}});
  }
  return {{"features", rows}};
}

DecisionMatrix DecisionMatrix::from_json(const json& j) {
  DecisionMatrix m;
  try {
    for (const auto& rj : j.at("features")) {
      Row r{rj.at("id").get<std::string>(), rj.value("desc", ""), {}};
      for (Cause c : kCauses) r.counts[static_cast<std::size_t>(c)] = rj.at("counts").value(std::string(cause_name(c)), std::uint64_t{0});
      m.rows_.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed decision matrix: ") + e.what());
  }
  if (m.rows_.size() != kFeatureCount) throw DataError("decision matrix must have " + std::to_string(kFeatureCount) + " rows");
  return m;
}

void DecisionMatrix::save(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out << to_json().dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

DecisionMatrix DecisionMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return zeros();
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed decision matrix: ") + e.what());
  }
}

void DecisionMatrix::increment(std::size_t row, Cause cause) { ++rows_.at(row).counts[static_cast<std::size_t>(cause)]; }

Decision decide(const DecisionMatrix& matrix, const FeatureSet& features) {
  Decision d;
  for (std::size_t i = 0; i < matrix.rows().size() && i < kFeatureCount; ++i)
    if (features[i])
      for (std::size_t c = 0; c < 4; ++c) d.sums[c] += matrix.rows()[i].counts[c];
  const auto top = std::max_element(d.sums.begin(), d.sums.end());
  if (*top == 0 || std::count(d.sums.begin(), d.sums.end(), *top) > 1) return d;
  d.cause = kCauses[static_cast<std::size_t>(top - d.sums.begin())];
  return d;
}

void update_matrix(DecisionMatrix& matrix, const FeatureSet& features, Cause confirmed) {
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (features[i]) matrix.increment(i, confirmed);
}

// ---------------------------------------------------------------- questions

QuestionContext question_context(const CapsuleNetwork& network, const SceneGraph& graph,
                                 const FeatureEvaluation& features) {
  QuestionContext ctx;
  for (auto r : graph.roots) ctx.parts.push_back(network.capsule(graph.nodes[r].capsule).name);
  if (features.omega) ctx.capsule = network.capsule(graph.near_misses[*features.omega].capsule).name;
  ctx.mismatched = features.mismatched;
  return ctx;
}

namespace {

std::string part_list(const std::vector<std::string>& parts) {
  std::map<std::string, int> counts;
  for (const auto& p : parts) ++counts[p];
  std::vector<std::pair<std::string, int>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::string out;
  for (const auto& [name, n] : sorted) {
    if (!out.empty()) out += ", ";
    out += std::to_string(n) + "× " + name;
  }
  return out;
}

std::string with_article(const std::string& noun) {
  const bool vowel = !noun.empty() && std::string_view("aeiou").find(noun.front()) != std::string_view::npos;
  return (vowel ? "an " : "a ") + noun;
}

std::string joined(const std::vector<std::string>& words, const std::string& sep) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : sep) + w;
  return out;
}

}  // namespace

std::string pose_question(std::optional<Cause> cause, const QuestionContext& ctx) {
  const std::string parts = part_list(ctx.parts);
  const std::string object = ctx.capsule.empty() ? "known object" : ctx.capsule;
  const std::string slots = ctx.mismatched.empty() ? "different" : joined(ctx.mismatched, " and ");
  switch (cause.value_or(Cause::A2)) {
    case Cause::A2:
      if (parts.empty()) return "What new symbol best describes this scene?";
      return "What new symbol best describes these parts: " + parts + "?";
    case Cause::A1:
      return "Are these parts (" + parts + ") another configuration of " + object + "?";
    case Cause::B1:
      return "This object looks like " + with_article(object) + ", but its " + slots +
             " differ from what was seen so far. Which attribute of " + object + " should learn from it?";
    case Cause::B2:
      return "This object looks similar to " + with_article(object) + ", but is very " + slots +
             " instead. What adjective best describes this style?";
  }
  return {};
}

// ---------------------------------------------------------------- oracle records

json PartRef::to_json() const {
  if (root) return *root;
  return {{"capsule", capsule}, {"near", {near.x, near.y}}};
}

PartRef PartRef::from_json(const json& j) {
  PartRef r;
  if (j.is_number_unsigned() || j.is_number_integer()) {
    if (j.get<long long>() < 0) throw InvalidGrouping("part index must be nonnegative");
    r.root = j.get<std::size_t>();
    return r;
  }
  if (!j.is_object()) throw InvalidGrouping("a part is a root index or {capsule, near}");
  if (j.contains("root")) r.root = j.at("root").get<std::size_t>();
  r.capsule = j.value("capsule", "");
  if (j.contains("near")) {
    const auto& n = j.at("near");
    if (!n.is_array() || n.size() != 2) throw InvalidGrouping("near must be [x, y]");
    r.near = {n[0].get<double>(), n[1].get<double>()};
  }
  if (!r.root && r.capsule.empty()) throw InvalidGrouping("a part needs a root index or a capsule name");
  return r;
}

json OracleAnswer::to_json() const {
  json groups_j = json::array();
  for (const auto& g : groups) {
    json parts = json::array();
    for (const auto& p : g.parts) parts.push_back(p.to_json());
    groups_j.push_back({{"name", g.name}, {"parts", parts}});
  }
  return {{"cause", std::string(cause_name(cause))}, {"name", name}, {"groups", groups_j}};
}

OracleAnswer OracleAnswer::from_json(const json& j) {
  if (!j.is_object()) throw DataError("answer must be an object");
  OracleAnswer a;
  try {
    a.cause = require_cause(j.at("cause"));
    a.name = j.value("name", "");
    for (const auto& gj : j.value("groups", json::array())) {
      PartGroup g;
      const json* parts = &gj;
      if (gj.is_object()) {
        g.name = gj.value("name", "");
        if (!gj.contains("parts")) throw InvalidGrouping("group without parts");
        parts = &gj.at("parts");
      }
      if (!parts->is_array()) throw InvalidGrouping("group parts must be a list");
      for (const auto& p : *parts) g.parts.push_back(PartRef::from_json(p));
      a.groups.push_back(std::move(g));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed answer: ") + e.what());
  }
  a.validate();
  return a;
}

void OracleAnswer::validate() const {
  if ((cause == Cause::A2 || cause == Cause::B2) && name.empty())
    throw DataError(std::string(cause == Cause::A2 ? "A2" : "B2") + " answers need a name");
  for (const auto& g : groups)
    if (g.parts.empty()) throw InvalidGrouping("empty group");
  if (cause == Cause::A2 && groups.size() > 1)
    for (const auto& g : groups)
      if (g.name.empty() && g.parts.size() > 1) throw InvalidGrouping("groups of several parts need a name");
}

json OracleQuery::to_json() const {
  return {{"id", id},
          {"scene", scene},
          {"graph_version", graph_version},
          {"proposal", cause_json(proposal)},
          {"question", question},
          {"features", features.to_json()},
          {"candidate", candidate},
          {"mismatched", mismatched},
          {"roots", roots},
          {"crops", crops},
          {"status", status == QueryStatus::pending ? "pending" : "answered"},
          {"answer", answer ? answer->to_json() : json(nullptr)},
          {"applied", applied}};
}

OracleQuery OracleQuery::from_json(const json& j) {
  OracleQuery q;
  try {
    q.id = j.at("id").get<std::uint64_t>();
    q.scene = j.at("scene").get<std::string>();
    q.graph_version = j.value("graph_version", std::size_t{0});
    if (!j.at("proposal").is_null()) q.proposal = require_cause(j.at("proposal"));
    q.question = j.at("question").get<std::string>();
    q.features = FeatureSet::from_json(j.at("features"));
    q.candidate = j.value("candidate", "");
    q.mismatched = j.value("mismatched", std::vector<std::string>{});
    q.roots = j.value("roots", std::vector<std::string>{});
    q.crops = j.value("crops", std::vector<std::string>{});
    q.status = j.value("status", "pending") == "answered" ? QueryStatus::answered : QueryStatus::pending;
    if (j.contains("answer") && !j.at("answer").is_null()) q.answer = OracleAnswer::from_json(j.at("answer"));
    q.applied = j.value("applied", json(nullptr));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed query: ") + e.what());
  }
  return q;
}

OracleQuery make_query(const CapsuleNetwork& network, const DecisionMatrix& matrix, const SceneGraph& graph,
                       std::uint64_t id, const std::string& scene, std::size_t graph_version) {
  const auto eval = evaluate_features(network, graph);
  OracleQuery q;
  q.id = id;
  q.scene = scene;
  q.graph_version = graph_version;
  q.features = eval.features;
  q.proposal = decide(matrix, eval.features).cause;
  q.question = pose_question(q.proposal, question_context(network, graph, eval));
  if (eval.omega) q.candidate = network.capsule(graph.near_misses[*eval.omega].capsule).name;
  q.mismatched = eval.mismatched;
  for (auto r : graph.roots) q.roots.push_back(SceneGraph::node_id(r));
  return q;
}

// ---------------------------------------------------------------- applying answers

json ApplySummary::to_json() const {
  json reports_j = json::array();
  for (const auto& r : reports)
    reports_j.push_back({{"samples", r.samples}, {"max_error", r.max_mae}, {"passed", r.passed}});
  return {{"edits", edits}, {"created", created}, {"training", reports_j}};
}

std::vector<std::uint64_t> ensure_committed(CapsuleNetwork& network, const SceneGraph& graph) {
  bool present = false;
  for (const auto& e : network.memory.entries()) present = present || e.pass == graph.pass_id;
  if (!present) return commit(network, graph);
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto* e = network.memory.find_node(graph.pass_id, SceneGraph::node_id(i));
    if (!e || e->capsule != graph.nodes[i].capsule)
      throw DataError("scene graph of pass " + std::to_string(graph.pass_id) + " does not match memory");
    ids.push_back(e->id);
  }
  return ids;
}

namespace {

std::vector<std::size_t> resolve_group(const CapsuleNetwork& network_, const SceneGraph& graph_, const PartGroup& group,
                                     std::set<std::size_t>& used) {
  std::vector<std::size_t> nodes;
  for (const auto& ref : group.parts) {
    std::size_t node = 0;
    if (ref.root) {
      if (*ref.root >= graph_.roots.size()) throw InvalidGrouping("root index " + std::to_string(*ref.root) + " out of range");
      node = graph_.roots[*ref.root];
      if (!ref.capsule.empty() && network_.capsule(graph_.nodes[node].capsule).name != ref.capsule)
        throw InvalidGrouping("root " + std::to_string(*ref.root) + " is not a " + ref.capsule);
    } else {
      const auto cap = network_.find(ref.capsule);
      if (!cap) throw InvalidGrouping("unknown capsule '" + ref.capsule + "' in grouping");
      std::optional<std::size_t> best;
      double best_d = 1e300;
      for (auto r : graph_.roots) {
        if (graph_.nodes[r].capsule != *cap || used.count(r)) continue;
        const double d = (graph_.nodes[r].attrs.pos - ref.near).norm();
        if (d < best_d) {
          best_d = d;
          best = r;
        }
      }
      if (!best) throw InvalidGrouping("no unused " + ref.capsule + " root for grouping");
      node = *best;
    }
    if (!used.insert(node).second) throw InvalidGrouping("part " + SceneGraph::node_id(node) + " used twice");
    nodes.push_back(node);
  }
  std::sort(nodes.begin(), nodes.end());
  return nodes;
}

class Editor {
 public:
  Editor(CapsuleNetwork& network, const SceneGraph& graph, const SemanticTrainConfig& config, ApplySummary& summary)
      : network_(network), graph_(graph), config_(config), summary_(summary) {
    entries_ = ensure_committed(network, graph);
    for (const auto& e : network.memory.entries())
      if (e.pass == graph.pass_id) ++pass_entries_;
  }

  struct Item {
    std::size_t capsule;
    std::uint64_t entry;
  };

  Item root_item(std::size_t node) const { return {graph_.nodes[node].capsule, entries_[node]}; }

  std::size_t ensure_capsule(const std::string& name, const std::vector<Item>& parts) {
    if (auto id = network_.find(name)) {
      if (network_.capsule(*id).kind != CapsuleKind::semantic)
        throw DataError("'" + name + "' names a primitive capsule");
      return *id;
    }
    std::vector<std::string> styles;
    for (const auto& p : parts)
      for (const auto& s : network_.capsule(p.capsule).style_names())
        if (std::find(styles.begin(), styles.end(), s) == styles.end()) styles.push_back(s);
    const auto id = network_.add_semantic_capsule(name, styles);
    summary_.created.push_back(id);
    summary_.edits.push_back("capsule " + name + " created");
    return id;
  }

  // Adds a route over `parts`, records the observation and trains the route.
  Item teach(std::size_t capsule, const std::vector<Item>& parts) {
    std::vector<std::size_t> caps;
    std::vector<AttributeVector> example;
    for (const auto& p : parts) {
      caps.push_back(p.capsule);
      example.push_back(AttributeVector::from_flat(network_.memory.entry(p.entry).attrs));
    }
    const auto route = add_route(network_, capsule, caps, example);
    const auto& cap = network_.capsule(capsule);
    const auto slots = network_.slots(cap.routes[route]);
    const AttributeVector attrs = route_forward(cap, cap.routes[route], example, slots);
    const auto entry = observe(capsule, route, attrs, parts);
    summary_.edits.push_back("route " + std::to_string(route) + " of " + cap.name + " added over " +
                             std::to_string(parts.size()) + " parts");
    train(capsule, route);
    return {capsule, entry};
  }

  std::uint64_t observe(std::size_t capsule, std::size_t route, const AttributeVector& attrs,
                        const std::vector<Item>& parts) {
    ObservationEntry e;
    e.pass = graph_.pass_id;
    e.node = SceneGraph::node_id(pass_entries_);
    e.capsule = capsule;
    e.route = route;
    e.p = 1.0;
    e.attrs = attrs.flat();
    for (const auto& p : parts) e.parts.push_back(p.entry);
    ++pass_entries_;
    return network_.memory.append(std::move(e));
  }

  void train(std::size_t capsule, std::size_t route) {
    auto report = train_semantic(network_, capsule, route, config_);
    summary_.edits.push_back("route " + std::to_string(route) + " of " + network_.capsule(capsule).name + " trained");
    summary_.reports.push_back(std::move(report));
  }

  CapsuleNetwork& network_;
  const SceneGraph& graph_;
  const SemanticTrainConfig& config_;
  ApplySummary& summary_;
  std::vector<std::uint64_t> entries_;
  std::size_t pass_entries_ = 0;
};

}  // namespace

ApplySummary apply_answer(CapsuleNetwork& network, DecisionMatrix& matrix, const SceneGraph& graph,
                          const FeatureSet& features, const OracleAnswer& answer, const SemanticTrainConfig& config) {
  answer.validate();
  // Resolve the grouping before touching any state so invalid answers change nothing.
  std::set<std::size_t> used;
  std::vector<std::vector<std::size_t>> groups;
  for (const auto& g : answer.groups) groups.push_back(resolve_group(network, graph, g, used));
  ApplySummary summary;
  Editor ed(network, graph, config, summary);

  switch (answer.cause) {
    case Cause::A2: {
      std::vector<Editor::Item> top;
      if (groups.empty()) {
        std::vector<Editor::Item> parts;
        for (auto r : graph.roots) parts.push_back(ed.root_item(r));
        if (parts.empty()) throw DataError("nothing to group: the scene has no observed parts");
        top.push_back(ed.teach(ed.ensure_capsule(answer.name, parts), parts));
      } else {
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
          std::vector<Editor::Item> parts;
          for (auto n : groups[gi]) parts.push_back(ed.root_item(n));
          const std::string& name = groups.size() == 1 && answer.groups[gi].name.empty() ? answer.name
                                                                                          : answer.groups[gi].name;
          if (name.empty()) {
            top.push_back(parts.front());
            continue;
          }
          top.push_back(ed.teach(ed.ensure_capsule(name, parts), parts));
        }
        for (auto r : graph.roots)
          if (!used.count(r)) top.push_back(ed.root_item(r));
        const bool named_group = std::any_of(answer.groups.begin(), answer.groups.end(),
                                             [&](const PartGroup& g) { return g.name == answer.name; });
        if (top.size() > 1 && !named_group && !(groups.size() == 1 && answer.groups[0].name.empty()))
          ed.teach(ed.ensure_capsule(answer.name, top), top);
      }
      break;
    }
    case Cause::A1: {
      std::optional<std::size_t> target = network.find(answer.name);
      if (!target) {
        const auto eval = evaluate_features(network, graph);
        if (eval.omega) target = graph.near_misses[*eval.omega].capsule;
      }
      if (!target) throw DataError("A1 answer names no existing capsule");
      std::vector<Editor::Item> parts;
      if (groups.empty())
        for (auto r : graph.roots) parts.push_back(ed.root_item(r));
      else
        for (auto n : groups.front()) parts.push_back(ed.root_item(n));
      ed.teach(*target, parts);
      break;
    }
    case Cause::B1:
    case Cause::B2: {
      const auto eval = evaluate_features(network, graph);
      std::optional<std::size_t> target;
      if (answer.cause == Cause::B1) target = network.find(answer.name);
      if (!target && eval.omega) target = graph.near_misses[*eval.omega].capsule;
      if (!target) throw DataError("no candidate capsule for a " + std::string(cause_name(answer.cause)) + " answer");
      const NearMiss* miss = nullptr;
      for (const auto& m : graph.near_misses)
        if (m.capsule == *target && !miss) miss = &m;
      if (!miss) throw DataError("capsule '" + network.capsule(*target).name + "' has no near miss in this scene");
      std::vector<Editor::Item> parts;
      for (auto n : miss->parts) parts.push_back(ed.root_item(n));
      const auto entry = ed.observe(*target, miss->route, miss->attrs, parts);
      const std::string& cap_name = network.capsule(*target).name;
      if (answer.cause == Cause::B1) {
        summary.edits.push_back("observation added to " + cap_name);
        ed.train(*target, miss->route);
      } else {
        const std::uint64_t observed[] = {entry};
        auto report = add_attribute(network, *target, answer.name, observed, 1.0, config);
        summary.edits.push_back("attribute " + answer.name + " added to " + cap_name);
        for (auto& r : report.routes) summary.reports.push_back(std::move(r));
        for (auto id : inherit_attribute(network, *target, answer.name, config))
          summary.edits.push_back("attribute " + answer.name + " inherited by " + network.capsule(id).name);
      }
      break;
    }
  }
  update_matrix(matrix, features, answer.cause);
  summary.edits.push_back("decision matrix updated with " + std::string(cause_name(answer.cause)));
  return summary;
}

// ---------------------------------------------------------------- scripted oracle

ScriptedOracle::ScriptedOracle(const json& script) {
  const json& list = script.is_object() && script.contains("answers") ? script.at("answers") : script;
  if (!list.is_array()) throw DataError("oracle script must be a list of {match, answer}");
  for (const auto& item : list) {
    if (!item.is_object() || !item.contains("answer")) throw DataError("oracle script entry needs an answer");
    Entry e{item.value("match", "any"), OracleAnswer::from_json(item.at("answer"))};
    if (e.match != "any" && e.match != "oracle" && !parse_cause(e.match))
      throw DataError("unknown match '" + e.match + "' in oracle script");
    entries_.push_back(std::move(e));
  }
}

ScriptedOracle ScriptedOracle::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read oracle script " + path.string());
  try {
    return ScriptedOracle(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed oracle script: ") + e.what());
  }
}

OracleAnswer ScriptedOracle::answer(const OracleQuery& query) {
  if (exhausted()) throw DataError("oracle script has no answer left for query " + std::to_string(query.id));
  const Entry& e = entries_[next_];
  const bool ok = e.match == "any" || (e.match == "oracle" && !query.proposal) ||
                  (query.proposal && parse_cause(e.match) == query.proposal);
  if (!ok)
    throw DataError("oracle script answer " + std::to_string(next_) + " expects " + e.match + " but the query proposes " +
                    (query.proposal ? std::string(cause_name(*query.proposal)) : std::string("nothing")));
  ++next_;
  return e.answer;
}

}  // namespace scenecaps
