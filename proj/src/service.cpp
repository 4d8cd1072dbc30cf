#include "scenecaps/service.hpp"

#include <fstream>
#include <iostream>
#include <mutex>

#include "httplib.h"
#include "scenecaps/image_io.hpp"

namespace scenecaps {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class HttpQueue : public OracleTransport {
 public:
  std::optional<OracleAnswer> ask(const OracleQuery&) override { return std::nullopt; }
};

class TerminalOracle : public OracleTransport {
 public:
  std::optional<OracleAnswer> ask(const OracleQuery& q) override {
    std::cerr << "query " << q.id << " (" << q.scene << "): " << q.question << "\n"
              << "proposed cause: " << (q.proposal ? std::string(cause_name(*q.proposal)) : "none") << "\n"
              << "answer JSON {cause, name, groups}, empty to defer: " << std::flush;
    std::string line;
    if (!std::getline(std::cin, line) || line.empty()) return std::nullopt;
    try {
      return OracleAnswer::from_json(json::parse(line));
    } catch (const std::exception& e) {
      std::cerr << "ignored: " << e.what() << "\n";
      return std::nullopt;
    }
  }
};

class ScriptOracle : public OracleTransport {
 public:
  explicit ScriptOracle(const fs::path& path) : oracle_(ScriptedOracle::load(path)) {}
  std::optional<OracleAnswer> ask(const OracleQuery& q) override {
    if (oracle_.exhausted()) return std::nullopt;
    try {
      return oracle_.answer(q);
    } catch (const DataError& e) {
      std::cerr << "script oracle: " << e.what() << "\n";
      return std::nullopt;
    }
  }

 private:
  ScriptedOracle oracle_;
};

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& error, const std::string& detail) {
  send_json(res, {{"error", error}, {"detail", detail}}, status);
}

std::string crop_url(const std::string& scene, std::size_t version, const std::string& node) {
  return "/v1/scenes/" + scene + "/nodes/" + node + "/crop.png?version=" + std::to_string(version);
}

}  // namespace

std::unique_ptr<OracleTransport> make_oracle_transport(const std::string& spec) {
  if (spec == "http") return std::make_unique<HttpQueue>();
  if (spec == "terminal") return std::make_unique<TerminalOracle>();
  if (spec.rfind("script:", 0) == 0) return std::make_unique<ScriptOracle>(spec.substr(7));
  throw DataError("unknown oracle transport '" + spec + "'");
}

// ---------------------------------------------------------------- store

SessionStore::SessionStore(fs::path dir, bool seed_matrix) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  network_ = fs::exists(dir_ / "network.json") ? CapsuleNetwork::load(dir_) : CapsuleNetwork::with_primitives();
  const fs::path matrix_path = dir_ / "matrix.json";
  matrix_ = fs::exists(matrix_path) ? DecisionMatrix::load(matrix_path)
                                    : (seed_matrix ? DecisionMatrix::seeded() : DecisionMatrix::zeros());
  const fs::path session = dir_ / "session" / "session.json";
  if (!fs::exists(session)) return;
  json doc;
  try {
    doc = json::parse(read_text(session));
    next_scene_ = doc.at("next_scene").get<std::uint64_t>();
    next_query_ = doc.at("next_query").get<std::uint64_t>();
    for (const auto& s : doc.at("scenes")) {
      SceneEntry e;
      e.id = s.at("id").get<std::string>();
      e.image_file = s.at("image").get<std::string>();
      for (const auto& g : s.at("graphs")) e.graphs.push_back(read_text(dir_ / "session" / g.get<std::string>()));
      scenes_.push_back(std::move(e));
    }
    for (const auto& q : doc.at("queries")) queries_.push_back(OracleQuery::from_json(q));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed session: ") + e.what());
  }
}

const SceneEntry* SessionStore::scene(const std::string& id) const {
  for (const auto& s : scenes_)
    if (s.id == id) return &s;
  return nullptr;
}

OracleQuery* SessionStore::query(std::uint64_t id) {
  for (auto& q : queries_)
    if (q.id == id) return &q;
  return nullptr;
}

void SessionStore::persist_session() const {
  json scenes = json::array();
  for (const auto& s : scenes_) {
    json graphs = json::array();
    for (std::size_t v = 0; v < s.graphs.size(); ++v) graphs.push_back("scenes/" + s.id + "/v" + std::to_string(v) + ".json");
    scenes.push_back({{"id", s.id}, {"image", s.image_file}, {"graphs", graphs}});
  }
  json queries = json::array();
  for (const auto& q : queries_) queries.push_back(q.to_json());
  write_atomic(dir_ / "session" / "session.json",
               json{{"next_scene", next_scene_}, {"next_query", next_query_}, {"scenes", scenes}, {"queries", queries}}
                       .dump(2) +
                   "\n");
}

void SessionStore::persist() {
  network_.save(dir_);
  matrix_.save(dir_ / "matrix.json");
  persist_session();
}

std::string SessionStore::add_scene(const PixelLayer& image) {
  if (!network_.primitives_trained()) throw DataError("the network's primitive capsules are not trained");
  SceneEntry e;
  e.id = "s" + std::to_string(next_scene_);
  e.image_file = "scenes/" + e.id + "/image.png";
  const fs::path image_path = dir_ / "session" / e.image_file;
  fs::create_directories(image_path.parent_path());
  write_file_bytes(image_path, encode_png(image));
  const SceneGraph graph = detect(network_, image, network_.next_pass++, e.id);
  commit(network_, graph);
  e.graphs.push_back(graph.to_json(network_).dump());
  write_atomic(dir_ / "session" / "scenes" / e.id / "v0.json", e.graphs.back());
  ++next_scene_;
  scenes_.push_back(std::move(e));
  enqueue_if_incomplete(scenes_.back().id);
  persist();
  return scenes_.back().id;
}

std::size_t SessionStore::redetect(const std::string& scene_id) {
  auto it = std::find_if(scenes_.begin(), scenes_.end(), [&](const SceneEntry& s) { return s.id == scene_id; });
  if (it == scenes_.end()) throw DataError("unknown scene " + scene_id);
  const SceneGraph graph = detect(network_, image(scene_id), network_.next_pass++, scene_id);
  it->graphs.push_back(graph.to_json(network_).dump());
  const std::size_t version = it->graphs.size() - 1;
  write_atomic(dir_ / "session" / "scenes" / scene_id / ("v" + std::to_string(version) + ".json"), it->graphs.back());
  return version;
}

SceneGraph SessionStore::graph(const std::string& scene_id, std::size_t version) const {
  const SceneEntry* s = scene(scene_id);
  if (!s || version >= s->graphs.size()) throw DataError("unknown scene graph " + scene_id);
  return SceneGraph::from_json(json::parse(s->graphs[version]), network_);
}

PixelLayer SessionStore::image(const std::string& scene_id) const {
  const SceneEntry* s = scene(scene_id);
  if (!s) throw DataError("unknown scene " + scene_id);
  return read_image(dir_ / "session" / s->image_file);
}

std::optional<std::uint64_t> SessionStore::enqueue_if_incomplete(const std::string& scene_id) {
  const SceneEntry* s = scene(scene_id);
  if (!s) throw DataError("unknown scene " + scene_id);
  const std::size_t version = s->graphs.size() - 1;
  const SceneGraph g = graph(scene_id, version);
  if (!detect_incompleteness(g)) return std::nullopt;
  for (const auto& q : queries_)
    if (q.scene == scene_id && q.status == QueryStatus::pending) return q.id;
  OracleQuery q = make_query(network_, matrix_, g, next_query_++, scene_id, version);
  for (const auto& node : q.roots) q.crops.push_back(crop_url(scene_id, version, node));
  queries_.push_back(std::move(q));
  return queries_.back().id;
}

json SessionStore::answer(std::uint64_t query_id, const OracleAnswer& answer, const SemanticTrainConfig& training) {
  OracleQuery* q = query(query_id);
  if (!q) throw DataError("unknown query");
  const SceneGraph g = graph(q->scene, q->graph_version);
  const std::string scene_id = q->scene;
  ApplySummary summary;
  std::size_t version = 0;
  try {
    summary = apply_answer(network_, matrix_, g, q->features, answer, training);
    version = redetect(scene_id);
  } catch (...) {
    network_ = CapsuleNetwork::load(dir_);
    matrix_ = DecisionMatrix::load(dir_ / "matrix.json");
    throw;
  }
  q = query(query_id);
  q->status = QueryStatus::answered;
  q->answer = answer;
  q->applied = summary.to_json();
  const json applied = q->applied;
  persist();
  return {{"applied", applied}, {"scene", scene_id}, {"version", version}};
}

// ---------------------------------------------------------------- http

Service::Service(ServiceConfig config)
    : config_(std::move(config)),
      store_(config_.network_dir, config_.seed_matrix),
      oracle_(make_oracle_transport(config_.oracle)),
      server_(std::make_unique<httplib::Server>()) {
  const std::size_t workers = std::max<std::size_t>(config_.workers, 1);
  server_->new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  routes();
}

Service::~Service() { stop(); }

int Service::bind() {
  if (config_.port == 0) return server_->bind_to_any_port(config_.host);
  if (!server_->bind_to_port(config_.host, config_.port)) throw DataError("cannot bind port " + std::to_string(config_.port));
  return config_.port;
}

bool Service::listen() { return server_->listen_after_bind(); }

void Service::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

void Service::wait_until_ready() const { server_->wait_until_ready(); }

void Service::drain_oracle(const std::string& scene_id) {
  for (std::size_t asked = 0; asked < config_.max_queries_per_scene; ++asked) {
    const auto id = store_.enqueue_if_incomplete(scene_id);
    if (!id) break;
    const OracleQuery* q = store_.query(*id);
    const auto reply = oracle_->ask(*q);
    if (!reply) break;
    try {
      store_.answer(*id, *reply, config_.training);
    } catch (const std::exception& e) {
      std::cerr << "oracle answer to query " << *id << " rejected: " << e.what() << "\n";
      break;
    }
  }
  store_.persist();
}

void Service::routes() {
  auto& s = *server_;

  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    if (res.status == 404) {
      send_error(res, 404, "not_found", "no route for " + req.method + " " + req.path);
    } else {
      send_error(res, res.status, "error", httplib::status_message(res.status));
    }
    return httplib::Server::HandlerResponse::Handled;
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    } catch (...) {
      send_error(res, 500, "internal", "unknown failure");
    }
  });

  s.Post("/v1/scenes", [this](const httplib::Request& req, httplib::Response& res) {
    PixelLayer image;
    try {
      image = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()));
    } catch (const std::exception& e) {
      return send_error(res, 400, "malformed_image", e.what());
    }
    std::unique_lock lock(state_);
    std::string id;
    try {
      id = store_.add_scene(image);
    } catch (const DataError& e) {
      return send_error(res, 409, "not_ready", e.what());
    }
    drain_oracle(id);
    json pending = json::array();
    for (const auto& q : store_.queries())
      if (q.scene == id && q.status == QueryStatus::pending) pending.push_back(q.id);
    send_json(res, {{"scene_id", id}, {"pending_queries", pending}}, 201);
  });

  s.Get("/v1/scenes", [this](const httplib::Request&, httplib::Response& res) {
    std::shared_lock lock(state_);
    json out = json::array();
    for (const auto& e : store_.scenes()) out.push_back({{"id", e.id}, {"versions", e.graphs.size()}});
    send_json(res, out);
  });

  s.Get(R"(/v1/scenes/([^/]+)/graph)", [this](const httplib::Request& req, httplib::Response& res) {
    std::shared_lock lock(state_);
    const SceneEntry* e = store_.scene(req.matches[1]);
    if (!e) return send_error(res, 404, "not_found", "unknown scene " + std::string(req.matches[1]));
    std::size_t version = e->graphs.size() - 1;
    if (req.has_param("version")) {
      try {
        version = std::stoul(req.get_param_value("version"));
      } catch (const std::exception&) {
        return send_error(res, 400, "bad_request", "version must be a non-negative integer");
      }
      if (version >= e->graphs.size()) return send_error(res, 404, "not_found", "unknown graph version");
    }
    res.set_header("X-Graph-Versions", std::to_string(e->graphs.size()));
    res.set_content(e->graphs[version], "application/json");
  });

  s.Get(R"(/v1/scenes/([^/]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
    std::shared_lock lock(state_);
    const SceneEntry* e = store_.scene(req.matches[1]);
    if (!e) return send_error(res, 404, "not_found", "unknown scene " + std::string(req.matches[1]));
    const auto bytes = read_file_bytes(store_.dir() / "session" / e->image_file);
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  });

  s.Get(R"(/v1/scenes/([^/]+)/nodes/([^/]+)/crop\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    std::shared_lock lock(state_);
    const std::string scene_id = req.matches[1];
    const SceneEntry* e = store_.scene(scene_id);
    if (!e) return send_error(res, 404, "not_found", "unknown scene " + scene_id);
    std::size_t version = e->graphs.size() - 1;
    if (req.has_param("version")) {
      try {
        version = std::stoul(req.get_param_value("version"));
      } catch (const std::exception&) {
        return send_error(res, 400, "bad_request", "version must be a non-negative integer");
      }
    }
    if (version >= e->graphs.size()) return send_error(res, 404, "not_found", "unknown graph version");
    const SceneGraph g = store_.graph(scene_id, version);
    std::optional<std::size_t> node;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
      if (SceneGraph::node_id(i) == req.matches[2].str()) node = i;
    if (!node) return send_error(res, 404, "not_found", "unknown node " + std::string(req.matches[2]));
    const auto [lo, hi] = attribute_box(g.nodes[*node].attrs);
    const Vec2 center = (lo + hi) * 0.5;
    const double side = std::max(hi.x - lo.x, hi.y - lo.y) * 1.2 + 0.02;
    const PixelLayer crop = resample_patch(store_.image(scene_id), center - Vec2{side, side} * 0.5, side, 64);
    const auto bytes = encode_png(crop);
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  });

  s.Get("/v1/oracle/queries", [this](const httplib::Request& req, httplib::Response& res) {
    std::shared_lock lock(state_);
    std::optional<QueryStatus> filter;
    if (req.has_param("status")) {
      const auto v = req.get_param_value("status");
      if (v == "pending")
        filter = QueryStatus::pending;
      else if (v == "answered")
        filter = QueryStatus::answered;
      else if (v != "all")
        return send_error(res, 400, "bad_request", "status must be pending, answered or all");
    }
    json out = json::array();
    for (const auto& q : store_.queries())
      if (!filter || q.status == *filter) out.push_back(q.to_json());
    send_json(res, out);
  });

  s.Post(R"(/v1/oracle/queries/(\d+)/answer)", [this](const httplib::Request& req, httplib::Response& res) {
    OracleAnswer answer;
    try {
      answer = OracleAnswer::from_json(json::parse(req.body));
      answer.validate();
    } catch (const InvalidGrouping& e) {
      return send_error(res, 422, "invalid_grouping", e.what());
    } catch (const std::exception& e) {
      return send_error(res, 400, "bad_request", e.what());
    }
    std::unique_lock lock(state_);
    const std::uint64_t id = std::stoull(req.matches[1]);
    const OracleQuery* q = store_.query(id);
    if (!q) return send_error(res, 404, "not_found", "unknown query " + std::to_string(id));
    if (q->status == QueryStatus::answered)
      return send_error(res, 409, "already_answered", "query " + std::to_string(id) + " was answered");
    json result;
    try {
      result = store_.answer(id, answer, config_.training);
    } catch (const InvalidGrouping& e) {
      return send_error(res, 422, "invalid_grouping", e.what());
    } catch (const DataError& e) {
      return send_error(res, 400, "bad_request", e.what());
    }
    drain_oracle(result.at("scene").get<std::string>());
    send_json(res, result);
  });

  s.Get("/v1/network", [this](const httplib::Request&, httplib::Response& res) {
    std::shared_lock lock(state_);
    send_json(res, store_.network().topology_json());
  });

  s.Get("/v1/matrix", [this](const httplib::Request&, httplib::Response& res) {
    std::shared_lock lock(state_);
    send_json(res, store_.matrix().to_json());
  });
}

int run_service(const ServiceConfig& config) {
  Service service(config);
  const int port = service.bind();
  std::cerr << "listening on " << config.host << ":" << port << "\n";
  return service.listen() ? 0 : 2;
}

}  // namespace scenecaps
