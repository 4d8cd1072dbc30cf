#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "scenecaps/meta.hpp"
#include "scenecaps/network.hpp"

namespace httplib {
class Server;
}

namespace scenecaps {

struct ServiceConfig {
  std::filesystem::path network_dir;
  std::string host = "0.0.0.0";
  int port = 8080;
  std::string oracle = "http";  // http | terminal | script:<file>
  bool seed_matrix = false;      // only when no matrix.json exists yet
  std::size_t workers = 4;
  std::size_t max_queries_per_scene = 3;
  SemanticTrainConfig training;
};

/// Answers queries as they are enqueued. nullopt leaves the query pending for
/// the HTTP queue.
class OracleTransport {
 public:
  virtual ~OracleTransport() = default;
  virtual std::optional<OracleAnswer> ask(const OracleQuery& query) = 0;
};

std::unique_ptr<OracleTransport> make_oracle_transport(const std::string& spec);

struct SceneEntry {
  std::string id;
  std::string image_file;  // relative to the session directory
  std::vector<std::string> graphs;  // serialized graph JSON per version
};

/// Network, matrix, scene registry and query queue, mirrored on disk under
/// the network directory. Every mutating call persists before returning.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path dir, bool seed_matrix = false);

  const std::filesystem::path& dir() const { return dir_; }
  CapsuleNetwork& network() { return network_; }
  const CapsuleNetwork& network() const { return network_; }
  DecisionMatrix& matrix() { return matrix_; }
  const DecisionMatrix& matrix() const { return matrix_; }

  const std::vector<SceneEntry>& scenes() const { return scenes_; }
  const SceneEntry* scene(const std::string& id) const;
  const std::vector<OracleQuery>& queries() const { return queries_; }
  OracleQuery* query(std::uint64_t id);

  /// Stores the image, detects, commits and returns the new scene id.
  std::string add_scene(const PixelLayer& image);
  /// Re-detects a scene as a new graph version.
  std::size_t redetect(const std::string& scene_id);
  SceneGraph graph(const std::string& scene_id, std::size_t version) const;
  PixelLayer image(const std::string& scene_id) const;

  /// Enqueues a query when the latest version of the scene is incomplete.
  std::optional<std::uint64_t> enqueue_if_incomplete(const std::string& scene_id);
  /// Applies an answer to a pending query and re-detects its scene. On any
  /// failure the network is restored from disk.
  nlohmann::json answer(std::uint64_t query_id, const OracleAnswer& answer, const SemanticTrainConfig& training);

  void persist();

 private:
  void persist_session() const;

  std::filesystem::path dir_;
  CapsuleNetwork network_;
  DecisionMatrix matrix_;
  std::vector<SceneEntry> scenes_;
  std::vector<OracleQuery> queries_;
  std::uint64_t next_scene_ = 1;
  std::uint64_t next_query_ = 1;
};

/// The /v1 HTTP API over a SessionStore.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  /// Binds the configured host and port (0 picks a free port); returns the port.
  int bind();
  /// Serves until stop(); call after bind().
  bool listen();
  void stop();
  void wait_until_ready() const;

  SessionStore& store() { return store_; }

 private:
  void routes();
  void drain_oracle(const std::string& scene_id);

  ServiceConfig config_;
  SessionStore store_;
  std::unique_ptr<OracleTransport> oracle_;
  std::unique_ptr<httplib::Server> server_;
  mutable std::shared_mutex state_;
};

/// Runs the service in the foreground until the process is terminated.
int run_service(const ServiceConfig& config);

}  // namespace scenecaps
