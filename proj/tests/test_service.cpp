#include <gtest/gtest.h>

#include <thread>

#include "scenecaps/image_io.hpp"
#include "scenecaps/service.hpp"
#include "support/fixtures.hpp"
// after Eigen: resolv.h defines _res, an identifier Eigen uses
#include "httplib.h"

using namespace scenecaps;
using namespace testing_support;
using nlohmann::json;

namespace {

class Running {
 public:
  explicit Running(const std::filesystem::path& dir, std::string oracle = "http") {
    ServiceConfig cfg;
    cfg.network_dir = dir;
    cfg.host = "127.0.0.1";
    cfg.port = 0;
    cfg.oracle = std::move(oracle);
    cfg.seed_matrix = true;
    cfg.training.train.steps = 2500;
    cfg.training.augment.count = 1500;
    service_ = std::make_unique<Service>(cfg);
    port_ = service_->bind();
    thread_ = std::thread([this] { service_->listen(); });
    service_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(300, 0);
  }
  ~Running() {
    service_->stop();
    thread_.join();
  }
  httplib::Client& http() { return *client_; }

 private:
  std::unique_ptr<Service> service_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

std::string file_body(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return {bytes.begin(), bytes.end()};
}

json get_json(httplib::Client& c, const std::string& path, int expect = 200) {
  auto r = c.Get(path);
  EXPECT_TRUE(r);
  if (!r) return {};
  EXPECT_EQ(r->status, expect) << path << " " << r->body;
  return json::parse(r->body);
}

}  // namespace

TEST(Service, UnknownRoutesAndIdsAre404Json) {
  const auto dir = fresh_network("service_404");
  Running s(dir);
  for (const char* path : {"/v1/nothing", "/v2/network", "/v1/scenes/s99/graph", "/v1/scenes/s99/image"}) {
    const auto j = get_json(s.http(), path, 404);
    EXPECT_TRUE(j.contains("error")) << path;
    EXPECT_TRUE(j.contains("detail")) << path;
  }
  auto r = s.http().Post("/v1/oracle/queries/5/answer", R"({"cause": "A2", "name": "x"})", "application/json");
  EXPECT_EQ(r->status, 404);
  std::filesystem::remove_all(dir);
}

TEST(Service, NetworkStartsWithThreePrimitives) {
  const auto dir = fresh_network("service_network");
  Running s(dir);
  const auto topo = get_json(s.http(), "/v1/network");
  ASSERT_EQ(topo.at("capsules").size(), 3u);
  EXPECT_EQ(topo.at("capsules")[0].at("name"), "circle");
  std::filesystem::remove_all(dir);
}

TEST(Service, MalformedAndBlankUploads) {
  const auto dir = fresh_network("service_upload");
  Running s(dir);
  auto png = file_body(data_dir() / "scenes" / "ship.png");
  auto r = s.http().Post("/v1/scenes", png.substr(0, png.size() / 2), "image/png");
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(json::parse(r->body).at("error"), "malformed_image");
  const auto blank = encode_pgm(PixelLayer(48, 48, 0.0));
  r = s.http().Post("/v1/scenes", std::string(blank.begin(), blank.end()), "image/x-portable-graymap");
  ASSERT_EQ(r->status, 201);
  EXPECT_TRUE(json::parse(r->body).at("pending_queries").empty());
  EXPECT_TRUE(get_json(s.http(), "/v1/oracle/queries?status=pending").empty());
  std::filesystem::remove_all(dir);
}

TEST(Service, OracleLoopOverHttp) {
  const auto dir = fresh_network("service_loop");
  json graph_v0, network_after, queries_after;
  std::string id;
  {
    Running s(dir);
    auto r = s.http().Post("/v1/scenes", file_body(data_dir() / "scenes" / "ship.png"), "image/png");
    ASSERT_EQ(r->status, 201);
    const auto posted = json::parse(r->body);
    id = posted.at("scene_id");
    ASSERT_EQ(posted.at("pending_queries").size(), 1u);

    graph_v0 = get_json(s.http(), "/v1/scenes/" + id + "/graph");
    EXPECT_EQ(graph_v0.at("roots").size(), 5u);
    auto img = s.http().Get("/v1/scenes/" + id + "/image");
    EXPECT_EQ(img->status, 200);
    EXPECT_EQ(decode_png(std::span(reinterpret_cast<const std::uint8_t*>(img->body.data()), img->body.size())).width(), 96);

    const auto pending = get_json(s.http(), "/v1/oracle/queries?status=pending");
    ASSERT_EQ(pending.size(), 1u);
    const auto q = pending[0];
    EXPECT_EQ(q.at("proposal"), "A2");
    ASSERT_EQ(q.at("crops").size(), 5u);
    auto crop = s.http().Get(q.at("crops")[0].get<std::string>());
    ASSERT_EQ(crop->status, 200);
    EXPECT_EQ(crop->get_header_value("Content-Type"), "image/png");
    const std::string answer_path = "/v1/oracle/queries/" + std::to_string(q.at("id").get<int>()) + "/answer";

    r = s.http().Post(answer_path, R"({"cause": "A2", "name": "ship", "groups": [{"name": "a", "parts": [0, 1]}, {"name": "b", "parts": [1, 2]}]})",
                      "application/json");
    EXPECT_EQ(r->status, 422) << r->body;
    EXPECT_EQ(get_json(s.http(), "/v1/network").at("capsules").size(), 3u);

    r = s.http().Post(answer_path, R"({"cause": "A2", "name": "ship"})", "application/json");
    ASSERT_EQ(r->status, 200) << r->body;
    const auto applied = json::parse(r->body);
    EXPECT_EQ(applied.at("version"), 1);
    EXPECT_FALSE(applied.at("applied").at("edits").empty());

    r = s.http().Post(answer_path, R"({"cause": "A2", "name": "ship"})", "application/json");
    EXPECT_EQ(r->status, 409);

    const auto v1 = get_json(s.http(), "/v1/scenes/" + id + "/graph?version=1");
    EXPECT_EQ(v1.at("roots").size(), 1u);
    EXPECT_EQ(get_json(s.http(), "/v1/scenes/" + id + "/graph?version=0"), graph_v0);
    get_json(s.http(), "/v1/scenes/" + id + "/graph?version=5", 404);
    EXPECT_TRUE(get_json(s.http(), "/v1/oracle/queries?status=pending").empty());
    network_after = get_json(s.http(), "/v1/network");
    queries_after = get_json(s.http(), "/v1/oracle/queries");
    bool has_ship = false;
    for (const auto& c : network_after.at("capsules")) has_ship = has_ship || c.at("name") == "ship";
    EXPECT_TRUE(has_ship);
  }
  // restart: every GET answers as before
  Running again(dir);
  EXPECT_EQ(get_json(again.http(), "/v1/network"), network_after);
  EXPECT_EQ(get_json(again.http(), "/v1/oracle/queries"), queries_after);
  EXPECT_EQ(get_json(again.http(), "/v1/scenes/" + id + "/graph?version=0"), graph_v0);
  EXPECT_EQ(get_json(again.http(), "/v1/scenes/" + id + "/graph").at("roots").size(), 1u);
  std::filesystem::remove_all(dir);
}

TEST(Service, ScriptedOracleAnswersOnIngestion) {
  const auto dir = fresh_network("service_script");
  const auto script = dir / "script.json";
  std::ofstream(script) << R"([{"match": "A2", "answer": {"cause": "A2", "name": "ship"}}])";
  Running s(dir, "script:" + script.string());
  auto r = s.http().Post("/v1/scenes", file_body(data_dir() / "scenes" / "ship.png"), "image/png");
  ASSERT_EQ(r->status, 201);
  EXPECT_TRUE(json::parse(r->body).at("pending_queries").empty());
  const auto answered = get_json(s.http(), "/v1/oracle/queries?status=answered");
  ASSERT_EQ(answered.size(), 1u);
  EXPECT_EQ(answered[0].at("answer").at("name"), "ship");
  EXPECT_EQ(get_json(s.http(), "/v1/scenes/s1/graph").at("roots").size(), 1u);
  std::filesystem::remove_all(dir);
}
