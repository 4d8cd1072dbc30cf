#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "scenecaps/image_io.hpp"
#include "scenecaps/network.hpp"
#include "support/fixtures.hpp"

using namespace scenecaps;
using namespace testing_support;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SCENECAPS_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("scenecaps_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Cli, SynthIsDeterministic) {
  const auto dir = scratch("synth");
  const std::string grammar = (data_dir() / "grammars" / "space.json").string();
  ASSERT_EQ(run("synth --grammar " + grammar + " --axiom ship-scene --n 100 --seed 4 --size 48 --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run("synth --grammar " + grammar + " --axiom ship-scene --n 100 --seed 4 --size 48 --out " + (dir / "b").string()), 0);
  const auto records = slurp(dir / "a" / "records.jsonl");
  EXPECT_EQ(std::count(records.begin(), records.end(), '\n'), 100);
  EXPECT_EQ(records, slurp(dir / "b" / "records.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "scene_00042.png"), slurp(dir / "b" / "scene_00042.png"));
  const auto first = json::parse(records.substr(0, records.find('\n')));
  EXPECT_EQ(first.at("leaves").size(), 5u);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("exit");
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("synth --axiom x"), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  std::ofstream(dir / "bad.json") << R"({"symbols": [{"name": "a", "kind": "axiom"}], "rules": []})";
  EXPECT_EQ(run("synth --grammar " + (dir / "bad.json").string() + " --axiom a --n 1 --out " + (dir / "o").string()), 2);
  EXPECT_EQ(run("detect --network " + std::string(SCENECAPS_TEST_NETWORK) + " --image " + (dir / "missing.png").string()), 2);
  EXPECT_EQ(run("detect --network " + (dir / "none").string() + " --image x.png"), 2);
  fs::remove_all(dir);
}

TEST(Cli, TinyPrimitiveTrainingWarnsAndFailsQuality) {
  const auto dir = scratch("train");
  const std::string out = (dir / "report.jsonl").string();
  const int code = std::system((std::string(SCENECAPS_CLI) + " train-primitives --network " + (dir / "net").string() +
                                " --samples 64 --validation 32 --steps 20 --seed 1 > " + out + " 2>/dev/null")
                                   .c_str());
  EXPECT_EQ(WEXITSTATUS(code), 3);
  std::ifstream in(out);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    EXPECT_TRUE(j.at("warning").get<bool>());
    ++n;
  }
  EXPECT_EQ(n, 3);
  EXPECT_TRUE(fs::exists(dir / "net" / "network.json"));
  const auto layout = [&] {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir / "net")) files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    return files;
  };
  const auto before = layout();
  run("train-primitives --network " + (dir / "net").string() + " --samples 64 --validation 32 --steps 20 --seed 1");
  EXPECT_EQ(layout(), before);
  fs::remove_all(dir);
}

TEST(Cli, DetectAndRender) {
  const auto dir = scratch("detect");
  const std::string net = SCENECAPS_TEST_NETWORK;
  const std::string image = (data_dir() / "scenes" / "ship.png").string();
  ASSERT_EQ(run("detect --network " + net + " --image " + image + " --out " + (dir / "g.json").string() +
                " --overlay " + (dir / "o.png").string()),
            0);
  const auto graph = json::parse(slurp(dir / "g.json"));
  EXPECT_EQ(graph.at("roots").size(), 5u);
  EXPECT_EQ(read_image(dir / "o.png").width(), 96 * 4);
  ASSERT_EQ(run("render --network " + net + " --graph " + (dir / "g.json").string() + " --out " + (dir / "r.png").string()), 0);
  const auto rendered = read_image(dir / "r.png");
  const auto original = read_image(image);
  double diff = 0;
  for (std::size_t i = 0; i < rendered.values().size(); ++i) diff += std::abs(rendered.values()[i] - original.values()[i]);
  EXPECT_LT(diff / rendered.values().size(), 0.03);
  EXPECT_EQ(run("render --network " + net + " --graph " + (dir / "g.json").string() + " --node n99 --out " +
                (dir / "x.png").string()),
            2);
  EXPECT_EQ(run("render --network " + net + " --graph " + (dir / "g.json").string() + " --node n0 --out " +
                (dir / "n0.png").string()),
            0);
  fs::remove_all(dir);
}
