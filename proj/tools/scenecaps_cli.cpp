// Command-line entry points: dataset synthesis, primitive training, detection,
// rendering, the scripted walkthrough and the HTTP service.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "scenecaps/grammar.hpp"
#include "scenecaps/image_io.hpp"
#include "scenecaps/meta.hpp"
#include "scenecaps/network.hpp"
#include "scenecaps/overlay.hpp"
#include "scenecaps/service.hpp"
#include "scenecaps/train.hpp"
#include "scenecaps/walkthrough.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scenecaps;

namespace {

constexpr int kExitData = 2;
constexpr int kExitQuality = 3;

class QualityFailure : public Error {
 public:
  using Error::Error;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

AttributeVector sample_prior(const AttributeSchema& schema, std::mt19937_64& rng) {
  std::vector<double> flat(schema.dims());
  for (std::size_t k = 0; k < flat.size(); ++k) flat[k] = schema.spec_for_slot(k).quantile(uniform01(rng));
  return AttributeVector::from_flat(flat);
}

void collect_leaves(const Grammar& g, const ParseTree& t, json& out) {
  if (t.children.empty()) {
    out.push_back({{"symbol", g.symbol(t.symbol).name}, {"attrs", t.attrs.flat()}});
    return;
  }
  for (const auto& c : t.children) collect_leaves(g, c, out);
}

int cmd_synth(const fs::path& grammar_path, const std::string& axiom, std::size_t n, std::uint64_t seed,
              const fs::path& out_dir, int size) {
  const Grammar grammar = Grammar::from_json(read_json(grammar_path));
  const SymbolId root = grammar.require(axiom);
  fs::create_directories(out_dir);
  std::mt19937_64 rng(seed);
  std::ostringstream records;
  for (std::size_t i = 0; i < n; ++i) {
    const AttributeVector attrs = sample_prior(grammar.symbol(root).schema, rng);
    const ParseTree tree = grammar.expand(root, attrs, rng);
    std::ostringstream name;
    name << "scene_" << std::setw(5) << std::setfill('0') << i << ".png";
    write_image(out_dir / name.str(), draw_tree(grammar, tree, size, size));
    json leaves = json::array();
    collect_leaves(grammar, tree, leaves);
    records << json{{"file", name.str()}, {"axiom", axiom}, {"attrs", attrs.flat()}, {"leaves", leaves}}.dump()
            << "\n";
  }
  write_text(out_dir / "records.jsonl", records.str());
  std::cout << json{{"records", n}, {"out", out_dir.string()}}.dump() << "\n";
  return 0;
}

CapsuleNetwork load_network(const fs::path& dir) {
  if (!fs::exists(dir / "network.json")) throw DataError("no network at " + dir.string());
  return CapsuleNetwork::load(dir);
}

int cmd_train_primitives(const fs::path& dir, std::size_t samples, std::uint64_t seed, std::size_t validation,
                         long steps) {
  CapsuleNetwork network = fs::exists(dir / "network.json") ? CapsuleNetwork::load(dir) : CapsuleNetwork::with_primitives();
  bool all_passed = true;
  for (auto id : network.primitive_ids()) {
    Capsule& cap = network.capsule(id);
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(seed * 1000003u + id);
    std::mt19937_64 vrng(seed * 1000003u + 500 + id);
    const auto train_set = synth_primitive_dataset(cap, samples, rng);
    const auto validation_set = synth_primitive_dataset(cap, validation, vrng);
    PrimitiveTrainConfig config = default_primitive_config(*cap.shape);
    if (steps > 0) config.train.steps = static_cast<std::size_t>(steps);
    config.train.seed = seed + id;
    const auto report = train_primitive(cap, train_set, validation_set, config);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json mae = json::object();
    for (std::size_t k = 0; k < report.slots.size(); ++k) mae[report.slots[k]] = report.mae[k];
    const bool tiny = samples < 1000;
    std::cout << json{{"capsule", cap.name}, {"samples", samples},  {"mae", mae},
                      {"max_mae", report.max_mae}, {"passed", report.passed}, {"warning", tiny || !report.passed},
                      {"seconds", seconds}}
                     .dump()
              << std::endl;
    all_passed = all_passed && report.passed;
  }
  network.save(dir);
  if (!all_passed) throw QualityFailure("primitive encoders missed the error bound");
  return 0;
}

int cmd_detect(const fs::path& dir, const fs::path& image_path, const fs::path& out, const fs::path& overlay,
               bool do_commit) {
  CapsuleNetwork network = load_network(dir);
  const PixelLayer image = read_image(image_path);
  const SceneGraph graph = detect(network, image, network.next_pass, image_path.filename().string());
  const std::string text = graph.to_json(network).dump(2) + "\n";
  if (out.empty())
    std::cout << text;
  else
    write_text(out, text);
  if (!overlay.empty()) write_image(overlay, draw_overlay(network, graph, image));
  if (do_commit) {
    commit(network, graph);
    ++network.next_pass;
    network.save(dir);
  }
  return 0;
}

int cmd_render(const fs::path& dir, const fs::path& graph_path, const fs::path& out, const std::string& node) {
  const CapsuleNetwork network = load_network(dir);
  const SceneGraph graph = SceneGraph::from_json(read_json(graph_path), network);
  if (graph.width <= 0 || graph.height <= 0) throw DataError("scene graph has no canvas size");
  PixelLayer canvas;
  if (node.empty()) {
    canvas = render_scene(network, graph);
  } else {
    std::optional<std::size_t> index;
    for (std::size_t i = 0; i < graph.nodes.size(); ++i)
      if (SceneGraph::node_id(i) == node) index = i;
    if (!index) throw DataError("no node '" + node + "' in the scene graph");
    canvas = render(network, graph, *index, graph.width, graph.height);
  }
  write_image(out, canvas);
  return 0;
}

int cmd_walkthrough(const fs::path& dir, const fs::path& script_path, const fs::path& out_dir,
                    const fs::path& transcript_path, bool seed_matrix) {
  CapsuleNetwork network = load_network(dir);
  DecisionMatrix matrix = seed_matrix ? DecisionMatrix::seeded() : DecisionMatrix::load(dir / "matrix.json");
  const WalkthroughScript script = WalkthroughScript::load(script_path);
  std::ofstream transcript_file;
  if (!transcript_path.empty()) {
    transcript_file.open(transcript_path, std::ios::trunc);
    if (!transcript_file) throw DataError("cannot write " + transcript_path.string());
  }
  std::ostream& transcript = transcript_path.empty() ? std::cout : transcript_file;
  run_walkthrough(network, matrix, script, {}, [&](const json& line) { transcript << line.dump() << std::endl; });
  const fs::path target = out_dir.empty() ? dir : out_dir;
  network.save(target);
  matrix.save(target / "matrix.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-symbolic capsule scene parser"};
  app.require_subcommand(1);

  std::string network_dir;
  std::uint64_t seed = 1;

  auto* synth = app.add_subcommand("synth", "Render random scenes from a grammar");
  std::string grammar_path, axiom, out_dir;
  std::size_t n = 100;
  int size = 96;
  synth->add_option("--grammar", grammar_path, "Grammar JSON")->required();
  synth->add_option("--axiom", axiom, "Start symbol")->required();
  synth->add_option("--n", n, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--size", size, "Canvas side in pixels")->check(CLI::Range(8, 4096));

  auto* trainp = app.add_subcommand("train-primitives", "Train the primitive capsule encoders");
  std::size_t samples = 20000, validation = 1000;
  long steps = 0;
  trainp->add_option("--network", network_dir, "Network directory")->required();
  trainp->add_option("--samples", samples, "Training patches per primitive")->check(CLI::PositiveNumber);
  trainp->add_option("--validation", validation, "Held-out patches per primitive")->check(CLI::PositiveNumber);
  trainp->add_option("--steps", steps, "Override the number of optimizer steps");
  trainp->add_option("--seed", seed, "Random seed");

  auto* det = app.add_subcommand("detect", "Parse an image into a scene graph");
  std::string image_path, out_path, overlay_path;
  bool do_commit = false;
  det->add_option("--network", network_dir, "Network directory")->required();
  det->add_option("--image", image_path, "PNG or PGM image")->required();
  det->add_option("--out", out_path, "Scene graph JSON (stdout if omitted)");
  det->add_option("--overlay", overlay_path, "Write an inspection PNG");
  det->add_flag("--commit", do_commit, "Record the detection in memory");

  auto* ren = app.add_subcommand("render", "Render a scene graph through the route decoders");
  std::string graph_path, node;
  ren->add_option("--network", network_dir, "Network directory")->required();
  ren->add_option("--graph", graph_path, "Scene graph JSON")->required();
  ren->add_option("--out", out_path, "Output PNG")->required();
  ren->add_option("--node", node, "Render only this node");

  auto* walk = app.add_subcommand("walkthrough", "Run scenes against a scripted oracle");
  std::string script_path, transcript_path;
  bool seed_matrix = false;
  walk->add_option("--network", network_dir, "Network directory with trained primitives")->required();
  walk->add_option("--script", script_path, "Walkthrough script JSON")->required();
  walk->add_option("--out", out_dir, "Where to save the grown network (default: in place)");
  walk->add_option("--transcript", transcript_path, "Transcript file (stdout if omitted)");
  walk->add_flag("--seed-matrix", seed_matrix, "Start from the example decision matrix");

  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string oracle_mode = "http";
  int port = 8080;
  serve->add_option("--network", network_dir, "Network directory");
  serve->add_option("--port", port, "Listening port")->check(CLI::Range(0, 65535));
  serve->add_option("--oracle", oracle_mode, "http | terminal | script:<file>");
  serve->add_flag("--seed-matrix", seed_matrix, "Start from the example decision matrix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(grammar_path, axiom, n, seed, out_dir, size);
    if (*trainp) return cmd_train_primitives(network_dir, samples, seed, validation, steps);
    if (*det) return cmd_detect(network_dir, image_path, out_path, overlay_path, do_commit);
    if (*ren) return cmd_render(network_dir, graph_path, out_path, node);
    if (*walk) return cmd_walkthrough(network_dir, script_path, out_dir, transcript_path, seed_matrix);
    if (*serve) {
      ServiceConfig config;
      config.network_dir = network_dir;
      config.port = port;
      config.oracle = oracle_mode;
      config.seed_matrix = seed_matrix;
      if (const char* env = std::getenv("NETWORK_DIR"); env && *env) config.network_dir = env;
      if (const char* env = std::getenv("PORT"); env && *env) config.port = std::atoi(env);
      if (config.network_dir.empty()) throw DataError("serve needs --network or NETWORK_DIR");
      return run_service(config);
    }
  } catch (const QualityFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitQuality;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 1;
}
