#include "scenecaps/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "scenecaps/grammar.hpp"

namespace scenecaps {

using nlohmann::json;

namespace {

constexpr int kNetworkFormat = 1;

json symmetry_json(RotationalSymmetry s) { return {{"period", s.period}, {"swap_size_on_quarter", s.swap_size_on_quarter}}; }

RotationalSymmetry symmetry_from(const json& j) {
  return {j.at("period").get<int>(), j.value("swap_size_on_quarter", false)};
}

std::string capsule_file_stem(const Capsule& c) {
  std::string s;
  for (char ch : c.name) s += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_') ? ch : '_';
  return s + "-" + std::to_string(c.id);
}

}  // namespace

json DetectConfig::to_json() const {
  return {{"scales", scales},
          {"stride", stride},
          {"blank_threshold", blank_threshold},
          {"nms_iou", nms_iou},
          {"nms_ink", nms_ink},
          {"binding_cap", binding_cap},
          {"spread_factor", spread_factor},
          {"verify_margin", verify_margin},
          {"min_coverage", min_coverage},
          {"refine_iterations", refine_iterations},
          {"refine_mask", refine_mask},
          {"refine_fill", refine_fill},
          {"agreement", agreement.to_json()}};
}

DetectConfig DetectConfig::from_json(const json& j) {
  DetectConfig c;
  c.scales = j.value("scales", c.scales);
  c.stride = j.value("stride", c.stride);
  c.blank_threshold = j.value("blank_threshold", c.blank_threshold);
  c.nms_iou = j.value("nms_iou", c.nms_iou);
  c.nms_ink = j.value("nms_ink", c.nms_ink);
  c.binding_cap = j.value("binding_cap", c.binding_cap);
  c.spread_factor = j.value("spread_factor", c.spread_factor);
  c.verify_margin = j.value("verify_margin", c.verify_margin);
  c.min_coverage = j.value("min_coverage", c.min_coverage);
  c.refine_iterations = j.value("refine_iterations", c.refine_iterations);
  c.refine_mask = j.value("refine_mask", c.refine_mask);
  c.refine_fill = j.value("refine_fill", c.refine_fill);
  if (j.contains("agreement")) c.agreement = AgreementConfig::from_json(j.at("agreement"));
  return c;
}

PixelLayer resample_patch(const PixelLayer& image, Vec2 origin, double scale, int patch_size) {
  PixelLayer out(patch_size, patch_size);
  const double step = scale / patch_size;
  const int sub = std::max(1, static_cast<int>(std::ceil(step)));
  for (int y = 0; y < patch_size; ++y)
    for (int x = 0; x < patch_size; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < sub; ++sy)
        for (int sx = 0; sx < sub; ++sx)
          acc += image.bilinear(origin.x + (x + (sx + 0.5) / sub) * step, origin.y + (y + (sy + 0.5) / sub) * step);
      out.at(x, y) = acc / (sub * sub);
    }
  return out;
}

std::vector<PatchProposal> propose_patches(const PixelLayer& image, const DetectConfig& config, int patch_size) {
  if (image.empty()) throw DimensionError("propose_patches: empty image");
  std::vector<PatchProposal> out;
  const double unit = image.unit();
  for (double frac : config.scales) {
    const double scale = frac * unit;
    if (scale < 1.0) continue;
    const double step = std::max(1.0, scale * config.stride);
    const int nx = std::max(1, static_cast<int>(std::floor((image.width() - scale) / step + 1e-9)) + 1);
    const int ny = std::max(1, static_cast<int>(std::floor((image.height() - scale) / step + 1e-9)) + 1);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const Vec2 origin{i * step, j * step};
        out.push_back({origin, scale, resample_patch(image, origin, scale, patch_size)});
      }
  }
  return out;
}

std::pair<Vec2, Vec2> attribute_box(const AttributeVector& a) {
  Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
  for (const Vec2& c : bounding_corners(a)) {
    lo = {std::min(lo.x, c.x), std::min(lo.y, c.y)};
    hi = {std::max(hi.x, c.x), std::max(hi.y, c.y)};
  }
  return {lo, hi};
}

double box_iou(const AttributeVector& a, const AttributeVector& b) {
  const auto [alo, ahi] = attribute_box(a);
  const auto [blo, bhi] = attribute_box(b);
  const double ix = std::max(0.0, std::min(ahi.x, bhi.x) - std::max(alo.x, blo.x));
  const double iy = std::max(0.0, std::min(ahi.y, bhi.y) - std::max(alo.y, blo.y));
  const double inter = ix * iy;
  const double uni = (ahi.x - alo.x) * (ahi.y - alo.y) + (bhi.x - blo.x) * (bhi.y - blo.y) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------- network

CapsuleNetwork CapsuleNetwork::with_primitives() {
  CapsuleNetwork n;
  n.capsules.push_back(make_primitive_capsule(0, Shape::circle));
  n.capsules.push_back(make_primitive_capsule(1, Shape::square));
  n.capsules.push_back(make_primitive_capsule(2, Shape::triangle));
  return n;
}

std::optional<std::size_t> CapsuleNetwork::find(const std::string& name) const {
  for (const auto& c : capsules)
    if (c.name == name) return c.id;
  return std::nullopt;
}

std::size_t CapsuleNetwork::require(const std::string& name) const {
  if (auto id = find(name)) return *id;
  throw DataError("unknown capsule '" + name + "'");
}

std::size_t CapsuleNetwork::add_semantic_capsule(const std::string& name, const std::vector<std::string>& styles) {
  if (name.empty()) throw DataError("capsule name must not be empty");
  if (find(name)) throw DataError("capsule '" + name + "' already exists");
  Capsule c;
  c.id = capsules.size();
  c.name = name;
  c.kind = CapsuleKind::semantic;
  c.schema = AttributeSchema::with_styles(styles);
  c.symmetry = {1, false};
  c.threshold = kSemanticThreshold;
  capsules.push_back(std::move(c));
  return capsules.back().id;
}

std::vector<SlotInfo> CapsuleNetwork::slots(const Route& route) const {
  std::vector<SlotInfo> out;
  for (auto id : route.parts) out.push_back(capsule(id).slot_info());
  return out;
}

std::size_t CapsuleNetwork::level(std::size_t id) const {
  const Capsule& c = capsule(id);
  if (c.kind == CapsuleKind::primitive) return 0;
  std::size_t deepest = 0;
  for (const auto& r : c.routes)
    for (auto part : r.parts) deepest = std::max(deepest, level(part));
  return deepest + 1;
}

std::vector<std::size_t> CapsuleNetwork::topological_order() const {
  std::vector<std::size_t> ids(capsules.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return level(a) < level(b); });
  return ids;
}

std::vector<std::size_t> CapsuleNetwork::consumers(std::size_t id) const {
  std::vector<std::size_t> out;
  for (const auto& c : capsules) {
    bool uses = false;
    for (const auto& r : c.routes) uses = uses || std::find(r.parts.begin(), r.parts.end(), id) != r.parts.end();
    if (uses) out.push_back(c.id);
  }
  return out;
}

std::vector<std::size_t> CapsuleNetwork::primitive_ids() const {
  std::vector<std::size_t> out;
  for (const auto& c : capsules)
    if (c.kind == CapsuleKind::primitive) out.push_back(c.id);
  return out;
}

bool CapsuleNetwork::primitives_trained() const {
  for (auto id : primitive_ids())
    if (!capsule(id).encoder) return false;
  return !primitive_ids().empty();
}

json CapsuleNetwork::topology_json(bool weight_paths) const {
  json caps = json::array();
  for (const auto& c : capsules) {
    json attrs = json::array();
    for (const auto& spec : c.schema.specs()) attrs.push_back(attribute_spec_to_json(spec));
    json routes = json::array();
    for (const auto& r : c.routes) {
      json parts = json::array();
      for (auto p : r.parts) parts.push_back(capsule(p).name);
      json route{{"id", r.id},
                 {"parts", parts},
                 {"frame", {{"a", r.frame.a}, {"b", r.frame.b}, {"offset", r.frame.offset}}},
                 {"spread", r.spread},
                 {"trained", c.kind == CapsuleKind::primitive ? c.encoder.has_value() : r.decoder.has_value()}};
      json learned = json::array();
      for (const auto& [name, model] : r.style_encoders) learned.push_back(name);
      route["learned_attributes"] = learned;
      if (weight_paths) {
        const std::string stem = "weights/" + capsule_file_stem(c) + ".r" + std::to_string(r.id);
        route["decoder"] = r.decoder ? json(stem + ".g") : json(nullptr);
        json enc = json::object();
        for (const auto& [name, model] : r.style_encoders) enc[name] = stem + ".gamma." + name;
        route["style_encoders"] = enc;
      }
      routes.push_back(route);
    }
    json cj{{"id", c.id},
            {"name", c.name},
            {"kind", c.kind == CapsuleKind::primitive ? "primitive" : "semantic"},
            {"symmetry", symmetry_json(c.symmetry)},
            {"threshold", c.threshold},
            {"attrs", attrs},
            {"slots", c.schema.slot_names()},
            {"routes", routes}};
    if (c.shape) cj["shape"] = std::string(shape_name(*c.shape));
    if (weight_paths && c.kind == CapsuleKind::primitive)
      cj["encoder"] = c.encoder ? json("weights/" + capsule_file_stem(c) + ".encoder") : json(nullptr);
    caps.push_back(cj);
  }
  json edges = json::array();
  for (const auto& c : capsules)
    for (const auto& r : c.routes)
      for (std::size_t i = 0; i < r.parts.size(); ++i)
        edges.push_back({{"parent", c.name}, {"route", r.id}, {"slot", i}, {"part", capsule(r.parts[i]).name}});
  json out{{"capsules", caps}, {"edges", edges}};
  if (weight_paths) {
    out["format"] = "scenecaps-network";
    out["version"] = kNetworkFormat;
    out["next_pass"] = next_pass;
    out["detect"] = config.to_json();
  }
  return out;
}

void CapsuleNetwork::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir / "weights");
  for (const auto& c : capsules) {
    const std::string stem = capsule_file_stem(c);
    if (c.encoder) save_model(*c.encoder, dir / "weights" / (stem + ".encoder"), {{"capsule", c.name}});
    for (const auto& r : c.routes) {
      const std::string rs = stem + ".r" + std::to_string(r.id);
      if (r.decoder) save_model(*r.decoder, dir / "weights" / (rs + ".g"), {{"capsule", c.name}, {"route", r.id}});
      for (const auto& [name, model] : r.style_encoders)
        save_model(model, dir / "weights" / (rs + ".gamma." + name), {{"capsule", c.name}, {"attribute", name}});
    }
  }
  memory.save(dir / "memory.jsonl");
  const auto tmp = dir / "network.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << topology_json(true).dump(2) << "\n";
  }
  std::filesystem::rename(tmp, dir / "network.json");
}

CapsuleNetwork CapsuleNetwork::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "network.json");
  if (!in) throw DataError("no network.json in " + dir.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed network.json: ") + e.what());
  }
  if (doc.value("format", "") != "scenecaps-network") throw DataError("not a network file: " + dir.string());
  if (doc.value("version", 0) != kNetworkFormat) throw DataError("unsupported network format version");
  CapsuleNetwork n;
  n.next_pass = doc.value("next_pass", std::uint64_t{1});
  if (doc.contains("detect")) n.config = DetectConfig::from_json(doc.at("detect"));
  for (const auto& cj : doc.at("capsules")) {
    Capsule c;
    c.id = cj.at("id").get<std::size_t>();
    if (c.id != n.capsules.size()) throw DataError("capsule ids out of sequence");
    c.name = cj.at("name").get<std::string>();
    c.kind = cj.at("kind").get<std::string>() == "primitive" ? CapsuleKind::primitive : CapsuleKind::semantic;
    if (cj.contains("shape")) c.shape = parse_shape(cj.at("shape").get<std::string>());
    c.symmetry = symmetry_from(cj.at("symmetry"));
    c.threshold = cj.value("threshold", kPrimitiveThreshold);
    std::vector<AttributeSpec> specs;
    for (const auto& a : cj.at("attrs")) specs.push_back(attribute_spec_from_json(a));
    c.schema = AttributeSchema(specs);
    n.capsules.push_back(std::move(c));
  }
  // Routes reference capsules by name, so resolve them after all capsules exist.
  for (const auto& cj : doc.at("capsules")) {
    Capsule& c = n.capsules[cj.at("id").get<std::size_t>()];
    if (cj.contains("encoder") && !cj.at("encoder").is_null())
      c.encoder = load_model<ConvModel>(dir / cj.at("encoder").get<std::string>());
    for (const auto& rj : cj.at("routes")) {
      Route r;
      r.id = rj.at("id").get<std::size_t>();
      for (const auto& p : rj.at("parts")) r.parts.push_back(n.require(p.get<std::string>()));
      const auto& f = rj.at("frame");
      r.frame = {f.at("a").get<std::size_t>(), f.at("b").get<std::size_t>(), f.at("offset").get<double>()};
      r.spread = rj.value("spread", 0.0);
      if (rj.contains("decoder") && !rj.at("decoder").is_null())
        r.decoder = load_model<DenseModel>(dir / rj.at("decoder").get<std::string>());
      if (rj.contains("style_encoders"))
        for (const auto& [name, path] : rj.at("style_encoders").items())
          r.style_encoders.emplace(name, load_model<DenseModel>(dir / path.get<std::string>()));
      c.routes.push_back(std::move(r));
    }
  }
  n.memory = MemoryStore::load(dir / "memory.jsonl");
  return n;
}

// ---------------------------------------------------------------- scene graph

json SceneGraph::to_json(const CapsuleNetwork& network) const {
  json nodes_j = json::array();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const SceneNode& n = nodes[i];
    const Capsule& c = network.capsule(n.capsule);
    const auto names = c.schema.slot_names();
    const auto flat = n.attrs.flat();
    json attrs = json::object();
    for (std::size_t k = 0; k < names.size() && k < flat.size(); ++k) attrs[names[k]] = flat[k];
    json children = json::array();
    for (auto ch : n.children) children.push_back(node_id(ch));
    nodes_j.push_back({{"id", node_id(i)},
                       {"capsule", c.name},
                       {"route", n.route},
                       {"p", n.p},
                       {"attrs", attrs},
                       {"children", children}});
  }
  json roots_j = json::array();
  for (auto r : roots) roots_j.push_back(node_id(r));
  json misses = json::array();
  for (const auto& m : near_misses) {
    json parts = json::array();
    for (auto p : m.parts) parts.push_back(node_id(p));
    misses.push_back({{"capsule", network.capsule(m.capsule).name},
                      {"route", m.route},
                      {"p", m.p},
                      {"attrs", m.attrs.flat()},
                      {"parts", parts},
                      {"z", m.z}});
  }
  return {{"pass_id", pass_id}, {"image", image},  {"width", width},          {"height", height},
          {"nodes", nodes_j},   {"roots", roots_j}, {"near_misses", misses}};
}

SceneGraph SceneGraph::from_json(const json& j, const CapsuleNetwork& network) {
  SceneGraph g;
  try {
    g.pass_id = j.at("pass_id").get<std::uint64_t>();
    g.image = j.value("image", "");
    g.width = j.value("width", 0);
    g.height = j.value("height", 0);
    std::map<std::string, std::size_t> index;
    const auto& nodes_j = j.at("nodes");
    for (std::size_t i = 0; i < nodes_j.size(); ++i) index[nodes_j[i].at("id").get<std::string>()] = i;
    auto resolve = [&](const json& id) {
      auto it = index.find(id.get<std::string>());
      if (it == index.end()) throw DataError("scene graph references unknown node " + id.dump());
      return it->second;
    };
    for (const auto& nj : nodes_j) {
      SceneNode n;
      n.capsule = network.require(nj.at("capsule").get<std::string>());
      n.route = nj.value("route", std::size_t{0});
      n.p = nj.value("p", 1.0);
      const auto names = network.capsule(n.capsule).schema.slot_names();
      std::vector<double> flat(names.size(), 0.0);
      const auto& attrs = nj.at("attrs");
      for (std::size_t k = 0; k < names.size(); ++k) {
        if (!attrs.contains(names[k])) throw DataError("node " + nj.at("id").dump() + " lacks attribute " + names[k]);
        flat[k] = attrs.at(names[k]).get<double>();
      }
      n.attrs = AttributeVector::from_flat(flat);
      for (const auto& ch : nj.value("children", json::array())) n.children.push_back(resolve(ch));
      g.nodes.push_back(std::move(n));
    }
    for (const auto& r : j.at("roots")) g.roots.push_back(resolve(r));
    for (const auto& mj : j.value("near_misses", json::array())) {
      NearMiss m;
      m.capsule = network.require(mj.at("capsule").get<std::string>());
      m.route = mj.at("route").get<std::size_t>();
      m.p = mj.at("p").get<double>();
      m.attrs = AttributeVector::from_flat(mj.at("attrs").get<std::vector<double>>());
      for (const auto& p : mj.at("parts")) m.parts.push_back(resolve(p));
      m.z = mj.at("z").get<std::vector<std::vector<double>>>();
      g.near_misses.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed scene graph: ") + e.what());
  }
  return g;
}

std::vector<std::size_t> observed_axioms(const SceneGraph& graph) { return graph.roots; }

// ---------------------------------------------------------------- detection

namespace {

struct PrimitiveCandidate {
  std::size_t capsule;
  double p;
  AttributeVector attrs;
  std::size_t order;
};

AttributeVector to_image_frame(const AttributeVector& a, Vec2 origin, double scale, double unit) {
  AttributeVector out = a;
  out.pos = (origin + a.pos * scale) * (1.0 / unit);
  out.size = a.size * (scale / unit);
  return out;
}

bool plausible_patch_fit(const AttributeVector& a) {
  return a.pos.x > 0.2 && a.pos.x < 0.8 && a.pos.y > 0.2 && a.pos.y < 0.8 && a.size.x > 0.15 && a.size.y > 0.15 &&
         a.size.x < 1.0 && a.size.y < 1.0;
}

// Zeroes patch pixels outside the rotated box of `a` grown by `grow` (image frame).
void mask_outside(PixelLayer& patch, Vec2 origin, double side, double unit, const AttributeVector& a, double grow) {
  const double c = std::cos(2.0 * M_PI * a.rot), s = std::sin(2.0 * M_PI * a.rot);
  const double hw = 0.5 * a.size.x * grow * unit + 1.0, hh = 0.5 * a.size.y * grow * unit + 1.0;
  const double step = side / patch.width();
  for (int y = 0; y < patch.height(); ++y)
    for (int x = 0; x < patch.width(); ++x) {
      const double dx = origin.x + (x + 0.5) * step - a.pos.x * unit;
      const double dy = origin.y + (y + 0.5) * step - a.pos.y * unit;
      if (std::abs(c * dx + s * dy) > hw || std::abs(-s * dx + c * dy) > hh) patch.at(x, y) = 0.0;
    }
}

struct Binding {
  std::vector<std::size_t> parts;
  std::size_t index;
};

}  // namespace

double verify_primitive(const CapsuleNetwork& network, const Capsule& capsule, const PixelLayer& image,
                        const AttributeVector& attrs) {
  const double unit = image.unit();
  const auto [lo, hi] = attribute_box(attrs);
  const double extent = std::max(attrs.size.x, attrs.size.y) * unit;
  const double margin = std::max(2.0, network.config.verify_margin * extent);
  const int x0 = std::max(0, static_cast<int>(std::floor(lo.x * unit - margin)));
  const int y0 = std::max(0, static_cast<int>(std::floor(lo.y * unit - margin)));
  const int x1 = std::min(image.width() - 1, static_cast<int>(std::ceil(hi.x * unit + margin)));
  const int y1 = std::min(image.height() - 1, static_cast<int>(std::ceil(hi.y * unit + margin)));
  if (x1 < x0 || y1 < y0) return 0.0;
  const PixelLayer rendered = expected_patch(capsule, attrs, image.width(), image.height());
  // Only pixels inside the primitive's own (rotated) box plus the margin, so
  // neighbours that poke into the axis-aligned window do not count against it.
  const double c = std::cos(2.0 * M_PI * attrs.rot), s = std::sin(2.0 * M_PI * attrs.rot);
  const double hw = 0.5 * attrs.size.x * unit + margin, hh = 0.5 * attrs.size.y * unit + margin;
  std::vector<double> seen, expected;
  double ink = 0.0, found = 0.0;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - attrs.pos.x * unit, dy = y + 0.5 - attrs.pos.y * unit;
      if (std::abs(c * dx + s * dy) > hw || std::abs(-s * dx + c * dy) > hh) continue;
      seen.push_back(image.at(x, y));
      expected.push_back(rendered.at(x, y));
      ink += rendered.at(x, y);
      found += std::min(image.at(x, y), rendered.at(x, y));
    }
  if (seen.empty()) return 0.0;
  PixelLayer a(static_cast<int>(seen.size()), 1), b(static_cast<int>(seen.size()), 1);
  a.values() = std::move(seen);
  b.values() = std::move(expected);
  if (ink <= 0.0 || found < network.config.min_coverage * ink) return 0.0;
  return agreement_primitive(a, b, network.config.agreement.pixel).front();
}

SceneGraph detect(const CapsuleNetwork& network, const PixelLayer& image, std::uint64_t pass_id,
                  const std::string& image_ref) {
  if (image.empty()) throw DimensionError("detect: empty image");
  SceneGraph graph;
  graph.pass_id = pass_id;
  graph.image = image_ref;
  graph.width = image.width();
  graph.height = image.height();
  const DetectConfig& cfg = network.config;
  const double unit = image.unit();

  // Primitive capsules: encode every non-blank patch, re-center, verify by re-rendering.
  std::vector<PrimitiveCandidate> found;
  std::size_t order = 0;
  const auto prims = network.primitive_ids();
  int patch_size = 0;
  for (auto id : prims)
    if (network.capsule(id).encoder) patch_size = static_cast<int>(network.capsule(id).encoder->config().patch);
  if (patch_size > 0) {
    for (const auto& prop : propose_patches(image, cfg, patch_size)) {
      const auto& vals = prop.patch.values();
      if (*std::max_element(vals.begin(), vals.end()) < cfg.blank_threshold) continue;
      for (auto id : prims) {
        const Capsule& cap = network.capsule(id);
        if (!cap.encoder) continue;
        const AttributeVector first = encode_patch(cap, vals);
        if (!plausible_patch_fit(first)) continue;
        // Each pass re-centers on the previous estimate; the best-verified estimate wins.
        AttributeVector est = to_image_frame(first, prop.origin, prop.scale, unit);
        est.clamp_unit();
        AttributeVector best = est;
        double p = verify_primitive(network, cap, image, est);
        for (int pass = 0; pass < cfg.refine_iterations; ++pass) {
          const double side = std::max(est.size.x, est.size.y) * unit / cfg.refine_fill;
          const Vec2 origin = est.pos * unit - Vec2{side * 0.5, side * 0.5};
          PixelLayer refined = resample_patch(image, origin, side, patch_size);
          if (pass > 0) mask_outside(refined, origin, side, unit, est, cfg.refine_mask);
          const AttributeVector next = encode_patch(cap, refined.values());
          if (!plausible_patch_fit(next)) break;
          est = to_image_frame(next, origin, side, unit);
          est.clamp_unit();
          const double q = verify_primitive(network, cap, image, est);
          if (q > p) p = q, best = est;
        }
        if (p >= cap.threshold) found.push_back({id, p, best, order});
        ++order;
      }
    }
  }
  std::stable_sort(found.begin(), found.end(), [](const PrimitiveCandidate& a, const PrimitiveCandidate& b) {
    if (a.p != b.p) return a.p > b.p;
    if (a.capsule != b.capsule) return a.capsule < b.capsule;
    return a.order < b.order;
  });
  std::vector<PrimitiveCandidate> kept;
  std::vector<PixelLayer> kept_ink;
  for (const auto& c : found) {
    bool overlaps = false;
    for (const auto& k : kept) overlaps = overlaps || box_iou(c.attrs, k.attrs) > cfg.nms_iou;
    if (overlaps) continue;
    PixelLayer ink = expected_patch(network.capsule(c.capsule), c.attrs, image.width(), image.height());
    double total = 0.0;
    for (double v : ink.values()) total += v;
    for (const auto& k : kept_ink) {
      double shared = 0.0;
      for (std::size_t i = 0; i < ink.values().size(); ++i) shared += std::min(ink.values()[i], k.values()[i]);
      overlaps = overlaps || shared > cfg.nms_ink * total;
    }
    if (overlaps) continue;
    kept.push_back(c);
    kept_ink.push_back(std::move(ink));
  }
  // Stable node order independent of acceptance order: by capsule, then position.
  std::stable_sort(kept.begin(), kept.end(), [](const PrimitiveCandidate& a, const PrimitiveCandidate& b) {
    if (a.capsule != b.capsule) return a.capsule < b.capsule;
    if (a.attrs.pos.y != b.attrs.pos.y) return a.attrs.pos.y < b.attrs.pos.y;
    return a.attrs.pos.x < b.attrs.pos.x;
  });
  for (const auto& k : kept) graph.nodes.push_back({k.capsule, 0, k.p, canonicalize(k.attrs, network.capsule(k.capsule).symmetry), {}});

  // Semantic capsules, level by level.
  std::vector<bool> consumed(graph.nodes.size(), false);
  struct Evaluated {
    std::size_t capsule, route, binding;
    double p;
    AttributeVector attrs;
    std::vector<std::size_t> parts;
    std::vector<std::vector<double>> z;
  };
  std::vector<Evaluated> rejected;
  std::size_t max_level = 0;
  for (const auto& c : network.capsules) max_level = std::max(max_level, network.level(c.id));
  for (std::size_t lvl = 1; lvl <= max_level; ++lvl) {
    std::vector<Evaluated> accepted_candidates;
    for (const auto& cap : network.capsules) {
      if (cap.kind != CapsuleKind::semantic || network.level(cap.id) != lvl) continue;
      for (const auto& route : cap.routes) {
        if (!route.decoder || route.parts.empty()) continue;
        const auto slots = network.slots(route);
        std::vector<std::vector<std::size_t>> options(route.parts.size());
        for (std::size_t s = 0; s < route.parts.size(); ++s)
          for (std::size_t i = 0; i < graph.nodes.size(); ++i)
            if (!consumed[i] && graph.nodes[i].capsule == route.parts[s]) options[s].push_back(i);
        std::vector<Binding> bindings;
        std::vector<std::size_t> current;
        std::vector<bool> used(graph.nodes.size(), false);
        std::function<void(std::size_t)> enumerate = [&](std::size_t s) {
          if (bindings.size() >= cfg.binding_cap) return;
          if (s == route.parts.size()) {
            bindings.push_back({current, bindings.size()});
            return;
          }
          for (auto i : options[s]) {
            if (used[i]) continue;
            used[i] = true;
            current.push_back(i);
            enumerate(s + 1);
            current.pop_back();
            used[i] = false;
            if (bindings.size() >= cfg.binding_cap) return;
          }
        };
        enumerate(0);
        for (const auto& b : bindings) {
          std::vector<AttributeVector> parts;
          for (auto i : b.parts) parts.push_back(graph.nodes[i].attrs);
          if (route.spread > 0.0 && parts.size() > 1) {
            double far = 0.0, mean_size = 0.0;
            for (std::size_t x = 0; x < parts.size(); ++x) {
              mean_size += parts[x].size.norm() / static_cast<double>(parts.size());
              for (std::size_t y = x + 1; y < parts.size(); ++y) far = std::max(far, (parts[x].pos - parts[y].pos).norm());
            }
            if (mean_size <= 0.0 || far / mean_size > cfg.spread_factor * route.spread) continue;
          }
          const AttributeVector out = route_forward(cap, route, parts, slots);
          const auto expected = expected_inputs(cap, route, out, slots);
          std::vector<std::vector<double>> zs;
          std::vector<RouteInput> inputs;
          for (std::size_t s = 0; s < parts.size(); ++s)
            zs.push_back(agreement_semantic(parts[s], expected[s], slots[s].symmetry, cfg.agreement));
          for (std::size_t s = 0; s < parts.size(); ++s) {
            const double p_i = graph.nodes[b.parts[s]].p;
            inputs.push_back({zs[s], p_i, network.memory.p_mean(cap.id, route.id, s).value_or(p_i)});
          }
          const double p = route_probability(inputs, cfg.agreement.prob_ratio);
          Evaluated ev{cap.id, route.id, b.index, p, out, b.parts, std::move(zs)};
          if (p >= cap.threshold)
            accepted_candidates.push_back(std::move(ev));
          else
            rejected.push_back(std::move(ev));
        }
      }
    }
    std::stable_sort(accepted_candidates.begin(), accepted_candidates.end(), [](const Evaluated& a, const Evaluated& b) {
      if (a.p != b.p) return a.p > b.p;
      if (a.capsule != b.capsule) return a.capsule < b.capsule;
      if (a.route != b.route) return a.route < b.route;
      return a.binding < b.binding;
    });
    for (auto& ev : accepted_candidates) {
      bool free = true;
      for (auto i : ev.parts) free = free && !consumed[i];
      if (!free) {
        rejected.push_back(ev);
        continue;
      }
      for (auto i : ev.parts) consumed[i] = true;
      graph.nodes.push_back({ev.capsule, ev.route, ev.p, ev.attrs, ev.parts});
      consumed.push_back(false);
    }
  }
  for (std::size_t i = 0; i < graph.nodes.size(); ++i)
    if (!consumed[i]) graph.roots.push_back(i);

  // Per capsule, the best binding that did not activate, preferring bindings
  // made only of observed axioms.
  std::map<std::size_t, const Evaluated*> best;
  auto all_roots = [&](const Evaluated& ev) {
    return std::all_of(ev.parts.begin(), ev.parts.end(), [&](std::size_t i) { return !consumed[i]; });
  };
  for (const auto& ev : rejected) {
    auto& slot = best[ev.capsule];
    if (!slot) {
      slot = &ev;
      continue;
    }
    const bool a = all_roots(ev), b = all_roots(*slot);
    if (a != b ? a : ev.p > slot->p) slot = &ev;
  }
  for (const auto& [cap, ev] : best) graph.near_misses.push_back({ev->capsule, ev->route, ev->p, ev->attrs, ev->parts, ev->z});
  std::stable_sort(graph.near_misses.begin(), graph.near_misses.end(),
                   [](const NearMiss& a, const NearMiss& b) { return a.p > b.p; });
  return graph;
}

// ---------------------------------------------------------------- rendering

namespace {

void render_into(const CapsuleNetwork& network, PixelLayer& canvas, std::size_t capsule, std::size_t route,
                 const AttributeVector& attrs, const SceneGraph* graph, std::optional<std::size_t> node, bool mask,
                 int depth) {
  if (depth > 64) throw Error("render: capsule hierarchy too deep");
  const Capsule& c = network.capsule(capsule);
  if (c.kind == CapsuleKind::primitive) {
    PrimitiveParams params = PrimitiveParams::from_attributes(*c.shape, attrs);
    if (mask) params.intensity = 1.0;
    composite_over(canvas, params);
    return;
  }
  if (route >= c.routes.size()) throw DataError("render: capsule '" + c.name + "' has no route " + std::to_string(route));
  const Route& r = c.routes[route];
  const auto slots = network.slots(r);
  const auto parts = expected_inputs(c, r, attrs, slots);
  for (std::size_t s = 0; s < parts.size(); ++s) {
    std::optional<std::size_t> child;
    std::size_t child_route = 0;
    if (graph && node && s < graph->nodes[*node].children.size()) {
      child = graph->nodes[*node].children[s];
      child_route = graph->nodes[*child].route;
    }
    render_into(network, canvas, r.parts[s], child_route, parts[s], graph, child, mask, depth + 1);
  }
}

}  // namespace

PixelLayer render(const CapsuleNetwork& network, const SceneGraph& graph, std::size_t node, int width, int height) {
  if (node >= graph.nodes.size()) throw DataError("render: unknown node " + std::to_string(node));
  PixelLayer canvas(width, height);
  const SceneNode& n = graph.nodes[node];
  render_into(network, canvas, n.capsule, n.route, n.attrs, &graph, node, false, 0);
  return canvas;
}

PixelLayer render_attributes(const CapsuleNetwork& network, std::size_t capsule, std::size_t route,
                             const AttributeVector& attrs, int width, int height) {
  PixelLayer canvas(width, height);
  render_into(network, canvas, capsule, route, attrs, nullptr, std::nullopt, false, 0);
  return canvas;
}

PixelLayer render_scene(const CapsuleNetwork& network, const SceneGraph& graph) {
  PixelLayer canvas(std::max(graph.width, 1), std::max(graph.height, 1));
  for (auto r : graph.roots) {
    const SceneNode& n = graph.nodes[r];
    render_into(network, canvas, n.capsule, n.route, n.attrs, &graph, r, false, 0);
  }
  return canvas;
}

PixelLayer segmentation_mask(const CapsuleNetwork& network, const SceneGraph& graph, std::size_t node, int width,
                             int height) {
  if (node >= graph.nodes.size()) throw DataError("segmentation_mask: unknown node " + std::to_string(node));
  PixelLayer canvas(width, height);
  const SceneNode& n = graph.nodes[node];
  render_into(network, canvas, n.capsule, n.route, n.attrs, &graph, node, true, 0);
  for (double& v : canvas.values()) v = v >= 0.5 ? 1.0 : 0.0;
  return canvas;
}

std::vector<std::uint64_t> commit(CapsuleNetwork& network, const SceneGraph& graph) {
  std::vector<std::uint64_t> ids(graph.nodes.size(), 0);
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const SceneNode& n = graph.nodes[i];
    ObservationEntry e;
    e.pass = graph.pass_id;
    e.node = SceneGraph::node_id(i);
    e.capsule = n.capsule;
    e.route = n.route;
    e.p = n.p;
    e.attrs = n.attrs.flat();
    for (auto ch : n.children) {
      if (ch >= i) throw DataError("scene graph children must precede their parents");
      e.parts.push_back(ids[ch]);
    }
    ids[i] = network.memory.append(std::move(e));
  }
  return ids;
}

}  // namespace scenecaps
