#include "scenecaps/capsule.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numeric>
#include <sstream>

namespace scenecaps {

using nlohmann::json;

json AgreementConfig::to_json() const {
  return {{"pos", pos}, {"rot", rot}, {"size", size}, {"style", style}, {"prob_ratio", prob_ratio}, {"pixel", pixel}};
}

AgreementConfig AgreementConfig::from_json(const json& j) {
  AgreementConfig c;
  c.pos = j.value("pos", c.pos);
  c.rot = j.value("rot", c.rot);
  c.size = j.value("size", c.size);
  c.style = j.value("style", c.style);
  c.prob_ratio = j.value("prob_ratio", c.prob_ratio);
  c.pixel = j.value("pixel", c.pixel);
  return c;
}

double window(std::span<const double> x, std::span<const double> sigma) {
  if (x.size() != sigma.size()) throw DimensionError("window: sigma dimension mismatch");
  double q = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(sigma[k] > 0.0)) throw DimensionError("window: sigma must be positive");
    const double t = x[k] / sigma[k];
    q += t * t;
  }
  return std::exp(-0.5 * q);
}

double window(double x, double sigma) { return window(std::span<const double>(&x, 1), std::span<const double>(&sigma, 1)); }

std::vector<double> agreement_semantic(const AttributeVector& actual, const AttributeVector& expected,
                                       RotationalSymmetry symmetry, const AgreementConfig& config) {
  if (actual.dims() != expected.dims()) throw DimensionError("agreement: dimension mismatch");
  std::vector<double> best;
  double best_sum = -1.0;
  for (const auto& a : rotational_equivalents(actual, symmetry)) {
    std::vector<double> z(actual.dims());
    z[0] = window(expected.pos.x - a.pos.x, config.pos);
    z[1] = window(expected.pos.y - a.pos.y, config.pos);
    z[2] = symmetry.continuous() ? 1.0 : window(cyclic_distance(expected.rot, a.rot), config.rot);
    z[3] = window(expected.size.x - a.size.x, config.size);
    z[4] = window(expected.size.y - a.size.y, config.size);
    for (std::size_t k = 0; k < a.style.size(); ++k) z[5 + k] = window(expected.style[k] - a.style[k], config.style);
    const double sum = std::accumulate(z.begin(), z.end(), 0.0);
    if (sum > best_sum) {
      best_sum = sum;
      best = std::move(z);
    }
  }
  return best;
}

std::vector<double> agreement_primitive(const PixelLayer& patch, const PixelLayer& expected, double sigma_px) {
  if (patch.width() != expected.width() || patch.height() != expected.height())
    throw DimensionError("agreement: patch sizes differ");
  double diff = 0.0;
  for (std::size_t i = 0; i < patch.values().size(); ++i) diff += std::abs(patch.values()[i] - expected.values()[i]);
  return {window(diff / static_cast<double>(patch.values().size()), sigma_px)};
}

double route_probability(std::span<const RouteInput> parts, double prob_sigma) {
  if (parts.empty()) throw DimensionError("route_probability needs at least one part");
  double total = 0.0;
  for (const auto& part : parts) {
    if (part.z.empty()) throw DimensionError("route_probability: empty agreement vector");
    const double l1 = std::accumulate(part.z.begin(), part.z.end(), 0.0);
    const double ratio = part.p_mean > 0.0 ? part.p / part.p_mean : 1.0;
    total += l1 / static_cast<double>(part.z.size()) * window(ratio - 1.0, prob_sigma);
  }
  return std::clamp(total / static_cast<double>(parts.size()), 0.0, 1.0);
}

RouteSelection route_select(std::span<const RouteCandidate> candidates, double threshold) {
  if (candidates.empty()) throw DimensionError("route_select needs at least one candidate");
  const RouteCandidate* best = &candidates.front();
  for (const auto& c : candidates)
    if (c.p > best->p || (c.p == best->p && c.route < best->route)) best = &c;
  return {best->route, best->p, best->attrs, best->p >= threshold};
}

std::vector<std::string> Capsule::style_names() const {
  std::vector<std::string> out;
  for (const auto& s : schema.styles()) out.push_back(s.name);
  return out;
}

Capsule make_primitive_capsule(std::size_t id, Shape shape) {
  Capsule c;
  c.id = id;
  c.name = std::string(shape_name(shape));
  c.kind = CapsuleKind::primitive;
  c.shape = shape;
  c.symmetry = shape_symmetry(shape);
  const double rot_hi = shape == Shape::circle ? 0.0 : shape == Shape::square ? 0.25 : 1.0;
  c.schema = AttributeSchema({{"pos", SlotKind::position, 0.0, 1.0, {0.35, 0.65}},
                              {"rot", SlotKind::rotation, 0.0, 1.0, {0.0, rot_hi}},
                              {"size", SlotKind::size, 0.0, 1.0, {0.3, 0.85}},
                              {"intensity", SlotKind::style, 0.0, 1.0, {0.5, 1.0}}});
  Route r;
  r.id = 0;
  c.routes.push_back(std::move(r));
  return c;
}

namespace {

using Complex = std::complex<double>;

// Triangle vertices relative to the patch center as complex numbers, and
// their power sums Σz, Σz², Σz³, which do not depend on vertex order.
std::array<Complex, 3> triangle_vertices(const AttributeVector& a) {
  const double w = a.size.x * 0.5, h = a.size.y * 0.5;
  const Vec2 local[3] = {{0.0, -h}, {-w, h}, {w, h}};
  std::array<Complex, 3> z;
  for (int k = 0; k < 3; ++k) {
    const Vec2 v = a.pos + rotate(local[k], a.rot) - Vec2{0.5, 0.5};
    z[k] = {v.x, v.y};
  }
  return z;
}

// Recovers the vertex set from its power sums (Newton's identities), then
// reads the isosceles parameters off the vertex whose legs are most equal.
void triangle_from_power_sums(Complex p1, Complex p2, Complex p3, AttributeVector& a) {
  const Complex e1 = p1;
  const Complex e2 = (p1 * p1 - p2) / 2.0;
  const Complex e3 = (p1 * p1 * p1 - 3.0 * p1 * p2 + 2.0 * p3) / 6.0;
  Eigen::Matrix3cd companion = Eigen::Matrix3cd::Zero();
  companion(0, 0) = e1;
  companion(0, 1) = -e2;
  companion(0, 2) = e3;
  companion(1, 0) = 1.0;
  companion(2, 1) = 1.0;
  const Eigen::Vector3cd roots = Eigen::ComplexEigenSolver<Eigen::Matrix3cd>(companion, false).eigenvalues();
  int apex = 0;
  double best = 1e300;
  for (int k = 0; k < 3; ++k) {
    const double l1 = std::abs(roots[k] - roots[(k + 1) % 3]);
    const double l2 = std::abs(roots[k] - roots[(k + 2) % 3]);
    const double asym = std::abs(l1 - l2) / std::max(l1 + l2, 1e-12);
    if (asym < best) {
      best = asym;
      apex = k;
    }
  }
  const Complex tip = roots[apex];
  const Complex b1 = roots[(apex + 1) % 3], b2 = roots[(apex + 2) % 3];
  const Complex mid = (b1 + b2) / 2.0;
  const Complex dir = tip - mid;
  a.size = {std::abs(b1 - b2), std::abs(dir)};
  a.rot = wrap_unit(std::arg(dir) / kTwoPi + 0.25);
  const Complex center = (tip + mid) / 2.0;
  a.pos = {center.real() + 0.5, center.imag() + 0.5};
}

}  // namespace

std::size_t encoder_width(Shape shape) {
  switch (shape) {
    case Shape::circle: return 5;
    case Shape::triangle: return 7;
    case Shape::square: return 8;
  }
  return 5;
}

std::vector<double> encoder_targets(Shape shape, const AttributeVector& a) {
  const double intensity = a.style.empty() ? 1.0 : a.style.front();
  switch (shape) {
    case Shape::circle: return {a.pos.x, a.pos.y, a.size.x, a.size.y, intensity};
    case Shape::triangle: {
      const auto z = triangle_vertices(a);
      const Complex p1 = z[0] + z[1] + z[2];
      const Complex p2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
      const Complex p3 = z[0] * z[0] * z[0] + z[1] * z[1] * z[1] + z[2] * z[2] * z[2];
      return {p1.real(), p1.imag(), p2.real(), p2.imag(), p3.real(), p3.imag(), intensity};
    }
    case Shape::square: {
      const double m = 0.5 * (a.size.x + a.size.y);
      const double d = 0.5 * (a.size.x - a.size.y);
      return {a.pos.x,
              a.pos.y,
              m,
              d * std::cos(2.0 * kTwoPi * a.rot),
              d * std::sin(2.0 * kTwoPi * a.rot),
              std::cos(4.0 * kTwoPi * a.rot),
              std::sin(4.0 * kTwoPi * a.rot),
              intensity};
    }
  }
  return {};
}

AttributeVector attributes_from_encoder(Shape shape, std::span<const double> v) {
  if (v.size() != encoder_width(shape)) throw DimensionError("encoder output width mismatch");
  AttributeVector a;
  a.pos = {v[0], v[1]};
  switch (shape) {
    case Shape::circle:
      a.size = {v[2], v[3]};
      a.style = {v[4]};
      break;
    case Shape::triangle:
      triangle_from_power_sums({v[0], v[1]}, {v[2], v[3]}, {v[4], v[5]}, a);
      a.style = {v[6]};
      break;
    case Shape::square: {
      const double m = v[2];
      const double d = std::hypot(v[3], v[4]);
      const double quarter = wrap_unit(std::atan2(v[6], v[5]) / kTwoPi) / 4.0;
      // Direction of the longer side, defined modulo a half turn.
      const double wide = wrap_unit(std::atan2(v[4], v[3]) / kTwoPi) / 2.0;
      const double alt = quarter + 0.25;
      const bool use_alt = cyclic_distance(alt, wide, 0.5) < cyclic_distance(quarter, wide, 0.5);
      a.rot = use_alt ? alt : quarter;
      a.size = {m + d, std::max(m - d, 1e-3)};
      a.style = {v[7]};
      a = canonicalize(a, shape_symmetry(Shape::square));
      break;
    }
  }
  return a;
}

AttributeVector encode_patch(const Capsule& capsule, std::span<const double> patch) {
  if (!capsule.encoder || !capsule.shape) throw Error("capsule '" + capsule.name + "' has no trained encoder");
  const auto out = capsule.encoder->forward(patch);
  AttributeVector a = attributes_from_encoder(*capsule.shape, out);
  a.clamp_unit();
  a.size = {std::max(a.size.x, 1e-3), std::max(a.size.y, 1e-3)};
  return a;
}

PixelLayer expected_patch(const Capsule& capsule, const AttributeVector& attrs, int width, int height) {
  if (!capsule.shape) throw Error("capsule '" + capsule.name + "' is not a primitive");
  return draw_primitive(PrimitiveParams::from_attributes(*capsule.shape, attrs), width, height);
}

double route_rotation(const Route& route, std::span<const AttributeVector> parts, std::span<const SlotInfo> slots) {
  if (parts.empty()) throw DimensionError("route needs parts");
  if (route.frame.a == route.frame.b || parts.size() == 1) {
    const std::size_t i = std::min(route.frame.a, parts.size() - 1);
    return slots[i].symmetry.continuous() ? 0.0 : wrap_unit(parts[i].rot - route.frame.offset);
  }
  return reference_rotation(parts[route.frame.a].pos, parts[route.frame.b].pos, route.frame.offset);
}

std::size_t decoder_input_width(const Capsule& capsule) {
  return embedded_width(capsule.schema.style_count(), capsule.symmetry);
}

std::size_t decoder_output_width(std::span<const SlotInfo> slots) {
  std::size_t n = 0;
  for (const auto& s : slots) n += embedded_width(s.style_names.size(), s.symmetry);
  return n;
}

std::vector<double> decoder_input(const Capsule& capsule, const AttributeVector& parent) {
  std::vector<double> out;
  embed_into(parent, capsule.symmetry, out);
  return out;
}

std::vector<double> decoder_target(std::span<const AttributeVector> parts, std::span<const SlotInfo> slots) {
  return parts_embedding(parts, slots);
}

std::vector<double> parts_embedding(std::span<const AttributeVector> parts, std::span<const SlotInfo> slots) {
  if (parts.size() != slots.size()) throw DimensionError("route binding does not match its slots");
  std::vector<double> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].style.size() != slots[i].style_names.size())
      throw DimensionError("part attribute width does not match its capsule");
    embed_into(parts[i], slots[i].symmetry, out);
  }
  return out;
}

AttributeVector route_forward(const Capsule& capsule, const Route& route, std::span<const AttributeVector> parts,
                              std::span<const SlotInfo> slots) {
  if (parts.size() != route.parts.size() || slots.size() != route.parts.size())
    throw DimensionError("route '" + capsule.name + "' expects " + std::to_string(route.parts.size()) + " parts");
  std::vector<GammaPart> views;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].style.size() != slots[i].style_names.size())
      throw DimensionError("part attribute width does not match its capsule");
    views.push_back({&parts[i], slots[i].style_names, slots[i].symmetry.continuous()});
  }
  const auto names = capsule.style_names();
  AttributeVector out = gamma_semantic(views, names, route_rotation(route, parts, slots));
  if (!route.style_encoders.empty()) {
    const auto emb = parts_embedding(parts, slots);
    for (const auto& [name, model] : route.style_encoders) {
      if (auto idx = capsule.schema.style_index(name)) out.style[*idx] = model.forward(emb).front();
    }
  }
  out.clamp_unit();
  return out;
}

std::vector<AttributeVector> expected_inputs(const Capsule& capsule, const Route& route, const AttributeVector& parent,
                                             std::span<const SlotInfo> slots) {
  if (!route.decoder) throw Error("route " + std::to_string(route.id) + " of '" + capsule.name + "' has no decoder");
  if (parent.dims() != capsule.schema.dims()) throw DimensionError("parent attributes do not match capsule schema");
  const auto out = route.decoder->forward(decoder_input(capsule, parent));
  if (out.size() != decoder_output_width(slots)) throw DimensionError("decoder output does not match route slots");
  std::vector<AttributeVector> parts;
  std::size_t offset = 0;
  for (const auto& s : slots) {
    const std::size_t w = embedded_width(s.style_names.size(), s.symmetry);
    AttributeVector a = unembed(std::span<const double>(out).subspan(offset, w), s.style_names.size(), s.symmetry);
    for (double* v : {&a.pos.x, &a.pos.y, &a.size.x, &a.size.y})
      if (!std::isfinite(*v)) *v = 0.0;
    for (double& v : a.style)
      if (!std::isfinite(v)) v = 0.0;
    if (!std::isfinite(a.rot)) a.rot = 0.0;
    a.clamp_unit();
    parts.push_back(std::move(a));
    offset += w;
  }
  return parts;
}

// ---------------------------------------------------------------- memory

bool operator==(const ObservationEntry& a, const ObservationEntry& b) {
  return a.id == b.id && a.pass == b.pass && a.node == b.node && a.capsule == b.capsule && a.route == b.route &&
         a.p == b.p && a.attrs == b.attrs && a.parts == b.parts;
}

json ObservationEntry::to_json() const {
  return {{"id", id},   {"pass", pass}, {"node", node},   {"capsule", capsule},
          {"route", route}, {"p", p},       {"attrs", attrs}, {"parts", parts}};
}

ObservationEntry ObservationEntry::from_json(const json& j) {
  ObservationEntry e;
  e.id = j.at("id").get<std::uint64_t>();
  e.pass = j.at("pass").get<std::uint64_t>();
  e.node = j.value("node", "");
  e.capsule = j.at("capsule").get<std::size_t>();
  e.route = j.at("route").get<std::size_t>();
  e.p = j.at("p").get<double>();
  e.attrs = j.at("attrs").get<std::vector<double>>();
  e.parts = j.at("parts").get<std::vector<std::uint64_t>>();
  return e;
}

std::uint64_t MemoryStore::append(ObservationEntry entry) {
  if (!(entry.p >= 0.0 && entry.p <= 1.0)) throw DataError("observation p outside [0,1]");
  for (auto part : entry.parts)
    if (part >= entries_.size()) throw DataError("observation references unknown part entry");
  entry.id = entries_.size();
  for (std::size_t slot = 0; slot < entry.parts.size(); ++slot) {
    auto& t = tallies_[{entry.capsule, entry.route, slot}];
    t.sum += entries_[entry.parts[slot]].p;
    ++t.count;
  }
  entries_.push_back(std::move(entry));
  return entries_.back().id;
}

const ObservationEntry& MemoryStore::entry(std::uint64_t id) const {
  if (id >= entries_.size()) throw DataError("unknown memory entry " + std::to_string(id));
  return entries_[id];
}

const ObservationEntry* MemoryStore::find_node(std::uint64_t pass, const std::string& node) const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
    if (it->pass == pass && it->node == node) return &*it;
  return nullptr;
}

std::vector<const ObservationEntry*> MemoryStore::for_route(std::size_t capsule, std::size_t route) const {
  std::vector<const ObservationEntry*> out;
  for (const auto& e : entries_)
    if (e.capsule == capsule && e.route == route) out.push_back(&e);
  return out;
}

std::vector<const ObservationEntry*> MemoryStore::for_capsule(std::size_t capsule) const {
  std::vector<const ObservationEntry*> out;
  for (const auto& e : entries_)
    if (e.capsule == capsule) out.push_back(&e);
  return out;
}

std::optional<double> MemoryStore::p_mean(std::size_t capsule, std::size_t route, std::size_t slot) const {
  auto it = tallies_.find({capsule, route, slot});
  if (it == tallies_.end() || it->second.count == 0) return std::nullopt;
  return it->second.sum / static_cast<double>(it->second.count);
}

std::optional<double> MemoryStore::recompute_p_mean(std::size_t capsule, std::size_t route, std::size_t slot) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& e : entries_) {
    if (e.capsule != capsule || e.route != route || slot >= e.parts.size()) continue;
    sum += entries_[e.parts[slot]].p;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

void MemoryStore::extend_attributes(std::size_t capsule, double value) {
  for (auto& e : entries_)
    if (e.capsule == capsule) e.attrs.push_back(value);
}

void MemoryStore::set_attribute(std::uint64_t id, std::size_t slot, double value) {
  if (id >= entries_.size() || slot >= entries_[id].attrs.size()) throw DataError("set_attribute: out of range");
  entries_[id].attrs[slot] = value;
}

std::string MemoryStore::to_jsonl() const {
  std::string out;
  for (const auto& e : entries_) {
    out += e.to_json().dump();
    out += '\n';
  }
  return out;
}

MemoryStore MemoryStore::from_jsonl(const std::string& text) {
  MemoryStore m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ObservationEntry e;
    try {
      e = ObservationEntry::from_json(json::parse(line));
    } catch (const json::exception& ex) {
      throw DataError("memory line " + std::to_string(lineno) + ": " + ex.what());
    }
    const auto expected = m.entries_.size();
    if (e.id != expected) throw DataError("memory line " + std::to_string(lineno) + ": ids out of sequence");
    m.append(std::move(e));
  }
  return m;
}

void MemoryStore::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_jsonl();
}

MemoryStore MemoryStore::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::stringstream ss;
  ss << in.rdbuf();
  return from_jsonl(ss.str());
}

}  // namespace scenecaps
