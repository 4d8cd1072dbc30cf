#include "scenecaps/train.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace scenecaps {

namespace {

Eigen::VectorXd as_column(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
  return {m.col(c).data(), m.col(c).data() + m.rows()};
}

Dataset assemble(const std::vector<std::vector<double>>& inputs, const std::vector<std::vector<double>>& targets) {
  Dataset d;
  if (inputs.empty()) return d;
  d.inputs.resize(static_cast<Eigen::Index>(inputs.front().size()), static_cast<Eigen::Index>(inputs.size()));
  d.targets.resize(static_cast<Eigen::Index>(targets.front().size()), static_cast<Eigen::Index>(targets.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    d.inputs.col(static_cast<Eigen::Index>(i)) = as_column(inputs[i]);
    d.targets.col(static_cast<Eigen::Index>(i)) = as_column(targets[i]);
  }
  return d;
}

bool is_validation(std::size_t i) { return i % 10 == 9; }

}  // namespace

// ---------------------------------------------------------------- primitives

PrimitiveDataset synth_primitive_dataset(const Capsule& capsule, std::size_t n, std::mt19937_64& rng,
                                         const EffectsConfig& effects, int patch_size) {
  if (capsule.kind != CapsuleKind::primitive || !capsule.shape)
    throw DataError("synth_primitive_dataset: '" + capsule.name + "' is not a primitive capsule");
  if (n == 0) throw DataError("synth_primitive_dataset: n must be at least 1");
  if (patch_size < 4) throw DimensionError("synth_primitive_dataset: patch too small");
  const std::size_t dims = capsule.schema.dims();
  const std::size_t px = static_cast<std::size_t>(patch_size) * static_cast<std::size_t>(patch_size);
  PrimitiveDataset out;
  out.data.inputs.resize(static_cast<Eigen::Index>(px), static_cast<Eigen::Index>(n));
  out.data.targets.resize(static_cast<Eigen::Index>(encoder_width(*capsule.shape)), static_cast<Eigen::Index>(n));
  out.attrs.reserve(n);
  std::vector<double> flat(dims);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dims; ++k) flat[k] = capsule.schema.spec_for_slot(k).quantile(uniform01(rng));
    AttributeVector a = AttributeVector::from_flat(flat);
    PixelLayer layer = draw_primitive(PrimitiveParams::from_attributes(*capsule.shape, a), patch_size, patch_size);
    layer = apply_effects(layer, rng, effects);
    out.data.inputs.col(static_cast<Eigen::Index>(i)) = as_column(layer.values());
    out.data.targets.col(static_cast<Eigen::Index>(i)) = as_column(encoder_targets(*capsule.shape, a));
    out.attrs.push_back(std::move(a));
  }
  return out;
}

std::vector<double> primitive_mae(const Capsule& capsule, const PrimitiveDataset& data) {
  std::vector<double> sum(capsule.schema.dims(), 0.0);
  if (data.attrs.empty()) return sum;
  for (std::size_t i = 0; i < data.attrs.size(); ++i) {
    const auto est = encode_patch(capsule, column(data.data.inputs, static_cast<Eigen::Index>(i)));
    const auto err = attribute_errors(est, data.attrs[i], capsule.symmetry);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += err[k];
  }
  for (double& s : sum) s /= static_cast<double>(data.attrs.size());
  return sum;
}

PrimitiveTrainConfig default_primitive_config(Shape shape) {
  PrimitiveTrainConfig c;
  switch (shape) {
    case Shape::circle: c.train.steps = 5000; break;
    case Shape::square: c.train.steps = 5000; break;
    case Shape::triangle:
      c.conv.stages = {{16, 5}, {32, 3}};
      c.conv.hidden = 128;
      c.train.steps = 15000;
      break;
  }
  return c;
}

PrimitiveReport train_primitive(Capsule& capsule, const PrimitiveDataset& train_set,
                                const PrimitiveDataset& validation_set, const PrimitiveTrainConfig& config) {
  if (!capsule.shape) throw DataError("train_primitive: '" + capsule.name + "' is not a primitive capsule");
  ConvConfig conv = config.conv;
  conv.patch = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(train_set.data.inputs.rows()))));
  conv.outputs = encoder_width(*capsule.shape);
  ConvModel model(conv, config.train.seed);
  PrimitiveReport report;
  report.training = train(model, train_set.data, config.train);
  capsule.encoder = std::move(model);
  report.slots = capsule.schema.slot_names();
  report.mae = primitive_mae(capsule, validation_set.attrs.empty() ? train_set : validation_set);
  report.max_mae = *std::max_element(report.mae.begin(), report.mae.end());
  report.passed = report.max_mae <= config.mae_bound;
  return report;
}

// ---------------------------------------------------------------- augmentation

void AugmentConfig::validate() const {
  if (!(scale_lo > 0.0 && scale_hi >= scale_lo)) throw DataError("augment: scale range must be positive");
  if (!(epsilon > 0.0 && epsilon <= 0.2)) throw DataError("augment: epsilon must lie in (0, 0.2]");
  if (!(margin >= 0.0 && margin < 0.5)) throw DataError("augment: margin must lie in [0, 0.5)");
}

RouteSample transform_sample(const RouteSample& sample, Vec2 center, double turns, double scale, Vec2 target) {
  RouteSample out = sample;
  for (auto& p : out.parts) {
    p.pos = target + rotate(p.pos - center, turns) * scale;
    p.rot = wrap_unit(p.rot + turns);
    p.size = p.size * scale;
  }
  return out;
}

std::vector<std::string> unused_styles(std::span<const RouteSample> samples, std::span<const SlotInfo> slots,
                                       double epsilon) {
  std::map<std::string, bool> used;
  for (const auto& s : slots)
    for (const auto& n : s.style_names) used.emplace(n, false);
  for (const auto& sample : samples)
    for (std::size_t i = 0; i < slots.size() && i < sample.parts.size(); ++i)
      for (std::size_t k = 0; k < slots[i].style_names.size(); ++k)
        if (sample.parts[i].style[k] > epsilon) used[slots[i].style_names[k]] = true;
  std::vector<std::string> out;
  for (const auto& [name, u] : used)
    if (!u) out.push_back(name);
  return out;
}

namespace {

AttributeVector label_of(const Capsule& capsule, const Route& route, std::span<const SlotInfo> slots,
                         const RouteSample& sample) {
  AttributeVector label = route_forward(capsule, route, sample.parts, slots);
  for (const auto& [name, value] : sample.learned)
    if (auto idx = capsule.schema.style_index(name)) label.style[*idx] = std::clamp(value, 0.0, 1.0);
  return label;
}

std::pair<Vec2, Vec2> sample_box(const RouteSample& s) {
  Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
  for (const auto& p : s.parts) {
    const auto [a, b] = attribute_box(p);
    lo = {std::min(lo.x, a.x), std::min(lo.y, a.y)};
    hi = {std::max(hi.x, b.x), std::max(hi.y, b.y)};
  }
  return {lo, hi};
}

}  // namespace

AugmentedSet augment(const Capsule& capsule, const Route& route, std::span<const SlotInfo> slots,
                     std::span<const RouteSample> samples, const AugmentConfig& config, std::mt19937_64& rng) {
  config.validate();
  if (samples.empty()) throw DataError("augment: no samples");
  AugmentedSet out;
  for (const auto& s : samples) {
    out.samples.push_back(s);
    out.labels.push_back(label_of(capsule, route, slots, s));
  }
  const auto unused = unused_styles(samples, slots, config.epsilon);
  for (std::size_t i = 0; i < config.count; ++i) {
    RouteSample s = samples[i % samples.size()];
    for (const auto& name : unused) {
      const double value = uniform01(rng) < config.style_probability ? uniform01(rng) : 0.0;
      for (std::size_t k = 0; k < slots.size(); ++k) {
        const auto& names = slots[k].style_names;
        const auto it = std::find(names.begin(), names.end(), name);
        if (it != names.end()) s.parts[k].style[static_cast<std::size_t>(it - names.begin())] = value;
      }
    }
    const Vec2 center = out.labels[i % samples.size()].pos;
    const double turns = uniform01(rng);
    double scale = uniform(rng, config.scale_lo, config.scale_hi);
    RouteSample moved = transform_sample(s, center, turns, scale, {0.0, 0.0});
    auto [lo, hi] = sample_box(moved);
    const double room = 1.0 - 2.0 * config.margin;
    const double extent = std::max(hi.x - lo.x, hi.y - lo.y);
    if (extent > room && extent > 0.0) {
      scale *= room / extent;
      moved = transform_sample(s, center, turns, scale, {0.0, 0.0});
      std::tie(lo, hi) = sample_box(moved);
    }
    const double tx = uniform(rng, config.margin - lo.x, std::max(config.margin - lo.x, 1.0 - config.margin - hi.x));
    const double ty = uniform(rng, config.margin - lo.y, std::max(config.margin - lo.y, 1.0 - config.margin - hi.y));
    moved = transform_sample(s, center, turns, scale, {tx, ty});
    out.labels.push_back(label_of(capsule, route, slots, moved));
    out.samples.push_back(std::move(moved));
  }
  return out;
}

std::vector<RouteSample> route_samples(const CapsuleNetwork& network, std::size_t capsule, std::size_t route) {
  const Capsule& cap = network.capsule(capsule);
  if (route >= cap.routes.size()) throw DataError("capsule '" + cap.name + "' has no route " + std::to_string(route));
  const Route& r = cap.routes[route];
  std::set<std::string> carried;
  for (auto part : r.parts)
    for (const auto& n : network.capsule(part).style_names()) carried.insert(n);
  std::vector<RouteSample> out;
  for (const auto* e : network.memory.for_route(capsule, route)) {
    if (e->parts.size() != r.parts.size()) continue;
    RouteSample s;
    for (auto id : e->parts) s.parts.push_back(AttributeVector::from_flat(network.memory.entry(id).attrs));
    const auto styles = cap.style_names();
    for (std::size_t k = 0; k < styles.size(); ++k)
      if (!carried.count(styles[k]) && 5 + k < e->attrs.size()) s.learned[styles[k]] = e->attrs[5 + k];
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- semantic routes

std::vector<double> round_trip_errors(const Capsule& capsule, const Route& route, std::span<const SlotInfo> slots,
                                      std::span<const AttributeVector> parts) {
  const AttributeVector parent = route_forward(capsule, route, parts, slots);
  const auto expected = expected_inputs(capsule, route, parent, slots);
  std::vector<double> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto e = attribute_errors(expected[i], parts[i], slots[i].symmetry);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

double binding_spread(std::span<const AttributeVector> parts) {
  if (parts.size() < 2) return 0.0;
  double far = 0.0, mean_size = 0.0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    mean_size += parts[i].size.norm() / static_cast<double>(parts.size());
    for (std::size_t j = i + 1; j < parts.size(); ++j) far = std::max(far, (parts[i].pos - parts[j].pos).norm());
  }
  return mean_size > 0.0 ? far / mean_size : 0.0;
}

RouteFrame choose_frame(std::span<const AttributeVector> parts, std::span<const SlotInfo> slots) {
  if (parts.empty()) throw DimensionError("choose_frame: no parts");
  std::size_t a = 0, b = 0;
  double far = 1e-6;
  for (std::size_t i = 0; i < parts.size(); ++i)
    for (std::size_t j = i + 1; j < parts.size(); ++j) {
      const double d = (parts[i].pos - parts[j].pos).norm();
      if (d > far + 1e-12) {
        far = d;
        a = i;
        b = j;
      }
    }
  if (a == b) return {0, 0, slots[0].symmetry.continuous() ? 0.0 : parts[0].rot};
  return {a, b, reference_rotation(parts[a].pos, parts[b].pos, 0.0)};
}

std::size_t add_route(CapsuleNetwork& network, std::size_t capsule, std::vector<std::size_t> parts,
                      std::span<const AttributeVector> example) {
  if (parts.empty()) throw DataError("a route needs at least one part");
  if (example.size() != parts.size()) throw DimensionError("route example does not match its parts");
  for (auto p : parts) {
    if (p == capsule) throw DataError("a capsule cannot be its own part");
    (void)network.capsule(p);
  }
  Route r;
  r.parts = std::move(parts);
  const auto slots = network.slots(r);
  for (std::size_t i = 0; i < example.size(); ++i)
    if (example[i].style.size() != slots[i].style_names.size())
      throw DimensionError("route example part " + std::to_string(i) + " has the wrong attribute width");
  Capsule& cap = network.capsule(capsule);
  if (cap.kind != CapsuleKind::semantic) throw DataError("routes can only be added to semantic capsules");
  r.id = cap.routes.size();
  r.frame = choose_frame(example, slots);
  r.spread = binding_spread(example);
  cap.routes.push_back(std::move(r));
  if (network.level(capsule) > 64) {
    cap.routes.pop_back();
    throw DataError("route would create a cycle");
  }
  return cap.routes.back().id;
}

namespace {

struct RouteTraining {
  SemanticReport report;
  AugmentedSet set;
};

std::uint64_t route_seed(std::uint64_t base, std::size_t capsule, std::size_t route) {
  return base * 1000003u + capsule * 7919u + route * 104729u;
}

RouteTraining train_route(CapsuleNetwork& network, std::size_t capsule, std::size_t route,
                          const SemanticTrainConfig& config, std::span<const RouteSample> extra) {
  auto samples = route_samples(network, capsule, route);
  samples.insert(samples.end(), extra.begin(), extra.end());
  if (samples.empty())
    throw DataError("no observations of '" + network.capsule(capsule).name + "' route " + std::to_string(route));
  Capsule& cap = network.capsule(capsule);
  Route& r = cap.routes.at(route);
  const auto slots = network.slots(r);
  std::mt19937_64 rng(route_seed(config.seed, capsule, route));
  RouteTraining out;
  out.set = augment(cap, r, slots, samples, config.augment, rng);

  std::vector<std::vector<double>> in, target;
  for (std::size_t i = 0; i < out.set.samples.size(); ++i) {
    if (is_validation(i)) continue;
    in.push_back(decoder_input(cap, out.set.labels[i]));
    target.push_back(decoder_target(out.set.samples[i].parts, slots));
  }
  const std::size_t h = config.hidden;
  DenseModel g({decoder_input_width(cap), h, h, h, decoder_output_width(slots)},
               route_seed(config.train.seed, capsule, route));
  out.report.training = train(g, assemble(in, target), config.train);
  r.decoder = std::move(g);

  double spread = 0.0;
  for (const auto& s : samples) spread = std::max(spread, binding_spread(s.parts));
  r.spread = spread;

  // Held-out round trip on the validation split (all samples if there is none).
  std::vector<double> sum;
  std::size_t n = 0;
  for (std::size_t i = 0; i < out.set.samples.size(); ++i) {
    if (!is_validation(i) && out.set.samples.size() >= 10) continue;
    const auto parent = out.set.labels[i];
    const auto expected = expected_inputs(cap, r, parent, slots);
    std::vector<double> errs;
    for (std::size_t k = 0; k < expected.size(); ++k) {
      const auto e = attribute_errors(expected[k], out.set.samples[i].parts[k], slots[k].symmetry);
      errs.insert(errs.end(), e.begin(), e.end());
    }
    if (sum.empty()) sum.assign(errs.size(), 0.0);
    for (std::size_t k = 0; k < errs.size(); ++k) sum[k] += errs[k];
    ++n;
  }
  for (double& s : sum) s /= static_cast<double>(std::max<std::size_t>(n, 1));
  out.report.slot_mae = sum;
  out.report.max_mae = sum.empty() ? 0.0 : *std::max_element(sum.begin(), sum.end());
  out.report.passed = out.report.max_mae <= config.mae_bound;
  out.report.samples = samples.size();
  return out;
}

// γ_new for one learned style: regress the style from the parts that the
// freshly trained decoder produces for each augmented parent.
double fit_style_encoder(CapsuleNetwork& network, std::size_t capsule, std::size_t route, const std::string& name,
                         const AugmentedSet& set, const SemanticTrainConfig& config) {
  Capsule& cap = network.capsule(capsule);
  Route& r = cap.routes.at(route);
  const auto slots = network.slots(r);
  const std::size_t idx = *cap.schema.style_index(name);
  std::vector<std::vector<double>> in, target;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    if (is_validation(i)) continue;
    const auto decoded = expected_inputs(cap, r, set.labels[i], slots);
    in.push_back(parts_embedding(decoded, slots));
    target.push_back({set.labels[i].style[idx]});
  }
  const std::size_t h = config.hidden;
  DenseModel model({in.front().size(), h, h, h, 1}, route_seed(config.train.seed + 17, capsule, route));
  TrainConfig tc = config.train;
  tc.steps = std::max<std::size_t>(tc.steps / 2, 1);
  train(model, assemble(in, target), tc);
  r.style_encoders.insert_or_assign(name, model);
  double err = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    if (!is_validation(i) && set.samples.size() >= 10) continue;
    err += std::abs(model.forward(parts_embedding(set.samples[i].parts, slots)).front() - set.labels[i].style[idx]);
    ++n;
  }
  return n ? err / static_cast<double>(n) : 0.0;
}

std::vector<std::string> learned_styles(const CapsuleNetwork& network, const Capsule& cap, const Route& r) {
  std::set<std::string> carried;
  for (auto part : r.parts)
    for (const auto& n : network.capsule(part).style_names()) carried.insert(n);
  std::vector<std::string> out;
  for (const auto& n : cap.style_names())
    if (!carried.count(n)) out.push_back(n);
  return out;
}

std::vector<std::vector<AttributeVector>> memory_reconstructions(const CapsuleNetwork& network, std::size_t capsule,
                                                                 std::size_t route) {
  const Capsule& cap = network.capsule(capsule);
  const Route& r = cap.routes[route];
  std::vector<std::vector<AttributeVector>> out;
  if (!r.decoder) return out;
  const auto slots = network.slots(r);
  for (const auto& s : route_samples(network, capsule, route)) {
    out.push_back(expected_inputs(cap, r, route_forward(cap, r, s.parts, slots), slots));
  }
  return out;
}

}  // namespace

SemanticReport train_semantic(CapsuleNetwork& network, std::size_t capsule, std::size_t route,
                              const SemanticTrainConfig& config, std::span<const RouteSample> extra) {
  if (network.capsule(capsule).kind != CapsuleKind::semantic)
    throw DataError("train_semantic: '" + network.capsule(capsule).name + "' is a primitive capsule");
  auto trained = train_route(network, capsule, route, config, extra);
  const Capsule& cap = network.capsule(capsule);
  for (const auto& name : learned_styles(network, cap, cap.routes[route]))
    fit_style_encoder(network, capsule, route, name, trained.set, config);
  return trained.report;
}

AttributeReport add_attribute(CapsuleNetwork& network, std::size_t capsule, const std::string& name,
                              std::span<const std::uint64_t> observed, double observed_value,
                              const SemanticTrainConfig& config) {
  Capsule& cap = network.capsule(capsule);
  if (cap.kind != CapsuleKind::semantic) throw DataError("attributes can only be added to semantic capsules");
  if (name.empty()) throw DataError("attribute name must not be empty");
  if (cap.schema.has_style(name)) throw DataError("capsule '" + cap.name + "' already has attribute '" + name + "'");
  for (auto id : observed)
    if (network.memory.entry(id).capsule != capsule) throw DataError("observation is not of capsule '" + cap.name + "'");

  std::vector<std::vector<std::vector<AttributeVector>>> before;
  for (std::size_t r = 0; r < cap.routes.size(); ++r) before.push_back(memory_reconstructions(network, capsule, r));

  cap.schema.add_style({name, SlotKind::style, 0.0, 1.0, {0.0, 1.0}});
  network.memory.extend_attributes(capsule, 0.0);
  const std::size_t slot = 4 + cap.schema.style_count();
  for (auto id : observed) network.memory.set_attribute(id, slot, std::clamp(observed_value, 0.0, 1.0));

  AttributeReport report;
  for (std::size_t r = 0; r < cap.routes.size(); ++r) {
    if (route_samples(network, capsule, r).empty()) continue;
    auto trained = train_route(network, capsule, r, config, {});
    report.routes.push_back(trained.report);
    for (const auto& n : learned_styles(network, network.capsule(capsule), network.capsule(capsule).routes[r])) {
      const double mae = fit_style_encoder(network, capsule, r, n, trained.set, config);
      if (n == name) report.gamma_new_mae.push_back(mae);
    }
    const auto after = memory_reconstructions(network, capsule, r);
    const auto slots = network.slots(network.capsule(capsule).routes[r]);
    for (std::size_t s = 0; s < std::min(after.size(), before[r].size()); ++s)
      for (std::size_t k = 0; k < after[s].size(); ++k) {
        const auto e = attribute_errors(after[s][k], before[r][s][k], slots[k].symmetry);
        report.old_drift = std::max(report.old_drift, *std::max_element(e.begin(), e.end()));
      }
  }
  return report;
}

std::vector<std::size_t> inherit_attribute(CapsuleNetwork& network, std::size_t source, const std::string& name,
                                           const SemanticTrainConfig& config) {
  const auto spec_idx = network.capsule(source).schema.style_index(name);
  if (!spec_idx) throw DataError("capsule '" + network.capsule(source).name + "' has no attribute '" + name + "'");
  const AttributeSpec spec = network.capsule(source).schema.styles()[*spec_idx];
  std::set<std::size_t> changed{source};
  std::vector<std::size_t> out;
  for (auto id : network.topological_order()) {
    if (changed.count(id)) continue;
    Capsule& cap = network.capsule(id);
    bool affected = false;
    for (const auto& r : cap.routes)
      for (auto p : r.parts) affected = affected || changed.count(p) > 0;
    if (!affected) continue;
    // Part layouts changed, so learned style encoders no longer fit their input.
    for (auto& r : cap.routes) r.style_encoders.clear();
    if (!cap.schema.has_style(name)) {
      cap.schema.add_style(spec);
      network.memory.extend_attributes(id, 0.0);
      // Existing observations get the closed-form value from their parts.
      const std::size_t slot = 4 + cap.schema.style_count();
      const std::size_t idx = *cap.schema.style_index(name);
      for (std::size_t r = 0; r < cap.routes.size(); ++r) {
        const auto slots = network.slots(cap.routes[r]);
        for (const auto* e : network.memory.for_route(id, r)) {
          std::vector<AttributeVector> parts;
          for (auto pid : e->parts) parts.push_back(AttributeVector::from_flat(network.memory.entry(pid).attrs));
          const double v = route_forward(cap, cap.routes[r], parts, slots).style[idx];
          network.memory.set_attribute(e->id, slot, v);
        }
      }
    }
    for (std::size_t r = 0; r < cap.routes.size(); ++r) {
      if (route_samples(network, id, r).empty()) {
        cap.routes[r].decoder.reset();
        cap.routes[r].style_encoders.clear();
        continue;
      }
      train_semantic(network, id, r, config);
    }
    changed.insert(id);
    out.push_back(id);
  }
  return out;
}

}  // namespace scenecaps
