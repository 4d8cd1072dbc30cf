#include "scenecaps/attributes.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace scenecaps {

std::string_view slot_kind_name(SlotKind kind) {
  switch (kind) {
    case SlotKind::position: return "position";
    case SlotKind::rotation: return "rotation";
    case SlotKind::size: return "size";
    case SlotKind::style: return "style";
  }
  return "style";
}

SlotKind parse_slot_kind(std::string_view name) {
  if (name == "position" || name == "pos") return SlotKind::position;
  if (name == "rotation" || name == "rot") return SlotKind::rotation;
  if (name == "size") return SlotKind::size;
  if (name == "style") return SlotKind::style;
  throw DataError("unknown attribute slot kind '" + std::string(name) + "'");
}

namespace {

AttributeSpec default_geometry(SlotKind kind) {
  switch (kind) {
    case SlotKind::position: return {"pos", kind, 0.0, 1.0, {}};
    case SlotKind::rotation: return {"rot", kind, 0.0, 1.0, {}};
    default: return {"size", SlotKind::size, 0.0, 1.0, {}};
  }
}

}  // namespace

AttributeSchema::AttributeSchema()
    : specs_{default_geometry(SlotKind::position), default_geometry(SlotKind::rotation),
             default_geometry(SlotKind::size)} {}

AttributeSchema::AttributeSchema(const std::vector<AttributeSpec>& specs) : AttributeSchema() {
  bool seen[3] = {false, false, false};
  for (const auto& s : specs) {
    if (s.lo > s.hi) throw DataError("attribute '" + s.name + "' has an empty range");
    if (s.slot == SlotKind::style) {
      add_style(s);
      continue;
    }
    int idx = s.slot == SlotKind::position ? 0 : s.slot == SlotKind::rotation ? 1 : 2;
    if (seen[idx]) throw DataError("attribute slot '" + std::string(slot_kind_name(s.slot)) + "' declared twice");
    seen[idx] = true;
    specs_[idx] = s;
    if (specs_[idx].name.empty()) specs_[idx].name = default_geometry(s.slot).name;
  }
}

AttributeSchema AttributeSchema::with_styles(const std::vector<std::string>& names) {
  AttributeSchema schema;
  for (const auto& n : names) schema.add_style({n, SlotKind::style, 0.0, 1.0, {}});
  return schema;
}

std::vector<std::string> AttributeSchema::slot_names() const {
  std::vector<std::string> names{"pos.x", "pos.y", "rot", "size.w", "size.h"};
  for (const auto& s : styles()) names.push_back(s.name);
  return names;
}

std::optional<std::size_t> AttributeSchema::style_index(std::string_view name) const {
  auto st = styles();
  for (std::size_t i = 0; i < st.size(); ++i)
    if (st[i].name == name) return i;
  return std::nullopt;
}

void AttributeSchema::add_style(AttributeSpec spec) {
  if (spec.name.empty()) throw DataError("style attribute needs a name");
  static const char* reserved[] = {"pos", "rot", "size", "pos.x", "pos.y", "size.w", "size.h"};
  for (const char* r : reserved)
    if (spec.name == r) throw DataError("attribute name '" + spec.name + "' is reserved");
  if (has_style(spec.name)) throw DataError("attribute '" + spec.name + "' declared twice");
  spec.slot = SlotKind::style;
  specs_.push_back(std::move(spec));
}

const AttributeSpec& AttributeSchema::spec_for_slot(std::size_t i) const {
  if (i < 2) return specs_[0];
  if (i == 2) return specs_[1];
  if (i < 5) return specs_[2];
  return specs_.at(i - 2);
}

bool operator==(const AttributeSpec& a, const AttributeSpec& b) {
  return a.name == b.name && a.slot == b.slot && a.lo == b.lo && a.hi == b.hi && a.quantile.lo == b.quantile.lo &&
         a.quantile.hi == b.quantile.hi;
}

bool operator==(const AttributeSchema& a, const AttributeSchema& b) { return a.specs_ == b.specs_; }

std::vector<double> AttributeVector::flat() const {
  std::vector<double> out{pos.x, pos.y, rot, size.x, size.y};
  out.insert(out.end(), style.begin(), style.end());
  return out;
}

AttributeVector AttributeVector::from_flat(std::span<const double> v) {
  if (v.size() < 5) throw DimensionError("attribute vector needs at least 5 slots");
  AttributeVector a;
  a.pos = {v[0], v[1]};
  a.rot = v[2];
  a.size = {v[3], v[4]};
  a.style.assign(v.begin() + 5, v.end());
  return a;
}

void AttributeVector::clamp_unit() {
  auto c = [](double& x) { x = std::clamp(x, 0.0, 1.0); };
  c(pos.x);
  c(pos.y);
  rot = wrap_unit(rot);
  c(size.x);
  c(size.y);
  for (double& s : style) c(s);
}

std::vector<AttributeVector> rotational_equivalents(const AttributeVector& a, RotationalSymmetry sym) {
  if (sym.continuous() || sym.period <= 1) return {a};
  std::vector<AttributeVector> out;
  out.reserve(sym.period);
  for (int k = 0; k < sym.period; ++k) {
    AttributeVector e = a;
    e.rot = wrap_unit(a.rot + static_cast<double>(k) / sym.period);
    if (sym.swap_size_on_quarter && (k % 2 == 1)) std::swap(e.size.x, e.size.y);
    out.push_back(std::move(e));
  }
  return out;
}

AttributeVector canonicalize(const AttributeVector& a, RotationalSymmetry sym) {
  AttributeVector c = a;
  if (sym.continuous()) {
    c.rot = 0.0;
    return c;
  }
  c.rot = wrap_unit(a.rot);
  if (sym.period <= 1) return c;
  const double step = 1.0 / sym.period;
  int k = static_cast<int>(std::floor(c.rot / step));
  k = std::clamp(k, 0, sym.period - 1);
  c.rot = std::max(0.0, c.rot - k * step);
  if (c.rot >= step) c.rot = 0.0;
  if (sym.swap_size_on_quarter && (k % 2 == 1)) std::swap(c.size.x, c.size.y);
  return c;
}

std::vector<double> attribute_errors(const AttributeVector& estimate, const AttributeVector& truth,
                                     RotationalSymmetry sym) {
  if (estimate.dims() != truth.dims()) throw DimensionError("attribute_errors: dimension mismatch");
  std::vector<double> best;
  double best_sum = std::numeric_limits<double>::infinity();
  for (const auto& t : rotational_equivalents(truth, sym)) {
    std::vector<double> e(estimate.dims());
    e[0] = std::abs(estimate.pos.x - t.pos.x);
    e[1] = std::abs(estimate.pos.y - t.pos.y);
    e[2] = sym.continuous() ? 0.0 : cyclic_distance(estimate.rot, t.rot);
    e[3] = std::abs(estimate.size.x - t.size.x);
    e[4] = std::abs(estimate.size.y - t.size.y);
    for (std::size_t i = 0; i < t.style.size(); ++i) e[5 + i] = std::abs(estimate.style[i] - t.style[i]);
    double sum = std::accumulate(e.begin(), e.end(), 0.0);
    if (sum < best_sum) {
      best_sum = sum;
      best = std::move(e);
    }
  }
  return best;
}

std::size_t embedded_width(std::size_t style_count, RotationalSymmetry sym) {
  return 4 + (sym.continuous() ? 0 : 2) + style_count;
}

void embed_into(const AttributeVector& a, RotationalSymmetry sym, std::vector<double>& out) {
  out.push_back(a.pos.x);
  out.push_back(a.pos.y);
  if (!sym.continuous()) {
    const double angle = kTwoPi * std::max(sym.period, 1) * a.rot;
    out.push_back(std::cos(angle));
    out.push_back(std::sin(angle));
  }
  out.push_back(a.size.x);
  out.push_back(a.size.y);
  out.insert(out.end(), a.style.begin(), a.style.end());
}

AttributeVector unembed(std::span<const double> v, std::size_t style_count, RotationalSymmetry sym) {
  if (v.size() != embedded_width(style_count, sym)) throw DimensionError("unembed: width mismatch");
  AttributeVector a;
  std::size_t i = 0;
  a.pos = {v[i], v[i + 1]};
  i += 2;
  if (!sym.continuous()) {
    const int period = std::max(sym.period, 1);
    a.rot = wrap_unit(std::atan2(v[i + 1], v[i]) / kTwoPi) / period;
    i += 2;
  }
  a.size = {v[i], v[i + 1]};
  i += 2;
  a.style.assign(v.begin() + static_cast<std::ptrdiff_t>(i), v.end());
  return a;
}

}  // namespace scenecaps
