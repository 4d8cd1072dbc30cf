#include "scenecaps/gamma.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace scenecaps {

std::array<Vec2, 4> bounding_corners(const AttributeVector& part) {
  const double hw = part.size.x * 0.5;
  const double hh = part.size.y * 0.5;
  return {part.pos + rotate({-hw, -hh}, part.rot), part.pos + rotate({hw, -hh}, part.rot),
          part.pos + rotate({hw, hh}, part.rot), part.pos + rotate({-hw, hh}, part.rot)};
}

std::optional<double> weighted_style(std::span<const GammaPart> parts, const std::string& name) {
  double num = 0.0;
  double den = 0.0;
  bool any = false;
  for (const auto& p : parts) {
    auto it = std::find(p.style_names.begin(), p.style_names.end(), name);
    if (it == p.style_names.end()) continue;
    const double weight = p.attrs->size.norm();
    num += weight * p.attrs->style[static_cast<std::size_t>(it - p.style_names.begin())];
    den += weight;
    any = true;
  }
  if (!any) return std::nullopt;
  return den > 0.0 ? num / den : 0.0;
}

AttributeVector gamma_semantic(std::span<const GammaPart> parts, std::span<const std::string> out_styles,
                               double parent_rot) {
  if (parts.empty()) throw DimensionError("gamma_semantic needs at least one part");
  Vec2 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  Vec2 hi{-lo.x, -lo.y};
  for (const auto& p : parts) {
    AttributeVector a = *p.attrs;
    if (p.continuous_rotation) a.rot = parent_rot;
    for (const Vec2& c : bounding_corners(a)) {
      const Vec2 local = rotate(c, -parent_rot);
      lo = {std::min(lo.x, local.x), std::min(lo.y, local.y)};
      hi = {std::max(hi.x, local.x), std::max(hi.y, local.y)};
    }
  }
  AttributeVector out;
  out.rot = wrap_unit(parent_rot);
  out.size = hi - lo;
  out.pos = rotate((hi + lo) * 0.5, parent_rot);
  out.style.reserve(out_styles.size());
  for (const auto& name : out_styles) out.style.push_back(weighted_style(parts, name).value_or(0.0));
  return out;
}

AttributeVector gamma_semantic(std::span<const AttributeVector> parts, double parent_rot) {
  if (parts.empty()) throw DimensionError("gamma_semantic needs at least one part");
  const std::size_t n = parts.front().style.size();
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("style" + std::to_string(i));
  std::vector<GammaPart> views;
  for (const auto& p : parts) {
    if (p.style.size() != n) throw DimensionError("gamma_semantic: parts disagree on style count");
    views.push_back({&p, names, false});
  }
  return gamma_semantic(views, names, parent_rot);
}

double reference_rotation(Vec2 a, Vec2 b, double offset) {
  const Vec2 d = b - a;
  return wrap_unit(std::atan2(d.y, d.x) / kTwoPi - offset);
}

}  // namespace scenecaps
