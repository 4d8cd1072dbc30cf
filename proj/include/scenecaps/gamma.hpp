#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenecaps/attributes.hpp"

namespace scenecaps {

// Closed-form semantic encoder γ: styles are size-weighted means over the
// parts that carry them, size and position come from the bounding box of all
// part corners expressed in the parent frame.

struct GammaPart {
  const AttributeVector* attrs = nullptr;
  std::span<const std::string> style_names;  // names of attrs->style, in order
  bool continuous_rotation = false;          // part is rotation-free (circle)
};

/// Corners pos + R(rot)·(±w/2, ±h/2) of a part's box, in world coordinates.
std::array<Vec2, 4> bounding_corners(const AttributeVector& part);

/// Size-weighted mean of style `name` over the parts having it; nullopt if none do.
std::optional<double> weighted_style(std::span<const GammaPart> parts, const std::string& name);

/// Parent attributes with rotation `parent_rot`; output styles follow `out_styles`
/// (styles no part carries come out as 0). Throws DimensionError on empty parts.
AttributeVector gamma_semantic(std::span<const GammaPart> parts, std::span<const std::string> out_styles,
                               double parent_rot = 0.0);

/// Convenience form: all parts share one style layout, matched by index.
AttributeVector gamma_semantic(std::span<const AttributeVector> parts, double parent_rot = 0.0);

/// Parent rotation derived from two reference part positions: the direction
/// a→b in turns, minus `offset`.
double reference_rotation(Vec2 a, Vec2 b, double offset);

}  // namespace scenecaps
