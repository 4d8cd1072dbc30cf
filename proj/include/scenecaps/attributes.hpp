#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scenecaps {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input shapes or dimensions that do not match a model, route or schema.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed files, documents or images.
class DataError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
  friend Vec2 operator*(double s, Vec2 a) { return {a.x * s, a.y * s}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;

  double norm() const { return std::hypot(x, y); }
};

/// Rotates by `turns` full revolutions (angle = 2π·turns) in image coordinates.
inline Vec2 rotate(Vec2 v, double turns) {
  const double a = kTwoPi * turns;
  const double c = std::cos(a);
  const double s = std::sin(a);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

/// Fractional part in [0,1).
inline double wrap_unit(double v) {
  double r = v - std::floor(v);
  return r >= 1.0 ? 0.0 : r;
}

/// Shortest distance between a and b on a circle of circumference `period`.
inline double cyclic_distance(double a, double b, double period = 1.0) {
  double d = std::fmod(std::abs(a - b), period);
  return std::min(d, period - d);
}

enum class SlotKind { position, rotation, size, style };

std::string_view slot_kind_name(SlotKind kind);
SlotKind parse_slot_kind(std::string_view name);

/// Sampling prior for one attribute: maps χ ~ U[0,1] onto [lo,hi].
struct Quantile {
  double lo = 0.0;
  double hi = 1.0;

  double operator()(double p) const { return lo + (hi - lo) * p; }
  double inverse(double v) const { return hi == lo ? 0.5 : (v - lo) / (hi - lo); }
  bool constant() const { return hi == lo; }
};

struct AttributeSpec {
  std::string name;
  SlotKind slot = SlotKind::style;
  double lo = 0.0;  // declared range
  double hi = 1.0;
  Quantile quantile;

  int width() const { return slot == SlotKind::position || slot == SlotKind::size ? 2 : 1; }
};

/// Ordered attribute declaration: position, rotation and size always come
/// first (slots pos.x, pos.y, rot, size.w, size.h), followed by style slots.
class AttributeSchema {
 public:
  AttributeSchema();
  explicit AttributeSchema(const std::vector<AttributeSpec>& specs);

  static AttributeSchema with_styles(const std::vector<std::string>& names);

  const AttributeSpec& position() const { return specs_[0]; }
  const AttributeSpec& rotation() const { return specs_[1]; }
  const AttributeSpec& size() const { return specs_[2]; }
  std::span<const AttributeSpec> styles() const { return {specs_.data() + 3, specs_.size() - 3}; }
  const std::vector<AttributeSpec>& specs() const { return specs_; }

  std::size_t style_count() const { return specs_.size() - 3; }
  std::size_t dims() const { return 5 + style_count(); }
  std::vector<std::string> slot_names() const;
  std::optional<std::size_t> style_index(std::string_view name) const;
  bool has_style(std::string_view name) const { return style_index(name).has_value(); }

  void add_style(AttributeSpec spec);

  /// Range / prior of flattened slot `i`.
  const AttributeSpec& spec_for_slot(std::size_t i) const;

  friend bool operator==(const AttributeSchema&, const AttributeSchema&);

 private:
  std::vector<AttributeSpec> specs_;
};

bool operator==(const AttributeSpec& a, const AttributeSpec& b);

/// Attribute vector α: pos (2), rot (1), size (2) and style slots, all in [0,1].
struct AttributeVector {
  Vec2 pos;
  double rot = 0.0;
  Vec2 size;
  std::vector<double> style;

  std::size_t dims() const { return 5 + style.size(); }
  std::vector<double> flat() const;
  static AttributeVector from_flat(std::span<const double> values);

  /// Clamps every slot to [0,1]; rotation is wrapped instead of clamped.
  void clamp_unit();

  friend bool operator==(const AttributeVector&, const AttributeVector&) = default;
};

/// Discrete rotational symmetry of a capsule. period == 0 means continuous
/// (every rotation is equivalent, as for a circle).
struct RotationalSymmetry {
  int period = 1;
  bool swap_size_on_quarter = false;

  bool continuous() const { return period == 0; }
  friend bool operator==(RotationalSymmetry, RotationalSymmetry) = default;
};

/// The finite set R_α of rotationally equivalent vectors (rot shifted by k/period).
/// A continuous symmetry yields {a}; callers treat its rotation as free.
std::vector<AttributeVector> rotational_equivalents(const AttributeVector& a, RotationalSymmetry sym);

/// Representative with rot in [0, 1/period); continuous symmetry sets rot to 0.
AttributeVector canonicalize(const AttributeVector& a, RotationalSymmetry sym);

/// Per-slot absolute errors of `estimate` against the closest rotational
/// equivalent of `truth` (rotation compared cyclically).
std::vector<double> attribute_errors(const AttributeVector& estimate, const AttributeVector& truth,
                                     RotationalSymmetry sym);

// Regression-model embedding of attribute vectors. The rotation slot becomes
// (cos, sin) of 2π·period·rot, or is dropped for continuous symmetry.
std::size_t embedded_width(std::size_t style_count, RotationalSymmetry sym);
void embed_into(const AttributeVector& a, RotationalSymmetry sym, std::vector<double>& out);
AttributeVector unembed(std::span<const double> values, std::size_t style_count, RotationalSymmetry sym);

}  // namespace scenecaps
