#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "scenecaps/attributes.hpp"

namespace scenecaps {

/// Single-channel raster, row-major, values in [0,1].
class PixelLayer {
 public:
  PixelLayer() = default;
  PixelLayer(int width, int height, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return values_.empty(); }

  double& at(int x, int y) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  /// Zero outside the raster.
  double sample(int x, int y) const;
  /// Bilinear sample at continuous pixel coordinates (pixel centers at +0.5).
  double bilinear(double px, double py) const;

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  /// Canvas unit in pixels: attribute coordinates are fractions of max(width, height).
  double unit() const { return static_cast<double>(std::max(width_, height_)); }

  friend bool operator==(const PixelLayer&, const PixelLayer&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

enum class Shape { circle, square, triangle };

std::string_view shape_name(Shape s);
std::optional<Shape> parse_shape(std::string_view name);

/// Natural rotational symmetry of a primitive's rendering.
RotationalSymmetry shape_symmetry(Shape s);

struct PrimitiveParams {
  Shape shape = Shape::circle;
  Vec2 pos{0.5, 0.5};
  double rot = 0.0;
  Vec2 size{0.2, 0.2};
  double intensity = 1.0;

  /// Reads pos/rot/size and the first style slot as intensity (1 when absent).
  static PrimitiveParams from_attributes(Shape shape, const AttributeVector& a);
};

/// Signed distance (canvas units) from `point` to the primitive boundary:
/// negative inside. Circles use exact Euclidean distance (axis-aligned
/// ellipses when w != h), squares the oriented-box distance, triangles the
/// isosceles-triangle distance (apex up at rot = 0, bounding box w×h).
double sdf_eval(const PrimitiveParams& params, Vec2 point);

/// Per-pixel coverage in [0,1] using a one-pixel smoothstep band on the SDF.
PixelLayer coverage_layer(const PrimitiveParams& params, int width, int height);

/// intensity · coverage over a transparent (zero) background.
PixelLayer draw_primitive(const PrimitiveParams& params, int width, int height);

/// Alpha composites the primitive over `dst` (later draws occlude earlier ones).
void composite_over(PixelLayer& dst, const PrimitiveParams& params);

struct EffectsConfig {
  double background_probability = 0.5;
  double occlusion_probability = 0.3;
  double brightness_probability = 0.5;
  double max_background = 0.08;
  double max_occlusion_area = 0.25;
  double brightness_jitter = 0.05;

  static EffectsConfig none() { return {0.0, 0.0, 0.0, 0.08, 0.25, 0.05}; }
};

/// Random backgrounds, occluding shapes and brightness jitter, clamped to [0,1].
PixelLayer apply_effects(const PixelLayer& layer, std::mt19937_64& rng, const EffectsConfig& config);

/// Uniform double in [0,1) from the generator, independent of libstdc++'s
/// distribution implementation so datasets replay bit-exactly.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

}  // namespace scenecaps
