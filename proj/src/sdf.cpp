#include "scenecaps/sdf.hpp"

#include <algorithm>
#include <cmath>

namespace scenecaps {

PixelLayer::PixelLayer(int width, int height, double fill) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw DimensionError("pixel layer needs width, height >= 1");
  values_.assign(static_cast<std::size_t>(width) * height, fill);
}

double PixelLayer::sample(int x, int y) const {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return 0.0;
  return at(x, y);
}

double PixelLayer::bilinear(double px, double py) const {
  const double fx = px - 0.5;
  const double fy = py - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double tx = fx - x0;
  const double ty = fy - y0;
  return (1 - tx) * (1 - ty) * sample(x0, y0) + tx * (1 - ty) * sample(x0 + 1, y0) +
         (1 - tx) * ty * sample(x0, y0 + 1) + tx * ty * sample(x0 + 1, y0 + 1);
}

std::string_view shape_name(Shape s) {
  switch (s) {
    case Shape::circle: return "circle";
    case Shape::square: return "square";
    case Shape::triangle: return "triangle";
  }
  return "circle";
}

std::optional<Shape> parse_shape(std::string_view name) {
  if (name == "circle") return Shape::circle;
  if (name == "square") return Shape::square;
  if (name == "triangle") return Shape::triangle;
  return std::nullopt;
}

RotationalSymmetry shape_symmetry(Shape s) {
  switch (s) {
    case Shape::circle: return {0, false};
    case Shape::square: return {4, true};
    case Shape::triangle: return {1, false};
  }
  return {};
}

PrimitiveParams PrimitiveParams::from_attributes(Shape shape, const AttributeVector& a) {
  return {shape, a.pos, a.rot, a.size, a.style.empty() ? 1.0 : a.style.front()};
}

namespace {

double sd_ellipse(Vec2 p, Vec2 r) {
  if (r.x == r.y) return p.norm() - r.x;
  const double k0 = std::hypot(p.x / r.x, p.y / r.y);
  const double k1 = std::hypot(p.x / (r.x * r.x), p.y / (r.y * r.y));
  if (k1 == 0.0) return -std::min(r.x, r.y);
  return k0 * (k0 - 1.0) / k1;
}

double sd_box(Vec2 p, Vec2 half) {
  const double dx = std::abs(p.x) - half.x;
  const double dy = std::abs(p.y) - half.y;
  const double outside = std::hypot(std::max(dx, 0.0), std::max(dy, 0.0));
  return outside + std::min(std::max(dx, dy), 0.0);
}

// Apex at the origin, base corners at (±q.x, q.y) with q.y > 0.
double sd_isosceles(Vec2 p, Vec2 q) {
  p.x = std::abs(p.x);
  const double qq = q.x * q.x + q.y * q.y;
  const double ta = std::clamp((p.x * q.x + p.y * q.y) / qq, 0.0, 1.0);
  const Vec2 a{p.x - q.x * ta, p.y - q.y * ta};
  const double tb = std::clamp(p.x / q.x, 0.0, 1.0);
  const Vec2 b{p.x - q.x * tb, p.y - q.y};
  const double da = a.x * a.x + a.y * a.y;
  const double db = b.x * b.x + b.y * b.y;
  const double sa = -(p.x * q.y - p.y * q.x);
  const double sb = -(p.y - q.y);
  const double d = std::min(da, db);
  const double s = std::min(sa, sb);
  return s > 0 ? -std::sqrt(d) : std::sqrt(d);
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

double sdf_eval(const PrimitiveParams& params, Vec2 point) {
  // Circles ignore rotation: their rot slot carries no information.
  const Vec2 local = params.shape == Shape::circle ? point - params.pos : rotate(point - params.pos, -params.rot);
  const Vec2 half{params.size.x * 0.5, params.size.y * 0.5};
  switch (params.shape) {
    case Shape::circle: return sd_ellipse(local, half);
    case Shape::square: return sd_box(local, half);
    case Shape::triangle: return sd_isosceles({local.x, local.y + half.y}, {half.x, params.size.y});
  }
  return 0.0;
}

PixelLayer coverage_layer(const PrimitiveParams& params, int width, int height) {
  PixelLayer out(width, height, 0.0);
  const double unit = out.unit();
  const double band = 0.5 / unit;
  // Only pixels near the primitive's bounding circle can be covered.
  const double radius = 0.5 * params.size.norm() + 2.0 / unit;
  const int x0 = std::max(0, static_cast<int>(std::floor((params.pos.x - radius) * unit)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil((params.pos.x + radius) * unit)));
  const int y0 = std::max(0, static_cast<int>(std::floor((params.pos.y - radius) * unit)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil((params.pos.y + radius) * unit)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Vec2 p{(x + 0.5) / unit, (y + 0.5) / unit};
      out.at(x, y) = 1.0 - smoothstep(-band, band, sdf_eval(params, p));
    }
  }
  return out;
}

PixelLayer draw_primitive(const PrimitiveParams& params, int width, int height) {
  PixelLayer out = coverage_layer(params, width, height);
  const double intensity = std::clamp(params.intensity, 0.0, 1.0);
  for (double& v : out.values()) v *= intensity;
  return out;
}

void composite_over(PixelLayer& dst, const PrimitiveParams& params) {
  const PixelLayer cov = coverage_layer(params, dst.width(), dst.height());
  const double intensity = std::clamp(params.intensity, 0.0, 1.0);
  auto& d = dst.values();
  const auto& c = cov.values();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (c[i] > 0.0) d[i] = d[i] * (1.0 - c[i]) + intensity * c[i];
  }
}

PixelLayer apply_effects(const PixelLayer& layer, std::mt19937_64& rng, const EffectsConfig& config) {
  PixelLayer out = layer;
  const int w = out.width();
  const int h = out.height();
  const double unit = out.unit();

  if (uniform01(rng) < config.background_probability) {
    const double amp = uniform(rng, 0.0, config.max_background);
    if (uniform01(rng) < 0.5) {
      for (double& v : out.values()) v = std::max(v, amp * uniform01(rng));
    } else {
      const double dir = uniform01(rng);
      const Vec2 d = rotate({1.0, 0.0}, dir);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double t = 0.5 + 0.5 * (d.x * ((x + 0.5) / unit - 0.5) + d.y * ((y + 0.5) / unit - 0.5)) * 1.4;
          out.at(x, y) = std::max(out.at(x, y), amp * std::clamp(t, 0.0, 1.0));
        }
    }
  }

  if (uniform01(rng) < config.occlusion_probability) {
    // Occluders sit toward the border, mimicking neighbouring objects.
    PrimitiveParams occ;
    occ.shape = static_cast<Shape>(rng() % 3);
    const double area = uniform(rng, 0.03, config.max_occlusion_area);
    const double aspect = uniform(rng, 0.6, 1.6);
    const double side = std::sqrt(area) * (occ.shape == Shape::triangle ? std::sqrt(2.0) : 1.0);
    occ.size = {side * std::sqrt(aspect), side / std::sqrt(aspect)};
    if (occ.shape == Shape::circle) occ.size.y = occ.size.x;
    const double angle = uniform01(rng);
    const double dist = uniform(rng, 0.4, 0.65);
    occ.pos = Vec2{0.5, 0.5} + rotate({dist, 0.0}, angle);
    occ.rot = uniform01(rng);
    occ.intensity = uniform(rng, 0.3, 1.0);
    composite_over(out, occ);
  }

  if (uniform01(rng) < config.brightness_probability) {
    const double f = 1.0 + uniform(rng, -config.brightness_jitter, config.brightness_jitter);
    for (double& v : out.values()) v *= f;
  }

  for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace scenecaps
