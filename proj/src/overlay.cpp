#include "scenecaps/overlay.hpp"

#include <array>
#include <cctype>
#include <cmath>

namespace scenecaps {

namespace {

// Rows top to bottom, three columns each.
const char* glyph(char c) {
  static const std::array<const char*, 26> letters{
      "010101111101101", "110101110101110", "011100100100011", "110101101101110", "111100110100111",
      "111100110100100", "011100101101011", "101101111101101", "111010010010111", "001001001101010",
      "101101110101101", "100100100100111", "101111111101101", "110101101101101", "010101101101010",
      "110101110100100", "010101101110011", "110101110101101", "011100010001110", "111010010010010",
      "101101101101111", "101101101101010", "101101111111101", "101101010101101", "101101010010010",
      "111001010100111"};
  static const std::array<const char*, 10> digits{
      "111101101101111", "010110010010111", "110001010100111", "110001010001110", "101101111001001",
      "111100110001110", "011100111101111", "111001010010010", "111101111101111", "111101111001110"};
  const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower >= 'a' && lower <= 'z') return letters[static_cast<std::size_t>(lower - 'a')];
  if (c >= '0' && c <= '9') return digits[static_cast<std::size_t>(c - '0')];
  if (c == '-' || c == '_') return "000000111000000";
  if (c == '.') return "000000000000010";
  return "000000000000000";
}

void put(PixelLayer& canvas, int x, int y, double v) {
  if (x >= 0 && y >= 0 && x < canvas.width() && y < canvas.height()) canvas.at(x, y) = v;
}

void line(PixelLayer& canvas, Vec2 a, Vec2 b, double v) {
  const int n = static_cast<int>(std::ceil(std::max(std::abs(b.x - a.x), std::abs(b.y - a.y)))) + 1;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    put(canvas, static_cast<int>(std::floor(a.x + (b.x - a.x) * t)), static_cast<int>(std::floor(a.y + (b.y - a.y) * t)), v);
  }
}

}  // namespace

void draw_text(PixelLayer& canvas, int x, int y, std::string_view text, int scale, double value) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char* g = glyph(text[i]);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c)
        if (g[r * 3 + c] == '1')
          for (int dy = 0; dy < scale; ++dy)
            for (int dx = 0; dx < scale; ++dx)
              put(canvas, x + static_cast<int>(i) * 4 * scale + c * scale + dx, y + r * scale + dy, value);
  }
}

PixelLayer draw_overlay(const CapsuleNetwork& network, const SceneGraph& graph, const PixelLayer& image, int zoom) {
  zoom = std::max(zoom, 1);
  PixelLayer out(image.width() * zoom, image.height() * zoom);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out.at(x, y) = 0.45 * image.at(x / zoom, y / zoom);
  const double px = image.unit() * zoom;
  std::vector<bool> is_root(graph.nodes.size(), false);
  for (auto r : graph.roots) is_root[r] = true;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const SceneNode& n = graph.nodes[i];
    const Capsule& cap = network.capsule(n.capsule);
    const auto corners = bounding_corners(n.attrs);
    const double v = cap.kind == CapsuleKind::semantic ? 1.0 : 0.75;
    for (std::size_t k = 0; k < 4; ++k) line(out, corners[k] * px, corners[(k + 1) % 4] * px, v);
    if (cap.kind == CapsuleKind::semantic || is_root[i]) {
      const auto [lo, hi] = attribute_box(n.attrs);
      draw_text(out, static_cast<int>(lo.x * px), std::max(0, static_cast<int>(lo.y * px) - 7), cap.name, 1, 1.0);
    }
  }
  return out;
}

}  // namespace scenecaps
