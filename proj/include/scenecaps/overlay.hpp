#pragma once

#include <string_view>

#include "scenecaps/network.hpp"

namespace scenecaps {

/// Inspection image: the scene dimmed and upscaled by `zoom`, with every
/// node's box outlined and semantic nodes and roots labelled with their
/// capsule name.
PixelLayer draw_overlay(const CapsuleNetwork& network, const SceneGraph& graph, const PixelLayer& image, int zoom = 4);

/// Draws lowercase text with a 3×5 pixel font, `scale` pixels per font pixel.
void draw_text(PixelLayer& canvas, int x, int y, std::string_view text, int scale = 1, double value = 1.0);

}  // namespace scenecaps
