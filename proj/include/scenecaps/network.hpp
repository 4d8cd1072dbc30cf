#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scenecaps/capsule.hpp"
#include "scenecaps/sdf.hpp"

namespace scenecaps {

struct DetectConfig {
  std::vector<double> scales{1.0 / 6.0, 0.25, 0.375, 0.5625};  // patch sides as fractions of the canvas unit
  double stride = 0.25;           // fraction of the patch side
  double blank_threshold = 0.15;  // patches darker than this everywhere are skipped
  double nms_iou = 0.5;
  double nms_ink = 0.5;  // also suppress when this share of a render lies inside a kept render
  std::size_t binding_cap = 2000;
  double spread_factor = 2.0;
  double verify_margin = 0.15;  // fraction of the primitive's larger side, at least 2 px
  double refine_fill = 0.7;     // primitive extent over patch side when re-centering
  int refine_iterations = 3;    // re-centering passes; later passes mask clutter outside the estimate
  double refine_mask = 1.3;     // kept box around the estimate, as a multiple of its size
  double min_coverage = 0.6;    // share of the rendered primitive's ink found in the image
  AgreementConfig agreement;

  nlohmann::json to_json() const;
  static DetectConfig from_json(const nlohmann::json& j);
};

struct PatchProposal {
  Vec2 origin;          // top-left corner, pixels
  double scale = 0.0;   // side, pixels
  PixelLayer patch;     // resampled to P×P
};

/// Sliding grid at every configured scale; stride = scale · config.stride.
std::vector<PatchProposal> propose_patches(const PixelLayer& image, const DetectConfig& config, int patch_size);

/// Square region [origin, origin + scale) resampled to P×P (area-averaged bilinear samples).
PixelLayer resample_patch(const PixelLayer& image, Vec2 origin, double scale, int patch_size);

struct SceneNode {
  std::size_t capsule = 0;
  std::size_t route = 0;
  double p = 0.0;
  AttributeVector attrs;
  std::vector<std::size_t> children;  // node indices, slot order

  friend bool operator==(const SceneNode&, const SceneNode&) = default;
};

/// Best binding of a capsule that did not activate.
struct NearMiss {
  std::size_t capsule = 0;
  std::size_t route = 0;
  double p = 0.0;
  AttributeVector attrs;
  std::vector<std::size_t> parts;     // node indices, slot order
  std::vector<std::vector<double>> z;  // agreement vector per part

  friend bool operator==(const NearMiss&, const NearMiss&) = default;
};

class CapsuleNetwork;

struct SceneGraph {
  std::uint64_t pass_id = 0;
  std::string image;
  int width = 0;
  int height = 0;
  std::vector<SceneNode> nodes;
  std::vector<std::size_t> roots;
  std::vector<NearMiss> near_misses;  // sorted by p, descending

  static std::string node_id(std::size_t index) { return "n" + std::to_string(index); }
  nlohmann::json to_json(const CapsuleNetwork& network) const;
  static SceneGraph from_json(const nlohmann::json& j, const CapsuleNetwork& network);

  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

/// Merged capsules (one per symbol), their lifelong memory and detection settings.
class CapsuleNetwork {
 public:
  /// The three primitive capsules circle, square, triangle (untrained).
  static CapsuleNetwork with_primitives();

  std::vector<Capsule> capsules;
  MemoryStore memory;
  DetectConfig config;
  std::uint64_t next_pass = 1;

  const Capsule& capsule(std::size_t id) const { return capsules.at(id); }
  Capsule& capsule(std::size_t id) { return capsules.at(id); }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t require(const std::string& name) const;

  /// Adds a semantic capsule (no routes yet) with the given style slots.
  std::size_t add_semantic_capsule(const std::string& name, const std::vector<std::string>& styles);

  std::vector<SlotInfo> slots(const Route& route) const;
  /// 0 for primitives, else 1 + the deepest part level.
  std::size_t level(std::size_t capsule) const;
  /// Capsules ordered so every capsule follows all of its part capsules.
  std::vector<std::size_t> topological_order() const;
  /// Capsules that consume `capsule` in some route.
  std::vector<std::size_t> consumers(std::size_t capsule) const;

  std::vector<std::size_t> primitive_ids() const;
  bool primitives_trained() const;

  /// Capsules, routes, attribute specs and part edges. With `weight_paths`
  /// the model file stems are included (network.json form).
  nlohmann::json topology_json(bool weight_paths = false) const;

  void save(const std::filesystem::path& dir) const;
  static CapsuleNetwork load(const std::filesystem::path& dir);
};

/// Full forward pass. Pure: memory is read (for p̄) but not written.
SceneGraph detect(const CapsuleNetwork& network, const PixelLayer& image, std::uint64_t pass_id,
                  const std::string& image_ref = "");

/// Activation of a primitive capsule at image-frame attributes: agreement of
/// the rendered primitive with the image over its box plus a margin. Zero when
/// less than config.min_coverage of the rendered ink is present in the image.
double verify_primitive(const CapsuleNetwork& network, const Capsule& capsule, const PixelLayer& image,
                        const AttributeVector& attrs);

/// Roots of the observed parse-trees.
std::vector<std::size_t> observed_axioms(const SceneGraph& graph);

/// Renders one node by decoding through route decoders down to primitives.
PixelLayer render(const CapsuleNetwork& network, const SceneGraph& graph, std::size_t node, int width, int height);
/// Renders a capsule instance from attributes alone (route 0 all the way down unless given).
PixelLayer render_attributes(const CapsuleNetwork& network, std::size_t capsule, std::size_t route,
                             const AttributeVector& attrs, int width, int height);
/// All roots composited in node order.
PixelLayer render_scene(const CapsuleNetwork& network, const SceneGraph& graph);

/// Binary support of a node's render at full intensity.
PixelLayer segmentation_mask(const CapsuleNetwork& network, const SceneGraph& graph, std::size_t node, int width,
                             int height);

/// Appends every node of the graph to memory (children first) and returns the
/// memory entry id per node.
std::vector<std::uint64_t> commit(CapsuleNetwork& network, const SceneGraph& graph);

/// Axis-aligned box of a (rotated) attribute box: {min, max}.
std::pair<Vec2, Vec2> attribute_box(const AttributeVector& a);
double box_iou(const AttributeVector& a, const AttributeVector& b);

}  // namespace scenecaps
