#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "scenecaps/attributes.hpp"
#include "scenecaps/gamma.hpp"
#include "scenecaps/regress.hpp"
#include "scenecaps/sdf.hpp"

namespace scenecaps {

/// Window widths used by the agreement functions and the route probability.
struct AgreementConfig {
  double pos = 0.05;
  double rot = 0.05;
  double size = 0.05;
  double style = 0.15;
  double prob_ratio = 0.5;
  double pixel = 0.1;  // mean absolute pixel difference scale for primitives

  nlohmann::json to_json() const;
  static AgreementConfig from_json(const nlohmann::json& j);
};

/// Gaussian window exp(−½·Σ(x_k/σ_k)²).
double window(std::span<const double> x, std::span<const double> sigma);
double window(double x, double sigma);

/// Per-slot agreement of an observed part with its expected value, maximized
/// over the rotational equivalents of the observation. Rotation differences
/// are cyclic; a continuous symmetry makes the rotation slot agree fully.
std::vector<double> agreement_semantic(const AttributeVector& actual, const AttributeVector& expected,
                                       RotationalSymmetry symmetry, const AgreementConfig& config = {});

/// [w(mean |patch − expected| / sigma_px)].
std::vector<double> agreement_primitive(const PixelLayer& patch, const PixelLayer& expected, double sigma_px);

struct RouteInput {
  std::span<const double> z;  // agreement vector of this part
  double p = 1.0;             // part activation
  double p_mean = 1.0;        // past mean activation for the slot
};

/// p = (1/|λ|)·Σ ‖Z_i‖₁/|Z_i| · w(p_i/p̄_i − 1).
double route_probability(std::span<const RouteInput> parts, double prob_sigma);

struct RouteCandidate {
  std::size_t route = 0;
  double p = 0.0;
  AttributeVector attrs;
};

struct RouteSelection {
  std::size_t route = 0;
  double p = 0.0;
  AttributeVector attrs;
  bool activated = false;  // p reached the threshold
};

/// Argmax over candidates; ties go to the lowest route id.
RouteSelection route_select(std::span<const RouteCandidate> candidates, double threshold);

enum class CapsuleKind { primitive, semantic };

/// How a route derives its parent rotation from the bound parts: the direction
/// from slot `a` to slot `b` minus `offset`. With a == b the single part's own
/// rotation is used.
struct RouteFrame {
  std::size_t a = 0;
  std::size_t b = 0;
  double offset = 0.0;
};

struct Route {
  std::size_t id = 0;
  std::vector<std::size_t> parts;  // part capsule per input slot, depth order
  RouteFrame frame;
  std::optional<DenseModel> decoder;                 // g
  std::map<std::string, DenseModel> style_encoders;  // learned γ for added attributes
  double spread = 0.0;  // largest part-center distance over mean part size seen in memory
};

/// What a route needs to know about the capsule bound to one of its slots.
struct SlotInfo {
  std::vector<std::string> style_names;
  RotationalSymmetry symmetry;
};

// Semantic activations average agreement over every slot of every part, so a
// single misplaced part still scores around 0.85; the semantic threshold sits
// above that.
constexpr double kPrimitiveThreshold = 0.7;
constexpr double kSemanticThreshold = 0.9;

struct Capsule {
  std::size_t id = 0;
  std::string name;
  CapsuleKind kind = CapsuleKind::semantic;
  std::optional<Shape> shape;
  AttributeSchema schema;
  RotationalSymmetry symmetry;
  double threshold = kPrimitiveThreshold;
  std::vector<Route> routes;
  std::optional<ConvModel> encoder;  // primitive γ

  std::vector<std::string> style_names() const;
  SlotInfo slot_info() const { return {style_names(), symmetry}; }
};

/// Primitive capsule with patch-frame priors: pos in [0.35,0.65], size in
/// [0.3,0.85], intensity in [0.5,1], rotation over one symmetry period.
Capsule make_primitive_capsule(std::size_t id, Shape shape);

// The primitive encoder regresses a continuous re-parameterization of the
// attributes: rotation as (cos, sin) over the symmetry period, and for squares
// the anisotropy (w−h)/2 as a vector at twice the box angle, which is
// invariant under the quarter-turn width/height swap.
std::size_t encoder_width(Shape shape);
std::vector<double> encoder_targets(Shape shape, const AttributeVector& a);
AttributeVector attributes_from_encoder(Shape shape, std::span<const double> out);

/// Runs the primitive encoder on a P×P patch; attributes in patch frame.
AttributeVector encode_patch(const Capsule& capsule, std::span<const double> patch);

/// Expected pixels of a primitive capsule instance.
PixelLayer expected_patch(const Capsule& capsule, const AttributeVector& attrs, int width, int height);

/// Parent rotation of a semantic route for bound parts.
double route_rotation(const Route& route, std::span<const AttributeVector> parts, std::span<const SlotInfo> slots);

/// Forward pass of a semantic route: closed-form γ plus learned attribute encoders, clamped to [0,1].
AttributeVector route_forward(const Capsule& capsule, const Route& route, std::span<const AttributeVector> parts,
                              std::span<const SlotInfo> slots);

/// Expected parts g(α_Ω) split per input slot, clamped to [0,1]. Throws if the route has no decoder.
std::vector<AttributeVector> expected_inputs(const Capsule& capsule, const Route& route, const AttributeVector& parent,
                                             std::span<const SlotInfo> slots);

std::size_t decoder_input_width(const Capsule& capsule);
std::size_t decoder_output_width(std::span<const SlotInfo> slots);
std::vector<double> decoder_input(const Capsule& capsule, const AttributeVector& parent);
std::vector<double> decoder_target(std::span<const AttributeVector> parts, std::span<const SlotInfo> slots);
/// Concatenated part embeddings, the input of learned attribute encoders.
std::vector<double> parts_embedding(std::span<const AttributeVector> parts, std::span<const SlotInfo> slots);

struct ObservationEntry {
  std::uint64_t id = 0;
  std::uint64_t pass = 0;
  std::string node;  // scene-graph node id within the pass
  std::size_t capsule = 0;
  std::size_t route = 0;
  double p = 0.0;
  std::vector<double> attrs;        // flattened attribute vector
  std::vector<std::uint64_t> parts;  // consumed entries, slot order

  nlohmann::json to_json() const;
  static ObservationEntry from_json(const nlohmann::json& j);
};

/// Append-only lifelong record of activations with running mean part
/// activations per (capsule, route, input slot).
class MemoryStore {
 public:
  /// Assigns the next id and returns it. Part references must already exist.
  std::uint64_t append(ObservationEntry entry);

  const std::vector<ObservationEntry>& entries() const { return entries_; }
  const ObservationEntry& entry(std::uint64_t id) const;
  const ObservationEntry* find_node(std::uint64_t pass, const std::string& node) const;
  std::vector<const ObservationEntry*> for_route(std::size_t capsule, std::size_t route) const;
  std::vector<const ObservationEntry*> for_capsule(std::size_t capsule) const;

  /// Running p̄ for an input slot, if any observation has been logged.
  std::optional<double> p_mean(std::size_t capsule, std::size_t route, std::size_t slot) const;
  /// p̄ recomputed from the log alone.
  std::optional<double> recompute_p_mean(std::size_t capsule, std::size_t route, std::size_t slot) const;

  /// Appends `value` to the attribute vector of every entry of `capsule`.
  void extend_attributes(std::size_t capsule, double value);
  /// Overwrites one attribute slot of an entry (used when inherited slots are recomputed).
  void set_attribute(std::uint64_t id, std::size_t slot, double value);

  std::string to_jsonl() const;
  static MemoryStore from_jsonl(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static MemoryStore load(const std::filesystem::path& path);

  std::size_t size() const { return entries_.size(); }
  friend bool operator==(const MemoryStore& a, const MemoryStore& b) { return a.entries_ == b.entries_; }

 private:
  struct Tally {
    double sum = 0.0;
    std::size_t count = 0;
  };
  std::vector<ObservationEntry> entries_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, Tally> tallies_;
};

bool operator==(const ObservationEntry& a, const ObservationEntry& b);

}  // namespace scenecaps
