#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scenecaps/capsule.hpp"
#include "scenecaps/network.hpp"
#include "scenecaps/regress.hpp"
#include "scenecaps/sdf.hpp"

namespace scenecaps {

// ---------------------------------------------------------------- primitives

struct PrimitiveDataset {
  Dataset data;                      // inputs: P×P patches, targets: encoder_targets
  std::vector<AttributeVector> attrs;  // sampled attributes, patch frame
};

/// χ ~ U[0,1] per attribute slot, mapped through the capsule's quantiles,
/// rendered and passed through the nuisance effects.
PrimitiveDataset synth_primitive_dataset(const Capsule& capsule, std::size_t n, std::mt19937_64& rng,
                                         const EffectsConfig& effects = {}, int patch_size = 28);

struct PrimitiveTrainConfig {
  ConvConfig conv;
  TrainConfig train{.learning_rate = 2e-3,
                    .batch_size = 32,
                    .steps = 12000,
                    .seed = 11,
                    .optimizer = Optimizer::adam,
                    .final_rate_fraction = 0.05,
                    .log_every = 500};
  double mae_bound = 0.05;
};

/// Budgets tuned per shape: the triangle gets a wider network and the longest
/// schedule because its apex is ambiguous near equilateral.
PrimitiveTrainConfig default_primitive_config(Shape shape);

struct PrimitiveReport {
  std::vector<std::string> slots;
  std::vector<double> mae;  // held-out mean absolute error per attribute slot
  double max_mae = 0.0;
  bool passed = false;
  TrainResult training;
};

/// Symmetry-aware per-slot MAE of the capsule's encoder over a dataset.
std::vector<double> primitive_mae(const Capsule& capsule, const PrimitiveDataset& data);

/// Trains the capsule's encoder and reports held-out error. Falling short of
/// the bound is reported, not thrown.
PrimitiveReport train_primitive(Capsule& capsule, const PrimitiveDataset& train_set,
                                const PrimitiveDataset& validation_set, const PrimitiveTrainConfig& config);

// ---------------------------------------------------------------- semantic

/// One observed binding of a route: part attributes in slot order plus the
/// parent's values of learned attributes (γ_new outputs) where known.
struct RouteSample {
  std::vector<AttributeVector> parts;
  std::map<std::string, double> learned;
};

struct AugmentConfig {
  std::size_t count = 3000;
  double scale_lo = 0.6;
  double scale_hi = 1.5;
  double margin = 0.02;         // augmented parts stay this far inside the canvas
  double epsilon = 0.02;        // a style never observed above this is unused
  double style_probability = 0.5;  // chance a U transform invents a value instead of keeping 0

  void validate() const;
};

struct AugmentedSet {
  std::vector<RouteSample> samples;
  std::vector<AttributeVector> labels;  // γ of each sample
};

/// Rigid + scale transform of a whole binding about `center`.
RouteSample transform_sample(const RouteSample& sample, Vec2 center, double turns, double scale, Vec2 target);

/// Style names of the route's parts that no sample uses above ε.
std::vector<std::string> unused_styles(std::span<const RouteSample> samples, std::span<const SlotInfo> slots,
                                       double epsilon);

/// The original samples, then `count` T∘U augmentations labelled by route_forward.
AugmentedSet augment(const Capsule& capsule, const Route& route, std::span<const SlotInfo> slots,
                     std::span<const RouteSample> samples, const AugmentConfig& config, std::mt19937_64& rng);

/// Memory observations of a route as samples.
std::vector<RouteSample> route_samples(const CapsuleNetwork& network, std::size_t capsule, std::size_t route);

struct SemanticTrainConfig {
  AugmentConfig augment;
  TrainConfig train{.learning_rate = 3e-3,
                    .batch_size = 32,
                    .steps = 6000,
                    .seed = 5,
                    .optimizer = Optimizer::adam,
                    .final_rate_fraction = 0.05,
                    .log_every = 500};
  std::size_t hidden = 64;
  double mae_bound = 0.1;
  std::uint64_t seed = 3;  // augmentation stream
};

struct SemanticReport {
  std::vector<double> slot_mae;  // held-out per output slot (embedded)
  double max_mae = 0.0;
  bool passed = false;
  std::size_t samples = 0;
  TrainResult training;
};

/// Per-slot symmetry-aware MAE of g(γ(parts)) against the parts.
std::vector<double> round_trip_errors(const Capsule& capsule, const Route& route, std::span<const SlotInfo> slots,
                                      std::span<const AttributeVector> parts);

/// Trains g of one route from its memory (plus `extra` samples) with augmentation.
SemanticReport train_semantic(CapsuleNetwork& network, std::size_t capsule, std::size_t route,
                              const SemanticTrainConfig& config = {}, std::span<const RouteSample> extra = {});

/// Reference frame for a new route: the farthest pair of parts, offset so the
/// example itself has rotation 0. A single part uses its own rotation.
RouteFrame choose_frame(std::span<const AttributeVector> parts, std::span<const SlotInfo> slots);

/// Largest part-center distance over the mean part size-norm.
double binding_spread(std::span<const AttributeVector> parts);

/// Adds a route over `parts` (capsule ids, slot order) seeded by one example,
/// without training it. Returns the route id.
std::size_t add_route(CapsuleNetwork& network, std::size_t capsule, std::vector<std::size_t> parts,
                      std::span<const AttributeVector> example);

struct AttributeReport {
  std::vector<SemanticReport> routes;
  std::vector<double> gamma_new_mae;  // held-out |γ_new − constant| per route
  double old_drift = 0.0;             // max change of g's reconstructions on memory
};

/// Adds style `name` to a semantic capsule: memory gets α_new = 0 (and
/// `observed_value` for entries listed in `observed`), each route's g is
/// retrained on γ_old ⊕ α_new, then γ_new is fitted to g's outputs.
AttributeReport add_attribute(CapsuleNetwork& network, std::size_t capsule, const std::string& name,
                              std::span<const std::uint64_t> observed = {}, double observed_value = 1.0,
                              const SemanticTrainConfig& config = {});

/// Propagates a new style of `source` to every capsule that consumes it,
/// parents after children. Returns the capsules that changed, in order.
std::vector<std::size_t> inherit_attribute(CapsuleNetwork& network, std::size_t source, const std::string& name,
                                           const SemanticTrainConfig& config = {});

}  // namespace scenecaps
