#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "scenecaps/attributes.hpp"
#include "scenecaps/sdf.hpp"

namespace scenecaps {

enum class SymbolKind { terminal, nonterminal, axiom };

struct SymbolId {
  std::uint32_t value = 0;
  auto operator<=>(const SymbolId&) const = default;
};

struct RuleId {
  std::uint32_t value = 0;
  auto operator<=>(const RuleId&) const = default;
};

struct Symbol {
  std::string name;
  SymbolKind kind = SymbolKind::terminal;
  AttributeSchema schema;
  std::optional<Shape> shape;  // draw function of a terminal, if any
};

/// One constraint g_j^i: computes a single child slot from the parent's
/// attribute vector. Functions are looked up by name:
///   const(v)            v
///   copy()              parent's slot of the same name
///   affine(a, b)        a · parent[same slot] + b
///   offset_x(dx, dy)    parent.pos.x + (R(parent.rot) · (dx·w, dy·h)).x
///   offset_y(dx, dy)    parent.pos.y + (R(parent.rot) · (dx·w, dy·h)).y
///   rot_offset(d)       wrap(parent.rot + d)
///   scale_w(f)          f · parent.size.w
///   scale_h(f)          f · parent.size.h
struct Constraint {
  std::size_t child = 0;
  std::string slot;  // flattened slot name of the child, e.g. "pos.x"
  std::string fn;
  std::vector<double> params;
};

struct Rule {
  SymbolId lhs;
  std::vector<SymbolId> rhs;  // depth order: later entries are drawn over earlier ones
  std::vector<Constraint> constraints;
};

struct ParseTree {
  SymbolId symbol;
  AttributeVector attrs;
  std::optional<RuleId> rule;
  std::vector<ParseTree> children;

  std::size_t leaf_count() const;
};

class GrammarError : public Error {
 public:
  using Error::Error;
};

/// Attributed, non-recursive context-free grammar.
class Grammar {
 public:
  SymbolId add_symbol(const std::string& name, SymbolKind kind, const std::vector<AttributeSpec>& attrs = {},
                      std::optional<Shape> shape = std::nullopt);
  RuleId add_rule(SymbolId lhs, std::vector<SymbolId> rhs, std::vector<Constraint> constraints);

  ParseTree expand(SymbolId axiom, const AttributeVector& attrs, std::mt19937_64& rng) const;

  const Symbol& symbol(SymbolId id) const { return symbols_.at(id.value); }
  const Rule& rule(RuleId id) const { return rules_.at(id.value); }
  std::optional<SymbolId> find(const std::string& name) const;
  SymbolId require(const std::string& name) const;
  std::vector<RuleId> rules_for(SymbolId lhs) const;
  std::size_t symbol_count() const { return symbols_.size(); }
  std::size_t rule_count() const { return rules_.size(); }

  /// Symbols ordered so that every rule's lhs precedes its rhs symbols.
  std::vector<SymbolId> topological_order() const;

  nlohmann::json to_json() const;
  static Grammar from_json(const nlohmann::json& doc);

 private:
  bool reaches(SymbolId from, SymbolId target) const;
  void expand_into(ParseTree& node, std::mt19937_64& rng, int depth) const;

  std::vector<Symbol> symbols_;
  std::vector<Rule> rules_;
};

double evaluate_constraint(const Constraint& c, const AttributeVector& parent, const AttributeSchema& parent_schema,
                           const AttributeSchema& child_schema);

/// Renders the leaves in depth order (earlier rhs entries first, later ones composited over them).
PixelLayer draw_tree(const Grammar& grammar, const ParseTree& tree, int width, int height);

/// Flattened-slot index of `slot` within `schema`, if present.
std::optional<std::size_t> slot_index(const AttributeSchema& schema, const std::string& slot);

nlohmann::json attribute_spec_to_json(const AttributeSpec& spec);
AttributeSpec attribute_spec_from_json(const nlohmann::json& j);

}  // namespace scenecaps
