#include "scenecaps/grammar.hpp"

#include <algorithm>
#include <functional>
#include <set>

namespace scenecaps {

using nlohmann::json;

std::size_t ParseTree::leaf_count() const {
  if (children.empty()) return 1;
  std::size_t n = 0;
  for (const auto& c : children) n += c.leaf_count();
  return n;
}

std::optional<std::size_t> slot_index(const AttributeSchema& schema, const std::string& slot) {
  const auto names = schema.slot_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == slot) return i;
  return std::nullopt;
}

namespace {

struct ConstraintFn {
  const char* name;
  std::size_t arity;
};

constexpr ConstraintFn kConstraintFns[] = {
    {"const", 1},  {"copy", 0},       {"affine", 2},  {"offset_x", 2},
    {"offset_y", 2}, {"rot_offset", 1}, {"scale_w", 1}, {"scale_h", 1},
};

const ConstraintFn* find_fn(const std::string& name) {
  for (const auto& f : kConstraintFns)
    if (name == f.name) return &f;
  return nullptr;
}

std::string_view kind_name(SymbolKind k) {
  switch (k) {
    case SymbolKind::terminal: return "terminal";
    case SymbolKind::nonterminal: return "nonterminal";
    case SymbolKind::axiom: return "axiom";
  }
  return "terminal";
}

SymbolKind parse_kind(const std::string& s) {
  if (s == "terminal") return SymbolKind::terminal;
  if (s == "nonterminal") return SymbolKind::nonterminal;
  if (s == "axiom") return SymbolKind::axiom;
  throw DataError("unknown symbol kind '" + s + "'");
}

}  // namespace

double evaluate_constraint(const Constraint& c, const AttributeVector& parent, const AttributeSchema& parent_schema,
                           const AttributeSchema& child_schema) {
  const auto& p = c.params;
  auto parent_slot = [&]() -> double {
    auto idx = slot_index(parent_schema, c.slot);
    if (!idx) throw GrammarError("constraint copies slot '" + c.slot + "' missing on parent");
    return parent.flat()[*idx];
  };
  (void)child_schema;
  if (c.fn == "const") return p[0];
  if (c.fn == "copy") return parent_slot();
  if (c.fn == "affine") return p[0] * parent_slot() + p[1];
  if (c.fn == "offset_x" || c.fn == "offset_y") {
    const Vec2 off = rotate({p[0] * parent.size.x, p[1] * parent.size.y}, parent.rot);
    return c.fn == "offset_x" ? parent.pos.x + off.x : parent.pos.y + off.y;
  }
  if (c.fn == "rot_offset") return wrap_unit(parent.rot + p[0]);
  if (c.fn == "scale_w") return p[0] * parent.size.x;
  if (c.fn == "scale_h") return p[0] * parent.size.y;
  throw GrammarError("unknown constraint function '" + c.fn + "'");
}

SymbolId Grammar::add_symbol(const std::string& name, SymbolKind kind, const std::vector<AttributeSpec>& attrs,
                             std::optional<Shape> shape) {
  if (name.empty()) throw GrammarError("symbol name must be nonempty");
  if (find(name)) throw GrammarError("duplicate symbol '" + name + "'");
  if (kind == SymbolKind::axiom && shape) throw GrammarError("terminal '" + name + "' cannot be declared as axiom");
  if (kind != SymbolKind::terminal && shape) throw GrammarError("only terminals carry a draw function");
  if (kind == SymbolKind::terminal && !shape) shape = parse_shape(name);
  Symbol s{name, kind, AttributeSchema(attrs), shape};
  symbols_.push_back(std::move(s));
  return SymbolId{static_cast<std::uint32_t>(symbols_.size() - 1)};
}

std::optional<SymbolId> Grammar::find(const std::string& name) const {
  for (std::size_t i = 0; i < symbols_.size(); ++i)
    if (symbols_[i].name == name) return SymbolId{static_cast<std::uint32_t>(i)};
  return std::nullopt;
}

SymbolId Grammar::require(const std::string& name) const {
  auto id = find(name);
  if (!id) throw GrammarError("unknown symbol '" + name + "'");
  return *id;
}

std::vector<RuleId> Grammar::rules_for(SymbolId lhs) const {
  std::vector<RuleId> out;
  for (std::size_t i = 0; i < rules_.size(); ++i)
    if (rules_[i].lhs == lhs) out.push_back(RuleId{static_cast<std::uint32_t>(i)});
  return out;
}

bool Grammar::reaches(SymbolId from, SymbolId target) const {
  std::vector<SymbolId> stack{from};
  std::set<SymbolId> seen;
  while (!stack.empty()) {
    SymbolId s = stack.back();
    stack.pop_back();
    if (s == target) return true;
    if (!seen.insert(s).second) continue;
    for (const auto& r : rules_)
      if (r.lhs == s) stack.insert(stack.end(), r.rhs.begin(), r.rhs.end());
  }
  return false;
}

RuleId Grammar::add_rule(SymbolId lhs, std::vector<SymbolId> rhs, std::vector<Constraint> constraints) {
  if (lhs.value >= symbols_.size()) throw GrammarError("rule lhs does not exist");
  if (symbol(lhs).kind == SymbolKind::terminal) throw GrammarError("rule lhs '" + symbol(lhs).name + "' is a terminal");
  if (rhs.empty()) throw GrammarError("rule rhs must be nonempty");
  for (SymbolId s : rhs) {
    if (s.value >= symbols_.size()) throw GrammarError("rule rhs symbol does not exist");
    if (s == lhs || reaches(s, lhs))
      throw GrammarError("rule " + symbol(lhs).name + " -> " + symbol(s).name + " introduces a cycle");
  }
  std::size_t expected = 0;
  for (SymbolId s : rhs) expected += symbol(s).schema.dims();
  if (constraints.size() != expected)
    throw GrammarError("rule for '" + symbol(lhs).name + "' needs " + std::to_string(expected) +
                       " constraints, got " + std::to_string(constraints.size()));
  std::set<std::pair<std::size_t, std::size_t>> covered;
  for (const auto& c : constraints) {
    if (c.child >= rhs.size()) throw GrammarError("constraint targets a child outside the rhs");
    auto idx = slot_index(symbol(rhs[c.child]).schema, c.slot);
    if (!idx) throw GrammarError("constraint targets unknown slot '" + c.slot + "'");
    const ConstraintFn* fn = find_fn(c.fn);
    if (!fn) throw GrammarError("unknown constraint function '" + c.fn + "'");
    if (c.params.size() != fn->arity)
      throw GrammarError("constraint '" + c.fn + "' takes " + std::to_string(fn->arity) + " parameters");
    if ((c.fn == "copy" || c.fn == "affine") && !slot_index(symbol(lhs).schema, c.slot))
      throw GrammarError("constraint copies slot '" + c.slot + "' missing on parent");
    if (!covered.insert({c.child, *idx}).second) throw GrammarError("slot '" + c.slot + "' constrained twice");
  }
  rules_.push_back(Rule{lhs, std::move(rhs), std::move(constraints)});
  return RuleId{static_cast<std::uint32_t>(rules_.size() - 1)};
}

ParseTree Grammar::expand(SymbolId axiom, const AttributeVector& attrs, std::mt19937_64& rng) const {
  if (axiom.value >= symbols_.size()) throw GrammarError("axiom does not exist");
  if (attrs.dims() != symbol(axiom).schema.dims())
    throw DimensionError("axiom attributes do not match the symbol's declaration");
  ParseTree root{axiom, attrs, std::nullopt, {}};
  expand_into(root, rng, 0);
  return root;
}

namespace {

void clamp_to_schema(AttributeVector& a, const AttributeSchema& schema) {
  auto flat = a.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const auto& spec = schema.spec_for_slot(i);
    flat[i] = std::clamp(i == 2 ? wrap_unit(flat[i]) : flat[i], spec.lo, spec.hi);
  }
  a = AttributeVector::from_flat(flat);
}

}  // namespace

void Grammar::expand_into(ParseTree& node, std::mt19937_64& rng, int depth) const {
  const Symbol& sym = symbol(node.symbol);
  if (sym.kind == SymbolKind::terminal) return;
  if (depth > static_cast<int>(symbols_.size())) throw GrammarError("expansion depth exceeded");
  const auto candidates = rules_for(node.symbol);
  if (candidates.empty()) throw GrammarError("no rule for nonterminal '" + sym.name + "'");
  const RuleId chosen = candidates[candidates.size() == 1 ? 0 : rng() % candidates.size()];
  const Rule& r = rule(chosen);
  node.rule = chosen;
  node.children.clear();
  for (SymbolId child : r.rhs) {
    ParseTree t{child, {}, std::nullopt, {}};
    t.attrs.style.assign(symbol(child).schema.style_count(), 0.0);
    node.children.push_back(std::move(t));
  }
  std::vector<std::vector<double>> flats;
  for (const auto& c : node.children) flats.push_back(c.attrs.flat());
  for (const auto& c : r.constraints) {
    const auto& child_schema = symbol(r.rhs[c.child]).schema;
    flats[c.child][*slot_index(child_schema, c.slot)] = evaluate_constraint(c, node.attrs, sym.schema, child_schema);
  }
  for (std::size_t i = 0; i < node.children.size(); ++i) {
    node.children[i].attrs = AttributeVector::from_flat(flats[i]);
    clamp_to_schema(node.children[i].attrs, symbol(r.rhs[i]).schema);
    expand_into(node.children[i], rng, depth + 1);
  }
}

std::vector<SymbolId> Grammar::topological_order() const {
  std::vector<int> state(symbols_.size(), 0);
  std::vector<SymbolId> order;
  std::function<void(SymbolId)> visit = [&](SymbolId s) {
    if (state[s.value] == 2) return;
    state[s.value] = 1;
    for (const auto& r : rules_)
      if (r.lhs == s)
        for (SymbolId c : r.rhs) visit(c);
    state[s.value] = 2;
    order.push_back(s);
  };
  for (std::size_t i = 0; i < symbols_.size(); ++i) visit(SymbolId{static_cast<std::uint32_t>(i)});
  std::reverse(order.begin(), order.end());
  return order;
}

namespace {

void draw_leaves(const Grammar& g, const ParseTree& t, PixelLayer& canvas) {
  if (t.children.empty()) {
    const Symbol& s = g.symbol(t.symbol);
    if (s.kind == SymbolKind::terminal && s.shape) composite_over(canvas, PrimitiveParams::from_attributes(*s.shape, t.attrs));
    return;
  }
  for (const auto& c : t.children) draw_leaves(g, c, canvas);
}

}  // namespace

PixelLayer draw_tree(const Grammar& grammar, const ParseTree& tree, int width, int height) {
  PixelLayer canvas(width, height, 0.0);
  draw_leaves(grammar, tree, canvas);
  return canvas;
}

json attribute_spec_to_json(const AttributeSpec& s) {
  return json{{"name", s.name},
              {"slot", slot_kind_name(s.slot)},
              {"range", {s.lo, s.hi}},
              {"quantile", {s.quantile.lo, s.quantile.hi}}};
}

AttributeSpec attribute_spec_from_json(const json& j) {
  AttributeSpec s;
  s.name = j.at("name").get<std::string>();
  s.slot = parse_slot_kind(j.value("slot", std::string("style")));
  if (j.contains("range")) {
    s.lo = j["range"].at(0).get<double>();
    s.hi = j["range"].at(1).get<double>();
  }
  if (j.contains("quantile")) {
    s.quantile.lo = j["quantile"].at(0).get<double>();
    s.quantile.hi = j["quantile"].at(1).get<double>();
  }
  return s;
}

json Grammar::to_json() const {
  json syms = json::array();
  for (const auto& s : symbols_) {
    json attrs = json::array();
    for (const auto& spec : s.schema.specs()) attrs.push_back(attribute_spec_to_json(spec));
    json js{{"name", s.name}, {"kind", kind_name(s.kind)}, {"attrs", attrs}};
    if (s.shape) js["shape"] = shape_name(*s.shape);
    syms.push_back(std::move(js));
  }
  json rules = json::array();
  for (const auto& r : rules_) {
    json rhs = json::array();
    for (SymbolId s : r.rhs) rhs.push_back(symbol(s).name);
    json cs = json::array();
    for (const auto& c : r.constraints)
      cs.push_back({{"target", std::to_string(c.child) + "." + c.slot}, {"fn", c.fn}, {"params", c.params}});
    rules.push_back({{"lhs", symbol(r.lhs).name}, {"rhs", rhs}, {"constraints", cs}});
  }
  return json{{"symbols", syms}, {"rules", rules}};
}

Grammar Grammar::from_json(const json& doc) {
  try {
    Grammar g;
    for (const auto& js : doc.at("symbols")) {
      std::vector<AttributeSpec> specs;
      for (const auto& a : js.value("attrs", json::array())) specs.push_back(attribute_spec_from_json(a));
      std::optional<Shape> shape;
      if (js.contains("shape")) {
        shape = parse_shape(js["shape"].get<std::string>());
        if (!shape) throw DataError("unknown shape '" + js["shape"].get<std::string>() + "'");
      }
      g.add_symbol(js.at("name").get<std::string>(), parse_kind(js.at("kind").get<std::string>()), specs, shape);
    }
    for (const auto& jr : doc.value("rules", json::array())) {
      std::vector<SymbolId> rhs;
      for (const auto& n : jr.at("rhs")) rhs.push_back(g.require(n.get<std::string>()));
      std::vector<Constraint> cs;
      for (const auto& jc : jr.value("constraints", json::array())) {
        const auto target = jc.at("target").get<std::string>();
        const auto dot = target.find('.');
        if (dot == std::string::npos) throw DataError("constraint target must be '<child>.<slot>'");
        Constraint c;
        c.child = std::stoul(target.substr(0, dot));
        c.slot = target.substr(dot + 1);
        c.fn = jc.at("fn").get<std::string>();
        c.params = jc.value("params", std::vector<double>{});
        cs.push_back(std::move(c));
      }
      g.add_rule(g.require(jr.at("lhs").get<std::string>()), std::move(rhs), std::move(cs));
    }
    return g;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed grammar document: ") + e.what());
  }
}

}  // namespace scenecaps
