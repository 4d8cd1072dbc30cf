#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "scenecaps/grammar.hpp"
#include "scenecaps/network.hpp"

namespace testing_support {

inline std::filesystem::path data_dir() { return SCENECAPS_DATA_DIR; }

inline scenecaps::Grammar space_grammar() {
  std::ifstream in(data_dir() / "grammars" / "space.json");
  return scenecaps::Grammar::from_json(nlohmann::json::parse(in));
}

/// Copy of the shared trained network in a scratch directory of its own.
inline std::filesystem::path fresh_network(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("scenecaps_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::copy(SCENECAPS_TEST_NETWORK, dir, std::filesystem::copy_options::recursive);
  return dir;
}

inline void leaves(const scenecaps::Grammar& g, const scenecaps::ParseTree& t,
                   std::vector<std::pair<std::string, scenecaps::AttributeVector>>& out) {
  if (t.children.empty()) out.emplace_back(g.symbol(t.symbol).name, t.attrs);
  for (const auto& c : t.children) leaves(g, c, out);
}

}  // namespace testing_support
