#pragma once

// Helpers shared by the unit tests.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fruitcomm/dataset.hpp"

namespace fruitcomm::testing {

inline const CategoryTable& shipped_table() {
  static const CategoryTable table = load_category_table(default_table_path());
  return table;
}

inline Instance one_hot(ObjectKind kind, std::size_t index) {
  Instance inst;
  inst.kind = kind;
  inst.values.assign(kind == ObjectKind::fruit ? kFruitFeatureCount : kToolFeatureCount, 0.0);
  if (index < inst.values.size()) inst.values[index] = 1.0;
  return inst;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("fruitcomm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}


}  // namespace fruitcomm::testing
