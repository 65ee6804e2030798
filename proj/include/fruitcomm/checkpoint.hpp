#pragma once

// Versioned text container: ordered metadata plus named row-major tensors.
// Numbers are written in shortest round-trip form, so read(write(x)) == x
// bit for bit.
//
//   fruitcomm-checkpoint 1
//   meta<TAB>key<TAB>value
//   tensor<TAB>name<TAB>rows<TAB>cols<TAB>v0 v1 ...

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fruitcomm/autodiff.hpp"

namespace fruitcomm {

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<NamedTensor> tensors;

  void set_meta(const std::string& key, const std::string& value);
  std::optional<std::string> get_meta(const std::string& key) const;
  std::string require_meta(const std::string& key) const;
  const NamedTensor* find(const std::string& name) const;
  const NamedTensor& require(const std::string& name) const;
};

std::string format_double(double v);

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
/// Writes to a temporary file and renames, so a crash never leaves a torn file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fruitcomm
