#pragma once

// Fruit and tool categories, instance sampling, the utility function and the
// train/test/validation/transfer splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "fruitcomm/rng.hpp"

namespace fruitcomm {

inline constexpr std::size_t kFruitFeatureCount = 11;
inline constexpr std::size_t kToolFeatureCount = 15;
inline constexpr std::size_t kFunctionalCount = 6;
inline constexpr std::size_t kFruitCategoryCount = 31;
inline constexpr std::size_t kToolCategoryCount = 16;

/// Raised for malformed tables, split files and invariant violations.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ObjectKind { fruit, tool };
enum class FeatureKind { binary, continuous };

const char* to_string(ObjectKind kind);

/// Canonical feature names, in table order.
const std::array<std::string, kFruitFeatureCount>& fruit_feature_names();
const std::array<std::string, kToolFeatureCount>& tool_feature_names();

struct Category {
  std::string name;
  std::vector<double> means;  // one mean per feature, each in [0,1]
  std::vector<FeatureKind> kinds;
};

/// Features of one kind that may not be simultaneously non-zero.
struct ExclusionGroup {
  ObjectKind kind = ObjectKind::tool;
  std::vector<std::size_t> features;
};

struct CategoryTable {
  std::vector<Category> fruit_categories;
  std::vector<Category> tool_categories;
  std::vector<std::string> fruit_feature_names;
  std::vector<std::string> tool_feature_names;
  std::vector<ExclusionGroup> exclusion_groups;

  /// Throws DataError naming the offending category/feature.
  void validate() const;

  const std::vector<Category>& categories(ObjectKind kind) const {
    return kind == ObjectKind::fruit ? fruit_categories : tool_categories;
  }
  std::size_t feature_count(ObjectKind kind) const {
    return kind == ObjectKind::fruit ? fruit_feature_names.size() : tool_feature_names.size();
  }
  /// Index of a category by name; throws DataError when absent.
  std::size_t category_index(ObjectKind kind, const std::string& name) const;
};

/// Parses the line-oriented table format. Errors carry the line number.
CategoryTable parse_category_table(std::istream& in);
CategoryTable load_category_table(const std::filesystem::path& path);

/// Path of the table shipped with the project.
std::filesystem::path default_table_path();

struct Instance {
  ObjectKind kind = ObjectKind::fruit;
  std::vector<double> values;
  std::size_t category = 0;  // index into the table's list for `kind`
  std::string category_name;
};

/// Draws one instance: binary features ~ Bernoulli(mean), continuous ones
/// ~ Uniform[mean-0.1, mean+0.1] clamped to [0,1]. Instances violating an
/// exclusion group are redrawn whole.
Instance sample_instance(const CategoryTable& table, ObjectKind kind, std::size_t category,
                         Rng& rng);

/// True when no exclusion group of the instance's kind has two non-zero members.
bool satisfies_exclusions(const CategoryTable& table, const Instance& instance);

/// Tool-feature -> functional (15x6), fruit-feature -> functional (11x6) and
/// tool-functional x fruit-functional (6x6) matrices, row-major.
struct UtilityMatrices {
  std::vector<double> tool_map;   // 15 x 6
  std::vector<double> fruit_map;  // 11 x 6
  std::vector<double> affinity;   // 6 x 6, rows tool functions, cols fruit functions
  double offset = 0.01;

  static UtilityMatrices defaults();
};

/// (f M_F) M^T (t M_T)^T + offset.
double utility(const Instance& tool, const Instance& fruit, const UtilityMatrices& m);

struct GameSample {
  Instance fruit;
  Instance tool1;
  Instance tool2;
};

/// Whether choosing each tool earns the reward; both are winners on a tie.
std::array<bool, 2> best_tool(const GameSample& sample, const UtilityMatrices& m);

struct SplitCounts {
  std::size_t train = 210000;
  std::size_t test = 25000;
  std::size_t validation = 25000;
  std::size_t transfer = 25000;
};

/// Which fruit categories belong to which set (indices into the table).
struct CategoryPartition {
  std::vector<std::size_t> in_domain;   // 21
  std::vector<std::size_t> validation;  // 5
  std::vector<std::size_t> transfer;    // 5
};

struct DatasetSplit {
  std::uint64_t seed = 0;
  CategoryPartition partition;
  std::vector<GameSample> in_domain_train;
  std::vector<GameSample> in_domain_test;
  std::vector<GameSample> validation;
  std::vector<GameSample> transfer;
};

/// Seeded fruit-category partition (21 / 5 / 5).
CategoryPartition partition_fruits(const CategoryTable& table, std::uint64_t seed);

/// Generates all four sets, each balanced over (fruit category x unordered
/// tool-category pair) cells up to +-1. Values are rounded to 6 decimals so
/// that a written-then-read split is identical to the generated one.
DatasetSplit generate_split(const CategoryTable& table, std::uint64_t seed,
                            const SplitCounts& counts = {});

/// Samples for a list of fruit categories, balanced over cells.
std::vector<GameSample> generate_samples(const CategoryTable& table,
                                         const std::vector<std::size_t>& fruit_categories,
                                         std::size_t count, std::uint64_t seed);

inline constexpr const char* kSplitFormatVersion = "fruitcomm-split/1";

void write_samples(std::ostream& out, const std::vector<GameSample>& samples,
                   const std::string& set_name, std::uint64_t seed,
                   const std::string& config_hash = {});
std::vector<GameSample> read_samples(std::istream& in, const CategoryTable& table);

void write_samples_file(const std::filesystem::path& path, const std::vector<GameSample>& samples,
                        const std::string& set_name, std::uint64_t seed,
                        const std::string& config_hash = {});
std::vector<GameSample> read_samples_file(const std::filesystem::path& path,
                                          const CategoryTable& table);

}  // namespace fruitcomm
