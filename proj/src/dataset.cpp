#include "fruitcomm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace fruitcomm {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

double parse_double(const std::string& text, const std::string& what) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) throw DataError("cannot parse number '" + text + "' in " + what);
  return value;
}

ObjectKind parse_kind(const std::string& s, std::size_t line) {
  if (s == "fruit") return ObjectKind::fruit;
  if (s == "tool") return ObjectKind::tool;
  throw DataError("line " + std::to_string(line) + ": unknown object kind '" + s + "'");
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

const char* to_string(ObjectKind kind) { return kind == ObjectKind::fruit ? "fruit" : "tool"; }

const std::array<std::string, kFruitFeatureCount>& fruit_feature_names() {
  static const std::array<std::string, kFruitFeatureCount> names = {
      "is crunchy", "has skin", "has peel",  "is small", "has rough skin", "has a pit",
      "has milk",   "has a shell", "has hair", "is prickly", "has seeds"};
  return names;
}

const std::array<std::string, kToolFeatureCount>& tool_feature_names() {
  static const std::array<std::string, kToolFeatureCount> names = {
      "has a handle", "is sharp",   "has a blade", "has a head",      "is small",
      "has a sheath", "has prongs", "is loud",     "is serrated",     "has handles",
      "has blades",   "has a round end", "is adorned with feathers", "is heavy", "has jaws"};
  return names;
}

void CategoryTable::validate() const {
  const auto& ff = fruitcomm::fruit_feature_names();
  const auto& tf = fruitcomm::tool_feature_names();
  if (fruit_feature_names.size() != kFruitFeatureCount)
    throw DataError("expected 11 fruit features, got " + std::to_string(fruit_feature_names.size()));
  if (tool_feature_names.size() != kToolFeatureCount)
    throw DataError("expected 15 tool features, got " + std::to_string(tool_feature_names.size()));
  for (std::size_t i = 0; i < kFruitFeatureCount; ++i)
    if (fruit_feature_names[i] != ff[i])
      throw DataError("fruit feature " + std::to_string(i) + " must be '" + ff[i] + "', got '" +
                      fruit_feature_names[i] + "'");
  for (std::size_t i = 0; i < kToolFeatureCount; ++i)
    if (tool_feature_names[i] != tf[i])
      throw DataError("tool feature " + std::to_string(i) + " must be '" + tf[i] + "', got '" +
                      tool_feature_names[i] + "'");
  if (fruit_categories.size() != kFruitCategoryCount)
    throw DataError("expected 31 fruit categories, got " + std::to_string(fruit_categories.size()));
  if (tool_categories.size() != kToolCategoryCount)
    throw DataError("expected 16 tool categories, got " + std::to_string(tool_categories.size()));

  for (ObjectKind kind : {ObjectKind::fruit, ObjectKind::tool}) {
    std::set<std::string> seen;
    for (const Category& c : categories(kind)) {
      if (!seen.insert(c.name).second)
        throw DataError(std::string("duplicate ") + to_string(kind) + " category '" + c.name + "'");
      if (c.means.size() != feature_count(kind) || c.kinds.size() != feature_count(kind))
        throw DataError(std::string("category '") + c.name + "': expected " +
                        std::to_string(feature_count(kind)) + " " + to_string(kind) + " features");
      for (std::size_t i = 0; i < c.means.size(); ++i)
        if (!(c.means[i] >= 0.0 && c.means[i] <= 1.0))
          throw DataError("category '" + c.name + "', feature '" +
                          (kind == ObjectKind::fruit ? fruit_feature_names : tool_feature_names)[i] +
                          "': mean out of [0,1]");
    }
  }

  bool has_tool_group = false;
  for (const ExclusionGroup& g : exclusion_groups) {
    for (std::size_t f : g.features)
      if (f >= feature_count(g.kind)) throw DataError("exclusion group feature index out of range");
    std::set<std::size_t> members(g.features.begin(), g.features.end());
    if (g.kind == ObjectKind::tool && members.count(2) && members.count(6) && members.count(10))
      has_tool_group = true;
  }
  if (!has_tool_group)
    throw DataError("exclusion groups must contain {has prongs, has a blade, has blades}");
}

std::size_t CategoryTable::category_index(ObjectKind kind, const std::string& name) const {
  const auto& list = categories(kind);
  for (std::size_t i = 0; i < list.size(); ++i)
    if (list[i].name == name) return i;
  throw DataError(std::string("unknown ") + to_string(kind) + " category '" + name + "'");
}

CategoryTable parse_category_table(std::istream& in) {
  CategoryTable table;
  std::vector<std::pair<ObjectKind, std::vector<std::string>>> pending_groups;
  std::string raw;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError("line " + std::to_string(line_no) + ": " + msg);
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = strip_cr(raw);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split(line, '\t');
    const std::string& tag = fields[0];

    if (tag == "features") {
      if (fields.size() < 2) throw fail("features row needs a kind");
      ObjectKind kind = parse_kind(fields[1], line_no);
      std::vector<std::string> names(fields.begin() + 2, fields.end());
      (kind == ObjectKind::fruit ? table.fruit_feature_names : table.tool_feature_names) = names;
      continue;
    }
    if (tag == "exclusive") {
      if (fields.size() != 3) throw fail("exclusive row must be: exclusive<TAB>kind<TAB>a|b|...");
      pending_groups.emplace_back(parse_kind(fields[1], line_no), split(fields[2], '|'));
      continue;
    }

    ObjectKind kind = parse_kind(tag, line_no);
    const auto& header = kind == ObjectKind::fruit ? table.fruit_feature_names : table.tool_feature_names;
    const std::size_t expected = kind == ObjectKind::fruit ? kFruitFeatureCount : kToolFeatureCount;
    if (header.empty()) throw fail(std::string("record before the ") + to_string(kind) + " features header");
    if (fields.size() < 2 || fields[1].empty()) throw fail("missing category name");
    if (fields.size() - 2 != expected || header.size() != expected)
      throw fail("expected " + std::to_string(expected) + " " + to_string(kind) + " features, got " +
                 std::to_string(fields.size() - 2));

    Category cat;
    cat.name = fields[1];
    for (std::size_t i = 0; i < expected; ++i) {
      const std::string& cell = fields[i + 2];
      auto eq = cell.rfind('=');
      auto colon = cell.rfind(':');
      if (eq == std::string::npos || colon == std::string::npos || colon < eq)
        throw fail("feature cell '" + cell + "' is not name=mean:kind");
      std::string name = cell.substr(0, eq);
      if (name != header[i])
        throw fail("category '" + cat.name + "': feature " + std::to_string(i) + " is '" + name +
                   "', expected '" + header[i] + "'");
      double mean = 0.0;
      try {
        mean = parse_double(cell.substr(eq + 1, colon - eq - 1), "feature '" + name + "'");
      } catch (const DataError& e) {
        throw fail(e.what());
      }
      if (!(mean >= 0.0 && mean <= 1.0))
        throw fail("category '" + cat.name + "', feature '" + name + "': mean out of [0,1]");
      std::string flag = cell.substr(colon + 1);
      FeatureKind fk;
      if (flag == "b")
        fk = FeatureKind::binary;
      else if (flag == "c")
        fk = FeatureKind::continuous;
      else
        throw fail("feature '" + name + "': kind flag must be b or c");
      cat.means.push_back(mean);
      cat.kinds.push_back(fk);
    }
    (kind == ObjectKind::fruit ? table.fruit_categories : table.tool_categories).push_back(std::move(cat));
  }

  for (auto& [kind, names] : pending_groups) {
    const auto& header = kind == ObjectKind::fruit ? table.fruit_feature_names : table.tool_feature_names;
    ExclusionGroup g{kind, {}};
    for (const auto& n : names) {
      auto it = std::find(header.begin(), header.end(), n);
      if (it == header.end()) throw DataError("exclusion group names unknown feature '" + n + "'");
      g.features.push_back(static_cast<std::size_t>(it - header.begin()));
    }
    table.exclusion_groups.push_back(std::move(g));
  }

  table.validate();
  return table;
}

CategoryTable load_category_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open category table " + path.string());
  return parse_category_table(in);
}

std::filesystem::path default_table_path() {
  if (const char* dir = std::getenv("FRUITCOMM_DATA_DIR")) return std::filesystem::path(dir) / "categories.tsv";
#ifdef FRUITCOMM_DATA_DIR
  return std::filesystem::path(FRUITCOMM_DATA_DIR) / "categories.tsv";
#else
  return "data/categories.tsv";
#endif
}

bool satisfies_exclusions(const CategoryTable& table, const Instance& instance) {
  for (const ExclusionGroup& g : table.exclusion_groups) {
    if (g.kind != instance.kind) continue;
    int active = 0;
    for (std::size_t f : g.features)
      if (instance.values[f] > 0.0) ++active;
    if (active > 1) return false;
  }
  return true;
}

Instance sample_instance(const CategoryTable& table, ObjectKind kind, std::size_t category, Rng& rng) {
  const Category& cat = table.categories(kind).at(category);
  Instance inst;
  inst.kind = kind;
  inst.category = category;
  inst.category_name = cat.name;
  inst.values.resize(cat.means.size());
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (std::size_t i = 0; i < cat.means.size(); ++i) {
      const double mu = cat.means[i];
      if (cat.kinds[i] == FeatureKind::binary) {
        inst.values[i] = rng.bernoulli(mu) ? 1.0 : 0.0;
      } else {
        inst.values[i] = std::clamp(rng.uniform(mu - 0.1, mu + 0.1), 0.0, 1.0);
      }
    }
    if (satisfies_exclusions(table, inst)) return inst;
  }
  throw DataError("category '" + cat.name + "': exclusion group unsatisfiable");
}

UtilityMatrices UtilityMatrices::defaults() {
  UtilityMatrices m;
  // Columns: cut, spear, lift, break, peel, pit remover.
  m.tool_map = {
      0, 0, 0, 0, 0, 0,           // has a handle
      0, 0, 0, 0, 0, 0,           // is sharp
      1, 0.5, 0, 0, 1, 0,         // has a blade
      0, 0, 0, 1, 0, 0,           // has a head
      0, 0, 0, 0, 0, 0.25,        // is small
      0, 0, 0, 0, 0, 0,           // has a sheath
      0.5, 1, 0.25, 0, 0.25, 0,   // has prongs
      0, 0, 0, 0, 0, 0,           // is loud
      0.5, 0, 0, 0, 0, 0,         // is serrated
      0, 0, 0, 0, 0, 0,           // has handles
      1, 0.5, 0, 0, 0.5, 0,       // has blades
      0.25, 0, 1, 0, 0, 1,        // has a round end
      0, 0, 0, 0, 0, 0,           // is adorned with feathers
      0, 0, 0, 0.5, 0, 0,         // is heavy
      0, 0, 1, 0, 0, 0.5,         // has jaws
  };
  // Columns: hard, pit, shell, pick, peel, empty inside.
  m.fruit_map = {
      1, 0, 0, 0, 0, 0,    // is crunchy
      0, 0, 0, 0, 1, 0,    // has skin
      0, 0, 0, 0, 1, 0,    // has peel
      0, 0, 0, 1, 0, 0,    // is small
      0, 0, 0.5, 0, 0, 0,  // has rough skin
      0, 1, 0, 0, 0, 0,    // has a pit
      0, 0, 0, 0, 0, 1,    // has milk
      0, 0, 1, 0, 0, 0,    // has a shell
      0, 0, 0, 0, 0.5, 0,  // has hair
      0, 0, 0, 0, 0.5, 0,  // is prickly
      0, 0, 0, 0, 0, 1,    // has seeds
  };
  // Rows: tool functions; columns: fruit functions.
  m.affinity = {
      1, 0, 0.5, 0, 0.5, 0,  // cut
      0, 0, 0, 1, 0, 0,      // spear
      0, 0, 0, 0.5, 0, 1,    // lift
      0.5, 0, 1, 0, 0, 0,    // break
      0, 0, 0, 0, 1, 0,      // peel
      0, 1, 0, 0, 0, 0,      // pit remover
  };
  return m;
}

double utility(const Instance& tool, const Instance& fruit, const UtilityMatrices& m) {
  const std::size_t tool_n = m.tool_map.size() / kFunctionalCount;
  const std::size_t fruit_n = m.fruit_map.size() / kFunctionalCount;
  if (tool.kind != ObjectKind::tool || fruit.kind != ObjectKind::fruit)
    throw DataError("utility: expected (tool, fruit) instances");
  if (tool.values.size() != tool_n || fruit.values.size() != fruit_n ||
      m.affinity.size() != kFunctionalCount * kFunctionalCount)
    throw DataError("utility: dimension mismatch");

  std::array<double, kFunctionalCount> tool_fn{};
  std::array<double, kFunctionalCount> fruit_fn{};
  for (std::size_t i = 0; i < tool_n; ++i)
    for (std::size_t k = 0; k < kFunctionalCount; ++k) tool_fn[k] += tool.values[i] * m.tool_map[i * kFunctionalCount + k];
  for (std::size_t i = 0; i < fruit_n; ++i)
    for (std::size_t k = 0; k < kFunctionalCount; ++k)
      fruit_fn[k] += fruit.values[i] * m.fruit_map[i * kFunctionalCount + k];

  double u = 0.0;
  for (std::size_t r = 0; r < kFunctionalCount; ++r)
    for (std::size_t c = 0; c < kFunctionalCount; ++c)
      u += tool_fn[r] * m.affinity[r * kFunctionalCount + c] * fruit_fn[c];
  return u + m.offset;
}

std::array<bool, 2> best_tool(const GameSample& sample, const UtilityMatrices& m) {
  const double u1 = utility(sample.tool1, sample.fruit, m);
  const double u2 = utility(sample.tool2, sample.fruit, m);
  return {u1 >= u2, u2 >= u1};
}

CategoryPartition partition_fruits(const CategoryTable& table, std::uint64_t seed) {
  std::vector<std::size_t> order(table.fruit_categories.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "fruit-partition"));
  rng.shuffle(order);
  CategoryPartition p;
  const std::size_t n = order.size();
  const std::size_t held = 5;
  if (n < 2 * held + 1) throw DataError("too few fruit categories to partition");
  p.in_domain.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n - 2 * held));
  p.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n - 2 * held),
                      order.begin() + static_cast<std::ptrdiff_t>(n - held));
  p.transfer.assign(order.begin() + static_cast<std::ptrdiff_t>(n - held), order.end());
  std::sort(p.in_domain.begin(), p.in_domain.end());
  std::sort(p.validation.begin(), p.validation.end());
  std::sort(p.transfer.begin(), p.transfer.end());
  return p;
}

std::vector<GameSample> generate_samples(const CategoryTable& table,
                                         const std::vector<std::size_t>& fruit_categories,
                                         std::size_t count, std::uint64_t seed) {
  struct Cell {
    std::size_t fruit, tool_a, tool_b;
  };
  std::vector<Cell> cells;
  const std::size_t n_tools = table.tool_categories.size();
  for (std::size_t f : fruit_categories)
    for (std::size_t a = 0; a < n_tools; ++a)
      for (std::size_t b = a + 1; b < n_tools; ++b) cells.push_back({f, a, b});
  if (cells.empty()) throw DataError("generate_samples: no cells");

  // Every cell gets count / cells samples; a seeded subset gets one more.
  std::vector<std::size_t> per_cell(cells.size(), count / cells.size());
  std::vector<std::size_t> order(cells.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng cell_rng(derive_seed(seed, "cells"));
  cell_rng.shuffle(order);
  for (std::size_t i = 0; i < count % cells.size(); ++i) ++per_cell[order[i]];

  auto quantize = [](Instance& inst) {
    for (double& v : inst.values) v = round6(v);
  };

  std::vector<GameSample> samples;
  samples.reserve(count);
  Rng rng(derive_seed(seed, "instances"));
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t k = 0; k < per_cell[c]; ++k) {
      GameSample s;
      s.fruit = sample_instance(table, ObjectKind::fruit, cells[c].fruit, rng);
      bool swap = rng.bernoulli(0.5);
      s.tool1 = sample_instance(table, ObjectKind::tool, swap ? cells[c].tool_b : cells[c].tool_a, rng);
      s.tool2 = sample_instance(table, ObjectKind::tool, swap ? cells[c].tool_a : cells[c].tool_b, rng);
      quantize(s.fruit);
      quantize(s.tool1);
      quantize(s.tool2);
      samples.push_back(std::move(s));
    }
  }
  Rng shuffle_rng(derive_seed(seed, "order"));
  shuffle_rng.shuffle(samples);
  return samples;
}

DatasetSplit generate_split(const CategoryTable& table, std::uint64_t seed, const SplitCounts& counts) {
  DatasetSplit split;
  split.seed = seed;
  split.partition = partition_fruits(table, seed);
  split.in_domain_train = generate_samples(table, split.partition.in_domain, counts.train, derive_seed(seed, "train"));
  split.in_domain_test = generate_samples(table, split.partition.in_domain, counts.test, derive_seed(seed, "test"));
  split.validation =
      generate_samples(table, split.partition.validation, counts.validation, derive_seed(seed, "validation"));
  split.transfer = generate_samples(table, split.partition.transfer, counts.transfer, derive_seed(seed, "transfer"));
  return split;
}

void write_samples(std::ostream& out, const std::vector<GameSample>& samples, const std::string& set_name,
                   std::uint64_t seed, const std::string& config_hash) {
  out << "# " << kSplitFormatVersion << "\tset=" << set_name << "\tseed=" << seed << "\tcount=" << samples.size();
  if (!config_hash.empty()) out << "\tconfig_hash=" << config_hash;
  out << "\n";
  out << "# fruit\ttool1\ttool2\tfruit values (11)\ttool1 values (15)\ttool2 values (15)\n";
  char buf[32];
  auto put_values = [&](const Instance& inst) {
    for (double v : inst.values) {
      std::snprintf(buf, sizeof buf, "\t%.6f", v);
      out << buf;
    }
  };
  for (const GameSample& s : samples) {
    out << s.fruit.category_name << '\t' << s.tool1.category_name << '\t' << s.tool2.category_name;
    put_values(s.fruit);
    put_values(s.tool1);
    put_values(s.tool2);
    out << '\n';
  }
}

std::vector<GameSample> read_samples(std::istream& in, const CategoryTable& table) {
  std::vector<GameSample> samples;
  std::string raw;
  std::size_t line_no = 0;
  const std::size_t expected = 3 + kFruitFeatureCount + 2 * kToolFeatureCount;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = strip_cr(raw);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split(line, '\t');
    if (fields.size() != expected)
      throw DataError("split line " + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                      " fields, got " + std::to_string(fields.size()));
    auto make = [&](ObjectKind kind, const std::string& name, std::size_t first, std::size_t n) {
      Instance inst;
      inst.kind = kind;
      inst.category = table.category_index(kind, name);
      inst.category_name = name;
      inst.values.reserve(n);
      for (std::size_t i = 0; i < n; ++i)
        inst.values.push_back(parse_double(fields[first + i], "split line " + std::to_string(line_no)));
      return inst;
    };
    GameSample s;
    s.fruit = make(ObjectKind::fruit, fields[0], 3, kFruitFeatureCount);
    s.tool1 = make(ObjectKind::tool, fields[1], 3 + kFruitFeatureCount, kToolFeatureCount);
    s.tool2 = make(ObjectKind::tool, fields[2], 3 + kFruitFeatureCount + kToolFeatureCount, kToolFeatureCount);
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_samples_file(const std::filesystem::path& path, const std::vector<GameSample>& samples,
                        const std::string& set_name, std::uint64_t seed, const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_samples(out, samples, set_name, seed, config_hash);
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<GameSample> read_samples_file(const std::filesystem::path& path, const CategoryTable& table) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file " + path.string());
  return read_samples(in, table);
}

}  // namespace fruitcomm
