#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <tuple>
#include <sstream>

#include "fruitcomm/dataset.hpp"
#include "support.hpp"

using namespace fruitcomm;
using fruitcomm::testing::one_hot;
using fruitcomm::testing::shipped_table;

namespace {

// Independent transcription of the three utility matrices, indexed by name.
enum ToolFn { cut, spear, lift, brk, peel_fn, pit_remove };
enum FruitFn { hard, pit, shell, pick, peel_need, empty };

double brute_force_utility(const std::vector<double>& t, const std::vector<double>& f) {
  double mt[15][6] = {};
  mt[2][cut] = 1, mt[2][spear] = 0.5, mt[2][peel_fn] = 1;
  mt[3][brk] = 1;
  mt[4][pit_remove] = 0.25;
  mt[6][cut] = 0.5, mt[6][spear] = 1, mt[6][lift] = 0.25, mt[6][peel_fn] = 0.25;
  mt[8][cut] = 0.5;
  mt[10][cut] = 1, mt[10][spear] = 0.5, mt[10][peel_fn] = 0.5;
  mt[11][cut] = 0.25, mt[11][lift] = 1, mt[11][pit_remove] = 1;
  mt[13][brk] = 0.5;
  mt[14][lift] = 1, mt[14][pit_remove] = 0.5;
  double mf[11][6] = {};
  mf[0][hard] = 1;
  mf[1][peel_need] = 1;
  mf[2][peel_need] = 1;
  mf[3][pick] = 1;
  mf[4][shell] = 0.5;
  mf[5][pit] = 1;
  mf[6][empty] = 1;
  mf[7][shell] = 1;
  mf[8][peel_need] = 0.5;
  mf[9][peel_need] = 0.5;
  mf[10][empty] = 1;
  double m[6][6] = {};
  m[cut][hard] = 1, m[cut][shell] = 0.5, m[cut][peel_need] = 0.5;
  m[spear][pick] = 1;
  m[lift][pick] = 0.5, m[lift][empty] = 1;
  m[brk][hard] = 0.5, m[brk][shell] = 1;
  m[peel_fn][peel_need] = 1;
  m[pit_remove][pit] = 1;
  // Sum over every index of the triple product, term by term.
  double u = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b)
        for (int j = 0; j < 15; ++j) u += f[i] * mf[i][a] * m[b][a] * t[j] * mt[j][b];
  return u + 0.01;
}

std::string table_text(const std::string& replace_from = {}, const std::string& replace_to = {}) {
  std::string text = fruitcomm::testing::read_file(default_table_path());
  if (!replace_from.empty()) {
    const auto pos = text.find(replace_from);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, replace_from.size(), replace_to);
  }
  return text;
}

}  // namespace

TEST_CASE("shipped table has 31 fruits and 16 tools") {
  const CategoryTable& t = shipped_table();
  CHECK(t.fruit_categories.size() == 31);
  CHECK(t.tool_categories.size() == 16);
  CHECK(t.fruit_feature_names.size() == 11);
  CHECK(t.tool_feature_names.size() == 15);
  CHECK(t.tool_categories[t.category_index(ObjectKind::tool, "knife")].means[2] >= 0.9);
}

TEST_CASE("table parse errors") {
  SUBCASE("missing fruit feature column") {
    std::istringstream in(table_text("\thas seeds\n", "\n"));
    CHECK_THROWS_WITH_AS(parse_category_table(in), doctest::Contains("expected 11 fruit features"), DataError);
  }
  SUBCASE("mean out of range") {
    std::istringstream in(table_text("has a blade=1.00:b", "has a blade=1.20:b"));
    CHECK_THROWS_WITH_AS(parse_category_table(in), doctest::Contains("mean out of [0,1]"), DataError);
  }
  SUBCASE("error carries the line number") {
    std::istringstream in(table_text("has a blade=1.00:b", "has a blade=1.20:b"));
    CHECK_THROWS_WITH_AS(parse_category_table(in), doctest::Contains("line "), DataError);
  }
}

TEST_CASE("sample_instance") {
  const CategoryTable& t = shipped_table();
  Rng rng(5);

  SUBCASE("binary feature with mean 1 is always 1") {
    const std::size_t knife = t.category_index(ObjectKind::tool, "knife");
    for (int i = 0; i < 200; ++i) CHECK(sample_instance(t, ObjectKind::tool, knife, rng).values[2] == 1.0);
  }
  SUBCASE("continuous feature stays within mean +- 0.1 and the unit interval") {
    CategoryTable c = t;
    c.fruit_categories[0].means[3] = 0.5;
    c.fruit_categories[0].kinds[3] = FeatureKind::continuous;
    c.fruit_categories[1].means[3] = 0.95;
    c.fruit_categories[1].kinds[3] = FeatureKind::continuous;
    double lo = 1, hi = 0, hi1 = 0;
    for (int i = 0; i < 10000; ++i) {
      const double v = sample_instance(c, ObjectKind::fruit, 0, rng).values[3];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      hi1 = std::max(hi1, sample_instance(c, ObjectKind::fruit, 1, rng).values[3]);
    }
    CHECK(lo >= 0.4);
    CHECK(hi <= 0.6);
    CHECK(lo < 0.41);
    CHECK(hi > 0.59);
    CHECK(hi1 <= 1.0);
  }
  SUBCASE("blade and blades never both present") {
    CategoryTable c = t;
    Category& cat = c.tool_categories[0];
    cat.means[2] = 0.9;
    cat.means[10] = 0.9;
    for (int i = 0; i < 2000; ++i) {
      const Instance inst = sample_instance(c, ObjectKind::tool, 0, rng);
      CHECK_FALSE((inst.values[2] > 0 && inst.values[10] > 0));
      CHECK(satisfies_exclusions(c, inst));
    }
  }
  SUBCASE("unsatisfiable exclusion raises") {
    CategoryTable c = t;
    c.tool_categories[0].means[2] = 1.0;
    c.tool_categories[0].means[10] = 1.0;
    c.tool_categories[0].kinds[2] = FeatureKind::binary;
    c.tool_categories[0].kinds[10] = FeatureKind::binary;
    CHECK_THROWS_WITH_AS(sample_instance(c, ObjectKind::tool, 0, rng),
                         doctest::Contains("exclusion group unsatisfiable"), DataError);
  }
  SUBCASE("binary empirical means within 0.03 over 10000 draws") {
    for (std::size_t cat : {std::size_t{0}, std::size_t{7}, std::size_t{20}}) {
      const Category& c = t.fruit_categories[cat];
      std::vector<double> sums(c.means.size(), 0.0);
      const int n = 10000;
      for (int i = 0; i < n; ++i) {
        const Instance inst = sample_instance(t, ObjectKind::fruit, cat, rng);
        for (std::size_t f = 0; f < sums.size(); ++f) sums[f] += inst.values[f];
      }
      for (std::size_t f = 0; f < sums.size(); ++f) {
        if (c.kinds[f] != FeatureKind::binary) continue;
        bool excluded = false;
        for (const ExclusionGroup& g : t.exclusion_groups)
          if (g.kind == ObjectKind::fruit && std::count(g.features.begin(), g.features.end(), f)) excluded = true;
        if (excluded) continue;  // rejection shifts the marginals of grouped features
        CHECK(std::abs(sums[f] / n - c.means[f]) <= 0.03);
      }
    }
  }
}

TEST_CASE("utility") {
  const UtilityMatrices m = UtilityMatrices::defaults();

  SUBCASE("zero fruit gives the offset") {
    Instance f = one_hot(ObjectKind::fruit, 99);
    for (std::size_t j = 0; j < kToolFeatureCount; ++j) CHECK(utility(one_hot(ObjectKind::tool, j), f, m) == 0.01);
  }
  SUBCASE("blade on crunchy is 1.01") {
    CHECK(utility(one_hot(ObjectKind::tool, 2), one_hot(ObjectKind::fruit, 0), m) == 1.01);
  }
  SUBCASE("matches the brute-force product on 1000 random pairs") {
    Rng rng(17);
    double worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
      Instance t = one_hot(ObjectKind::tool, 99), f = one_hot(ObjectKind::fruit, 99);
      for (double& v : t.values) v = rng.bernoulli(0.3) ? rng.uniform() : 0.0;
      for (double& v : f.values) v = rng.bernoulli(0.3) ? rng.uniform() : 0.0;
      worst = std::max(worst, std::abs(utility(t, f, m) - brute_force_utility(t.values, f.values)));
    }
    CHECK(worst < 1e-12);
  }
  SUBCASE("dimension mismatch raises") {
    Instance t = one_hot(ObjectKind::tool, 0);
    t.values.pop_back();
    CHECK_THROWS_AS(utility(t, one_hot(ObjectKind::fruit, 0), m), DataError);
  }
  SUBCASE("noise features never change utility and the offset is a floor") {
    const CategoryTable& table = shipped_table();
    Rng rng(3);
    const std::size_t noise[] = {0, 1, 5, 7, 9, 12};
    for (int n = 0; n < 500; ++n) {
      const Instance f = sample_instance(table, ObjectKind::fruit, rng.below(31), rng);
      Instance t = sample_instance(table, ObjectKind::tool, rng.below(16), rng);
      const double u = utility(t, f, m);
      CHECK(u >= 0.01);
      for (std::size_t j : noise) t.values[j] = 0.0;
      CHECK(utility(t, f, m) == u);
    }
  }
}

TEST_CASE("best_tool") {
  const UtilityMatrices m = UtilityMatrices::defaults();
  GameSample s;
  s.fruit = one_hot(ObjectKind::fruit, 0);
  s.tool1 = one_hot(ObjectKind::tool, 2);   // 1.01
  s.tool2 = one_hot(ObjectKind::tool, 3);   // head: break 1, hard 0.5 -> 0.51
  CHECK(utility(s.tool2, s.fruit, m) == doctest::Approx(0.51).epsilon(1e-12));
  CHECK(best_tool(s, m) == std::array<bool, 2>{true, false});
  s.tool2 = s.tool1;
  CHECK(best_tool(s, m) == std::array<bool, 2>{true, true});
  s.tool1 = one_hot(ObjectKind::tool, 0);  // 0.01
  s.tool2 = one_hot(ObjectKind::tool, 2);
  CHECK(best_tool(s, m) == std::array<bool, 2>{false, true});
}

TEST_CASE("best_tool is invariant to positive scaling of the affinity matrix") {
  const CategoryTable& table = shipped_table();
  UtilityMatrices scaled = UtilityMatrices::defaults();
  for (double& v : scaled.affinity) v *= 3.7;
  scaled.offset *= 3.7;
  const auto split = generate_split(table, 4, {600, 0, 0, 0});
  for (const GameSample& s : split.in_domain_train)
    CHECK(best_tool(s, UtilityMatrices::defaults()) == best_tool(s, scaled));
}

TEST_CASE("generate_split") {
  const CategoryTable& table = shipped_table();
  const SplitCounts counts{2100, 250, 250, 250};
  const DatasetSplit a = generate_split(table, 11, counts);

  SUBCASE("partition is 21 / 5 / 5 and disjoint") {
    CHECK(a.partition.in_domain.size() == 21);
    CHECK(a.partition.validation.size() == 5);
    CHECK(a.partition.transfer.size() == 5);
    std::set<std::size_t> all(a.partition.in_domain.begin(), a.partition.in_domain.end());
    all.insert(a.partition.validation.begin(), a.partition.validation.end());
    all.insert(a.partition.transfer.begin(), a.partition.transfer.end());
    CHECK(all.size() == 31);
  }
  SUBCASE("sizes and category membership") {
    CHECK(a.in_domain_train.size() == 2100);
    CHECK(a.in_domain_test.size() == 250);
    const std::set<std::size_t> transfer(a.partition.transfer.begin(), a.partition.transfer.end());
    const std::set<std::size_t> in_domain(a.partition.in_domain.begin(), a.partition.in_domain.end());
    for (const GameSample& s : a.transfer) CHECK(transfer.count(s.fruit.category) == 1);
    for (const GameSample& s : a.in_domain_train) CHECK(in_domain.count(s.fruit.category) == 1);
    for (const auto* set : {&a.in_domain_train, &a.in_domain_test, &a.validation, &a.transfer})
      for (const GameSample& s : *set) CHECK(s.tool1.category_name != s.tool2.category_name);
  }
  SUBCASE("balanced per cell up to one") {
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, int> cells;
    for (const GameSample& s : a.in_domain_train)
      ++cells[{s.fruit.category, std::min(s.tool1.category, s.tool2.category),
               std::max(s.tool1.category, s.tool2.category)}];
    int lo = 1 << 30, hi = 0;
    for (const auto& [k, n] : cells) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    // 2100 samples over 21 * 120 cells: every cell has 0 or 1.
    CHECK(hi - lo <= 1);
    const auto big = generate_split(table, 11, {21 * 120 * 3 + 7, 0, 0, 0});
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, int> big_cells;
    for (const GameSample& s : big.in_domain_train)
      ++big_cells[{s.fruit.category, std::min(s.tool1.category, s.tool2.category),
                   std::max(s.tool1.category, s.tool2.category)}];
    CHECK(big_cells.size() == 21 * 120);
    for (const auto& [k, n] : big_cells) CHECK((n == 3 || n == 4));
  }
  SUBCASE("deterministic and byte-identical") {
    const DatasetSplit b = generate_split(table, 11, counts);
    std::ostringstream x, y;
    write_samples(x, a.in_domain_train, "train", 11);
    write_samples(y, b.in_domain_train, "train", 11);
    CHECK(x.str() == y.str());
    const DatasetSplit c = generate_split(table, 12, counts);
    std::ostringstream z;
    write_samples(z, c.in_domain_train, "train", 12);
    CHECK(x.str() != z.str());
  }
  SUBCASE("write then read is identical") {
    std::ostringstream out;
    write_samples(out, a.validation, "validation", 11, "abc");
    std::istringstream in(out.str());
    const auto back = read_samples(in, table);
    REQUIRE(back.size() == a.validation.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].fruit.values == a.validation[i].fruit.values);
      CHECK(back[i].tool1.values == a.validation[i].tool1.values);
      CHECK(back[i].tool2.category == a.validation[i].tool2.category);
    }
    CHECK(out.str().find("config_hash=abc") != std::string::npos);
  }
}

TEST_CASE("default counts are 210000 / 25000") {
  const SplitCounts c;
  CHECK(c.train == 210000);
  CHECK(c.test == 25000);
  CHECK(c.validation == 25000);
  CHECK(c.transfer == 25000);
}
