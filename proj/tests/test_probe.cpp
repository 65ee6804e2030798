#include <doctest.h>

#include <set>
#include <sstream>

#include "fruitcomm/probe.hpp"
#include "support.hpp"

using namespace fruitcomm;
using fruitcomm::testing::shipped_table;

namespace {

Conversation conversation(std::vector<Utterance> u, std::size_t fruit, std::size_t tool1, std::size_t tool2) {
  Conversation c;
  c.utterances = std::move(u);
  c.fruit = fruit;
  c.tool1 = tool1;
  c.tool2 = tool2;
  c.success = true;
  return c;
}

ProbeDataset cyclic_dataset(std::size_t n, std::size_t fruit_classes, std::size_t tool_classes) {
  ProbeDataset d;
  d.fruit_classes = fruit_classes;
  d.tool_classes = tool_classes;
  for (std::size_t i = 0; i < n; ++i)
    d.conversations.push_back(conversation({{true, i % fruit_classes}, {false, 10 + i % tool_classes}},
                                           i % fruit_classes, i % tool_classes, (i + 1) % tool_classes));
  return d;
}

const std::vector<GameSample>& games() {
  static const std::vector<GameSample> s = generate_split(shipped_table(), 5, {200, 0, 0, 0}).in_domain_train;
  return s;
}

}  // namespace

TEST_CASE("probe names parse and print") {
  CHECK(parse_probe_task("fruit") == ProbeTask::fruit);
  CHECK(parse_probe_task("tool2") == ProbeTask::tool2);
  CHECK(parse_utterance_filter("F") == UtteranceFilter::fruit);
  CHECK(parse_utterance_filter("Both") == UtteranceFilter::both);
  CHECK(std::string(to_string(UtteranceFilter::tool)) == "T");
  CHECK_THROWS(parse_probe_task("tool3"));
  CHECK_THROWS(parse_utterance_filter("X"));
}

TEST_CASE("filters keep turn order") {
  const Conversation c = conversation({{true, 1}, {false, 2}, {true, 3}, {false, 4}, {true, 5}}, 7, 8, 9);
  CHECK(filter_symbols(c, UtteranceFilter::both) == std::vector<std::size_t>{1, 2, 3, 4, 5});
  CHECK(filter_symbols(c, UtteranceFilter::fruit) == std::vector<std::size_t>{1, 3, 5});
  CHECK(filter_symbols(c, UtteranceFilter::tool) == std::vector<std::size_t>{2, 4});
  CHECK(label_of(c, ProbeTask::fruit) == 7);
  CHECK(label_of(c, ProbeTask::tool1) == 8);
  CHECK(label_of(c, ProbeTask::tool2) == 9);
}

TEST_CASE("examples skip empty filtered sequences") {
  ProbeDataset d;
  d.fruit_classes = 2;
  d.conversations.push_back(conversation({{true, 1}}, 0, 0, 0));
  d.conversations.push_back(conversation({{true, 1}, {false, 2}}, 1, 0, 0));
  const std::vector<std::size_t> idx{0, 1};
  std::size_t skipped = 99;
  const auto ex = make_examples(d, idx, ProbeTask::fruit, UtteranceFilter::tool, &skipped);
  REQUIRE(ex.size() == 1);
  CHECK(skipped == 1);
  CHECK(ex[0].symbols == std::vector<std::size_t>{2});
  CHECK(ex[0].label == 1);
}

TEST_CASE("stats baseline") {
  SUBCASE("uniform over 31 classes") {
    std::vector<std::size_t> labels;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 31; ++c) labels.push_back(c);
    CHECK(stats_baseline(labels, labels) == doctest::Approx(1.0 / 31.0).epsilon(1e-12));
  }
  SUBCASE("single class") {
    const std::vector<std::size_t> labels(10, 4);
    CHECK(stats_baseline(labels, labels) == 1.0);
  }
  SUBCASE("disjoint classes") {
    const std::vector<std::size_t> train{0, 0, 1}, test{2, 3};
    CHECK(stats_baseline(train, test) == 0.0);
  }
  SUBCASE("weighted overlap") {
    const std::vector<std::size_t> train{0, 0, 0, 1}, test{0, 1};
    CHECK(stats_baseline(train, test) == doctest::Approx(0.75 * 0.5 + 0.25 * 0.5));
  }
  SUBCASE("empty sets throw") {
    const std::vector<std::size_t> some{1}, none;
    CHECK_THROWS(stats_baseline(none, some));
    CHECK_THROWS(stats_baseline(some, none));
  }
}

TEST_CASE("majority predictor scores the majority share") {
  std::vector<ProbeExample> ex;
  for (std::size_t i = 0; i < 10; ++i) ex.push_back({{i}, i < 7 ? 3u : 1u});
  CHECK(accuracy([](std::span<const std::size_t>) { return std::size_t{3}; }, ex) == doctest::Approx(0.7));
  const std::vector<ProbeExample> none;
  CHECK_THROWS(accuracy([](std::span<const std::size_t>) { return std::size_t{0}; }, none));
}

TEST_CASE("partition") {
  ProbeConfig cfg;
  const ProbeDataset d = cyclic_dataset(200, 5, 4);

  SUBCASE("sizes, disjointness and train coverage") {
    const ProbePartition p = partition_conversations(d, 11, cfg);
    CHECK(p.train.size() == 160);
    CHECK(p.validation.size() == 20);
    CHECK(p.test.size() == 20);
    std::set<std::size_t> all(p.train.begin(), p.train.end());
    all.insert(p.validation.begin(), p.validation.end());
    all.insert(p.test.begin(), p.test.end());
    CHECK(all.size() == 200);
    std::set<std::size_t> fruits, t1, t2;
    for (std::size_t i : p.train) {
      fruits.insert(d.conversations[i].fruit);
      t1.insert(d.conversations[i].tool1);
      t2.insert(d.conversations[i].tool2);
    }
    CHECK(fruits.size() == 5);
    CHECK(t1.size() == 4);
    CHECK(t2.size() == 4);
  }
  SUBCASE("deterministic in the seed") {
    const ProbePartition a = partition_conversations(d, 11, cfg);
    const ProbePartition b = partition_conversations(d, 11, cfg);
    const ProbePartition c = partition_conversations(d, 12, cfg);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.train != c.train);
  }
  SUBCASE("uncoverable categories are named") {
    ProbeDataset tiny = cyclic_dataset(10, 10, 2);
    try {
      partition_conversations(tiny, 1, cfg);
      FAIL("expected a coverage error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("missing") != std::string::npos);
      CHECK(std::string(e.what()).find("fruit:") != std::string::npos);
    }
  }
  SUBCASE("empty dataset throws") {
    ProbeDataset empty;
    CHECK_THROWS(partition_conversations(empty, 1, cfg));
  }
}

TEST_CASE("classifier learns a separable code") {
  ProbeConfig cfg;
  cfg.symbol_embed = 8;
  cfg.hidden = 16;
  cfg.epochs = 40;
  cfg.learning_rate = 0.01;
  std::vector<ProbeExample> train, val;
  for (std::size_t i = 0; i < 120; ++i) {
    const std::size_t label = i % 4;
    ProbeExample e{{label, 4 + (i / 4) % 3, label}, label};
    (i % 6 == 0 ? val : train).push_back(e);
  }
  ProbeClassifier clf(7, 4, cfg, 3);
  const std::size_t epochs = clf.fit(train, val);
  CHECK(epochs >= 1);
  CHECK(epochs <= cfg.epochs);
  CHECK(clf.accuracy(train) == 1.0);
  CHECK(clf.accuracy(val) == 1.0);

  ProbeClassifier again(7, 4, cfg, 3);
  again.fit(train, val);
  for (const ProbeExample& e : val) CHECK(again.predict(e.symbols) == clf.predict(e.symbols));
}

TEST_CASE("run_probe on a perfectly informative dataset") {
  ProbeConfig cfg;
  cfg.symbol_embed = 8;
  cfg.hidden = 16;
  cfg.epochs = 30;
  cfg.learning_rate = 0.01;
  cfg.partition_seeds = 3;
  const ProbeDataset d = cyclic_dataset(150, 5, 3);
  const ProbeSummary s = run_probe(d, ProbeTask::fruit, UtteranceFilter::fruit, cfg);
  CHECK(s.runs.size() == 3);
  CHECK(s.accuracy_pct.mean == doctest::Approx(100.0));
  CHECK(s.stats_pct.mean < 30.0);
  const ProbeSummary t = run_probe(d, ProbeTask::fruit, UtteranceFilter::tool, cfg);
  CHECK(t.accuracy_pct.mean < 60.0);
}

TEST_CASE("conversations from untrained agents") {
  Rng init(21);
  const AgentParameters a = AgentParameters::initialize({}, init);
  const AgentParameters b = AgentParameters::initialize({}, init);
  EpisodeConfig ep;
  const auto u = UtilityMatrices::defaults();
  for (TestConfiguration tc : {TestConfiguration::a_fruit_first, TestConfiguration::a_tool_second}) {
    const ProbeDataset d = collect_conversations(a, b, games(), tc, ep, u, shipped_table(), 50);
    CHECK(d.games_played == 50);
    CHECK(d.conversations.size() == 50);
    CHECK(d.fruit_classes == shipped_table().categories(ObjectKind::fruit).size());
    for (std::size_t i = 0; i < d.conversations.size(); ++i) {
      const Conversation& c = d.conversations[i];
      CHECK(c.source == i);
      CHECK(c.fruit == games()[i].fruit.category);
      for (std::size_t k = 0; k < c.utterances.size(); ++k) CHECK(c.utterances[k].fruit_player == (k % 2 == 0));
    }
    const ProbeDataset threaded = collect_conversations(a, b, games(), tc, ep, u, shipped_table(), 50, 3);
    for (std::size_t i = 0; i < d.conversations.size(); ++i) {
      CHECK(threaded.conversations[i].success == d.conversations[i].success);
      CHECK(threaded.conversations[i].utterances.size() == d.conversations[i].utterances.size());
    }
  }
  ProbeConfig cfg;
  cfg.max_games = 80;
  const ProbeDataset kept = build_probe_dataset(a, b, games(), ep, u, shipped_table(), cfg);
  CHECK(kept.games_played == 80);
  for (const Conversation& c : kept.conversations) CHECK(c.success);
}

TEST_CASE("self-play of an agent with itself equals the pair") {
  Rng init(4);
  const AgentParameters a = AgentParameters::initialize({}, init);
  const AgentParameters b = AgentParameters::initialize({}, init);
  EpisodeConfig ep;
  const auto u = UtilityMatrices::defaults();
  const SelfPlayResult same = self_play_eval(a, a, games(), ep, u, 4, 25);
  CHECK(same.paired_pct == same.a_with_a_pct);
  CHECK(same.paired_pct == same.b_with_b_pct);
  const SelfPlayResult mixed = self_play_eval(a, b, games(), ep, u, 4, 25);
  const SelfPlayResult swapped = self_play_eval(b, a, games(), ep, u, 4, 25);
  CHECK(mixed.a_with_a_pct == swapped.b_with_b_pct);
  CHECK(mixed.b_with_b_pct == swapped.a_with_a_pct);
  CHECK(mixed.a_with_a_pct == same.a_with_a_pct);
}

TEST_CASE("reports carry the config hash and seed") {
  ProbeSummary s;
  s.accuracy_pct = {50.0, 1.0};
  s.stats_pct = {10.0, 0.5};
  std::ostringstream out;
  const std::vector<ProbeSummary> rows{s};
  write_probe_report(out, rows, "abc123", 9);
  CHECK(out.str().find("abc123") != std::string::npos);
  CHECK(out.str().find("50.0") != std::string::npos);
  std::ostringstream sp;
  write_self_play_report(sp, SelfPlayResult{70.0, 40.0, 45.0}, "abc123", 9);
  CHECK(sp.str().find("70.0") != std::string::npos);
}
