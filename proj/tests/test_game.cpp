#include <doctest.h>

#include <array>

#include "fruitcomm/game.hpp"
#include "support.hpp"

using namespace fruitcomm;
using fruitcomm::testing::shipped_table;

namespace {

const std::vector<GameSample>& samples() {
  static const std::vector<GameSample> s = generate_split(shipped_table(), 3, {1000, 0, 0, 0}).in_domain_train;
  return s;
}

// Stub agent: stops with probability `stop` (choosing tool 1 or 2), and sends a
// random symbol. Records every request it receives.
struct StubActor {
  Rng* rng;
  double stop;
  std::vector<TurnRequest>* requests;

  AgentStepTrace operator()(const TurnRequest& req) const {
    requests->push_back(req);
    AgentStepTrace t;
    t.incoming_message = req.incoming_message;
    t.choice = rng->bernoulli(stop) ? 1 + rng->below(2) : 0;
    t.message = rng->below(10);
    return t;
  }
};

Actor fixed_choice(std::size_t choice) {
  return [choice](const TurnRequest& req) {
    AgentStepTrace t;
    t.incoming_message = req.incoming_message;
    t.choice = choice;
    t.message = 3;
    return t;
  };
}

}  // namespace

TEST_CASE("engine invariants over 10000 randomized stub episodes") {
  const UtilityMatrices m = UtilityMatrices::defaults();
  Rng rng(2024);
  std::size_t timeouts = 0, stops = 0, ties = 0;
  for (int n = 0; n < 10000; ++n) {
    EpisodeConfig cfg;
    cfg.memory_enabled = rng.bernoulli(0.5);
    cfg.communication_enabled = rng.bernoulli(0.5);
    cfg.max_turns = 1 + rng.below(20);
    GameSample sample = samples()[rng.below(samples().size())];
    if (rng.bernoulli(0.1)) sample.tool2 = sample.tool1;  // exact tie
    const Assignment as = assign(rng, sample);
    const double stop = rng.uniform(0.0, 0.5);
    std::vector<TurnRequest> reqs;
    const Trajectory t = run_episode(as, cfg, m, StubActor{&rng, stop, &reqs});

    REQUIRE(!t.turns.empty());
    REQUIRE(reqs.size() == t.turns.size());
    for (std::size_t i = 0; i < t.turns.size(); ++i) {
      const TurnRecord& r = t.turns[i];
      // Alternation from position 1.
      CHECK(r.agent == (i % 2 == 0 ? as.position1 : as.position2()));
      CHECK(reqs[i].agent == r.agent);
      CHECK(reqs[i].turn == i);
      // Messages: m0 at t=0 and whenever communication is off.
      if (i == 0 || !cfg.communication_enabled)
        CHECK(reqs[i].incoming_message == cfg.dummy_message);
      else
        CHECK(reqs[i].incoming_message == t.turns[i - 1].trace.message);
      // Memory: own state from two turns earlier, or s0.
      if (!cfg.memory_enabled || i < 2)
        CHECK_FALSE(reqs[i].prev_turn.has_value());
      else
        CHECK(reqs[i].prev_turn == std::optional<std::size_t>(i - 2));
      // Only the last turn may stop; heard iff continued.
      if (i + 1 < t.turns.size()) CHECK(r.trace.choice == 0);
      CHECK(r.heard == (r.trace.choice == 0));
    }
    const bool stopped = t.turns.back().trace.choice != 0;
    CHECK(stopped != t.timed_out());
    if (stopped) {
      ++stops;
      CHECK(t.terminal_choice == t.turns.back().trace.choice);
      CHECK(t.conversation_length == t.turns.size() - 1);
      CHECK(t.conversation_length <= cfg.max_turns - 1);
      const auto win = best_tool(sample, m);
      CHECK(t.reward == (win[t.terminal_choice - 1] ? 1 : 0));
      if (sample.tool1.values == sample.tool2.values) {
        ++ties;
        CHECK(t.reward == 1);
      }
    } else {
      ++timeouts;
      CHECK(t.turns.size() == cfg.max_turns);
      CHECK(t.conversation_length == cfg.max_turns);
      CHECK(t.reward == 0);
    }
  }
  CHECK(timeouts > 100);
  CHECK(stops > 1000);
  CHECK(ties > 100);
}

TEST_CASE("engine is deterministic under a fixed seed") {
  const UtilityMatrices m = UtilityMatrices::defaults();
  auto run = [&](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TurnRequest> reqs;
    std::ostringstream out;
    for (int n = 0; n < 200; ++n) {
      const Assignment as = assign(rng, samples()[n]);
      write_trajectory(out, run_episode(as, {}, m, StubActor{&rng, 0.2, &reqs}));
    }
    return out.str();
  };
  CHECK(run(5) == run(5));
  CHECK(run(5) != run(6));
}

TEST_CASE("fixed-choice agents") {
  const UtilityMatrices m = UtilityMatrices::defaults();
  const GameSample& s = samples()[0];
  SUBCASE("choosing tool 1 at t=0") {
    const Assignment as = assign(TestConfiguration::a_tool_first, s);
    const Trajectory t = run_episode(as, {}, m, fixed_choice(1));
    CHECK(t.turns.size() == 1);
    CHECK(t.conversation_length == 0);
    CHECK(t.reward == (best_tool(s, m)[0] ? 1 : 0));
    CHECK(t.ended_by_tool_player());
  }
  SUBCASE("never choosing runs 20 turns with reward 0") {
    const Assignment as = assign(TestConfiguration::a_fruit_first, s);
    const Trajectory t = run_episode(as, {}, m, fixed_choice(0));
    CHECK(t.turns.size() == 20);
    CHECK(t.timed_out());
    CHECK(t.reward == 0);
    CHECK(t.conversation_length == 20);
  }
  SUBCASE("invalid choice raises") { CHECK_THROWS(run_episode(assign(TestConfiguration::a_fruit_first, s), {}, m, fixed_choice(3))); }
}

TEST_CASE("assign") {
  Rng rng(77);
  std::array<int, 4> counts{};
  for (int i = 0; i < 10000; ++i) ++counts[static_cast<std::size_t>(assign(rng, samples()[0]).configuration())];
  for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.25) <= 0.02);
  Rng a(3), b(3);
  for (int i = 0; i < 50; ++i) {
    const Assignment x = assign(a, samples()[0]), y = assign(b, samples()[0]);
    CHECK(x.tool_player == y.tool_player);
    CHECK(x.position1 == y.position1);
  }
  for (std::size_t c = 0; c < kConfigurationCount; ++c) {
    const auto conf = static_cast<TestConfiguration>(c);
    CHECK(assign(conf, samples()[0]).configuration() == conf);
  }
}

TEST_CASE("protocol assignments are balanced 300 per configuration") {
  const auto as = protocol_assignments(samples(), 12, 100);
  REQUIRE(as.size() == 1200);
  std::array<int, 4> counts{};
  for (const Assignment& a : as) ++counts[static_cast<std::size_t>(a.configuration())];
  CHECK(counts == std::array<int, 4>{300, 300, 300, 300});
}

TEST_CASE("neural rollouts respect the ablations") {
  const UtilityMatrices m = UtilityMatrices::defaults();
  Rng init(9);
  const AgentParameters a = AgentParameters::initialize({}, init);
  const AgentParameters b = AgentParameters::initialize({}, init);
  Rng rng(10);
  for (int n = 0; n < 300; ++n) {
    EpisodeConfig cfg;
    cfg.memory_enabled = n % 2 == 0;
    cfg.communication_enabled = n % 3 != 0;
    const Assignment as = assign(rng, samples()[n]);
    const Trajectory t = play_episode(a, b, as, cfg, m, rng);
    for (std::size_t i = 0; i < t.turns.size(); ++i) {
      const AgentStepTrace& tr = t.turns[i].trace;
      if (!cfg.communication_enabled || i == 0) CHECK(tr.incoming_message == cfg.dummy_message);
      if (!cfg.memory_enabled || i < 2) {
        for (double v : tr.prev_state) CHECK(v == 0.0);
      } else {
        CHECK(tr.prev_state == t.turns[i - 2].trace.state);
      }
      if (!cfg.memory_enabled) {
        // Replaying a turn from scratch gives the identical trace.
        const AgentParameters& p = t.turns[i].agent == AgentId::A ? a : b;
        const auto emb = embed_input(p, agent_input(as, t.turns[i].agent));
        const Distributions d =
            conditional_distributions(p, std::vector<double>(100, 0.0), tr.incoming_message, emb);
        CHECK(d.choice == tr.choice_dist);
        CHECK(d.message == tr.message_dist);
      }
    }
  }
}

TEST_CASE("episode_stats") {
  CHECK_THROWS_AS(episode_stats(std::span<const Trajectory>{}), std::invalid_argument);
  const UtilityMatrices m = UtilityMatrices::defaults();
  std::vector<Trajectory> ts;
  // Tool Player always stops at its first turn; some games time out.
  for (int i = 0; i < 40; ++i) {
    const Assignment as = assign(static_cast<TestConfiguration>(i % 4), samples()[i]);
    Actor actor = [&](const TurnRequest& req) {
      AgentStepTrace t;
      t.incoming_message = req.incoming_message;
      t.choice = (req.agent == as.tool_player && i % 5 != 0) ? 1 : 0;
      return t;
    };
    ts.push_back(run_episode(as, {}, m, actor));
  }
  const EpisodeStats s = episode_stats(ts);
  CHECK(s.games == 40);
  CHECK(s.timeout_pct == doctest::Approx(20.0));
  CHECK(s.tool_chooses_pct.mean == doctest::Approx(100.0 - s.timeout_pct));
  std::vector<Trajectory> wins;
  for (Trajectory t : ts) {
    t.reward = 1;
    wins.push_back(t);
  }
  CHECK(episode_stats(wins).performance_pct.mean == 100.0);
}
