#include "fruitcomm/game.hpp"

#include <ostream>
#include <stdexcept>

namespace fruitcomm {

char to_char(AgentId id) { return id == AgentId::A ? 'A' : 'B'; }

TestConfiguration Assignment::configuration() const {
  const bool a_tool = tool_player == AgentId::A;
  const bool a_first = position1 == AgentId::A;
  if (!a_tool) return a_first ? TestConfiguration::a_fruit_first : TestConfiguration::a_fruit_second;
  return a_first ? TestConfiguration::a_tool_first : TestConfiguration::a_tool_second;
}

bool Trajectory::ended_by_tool_player() const {
  return !timed_out() && !turns.empty() && turns.back().agent == assignment.tool_player;
}

Assignment assign(Rng& rng, const GameSample& sample) {
  Assignment a;
  a.tool_player = rng.bernoulli(0.5) ? AgentId::A : AgentId::B;
  a.position1 = rng.bernoulli(0.5) ? AgentId::A : AgentId::B;
  a.sample = sample;
  return a;
}

Assignment assign(TestConfiguration configuration, const GameSample& sample) {
  Assignment a;
  a.sample = sample;
  switch (configuration) {
    case TestConfiguration::a_fruit_first:
      a.tool_player = AgentId::B;
      a.position1 = AgentId::A;
      break;
    case TestConfiguration::a_fruit_second:
      a.tool_player = AgentId::B;
      a.position1 = AgentId::B;
      break;
    case TestConfiguration::a_tool_first:
      a.tool_player = AgentId::A;
      a.position1 = AgentId::A;
      break;
    case TestConfiguration::a_tool_second:
      a.tool_player = AgentId::A;
      a.position1 = AgentId::B;
      break;
  }
  return a;
}

void EpisodeConfig::validate() const {
  if (max_turns < 1) throw std::invalid_argument("max_turns must be >= 1");
}

Trajectory run_episode(const Assignment& assignment, const EpisodeConfig& config, const UtilityMatrices& utilities,
                       const Actor& actor) {
  config.validate();
  Trajectory traj;
  traj.assignment = assignment;
  traj.turns.reserve(config.max_turns);

  std::array<std::optional<std::size_t>, 2> last_turn{};
  std::size_t incoming = config.dummy_message;

  for (std::size_t t = 0; t < config.max_turns; ++t) {
    const AgentId agent = (t % 2 == 0) ? assignment.position1 : assignment.position2();
    TurnRequest req;
    req.turn = t;
    req.agent = agent;
    req.incoming_message = incoming;
    if (config.memory_enabled) req.prev_turn = last_turn[index_of(agent)];

    AgentStepTrace trace = actor(req);
    if (trace.choice > 2) throw std::logic_error("actor returned choice outside {0,1,2}");
    last_turn[index_of(agent)] = t;

    const bool stop = trace.choice != 0;
    const std::size_t message = trace.message;
    traj.turns.push_back(TurnRecord{agent, std::move(trace), !stop});
    if (stop) {
      traj.terminal_choice = traj.turns.back().trace.choice;
      break;
    }
    ++traj.conversation_length;
    incoming = config.communication_enabled ? message : config.dummy_message;
  }

  if (!traj.timed_out()) {
    const auto winners = best_tool(assignment.sample, utilities);
    traj.reward = winners[traj.terminal_choice - 1] ? 1 : 0;
  }
  return traj;
}

std::vector<double> agent_input(const Assignment& assignment, AgentId agent) {
  if (agent != assignment.tool_player) return assignment.sample.fruit.values;
  std::vector<double> tools = assignment.sample.tool1.values;
  tools.insert(tools.end(), assignment.sample.tool2.values.begin(), assignment.sample.tool2.values.end());
  return tools;
}

NeuralRollout::NeuralRollout(Tape& tape, const AgentParameters& a, const AgentParameters& b,
                             std::span<double> grad_a, std::span<double> grad_b)
    : tape_(&tape), agents_{BoundAgent(tape, a, grad_a), BoundAgent(tape, b, grad_b)} {}

Trajectory NeuralRollout::play(const Assignment& assignment, const EpisodeConfig& config,
                               const UtilityMatrices& utilities, Rng& rng) {
  choice_log_probs_.clear();
  message_log_probs_.clear();
  std::array<Var, 2> embeddings;
  for (AgentId id : {AgentId::A, AgentId::B})
    embeddings[index_of(id)] = agents_[index_of(id)].embed_input(agent_input(assignment, id));
  std::vector<Var> states;
  states.reserve(config.max_turns);

  Actor actor = [&](const TurnRequest& req) {
    BoundAgent& agent = agents_[index_of(req.agent)];
    Var prev = req.prev_turn ? states.at(*req.prev_turn) : agent.initial_state();
    Var input = embeddings[index_of(req.agent)];
    StepVars vars = agent.step(prev, req.incoming_message, input);
    AgentStepTrace trace = make_trace(vars, prev, input, req.incoming_message);
    trace.choice = select_action(trace.choice_dist, config.mode, rng);
    trace.message = select_action(trace.message_dist, config.mode, rng);
    Var lc = tape_->log_prob(vars.choice_dist, trace.choice);
    Var lm = tape_->log_prob(vars.message_dist, trace.message);
    trace.choice_log_prob = lc.item();
    trace.message_log_prob = lm.item();
    choice_log_probs_.push_back(lc);
    message_log_probs_.push_back(lm);
    states.push_back(vars.state);
    return trace;
  };
  return run_episode(assignment, config, utilities, actor);
}

Trajectory play_episode(const AgentParameters& a, const AgentParameters& b, const Assignment& assignment,
                        const EpisodeConfig& config, const UtilityMatrices& utilities, Rng& rng) {
  Tape tape(false);
  NeuralRollout rollout(tape, a, b);
  return rollout.play(assignment, config, utilities, rng);
}

std::vector<Assignment> protocol_assignments(std::span<const GameSample> games, std::size_t batches,
                                             std::size_t games_per_batch) {
  if (games.empty()) throw std::invalid_argument("protocol_assignments: no games");
  if (batches == 0 || batches % kConfigurationCount != 0)
    throw std::invalid_argument("protocol_assignments: batch count must be a positive multiple of 4");
  std::vector<Assignment> out;
  out.reserve(batches * games_per_batch);
  for (std::size_t j = 0; j < batches; ++j) {
    const auto config = static_cast<TestConfiguration>(j * kConfigurationCount / batches);
    for (std::size_t k = 0; k < games_per_batch; ++k) {
      const std::size_t i = j * games_per_batch + k;
      out.push_back(assign(config, games[i % games.size()]));
    }
  }
  return out;
}

EpisodeStats episode_stats(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw std::invalid_argument("episode_stats: no trajectories");
  std::vector<double> perf, length, tool_chooses;
  std::size_t timeouts = 0;
  for (const Trajectory& t : trajectories) {
    perf.push_back(100.0 * t.reward);
    length.push_back(static_cast<double>(t.conversation_length));
    tool_chooses.push_back(t.ended_by_tool_player() ? 100.0 : 0.0);
    if (t.timed_out()) ++timeouts;
  }
  EpisodeStats s;
  s.games = trajectories.size();
  s.performance_pct = mean_sem(perf);
  s.conversation_length = mean_sem(length);
  s.tool_chooses_pct = mean_sem(tool_chooses);
  s.timeout_pct = 100.0 * static_cast<double>(timeouts) / static_cast<double>(trajectories.size());
  return s;
}

void write_trajectory(std::ostream& out, const Trajectory& t) {
  const Assignment& a = t.assignment;
  out << "config=" << static_cast<int>(a.configuration()) + 1 << "\ttool_player=" << to_char(a.tool_player)
      << "\tposition1=" << to_char(a.position1) << "\tfruit=" << a.sample.fruit.category_name
      << "\ttool1=" << a.sample.tool1.category_name << "\ttool2=" << a.sample.tool2.category_name
      << "\treward=" << t.reward << "\tturns=";
  for (std::size_t i = 0; i < t.turns.size(); ++i) {
    const TurnRecord& r = t.turns[i];
    if (i > 0) out << ';';
    out << to_char(r.agent) << ',' << r.trace.incoming_message << ',' << r.trace.choice << ',' << r.trace.message
        << ',' << (r.heard ? 1 : 0);
  }
  out << '\n';
}

}  // namespace fruitcomm
