#pragma once

// Turn-based episode engine: roles, positions, alternating turns, stopping,
// reward, and the memory / communication ablations.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fruitcomm/agent.hpp"
#include "fruitcomm/dataset.hpp"
#include "fruitcomm/stats.hpp"

namespace fruitcomm {

enum class AgentId : std::uint8_t { A = 0, B = 1 };

inline AgentId other(AgentId id) { return id == AgentId::A ? AgentId::B : AgentId::A; }
inline std::size_t index_of(AgentId id) { return static_cast<std::size_t>(id); }
char to_char(AgentId id);

/// The four role x position configurations, numbered as in the test protocol:
/// A fruit/1st, A fruit/2nd, A tool/1st, A tool/2nd.
enum class TestConfiguration : std::uint8_t { a_fruit_first = 0, a_fruit_second, a_tool_first, a_tool_second };
inline constexpr std::size_t kConfigurationCount = 4;

struct Assignment {
  AgentId tool_player = AgentId::A;
  AgentId position1 = AgentId::A;
  GameSample sample;

  AgentId fruit_player() const { return other(tool_player); }
  AgentId position2() const { return other(position1); }
  TestConfiguration configuration() const;
};

/// Uniform, independent role and position draws.
Assignment assign(Rng& rng, const GameSample& sample);
/// A forced configuration, for the balanced test protocol.
Assignment assign(TestConfiguration configuration, const GameSample& sample);

struct EpisodeConfig {
  bool memory_enabled = true;
  bool communication_enabled = true;
  std::size_t max_turns = 20;
  ActionMode mode = ActionMode::sample;
  std::size_t dummy_message = 10;

  void validate() const;
};

struct TurnRecord {
  AgentId agent = AgentId::A;
  AgentStepTrace trace;
  /// The agent continued (choice 0), so its message was passed on.
  bool heard = false;
};

struct Trajectory {
  Assignment assignment;
  std::vector<TurnRecord> turns;
  /// 1 or 2 for the chosen tool; 0 when max_turns was reached.
  std::size_t terminal_choice = 0;
  int reward = 0;
  /// Turns that ended with choice 0.
  std::size_t conversation_length = 0;

  bool timed_out() const { return terminal_choice == 0; }
  /// True when the game was stopped by the Tool Player.
  bool ended_by_tool_player() const;
};

/// What the engine asks an agent at each turn.
struct TurnRequest {
  std::size_t turn = 0;
  AgentId agent = AgentId::A;
  std::size_t incoming_message = 0;
  /// Turn whose state is the agent's previous state; empty means s0.
  std::optional<std::size_t> prev_turn;
};

/// Produces the agent's trace for a turn; `choice` and `message` must be set.
using Actor = std::function<AgentStepTrace(const TurnRequest&)>;

/// The game rules, independent of how agents compute their actions.
Trajectory run_episode(const Assignment& assignment, const EpisodeConfig& config, const UtilityMatrices& utilities,
                       const Actor& actor);

/// The input an agent sees: the fruit (11 values) or both tools (30 values).
std::vector<double> agent_input(const Assignment& assignment, AgentId agent);

/// Plays neural agents on a tape. With gradient spans, every sampled action's
/// log-probability stays on the tape for the training loss.
class NeuralRollout {
 public:
  NeuralRollout(Tape& tape, const AgentParameters& a, const AgentParameters& b, std::span<double> grad_a = {},
                std::span<double> grad_b = {});

  Trajectory play(const Assignment& assignment, const EpisodeConfig& config, const UtilityMatrices& utilities,
                  Rng& rng);

  /// Per turn, log p(c_t) and log p(m_t) of the acting agent.
  const std::vector<Var>& choice_log_probs() const { return choice_log_probs_; }
  const std::vector<Var>& message_log_probs() const { return message_log_probs_; }

 private:
  Tape* tape_;
  std::array<BoundAgent, 2> agents_;
  std::vector<Var> choice_log_probs_;
  std::vector<Var> message_log_probs_;
};

/// Plays one episode without recording gradients.
Trajectory play_episode(const AgentParameters& a, const AgentParameters& b, const Assignment& assignment,
                        const EpisodeConfig& config, const UtilityMatrices& utilities, Rng& rng);

/// Balanced test protocol: `batches` batches of `games_per_batch` games with
/// the batches spread evenly over the four configurations (batch j uses
/// configuration j * 4 / batches). Game i uses sample i modulo the set size.
std::vector<Assignment> protocol_assignments(std::span<const GameSample> games, std::size_t batches = 12,
                                             std::size_t games_per_batch = 100);

struct EpisodeStats {
  std::size_t games = 0;
  MeanSem performance_pct;
  MeanSem conversation_length;
  MeanSem tool_chooses_pct;
  double timeout_pct = 0.0;
};

/// Throws std::invalid_argument on empty input.
EpisodeStats episode_stats(std::span<const Trajectory> trajectories);

/// One episode per line: configuration, inputs, reward, and per turn
/// `agent,m_in,c,m_out,heard` separated by ';'.
void write_trajectory(std::ostream& out, const Trajectory& trajectory);

}  // namespace fruitcomm
