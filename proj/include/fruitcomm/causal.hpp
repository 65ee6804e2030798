#pragma once

// Message Effect: how much a received message shifts the receiver's next
// (choice, message) distribution relative to a uniform intervention over
// counterfactual messages. Plus the bilateral-communication flag and the
// multi-seed evaluation protocol.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fruitcomm/game.hpp"

namespace fruitcomm {

struct MEConfig {
  std::size_t samples = 10;         // K draws of z
  std::size_t counterfactuals = 10;  // J draws of m'
  double theta = 0.1;
  /// Exact KL over all z and all m' instead of sampling.
  bool exhaustive = false;
  /// Draw the J counterfactuals with replacement. By default they are drawn
  /// without replacement while J does not exceed the support, which keeps the
  /// marginal (and so the log) unbiased when J equals the vocabulary size.
  bool counterfactuals_with_replacement = false;

  void validate() const;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// The receiver's joint z = (c, m) distribution for the observed message and
/// for every symbol of the intervention support.
struct InterventionTable {
  std::vector<double> observed;
  std::vector<std::vector<double>> support;
};

/// Joint distribution over z = (c, m), index c * vocab + m.
std::vector<double> joint_distribution(const Distributions& d);

struct MEResult {
  double value = 0.0;
  /// Some p~(z) fell below the floor while p(z|m) did not.
  bool floored = false;
};

MEResult message_effect(const InterventionTable& table, const MEConfig& config, Rng& rng);

/// `responder(m')` returns p(z | m'). Support is the intervention symbols.
using Responder = std::function<std::vector<double>(std::size_t message)>;
MEResult message_effect(const Responder& responder, std::size_t observed, std::span<const std::size_t> support,
                        const MEConfig& config, Rng& rng);

/// One message whose effect was measured.
struct MessageME {
  /// Turn at which the message was sent; empty for the dummy init message.
  std::optional<std::size_t> sent_at;
  AgentId speaker = AgentId::A;
  bool speaker_is_fruit = false;
  bool speaker_first = false;
  double value = 0.0;
  bool floored = false;
};

/// Every measured message of one game: the dummy init message (attributed to
/// the position-2 agent) and each message passed on to a turn that exists.
/// Stop-turn messages and a final message at the turn limit are skipped.
std::vector<MessageME> trajectory_me(const Trajectory& trajectory, const AgentParameters& a,
                                     const AgentParameters& b, const EpisodeConfig& episode, const MEConfig& config,
                                     Rng& rng);

/// True iff some value in each direction strictly exceeds theta.
bool bilateral(std::span<const double> a_to_b, std::span<const double> b_to_a, double theta);
bool bilateral(std::span<const MessageME> messages, double theta);

enum class Metric : std::size_t {
  performance,
  me_f_to_t,
  me_t_to_f,
  me_1_to_2,
  me_2_to_1,
  me_1t2f_f_to_t,
  me_1t2f_t_to_f,
  me_1f2t_f_to_t,
  me_1f2t_t_to_f,
  bilateral_pct,
  conversation_length,
  tool_chooses_pct,
};
inline constexpr std::size_t kMetricCount = 12;
const char* metric_name(Metric m);
using MetricValues = std::array<double, kMetricCount>;

/// Per-game values. A direction with no measured message counts as 0.
struct GameRecord {
  std::size_t test_seed = 0;
  std::size_t game = 0;
  TestConfiguration configuration = TestConfiguration::a_fruit_first;
  int reward = 0;
  std::size_t conversation_length = 0;
  bool tool_chose = false;
  double me_f_to_t = 0.0;
  double me_t_to_f = 0.0;
  double me_1_to_2 = 0.0;
  double me_2_to_1 = 0.0;
  bool bilateral = false;
};

struct EvaluationConfig {
  EpisodeConfig episode;  // mode is forced to argmax
  MEConfig me;
  std::size_t test_seeds = 20;
  std::size_t batches = 12;
  std::size_t games_per_batch = 100;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  bool keep_games = false;
};

struct MEReport {
  /// Averaged per configuration, then over configurations, then over test seeds.
  MetricValues values{};
  std::size_t games_per_seed = 0;
  std::size_t floored = 0;
  std::vector<GameRecord> games;
};

/// Test seed s plays the protocol on the set rotated by s * games-per-seed, so
/// seeds see disjoint games when the set is large enough, and seeds the ME
/// sampling. Play is argmax and unaffected by ME computation.
MEReport evaluate(const AgentParameters& a, const AgentParameters& b, std::span<const GameSample> games,
                  const UtilityMatrices& utilities, const EvaluationConfig& config);

/// Configuration-balanced metrics of one test seed's games.
MetricValues summarize(std::span<const GameRecord> games);

/// Mean and SEM of each metric across training seeds.
std::array<MeanSem, kMetricCount> aggregate(std::span<const MEReport> reports);

void write_me_report(std::ostream& out, std::span<const std::string> run_labels, std::span<const MEReport> reports,
                     const std::string& config_hash, std::uint64_t seed);
void write_game_records(std::ostream& out, std::span<const GameRecord> games);

}  // namespace fruitcomm
