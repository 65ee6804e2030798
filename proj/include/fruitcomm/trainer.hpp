#pragma once

// REINFORCE training of both agents with a learned scalar baseline.

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fruitcomm/agent.hpp"
#include "fruitcomm/checkpoint.hpp"
#include "fruitcomm/game.hpp"
#include "fruitcomm/optim.hpp"

namespace fruitcomm {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t total_batches = 50000;
  double learning_rate = 0.001;
  double rms_decay = 0.99;
  double rms_epsilon = 1e-8;
  double clip = 0.1;
  ClipMode clip_mode = ClipMode::value;
  std::size_t validation_batches = 12;
  std::size_t validation_games_per_batch = 100;
  std::size_t validation_every = 500;
  double success_threshold = 0.85;
  /// Include the log-probability of the message sent on a stopping turn.
  bool credit_unheard = true;
  bool memory_enabled = true;
  bool communication_enabled = true;
  std::size_t max_turns = 20;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  AgentDims dims;

  void validate() const;
  EpisodeConfig episode(ActionMode mode) const;
};

/// Everything needed to continue training bit-for-bit.
struct TrainingState {
  struct CurvePoint {
    std::size_t batch = 0;
    double train_reward = 0.0;  // mean training reward since the previous point
    double val_accuracy = 0.0;
  };

  std::array<AgentParameters, 2> agents;
  double baseline = 0.0;  // b; 1 + b estimates the mean reward
  std::array<RmsProp, 2> agent_optimizers;
  RmsProp baseline_optimizer;
  std::size_t batches_done = 0;
  double window_reward_sum = 0.0;
  std::size_t window_batches = 0;
  std::vector<CurvePoint> curve;

  static TrainingState fresh(const TrainConfig& config);

  AgentParameters& agent(AgentId id) { return agents[index_of(id)]; }
  const AgentParameters& agent(AgentId id) const { return agents[index_of(id)]; }
};

struct LossTerms {
  Var total;
  Var policy;
  Var baseline;
};

/// -(R - (1+b)) * sum of log-probabilities of the sampled actions, plus
/// ((1+b) - R)^2. The baseline is a constant in the policy term. Messages sent
/// on stopping turns are included only with `credit_unheard`.
LossTerms reinforce_loss(Tape& tape, const Trajectory& trajectory, std::span<const Var> choice_log_probs,
                         std::span<const Var> message_log_probs, Var baseline, bool credit_unheard);

struct ValidationResult {
  double accuracy = 0.0;
  std::array<double, kConfigurationCount> per_configuration{};
  EpisodeStats stats;
};

/// Accuracy of trajectories produced by `runner` over the balanced protocol.
ValidationResult validate_protocol(std::span<const GameSample> games, std::size_t batches, std::size_t games_per_batch,
                                   const std::function<Trajectory(const Assignment&)>& runner);

/// Argmax-mode accuracy of a pair of agents over the balanced protocol.
ValidationResult validate(const AgentParameters& a, const AgentParameters& b, std::span<const GameSample> games,
                          const EpisodeConfig& config, const UtilityMatrices& utilities, std::size_t batches = 12,
                          std::size_t games_per_batch = 100, std::size_t threads = 1);

/// Runs one batch: parallel rollouts, gradients summed in batch order, clipping,
/// and one RMSProp step per agent and for the baseline. Returns the mean reward.
double train_batch(TrainingState& state, const TrainConfig& config, std::span<const GameSample> train_set,
                   const UtilityMatrices& utilities);

struct TrainHooks {
  /// Called after each validation point (e.g. to write a checkpoint).
  std::function<void(const TrainingState&)> on_validation;
  /// Stop early once this many batches are done (0: run to completion).
  std::size_t stop_after = 0;
  /// Progress output; may be empty.
  std::function<void(const TrainingState::CurvePoint&)> on_progress;
};

struct TrainResult {
  double final_validation = 0.0;
  bool success = false;
  bool completed = false;
};

/// Trains from `state` (fresh or resumed) until config.total_batches.
TrainResult train(TrainingState& state, const TrainConfig& config, std::span<const GameSample> train_set,
                  std::span<const GameSample> validation_set, const UtilityMatrices& utilities,
                  const TrainHooks& hooks = {});

/// Non-finite loss during training; carries a short diagnostic.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Checkpoint to_checkpoint(const TrainingState& state, const TrainConfig& config, const std::string& config_hash);
/// Restores a state; throws when the checkpoint's dimensions differ from `config`.
TrainingState from_checkpoint(const Checkpoint& checkpoint, const TrainConfig& config);
/// Ablation settings the agents were trained with, in argmax mode.
EpisodeConfig episode_from_checkpoint(const Checkpoint& checkpoint);
/// Reads only the two agents (for analysis).
std::array<AgentParameters, 2> agents_from_checkpoint(const Checkpoint& checkpoint);

void write_curve(const std::filesystem::path& path, const TrainingState& state, const std::string& config_hash,
                 std::uint64_t seed);

}  // namespace fruitcomm
