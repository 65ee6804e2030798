#include "fruitcomm/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "fruitcomm/parallel.hpp"

namespace fruitcomm {

void TrainConfig::validate() const {
  if (batch_size == 0 || total_batches == 0 || validation_every == 0 || max_turns == 0)
    throw std::invalid_argument("train config: sizes must be positive");
  if (!(learning_rate > 0.0) || !(clip > 0.0) || !(rms_epsilon > 0.0))
    throw std::invalid_argument("train config: learning_rate, clip and rms_epsilon must be positive");
  if (!(rms_decay > 0.0 && rms_decay < 1.0)) throw std::invalid_argument("train config: rms_decay must be in (0,1)");
  if (!(success_threshold > 0.0 && success_threshold < 1.0))
    throw std::invalid_argument("train config: success_threshold must be in (0,1)");
  if (validation_batches == 0 || validation_batches % kConfigurationCount != 0 || validation_games_per_batch == 0)
    throw std::invalid_argument("train config: validation batches must be a positive multiple of 4");
  dims.validate();
}

EpisodeConfig TrainConfig::episode(ActionMode mode) const {
  EpisodeConfig e;
  e.memory_enabled = memory_enabled;
  e.communication_enabled = communication_enabled;
  e.max_turns = max_turns;
  e.mode = mode;
  e.dummy_message = dims.dummy_symbol();
  return e;
}

TrainingState TrainingState::fresh(const TrainConfig& config) {
  config.validate();
  const RmsPropOptions opts{config.learning_rate, config.rms_decay, config.rms_epsilon};
  TrainingState s;
  for (std::size_t i = 0; i < 2; ++i) {
    Rng rng(derive_seed(config.seed, "init", i));
    s.agents[i] = AgentParameters::initialize(config.dims, rng);
    s.agent_optimizers[i] = RmsProp(s.agents[i].params().size(), opts);
  }
  s.baseline_optimizer = RmsProp(1, opts);
  return s;
}

LossTerms reinforce_loss(Tape& tape, const Trajectory& trajectory, std::span<const Var> choice_log_probs,
                         std::span<const Var> message_log_probs, Var baseline, bool credit_unheard) {
  const std::size_t n = trajectory.turns.size();
  if (n == 0) throw std::invalid_argument("reinforce_loss: empty trajectory");
  if (choice_log_probs.size() != n || message_log_probs.size() != n)
    throw std::invalid_argument("reinforce_loss: missing log-probabilities");
  if (!baseline.valid() || baseline.size() != 1) throw std::invalid_argument("reinforce_loss: baseline must be scalar");

  std::vector<Var> terms;
  terms.reserve(2 * n);
  for (std::size_t t = 0; t < n; ++t) {
    if (!choice_log_probs[t].valid() || !message_log_probs[t].valid())
      throw std::invalid_argument("reinforce_loss: missing log-probabilities");
    terms.push_back(choice_log_probs[t]);
    if (credit_unheard || trajectory.turns[t].heard) terms.push_back(message_log_probs[t]);
  }
  const double reward = static_cast<double>(trajectory.reward);
  const double advantage = reward - (1.0 + baseline.item());

  LossTerms out;
  out.policy = tape.scale(tape.sum(tape.concat(terms)), -advantage);
  const double offset = 1.0 - reward;
  out.baseline = tape.square(tape.add(baseline, tape.constant(std::span<const double>(&offset, 1))));
  out.total = tape.add(out.policy, out.baseline);
  return out;
}

ValidationResult validate_protocol(std::span<const GameSample> games, std::size_t batches, std::size_t games_per_batch,
                                   const std::function<Trajectory(const Assignment&)>& runner) {
  const std::vector<Assignment> assignments = protocol_assignments(games, batches, games_per_batch);
  std::vector<Trajectory> trajectories;
  trajectories.reserve(assignments.size());
  for (const Assignment& a : assignments) trajectories.push_back(runner(a));

  ValidationResult r;
  std::array<double, kConfigurationCount> wins{}, counts{};
  double total = 0.0;
  for (const Trajectory& t : trajectories) {
    const auto c = static_cast<std::size_t>(t.assignment.configuration());
    wins[c] += t.reward;
    counts[c] += 1.0;
    total += t.reward;
  }
  r.accuracy = total / static_cast<double>(trajectories.size());
  for (std::size_t c = 0; c < kConfigurationCount; ++c) r.per_configuration[c] = counts[c] > 0 ? wins[c] / counts[c] : 0.0;
  r.stats = episode_stats(trajectories);
  return r;
}

ValidationResult validate(const AgentParameters& a, const AgentParameters& b, std::span<const GameSample> games,
                          const EpisodeConfig& config, const UtilityMatrices& utilities, std::size_t batches,
                          std::size_t games_per_batch, std::size_t threads) {
  const std::vector<Assignment> assignments = protocol_assignments(games, batches, games_per_batch);
  std::vector<Trajectory> played(assignments.size());
  parallel_for(assignments.size(), threads, [&](std::size_t i) {
    Rng rng(derive_seed(0, "validate", i));
    played[i] = play_episode(a, b, assignments[i], config, utilities, rng);
  });
  std::size_t next = 0;
  return validate_protocol(games, batches, games_per_batch, [&](const Assignment&) { return played[next++]; });
}

namespace {

/// One episode on its own tape, with the loss recorded but not yet propagated.
struct EpisodeWork {
  std::unique_ptr<Tape> tape;
  Var loss;
  int reward = 0;
};

void rollout(EpisodeWork& work, const TrainingState& state, const TrainConfig& config, const GameSample& sample,
             Rng& rng, const UtilityMatrices& utilities, std::array<std::span<double>, 2> grads,
             std::span<double> baseline_value, std::span<double> baseline_grad) {
  if (!work.tape) work.tape = std::make_unique<Tape>(true);
  work.tape->clear();
  Tape& tape = *work.tape;
  const Assignment assignment = assign(rng, sample);
  NeuralRollout r(tape, state.agents[0], state.agents[1], grads[0], grads[1]);
  const Trajectory traj = r.play(assignment, config.episode(ActionMode::sample), utilities, rng);
  Var b = tape.parameter(baseline_value, {1, 1}, baseline_grad);
  LossTerms loss = reinforce_loss(tape, traj, r.choice_log_probs(), r.message_log_probs(), b, config.credit_unheard);
  work.loss = tape.scale(loss.total, 1.0 / static_cast<double>(config.batch_size));
  work.reward = traj.reward;
}

}  // namespace

double train_batch(TrainingState& state, const TrainConfig& config, std::span<const GameSample> train_set,
                   const UtilityMatrices& utilities) {
  if (train_set.empty()) throw std::invalid_argument("train_batch: empty training set");
  const std::size_t k = state.batches_done;
  const std::uint64_t batch_seed = derive_seed(config.seed, "batch", k);

  std::array<std::vector<double>, 2> grads;
  for (std::size_t i = 0; i < 2; ++i) grads[i].assign(state.agents[i].params().size(), 0.0);
  double baseline_value = state.baseline;
  double baseline_grad = 0.0;
  const std::array<std::span<double>, 2> grad_spans{grads[0], grads[1]};

  auto run = [&](EpisodeWork& work, std::size_t i) {
    Rng rng(derive_seed(batch_seed, "episode", i));
    const GameSample& sample = train_set[rng.below(train_set.size())];
    rollout(work, state, config, sample, rng, utilities, grad_spans, std::span<double>(&baseline_value, 1),
            std::span<double>(&baseline_grad, 1));
  };

  double reward_sum = 0.0;
  std::size_t episode = 0;
  try {
    if (config.threads <= 1) {
      EpisodeWork work;
      for (episode = 0; episode < config.batch_size; ++episode) {
        run(work, episode);
        work.tape->backward(work.loss);
        reward_sum += work.reward;
      }
    } else {
      std::vector<EpisodeWork> works(config.batch_size);
      parallel_for(works.size(), config.threads, [&](std::size_t i) { run(works[i], i); });
      // Backward in batch order so the summed gradients are independent of the thread count.
      for (episode = 0; episode < works.size(); ++episode) {
        works[episode].tape->backward(works[episode].loss);
        reward_sum += works[episode].reward;
      }
    }
  } catch (const NumericError& e) {
    std::ostringstream msg;
    msg << "non-finite value at batch " << k << " (seed " << config.seed << ", baseline " << state.baseline
        << "): " << e.what();
    throw TrainingDiverged(msg.str());
  }

  for (std::size_t i = 0; i < 2; ++i) {
    clip_gradients(grads[i], config.clip, config.clip_mode);
    state.agent_optimizers[i].step(state.agents[i].params().values(), grads[i]);
  }
  clip_gradients(std::span<double>(&baseline_grad, 1), config.clip, config.clip_mode);
  state.baseline_optimizer.step(std::span<double>(&state.baseline, 1), std::span<const double>(&baseline_grad, 1));

  ++state.batches_done;
  return reward_sum / static_cast<double>(config.batch_size);
}

TrainResult train(TrainingState& state, const TrainConfig& config, std::span<const GameSample> train_set,
                  std::span<const GameSample> validation_set, const UtilityMatrices& utilities,
                  const TrainHooks& hooks) {
  config.validate();
  TrainResult result;
  const EpisodeConfig eval = config.episode(ActionMode::argmax);
  while (state.batches_done < config.total_batches) {
    if (hooks.stop_after != 0 && state.batches_done >= hooks.stop_after) return result;
    state.window_reward_sum += train_batch(state, config, train_set, utilities);
    ++state.window_batches;
    if (state.batches_done % config.validation_every == 0 || state.batches_done == config.total_batches) {
      const ValidationResult v = validate(state.agents[0], state.agents[1], validation_set, eval, utilities,
                                          config.validation_batches, config.validation_games_per_batch,
                                          config.threads);
      TrainingState::CurvePoint p;
      p.batch = state.batches_done;
      p.train_reward = state.window_reward_sum / static_cast<double>(state.window_batches);
      p.val_accuracy = v.accuracy;
      state.curve.push_back(p);
      state.window_reward_sum = 0.0;
      state.window_batches = 0;
      if (hooks.on_progress) hooks.on_progress(p);
      if (hooks.on_validation) hooks.on_validation(state);
    }
  }
  result.completed = true;
  if (!state.curve.empty()) result.final_validation = state.curve.back().val_accuracy;
  result.success = result.final_validation >= config.success_threshold;
  return result;
}

namespace {

const char* const kAgentPrefix[2] = {"agentA", "agentB"};

void put_dims(Checkpoint& c, const AgentDims& d) {
  c.set_meta("dims",
             std::to_string(d.fruit_features) + "," + std::to_string(d.tool_features) + "," +
                 std::to_string(d.fruit_embed) + "," + std::to_string(d.tool_embed) + "," +
                 std::to_string(d.symbol_embed) + "," + std::to_string(d.hidden) + "," + std::to_string(d.vocab) +
                 "," + std::to_string(d.choices));
}

AgentDims get_dims(const Checkpoint& c) {
  const std::string text = c.require_meta("dims");
  std::vector<std::size_t> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) v.push_back(std::stoul(part));
  if (v.size() != 8) throw std::runtime_error("checkpoint: malformed dims '" + text + "'");
  AgentDims d;
  d.fruit_features = v[0];
  d.tool_features = v[1];
  d.fruit_embed = v[2];
  d.tool_embed = v[3];
  d.symbol_embed = v[4];
  d.hidden = v[5];
  d.vocab = v[6];
  d.choices = v[7];
  return d;
}

void put_params(Checkpoint& c, const std::string& prefix, const ParameterSet& params,
                std::span<const double> values) {
  for (const ParamSlice& s : params.slices()) {
    NamedTensor t;
    t.name = prefix + "." + s.name;
    t.shape = s.shape;
    t.values.assign(values.begin() + static_cast<std::ptrdiff_t>(s.offset),
                    values.begin() + static_cast<std::ptrdiff_t>(s.offset + s.shape.size()));
    c.tensors.push_back(std::move(t));
  }
}

void get_params(const Checkpoint& c, const std::string& prefix, const ParameterSet& params,
                std::span<double> out) {
  for (const ParamSlice& s : params.slices()) {
    const NamedTensor& t = c.require(prefix + "." + s.name);
    if (t.shape != s.shape)
      throw std::runtime_error("checkpoint: tensor " + t.name + " has shape " + std::to_string(t.shape.rows) + "x" +
                               std::to_string(t.shape.cols) + ", expected " + std::to_string(s.shape.rows) + "x" +
                               std::to_string(s.shape.cols));
    std::copy(t.values.begin(), t.values.end(), out.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
}

double scalar(const Checkpoint& c, const std::string& name) {
  const NamedTensor& t = c.require(name);
  if (t.values.size() != 1) throw std::runtime_error("checkpoint: " + name + " must be a scalar");
  return t.values[0];
}

}  // namespace

Checkpoint to_checkpoint(const TrainingState& state, const TrainConfig& config, const std::string& config_hash) {
  Checkpoint c;
  c.set_meta("kind", "training-state");
  c.set_meta("config_hash", config_hash);
  c.set_meta("seed", std::to_string(config.seed));
  c.set_meta("batches_done", std::to_string(state.batches_done));
  c.set_meta("window_batches", std::to_string(state.window_batches));
  c.set_meta("memory_enabled", config.memory_enabled ? "true" : "false");
  c.set_meta("communication_enabled", config.communication_enabled ? "true" : "false");
  c.set_meta("max_turns", std::to_string(config.max_turns));
  put_dims(c, config.dims);
  for (std::size_t i = 0; i < 2; ++i) {
    const ParameterSet& p = state.agents[i].params();
    put_params(c, kAgentPrefix[i], p, p.values());
  }
  c.tensors.push_back({"baseline.b", {1, 1}, {state.baseline}});
  for (std::size_t i = 0; i < 2; ++i)
    put_params(c, std::string("optimizer.") + kAgentPrefix[i], state.agents[i].params(),
               state.agent_optimizers[i].square_avg());
  c.tensors.push_back({"optimizer.baseline.b", {1, 1}, {state.baseline_optimizer.square_avg()[0]}});
  c.tensors.push_back({"window.reward_sum", {1, 1}, {state.window_reward_sum}});
  NamedTensor curve{"curve", {state.curve.size(), 3}, {}};
  for (const auto& p : state.curve) {
    curve.values.push_back(static_cast<double>(p.batch));
    curve.values.push_back(p.train_reward);
    curve.values.push_back(p.val_accuracy);
  }
  c.tensors.push_back(std::move(curve));
  return c;
}

std::array<AgentParameters, 2> agents_from_checkpoint(const Checkpoint& checkpoint) {
  const AgentDims dims = get_dims(checkpoint);
  std::array<AgentParameters, 2> agents{AgentParameters(dims), AgentParameters(dims)};
  for (std::size_t i = 0; i < 2; ++i)
    get_params(checkpoint, kAgentPrefix[i], agents[i].params(), agents[i].params().values());
  return agents;
}

EpisodeConfig episode_from_checkpoint(const Checkpoint& checkpoint) {
  auto flag = [&](const char* key) {
    const std::string v = checkpoint.require_meta(key);
    if (v != "true" && v != "false") throw std::runtime_error(std::string("checkpoint: bad boolean for ") + key);
    return v == "true";
  };
  EpisodeConfig e;
  e.memory_enabled = flag("memory_enabled");
  e.communication_enabled = flag("communication_enabled");
  e.max_turns = std::stoul(checkpoint.require_meta("max_turns"));
  e.dummy_message = get_dims(checkpoint).dummy_symbol();
  e.mode = ActionMode::argmax;
  return e;
}

TrainingState from_checkpoint(const Checkpoint& checkpoint, const TrainConfig& config) {
  if (!(get_dims(checkpoint) == config.dims)) throw std::runtime_error("checkpoint: agent dimensions differ from config");
  TrainingState s = TrainingState::fresh(config);
  s.agents = agents_from_checkpoint(checkpoint);
  for (std::size_t i = 0; i < 2; ++i)
    get_params(checkpoint, std::string("optimizer.") + kAgentPrefix[i], s.agents[i].params(),
               s.agent_optimizers[i].mutable_square_avg());
  s.baseline = scalar(checkpoint, "baseline.b");
  s.baseline_optimizer.mutable_square_avg()[0] = scalar(checkpoint, "optimizer.baseline.b");
  s.batches_done = std::stoul(checkpoint.require_meta("batches_done"));
  s.window_batches = std::stoul(checkpoint.require_meta("window_batches"));
  s.window_reward_sum = scalar(checkpoint, "window.reward_sum");
  const NamedTensor& curve = checkpoint.require("curve");
  if (curve.shape.cols != 3 && curve.shape.rows != 0) throw std::runtime_error("checkpoint: curve must have 3 columns");
  for (std::size_t r = 0; r < curve.shape.rows; ++r) {
    TrainingState::CurvePoint p;
    p.batch = static_cast<std::size_t>(curve.values[3 * r]);
    p.train_reward = curve.values[3 * r + 1];
    p.val_accuracy = curve.values[3 * r + 2];
    s.curve.push_back(p);
  }
  return s;
}

void write_curve(const std::filesystem::path& path, const TrainingState& state, const std::string& config_hash,
                 std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# training curve\tconfig_hash=" << config_hash << "\tseed=" << seed << '\n';
  out << "batch\ttrain_reward_ma\tval_accuracy\n";
  char buf[64];
  for (const auto& p : state.curve) {
    std::snprintf(buf, sizeof buf, "%.6f\t%.6f", p.train_reward, p.val_accuracy);
    out << p.batch << '\t' << buf << '\n';
  }
}

}  // namespace fruitcomm
