#pragma once

// The symmetric agent: input embedders, message encoder RNN, Body, message
// decoder RNN and choice decoder.

#include <cstddef>
#include <span>
#include <vector>

#include "fruitcomm/autodiff.hpp"
#include "fruitcomm/parameters.hpp"
#include "fruitcomm/rng.hpp"

namespace fruitcomm {

struct AgentDims {
  std::size_t fruit_features = 11;
  std::size_t tool_features = 30;  // both tools of the pair, concatenated
  std::size_t fruit_embed = 100;
  std::size_t tool_embed = 50;     // zero-padded to fruit_embed before the Body
  std::size_t symbol_embed = 50;
  std::size_t hidden = 100;        // encoder hidden, agent state and decoder hidden
  std::size_t vocab = 10;
  std::size_t choices = 3;

  /// Index of the reserved dummy message m0 in the symbol table.
  std::size_t dummy_symbol() const { return vocab; }
  std::size_t body_input() const { return 2 * hidden + fruit_embed; }
  void validate() const;
  friend bool operator==(const AgentDims&, const AgentDims&) = default;
};

enum class ActionMode { sample, argmax };

/// Slot indices into an agent's ParameterSet.
struct AgentSlots {
  std::size_t fruit_weight, fruit_bias;
  std::size_t tool_weight, tool_bias;
  std::size_t symbols;
  std::size_t encoder_w_ih, encoder_w_hh, encoder_bias;
  std::size_t body_weight, body_bias;
  std::size_t decoder_w_ih, decoder_w_hh, decoder_bias;
  std::size_t decoder_out_weight, decoder_out_bias;
  std::size_t choice_weight, choice_bias;
};

class AgentParameters {
 public:
  /// All-zero parameters.
  explicit AgentParameters(AgentDims dims = {});

  /// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; symbol
  /// embeddings uniform in [-1, 1]. The dummy symbol row stays zero.
  static AgentParameters initialize(AgentDims dims, Rng& rng);

  const AgentDims& dims() const { return dims_; }
  const AgentSlots& slots() const { return slots_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  friend bool operator==(const AgentParameters& a, const AgentParameters& b) {
    return a.dims_ == b.dims_ && a.params_ == b.params_;
  }

 private:
  AgentDims dims_;
  ParameterSet params_;
  AgentSlots slots_{};
};

/// Tape nodes produced by one agent turn.
struct StepVars {
  Var encoder_hidden;
  Var state;
  Var choice_dist;
  Var message_dist;
};

/// An agent's parameters bound to a tape for one episode.
class BoundAgent {
 public:
  BoundAgent(Tape& tape, const AgentParameters& params, std::span<double> grad = {});

  /// tanh(linear(input)); 11 inputs select the fruit embedder, 30 the tool
  /// embedder (whose output is zero-padded).
  Var embed_input(std::span<const double> input);
  /// The fixed dummy state s0 (all zeros).
  Var initial_state();
  StepVars step(Var prev_state, std::size_t incoming_message, Var input_embedding);

  const AgentDims& dims() const { return params_->dims(); }
  Tape& tape() { return *tape_; }

 private:
  Var symbol(std::size_t index);

  Tape* tape_;
  const AgentParameters* params_;
  std::vector<Var> bound_;
};

/// Values recorded for one agent turn.
struct AgentStepTrace {
  std::size_t incoming_message = 0;
  std::vector<double> encoder_hidden;
  std::vector<double> prev_state;
  std::vector<double> input_embedding;
  std::vector<double> state;
  std::vector<double> choice_dist;
  std::vector<double> message_dist;
  std::size_t choice = 0;
  std::size_t message = 0;
  double choice_log_prob = 0.0;
  double message_log_prob = 0.0;
};

struct Distributions {
  std::vector<double> choice;
  std::vector<double> message;
};

/// First index of the maximum (argmax mode) or a draw (sample mode).
std::size_t select_action(std::span<const double> dist, ActionMode mode, Rng& rng);

std::vector<double> embed_input(const AgentParameters& params, std::span<const double> input);

/// One turn without gradient recording. Draws the choice, then the message.
AgentStepTrace step(const AgentParameters& params, std::span<const double> prev_state,
                    std::size_t incoming_message, std::span<const double> input_embedding, ActionMode mode,
                    Rng& rng);

/// The choice and message distributions for a turn, without sampling.
Distributions conditional_distributions(const AgentParameters& params, std::span<const double> prev_state,
                                        std::size_t incoming_message, std::span<const double> input_embedding);

/// Fills the value fields of a trace from evaluated tape nodes.
AgentStepTrace make_trace(const StepVars& vars, Var prev_state, Var input_embedding, std::size_t incoming_message);

}  // namespace fruitcomm
