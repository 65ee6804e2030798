#include "fruitcomm/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fruitcomm {

void AgentDims::validate() const {
  if (fruit_features == 0 || tool_features == 0 || fruit_embed == 0 || tool_embed == 0 || symbol_embed == 0 ||
      hidden == 0 || vocab == 0 || choices == 0)
    throw std::invalid_argument("agent dimensions must be positive");
  if (tool_embed > fruit_embed) throw std::invalid_argument("tool embedding must not exceed fruit embedding");
  if (fruit_features == tool_features)
    throw std::invalid_argument("fruit and tool inputs must differ in size to identify the role");
}

AgentParameters::AgentParameters(AgentDims dims) : dims_(dims) {
  dims_.validate();
  const AgentDims& d = dims_;
  slots_.fruit_weight = params_.add("fruit_embedder.weight", {d.fruit_embed, d.fruit_features});
  slots_.fruit_bias = params_.add("fruit_embedder.bias", {d.fruit_embed, 1});
  slots_.tool_weight = params_.add("tool_embedder.weight", {d.tool_embed, d.tool_features});
  slots_.tool_bias = params_.add("tool_embedder.bias", {d.tool_embed, 1});
  slots_.symbols = params_.add("symbol_embedding.weight", {d.vocab + 1, d.symbol_embed});
  slots_.encoder_w_ih = params_.add("encoder.weight_ih", {d.hidden, d.symbol_embed});
  slots_.encoder_w_hh = params_.add("encoder.weight_hh", {d.hidden, d.hidden});
  slots_.encoder_bias = params_.add("encoder.bias", {d.hidden, 1});
  slots_.body_weight = params_.add("body.weight", {d.hidden, d.body_input()});
  slots_.body_bias = params_.add("body.bias", {d.hidden, 1});
  slots_.decoder_w_ih = params_.add("message_decoder.weight_ih", {d.hidden, d.symbol_embed});
  slots_.decoder_w_hh = params_.add("message_decoder.weight_hh", {d.hidden, d.hidden});
  slots_.decoder_bias = params_.add("message_decoder.bias", {d.hidden, 1});
  slots_.decoder_out_weight = params_.add("message_decoder.out_weight", {d.vocab, d.hidden});
  slots_.decoder_out_bias = params_.add("message_decoder.out_bias", {d.vocab, 1});
  slots_.choice_weight = params_.add("choice_decoder.weight", {d.choices, d.hidden});
  slots_.choice_bias = params_.add("choice_decoder.bias", {d.choices, 1});
}

AgentParameters AgentParameters::initialize(AgentDims dims, Rng& rng) {
  AgentParameters p(dims);
  const AgentSlots& s = p.slots_;
  auto fill = [&](std::size_t slot, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : p.params_.values(slot)) v = rng.uniform(-bound, bound);
  };
  const AgentDims& d = p.dims_;
  fill(s.fruit_weight, d.fruit_features);
  fill(s.fruit_bias, d.fruit_features);
  fill(s.tool_weight, d.tool_features);
  fill(s.tool_bias, d.tool_features);
  fill(s.symbols, 1);
  fill(s.encoder_w_ih, d.hidden);
  fill(s.encoder_w_hh, d.hidden);
  fill(s.encoder_bias, d.hidden);
  fill(s.body_weight, d.body_input());
  fill(s.body_bias, d.body_input());
  fill(s.decoder_w_ih, d.hidden);
  fill(s.decoder_w_hh, d.hidden);
  fill(s.decoder_bias, d.hidden);
  fill(s.decoder_out_weight, d.hidden);
  fill(s.decoder_out_bias, d.hidden);
  fill(s.choice_weight, d.hidden);
  fill(s.choice_bias, d.hidden);
  auto table = p.params_.values(s.symbols);
  std::fill(table.begin() + static_cast<std::ptrdiff_t>(d.dummy_symbol() * d.symbol_embed), table.end(), 0.0);
  return p;
}

BoundAgent::BoundAgent(Tape& tape, const AgentParameters& params, std::span<double> grad)
    : tape_(&tape), params_(&params) {
  const ParameterSet& set = params.params();
  bound_.reserve(set.slot_count());
  for (std::size_t i = 0; i < set.slot_count(); ++i) bound_.push_back(set.bind(tape, i, grad));
}

Var BoundAgent::embed_input(std::span<const double> input) {
  const AgentDims& d = dims();
  const AgentSlots& s = params_->slots();
  if (input.size() == d.fruit_features) {
    return tape_->tanh(tape_->linear(tape_->constant(input), bound_[s.fruit_weight], bound_[s.fruit_bias]));
  }
  if (input.size() == d.tool_features) {
    Var e = tape_->tanh(tape_->linear(tape_->constant(input), bound_[s.tool_weight], bound_[s.tool_bias]));
    if (d.tool_embed == d.fruit_embed) return e;
    return tape_->concat({e, tape_->zeros({d.fruit_embed - d.tool_embed, 1})});
  }
  throw ShapeError("embed_input: expected " + std::to_string(d.fruit_features) + " (fruit) or " +
                   std::to_string(d.tool_features) + " (tools) values, got " + std::to_string(input.size()));
}

Var BoundAgent::initial_state() { return tape_->zeros({dims().hidden, 1}); }

Var BoundAgent::symbol(std::size_t index) {
  const AgentDims& d = dims();
  if (index > d.vocab) throw std::out_of_range("symbol index " + std::to_string(index) + " out of range");
  // m0 is fixed: it never receives gradient.
  if (index == d.dummy_symbol()) return tape_->zeros({d.symbol_embed, 1});
  return tape_->embedding(bound_[params_->slots().symbols], index);
}

StepVars BoundAgent::step(Var prev_state, std::size_t incoming_message, Var input_embedding) {
  const AgentDims& d = dims();
  const AgentSlots& s = params_->slots();
  if (prev_state.size() != d.hidden) throw ShapeError("step: previous state has wrong size");
  if (input_embedding.size() != d.fruit_embed) throw ShapeError("step: input embedding has wrong size");

  StepVars out;
  Var h0 = tape_->zeros({d.hidden, 1});
  out.encoder_hidden = tape_->rnn_cell(h0, symbol(incoming_message), bound_[s.encoder_w_ih],
                                       bound_[s.encoder_w_hh], bound_[s.encoder_bias]);
  Var body_in = tape_->concat({out.encoder_hidden, prev_state, input_embedding});
  out.state = tape_->tanh(tape_->linear(body_in, bound_[s.body_weight], bound_[s.body_bias]));

  Var dec_hidden = tape_->rnn_cell(out.state, symbol(d.dummy_symbol()), bound_[s.decoder_w_ih],
                                   bound_[s.decoder_w_hh], bound_[s.decoder_bias]);
  out.message_dist =
      tape_->softmax(tape_->linear(dec_hidden, bound_[s.decoder_out_weight], bound_[s.decoder_out_bias]));
  out.choice_dist = tape_->softmax(tape_->linear(out.state, bound_[s.choice_weight], bound_[s.choice_bias]));
  return out;
}

std::size_t select_action(std::span<const double> dist, ActionMode mode, Rng& rng) {
  if (mode == ActionMode::sample) return rng.categorical(dist);
  return static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
}

std::vector<double> embed_input(const AgentParameters& params, std::span<const double> input) {
  Tape tape(false);
  BoundAgent agent(tape, params);
  Var e = agent.embed_input(input);
  return {e.value().begin(), e.value().end()};
}

namespace {

std::vector<double> copy(Var v) { return {v.value().begin(), v.value().end()}; }

}  // namespace

AgentStepTrace make_trace(const StepVars& vars, Var prev_state, Var input_embedding, std::size_t incoming_message) {
  AgentStepTrace t;
  t.incoming_message = incoming_message;
  t.encoder_hidden = copy(vars.encoder_hidden);
  t.prev_state = copy(prev_state);
  t.input_embedding = copy(input_embedding);
  t.state = copy(vars.state);
  t.choice_dist = copy(vars.choice_dist);
  t.message_dist = copy(vars.message_dist);
  return t;
}

AgentStepTrace step(const AgentParameters& params, std::span<const double> prev_state, std::size_t incoming_message,
                    std::span<const double> input_embedding, ActionMode mode, Rng& rng) {
  Tape tape(false);
  BoundAgent agent(tape, params);
  Var prev = tape.constant(prev_state);
  Var input = tape.constant(input_embedding);
  StepVars vars = agent.step(prev, incoming_message, input);
  AgentStepTrace t = make_trace(vars, prev, input, incoming_message);
  t.choice = select_action(t.choice_dist, mode, rng);
  t.message = select_action(t.message_dist, mode, rng);
  t.choice_log_prob = tape.log_prob(vars.choice_dist, t.choice).item();
  t.message_log_prob = tape.log_prob(vars.message_dist, t.message).item();
  return t;
}

Distributions conditional_distributions(const AgentParameters& params, std::span<const double> prev_state,
                                        std::size_t incoming_message, std::span<const double> input_embedding) {
  Tape tape(false);
  BoundAgent agent(tape, params);
  StepVars vars = agent.step(tape.constant(prev_state), incoming_message, tape.constant(input_embedding));
  return {copy(vars.choice_dist), copy(vars.message_dist)};
}

}  // namespace fruitcomm
