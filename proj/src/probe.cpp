#include "fruitcomm/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>

#include "fruitcomm/optim.hpp"
#include "fruitcomm/parallel.hpp"
#include "fruitcomm/trainer.hpp"

namespace fruitcomm {

ProbeTask parse_probe_task(const std::string& text) {
  if (text == "fruit") return ProbeTask::fruit;
  if (text == "tool1") return ProbeTask::tool1;
  if (text == "tool2") return ProbeTask::tool2;
  throw std::invalid_argument("unknown probe task '" + text + "' (fruit, tool1, tool2)");
}

UtteranceFilter parse_utterance_filter(const std::string& text) {
  if (text == "both" || text == "Both") return UtteranceFilter::both;
  if (text == "F" || text == "f") return UtteranceFilter::fruit;
  if (text == "T" || text == "t") return UtteranceFilter::tool;
  throw std::invalid_argument("unknown utterance filter '" + text + "' (Both, F, T)");
}

const char* to_string(ProbeTask task) {
  switch (task) {
    case ProbeTask::fruit:
      return "fruit";
    case ProbeTask::tool1:
      return "tool1";
    case ProbeTask::tool2:
      return "tool2";
  }
  return "?";
}

const char* to_string(UtteranceFilter filter) {
  switch (filter) {
    case UtteranceFilter::both:
      return "Both";
    case UtteranceFilter::fruit:
      return "F";
    case UtteranceFilter::tool:
      return "T";
  }
  return "?";
}

void ProbeConfig::validate() const {
  if (symbol_embed == 0 || hidden == 0 || partition_seeds == 0 || epochs == 0 || minibatch == 0 ||
      max_partition_attempts == 0)
    throw std::invalid_argument("probe config: sizes must be positive");
  if (!(train_fraction > 0.0) || !(validation_fraction >= 0.0) || train_fraction + validation_fraction >= 1.0)
    throw std::invalid_argument("probe config: fractions must leave a non-empty test share");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("probe config: learning_rate must be positive");
}

ProbeDataset collect_conversations(const AgentParameters& a, const AgentParameters& b,
                                   std::span<const GameSample> games, TestConfiguration configuration,
                                   const EpisodeConfig& episode, const UtilityMatrices& utilities,
                                   const CategoryTable& table, std::size_t max_games, std::size_t threads) {
  EpisodeConfig ep = episode;
  ep.mode = ActionMode::argmax;
  const std::size_t n = max_games == 0 ? games.size() : std::min(max_games, games.size());
  ProbeDataset d;
  d.fruit_classes = table.categories(ObjectKind::fruit).size();
  d.tool_classes = table.categories(ObjectKind::tool).size();
  d.games_played = n;
  d.conversations.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    Rng rng(0);
    const Trajectory t = play_episode(a, b, assign(configuration, games[i]), ep, utilities, rng);
    Conversation& c = d.conversations[i];
    for (const TurnRecord& r : t.turns)
      if (r.heard) c.utterances.push_back({r.agent == t.assignment.fruit_player(), r.trace.message});
    c.fruit = games[i].fruit.category;
    c.tool1 = games[i].tool1.category;
    c.tool2 = games[i].tool2.category;
    c.success = t.reward == 1;
    c.source = i;
  });
  return d;
}

ProbeDataset build_probe_dataset(const AgentParameters& a, const AgentParameters& b,
                                 std::span<const GameSample> games, const EpisodeConfig& episode,
                                 const UtilityMatrices& utilities, const CategoryTable& table,
                                 const ProbeConfig& config) {
  ProbeDataset all = collect_conversations(a, b, games, TestConfiguration::a_fruit_first, episode, utilities, table,
                                           config.max_games, config.threads);
  ProbeDataset kept = all;
  kept.conversations.clear();
  for (Conversation& c : all.conversations)
    if (c.success) kept.conversations.push_back(std::move(c));
  return kept;
}

std::vector<std::size_t> filter_symbols(const Conversation& conversation, UtteranceFilter filter) {
  std::vector<std::size_t> out;
  for (const Utterance& u : conversation.utterances) {
    if (filter == UtteranceFilter::fruit && !u.fruit_player) continue;
    if (filter == UtteranceFilter::tool && u.fruit_player) continue;
    out.push_back(u.symbol);
  }
  return out;
}

std::size_t label_of(const Conversation& conversation, ProbeTask task) {
  switch (task) {
    case ProbeTask::fruit:
      return conversation.fruit;
    case ProbeTask::tool1:
      return conversation.tool1;
    case ProbeTask::tool2:
      return conversation.tool2;
  }
  return 0;
}

std::size_t class_count(const ProbeDataset& dataset, ProbeTask task) {
  return task == ProbeTask::fruit ? dataset.fruit_classes : dataset.tool_classes;
}

ProbePartition partition_conversations(const ProbeDataset& dataset, std::uint64_t seed, const ProbeConfig& config,
                                       const CategoryTable* table) {
  config.validate();
  const std::size_t n = dataset.conversations.size();
  if (n == 0) throw std::runtime_error("probe: no conversations to partition");
  const auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train + n_val >= n) throw std::runtime_error("probe: too few conversations to partition");

  std::array<std::set<std::size_t>, 3> present;
  for (const Conversation& c : dataset.conversations) {
    present[0].insert(c.fruit);
    present[1].insert(c.tool1);
    present[2].insert(c.tool2);
  }

  std::array<std::set<std::size_t>, 3> missing;
  for (std::size_t attempt = 0; attempt < config.max_partition_attempts; ++attempt) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "partition", attempt));
    rng.shuffle(order);
    std::array<std::set<std::size_t>, 3> seen;
    for (std::size_t i = 0; i < n_train; ++i) {
      const Conversation& c = dataset.conversations[order[i]];
      seen[0].insert(c.fruit);
      seen[1].insert(c.tool1);
      seen[2].insert(c.tool2);
    }
    bool ok = true;
    for (std::size_t k = 0; k < 3; ++k) {
      missing[k].clear();
      std::set_difference(present[k].begin(), present[k].end(), seen[k].begin(), seen[k].end(),
                          std::inserter(missing[k], missing[k].end()));
      ok = ok && missing[k].empty();
    }
    if (!ok) continue;
    ProbePartition p;
    p.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    p.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    p.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return p;
  }

  std::string msg = "probe: no partition covers every category in train after " +
                    std::to_string(config.max_partition_attempts) + " attempts; missing";
  const char* const what[3] = {"fruit", "tool1", "tool2"};
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t c : missing[k]) {
      msg += std::string(" ") + what[k] + ":";
      const ObjectKind kind = k == 0 ? ObjectKind::fruit : ObjectKind::tool;
      msg += table ? table->categories(kind).at(c).name : std::to_string(c);
    }
  throw std::runtime_error(msg);
}

double stats_baseline(std::span<const std::size_t> train_labels, std::span<const std::size_t> test_labels) {
  if (train_labels.empty() || test_labels.empty()) throw std::invalid_argument("stats_baseline: empty label set");
  std::map<std::size_t, double> train, test;
  for (std::size_t l : train_labels) train[l] += 1.0;
  for (std::size_t l : test_labels) test[l] += 1.0;
  double s = 0.0;
  for (const auto& [label, count] : train) {
    auto it = test.find(label);
    if (it != test.end()) s += count * it->second;
  }
  return s / (static_cast<double>(train_labels.size()) * static_cast<double>(test_labels.size()));
}

double accuracy(const std::function<std::size_t(std::span<const std::size_t>)>& predict,
                std::span<const ProbeExample> examples) {
  if (examples.empty()) throw std::invalid_argument("accuracy: no examples");
  std::size_t hits = 0;
  for (const ProbeExample& e : examples) hits += predict(e.symbols) == e.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

std::vector<ProbeExample> make_examples(const ProbeDataset& dataset, std::span<const std::size_t> indices,
                                        ProbeTask task, UtteranceFilter filter, std::size_t* skipped) {
  std::vector<ProbeExample> out;
  out.reserve(indices.size());
  std::size_t empty = 0;
  for (std::size_t i : indices) {
    const Conversation& c = dataset.conversations.at(i);
    ProbeExample e{filter_symbols(c, filter), label_of(c, task)};
    if (e.symbols.empty()) {
      ++empty;
      continue;
    }
    out.push_back(std::move(e));
  }
  if (skipped) *skipped = empty;
  return out;
}

namespace {

enum ProbeSlot : std::size_t { kEmbedding, kWeightIh, kWeightHh, kBias, kOutWeight, kOutBias };

}  // namespace

ProbeClassifier::ProbeClassifier(std::size_t vocab, std::size_t classes, const ProbeConfig& config,
                                 std::uint64_t seed)
    : config_(config), vocab_(vocab), classes_(classes), seed_(seed) {
  config_.validate();
  if (vocab == 0 || classes == 0) throw std::invalid_argument("probe classifier: empty vocabulary or class set");
  const std::size_t e = config_.symbol_embed, h = config_.hidden;
  params_.add("embedding.weight", {vocab, e});
  params_.add("rnn.weight_ih", {h, e});
  params_.add("rnn.weight_hh", {h, h});
  params_.add("rnn.bias", {h, 1});
  params_.add("out.weight", {classes, h});
  params_.add("out.bias", {classes, 1});
  Rng rng(derive_seed(seed, "probe-init"));
  const std::size_t fan_in[] = {1, h, h, h, h, h};
  for (std::size_t s = 0; s < params_.slot_count(); ++s) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in[s]));
    for (double& v : params_.values(s)) v = rng.uniform(-bound, bound);
  }
}

namespace {

Var run_rnn(Tape& tape, const std::vector<Var>& p, std::span<const std::size_t> symbols, std::size_t hidden) {
  Var h = tape.zeros({hidden, 1});
  for (std::size_t s : symbols)
    h = tape.rnn_cell(h, tape.embedding(p[kEmbedding], s), p[kWeightIh], p[kWeightHh], p[kBias]);
  return tape.linear(h, p[kOutWeight], p[kOutBias]);
}

}  // namespace

double ProbeClassifier::loss_and_grad(const ProbeExample& example, std::span<double> grad) const {
  Tape tape(true);
  std::vector<Var> p;
  for (std::size_t s = 0; s < params_.slot_count(); ++s) p.push_back(params_.bind(tape, s, grad));
  Var logits = run_rnn(tape, p, example.symbols, config_.hidden);
  Var loss = tape.scale(tape.log_prob(tape.softmax(logits), example.label), -1.0);
  tape.backward(loss);
  return loss.item();
}

std::size_t ProbeClassifier::predict(std::span<const std::size_t> symbols) const {
  for (std::size_t s : symbols)
    if (s >= vocab_) throw std::out_of_range("probe: symbol out of range");
  Tape tape(false);
  std::vector<Var> p;
  for (std::size_t s = 0; s < params_.slot_count(); ++s) p.push_back(params_.bind(tape, s, {}));
  Var logits = run_rnn(tape, p, symbols, config_.hidden);
  const auto v = logits.value();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double ProbeClassifier::accuracy(std::span<const ProbeExample> examples) const {
  return fruitcomm::accuracy([this](std::span<const std::size_t> s) { return predict(s); }, examples);
}

std::size_t ProbeClassifier::fit(std::span<const ProbeExample> train, std::span<const ProbeExample> validation) {
  if (train.empty()) throw std::invalid_argument("probe: empty training set");
  for (const ProbeExample& e : train)
    if (e.label >= classes_) throw std::out_of_range("probe: label out of range");
  RmsProp opt(params_.size(), {config_.learning_rate, config_.rms_decay, config_.rms_epsilon});
  std::vector<double> grad(params_.size());
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> best(params_.values().begin(), params_.values().end());
  double best_val = -1.0;
  std::size_t since_best = 0, epochs = 0;
  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    Rng rng(derive_seed(seed_, "epoch", epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config_.minibatch) {
      const std::size_t end = std::min(order.size(), start + config_.minibatch);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) loss_and_grad(train[order[i]], grad);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (double& g : grad) g *= inv;
      opt.step(params_.values(), grad);
    }
    ++epochs;
    if (validation.empty()) continue;
    const double val = accuracy(validation);
    if (val > best_val) {
      best_val = val;
      std::copy(params_.values().begin(), params_.values().end(), best.begin());
      since_best = 0;
    } else if (++since_best >= config_.patience) {
      break;
    }
  }
  if (!validation.empty()) std::copy(best.begin(), best.end(), params_.values().begin());
  return epochs;
}

namespace {

std::vector<std::size_t> labels(std::span<const ProbeExample> examples) {
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const ProbeExample& e : examples) out.push_back(e.label);
  return out;
}

std::size_t probe_vocab(const ProbeDataset& d) {
  std::size_t v = 10;
  for (const Conversation& c : d.conversations)
    for (const Utterance& u : c.utterances) v = std::max(v, u.symbol + 1);
  return v;
}

}  // namespace

ProbeSummary run_probe(const ProbeDataset& dataset, ProbeTask task, UtteranceFilter filter,
                       const ProbeConfig& config) {
  config.validate();
  ProbeSummary s;
  s.task = task;
  s.filter = filter;
  s.conversations = dataset.conversations.size();
  {
    std::vector<std::size_t> all(dataset.conversations.size());
    std::iota(all.begin(), all.end(), 0);
    make_examples(dataset, all, task, filter, &s.skipped);
  }
  const std::size_t vocab = probe_vocab(dataset);
  s.runs.resize(config.partition_seeds);
  parallel_for(config.partition_seeds, config.threads, [&](std::size_t p) {
    const ProbePartition part = partition_conversations(dataset, derive_seed(config.seed, "partition-seed", p), config);
    const auto train = make_examples(dataset, part.train, task, filter);
    const auto val = make_examples(dataset, part.validation, task, filter);
    const auto test = make_examples(dataset, part.test, task, filter);
    if (train.empty() || test.empty()) throw std::runtime_error("probe: empty train or test set after filtering");
    ProbeConfig single = config;
    single.threads = 1;
    ProbeClassifier clf(vocab, class_count(dataset, task), single, derive_seed(config.seed, "probe", p));
    ProbeRun& r = s.runs[p];
    r.epochs = clf.fit(train, val);
    r.test_accuracy = 100.0 * clf.accuracy(test);
    r.stats = 100.0 * stats_baseline(labels(train), labels(test));
  });
  std::vector<double> acc, st;
  for (const ProbeRun& r : s.runs) {
    acc.push_back(r.test_accuracy);
    st.push_back(r.stats);
  }
  s.accuracy_pct = mean_sem(acc);
  s.stats_pct = mean_sem(st);
  return s;
}

SelfPlayResult self_play_eval(const AgentParameters& a, const AgentParameters& b, std::span<const GameSample> games,
                              const EpisodeConfig& episode, const UtilityMatrices& utilities, std::size_t batches,
                              std::size_t games_per_batch, std::size_t threads) {
  EpisodeConfig ep = episode;
  ep.mode = ActionMode::argmax;
  SelfPlayResult r;
  r.paired_pct = 100.0 * validate(a, b, games, ep, utilities, batches, games_per_batch, threads).accuracy;
  r.a_with_a_pct = 100.0 * validate(a, a, games, ep, utilities, batches, games_per_batch, threads).accuracy;
  r.b_with_b_pct = 100.0 * validate(b, b, games, ep, utilities, batches, games_per_batch, threads).accuracy;
  return r;
}

InvertedResult inverted_roles_eval(const AgentParameters& a, const AgentParameters& b,
                                   std::span<const GameSample> games, const EpisodeConfig& episode,
                                   const UtilityMatrices& utilities, const CategoryTable& table,
                                   const ProbeConfig& config) {
  config.validate();
  const ProbeDataset a_fruit = collect_conversations(a, b, games, TestConfiguration::a_fruit_first, episode,
                                                     utilities, table, config.max_games, config.threads);
  const ProbeDataset b_fruit = collect_conversations(a, b, games, TestConfiguration::a_tool_second, episode,
                                                     utilities, table, config.max_games, config.threads);
  ProbeDataset same = a_fruit, swapped = b_fruit;
  same.conversations.clear();
  swapped.conversations.clear();
  for (std::size_t i = 0; i < a_fruit.conversations.size(); ++i) {
    const Conversation& x = a_fruit.conversations[i];
    const Conversation& y = b_fruit.conversations[i];
    if (x.success && y.success && x.utterances.size() >= 2 && y.utterances.size() >= 2) {
      same.conversations.push_back(x);
      swapped.conversations.push_back(y);
    }
  }

  InvertedResult result;
  result.conversations = same.conversations.size();
  const std::size_t vocab = std::max(probe_vocab(same), probe_vocab(swapped));
  const UtteranceFilter filters[] = {UtteranceFilter::both, UtteranceFilter::fruit};
  // [filter][same, inverted][seed]
  std::vector<std::array<std::array<double, 2>, 2>> acc(config.partition_seeds), st(config.partition_seeds);
  parallel_for(config.partition_seeds, config.threads, [&](std::size_t p) {
    const ProbePartition part = partition_conversations(same, derive_seed(config.seed, "partition-seed", p), config,
                                                        &table);
    for (std::size_t f = 0; f < 2; ++f) {
      const auto train = make_examples(same, part.train, ProbeTask::fruit, filters[f]);
      const auto val = make_examples(same, part.validation, ProbeTask::fruit, filters[f]);
      ProbeConfig single = config;
      single.threads = 1;
      ProbeClassifier clf(vocab, same.fruit_classes, single, derive_seed(config.seed, "inverted-probe", p * 2 + f));
      clf.fit(train, val);
      const ProbeDataset* sets[2] = {&same, &swapped};
      for (std::size_t k = 0; k < 2; ++k) {
        const auto test = make_examples(*sets[k], part.test, ProbeTask::fruit, filters[f]);
        if (train.empty() || test.empty()) throw std::runtime_error("inverted probe: empty train or test set");
        acc[p][f][k] = 100.0 * clf.accuracy(test);
        st[p][f][k] = 100.0 * stats_baseline(labels(train), labels(test));
      }
    }
  });
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t k = 0; k < 2; ++k) {
      std::vector<double> av, sv;
      for (std::size_t p = 0; p < config.partition_seeds; ++p) {
        av.push_back(acc[p][f][k]);
        sv.push_back(st[p][f][k]);
      }
      result.rows.push_back({filters[f], k == 1, mean_sem(av), mean_sem(sv)});
    }
  return result;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

void write_probe_report(std::ostream& out, std::span<const ProbeSummary> summaries, const std::string& config_hash,
                        std::uint64_t seed) {
  out << "# probe accuracy (%) over partition seeds, with the Stats baseline\n";
  out << "# config_hash=" << config_hash << "\tseed=" << seed << '\n';
  out << "task\tfilter\taccuracy\taccuracy_sem\tstats\tstats_sem\tconversations\tskipped\tpartition_seeds\n";
  for (const ProbeSummary& s : summaries)
    out << to_string(s.task) << '\t' << to_string(s.filter) << '\t' << pct(s.accuracy_pct.mean) << '\t'
        << pct(s.accuracy_pct.sem) << '\t' << pct(s.stats_pct.mean) << '\t' << pct(s.stats_pct.sem) << '\t'
        << s.conversations << '\t' << s.skipped << '\t' << s.runs.size() << '\n';
}

void write_inverted_report(std::ostream& out, const InvertedResult& result, const std::string& config_hash,
                           std::uint64_t seed) {
  out << "# fruit probe trained with A as Fruit Player, tested on the same and on swapped roles\n";
  out << "# config_hash=" << config_hash << "\tseed=" << seed << "\tconversations=" << result.conversations << '\n';
  out << "filter\ttest_fruit_player\taccuracy\taccuracy_sem\tstats\tstats_sem\n";
  for (const InvertedRow& r : result.rows)
    out << to_string(r.filter) << '\t' << (r.inverted ? "B" : "A") << '\t' << pct(r.accuracy_pct.mean) << '\t'
        << pct(r.accuracy_pct.sem) << '\t' << pct(r.stats_pct.mean) << '\t' << pct(r.stats_pct.sem) << '\n';
}

void write_self_play_report(std::ostream& out, const SelfPlayResult& result, const std::string& config_hash,
                            std::uint64_t seed) {
  out << "# performance (%) of the trained pair and of each agent with a copy of itself\n";
  out << "# config_hash=" << config_hash << "\tseed=" << seed << '\n';
  out << "pairing\tperformance\n";
  out << "A+B\t" << pct(result.paired_pct) << '\n';
  out << "A+A\t" << pct(result.a_with_a_pct) << '\n';
  out << "B+B\t" << pct(result.b_with_b_pct) << '\n';
}

}  // namespace fruitcomm
