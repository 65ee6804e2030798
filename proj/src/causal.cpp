#include "fruitcomm/causal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "fruitcomm/parallel.hpp"

namespace fruitcomm {

void MEConfig::validate() const {
  if (samples == 0 || counterfactuals == 0) throw std::invalid_argument("ME config: K and J must be >= 1");
  if (!(theta > 0.0)) throw std::invalid_argument("ME config: theta must be positive");
}

std::vector<double> joint_distribution(const Distributions& d) {
  std::vector<double> z;
  z.reserve(d.choice.size() * d.message.size());
  for (double pc : d.choice)
    for (double pm : d.message) z.push_back(pc * pm);
  return z;
}

namespace {

// Mean of rows[m][z] over `picks`, as an offset from the first term so that
// identical rows reproduce their common value exactly.
double mean_over(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> picks, std::size_t z) {
  const double first = rows[picks[0]][z];
  double diff = 0.0;
  for (std::size_t m : picks) diff += rows[m][z] - first;
  return first + diff / static_cast<double>(picks.size());
}

}  // namespace

MEResult message_effect(const InterventionTable& table, const MEConfig& config, Rng& rng) {
  config.validate();
  const std::size_t v = table.support.size();
  if (v == 0) throw std::invalid_argument("message_effect: empty intervention support");
  const std::size_t nz = table.observed.size();
  for (const auto& row : table.support)
    if (row.size() != nz) throw std::invalid_argument("message_effect: distribution sizes differ");

  MEResult r;
  if (config.exhaustive) {
    std::vector<std::size_t> all(v);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t z = 0; z < nz; ++z) {
      const double p = table.observed[z];
      if (p <= 0.0) continue;
      double q = mean_over(table.support, all, z);
      if (q < kProbabilityFloor) {
        q = kProbabilityFloor;
        r.floored = true;
      }
      r.value += p * std::log(p / q);
    }
    return r;
  }

  // Counterfactuals are shared by the K samples of z.
  const std::size_t j = config.counterfactuals;
  std::vector<std::size_t> picks;
  picks.reserve(j);
  if (config.counterfactuals_with_replacement || j > v) {
    for (std::size_t i = 0; i < j; ++i) picks.push_back(rng.below(v));
  } else {
    std::vector<std::size_t> order(v);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < j; ++i) {
      const std::size_t k = i + rng.below(v - i);
      std::swap(order[i], order[k]);
      picks.push_back(order[i]);
    }
  }

  double total = 0.0;
  for (std::size_t k = 0; k < config.samples; ++k) {
    const std::size_t z = rng.categorical(table.observed);
    double q = mean_over(table.support, picks, z);
    if (q < kProbabilityFloor) {
      q = kProbabilityFloor;
      r.floored = true;
    }
    total += std::log(std::max(table.observed[z], kProbabilityFloor) / q);
  }
  r.value = total / static_cast<double>(config.samples);
  return r;
}

MEResult message_effect(const Responder& responder, std::size_t observed, std::span<const std::size_t> support,
                        const MEConfig& config, Rng& rng) {
  InterventionTable table;
  table.observed = responder(observed);
  table.support.reserve(support.size());
  for (std::size_t m : support) table.support.push_back(m == observed ? table.observed : responder(m));
  return message_effect(table, config, rng);
}

namespace {

std::vector<std::size_t> regular_symbols(std::size_t vocab) {
  std::vector<std::size_t> s(vocab);
  std::iota(s.begin(), s.end(), 0);
  return s;
}

MessageME measure(const TurnRecord& receiver, const AgentParameters& params, std::size_t observed,
                  std::span<const std::size_t> support, const MEConfig& config, Rng& rng) {
  const AgentStepTrace& t = receiver.trace;
  Responder responder = [&](std::size_t m) {
    return joint_distribution(conditional_distributions(params, t.prev_state, m, t.input_embedding));
  };
  const MEResult r = message_effect(responder, observed, support, config, rng);
  MessageME out;
  out.value = r.value;
  out.floored = r.floored;
  return out;
}

}  // namespace

std::vector<MessageME> trajectory_me(const Trajectory& trajectory, const AgentParameters& a,
                                     const AgentParameters& b, const EpisodeConfig& episode, const MEConfig& config,
                                     Rng& rng) {
  std::vector<MessageME> out;
  if (trajectory.turns.empty()) return out;
  const Assignment& as = trajectory.assignment;
  const std::vector<std::size_t> support = regular_symbols(a.dims().vocab);
  auto params = [&](AgentId id) -> const AgentParameters& { return id == AgentId::A ? a : b; };
  auto label = [&](MessageME& m, AgentId speaker) {
    m.speaker = speaker;
    m.speaker_is_fruit = speaker == as.fruit_player();
    m.speaker_first = speaker == as.position1;
  };

  {
    const TurnRecord& first = trajectory.turns.front();
    MessageME m = measure(first, params(first.agent), episode.dummy_message, support, config, rng);
    label(m, as.position2());
    out.push_back(m);
  }
  for (std::size_t t = 0; t + 1 < trajectory.turns.size(); ++t) {
    const TurnRecord& sent = trajectory.turns[t];
    if (!sent.heard) continue;
    const TurnRecord& next = trajectory.turns[t + 1];
    MessageME m = measure(next, params(next.agent), next.trace.incoming_message, support, config, rng);
    m.sent_at = t;
    label(m, sent.agent);
    out.push_back(m);
  }
  return out;
}

bool bilateral(std::span<const double> a_to_b, std::span<const double> b_to_a, double theta) {
  auto any = [theta](std::span<const double> v) {
    return std::any_of(v.begin(), v.end(), [theta](double x) { return x > theta; });
  };
  return any(a_to_b) && any(b_to_a);
}

bool bilateral(std::span<const MessageME> messages, double theta) {
  std::vector<double> from_a, from_b;
  for (const MessageME& m : messages) (m.speaker == AgentId::A ? from_a : from_b).push_back(m.value);
  return bilateral(from_a, from_b, theta);
}

const char* metric_name(Metric m) {
  static const char* const names[kMetricCount] = {
      "performance_pct", "me_f_to_t",      "me_t_to_f",      "me_1_to_2",
      "me_2_to_1",       "me_1t2f_f_to_t", "me_1t2f_t_to_f", "me_1f2t_f_to_t",
      "me_1f2t_t_to_f",  "bilateral_pct",  "conversation_length", "tool_chooses_pct"};
  return names[static_cast<std::size_t>(m)];
}

namespace {

GameRecord record_game(const Trajectory& trajectory, std::span<const MessageME> messages, double theta) {
  GameRecord g;
  g.configuration = trajectory.assignment.configuration();
  g.reward = trajectory.reward;
  g.conversation_length = trajectory.conversation_length;
  g.tool_chose = trajectory.ended_by_tool_player();
  std::array<double, 4> sum{};
  std::array<std::size_t, 4> count{};
  auto add = [&](std::size_t dir, double v) {
    sum[dir] += v;
    ++count[dir];
  };
  for (const MessageME& m : messages) {
    add(m.speaker_is_fruit ? 0 : 1, m.value);
    add(m.speaker_first ? 2 : 3, m.value);
  }
  auto avg = [&](std::size_t dir) { return count[dir] ? sum[dir] / static_cast<double>(count[dir]) : 0.0; };
  g.me_f_to_t = avg(0);
  g.me_t_to_f = avg(1);
  g.me_1_to_2 = avg(2);
  g.me_2_to_1 = avg(3);
  g.bilateral = bilateral(messages, theta);
  return g;
}

bool tool_first(TestConfiguration c) {
  return c == TestConfiguration::a_tool_first || c == TestConfiguration::a_fruit_second;
}

}  // namespace

MetricValues summarize(std::span<const GameRecord> games) {
  if (games.empty()) throw std::invalid_argument("summarize: no games");
  // Per configuration: the per-game mean of each metric.
  std::array<MetricValues, kConfigurationCount> per{};
  std::array<double, kConfigurationCount> n{};
  for (const GameRecord& g : games) {
    const auto c = static_cast<std::size_t>(g.configuration);
    MetricValues& v = per[c];
    n[c] += 1.0;
    v[static_cast<std::size_t>(Metric::performance)] += 100.0 * g.reward;
    v[static_cast<std::size_t>(Metric::me_f_to_t)] += g.me_f_to_t;
    v[static_cast<std::size_t>(Metric::me_t_to_f)] += g.me_t_to_f;
    v[static_cast<std::size_t>(Metric::me_1_to_2)] += g.me_1_to_2;
    v[static_cast<std::size_t>(Metric::me_2_to_1)] += g.me_2_to_1;
    v[static_cast<std::size_t>(Metric::bilateral_pct)] += g.bilateral ? 100.0 : 0.0;
    v[static_cast<std::size_t>(Metric::conversation_length)] += static_cast<double>(g.conversation_length);
    v[static_cast<std::size_t>(Metric::tool_chooses_pct)] += g.tool_chose ? 100.0 : 0.0;
  }
  MetricValues out{};
  std::size_t present = 0, present_tf = 0, present_ft = 0;
  double tf_f = 0.0, tf_t = 0.0, ft_f = 0.0, ft_t = 0.0;
  for (std::size_t c = 0; c < kConfigurationCount; ++c) {
    if (n[c] == 0.0) continue;
    ++present;
    for (double& x : per[c]) x /= n[c];
    for (std::size_t m = 0; m < kMetricCount; ++m) out[m] += per[c][m];
    const double f = per[c][static_cast<std::size_t>(Metric::me_f_to_t)];
    const double t = per[c][static_cast<std::size_t>(Metric::me_t_to_f)];
    if (tool_first(static_cast<TestConfiguration>(c))) {
      ++present_tf;
      tf_f += f;
      tf_t += t;
    } else {
      ++present_ft;
      ft_f += f;
      ft_t += t;
    }
  }
  for (double& x : out) x /= static_cast<double>(present);
  auto div = [](double s, std::size_t k) { return k ? s / static_cast<double>(k) : 0.0; };
  out[static_cast<std::size_t>(Metric::me_1t2f_f_to_t)] = div(tf_f, present_tf);
  out[static_cast<std::size_t>(Metric::me_1t2f_t_to_f)] = div(tf_t, present_tf);
  out[static_cast<std::size_t>(Metric::me_1f2t_f_to_t)] = div(ft_f, present_ft);
  out[static_cast<std::size_t>(Metric::me_1f2t_t_to_f)] = div(ft_t, present_ft);
  return out;
}

MEReport evaluate(const AgentParameters& a, const AgentParameters& b, std::span<const GameSample> games,
                  const UtilityMatrices& utilities, const EvaluationConfig& config) {
  config.me.validate();
  if (games.empty()) throw std::invalid_argument("evaluate: no games");
  if (config.test_seeds == 0) throw std::invalid_argument("evaluate: need at least one test seed");
  EpisodeConfig episode = config.episode;
  episode.mode = ActionMode::argmax;
  const std::size_t per_seed = config.batches * config.games_per_batch;

  MEReport report;
  report.games_per_seed = per_seed;
  std::vector<GameSample> rotated(games.size());
  for (std::size_t s = 0; s < config.test_seeds; ++s) {
    const std::size_t shift = (s * per_seed) % games.size();
    std::rotate_copy(games.begin(), games.begin() + static_cast<std::ptrdiff_t>(shift), games.end(),
                     rotated.begin());
    const std::vector<Assignment> assignments = protocol_assignments(rotated, config.batches, config.games_per_batch);
    const std::uint64_t seed_s = derive_seed(config.seed, "test-seed", s);

    std::vector<GameRecord> records(assignments.size());
    std::vector<std::size_t> floored(assignments.size(), 0);
    parallel_for(assignments.size(), config.threads, [&](std::size_t i) {
      Rng play_rng(0);
      const Trajectory t = play_episode(a, b, assignments[i], episode, utilities, play_rng);
      Rng me_rng(derive_seed(seed_s, "game", i));
      const std::vector<MessageME> messages = trajectory_me(t, a, b, episode, config.me, me_rng);
      records[i] = record_game(t, messages, config.me.theta);
      records[i].test_seed = s;
      records[i].game = i;
      for (const MessageME& m : messages) floored[i] += m.floored ? 1 : 0;
    });

    const MetricValues v = summarize(records);
    for (std::size_t m = 0; m < kMetricCount; ++m) report.values[m] += v[m] / static_cast<double>(config.test_seeds);
    for (std::size_t f : floored) report.floored += f;
    if (config.keep_games) report.games.insert(report.games.end(), records.begin(), records.end());
  }
  return report;
}

std::array<MeanSem, kMetricCount> aggregate(std::span<const MEReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  std::array<MeanSem, kMetricCount> out;
  std::vector<double> column(reports.size());
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    for (std::size_t i = 0; i < reports.size(); ++i) column[i] = reports[i].values[m];
    out[m] = mean_sem(column);
  }
  return out;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int digits_for(Metric m) {
  switch (m) {
    case Metric::performance:
    case Metric::bilateral_pct:
    case Metric::tool_chooses_pct:
      return 2;
    case Metric::conversation_length:
      return 3;
    default:
      return 6;
  }
}

}  // namespace

void write_me_report(std::ostream& out, std::span<const std::string> run_labels, std::span<const MEReport> reports,
                     const std::string& config_hash, std::uint64_t seed) {
  if (run_labels.size() != reports.size()) throw std::invalid_argument("write_me_report: one label per report");
  const auto agg = aggregate(reports);
  out << "# communication report: performance, message effect by direction, pragmatics\n";
  out << "# config_hash=" << config_hash << "\tseed=" << seed << "\truns=" << reports.size() << '\n';
  out << "metric\tmean\tsem";
  for (const std::string& l : run_labels) out << '\t' << l;
  out << '\n';
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    const int d = digits_for(static_cast<Metric>(m));
    out << metric_name(static_cast<Metric>(m)) << '\t' << fixed(agg[m].mean, d) << '\t' << fixed(agg[m].sem, d);
    for (const MEReport& r : reports) out << '\t' << fixed(r.values[m], d);
    out << '\n';
  }
}

void write_game_records(std::ostream& out, std::span<const GameRecord> games) {
  out << "test_seed\tgame\tconfig\treward\tconversation_length\ttool_chose\tme_f_to_t\tme_t_to_f\tme_1_to_2\t"
         "me_2_to_1\tbilateral\n";
  for (const GameRecord& g : games) {
    out << g.test_seed << '\t' << g.game << '\t' << static_cast<int>(g.configuration) + 1 << '\t' << g.reward << '\t'
        << g.conversation_length << '\t' << (g.tool_chose ? 1 : 0) << '\t' << fixed(g.me_f_to_t, 6) << '\t'
        << fixed(g.me_t_to_f, 6) << '\t' << fixed(g.me_1_to_2, 6) << '\t' << fixed(g.me_2_to_1, 6) << '\t'
        << (g.bilateral ? 1 : 0) << '\n';
  }
}

}  // namespace fruitcomm
