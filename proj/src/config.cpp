#include "fruitcomm/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "fruitcomm/checkpoint.hpp"
#include "fruitcomm/rng.hpp"

namespace fruitcomm {

namespace {

// Calls f(key, field) for every setting, in file order.
template <class Config, class F>
void visit(Config& c, F&& f) {
  f("run.seed", c.seed);
  f("run.threads", c.threads);
  f("data.table", c.table);
  f("data.seed", c.data_seed);
  f("data.train", c.counts.train);
  f("data.test", c.counts.test);
  f("data.validation", c.counts.validation);
  f("data.transfer", c.counts.transfer);
  f("agent.fruit_features", c.train.dims.fruit_features);
  f("agent.tool_features", c.train.dims.tool_features);
  f("agent.fruit_embed", c.train.dims.fruit_embed);
  f("agent.tool_embed", c.train.dims.tool_embed);
  f("agent.symbol_embed", c.train.dims.symbol_embed);
  f("agent.hidden", c.train.dims.hidden);
  f("agent.vocab", c.train.dims.vocab);
  f("agent.choices", c.train.dims.choices);
  f("game.memory", c.train.memory_enabled);
  f("game.communication", c.train.communication_enabled);
  f("game.max_turns", c.train.max_turns);
  f("train.batch_size", c.train.batch_size);
  f("train.total_batches", c.train.total_batches);
  f("train.learning_rate", c.train.learning_rate);
  f("train.rms_decay", c.train.rms_decay);
  f("train.rms_epsilon", c.train.rms_epsilon);
  f("train.clip", c.train.clip);
  f("train.clip_mode", c.train.clip_mode);
  f("train.credit_unheard", c.train.credit_unheard);
  f("train.validation_batches", c.train.validation_batches);
  f("train.validation_games_per_batch", c.train.validation_games_per_batch);
  f("train.validation_every", c.train.validation_every);
  f("train.success_threshold", c.train.success_threshold);
  f("me.samples", c.me.samples);
  f("me.counterfactuals", c.me.counterfactuals);
  f("me.theta", c.me.theta);
  f("me.exhaustive", c.me.exhaustive);
  f("me.counterfactuals_with_replacement", c.me.counterfactuals_with_replacement);
  f("eval.test_seeds", c.test_seeds);
  f("eval.batches", c.test_batches);
  f("eval.games_per_batch", c.test_games_per_batch);
  f("probe.symbol_embed", c.probe.symbol_embed);
  f("probe.hidden", c.probe.hidden);
  f("probe.partition_seeds", c.probe.partition_seeds);
  f("probe.epochs", c.probe.epochs);
  f("probe.patience", c.probe.patience);
  f("probe.minibatch", c.probe.minibatch);
  f("probe.learning_rate", c.probe.learning_rate);
  f("probe.train_fraction", c.probe.train_fraction);
  f("probe.validation_fraction", c.probe.validation_fraction);
  f("probe.max_partition_attempts", c.probe.max_partition_attempts);
  f("probe.max_games", c.probe.max_games);
}

std::string to_text(std::size_t v) { return std::to_string(v); }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(double v) { return format_double(v); }
std::string to_text(const std::string& v) { return v; }
std::string to_text(ClipMode v) { return to_string(v); }

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value '" + text + "' for " + key);
  return v;
}

void from_text(const std::string& key, const std::string& text, std::size_t& out) {
  out = parse_number<std::size_t>(key, text);
}
void from_text(const std::string& key, const std::string& text, double& out) { out = parse_number<double>(key, text); }
void from_text(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1") {
    out = true;
  } else if (text == "false" || text == "0") {
    out = false;
  } else {
    throw ConfigError("config: bad boolean '" + text + "' for " + key);
  }
}
void from_text(const std::string&, const std::string& text, std::string& out) { out = text; }
void from_text(const std::string& key, const std::string& text, ClipMode& out) {
  try {
    out = parse_clip_mode(text);
  } catch (const std::exception&) {
    throw ConfigError("config: bad clip mode '" + text + "' for " + key);
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds are stored as size_t-compatible integers");

}  // namespace

void ExperimentConfig::propagate() {
  train.seed = seed;
  train.threads = threads;
  probe.seed = seed;
  probe.threads = threads;
  probe.rms_decay = train.rms_decay;
  probe.rms_epsilon = train.rms_epsilon;
}

void ExperimentConfig::validate() const {
  if (threads == 0) throw ConfigError("config: run.threads must be >= 1");
  if (test_seeds == 0 || test_games_per_batch == 0 || test_batches == 0 || test_batches % kConfigurationCount != 0)
    throw ConfigError("config: eval sizes must be positive, with batches a multiple of 4");
  try {
    train.validate();
    me.validate();
    probe.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  bool found = false;
  visit(config, [&](const char* name, auto& field) {
    if (key != name) return;
    from_text(key, value, field);
    found = true;
  });
  if (!found) throw ConfigError("config: unknown key '" + key + "'");
  config.propagate();
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::string raw;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    try {
      set_config_value(c, key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  c.propagate();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in);
}

void write_config(std::ostream& out, const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  visit(copy, [&](const char* name, auto& field) { out << name << " = " << to_text(field) << '\n'; });
}

std::string config_text(const ExperimentConfig& config) {
  std::ostringstream out;
  write_config(out, config);
  return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  copy.threads = 1;
  copy.propagate();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_text(copy))));
  return buf;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return config_text(a) == config_text(b); }

}  // namespace fruitcomm
