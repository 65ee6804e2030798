#include "fruitcomm/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fruitcomm/checkpoint.hpp"

namespace fruitcomm {

namespace fs = std::filesystem;

SetName parse_set_name(const std::string& text) {
  if (text == "train") return SetName::train;
  if (text == "test") return SetName::test;
  if (text == "validation") return SetName::validation;
  if (text == "transfer") return SetName::transfer;
  throw std::invalid_argument("unknown set '" + text + "' (train, test, validation, transfer)");
}

const char* file_name(SetName set) {
  switch (set) {
    case SetName::train:
      return "in_domain_train.tsv";
    case SetName::test:
      return "in_domain_test.tsv";
    case SetName::validation:
      return "validation.tsv";
    case SetName::transfer:
      return "transfer.tsv";
  }
  return "";
}

fs::path default_output_dir(const std::string& command) {
  const char* env = std::getenv("FRUITCOMM_OUT");
  const fs::path root = env && *env ? fs::path(env) : fs::path("out");
  return root / command;
}

CategoryTable load_table(const ExperimentConfig& config) {
  return load_category_table(config.table.empty() ? default_table_path() : fs::path(config.table));
}

fs::path resolve_split(const fs::path& data_dir, const std::string& name_or_path) {
  for (const char* name : {"train", "test", "validation", "transfer"})
    if (name_or_path == name) return data_dir / file_name(parse_set_name(name));
  return fs::path(name_or_path);
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_config_file(const fs::path& path, const ExperimentConfig& config) {
  std::ofstream out = open_out(path);
  out << "# config_hash=" << config_hash(config) << "\tseed=" << config.seed << '\n';
  // Outputs must not depend on the thread count, so it is left out.
  std::istringstream lines(config_text(config));
  for (std::string line; std::getline(lines, line);)
    if (!line.starts_with("run.threads ")) out << line << '\n';
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(ss.str())));
  return buf;
}

std::string names(const CategoryTable& table, const std::vector<std::size_t>& idx) {
  std::string s;
  for (std::size_t i : idx) {
    if (!s.empty()) s += ',';
    s += table.categories(ObjectKind::fruit).at(i).name;
  }
  return s;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void gen_data(const ExperimentConfig& config, const fs::path& out_dir) {
  config.validate();
  const CategoryTable table = load_table(config);
  const std::string hash = config_hash(config);
  const DatasetSplit split = generate_split(table, config.data_seed, config.counts);
  fs::create_directories(out_dir);
  const std::pair<SetName, const std::vector<GameSample>*> sets[] = {{SetName::train, &split.in_domain_train},
                                                                     {SetName::test, &split.in_domain_test},
                                                                     {SetName::validation, &split.validation},
                                                                     {SetName::transfer, &split.transfer}};
  const char* labels[] = {"train", "test", "validation", "transfer"};
  for (std::size_t i = 0; i < 4; ++i)
    write_samples_file(out_dir / file_name(sets[i].first), *sets[i].second, labels[i], config.data_seed, hash);

  std::ofstream out = open_out(out_dir / "manifest.tsv");
  out << "# data manifest\tconfig_hash=" << hash << "\tseed=" << config.seed << '\n';
  out << "key\tvalue\n";
  out << "data_seed\t" << config.data_seed << '\n';
  out << "table_digest\t"
      << file_digest(config.table.empty() ? default_table_path() : fs::path(config.table)) << '\n';
  out << "in_domain_fruits\t" << names(table, split.partition.in_domain) << '\n';
  out << "validation_fruits\t" << names(table, split.partition.validation) << '\n';
  out << "transfer_fruits\t" << names(table, split.partition.transfer) << '\n';
  for (std::size_t i = 0; i < 4; ++i) {
    out << labels[i] << "_count\t" << sets[i].second->size() << '\n';
    out << labels[i] << "_digest\t" << file_digest(out_dir / file_name(sets[i].first)) << '\n';
  }
  write_config_file(out_dir / "config.txt", config);
}

namespace {

void write_result(const fs::path& path, const TrainingState& state, const TrainConfig& tc, const TrainResult& r,
                  const ValidationResult* v, const std::string& hash, std::uint64_t seed) {
  std::ofstream out = open_out(path);
  out << "# training result\tconfig_hash=" << hash << "\tseed=" << seed << '\n';
  out << "key\tvalue\n";
  out << "batches_done\t" << state.batches_done << '\n';
  out << "total_batches\t" << tc.total_batches << '\n';
  out << "completed\t" << (r.completed ? "true" : "false") << '\n';
  out << "final_validation\t" << fixed(r.final_validation, 6) << '\n';
  out << "success\t" << (r.success ? "true" : "false") << '\n';
  out << "baseline\t" << fixed(state.baseline, 6) << '\n';
  if (v) {
    const char* cfg[] = {"a_fruit_first", "a_fruit_second", "a_tool_first", "a_tool_second"};
    for (std::size_t c = 0; c < kConfigurationCount; ++c)
      out << "validation_" << cfg[c] << '\t' << fixed(v->per_configuration[c], 6) << '\n';
    out << "conversation_length\t" << fixed(v->stats.conversation_length.mean, 4) << '\n';
    out << "tool_chooses_pct\t" << fixed(v->stats.tool_chooses_pct.mean, 2) << '\n';
    out << "timeout_pct\t" << fixed(v->stats.timeout_pct, 2) << '\n';
  }
}

}  // namespace

TrainOutcome train_command(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& out_dir,
                           const TrainOptions& options) {
  config.validate();
  const TrainConfig& tc = config.train;
  const CategoryTable table = load_table(config);
  const std::vector<GameSample> train_set = read_samples_file(data_dir / file_name(SetName::train), table);
  const std::vector<GameSample> val_set = read_samples_file(data_dir / file_name(SetName::validation), table);
  const UtilityMatrices utilities = UtilityMatrices::defaults();
  const std::string hash = config_hash(config);
  fs::create_directories(out_dir);
  write_config_file(out_dir / "config.txt", config);

  const fs::path ckpt_path = out_dir / "checkpoint.txt";
  TrainOutcome outcome;
  TrainingState state;
  if (options.resume && fs::exists(ckpt_path)) {
    const Checkpoint c = load_checkpoint(ckpt_path);
    if (c.require_meta("config_hash") != hash)
      throw std::runtime_error("resume: checkpoint config hash " + c.require_meta("config_hash") +
                               " differs from " + hash);
    state = from_checkpoint(c, tc);
    outcome.resumed = true;
  } else {
    state = TrainingState::fresh(tc);
  }

  TrainHooks hooks;
  hooks.stop_after = options.stop_after;
  hooks.on_validation = [&](const TrainingState& s) {
    save_checkpoint(ckpt_path, to_checkpoint(s, tc, hash));
    write_curve(out_dir / "curve.tsv", s, hash, config.seed);
  };
  if (options.log) {
    hooks.on_progress = [&](const TrainingState::CurvePoint& p) {
      *options.log << "batch " << p.batch << "  train_reward " << fixed(p.train_reward, 4) << "  val_accuracy "
                   << fixed(p.val_accuracy, 4) << std::endl;
    };
  }

  outcome.result = train(state, tc, train_set, val_set, utilities, hooks);
  outcome.batches_done = state.batches_done;
  save_checkpoint(ckpt_path, to_checkpoint(state, tc, hash));
  write_curve(out_dir / "curve.tsv", state, hash, config.seed);
  if (outcome.result.completed) {
    const ValidationResult v = validate(state.agents[0], state.agents[1], val_set, tc.episode(ActionMode::argmax),
                                        utilities, tc.validation_batches, tc.validation_games_per_batch, tc.threads);
    write_result(out_dir / "result.tsv", state, tc, outcome.result, &v, hash, config.seed);
  } else {
    write_result(out_dir / "result.tsv", state, tc, outcome.result, nullptr, hash, config.seed);
  }
  return outcome;
}

std::vector<MEReport> analyze_command(const ExperimentConfig& config, const std::vector<fs::path>& checkpoints,
                                      const fs::path& split_file, const fs::path& out_dir,
                                      const AnalyzeOptions& options) {
  config.validate();
  if (checkpoints.empty()) throw std::invalid_argument("analyze: no checkpoint given");
  const CategoryTable table = load_table(config);
  const std::vector<GameSample> games = read_samples_file(split_file, table);
  const UtilityMatrices utilities = UtilityMatrices::defaults();
  const std::string hash = config_hash(config);

  std::vector<MEReport> reports;
  std::vector<std::string> labels;
  std::optional<EpisodeConfig> first_episode;
  for (const fs::path& path : checkpoints) {
    const Checkpoint c = load_checkpoint(path);
    const EpisodeConfig episode = episode_from_checkpoint(c);
    if (first_episode && (first_episode->memory_enabled != episode.memory_enabled ||
                          first_episode->communication_enabled != episode.communication_enabled))
      throw std::runtime_error("analyze: checkpoints were trained with different ablations");
    first_episode = episode;
    const auto agents = agents_from_checkpoint(c);
    EvaluationConfig ec;
    ec.episode = episode;
    ec.me = config.me;
    ec.test_seeds = config.test_seeds;
    ec.batches = config.test_batches;
    ec.games_per_batch = config.test_games_per_batch;
    ec.seed = config.seed;
    ec.threads = config.threads;
    ec.keep_games = options.dump_games;
    MEReport r = evaluate(agents[0], agents[1], games, utilities, ec);
    for (std::size_t m = 0; m < kMetricCount; ++m)
      if (!std::isfinite(r.values[m]))
        throw std::runtime_error(std::string("analyze: non-finite ") + metric_name(static_cast<Metric>(m)));
    const double bi = r.values[static_cast<std::size_t>(Metric::bilateral_pct)];
    if (bi < 0.0 || bi > 100.0) throw std::runtime_error("analyze: bilateral percentage out of range");
    reports.push_back(std::move(r));
    const std::string parent = path.parent_path().filename().string();
    labels.push_back(parent.empty() ? path.filename().string() : parent);
  }

  fs::create_directories(out_dir);
  {
    std::ofstream out = open_out(out_dir / "report.tsv");
    out << "# split=" << split_file.filename().string() << "\tmemory=" << (first_episode->memory_enabled ? 1 : 0)
        << "\tcommunication=" << (first_episode->communication_enabled ? 1 : 0)
        << "\tme_mode=" << (config.me.exhaustive ? "exhaustive" : "sampled") << "\ttest_seeds=" << config.test_seeds
        << '\n';
    write_me_report(out, labels, reports, hash, config.seed);
  }
  if (options.dump_games) {
    std::ofstream out = open_out(out_dir / "games.tsv");
    out << "# per-game values\tconfig_hash=" << hash << "\tseed=" << config.seed << '\n';
    for (std::size_t i = 0; i < reports.size(); ++i) {
      out << "# run=" << labels[i] << '\n';
      write_game_records(out, reports[i].games);
    }
  }
  write_config_file(out_dir / "config.txt", config);
  return reports;
}

ProbeOutcome probe_command(const ExperimentConfig& config, const fs::path& checkpoint, const fs::path& split_file,
                           const fs::path& out_dir, const ProbeOptions& options) {
  config.validate();
  const CategoryTable table = load_table(config);
  const std::vector<GameSample> games = read_samples_file(split_file, table);
  const UtilityMatrices utilities = UtilityMatrices::defaults();
  const std::string hash = config_hash(config);
  const Checkpoint c = load_checkpoint(checkpoint);
  const EpisodeConfig episode = episode_from_checkpoint(c);
  const auto agents = agents_from_checkpoint(c);

  ProbeOutcome outcome;
  fs::create_directories(out_dir);
  if (!options.tasks.empty() && !options.filters.empty()) {
    const ProbeDataset dataset =
        build_probe_dataset(agents[0], agents[1], games, episode, utilities, table, config.probe);
    for (ProbeTask task : options.tasks)
      for (UtteranceFilter filter : options.filters)
        outcome.summaries.push_back(run_probe(dataset, task, filter, config.probe));
    std::ofstream out = open_out(out_dir / "probe.tsv");
    out << "# split=" << split_file.filename().string() << "\tgames=" << dataset.games_played
        << "\tsuccessful=" << dataset.conversations.size() << '\n';
    write_probe_report(out, outcome.summaries, hash, config.seed);
  }
  if (options.inverted) {
    outcome.inverted = inverted_roles_eval(agents[0], agents[1], games, episode, utilities, table, config.probe);
    std::ofstream out = open_out(out_dir / "inverted.tsv");
    write_inverted_report(out, *outcome.inverted, hash, config.seed);
  }
  if (options.self_play) {
    outcome.self_play = self_play_eval(agents[0], agents[1], games, episode, utilities, config.test_batches,
                                       config.test_games_per_batch, config.threads);
    std::ofstream out = open_out(out_dir / "self_play.tsv");
    write_self_play_report(out, *outcome.self_play, hash, config.seed);
  }
  write_config_file(out_dir / "config.txt", config);
  return outcome;
}

}  // namespace fruitcomm
