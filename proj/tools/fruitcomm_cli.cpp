// fruitcomm: gen-data, train, analyze and probe.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "fruitcomm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fruitcomm;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file (section.key = value lines)");
    cmd->add_option("--set", overrides, "Override one setting, e.g. --set train.total_batches=20000");
    cmd->add_option("--seed", seed, "Master seed");
    cmd->add_option("--threads", threads, "Worker threads (results do not depend on it)");
    cmd->add_option("--out", out, "Output directory (default $FRUITCOMM_OUT/<command> or out/<command>)");
  }

  ExperimentConfig load() const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    for (const std::string& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
      set_config_value(c, o.substr(0, eq), o.substr(eq + 1));
    }
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    c.propagate();
    return c;
  }

  fs::path out_dir(const std::string& command) const { return out.empty() ? default_output_dir(command) : fs::path(out); }
};

SplitCounts parse_counts(const std::string& text) {
  std::vector<std::size_t> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) v.push_back(std::stoul(part));
  if (v.empty() || v.size() > 4) throw CLI::ValidationError("--counts", "expected 1 to 4 comma-separated counts");
  // Missing counts repeat the last one given.
  while (v.size() < 4) v.push_back(v.back());
  return {v[0], v[1], v[2], v[3]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-agent fruit and tools communication workbench"};
  app.require_subcommand(1);

  Common gen_common, train_common, analyze_common, probe_common;

  auto* gen = app.add_subcommand("gen-data", "Generate the train/test/validation/transfer splits");
  gen_common.add_to(gen);
  std::string table, counts;
  std::optional<std::uint64_t> data_seed;
  gen->add_option("--table", table, "Category table (default: the shipped table)");
  gen->add_option("--counts", counts, "train,test,validation,transfer (missing values repeat the last)");
  gen->add_option("--data-seed", data_seed, "Seed of the data generator (default: data.seed)");

  auto* tr = app.add_subcommand("train", "Train one pair of agents");
  train_common.add_to(tr);
  std::string train_data;
  bool ablate_memory = false, ablate_comm = false, resume = false, quiet = false;
  std::optional<std::size_t> batches;
  std::size_t stop_after = 0;
  tr->add_option("--data", train_data, "Split directory from gen-data");
  tr->add_flag("--ablate-memory", ablate_memory, "Agents do not carry their state between turns");
  tr->add_flag("--ablate-comm", ablate_comm, "Agents always receive the dummy message");
  tr->add_option("--batches", batches, "Total training batches");
  tr->add_flag("--resume", resume, "Continue from checkpoint.txt in the output directory");
  tr->add_option("--stop-after", stop_after, "Stop once this many batches are done (for testing interruption)");
  tr->add_flag("--quiet", quiet, "No progress output");

  auto* an = app.add_subcommand("analyze", "Performance, message effect and pragmatics of trained pairs");
  analyze_common.add_to(an);
  std::vector<std::string> an_checkpoints;
  std::string an_split = "test", an_data;
  std::optional<std::size_t> test_seeds;
  bool exhaustive = false, dump_games = false;
  an->add_option("--checkpoint", an_checkpoints, "Checkpoint(s), one per training seed")->required();
  an->add_option("--split", an_split, "train, test, validation, transfer, or a split file");
  an->add_option("--data", an_data, "Split directory from gen-data");
  an->add_option("--test-seeds", test_seeds, "Number of test seeds");
  an->add_flag("--exhaustive", exhaustive, "Exact message effect instead of sampling");
  an->add_flag("--dump-games", dump_games, "Also write per-game values");

  auto* pr = app.add_subcommand("probe", "Conversation probes, inverted roles and self-play");
  probe_common.add_to(pr);
  std::string pr_checkpoint, pr_split = "test", pr_data, task = "fruit", filter = "all";
  bool inverted = false, self_play = false, no_probe = false;
  pr->add_option("--checkpoint", pr_checkpoint, "Checkpoint of a communication + memory pair")->required();
  pr->add_option("--split", pr_split, "Games to play (default: test)");
  pr->add_option("--data", pr_data, "Split directory from gen-data");
  pr->add_option("--task", task, "fruit, tool1, tool2 or all");
  pr->add_option("--filter", filter, "Both, F, T or all");
  pr->add_flag("--inverted", inverted, "Train with A as Fruit Player, test with roles swapped");
  pr->add_flag("--self-play", self_play, "Each agent paired with a copy of itself");
  pr->add_flag("--no-probe", no_probe, "Skip the task/filter probes");

  CLI11_PARSE(app, argc, argv);

  auto data_dir = [](const std::string& flag) {
    return flag.empty() ? default_output_dir("gen-data") : fs::path(flag);
  };

  try {
    if (*gen) {
      ExperimentConfig c = gen_common.load();
      if (!table.empty()) c.table = table;
      if (!counts.empty()) c.counts = parse_counts(counts);
      if (data_seed) c.data_seed = *data_seed;
      c.validate();
      const fs::path out = gen_common.out_dir("gen-data");
      gen_data(c, out);
      std::cout << "wrote splits to " << out.string() << " (config " << config_hash(c) << ")\n";
    } else if (*tr) {
      ExperimentConfig c = train_common.load();
      if (ablate_memory) c.train.memory_enabled = false;
      if (ablate_comm) c.train.communication_enabled = false;
      if (batches) c.train.total_batches = *batches;
      c.validate();
      const fs::path out = train_common.out_dir("train");
      TrainOptions opts;
      opts.resume = resume;
      opts.stop_after = stop_after;
      opts.log = quiet ? nullptr : &std::cerr;
      const TrainOutcome o = train_command(c, data_dir(train_data), out, opts);
      std::cout << (o.result.completed ? "completed" : "stopped") << " at batch " << o.batches_done
                << (o.resumed ? " (resumed)" : "");
      if (o.result.completed)
        std::cout << ", validation " << o.result.final_validation << (o.result.success ? ", success" : ", below threshold");
      std::cout << '\n';
    } else if (*an) {
      ExperimentConfig c = analyze_common.load();
      if (test_seeds) c.test_seeds = *test_seeds;
      if (exhaustive) c.me.exhaustive = true;
      c.validate();
      std::vector<fs::path> paths(an_checkpoints.begin(), an_checkpoints.end());
      const fs::path out = analyze_common.out_dir("analyze");
      analyze_command(c, paths, resolve_split(data_dir(an_data), an_split), out, {dump_games});
      std::cout << "wrote " << (out / "report.tsv").string() << '\n';
    } else if (*pr) {
      ExperimentConfig c = probe_common.load();
      c.validate();
      ProbeOptions opts;
      opts.tasks.clear();
      opts.filters.clear();
      if (!no_probe) {
        if (task == "all")
          opts.tasks = {ProbeTask::fruit, ProbeTask::tool1, ProbeTask::tool2};
        else
          opts.tasks = {parse_probe_task(task)};
        if (filter == "all")
          opts.filters = {UtteranceFilter::both, UtteranceFilter::fruit, UtteranceFilter::tool};
        else
          opts.filters = {parse_utterance_filter(filter)};
      }
      opts.inverted = inverted;
      opts.self_play = self_play;
      const fs::path out = probe_common.out_dir("probe");
      probe_command(c, pr_checkpoint, resolve_split(data_dir(pr_data), pr_split), out, opts);
      std::cout << "wrote probe reports to " << out.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
