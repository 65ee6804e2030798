#pragma once

// The four experiment commands as library calls. Each writes its outputs into a
// directory; every file carries the config hash and the master seed.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fruitcomm/config.hpp"

namespace fruitcomm {

enum class SetName { train, test, validation, transfer };
SetName parse_set_name(const std::string& text);
const char* file_name(SetName set);

/// Default output directory: $FRUITCOMM_OUT/<command>, else out/<command>.
std::filesystem::path default_output_dir(const std::string& command);

CategoryTable load_table(const ExperimentConfig& config);

/// A set name resolved inside `data_dir`, or a path to a split file.
std::filesystem::path resolve_split(const std::filesystem::path& data_dir, const std::string& name_or_path);

void gen_data(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct TrainOptions {
  bool resume = false;
  /// Stop (with a checkpoint) once this many batches are done; 0: no limit.
  std::size_t stop_after = 0;
  std::ostream* log = nullptr;
};

struct TrainOutcome {
  TrainResult result;
  std::size_t batches_done = 0;
  bool resumed = false;
};

/// Writes config.txt, checkpoint.txt (at every validation point), curve.tsv and
/// result.tsv. With `resume`, continues from an existing checkpoint.txt.
TrainOutcome train_command(const ExperimentConfig& config, const std::filesystem::path& data_dir,
                           const std::filesystem::path& out_dir, const TrainOptions& options = {});

struct AnalyzeOptions {
  bool dump_games = false;
};

/// One report over the given checkpoints (one per training seed): report.tsv,
/// plus games.tsv with dump_games.
std::vector<MEReport> analyze_command(const ExperimentConfig& config,
                                      const std::vector<std::filesystem::path>& checkpoints,
                                      const std::filesystem::path& split_file, const std::filesystem::path& out_dir,
                                      const AnalyzeOptions& options = {});

struct ProbeOptions {
  std::vector<ProbeTask> tasks{ProbeTask::fruit};
  std::vector<UtteranceFilter> filters{UtteranceFilter::both, UtteranceFilter::fruit, UtteranceFilter::tool};
  bool inverted = false;
  bool self_play = false;
};

struct ProbeOutcome {
  std::vector<ProbeSummary> summaries;
  std::optional<InvertedResult> inverted;
  std::optional<SelfPlayResult> self_play;
};

/// probe.tsv, and inverted.tsv / self_play.tsv when requested.
ProbeOutcome probe_command(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& split_file, const std::filesystem::path& out_dir,
                           const ProbeOptions& options = {});

}  // namespace fruitcomm
