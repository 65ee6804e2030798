#pragma once

// Probe classifiers over conversations: predict the fruit or a tool category
// from the exchanged symbols only. Also the Stats baseline, the self-play
// swap, and the inverted-roles test.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fruitcomm/game.hpp"
#include "fruitcomm/stats.hpp"

namespace fruitcomm {

enum class ProbeTask { fruit, tool1, tool2 };
enum class UtteranceFilter { both, fruit, tool };

ProbeTask parse_probe_task(const std::string& text);
UtteranceFilter parse_utterance_filter(const std::string& text);
const char* to_string(ProbeTask task);
const char* to_string(UtteranceFilter filter);

struct ProbeConfig {
  std::size_t symbol_embed = 50;
  std::size_t hidden = 100;
  std::size_t partition_seeds = 20;
  std::size_t epochs = 50;
  /// Epochs without a validation improvement before stopping.
  std::size_t patience = 5;
  std::size_t minibatch = 32;
  double learning_rate = 0.001;
  double rms_decay = 0.99;
  double rms_epsilon = 1e-8;
  double train_fraction = 0.8;
  double validation_fraction = 0.1;
  std::size_t max_partition_attempts = 100;
  /// Cap on the games played to collect conversations (0: the whole set).
  std::size_t max_games = 0;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const;
};

struct Utterance {
  bool fruit_player = false;
  std::size_t symbol = 0;
};

/// The passed-on messages of one game, in turn order, with its labels.
struct Conversation {
  std::vector<Utterance> utterances;
  std::size_t fruit = 0;  // category indices into the table
  std::size_t tool1 = 0;
  std::size_t tool2 = 0;
  bool success = false;
  std::size_t source = 0;  // index of the game sample
};

struct ProbeDataset {
  std::vector<Conversation> conversations;
  std::size_t fruit_classes = 0;
  std::size_t tool_classes = 0;
  std::size_t games_played = 0;
};

/// Plays every game (up to max_games) in one fixed configuration, argmax mode.
ProbeDataset collect_conversations(const AgentParameters& a, const AgentParameters& b,
                                   std::span<const GameSample> games, TestConfiguration configuration,
                                   const EpisodeConfig& episode, const UtilityMatrices& utilities,
                                   const CategoryTable& table, std::size_t max_games = 0, std::size_t threads = 1);

/// Successful games only, with A starting as the Fruit Player.
ProbeDataset build_probe_dataset(const AgentParameters& a, const AgentParameters& b,
                                 std::span<const GameSample> games, const EpisodeConfig& episode,
                                 const UtilityMatrices& utilities, const CategoryTable& table,
                                 const ProbeConfig& config);

std::vector<std::size_t> filter_symbols(const Conversation& conversation, UtteranceFilter filter);
std::size_t label_of(const Conversation& conversation, ProbeTask task);
std::size_t class_count(const ProbeDataset& dataset, ProbeTask task);

struct ProbePartition {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Seeded train/validation/test split of conversation indices, retried until
/// every fruit category, and every tool category in each position, that occurs
/// in the dataset also occurs in train. Throws naming the uncovered categories.
ProbePartition partition_conversations(const ProbeDataset& dataset, std::uint64_t seed, const ProbeConfig& config,
                                       const CategoryTable* table = nullptr);

/// Expected accuracy of guessing from the train label distribution:
/// sum over classes of p_train(c) * p_test(c).
double stats_baseline(std::span<const std::size_t> train_labels, std::span<const std::size_t> test_labels);

struct ProbeExample {
  std::vector<std::size_t> symbols;
  std::size_t label = 0;
};

/// Fraction of examples where `predict` returns the label.
double accuracy(const std::function<std::size_t(std::span<const std::size_t>)>& predict,
                std::span<const ProbeExample> examples);

/// Examples of the given conversations for a task and filter. Conversations
/// whose filtered sequence is empty are skipped and counted.
std::vector<ProbeExample> make_examples(const ProbeDataset& dataset, std::span<const std::size_t> indices,
                                        ProbeTask task, UtteranceFilter filter, std::size_t* skipped = nullptr);

/// Symbol embedding -> Elman RNN -> linear classifier on the last hidden state.
class ProbeClassifier {
 public:
  ProbeClassifier(std::size_t vocab, std::size_t classes, const ProbeConfig& config, std::uint64_t seed);

  /// Trains with cross-entropy and RMSProp, keeping the parameters of the
  /// best validation epoch. Returns the number of epochs run.
  std::size_t fit(std::span<const ProbeExample> train, std::span<const ProbeExample> validation);
  std::size_t predict(std::span<const std::size_t> symbols) const;
  double accuracy(std::span<const ProbeExample> examples) const;

 private:
  double loss_and_grad(const ProbeExample& example, std::span<double> grad) const;

  ProbeConfig config_;
  std::size_t vocab_;
  std::size_t classes_;
  std::uint64_t seed_;
  ParameterSet params_;
};

struct ProbeRun {
  double test_accuracy = 0.0;
  double stats = 0.0;
  std::size_t epochs = 0;
};

struct ProbeSummary {
  ProbeTask task = ProbeTask::fruit;
  UtteranceFilter filter = UtteranceFilter::both;
  MeanSem accuracy_pct;
  MeanSem stats_pct;
  std::size_t conversations = 0;
  std::size_t skipped = 0;
  std::vector<ProbeRun> runs;
};

/// One classifier per partition seed; means and SEM over partition seeds.
ProbeSummary run_probe(const ProbeDataset& dataset, ProbeTask task, UtteranceFilter filter,
                       const ProbeConfig& config);

struct SelfPlayResult {
  double paired_pct = 0.0;
  double a_with_a_pct = 0.0;
  double b_with_b_pct = 0.0;
};

/// Protocol performance of the pair and of each agent playing with a copy of itself.
SelfPlayResult self_play_eval(const AgentParameters& a, const AgentParameters& b, std::span<const GameSample> games,
                              const EpisodeConfig& episode, const UtilityMatrices& utilities,
                              std::size_t batches = 12, std::size_t games_per_batch = 100, std::size_t threads = 1);

struct InvertedRow {
  UtteranceFilter filter = UtteranceFilter::both;
  bool inverted = false;  // tested on conversations with B as the Fruit Player
  MeanSem accuracy_pct;
  MeanSem stats_pct;
};

struct InvertedResult {
  std::size_t conversations = 0;  // inputs kept in both role assignments
  std::vector<InvertedRow> rows;
};

/// Fruit probes trained on conversations where A is the Fruit Player, tested on
/// the same assignment and on the one with roles swapped (the Fruit Player
/// starts in both). Only inputs where both games succeed with at least two
/// utterances are used, with one index partition for both versions.
InvertedResult inverted_roles_eval(const AgentParameters& a, const AgentParameters& b,
                                   std::span<const GameSample> games, const EpisodeConfig& episode,
                                   const UtilityMatrices& utilities, const CategoryTable& table,
                                   const ProbeConfig& config);

void write_probe_report(std::ostream& out, std::span<const ProbeSummary> summaries, const std::string& config_hash,
                        std::uint64_t seed);
void write_inverted_report(std::ostream& out, const InvertedResult& result, const std::string& config_hash,
                           std::uint64_t seed);
void write_self_play_report(std::ostream& out, const SelfPlayResult& result, const std::string& config_hash,
                            std::uint64_t seed);

}  // namespace fruitcomm
