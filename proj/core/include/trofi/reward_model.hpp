#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trofi/dataset.hpp"
#include "trofi/nn.hpp"
#include "trofi/ranking.hpp"

namespace trofi {

struct RewardTrainConfig {
  int snippet_length = 25;
  int pairs_per_update = 64;
  int updates = 5000;
  double learning_rate = 3e-4;
  std::vector<int> hidden_sizes{64, 64};
  std::uint64_t seed = 0;
  /// Loss and held-out accuracy are logged every `log_every` updates.
  int log_every = 100;
  /// Share of ranked trajectories reserved for pairwise accuracy.
  double holdout_fraction = 0.1;
  int holdout_pairs = 1000;

  void validate() const;
};

/// State-only learned reward r(s) operating on normalized states.
struct RewardModel {
  nn::Mlp net;
  NormStats norm_stats;
  std::string env_name;
  RewardTrainConfig config;

  /// Rewards for raw (unnormalized) states, one per row.
  Eigen::VectorXd predict_raw(const Eigen::MatrixXd& raw_states) const;
  Eigen::VectorXd predict_normalized(const Eigen::MatrixXd& states) const;
};

/// Length-L windows from two ranked trajectories; `high` comes from the
/// better-ranked one.
struct SnippetPair {
  Eigen::MatrixXd low;
  Eigen::MatrixXd high;
  std::int64_t low_id = 0;
  std::int64_t high_id = 0;
};

/// State matrices of ranked trajectories, worst first.
struct RankedStates {
  std::vector<std::int64_t> ids;
  std::vector<Eigen::MatrixXd> states;
};

RankedStates ranked_states(const std::vector<Trajectory>& ranked_trajectories,
                           const NormStats* stats = nullptr);

/// Draws two distinct trajectories uniformly, orients the pair by rank, and
/// picks one uniform length-L window in each. Throws PreconditionError naming
/// any trajectory shorter than L.
std::vector<SnippetPair> sample_snippet_pairs(const RankedStates& ranked, int snippet_length,
                                              int n_pairs, Rng& rng);
std::vector<SnippetPair> sample_snippet_pairs(const RankedSet& ranked, const OfflineDataset& dataset,
                                              const RewardTrainConfig& config, Rng& rng);

/// -log softmax probability that the high snippet is preferred, evaluated
/// without overflow: softplus(sum_low - sum_high).
double trex_pair_loss(double sum_low, double sum_high);

struct TrexLoss {
  double loss = 0.0;  // mean over pairs
  nn::Gradients gradients;
};

/// Mean pairwise ranking loss over `pairs` and its exact parameter gradient.
TrexLoss trex_loss(const nn::Mlp& net, std::span<const SnippetPair> pairs);

/// Fraction of sampled (lower, higher) pairs whose scores are strictly
/// ordered. Scores are given in ranking order (worst first); ties fail.
double pairwise_accuracy(std::span<const double> ranked_scores, std::size_t n_pairs, Rng& rng);
/// Same, scoring each holdout trajectory by its summed predicted reward.
double pairwise_accuracy(const RewardModel& model, const std::vector<Trajectory>& ranked_holdout,
                         std::size_t n_pairs, Rng& rng);

struct RewardLogRow {
  int update = 0;
  double loss = 0.0;
  double holdout_accuracy = 0.0;  // NaN without a holdout split
};

struct RewardTrainingLog {
  std::vector<RewardLogRow> rows;
  std::vector<std::int64_t> holdout_ids;
  std::string to_csv() const;
};

struct RewardTrainResult {
  RewardModel model;
  RewardTrainingLog log;
};

/// Fits a reward model to `ranked` trajectories of `dataset` (raw states;
/// normalization statistics are computed over the whole dataset).
RewardTrainResult train_reward(const RankedSet& ranked, const OfflineDataset& dataset,
                               const RewardTrainConfig& config);

/// Sets every reward to r(normalized state). Refuses already labeled data
/// unless `overwrite` is set.
OfflineDataset label_dataset(OfflineDataset dataset, const RewardModel& model,
                             bool overwrite = false);

nlohmann::json to_json(const RewardModel& model);
RewardModel reward_model_from_json(const nlohmann::json& j);
void save_reward_model(const RewardModel& model, const std::filesystem::path& path);
RewardModel load_reward_model(const std::filesystem::path& path);

nlohmann::json to_json(const RewardTrainConfig& config);
RewardTrainConfig reward_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace trofi
