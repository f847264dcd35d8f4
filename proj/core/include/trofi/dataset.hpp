#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trofi/envs.hpp"

namespace trofi {

enum class Tier { Expert, Medium, MediumReplay, MediumExpert };

std::string to_string(Tier tier);
/// Accepts "expert", "medium", "medium-replay", "medium-expert".
Tier parse_tier(const std::string& name);

/// Behaviour-noise levels of the data-collection tiers.
inline constexpr double kExpertNoise = 0.05;
inline constexpr double kMediumNoise = 0.4;
inline constexpr double kReplayNoiseStart = 1.0;
inline constexpr double kReplayNoiseEnd = 0.1;

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  std::vector<double> next_state;
  /// Absent in the reward-free view of a dataset.
  std::optional<double> reward;
  std::int64_t episode_id = 0;
  int step_index = 0;

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct NormStats {
  static constexpr double kStdFloor = 1e-3;
  std::vector<double> mean;
  std::vector<double> std;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct OfflineDataset {
  std::string env_name;
  Tier tier = Tier::Medium;
  std::vector<Transition> transitions;
  bool labeled = false;
  /// Set once states have been normalized; records the statistics used.
  std::optional<NormStats> norm_stats;

  std::size_t size() const noexcept { return transitions.size(); }
  friend bool operator==(const OfflineDataset&, const OfflineDataset&) = default;
};

struct Trajectory {
  std::int64_t episode_id = 0;
  std::vector<Transition> transitions;
  std::optional<double> episodic_return;

  std::size_t size() const noexcept { return transitions.size(); }
};

/// Rolls out whole episodes of the tier's behaviour policy. The result carries
/// ground-truth rewards. Throws PreconditionError if `n_transitions` is shorter
/// than one episode.
OfflineDataset generate_dataset(const Environment& env, Tier tier, std::size_t n_transitions,
                                std::uint64_t seed);

OfflineDataset strip_rewards(OfflineDataset dataset);
/// Recomputes every reward with the environment's ground-truth function.
OfflineDataset label_ground_truth(OfflineDataset dataset, const Environment& env);

NormStats compute_norm_stats(const OfflineDataset& dataset);
/// Normalizes state and next_state with `stats` and records them. Throws if
/// the dataset is already normalized or the dimensions disagree.
OfflineDataset apply_normalization(OfflineDataset dataset, const NormStats& stats);
std::vector<double> normalize_state(const NormStats& stats, const std::vector<double>& state);
Eigen::MatrixXd normalize_rows(const NormStats& stats, const Eigen::MatrixXd& states);

/// Groups by episode, orders by step. Throws CorruptDatasetError on gaps.
std::vector<Trajectory> split_trajectories(const OfflineDataset& dataset);

/// Structural checks shared by loading and the pipeline stages.
void validate_dataset(const OfflineDataset& dataset);

std::string dataset_to_jsonl(const OfflineDataset& dataset);
OfflineDataset dataset_from_jsonl(const std::string& text);
void save_dataset(const OfflineDataset& dataset, const std::filesystem::path& path);
OfflineDataset load_dataset(const std::filesystem::path& path);

/// Checksum of the reward-free content (episode/step ids, states, actions).
/// A labeled dataset and its stripped copy hash identically.
std::string dataset_hash(const OfflineDataset& dataset);

/// Column-stacked views used by the training loops.
struct DatasetMatrices {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::MatrixXd next_states;
  Eigen::VectorXd rewards;  // empty when unlabeled
};
DatasetMatrices to_matrices(const OfflineDataset& dataset);

}  // namespace trofi
