#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trofi/dataset.hpp"
#include "trofi/error.hpp"
#include "trofi/policy.hpp"

namespace trofi {

struct AnalysisConfig {
  double gamma = 0.99;
  /// Random actions compared against the expert action per state.
  int goodness_actions = 32;
  /// States sampled from the expert dataset for Goodness; 0 uses all.
  int n_states = 1000;
  int eval_episodes = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const AnalysisConfig& config);
AnalysisConfig analysis_config_from_json(const nlohmann::json& j);

enum class RewardSource { Trofi, GroundTruth, Constant, Random, Transformed };

std::string to_string(RewardSource source);
RewardSource parse_reward_source(const std::string& name);

struct AffineTransform {
  double scale = 1.0;
  double offset = 0.0;
};

/// Action-value function over raw states and environment-unit actions.
using QFunction =
    std::function<Eigen::VectorXd(const Eigen::MatrixXd& raw_states, const Eigen::MatrixXd& actions)>;

/// Critic 1 of a TD3+BC agent as a QFunction.
QFunction critic_q(const Agent& agent);

/// G_t = r_t + gamma * G_{t+1}, evaluated backwards.
std::vector<double> discounted_return_series(std::span<const double> rewards, double gamma);
/// Throws PreconditionError if the trajectory has unlabeled transitions.
std::vector<double> discounted_return_series(const Trajectory& trajectory, double gamma);

/// Thrown when either side of a correlation is constant.
class DegenerateCorrelationError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Sample Pearson correlation. Throws PreconditionError on length mismatch or
/// fewer than two points, DegenerateCorrelationError on constant input.
double pearson_correlation(std::span<const double> xs, std::span<const double> ys);

struct CorrelationSummary {
  /// Mean per-trajectory correlation; empty when every trajectory was degenerate.
  std::optional<double> mean;
  std::size_t trajectories_used = 0;
  std::size_t trajectories_skipped = 0;
};

/// Per trajectory, correlates Q(s_t, a_t) with the discounted return of the
/// dataset's labels, then averages over non-degenerate trajectories.
CorrelationSummary value_return_correlation(const QFunction& q, const OfflineDataset& labeled,
                                            const AnalysisConfig& config);

/// Fraction of uniformly drawn actions valued strictly below the dataset
/// (expert) action, averaged over sampled states.
double goodness(const QFunction& q, const OfflineDataset& expert_dataset, const EnvSpec& env,
                const AnalysisConfig& config, Rng& rng);

/// r -> scale * r + offset on every transition.
OfflineDataset transform_rewards(OfflineDataset dataset, const AffineTransform& transform);

/// Least-squares (scale, offset) with trofi ~= scale * gt + offset over
/// transitions matched by (episode, step).
AffineTransform fit_affine_to_model(const OfflineDataset& gt_labeled,
                                    const OfflineDataset& trofi_labeled);

struct AnalysisReport {
  RewardSource reward_source = RewardSource::Trofi;
  double performance = 0.0;
  std::optional<double> pearson_on_train;
  std::optional<double> pearson_on_expert;
  double goodness_on_expert = 0.0;
  std::size_t train_trajectories_skipped = 0;
  std::size_t expert_trajectories_skipped = 0;
  /// Dataset hashes, agent checkpoint hash, config and conventions.
  nlohmann::json provenance;
};

struct ReportInputs {
  const Agent* agent = nullptr;
  const Environment* env = nullptr;
  const OfflineDataset* train_labeled = nullptr;
  const OfflineDataset* expert_labeled = nullptr;
  RewardSource reward_source = RewardSource::Trofi;
};

AnalysisReport build_report(const ReportInputs& inputs, const AnalysisConfig& config);

nlohmann::json to_json(const AnalysisReport& report);
/// Human-readable one-row table of a report.
std::string report_table(const std::vector<std::pair<std::string, AnalysisReport>>& rows);

/// CSV rows (episode, t, q, discounted_return) for up to `max_trajectories`.
std::string value_series_csv(const QFunction& q, const OfflineDataset& labeled, double gamma,
                             std::size_t max_trajectories);

}  // namespace trofi
