#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trofi/dataset.hpp"
#include "trofi/envs.hpp"
#include "trofi/nn.hpp"

namespace trofi {

/// TD3+BC hyperparameters. The TD3 knobs default to the reference values.
struct PolicyConfig {
  double alpha = 2.5;
  double gamma = 0.99;
  double tau = 0.005;
  int policy_delay = 2;
  double target_noise_std = 0.2;
  double target_noise_clip = 0.5;
  int batch_size = 256;
  int updates = 50000;
  double actor_learning_rate = 3e-4;
  double critic_learning_rate = 3e-4;
  std::vector<int> hidden_sizes{64, 64};
  std::uint64_t seed = 0;
  int log_every = 1000;
  /// Periodic evaluation during training; 0 disables it.
  int eval_every = 0;
  int eval_episodes = 10;

  void validate() const;
};

nlohmann::json to_json(const PolicyConfig& config);
PolicyConfig policy_config_from_json(const nlohmann::json& j);

enum class AgentKind { Td3Bc, BehaviorCloning };

/// Actor, twin critics and their target copies. States fed to the networks
/// are normalized with `norm_stats`; actions are in environment units.
struct Agent {
  AgentKind kind = AgentKind::Td3Bc;
  std::string env_name;
  std::vector<double> action_low;
  std::vector<double> action_high;
  NormStats norm_stats;
  PolicyConfig config;

  nn::Mlp actor;
  nn::Mlp critic1;
  nn::Mlp critic2;
  nn::Mlp target_actor;
  nn::Mlp target_critic1;
  nn::Mlp target_critic2;

  nn::AdamState actor_opt;
  nn::AdamState critic1_opt;
  nn::AdamState critic2_opt;

  long critic_updates = 0;

  int state_dim() const { return actor.input_dim(); }
  int action_dim() const { return actor.output_dim(); }

  /// Deterministic actions for a batch of normalized states.
  Eigen::MatrixXd act(const Eigen::MatrixXd& states) const;
  Eigen::MatrixXd act_target(const Eigen::MatrixXd& states) const;
  /// Maps raw tanh outputs into the action box.
  Eigen::MatrixXd scale_actions(const Eigen::MatrixXd& unit) const;
  Eigen::RowVectorXd action_half_range() const;

  /// Q1(s, a) for normalized states.
  Eigen::VectorXd q1(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const;
  /// Q1(s, a) for raw states.
  Eigen::VectorXd q1_raw(const Eigen::MatrixXd& raw_states, const Eigen::MatrixXd& actions) const;

  /// Greedy policy on raw environment states.
  PolicyFn policy() const;
};

/// Fresh agent with targets equal to the online networks.
Agent make_agent(const EnvSpec& env, const NormStats& stats, const PolicyConfig& config);

/// Mini-batch of normalized transitions.
struct Batch {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::MatrixXd next_states;
  Eigen::VectorXd rewards;
};

Batch gather_batch(const DatasetMatrices& data, const std::vector<Eigen::Index>& rows);

/// alpha / mean|Q|, with the denominator floored at 1e-8.
double lambda_norm(std::span<const double> q_values, double alpha);
inline constexpr double kLambdaFloor = 1e-8;

/// r + gamma * min(Q1', Q2') at the smoothed target action.
Eigen::VectorXd critic_targets(const Agent& agent, const Batch& batch, const PolicyConfig& config,
                               Rng& rng);

struct CriticStep {
  double loss1 = 0.0;
  double loss2 = 0.0;
  nn::Gradients grad1;
  nn::Gradients grad2;
};

/// Squared-error losses and gradients of both critics against `targets`.
CriticStep critic_gradients(const Agent& agent, const Batch& batch, const Eigen::VectorXd& targets);

/// One Adam step on both critics. Returns the summed loss.
double critic_update(Agent& agent, const Batch& batch, const PolicyConfig& config, Rng& rng);

struct ActorStep {
  double loss = 0.0;  // -lambda * mean Q + mean ||pi(s) - a||^2
  double lambda = 0.0;
  nn::Gradients gradients;
};

/// Actor objective and its gradient. `alpha` = 0 removes the Q term.
ActorStep actor_gradients(const Agent& agent, const Batch& batch, double alpha);
/// Behavioural-cloning loss mean ||pi(s) - a||^2 and its gradient.
ActorStep bc_gradients(const Agent& agent, const Batch& batch);

struct ActorUpdate {
  double loss = 0.0;
  double lambda = 0.0;
};

/// One Adam step on the actor followed by soft updates of all targets.
ActorUpdate actor_update(Agent& agent, const Batch& batch, const PolicyConfig& config);

struct PolicyLogRow {
  int update = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double lambda = 0.0;
  std::optional<double> eval_score;
};

struct PolicyTrainingLog {
  std::vector<PolicyLogRow> rows;
  std::string to_csv() const;
};

struct PolicyTrainResult {
  Agent agent;
  PolicyTrainingLog log;
};

/// TD3+BC on a labeled dataset. States are normalized with statistics of the
/// dataset unless it already carries them. Throws PreconditionError when the
/// dataset has no rewards.
PolicyTrainResult train_policy(const OfflineDataset& dataset, const PolicyConfig& config);

/// Actor-only regression of dataset actions on states.
PolicyTrainResult train_bc(const OfflineDataset& dataset, const PolicyConfig& config);

enum class RewardSubstitution { ConstantZero, UniformRandom };

std::string to_string(RewardSubstitution mode);
OfflineDataset substitute_rewards(OfflineDataset dataset, RewardSubstitution mode,
                                  std::uint64_t seed);

struct EvalResult {
  std::vector<double> per_episode_returns;
  double mean = 0.0;
  double std = 0.0;
  double normalized_score = 0.0;
};

double normalized_score(double mean_return, double random_score, double expert_score);

/// Ground-truth returns of `n_episodes` episodes with distinct derived seeds.
EvalResult evaluate_policy(const PolicyFn& policy, const Environment& env, int n_episodes,
                           std::uint64_t seed);
EvalResult evaluate(const Agent& agent, const Environment& env, int n_episodes = 100,
                    std::uint64_t seed = 0);

nlohmann::json to_json(const Agent& agent);
Agent agent_from_json(const nlohmann::json& j);
void save_agent(const Agent& agent, const std::filesystem::path& path);
Agent load_agent(const std::filesystem::path& path);

}  // namespace trofi
