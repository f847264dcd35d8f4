#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>
#include <trofi/envs.hpp>
#include <trofi/error.hpp>
#include <trofi/policy.hpp>

#include "support/oracles.hpp"

namespace trofi {
namespace {

using testing::flatten;
using testing::max_relative_error;
using testing::numeric_gradient;

struct Fixture {
  std::shared_ptr<const Environment> env = make_env("pointmass2d");
  OfflineDataset data;
  NormStats stats;
  Batch batch;
  PolicyConfig config;
  Agent agent;

  Fixture() {
    data = generate_dataset(*env, Tier::Medium, 400, 3);
    stats = compute_norm_stats(data);
    const auto m = to_matrices(apply_normalization(data, stats));
    std::vector<Eigen::Index> rows(12);
    std::iota(rows.begin(), rows.end(), 40);
    batch = gather_batch(m, rows);
    config.hidden_sizes = {16, 16};
    config.seed = 5;
    agent = make_agent(env->spec(), stats, config);
  }
};

TEST(Lambda, HandCaseAndHomogeneity) {
  const std::vector<double> q{5.0, -5.0, 5.0, -5.0};
  EXPECT_EQ(lambda_norm(q, 2.5), 0.5);
  const std::vector<double> r{0.3, -1.7, 4.2, 0.01};
  const double base = lambda_norm(r, 2.5);
  for (double k : {0.1, 10.0}) {
    std::vector<double> scaled;
    for (double v : r) scaled.push_back(k * v);
    EXPECT_NEAR(lambda_norm(scaled, 2.5), base / k, 1e-12 * base / k);
  }
  const std::vector<double> zeros(3, 0.0);
  EXPECT_EQ(lambda_norm(zeros, 2.5), 2.5 / kLambdaFloor);
  EXPECT_THROW(lambda_norm(std::span<const double>{}, 2.5), PreconditionError);
}

TEST(Critic, GradientMatchesFiniteDifferences) {
  Fixture f;
  Rng rng(1);
  const Eigen::VectorXd y = critic_targets(f.agent, f.batch, f.config, rng);
  const auto step = critic_gradients(f.agent, f.batch, y);
  const Eigen::MatrixXd x = [&] {
    Eigen::MatrixXd out(f.batch.states.rows(), f.batch.states.cols() + f.batch.actions.cols());
    out << f.batch.states, f.batch.actions;
    return out;
  }();
  auto mse = [&](const nn::Mlp& base) {
    return [&, base](const std::vector<double>& th) {
      nn::Mlp n = base;
      n.assign(th);
      return (n.forward(x).col(0) - y).squaredNorm() / static_cast<double>(y.size());
    };
  };
  EXPECT_NEAR(step.loss1, mse(f.agent.critic1)(f.agent.critic1.flatten()), 1e-12);
  EXPECT_LE(max_relative_error(flatten(step.grad1),
                               numeric_gradient(mse(f.agent.critic1), f.agent.critic1.flatten())),
            1e-4);
  EXPECT_LE(max_relative_error(flatten(step.grad2),
                               numeric_gradient(mse(f.agent.critic2), f.agent.critic2.flatten())),
            1e-4);
}

TEST(Actor, GradientMatchesFiniteDifferences) {
  Fixture f;
  const auto step = actor_gradients(f.agent, f.batch, 2.5);
  ASSERT_GT(step.lambda, 0.0);
  // lambda is held constant
  auto objective = [&](const std::vector<double>& th) {
    Agent a = f.agent;
    a.actor.assign(th);
    const Eigen::MatrixXd pi = a.act(f.batch.states);
    const double n = static_cast<double>(pi.rows());
    return -step.lambda * a.q1(f.batch.states, pi).mean() + (pi - f.batch.actions).squaredNorm() / n;
  };
  EXPECT_NEAR(step.loss, objective(f.agent.actor.flatten()), 1e-10);
  EXPECT_LE(max_relative_error(flatten(step.gradients), numeric_gradient(objective, f.agent.actor.flatten())),
            1e-4);
}

TEST(Actor, LambdaUsesCurrentPolicyQ) {
  Fixture f;
  const auto step = actor_gradients(f.agent, f.batch, 2.5);
  const Eigen::VectorXd q = f.agent.q1(f.batch.states, f.agent.act(f.batch.states));
  const double mean_abs = q.cwiseAbs().mean();
  EXPECT_NEAR(step.lambda, 2.5 / mean_abs, 1e-12 * step.lambda);
}

TEST(Actor, ZeroAlphaIsBehaviourCloning) {
  Fixture f;
  const auto a = actor_gradients(f.agent, f.batch, 0.0);
  const auto b = bc_gradients(f.agent, f.batch);
  EXPECT_EQ(a.lambda, 0.0);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(flatten(a.gradients), flatten(b.gradients));
  const Eigen::MatrixXd pi = f.agent.act(f.batch.states);
  EXPECT_NEAR(b.loss, (pi - f.batch.actions).squaredNorm() / 12.0, 1e-12);
}

TEST(Critic, ZeroDiscountTargetIsReward) {
  Fixture f;
  PolicyConfig c = f.config;
  c.gamma = 0.0;
  Rng rng(0);
  const Eigen::VectorXd y = critic_targets(f.agent, f.batch, c, rng);
  EXPECT_EQ(y, f.batch.rewards);
}

TEST(Critic, NoiseFreeTargetUsesTwinMin) {
  Fixture f;
  PolicyConfig c = f.config;
  c.target_noise_std = 0.0;
  // make the twins differ
  f.agent.target_critic2.layers().back().bias(0) += 0.3;
  Rng rng(0);
  const Eigen::VectorXd y = critic_targets(f.agent, f.batch, c, rng);
  const Eigen::MatrixXd a = f.agent.act_target(f.batch.next_states);
  Eigen::MatrixXd x(a.rows(), f.batch.next_states.cols() + a.cols());
  x << f.batch.next_states, a;
  const Eigen::VectorXd q1 = f.agent.target_critic1.forward(x).col(0);
  const Eigen::VectorXd q2 = f.agent.target_critic2.forward(x).col(0);
  for (Eigen::Index i = 0; i < y.size(); ++i)
    EXPECT_NEAR(y(i), f.batch.rewards(i) + c.gamma * std::min(q1(i), q2(i)), 1e-12);
}

TEST(Actor, UpdateMovesTargetsBySoftStep) {
  Fixture f;
  const auto old_target = f.agent.target_actor.flatten();
  const auto old_critic_target = f.agent.target_critic1.flatten();
  Rng rng(2);
  critic_update(f.agent, f.batch, f.config, rng);
  actor_update(f.agent, f.batch, f.config);
  const auto online = f.agent.actor.flatten();
  const auto target = f.agent.target_actor.flatten();
  for (std::size_t i = 0; i < online.size(); ++i)
    EXPECT_NEAR(target[i], 0.005 * online[i] + 0.995 * old_target[i], 1e-14);
  const auto critic = f.agent.critic1.flatten();
  const auto critic_target = f.agent.target_critic1.flatten();
  for (std::size_t i = 0; i < critic.size(); ++i)
    EXPECT_NEAR(critic_target[i], 0.005 * critic[i] + 0.995 * old_critic_target[i], 1e-14);
  EXPECT_EQ(f.agent.critic_updates, 1);
}

TEST(Agent, ActionsStayInBox) {
  Fixture f;
  for (auto& l : f.agent.actor.layers()) l.weight *= 50.0;
  const Eigen::MatrixXd a = f.agent.act(f.batch.states * 10.0);
  EXPECT_LE(a.maxCoeff(), 1.0);
  EXPECT_GE(a.minCoeff(), -1.0);
}

TEST(Training, DeterministicAndLogged) {
  Fixture f;
  PolicyConfig c = f.config;
  c.updates = 40;
  c.batch_size = 32;
  c.log_every = 20;
  const auto a = train_policy(f.data, c);
  const auto b = train_policy(f.data, c);
  EXPECT_TRUE(a.agent.actor == b.agent.actor);
  EXPECT_TRUE(a.agent.critic2 == b.agent.critic2);
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  EXPECT_EQ(a.log.rows.back().update, 40);
  EXPECT_EQ(a.agent.critic_updates, 40);
  c.seed = 6;
  EXPECT_FALSE(train_policy(f.data, c).agent.actor == a.agent.actor);
}

TEST(Training, NeedsRewards) {
  Fixture f;
  EXPECT_THROW(train_policy(strip_rewards(f.data), f.config), PreconditionError);
}

TEST(Training, BcAgentHasNoCritic) {
  Fixture f;
  PolicyConfig c = f.config;
  c.updates = 5;
  c.batch_size = 16;
  const auto r = train_bc(strip_rewards(f.data), c);
  EXPECT_EQ(r.agent.kind, AgentKind::BehaviorCloning);
  EXPECT_THROW(r.agent.q1(f.batch.states, f.batch.actions), PreconditionError);
}

TEST(Training, BcImitatesExpert) {
  const auto env = make_env("lineworld");
  const auto d = generate_dataset(*env, Tier::Expert, 5000, 0);
  PolicyConfig c;
  c.updates = 1500;
  c.hidden_sizes = {32, 32};
  c.actor_learning_rate = 1e-3;
  const auto r = train_bc(d, c);
  EXPECT_GT(evaluate(r.agent, *env, 20, 1).normalized_score, 80.0);
}

TEST(Training, Td3BcOnExpertData) {
  const auto env = make_env("lineworld");
  const auto d = generate_dataset(*env, Tier::Expert, 10000, 0);
  PolicyConfig c;
  c.updates = 5000;
  const auto r = train_policy(d, c);
  EXPECT_GE(evaluate(r.agent, *env, 100, 1).normalized_score, 90.0);
}

TEST(Config, ValidationAndJson) {
  PolicyConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.alpha = 4.0;
  c.hidden_sizes = {8};
  const auto back = policy_config_from_json(to_json(c));
  EXPECT_EQ(back.alpha, 4.0);
  EXPECT_EQ(back.hidden_sizes, c.hidden_sizes);
}

TEST(Agent, JsonRoundTrip) {
  Fixture f;
  testing::TempDir tmp("agent");
  save_agent(f.agent, tmp.path() / "a.json");
  const Agent back = load_agent(tmp.path() / "a.json");
  EXPECT_TRUE(back.actor == f.agent.actor);
  EXPECT_TRUE(back.target_critic2 == f.agent.target_critic2);
  EXPECT_EQ(back.norm_stats, f.agent.norm_stats);
  EXPECT_EQ(back.act(f.batch.states), f.agent.act(f.batch.states));
}

TEST(Substitution, ConstantAndUniform) {
  Fixture f;
  const auto zero = substitute_rewards(strip_rewards(f.data), RewardSubstitution::ConstantZero, 1);
  for (const auto& t : zero.transitions) EXPECT_EQ(*t.reward, 0.0);
  EXPECT_TRUE(zero.labeled);

  const auto env = make_env("lineworld");
  const auto big = generate_dataset(*env, Tier::Medium, 20000, 0);
  const auto u = substitute_rewards(big, RewardSubstitution::UniformRandom, 1);
  double sum = 0, sq = 0;
  for (const auto& t : u.transitions) {
    EXPECT_GE(*t.reward, -1.0);
    EXPECT_LE(*t.reward, 1.0);
    sum += *t.reward;
    sq += *t.reward * *t.reward;
  }
  const double n = static_cast<double>(u.size());
  EXPECT_NEAR(sum / n, 0.0, 5 * std::sqrt(1.0 / 3.0 / n));
  EXPECT_NEAR(sq / n, 1.0 / 3.0, 0.01);
  EXPECT_EQ(u, substitute_rewards(big, RewardSubstitution::UniformRandom, 1));
  EXPECT_NE(u, substitute_rewards(big, RewardSubstitution::UniformRandom, 2));
}

TEST(Evaluation, ReferencePoliciesHitCalibration) {
  for (const auto& name : env_names()) {
    const auto env = make_env(name);
    const auto expert = evaluate_policy(expert_policy(*env), *env, 100, 17);
    const auto random = evaluate_policy(uniform_random_policy(*env), *env, 100, 17);
    EXPECT_NEAR(expert.normalized_score, 100.0, 5.0) << name;
    EXPECT_NEAR(random.normalized_score, 0.0, 10.0) << name;
    EXPECT_EQ(expert.per_episode_returns.size(), 100u);
  }
  EXPECT_DOUBLE_EQ(normalized_score(-5.0, -10.0, 0.0), 50.0);
}

TEST(Evaluation, Deterministic) {
  const auto env = make_env("lineworld");
  const auto a = evaluate_policy(uniform_random_policy(*env), *env, 10, 3);
  const auto b = evaluate_policy(uniform_random_policy(*env), *env, 10, 3);
  EXPECT_EQ(a.per_episode_returns, b.per_episode_returns);
  EXPECT_THROW(evaluate_policy(uniform_random_policy(*env), *env, 0, 3), PreconditionError);
}

}  // namespace
}  // namespace trofi
