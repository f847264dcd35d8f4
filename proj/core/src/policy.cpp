#include "trofi/policy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "trofi/checksum.hpp"
#include "trofi/error.hpp"
#include "trofi/reward_model.hpp"

namespace trofi {

namespace {

constexpr int kAgentVersion = 1;
constexpr std::uint64_t kTrainStream = 0x74643362ULL;

Eigen::MatrixXd concat(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) {
  Eigen::MatrixXd x(states.rows(), states.cols() + actions.cols());
  x << states, actions;
  return x;
}

Eigen::RowVectorXd row(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd clip_rows(Eigen::MatrixXd a, const Eigen::RowVectorXd& low,
                          const Eigen::RowVectorXd& high) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    a.row(i) = a.row(i).cwiseMax(low).cwiseMin(high);
  return a;
}

std::vector<int> network_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

void check_batch(const Agent& agent, const Batch& batch) {
  if (batch.states.cols() != agent.state_dim() || batch.actions.cols() != agent.action_dim())
    throw ShapeError("batch dimensions do not match agent");
  if (batch.states.rows() == 0) throw PreconditionError("empty batch");
}

void require_labeled(const OfflineDataset& dataset, const char* who) {
  if (!dataset.labeled)
    throw PreconditionError(std::string(who) +
                            ": dataset has no rewards; label it with a reward model "
                            "(label_dataset / `trofi label`) or use ground-truth labels");
}

struct PreparedData {
  NormStats stats;
  DatasetMatrices matrices;
};

PreparedData prepare(const OfflineDataset& dataset) {
  if (dataset.transitions.empty()) throw EmptyDatasetError("training on an empty dataset");
  PreparedData p;
  if (dataset.norm_stats) {
    p.stats = *dataset.norm_stats;
    p.matrices = to_matrices(dataset);
  } else {
    p.stats = compute_norm_stats(dataset);
    p.matrices = to_matrices(dataset);
    p.matrices.states = normalize_rows(p.stats, p.matrices.states);
    p.matrices.next_states = normalize_rows(p.stats, p.matrices.next_states);
  }
  return p;
}

Batch sample_batch(const DatasetMatrices& data, int batch_size, Rng& rng) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(batch_size));
  const auto n = static_cast<std::size_t>(data.states.rows());
  for (auto& r : rows) r = static_cast<Eigen::Index>(rng.index(n));
  return gather_batch(data, rows);
}

}  // namespace

void PolicyConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("policy config: gamma must be in (0, 1)");
  if (!(alpha > 0.0)) throw ConfigError("policy config: alpha must be > 0");
  if (policy_delay < 1) throw ConfigError("policy config: policy_delay must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("policy config: tau must be in [0, 1]");
  if (batch_size < 1) throw ConfigError("policy config: batch_size must be >= 1");
  if (updates < 0) throw ConfigError("policy config: updates must be >= 0");
  if (target_noise_std < 0.0 || target_noise_clip < 0.0)
    throw ConfigError("policy config: target noise parameters must be >= 0");
  if (log_every < 1) throw ConfigError("policy config: log_every must be >= 1");
  if (eval_every < 0 || eval_episodes < 1)
    throw ConfigError("policy config: invalid evaluation schedule");
}

nlohmann::json to_json(const PolicyConfig& c) {
  return {{"alpha", c.alpha},
          {"gamma", c.gamma},
          {"tau", c.tau},
          {"policy_delay", c.policy_delay},
          {"target_noise_std", c.target_noise_std},
          {"target_noise_clip", c.target_noise_clip},
          {"batch_size", c.batch_size},
          {"updates", c.updates},
          {"actor_learning_rate", c.actor_learning_rate},
          {"critic_learning_rate", c.critic_learning_rate},
          {"hidden_sizes", c.hidden_sizes},
          {"seed", c.seed},
          {"log_every", c.log_every},
          {"eval_every", c.eval_every},
          {"eval_episodes", c.eval_episodes}};
}

PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  PolicyConfig c;
  c.alpha = j.at("alpha").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.tau = j.at("tau").get<double>();
  c.policy_delay = j.at("policy_delay").get<int>();
  c.target_noise_std = j.at("target_noise_std").get<double>();
  c.target_noise_clip = j.at("target_noise_clip").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.updates = j.at("updates").get<int>();
  c.actor_learning_rate = j.at("actor_learning_rate").get<double>();
  c.critic_learning_rate = j.at("critic_learning_rate").get<double>();
  c.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.log_every = j.at("log_every").get<int>();
  c.eval_every = j.at("eval_every").get<int>();
  c.eval_episodes = j.at("eval_episodes").get<int>();
  return c;
}

// ---------------------------------------------------------------------------
// Agent

Eigen::RowVectorXd Agent::action_half_range() const {
  return 0.5 * (row(action_high) - row(action_low));
}

Eigen::MatrixXd Agent::scale_actions(const Eigen::MatrixXd& unit) const {
  const Eigen::RowVectorXd center = 0.5 * (row(action_high) + row(action_low));
  const Eigen::RowVectorXd half = action_half_range();
  Eigen::MatrixXd a = unit.array().rowwise() * half.array();
  a.rowwise() += center;
  return clip_rows(std::move(a), row(action_low), row(action_high));
}

Eigen::MatrixXd Agent::act(const Eigen::MatrixXd& states) const {
  return scale_actions(actor.forward(states));
}

Eigen::MatrixXd Agent::act_target(const Eigen::MatrixXd& states) const {
  return scale_actions(target_actor.forward(states));
}

Eigen::VectorXd Agent::q1(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const {
  if (kind != AgentKind::Td3Bc) throw PreconditionError("agent has no trained critic");
  return critic1.forward(concat(states, actions)).col(0);
}

Eigen::VectorXd Agent::q1_raw(const Eigen::MatrixXd& raw_states,
                              const Eigen::MatrixXd& actions) const {
  return q1(normalize_rows(norm_stats, raw_states), actions);
}

PolicyFn Agent::policy() const {
  return [this](const State& s, Rng&) {
    const auto norm = normalize_state(norm_stats, s.features);
    const Eigen::Map<const Eigen::RowVectorXd> x(norm.data(), static_cast<Eigen::Index>(norm.size()));
    const Eigen::MatrixXd a = act(Eigen::MatrixXd(x));
    return Action{std::vector<double>(a.data(), a.data() + a.size())};
  };
}

Agent make_agent(const EnvSpec& env, const NormStats& stats, const PolicyConfig& config) {
  config.validate();
  if (static_cast<int>(stats.mean.size()) != env.state_dim)
    throw ShapeError("make_agent: normalization stats do not match state dimension");
  Agent agent;
  agent.env_name = env.name;
  agent.action_low = env.action_low;
  agent.action_high = env.action_high;
  agent.norm_stats = stats;
  agent.config = config;
  Rng rng = Rng(config.seed, kTrainStream).split(7);
  agent.actor = nn::Mlp::init(network_sizes(env.state_dim, config.hidden_sizes, env.action_dim),
                              nn::Activation::Relu, nn::Activation::Tanh, rng);
  const auto critic_sizes = network_sizes(env.state_dim + env.action_dim, config.hidden_sizes, 1);
  agent.critic1 = nn::Mlp::init(critic_sizes, nn::Activation::Relu, nn::Activation::Identity, rng);
  agent.critic2 = nn::Mlp::init(critic_sizes, nn::Activation::Relu, nn::Activation::Identity, rng);
  agent.target_actor = agent.actor;
  agent.target_critic1 = agent.critic1;
  agent.target_critic2 = agent.critic2;
  agent.actor_opt = nn::AdamState::for_network(agent.actor, {config.actor_learning_rate});
  agent.critic1_opt = nn::AdamState::for_network(agent.critic1, {config.critic_learning_rate});
  agent.critic2_opt = nn::AdamState::for_network(agent.critic2, {config.critic_learning_rate});
  return agent;
}

Batch gather_batch(const DatasetMatrices& data, const std::vector<Eigen::Index>& rows) {
  Batch b;
  b.states = data.states(rows, Eigen::all);
  b.actions = data.actions(rows, Eigen::all);
  b.next_states = data.next_states(rows, Eigen::all);
  if (data.rewards.size() > 0) b.rewards = data.rewards(rows);
  return b;
}

// ---------------------------------------------------------------------------
// TD3+BC updates

double lambda_norm(std::span<const double> q_values, double alpha) {
  if (q_values.empty()) throw PreconditionError("lambda_norm: empty Q batch");
  double sum = 0.0;
  for (double q : q_values) sum += std::abs(q);
  const double mean_abs = sum / static_cast<double>(q_values.size());
  return alpha / std::max(mean_abs, kLambdaFloor);
}

Eigen::VectorXd critic_targets(const Agent& agent, const Batch& batch, const PolicyConfig& config,
                               Rng& rng) {
  check_batch(agent, batch);
  if (batch.rewards.size() != batch.states.rows())
    throw PreconditionError("critic_targets: batch is unlabeled");
  Eigen::MatrixXd next = agent.target_actor.forward(batch.next_states);
  Eigen::MatrixXd next_actions = agent.scale_actions(next);
  if (config.target_noise_std > 0.0) {
    const Eigen::RowVectorXd half = agent.action_half_range();
    for (Eigen::Index i = 0; i < next_actions.rows(); ++i)
      for (Eigen::Index k = 0; k < next_actions.cols(); ++k) {
        const double noise = std::clamp(rng.normal(0.0, config.target_noise_std),
                                        -config.target_noise_clip, config.target_noise_clip);
        next_actions(i, k) += noise * half(k);
      }
    next_actions = clip_rows(std::move(next_actions), row(agent.action_low), row(agent.action_high));
  }
  const Eigen::MatrixXd x = concat(batch.next_states, next_actions);
  const Eigen::VectorXd q1 = agent.target_critic1.forward(x).col(0);
  const Eigen::VectorXd q2 = agent.target_critic2.forward(x).col(0);
  return batch.rewards + config.gamma * q1.cwiseMin(q2);
}

CriticStep critic_gradients(const Agent& agent, const Batch& batch, const Eigen::VectorXd& targets) {
  check_batch(agent, batch);
  const Eigen::MatrixXd x = concat(batch.states, batch.actions);
  const double inv_b = 1.0 / static_cast<double>(x.rows());
  CriticStep step;
  auto one = [&](const nn::Mlp& critic, double& loss, nn::Gradients& grad) {
    nn::Tape tape;
    const Eigen::VectorXd q = critic.forward(x, tape).col(0);
    const Eigen::VectorXd err = q - targets;
    loss = err.squaredNorm() * inv_b;
    grad = critic.backward(tape, Eigen::MatrixXd(2.0 * inv_b * err), true);
  };
  one(agent.critic1, step.loss1, step.grad1);
  one(agent.critic2, step.loss2, step.grad2);
  return step;
}

double critic_update(Agent& agent, const Batch& batch, const PolicyConfig& config, Rng& rng) {
  const Eigen::VectorXd targets = critic_targets(agent, batch, config, rng);
  CriticStep step = critic_gradients(agent, batch, targets);
  const double loss = step.loss1 + step.loss2;
  if (!std::isfinite(loss)) throw DivergenceError("critic_update: non-finite critic loss");
  nn::adam_step(agent.critic1, step.grad1, agent.critic1_opt);
  nn::adam_step(agent.critic2, step.grad2, agent.critic2_opt);
  agent.critic_updates += 1;
  return loss;
}

ActorStep actor_gradients(const Agent& agent, const Batch& batch, double alpha) {
  check_batch(agent, batch);
  const double inv_b = 1.0 / static_cast<double>(batch.states.rows());
  const Eigen::RowVectorXd half = agent.action_half_range();

  nn::Tape actor_tape;
  const Eigen::MatrixXd unit = agent.actor.forward(batch.states, actor_tape);
  Eigen::MatrixXd pi = unit.array().rowwise() * half.array();
  pi.rowwise() += 0.5 * (row(agent.action_high) + row(agent.action_low));

  const Eigen::MatrixXd diff = pi - batch.actions;
  ActorStep step;
  step.loss = diff.squaredNorm() * inv_b;
  Eigen::MatrixXd d_pi = 2.0 * inv_b * diff;

  if (alpha != 0.0) {
    nn::Tape critic_tape;
    const Eigen::VectorXd q = agent.critic1.forward(concat(batch.states, pi), critic_tape).col(0);
    step.lambda = lambda_norm(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())), alpha);
    step.loss -= step.lambda * q.mean();
    const Eigen::MatrixXd up = Eigen::MatrixXd::Constant(q.size(), 1, -step.lambda * inv_b);
    const nn::Gradients cg = agent.critic1.backward(critic_tape, up, false);
    d_pi += cg.input.rightCols(agent.action_dim());
  }
  const Eigen::MatrixXd d_unit = d_pi.array().rowwise() * half.array();
  step.gradients = agent.actor.backward(actor_tape, d_unit, true);
  return step;
}

ActorStep bc_gradients(const Agent& agent, const Batch& batch) {
  return actor_gradients(agent, batch, 0.0);
}

ActorUpdate actor_update(Agent& agent, const Batch& batch, const PolicyConfig& config) {
  ActorStep step = actor_gradients(agent, batch, config.alpha);
  if (!std::isfinite(step.loss)) throw DivergenceError("actor_update: non-finite actor loss");
  nn::adam_step(agent.actor, step.gradients, agent.actor_opt);
  nn::soft_update(agent.target_actor, agent.actor, config.tau);
  nn::soft_update(agent.target_critic1, agent.critic1, config.tau);
  nn::soft_update(agent.target_critic2, agent.critic2, config.tau);
  return {step.loss, step.lambda};
}

std::string PolicyTrainingLog::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "update,critic_loss,actor_loss,lambda,eval_score\n";
  for (const auto& r : rows) {
    out << r.update << ',' << r.critic_loss << ',' << r.actor_loss << ',' << r.lambda << ',';
    if (r.eval_score) out << *r.eval_score;
    out << '\n';
  }
  return out.str();
}

PolicyTrainResult train_policy(const OfflineDataset& dataset, const PolicyConfig& config) {
  config.validate();
  require_labeled(dataset, "train_policy");
  const auto env = make_env(dataset.env_name);
  PreparedData data = prepare(dataset);
  PolicyTrainResult result{make_agent(env->spec(), data.stats, config), {}};
  Agent& agent = result.agent;
  Rng rng(config.seed, kTrainStream);
  Rng batch_rng = rng.split(1);
  Rng noise_rng = rng.split(2);

  ActorUpdate last_actor{};
  for (int u = 1; u <= config.updates; ++u) {
    const Batch batch = sample_batch(data.matrices, config.batch_size, batch_rng);
    const double critic_loss = critic_update(agent, batch, config, noise_rng);
    if (u % config.policy_delay == 0) last_actor = actor_update(agent, batch, config);
    const bool log_now = u % config.log_every == 0 || u == config.updates;
    const bool eval_now = config.eval_every > 0 && u % config.eval_every == 0;
    if (log_now || eval_now) {
      PolicyLogRow row{u, critic_loss, last_actor.loss, last_actor.lambda, std::nullopt};
      if (eval_now)
        row.eval_score = evaluate(agent, *env, config.eval_episodes, config.seed).normalized_score;
      result.log.rows.push_back(row);
    }
  }
  return result;
}

PolicyTrainResult train_bc(const OfflineDataset& dataset, const PolicyConfig& config) {
  config.validate();
  const auto env = make_env(dataset.env_name);
  PreparedData data = prepare(dataset);
  PolicyTrainResult result{make_agent(env->spec(), data.stats, config), {}};
  Agent& agent = result.agent;
  agent.kind = AgentKind::BehaviorCloning;
  Rng batch_rng = Rng(config.seed, kTrainStream).split(3);
  for (int u = 1; u <= config.updates; ++u) {
    const Batch batch = sample_batch(data.matrices, config.batch_size, batch_rng);
    ActorStep step = bc_gradients(agent, batch);
    if (!std::isfinite(step.loss)) throw DivergenceError("train_bc: non-finite loss");
    nn::adam_step(agent.actor, step.gradients, agent.actor_opt);
    if (u % config.log_every == 0 || u == config.updates)
      result.log.rows.push_back({u, 0.0, step.loss, 0.0, std::nullopt});
  }
  agent.target_actor = agent.actor;
  return result;
}

std::string to_string(RewardSubstitution mode) {
  return mode == RewardSubstitution::ConstantZero ? "constant" : "random";
}

OfflineDataset substitute_rewards(OfflineDataset dataset, RewardSubstitution mode,
                                  std::uint64_t seed) {
  Rng rng(seed, 0x73756273ULL);
  for (auto& t : dataset.transitions)
    t.reward = mode == RewardSubstitution::ConstantZero ? 0.0 : rng.uniform(-1.0, 1.0);
  dataset.labeled = true;
  return dataset;
}

// ---------------------------------------------------------------------------
// Evaluation

double normalized_score(double mean_return, double random_score, double expert_score) {
  return 100.0 * (mean_return - random_score) / (expert_score - random_score);
}

EvalResult evaluate_policy(const PolicyFn& policy, const Environment& env, int n_episodes,
                           std::uint64_t seed) {
  if (n_episodes < 1) throw PreconditionError("evaluate: n_episodes must be positive");
  EvalResult r;
  const Rng base(seed);
  for (int i = 0; i < n_episodes; ++i) {
    const std::uint64_t ep_seed = base.split(static_cast<std::uint64_t>(i)).next_u64();
    r.per_episode_returns.push_back(run_episode(env, policy, ep_seed).episodic_return);
  }
  double sum = 0.0;
  for (double x : r.per_episode_returns) sum += x;
  r.mean = sum / n_episodes;
  double sq = 0.0;
  for (double x : r.per_episode_returns) sq += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(sq / n_episodes);
  r.normalized_score = normalized_score(r.mean, env.spec().random_score, env.spec().expert_score);
  return r;
}

EvalResult evaluate(const Agent& agent, const Environment& env, int n_episodes, std::uint64_t seed) {
  if (agent.state_dim() != env.spec().state_dim || agent.action_dim() != env.spec().action_dim)
    throw ShapeError("evaluate: agent dimensions do not match environment " + env.spec().name);
  return evaluate_policy(agent.policy(), env, n_episodes, seed);
}

// ---------------------------------------------------------------------------
// Checkpoints

nlohmann::json to_json(const Agent& a) {
  return {{"version", kAgentVersion},
          {"kind", a.kind == AgentKind::Td3Bc ? "td3bc" : "bc"},
          {"env_name", a.env_name},
          {"action_low", a.action_low},
          {"action_high", a.action_high},
          {"norm_stats", to_json(a.norm_stats)},
          {"config", to_json(a.config)},
          {"critic_updates", a.critic_updates},
          {"networks",
           {{"actor", nn::to_json(a.actor)},
            {"critic1", nn::to_json(a.critic1)},
            {"critic2", nn::to_json(a.critic2)},
            {"target_actor", nn::to_json(a.target_actor)},
            {"target_critic1", nn::to_json(a.target_critic1)},
            {"target_critic2", nn::to_json(a.target_critic2)}}}};
}

Agent agent_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kAgentVersion) throw ParseError("unsupported agent version");
    Agent a;
    a.kind = j.at("kind").get<std::string>() == "bc" ? AgentKind::BehaviorCloning : AgentKind::Td3Bc;
    a.env_name = j.at("env_name").get<std::string>();
    a.action_low = j.at("action_low").get<std::vector<double>>();
    a.action_high = j.at("action_high").get<std::vector<double>>();
    a.norm_stats = norm_stats_from_json(j.at("norm_stats"));
    a.config = policy_config_from_json(j.at("config"));
    a.critic_updates = j.at("critic_updates").get<long>();
    const auto& n = j.at("networks");
    a.actor = nn::mlp_from_json(n.at("actor"));
    a.critic1 = nn::mlp_from_json(n.at("critic1"));
    a.critic2 = nn::mlp_from_json(n.at("critic2"));
    a.target_actor = nn::mlp_from_json(n.at("target_actor"));
    a.target_critic1 = nn::mlp_from_json(n.at("target_critic1"));
    a.target_critic2 = nn::mlp_from_json(n.at("target_critic2"));
    a.actor_opt = nn::AdamState::for_network(a.actor, {a.config.actor_learning_rate});
    a.critic1_opt = nn::AdamState::for_network(a.critic1, {a.config.critic_learning_rate});
    a.critic2_opt = nn::AdamState::for_network(a.critic2, {a.config.critic_learning_rate});
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("agent checkpoint: ") + e.what());
  }
}

void save_agent(const Agent& agent, const std::filesystem::path& path) {
  write_file(path, to_json(agent).dump(1) + "\n");
}

Agent load_agent(const std::filesystem::path& path) {
  try {
    return agent_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace trofi
