#include "trofi/envs.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "trofi/error.hpp"

namespace trofi {

namespace {

// Produced by `trofi calibrate` (1000 episodes each, seed 0); mirrored in
// data/calibration.json.
constexpr double kPointMassRandomScore = -872.15608913101937;
constexpr double kPointMassExpertScore = -26.147245966867974;
constexpr double kLineWorldRandomScore = -186.94472169128792;
constexpr double kLineWorldExpertScore = -36.024430439627139;

constexpr double kDt = 0.1;
constexpr std::uint64_t kResetStream = 0x7265736574ULL;
constexpr std::uint64_t kPolicyStream = 0x706f6c6963ULL;

void clip_norm(double* v, int n, double max_norm) {
  double sq = 0.0;
  for (int i = 0; i < n; ++i) sq += v[i] * v[i];
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (int i = 0; i < n; ++i) v[i] *= s;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Environment

void Environment::check_state(const State& state) const {
  if (static_cast<int>(state.features.size()) != spec_.state_dim)
    throw ShapeError(spec_.name + ": state has " + std::to_string(state.features.size()) +
                     " features, expected " + std::to_string(spec_.state_dim));
  for (double f : state.features)
    if (!std::isfinite(f)) throw NumericError(spec_.name + ": non-finite state feature");
}

void Environment::check_action(const Action& action) const {
  if (static_cast<int>(action.values.size()) != spec_.action_dim)
    throw ShapeError(spec_.name + ": action has " + std::to_string(action.values.size()) +
                     " components, expected " + std::to_string(spec_.action_dim));
  for (int i = 0; i < spec_.action_dim; ++i) {
    const double a = action.values[i];
    if (!(a >= spec_.action_low[i] && a <= spec_.action_high[i]))
      throw PreconditionError(spec_.name + ": action component " + std::to_string(i) + " = " +
                              std::to_string(a) + " outside bounds");
  }
}

Action Environment::clip(Action action) const {
  for (int i = 0; i < spec_.action_dim; ++i)
    action.values[i] = std::clamp(action.values[i], spec_.action_low[i], spec_.action_high[i]);
  return action;
}

StepResult Environment::step(const State& state, const Action& action, int step_index) const {
  check_state(state);
  check_action(action);
  StepResult out;
  out.next_state = dynamics(state, action);
  check_state(out.next_state);
  out.reward = ground_truth_reward(state, action, out.next_state);
  out.done = step_index + 1 >= spec_.max_episode_steps;
  return out;
}

Action Environment::expert_action(const State& state, double noise_scale, Rng& rng) const {
  if (noise_scale < 0.0) throw PreconditionError("expert_action: noise_scale must be >= 0");
  Action a{pd_command(state)};
  if (noise_scale > 0.0)
    for (double& v : a.values) v += rng.normal(0.0, noise_scale);
  return clip(std::move(a));
}

// ---------------------------------------------------------------------------
// PointMass2D

PointMass2D::PointMass2D()
    : Environment(EnvSpec{"pointmass2d", 6, 2, {-1.0, -1.0}, {1.0, 1.0}, 200,
                          kPointMassRandomScore, kPointMassExpertScore}) {}

State PointMass2D::reset(std::uint64_t seed) const {
  Rng rng(seed, kResetStream);
  const double px = rng.uniform(-1.0, 1.0);
  const double py = rng.uniform(-1.0, 1.0);
  const double gx = rng.uniform(-1.0, 1.0);
  const double gy = rng.uniform(-1.0, 1.0);
  return State{{px, py, 0.0, 0.0, gx - px, gy - py}};
}

State PointMass2D::dynamics(const State& state, const Action& action) const {
  const auto& f = state.features;
  const double goal_x = f[0] + f[4];
  const double goal_y = f[1] + f[5];
  double v[2] = {f[2] + kDt * action.values[0], f[3] + kDt * action.values[1]};
  clip_norm(v, 2, 1.0);
  const double px = f[0] + kDt * v[0];
  const double py = f[1] + kDt * v[1];
  return State{{px, py, v[0], v[1], goal_x - px, goal_y - py}};
}

double PointMass2D::ground_truth_reward(const State&, const Action&,
                                        const State& next_state) const {
  // goal_offset = goal - position, so distance to goal is its norm.
  const auto& f = next_state.features;
  return -std::hypot(f[4], f[5]);
}

std::vector<double> PointMass2D::pd_command(const State& state) const {
  const auto& f = state.features;
  return {kProportionalGain * f[4] - kDerivativeGain * f[2],
          kProportionalGain * f[5] - kDerivativeGain * f[3]};
}

std::pair<double, double> PointMass2D::project_2d(const State& state, int) const {
  return {state.features[0], state.features[1]};
}

// ---------------------------------------------------------------------------
// LineWorld

LineWorld::LineWorld()
    : Environment(EnvSpec{"lineworld", 2, 1, {-1.0}, {1.0}, 100, kLineWorldRandomScore,
                          kLineWorldExpertScore}) {}

State LineWorld::reset(std::uint64_t seed) const {
  Rng rng(seed, kResetStream);
  return State{{rng.uniform(-1.0, 0.0), 0.0}};
}

State LineWorld::dynamics(const State& state, const Action& action) const {
  double v = state.features[1] + kDt * action.values[0];
  clip_norm(&v, 1, 1.0);
  return State{{state.features[0] + kDt * v, v}};
}

double LineWorld::ground_truth_reward(const State&, const Action& action,
                                      const State& next_state) const {
  const double a = action.values[0];
  return -std::abs(next_state.features[0] - kGoal) - kActionPenalty * a * a;
}

std::vector<double> LineWorld::pd_command(const State& state) const {
  return {kProportionalGain * (kGoal - state.features[0]) - kDerivativeGain * state.features[1]};
}

std::pair<double, double> LineWorld::project_2d(const State& state, int step_index) const {
  return {static_cast<double>(step_index), state.features[0]};
}

// ---------------------------------------------------------------------------

std::shared_ptr<const Environment> make_env(const std::string& name) {
  if (name == "pointmass2d") return std::make_shared<PointMass2D>();
  if (name == "lineworld") return std::make_shared<LineWorld>();
  throw ConfigError("unknown environment '" + name + "' (valid: pointmass2d, lineworld)");
}

std::vector<std::string> env_names() { return {"pointmass2d", "lineworld"}; }

PolicyFn expert_policy(const Environment& env, double noise_scale) {
  return [&env, noise_scale](const State& s, Rng& rng) {
    return env.expert_action(s, noise_scale, rng);
  };
}

PolicyFn uniform_random_policy(const Environment& env) {
  return [&env](const State&, Rng& rng) {
    const auto& spec = env.spec();
    Action a;
    a.values.resize(spec.action_dim);
    for (int i = 0; i < spec.action_dim; ++i)
      a.values[i] = rng.uniform(spec.action_low[i], spec.action_high[i]);
    return a;
  };
}

Episode run_episode(const Environment& env, const PolicyFn& policy, std::uint64_t seed) {
  const int horizon = env.spec().max_episode_steps;
  Episode ep;
  ep.states.reserve(horizon);
  ep.actions.reserve(horizon);
  ep.next_states.reserve(horizon);
  ep.rewards.reserve(horizon);
  Rng noise(seed, kPolicyStream);
  State s = env.reset(seed);
  for (int t = 0; t < horizon; ++t) {
    Action a = policy(s, noise);
    StepResult r = env.step(s, a, t);
    ep.states.push_back(std::move(s));
    ep.actions.push_back(std::move(a));
    ep.rewards.push_back(r.reward);
    ep.episodic_return += r.reward;
    s = r.next_state;
    ep.next_states.push_back(std::move(r.next_state));
    if (r.done) break;
  }
  return ep;
}

Calibration calibrate(const Environment& env, int episodes, std::uint64_t seed) {
  Calibration c;
  c.env = env.spec().name;
  c.episodes = episodes;
  c.seed = seed;
  const Rng base(seed);
  const PolicyFn random = uniform_random_policy(env);
  const PolicyFn expert = expert_policy(env, 0.0);
  double random_sum = 0.0;
  double expert_sum = 0.0;
  for (int i = 0; i < episodes; ++i) {
    const std::uint64_t ep_seed = base.split(static_cast<std::uint64_t>(i)).next_u64();
    random_sum += run_episode(env, random, ep_seed).episodic_return;
    expert_sum += run_episode(env, expert, ep_seed).episodic_return;
  }
  c.random_score = random_sum / episodes;
  c.expert_score = expert_sum / episodes;
  return c;
}

std::string calibration_to_json(const std::vector<Calibration>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : entries)
    arr.push_back({{"env", c.env},
                   {"random_score", c.random_score},
                   {"expert_score", c.expert_score},
                   {"episodes", c.episodes},
                   {"seed", c.seed}});
  return arr.dump(2) + "\n";
}

std::vector<Calibration> calibration_from_json(const std::string& text) {
  std::vector<Calibration> out;
  try {
    for (const auto& j : nlohmann::json::parse(text)) {
      Calibration c;
      c.env = j.at("env").get<std::string>();
      c.random_score = j.at("random_score").get<double>();
      c.expert_score = j.at("expert_score").get<double>();
      c.episodes = j.at("episodes").get<int>();
      c.seed = j.at("seed").get<std::uint64_t>();
      out.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("calibration: ") + e.what());
  }
  return out;
}

}  // namespace trofi
