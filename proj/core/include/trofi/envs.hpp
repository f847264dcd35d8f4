#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "trofi/rng.hpp"

namespace trofi {

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<double> action_low;
  std::vector<double> action_high;
  int max_episode_steps = 0;
  /// Mean return of a uniform-random policy (calibration constant).
  double random_score = 0.0;
  /// Mean return of the noise-free expert controller (calibration constant).
  double expert_score = 0.0;
};

struct State {
  std::vector<double> features;
  friend bool operator==(const State&, const State&) = default;
};

struct Action {
  std::vector<double> values;
  friend bool operator==(const Action&, const Action&) = default;
};

struct StepResult {
  State next_state;
  double reward = 0.0;
  bool done = false;
};

/// Deterministic fixed-horizon continuous-control task.
///
/// Stepping is a pure function of (state, action, step index); instances hold
/// no mutable state and may be shared across threads.
class Environment {
 public:
  virtual ~Environment() = default;

  const EnvSpec& spec() const noexcept { return spec_; }

  /// Initial state for `seed`. Identical seeds give identical states.
  virtual State reset(std::uint64_t seed) const = 0;

  /// Advances one step. `step_index` is the 0-based index of this step within
  /// the episode; `done` is set once it reaches the horizon. Throws
  /// PreconditionError for out-of-bounds actions and ShapeError for bad sizes.
  StepResult step(const State& state, const Action& action, int step_index) const;

  virtual double ground_truth_reward(const State& state, const Action& action,
                                     const State& next_state) const = 0;

  /// PD controller toward the goal plus Gaussian noise, clipped to bounds.
  Action expert_action(const State& state, double noise_scale, Rng& rng) const;

  /// 2D points for rendering a state in the ranking UI.
  virtual std::pair<double, double> project_2d(const State& state, int step_index) const = 0;

  void check_state(const State& state) const;
  void check_action(const Action& action) const;
  Action clip(Action action) const;

  static constexpr double kProportionalGain = 1.0;
  static constexpr double kDerivativeGain = 0.5;

 protected:
  explicit Environment(EnvSpec spec) : spec_(std::move(spec)) {}

  virtual State dynamics(const State& state, const Action& action) const = 0;
  /// Noise-free PD command before clipping.
  virtual std::vector<double> pd_command(const State& state) const = 0;

 private:
  EnvSpec spec_;
};

/// state = [position(2), velocity(2), goal - position(2)], 200 steps.
class PointMass2D final : public Environment {
 public:
  PointMass2D();
  State reset(std::uint64_t seed) const override;
  double ground_truth_reward(const State& state, const Action& action,
                             const State& next_state) const override;
  std::pair<double, double> project_2d(const State& state, int step_index) const override;

 protected:
  State dynamics(const State& state, const Action& action) const override;
  std::vector<double> pd_command(const State& state) const override;
};

/// state = [position, velocity], goal at 1.0, 100 steps.
class LineWorld final : public Environment {
 public:
  static constexpr double kGoal = 1.0;
  static constexpr double kActionPenalty = 0.01;

  LineWorld();
  State reset(std::uint64_t seed) const override;
  double ground_truth_reward(const State& state, const Action& action,
                             const State& next_state) const override;
  std::pair<double, double> project_2d(const State& state, int step_index) const override;

 protected:
  State dynamics(const State& state, const Action& action) const override;
  std::vector<double> pd_command(const State& state) const override;
};

/// Looks up "pointmass2d" or "lineworld". Throws ConfigError otherwise.
std::shared_ptr<const Environment> make_env(const std::string& name);
std::vector<std::string> env_names();

/// Action selection callback used for rollouts and evaluation.
using PolicyFn = std::function<Action(const State&, Rng&)>;

PolicyFn expert_policy(const Environment& env, double noise_scale = 0.0);
PolicyFn uniform_random_policy(const Environment& env);

struct Episode {
  std::vector<State> states;
  std::vector<Action> actions;
  std::vector<State> next_states;
  std::vector<double> rewards;
  double episodic_return = 0.0;
};

/// Runs one full-horizon episode. Reset and policy noise draw from
/// independent streams derived from `seed`.
Episode run_episode(const Environment& env, const PolicyFn& policy, std::uint64_t seed);

struct Calibration {
  std::string env;
  double random_score = 0.0;
  double expert_score = 0.0;
  int episodes = 0;
  std::uint64_t seed = 0;
};

/// Mean returns of the uniform-random policy and noise-free expert.
Calibration calibrate(const Environment& env, int episodes = 1000, std::uint64_t seed = 0);

std::string calibration_to_json(const std::vector<Calibration>& entries);
std::vector<Calibration> calibration_from_json(const std::string& text);

}  // namespace trofi
