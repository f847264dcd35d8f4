#include "trofi/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "trofi/checksum.hpp"
#include "trofi/error.hpp"

namespace trofi {

void AnalysisConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("analysis config: gamma must be in [0, 1)");
  if (goodness_actions < 1) throw ConfigError("analysis config: K must be >= 1");
  if (n_states < 0) throw ConfigError("analysis config: n_states must be >= 0");
  if (eval_episodes < 1) throw ConfigError("analysis config: eval_episodes must be >= 1");
}

nlohmann::json to_json(const AnalysisConfig& c) {
  return {{"gamma", c.gamma},
          {"K", c.goodness_actions},
          {"n_states", c.n_states},
          {"eval_episodes", c.eval_episodes},
          {"seed", c.seed}};
}

AnalysisConfig analysis_config_from_json(const nlohmann::json& j) {
  AnalysisConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.goodness_actions = j.at("K").get<int>();
  c.n_states = j.at("n_states").get<int>();
  c.eval_episodes = j.at("eval_episodes").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::string to_string(RewardSource source) {
  switch (source) {
    case RewardSource::Trofi: return "trofi";
    case RewardSource::GroundTruth: return "ground_truth";
    case RewardSource::Constant: return "constant";
    case RewardSource::Random: return "random";
    case RewardSource::Transformed: return "transformed";
  }
  return "unknown";
}

RewardSource parse_reward_source(const std::string& name) {
  if (name == "trofi") return RewardSource::Trofi;
  if (name == "ground_truth" || name == "gt") return RewardSource::GroundTruth;
  if (name == "constant") return RewardSource::Constant;
  if (name == "random") return RewardSource::Random;
  if (name == "transformed") return RewardSource::Transformed;
  throw ConfigError("unknown reward source '" + name + "'");
}

QFunction critic_q(const Agent& agent) {
  if (agent.kind != AgentKind::Td3Bc)
    throw PreconditionError("critic_q: behavioural-cloning agents have no critic");
  return [&agent](const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) {
    return agent.q1_raw(states, actions);
  };
}

std::vector<double> discounted_return_series(std::span<const double> rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

std::vector<double> discounted_return_series(const Trajectory& trajectory, double gamma) {
  std::vector<double> rewards;
  rewards.reserve(trajectory.size());
  for (const auto& t : trajectory.transitions) {
    if (!t.reward)
      throw PreconditionError("discounted_return_series: trajectory " +
                              std::to_string(trajectory.episode_id) + " is unlabeled");
    rewards.push_back(*t.reward);
  }
  return discounted_return_series(rewards, gamma);
}

double pearson_correlation(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw PreconditionError("pearson_correlation: length mismatch");
  if (xs.size() < 2) throw PreconditionError("pearson_correlation: need at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw DegenerateCorrelationError("pearson_correlation: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationSummary value_return_correlation(const QFunction& q, const OfflineDataset& labeled,
                                            const AnalysisConfig& config) {
  if (!labeled.labeled) throw PreconditionError("value_return_correlation: dataset is unlabeled");
  if (labeled.norm_stats)
    throw PreconditionError("value_return_correlation: expects raw (unnormalized) states");
  CorrelationSummary summary;
  double total = 0.0;
  for (const auto& traj : split_trajectories(labeled)) {
    const auto returns = discounted_return_series(traj, config.gamma);
    OfflineDataset one;
    one.transitions = traj.transitions;
    const DatasetMatrices m = to_matrices(one);
    const Eigen::VectorXd values = q(m.states, m.actions);
    try {
      total += pearson_correlation(
          std::span<const double>(values.data(), static_cast<std::size_t>(values.size())), returns);
      summary.trajectories_used += 1;
    } catch (const DegenerateCorrelationError&) {
      summary.trajectories_skipped += 1;
    } catch (const PreconditionError&) {
      summary.trajectories_skipped += 1;
    }
  }
  if (summary.trajectories_used > 0)
    summary.mean = total / static_cast<double>(summary.trajectories_used);
  return summary;
}

double goodness(const QFunction& q, const OfflineDataset& expert_dataset, const EnvSpec& env,
                const AnalysisConfig& config, Rng& rng) {
  config.validate();
  if (expert_dataset.transitions.empty()) throw EmptyDatasetError("goodness: empty expert dataset");
  if (expert_dataset.norm_stats)
    throw PreconditionError("goodness: expects raw (unnormalized) states");
  const std::size_t total = expert_dataset.size();
  std::vector<std::size_t> picks;
  if (config.n_states == 0 || static_cast<std::size_t>(config.n_states) >= total) {
    picks.resize(total);
    for (std::size_t i = 0; i < total; ++i) picks[i] = i;
  } else {
    for (int i = 0; i < config.n_states; ++i) picks.push_back(rng.index(total));
  }
  const int k = config.goodness_actions;
  const int ad = env.action_dim;
  const int sd = env.state_dim;
  const auto rows = static_cast<Eigen::Index>(picks.size() * (k + 1));
  Eigen::MatrixXd states(rows, sd);
  Eigen::MatrixXd actions(rows, ad);
  Eigen::Index r = 0;
  for (std::size_t idx : picks) {
    const auto& t = expert_dataset.transitions[idx];
    if (static_cast<int>(t.action.size()) != ad || static_cast<int>(t.state.size()) != sd)
      throw ShapeError("goodness: dataset does not match environment");
    for (int row = 0; row <= k; ++row, ++r) {
      for (int c = 0; c < sd; ++c) states(r, c) = t.state[c];
      if (row == 0) {
        for (int c = 0; c < ad; ++c) actions(r, c) = t.action[c];
        continue;
      }
      // Uniform over the action box minus a tolerance ball around a*.
      for (;;) {
        double dist_sq = 0.0;
        for (int c = 0; c < ad; ++c) {
          actions(r, c) = rng.uniform(env.action_low[c], env.action_high[c]);
          const double d = actions(r, c) - t.action[c];
          dist_sq += d * d;
        }
        if (dist_sq > 1e-12) break;
      }
    }
  }
  const Eigen::VectorXd values = q(states, actions);
  std::size_t wins = 0;
  for (std::size_t p = 0; p < picks.size(); ++p) {
    const auto base = static_cast<Eigen::Index>(p * (k + 1));
    for (int i = 1; i <= k; ++i)
      if (values(base + i) < values(base)) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(picks.size() * k);
}

OfflineDataset transform_rewards(OfflineDataset dataset, const AffineTransform& transform) {
  if (!dataset.labeled) throw PreconditionError("transform_rewards: dataset is unlabeled");
  for (auto& t : dataset.transitions) t.reward = transform.scale * t.reward.value() + transform.offset;
  return dataset;
}

AffineTransform fit_affine_to_model(const OfflineDataset& gt_labeled,
                                    const OfflineDataset& trofi_labeled) {
  if (!gt_labeled.labeled || !trofi_labeled.labeled)
    throw PreconditionError("fit_affine_to_model: both datasets must be labeled");
  std::map<std::pair<std::int64_t, int>, double> trofi;
  for (const auto& t : trofi_labeled.transitions) trofi[{t.episode_id, t.step_index}] = *t.reward;
  double n = 0, sx = 0, sy = 0;
  std::vector<std::pair<double, double>> matched;
  for (const auto& t : gt_labeled.transitions) {
    auto it = trofi.find({t.episode_id, t.step_index});
    if (it == trofi.end()) continue;
    matched.emplace_back(*t.reward, it->second);
    sx += *t.reward;
    sy += it->second;
    n += 1;
  }
  if (matched.size() < 2) throw PreconditionError("fit_affine_to_model: fewer than two matched transitions");
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : matched) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx <= 0.0) throw NumericError("fit_affine_to_model: ground-truth rewards are constant");
  AffineTransform out;
  out.scale = sxy / sxx;
  out.offset = my - out.scale * mx;
  return out;
}

AnalysisReport build_report(const ReportInputs& in, const AnalysisConfig& config) {
  config.validate();
  if (!in.agent || !in.env || !in.train_labeled || !in.expert_labeled)
    throw PreconditionError("build_report: missing inputs");
  AnalysisReport rep;
  rep.reward_source = in.reward_source;
  rep.performance =
      evaluate(*in.agent, *in.env, config.eval_episodes, config.seed).normalized_score;
  const QFunction q = critic_q(*in.agent);
  const auto train = value_return_correlation(q, *in.train_labeled, config);
  const auto expert = value_return_correlation(q, *in.expert_labeled, config);
  rep.pearson_on_train = train.mean;
  rep.pearson_on_expert = expert.mean;
  rep.train_trajectories_skipped = train.trajectories_skipped;
  rep.expert_trajectories_skipped = expert.trajectories_skipped;
  Rng rng(config.seed, 0x676f6f64ULL);
  rep.goodness_on_expert = goodness(q, *in.expert_labeled, in.env->spec(), config, rng);
  rep.provenance = {
      {"train_dataset_hash", dataset_hash(*in.train_labeled)},
      {"expert_dataset_hash", dataset_hash(*in.expert_labeled)},
      {"agent_checkpoint_hash", sha256_hex(to_json(*in.agent).dump(1) + "\n")},
      {"config", to_json(config)},
      {"pearson_aggregation", "per-trajectory correlation, then mean over non-degenerate trajectories"}};
  return rep;
}

nlohmann::json to_json(const AnalysisReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"reward_source", to_string(r.reward_source)},
          {"performance", r.performance},
          {"pearson_on_train", opt(r.pearson_on_train)},
          {"pearson_on_expert", opt(r.pearson_on_expert)},
          {"goodness_on_expert", r.goodness_on_expert},
          {"train_trajectories_skipped", r.train_trajectories_skipped},
          {"expert_trajectories_skipped", r.expert_trajectories_skipped},
          {"provenance", r.provenance}};
}

std::string report_table(const std::vector<std::pair<std::string, AnalysisReport>>& rows) {
  std::ostringstream out;
  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", *v);
    return std::string(buf);
  };
  out << "| Run | Reward | Performance | PC orig. dataset | PC exp. dataset | G exp. dataset |\n";
  out << "|---|---|---|---|---|---|\n";
  for (const auto& [name, r] : rows) {
    char perf[32];
    std::snprintf(perf, sizeof perf, "%.1f", r.performance);
    out << "| " << name << " | " << to_string(r.reward_source) << " | " << perf << " | "
        << fmt(r.pearson_on_train) << " | " << fmt(r.pearson_on_expert) << " | "
        << fmt(r.goodness_on_expert) << " |\n";
  }
  return out.str();
}

std::string value_series_csv(const QFunction& q, const OfflineDataset& labeled, double gamma,
                             std::size_t max_trajectories) {
  std::ostringstream out;
  out.precision(17);
  out << "episode,t,q,discounted_return\n";
  std::size_t count = 0;
  for (const auto& traj : split_trajectories(labeled)) {
    if (count++ >= max_trajectories) break;
    const auto returns = discounted_return_series(traj, gamma);
    OfflineDataset one;
    one.transitions = traj.transitions;
    const DatasetMatrices m = to_matrices(one);
    const Eigen::VectorXd values = q(m.states, m.actions);
    for (std::size_t t = 0; t < returns.size(); ++t)
      out << traj.episode_id << ',' << t << ',' << values(static_cast<Eigen::Index>(t)) << ','
          << returns[t] << '\n';
  }
  return out.str();
}

}  // namespace trofi
