#include "trofi/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "trofi/checksum.hpp"
#include "trofi/error.hpp"

namespace trofi {

namespace {

constexpr int kFormatVersion = 1;

std::uint64_t tier_stream(Tier tier) { return 0x7469657200ULL + static_cast<std::uint64_t>(tier); }

void rollout_episodes(const Environment& env, Tier stream_tier, std::size_t episodes,
                      std::int64_t first_id, std::uint64_t seed, bool anneal, double noise,
                      std::vector<Transition>& out) {
  const Rng base = Rng(seed).split(tier_stream(stream_tier));
  for (std::size_t e = 0; e < episodes; ++e) {
    double scale = noise;
    if (anneal) {
      const double frac = episodes > 1 ? static_cast<double>(e) / (episodes - 1) : 0.0;
      scale = kReplayNoiseStart + (kReplayNoiseEnd - kReplayNoiseStart) * frac;
    }
    const std::uint64_t ep_seed = base.split(e).next_u64();
    Episode ep = run_episode(env, expert_policy(env, scale), ep_seed);
    for (std::size_t t = 0; t < ep.states.size(); ++t) {
      out.push_back(Transition{std::move(ep.states[t].features),
                               std::move(ep.actions[t].values),
                               std::move(ep.next_states[t].features), ep.rewards[t],
                               first_id + static_cast<std::int64_t>(e), static_cast<int>(t)});
    }
  }
}

std::vector<double> json_vec(const nlohmann::json& j) { return j.get<std::vector<double>>(); }

}  // namespace

std::string to_string(Tier tier) {
  switch (tier) {
    case Tier::Expert: return "expert";
    case Tier::Medium: return "medium";
    case Tier::MediumReplay: return "medium-replay";
    case Tier::MediumExpert: return "medium-expert";
  }
  return "unknown";
}

Tier parse_tier(const std::string& name) {
  for (Tier t : {Tier::Expert, Tier::Medium, Tier::MediumReplay, Tier::MediumExpert})
    if (to_string(t) == name) return t;
  throw ConfigError("unknown tier '" + name +
                    "' (valid: expert, medium, medium-replay, medium-expert)");
}

OfflineDataset generate_dataset(const Environment& env, Tier tier, std::size_t n_transitions,
                                std::uint64_t seed) {
  const auto horizon = static_cast<std::size_t>(env.spec().max_episode_steps);
  if (n_transitions < horizon)
    throw PreconditionError("generate_dataset: n_transitions " + std::to_string(n_transitions) +
                            " is shorter than one episode (" + std::to_string(horizon) + ")");
  const std::size_t episodes = n_transitions / horizon;
  OfflineDataset ds;
  ds.env_name = env.spec().name;
  ds.tier = tier;
  ds.labeled = true;
  ds.transitions.reserve(episodes * horizon);
  switch (tier) {
    case Tier::Expert:
      rollout_episodes(env, Tier::Expert, episodes, 0, seed, false, kExpertNoise, ds.transitions);
      break;
    case Tier::Medium:
      rollout_episodes(env, Tier::Medium, episodes, 0, seed, false, kMediumNoise, ds.transitions);
      break;
    case Tier::MediumReplay:
      rollout_episodes(env, Tier::MediumReplay, episodes, 0, seed, true, 0.0, ds.transitions);
      break;
    case Tier::MediumExpert: {
      if (episodes < 2)
        throw PreconditionError("generate_dataset: medium-expert needs at least two episodes");
      const std::size_t half = episodes / 2;
      rollout_episodes(env, Tier::Medium, half, 0, seed, false, kMediumNoise, ds.transitions);
      rollout_episodes(env, Tier::Expert, half, static_cast<std::int64_t>(half), seed, false,
                       kExpertNoise, ds.transitions);
      break;
    }
  }
  return ds;
}

OfflineDataset strip_rewards(OfflineDataset dataset) {
  for (auto& t : dataset.transitions) t.reward.reset();
  dataset.labeled = false;
  return dataset;
}

OfflineDataset label_ground_truth(OfflineDataset dataset, const Environment& env) {
  if (dataset.norm_stats)
    throw PreconditionError("label_ground_truth: dataset states are normalized");
  for (auto& t : dataset.transitions)
    t.reward = env.ground_truth_reward(State{t.state}, Action{t.action}, State{t.next_state});
  dataset.labeled = true;
  return dataset;
}

NormStats compute_norm_stats(const OfflineDataset& dataset) {
  if (dataset.transitions.empty()) throw EmptyDatasetError("compute_norm_stats: empty dataset");
  const std::size_t dim = dataset.transitions.front().state.size();
  const double n = static_cast<double>(dataset.transitions.size());
  NormStats stats;
  stats.mean.assign(dim, 0.0);
  stats.std.assign(dim, 0.0);
  for (const auto& t : dataset.transitions) {
    if (t.state.size() != dim) throw ShapeError("compute_norm_stats: ragged state dimensions");
    for (std::size_t i = 0; i < dim; ++i) stats.mean[i] += t.state[i];
  }
  for (double& m : stats.mean) m /= n;
  for (const auto& t : dataset.transitions)
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = t.state[i] - stats.mean[i];
      stats.std[i] += d * d;
    }
  for (double& s : stats.std) s = std::max(std::sqrt(s / n), NormStats::kStdFloor);
  return stats;
}

std::vector<double> normalize_state(const NormStats& stats, const std::vector<double>& state) {
  if (state.size() != stats.mean.size())
    throw ShapeError("normalize_state: state has " + std::to_string(state.size()) +
                     " features, stats have " + std::to_string(stats.mean.size()));
  std::vector<double> out(state.size());
  for (std::size_t i = 0; i < state.size(); ++i)
    out[i] = (state[i] - stats.mean[i]) / stats.std[i];
  return out;
}

Eigen::MatrixXd normalize_rows(const NormStats& stats, const Eigen::MatrixXd& states) {
  const auto dim = static_cast<Eigen::Index>(stats.mean.size());
  if (states.cols() != dim) throw ShapeError("normalize_rows: width mismatch");
  const Eigen::Map<const Eigen::RowVectorXd> mean(stats.mean.data(), dim);
  const Eigen::Map<const Eigen::RowVectorXd> sd(stats.std.data(), dim);
  return (states.rowwise() - mean).array().rowwise() / sd.array();
}

OfflineDataset apply_normalization(OfflineDataset dataset, const NormStats& stats) {
  if (dataset.transitions.empty()) throw EmptyDatasetError("apply_normalization: empty dataset");
  if (dataset.norm_stats) throw PreconditionError("apply_normalization: already normalized");
  for (auto& t : dataset.transitions) {
    t.state = normalize_state(stats, t.state);
    t.next_state = normalize_state(stats, t.next_state);
  }
  dataset.norm_stats = stats;
  return dataset;
}

std::vector<Trajectory> split_trajectories(const OfflineDataset& dataset) {
  std::map<std::int64_t, std::vector<const Transition*>> groups;
  for (const auto& t : dataset.transitions) groups[t.episode_id].push_back(&t);
  std::vector<Trajectory> out;
  out.reserve(groups.size());
  for (auto& [id, members] : groups) {
    std::stable_sort(members.begin(), members.end(),
                     [](const Transition* a, const Transition* b) {
                       return a->step_index < b->step_index;
                     });
    Trajectory traj;
    traj.episode_id = id;
    traj.transitions.reserve(members.size());
    double ret = 0.0;
    bool has_all = true;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (members[i]->step_index != static_cast<int>(i))
        throw CorruptDatasetError("episode " + std::to_string(id) + ": missing step index " +
                                  std::to_string(i));
      if (members[i]->reward)
        ret += *members[i]->reward;
      else
        has_all = false;
      traj.transitions.push_back(*members[i]);
    }
    if (dataset.labeled && has_all) traj.episodic_return = ret;
    out.push_back(std::move(traj));
  }
  return out;
}

void validate_dataset(const OfflineDataset& dataset) {
  if (dataset.transitions.empty()) throw EmptyDatasetError("dataset has no transitions");
  const auto env = make_env(dataset.env_name);
  const auto sd = static_cast<std::size_t>(env->spec().state_dim);
  const auto ad = static_cast<std::size_t>(env->spec().action_dim);
  for (const auto& t : dataset.transitions) {
    if (t.state.size() != sd || t.next_state.size() != sd || t.action.size() != ad)
      throw CorruptDatasetError("episode " + std::to_string(t.episode_id) + " step " +
                                std::to_string(t.step_index) + ": dimension mismatch");
    if (dataset.labeled && !t.reward)
      throw CorruptDatasetError("labeled dataset has a transition without reward (episode " +
                                std::to_string(t.episode_id) + ")");
  }
  if (dataset.norm_stats &&
      (dataset.norm_stats->mean.size() != sd || dataset.norm_stats->std.size() != sd))
    throw CorruptDatasetError("norm stats dimension mismatch");
  const auto trajs = split_trajectories(dataset);
  for (const auto& tr : trajs)
    if (tr.size() > static_cast<std::size_t>(env->spec().max_episode_steps))
      throw CorruptDatasetError("episode " + std::to_string(tr.episode_id) +
                                " is longer than the horizon");
}

std::string dataset_to_jsonl(const OfflineDataset& dataset) {
  nlohmann::json header{{"version", kFormatVersion},
                        {"env", dataset.env_name},
                        {"tier", to_string(dataset.tier)},
                        {"labeled", dataset.labeled},
                        {"norm_mean", nullptr},
                        {"norm_std", nullptr}};
  if (dataset.norm_stats) {
    header["norm_mean"] = dataset.norm_stats->mean;
    header["norm_std"] = dataset.norm_stats->std;
  }
  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& t : dataset.transitions) {
    nlohmann::json line{{"e", t.episode_id}, {"t", t.step_index}, {"s", t.state},
                        {"a", t.action},     {"ns", t.next_state}};
    if (t.reward) line["r"] = *t.reward;
    out += line.dump();
    out.push_back('\n');
  }
  return out;
}

OfflineDataset dataset_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  OfflineDataset ds;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        if (j.at("version").get<int>() != kFormatVersion)
          throw ParseError("unsupported dataset version", lineno);
        ds.env_name = j.at("env").get<std::string>();
        ds.tier = parse_tier(j.at("tier").get<std::string>());
        ds.labeled = j.at("labeled").get<bool>();
        if (!j.at("norm_mean").is_null())
          ds.norm_stats = NormStats{json_vec(j.at("norm_mean")), json_vec(j.at("norm_std"))};
        have_header = true;
        continue;
      }
      Transition t;
      t.episode_id = j.at("e").get<std::int64_t>();
      t.step_index = j.at("t").get<int>();
      t.state = json_vec(j.at("s"));
      t.action = json_vec(j.at("a"));
      t.next_state = json_vec(j.at("ns"));
      if (auto it = j.find("r"); it != j.end()) t.reward = it->get<double>();
      ds.transitions.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  if (!have_header) throw ParseError("missing dataset header", lineno ? lineno : 1);
  if (ds.transitions.empty()) throw EmptyDatasetError("dataset file contains only a header");
  validate_dataset(ds);
  return ds;
}

void save_dataset(const OfflineDataset& dataset, const std::filesystem::path& path) {
  write_file(path, dataset_to_jsonl(dataset));
}

OfflineDataset load_dataset(const std::filesystem::path& path) {
  try {
    return dataset_from_jsonl(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string dataset_hash(const OfflineDataset& dataset) {
  std::string canon = dataset.env_name;
  canon.push_back('\n');
  char buf[64];
  auto put = [&](const std::vector<double>& v) {
    for (double x : v) {
      std::snprintf(buf, sizeof buf, " %a", x);
      canon += buf;
    }
    canon.push_back(';');
  };
  for (const auto& t : dataset.transitions) {
    canon += std::to_string(t.episode_id);
    canon.push_back(':');
    canon += std::to_string(t.step_index);
    put(t.state);
    put(t.action);
    put(t.next_state);
    canon.push_back('\n');
  }
  return sha256_hex(canon);
}

DatasetMatrices to_matrices(const OfflineDataset& dataset) {
  DatasetMatrices m;
  if (dataset.transitions.empty()) return m;
  const auto n = static_cast<Eigen::Index>(dataset.transitions.size());
  const auto sd = static_cast<Eigen::Index>(dataset.transitions.front().state.size());
  const auto ad = static_cast<Eigen::Index>(dataset.transitions.front().action.size());
  m.states.resize(n, sd);
  m.next_states.resize(n, sd);
  m.actions.resize(n, ad);
  if (dataset.labeled) m.rewards.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = dataset.transitions[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < sd; ++k) {
      m.states(i, k) = t.state[k];
      m.next_states(i, k) = t.next_state[k];
    }
    for (Eigen::Index k = 0; k < ad; ++k) m.actions(i, k) = t.action[k];
    if (dataset.labeled) m.rewards(i) = t.reward.value();
  }
  return m;
}

}  // namespace trofi
