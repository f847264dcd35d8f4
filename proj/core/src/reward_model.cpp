#include "trofi/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "trofi/checksum.hpp"
#include "trofi/error.hpp"

namespace trofi {

namespace {

// Small output layer: initial rewards near zero, initial loss near ln 2.
constexpr double kOutputInitScale = 0.01;

constexpr int kRewardModelVersion = 1;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::MatrixXd trajectory_states(const Trajectory& t) {
  const auto rows = static_cast<Eigen::Index>(t.size());
  const auto cols = rows ? static_cast<Eigen::Index>(t.transitions.front().state.size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = t.transitions[i].state[k];
  return m;
}

}  // namespace

nlohmann::json to_json(const RewardTrainConfig& c) {
  return {{"snippet_length", c.snippet_length}, {"pairs_per_update", c.pairs_per_update},
          {"updates", c.updates},               {"learning_rate", c.learning_rate},
          {"hidden_sizes", c.hidden_sizes},     {"seed", c.seed},
          {"log_every", c.log_every},           {"holdout_fraction", c.holdout_fraction},
          {"holdout_pairs", c.holdout_pairs}};
}

RewardTrainConfig reward_config_from_json(const nlohmann::json& j) {
  RewardTrainConfig c;
  c.snippet_length = j.at("snippet_length").get<int>();
  c.pairs_per_update = j.at("pairs_per_update").get<int>();
  c.updates = j.at("updates").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.log_every = j.at("log_every").get<int>();
  c.holdout_fraction = j.at("holdout_fraction").get<double>();
  c.holdout_pairs = j.at("holdout_pairs").get<int>();
  return c;
}

void RewardTrainConfig::validate() const {
  if (snippet_length < 1) throw ConfigError("reward config: snippet_length must be >= 1");
  if (pairs_per_update < 1) throw ConfigError("reward config: pairs_per_update must be >= 1");
  if (updates < 0) throw ConfigError("reward config: updates must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("reward config: learning_rate must be > 0");
  if (log_every < 1) throw ConfigError("reward config: log_every must be >= 1");
  if (!(holdout_fraction >= 0 && holdout_fraction < 1))
    throw ConfigError("reward config: holdout_fraction must be in [0, 1)");
}

Eigen::VectorXd RewardModel::predict_normalized(const Eigen::MatrixXd& states) const {
  return net.forward(states).col(0);
}

Eigen::VectorXd RewardModel::predict_raw(const Eigen::MatrixXd& raw_states) const {
  return predict_normalized(normalize_rows(norm_stats, raw_states));
}

RankedStates ranked_states(const std::vector<Trajectory>& ranked_trajectories,
                           const NormStats* stats) {
  RankedStates out;
  for (const auto& t : ranked_trajectories) {
    out.ids.push_back(t.episode_id);
    Eigen::MatrixXd m = trajectory_states(t);
    out.states.push_back(stats ? normalize_rows(*stats, m) : std::move(m));
  }
  return out;
}

std::vector<SnippetPair> sample_snippet_pairs(const RankedStates& ranked, int snippet_length,
                                              int n_pairs, Rng& rng) {
  const std::size_t n = ranked.states.size();
  if (n < 2) throw PreconditionError("sample_snippet_pairs: need at least two ranked trajectories");
  if (snippet_length < 1) throw PreconditionError("sample_snippet_pairs: snippet length must be >= 1");
  for (std::size_t i = 0; i < n; ++i)
    if (ranked.states[i].rows() < snippet_length)
      throw PreconditionError("sample_snippet_pairs: trajectory " + std::to_string(ranked.ids[i]) +
                              " has " + std::to_string(ranked.states[i].rows()) +
                              " states, shorter than snippet length " +
                              std::to_string(snippet_length));
  std::vector<SnippetPair> pairs;
  pairs.reserve(static_cast<std::size_t>(std::max(n_pairs, 0)));
  for (int p = 0; p < n_pairs; ++p) {
    std::size_t a = rng.index(n);
    std::size_t b = rng.index(n - 1);
    if (b >= a) ++b;
    const std::size_t lo = std::min(a, b);
    const std::size_t hi = std::max(a, b);
    const auto window = [&](std::size_t idx) {
      const auto& m = ranked.states[idx];
      const auto starts = static_cast<std::size_t>(m.rows() - snippet_length + 1);
      const auto start = static_cast<Eigen::Index>(rng.index(starts));
      return Eigen::MatrixXd(m.middleRows(start, snippet_length));
    };
    SnippetPair pair;
    pair.low = window(lo);
    pair.high = window(hi);
    pair.low_id = ranked.ids[lo];
    pair.high_id = ranked.ids[hi];
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<SnippetPair> sample_snippet_pairs(const RankedSet& ranked, const OfflineDataset& dataset,
                                              const RewardTrainConfig& config, Rng& rng) {
  return sample_snippet_pairs(ranked_states(ranked_trajectories(ranked, dataset)),
                              config.snippet_length, config.pairs_per_update, rng);
}

double trex_pair_loss(double sum_low, double sum_high) {
  const double x = sum_low - sum_high;
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

TrexLoss trex_loss(const nn::Mlp& net, std::span<const SnippetPair> pairs) {
  if (pairs.empty()) throw PreconditionError("trex_loss: no pairs");
  Eigen::Index rows = 0;
  for (const auto& p : pairs) rows += p.low.rows() + p.high.rows();
  const Eigen::Index width = pairs.front().low.cols();
  Eigen::MatrixXd batch(rows, width);
  Eigen::Index r = 0;
  for (const auto& p : pairs) {
    if (p.low.cols() != width || p.high.cols() != width)
      throw ShapeError("trex_loss: inconsistent state widths");
    batch.middleRows(r, p.low.rows()) = p.low;
    r += p.low.rows();
    batch.middleRows(r, p.high.rows()) = p.high;
    r += p.high.rows();
  }
  nn::Tape tape;
  const Eigen::MatrixXd out = net.forward(batch, tape);
  if (!out.allFinite()) throw NumericError("trex_loss: non-finite reward prediction");

  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  Eigen::MatrixXd upstream(rows, 1);
  TrexLoss result;
  r = 0;
  for (const auto& p : pairs) {
    const double sum_low = out.middleRows(r, p.low.rows()).sum();
    const double sum_high = out.middleRows(r + p.low.rows(), p.high.rows()).sum();
    result.loss += trex_pair_loss(sum_low, sum_high) * inv_n;
    // d/d(sum_low) softplus(low - high) = sigmoid(low - high); the high side is its negation.
    const double g = sigmoid(sum_low - sum_high) * inv_n;
    upstream.middleRows(r, p.low.rows()).setConstant(g);
    r += p.low.rows();
    upstream.middleRows(r, p.high.rows()).setConstant(-g);
    r += p.high.rows();
  }
  result.gradients = net.backward(tape, upstream, true);
  return result;
}

double pairwise_accuracy(std::span<const double> ranked_scores, std::size_t n_pairs, Rng& rng) {
  const std::size_t n = ranked_scores.size();
  if (n < 2) throw PreconditionError("pairwise_accuracy: need at least two holdout trajectories");
  if (n_pairs == 0) throw PreconditionError("pairwise_accuracy: n_pairs must be positive");
  std::size_t correct = 0;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    std::size_t a = rng.index(n);
    std::size_t b = rng.index(n - 1);
    if (b >= a) ++b;
    const std::size_t lo = std::min(a, b);
    const std::size_t hi = std::max(a, b);
    if (ranked_scores[hi] > ranked_scores[lo]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n_pairs);
}

double pairwise_accuracy(const RewardModel& model, const std::vector<Trajectory>& ranked_holdout,
                         std::size_t n_pairs, Rng& rng) {
  if (ranked_holdout.size() < 2)
    throw PreconditionError("pairwise_accuracy: need at least two holdout trajectories");
  std::vector<double> scores;
  scores.reserve(ranked_holdout.size());
  for (const auto& t : ranked_holdout) scores.push_back(model.predict_raw(trajectory_states(t)).sum());
  return pairwise_accuracy(scores, n_pairs, rng);
}

std::string RewardTrainingLog::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "update,loss,holdout_accuracy\n";
  for (const auto& row : rows) {
    out << row.update << ',' << row.loss << ',';
    if (std::isnan(row.holdout_accuracy))
      out << "";
    else
      out << row.holdout_accuracy;
    out << '\n';
  }
  return out.str();
}

RewardTrainResult train_reward(const RankedSet& ranked, const OfflineDataset& dataset,
                               const RewardTrainConfig& config) {
  config.validate();
  RewardTrainResult result;
  RewardModel& model = result.model;
  model.env_name = dataset.env_name;
  model.config = config;

  const bool pre_normalized = dataset.norm_stats.has_value();
  model.norm_stats = pre_normalized ? *dataset.norm_stats : compute_norm_stats(dataset);
  const auto trajectories = ranked_trajectories(ranked, dataset);
  RankedStates all = ranked_states(trajectories, pre_normalized ? nullptr : &model.norm_stats);
  if (all.states.size() < 2)
    throw PreconditionError("train_reward: need at least two ranked trajectories");

  Rng rng(config.seed, 0x72657761ULL);

  // Held-out split keeps the ranking order inside both parts.
  const std::size_t n = all.states.size();
  std::size_t n_holdout = 0;
  if (config.holdout_fraction > 0 && n >= 4) {
    n_holdout = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::llround(config.holdout_fraction * static_cast<double>(n))));
    n_holdout = std::min(n_holdout, n - 2);
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng = rng.split(1);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[split_rng.index(i)]);
  std::vector<bool> is_holdout(n, false);
  for (std::size_t i = 0; i < n_holdout; ++i) is_holdout[perm[i]] = true;

  RankedStates train;
  RankedStates holdout;
  for (std::size_t i = 0; i < n; ++i) {
    RankedStates& dst = is_holdout[i] ? holdout : train;
    dst.ids.push_back(all.ids[i]);
    dst.states.push_back(std::move(all.states[i]));
  }
  result.log.holdout_ids = holdout.ids;

  const int d = static_cast<int>(model.norm_stats.mean.size());
  std::vector<int> sizes{d};
  sizes.insert(sizes.end(), config.hidden_sizes.begin(), config.hidden_sizes.end());
  sizes.push_back(1);
  Rng init_rng = rng.split(2);
  model.net = nn::Mlp::init(sizes, nn::Activation::Relu, nn::Activation::Identity, init_rng);
  model.net.layers().back().weight *= kOutputInitScale;
  nn::AdamState adam =
      nn::AdamState::for_network(model.net, nn::AdamConfig{config.learning_rate});

  Rng sample_rng = rng.split(3);
  const auto holdout_accuracy = [&](int update) {
    if (holdout.states.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> scores;
    for (const auto& m : holdout.states) scores.push_back(model.predict_normalized(m).sum());
    Rng eval_rng = rng.split(1000 + static_cast<std::uint64_t>(update));
    return pairwise_accuracy(scores, static_cast<std::size_t>(config.holdout_pairs), eval_rng);
  };

  for (int u = 0; u < config.updates; ++u) {
    const auto pairs =
        sample_snippet_pairs(train, config.snippet_length, config.pairs_per_update, sample_rng);
    TrexLoss step = trex_loss(model.net, pairs);
    if (!std::isfinite(step.loss)) throw DivergenceError("train_reward: non-finite loss");
    if (u % config.log_every == 0) result.log.rows.push_back({u, step.loss, holdout_accuracy(u)});
    nn::adam_step(model.net, step.gradients, adam);
  }
  // Final row reflects the trained parameters.
  if (config.updates > 0) {
    const auto pairs =
        sample_snippet_pairs(train, config.snippet_length, config.pairs_per_update, sample_rng);
    result.log.rows.push_back(
        {config.updates, trex_loss(model.net, pairs).loss, holdout_accuracy(config.updates)});
  }
  return result;
}

OfflineDataset label_dataset(OfflineDataset dataset, const RewardModel& model, bool overwrite) {
  if (dataset.labeled && !overwrite)
    throw PreconditionError("label_dataset: dataset is already labeled; pass overwrite to relabel");
  if (dataset.transitions.empty()) return dataset;
  const auto d = static_cast<std::size_t>(model.net.input_dim());
  if (dataset.transitions.front().state.size() != d)
    throw ShapeError("label_dataset: dataset state dim " +
                     std::to_string(dataset.transitions.front().state.size()) +
                     " does not match reward model input " + std::to_string(d));
  if (dataset.norm_stats) {
    const auto& a = *dataset.norm_stats;
    const auto& b = model.norm_stats;
    for (std::size_t i = 0; i < d; ++i)
      if (std::abs(a.mean[i] - b.mean[i]) > 1e-12 || std::abs(a.std[i] - b.std[i]) > 1e-12)
        throw PreconditionError(
            "label_dataset: dataset was normalized with statistics different from the model's");
  }
  const DatasetMatrices m = to_matrices(dataset);
  const Eigen::VectorXd r =
      dataset.norm_stats ? model.predict_normalized(m.states) : model.predict_raw(m.states);
  for (std::size_t i = 0; i < dataset.transitions.size(); ++i)
    dataset.transitions[i].reward = r(static_cast<Eigen::Index>(i));
  dataset.labeled = true;
  return dataset;
}

nlohmann::json to_json(const NormStats& stats) {
  return {{"mean", stats.mean}, {"std", stats.std}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
  return NormStats{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

nlohmann::json to_json(const RewardModel& model) {
  nlohmann::json j = nn::to_json(model.net);
  j["kind"] = "reward_model";
  j["reward_model_version"] = kRewardModelVersion;
  j["norm_stats"] = to_json(model.norm_stats);
  j["env_name"] = model.env_name;
  j["config"] = to_json(model.config);
  return j;
}

RewardModel reward_model_from_json(const nlohmann::json& j) {
  try {
    if (j.value("kind", std::string()) != "reward_model")
      throw ParseError("not a reward model checkpoint");
    RewardModel m;
    m.net = nn::mlp_from_json(j);
    m.norm_stats = norm_stats_from_json(j.at("norm_stats"));
    m.env_name = j.at("env_name").get<std::string>();
    m.config = reward_config_from_json(j.at("config"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("reward model checkpoint: ") + e.what());
  }
}

void save_reward_model(const RewardModel& model, const std::filesystem::path& path) {
  write_file(path, to_json(model).dump(1) + "\n");
}

RewardModel load_reward_model(const std::filesystem::path& path) {
  try {
    return reward_model_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace trofi
