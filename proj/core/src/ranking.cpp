#include "trofi/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "trofi/checksum.hpp"
#include "trofi/error.hpp"

namespace trofi {

namespace {

constexpr int kRankingVersion = 1;

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

}  // namespace

std::string to_string(RankingSource source) {
  switch (source) {
    case RankingSource::Oracle: return "oracle";
    case RankingSource::Human: return "human";
    case RankingSource::Perturbed: return "perturbed";
  }
  return "unknown";
}

RankingSource parse_ranking_source(const std::string& name) {
  if (name == "oracle") return RankingSource::Oracle;
  if (name == "human") return RankingSource::Human;
  if (name == "perturbed") return RankingSource::Perturbed;
  throw ConfigError("unknown ranking source '" + name + "' (valid: oracle, human, perturbed)");
}

std::vector<Trajectory> subsample_trajectories(const std::vector<Trajectory>& trajectories,
                                               double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw PreconditionError("subsample_trajectories: fraction must be in (0, 1]");
  const std::size_t n = trajectories.size();
  // Guard against 0.05 * 200 landing a hair above 10.
  const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  if (n < 2 || count < 2)
    throw PreconditionError("subsample_trajectories: selects " + std::to_string(count) + " of " +
                            std::to_string(n) + " trajectories; at least 2 are required");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0x73756273ULL);
  shuffle(order, rng);
  order.resize(count);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return trajectories[a].episode_id < trajectories[b].episode_id;
  });
  std::vector<Trajectory> out;
  out.reserve(count);
  for (std::size_t i : order) out.push_back(trajectories[i]);
  return out;
}

std::vector<Trajectory> subsample_trajectories(const OfflineDataset& dataset, double fraction,
                                               std::uint64_t seed) {
  return subsample_trajectories(split_trajectories(dataset), fraction, seed);
}

RankedSet oracle_rank(const std::vector<Trajectory>& trajectories, std::string env_name,
                      std::string dataset_hash) {
  std::vector<std::pair<double, std::int64_t>> keyed;
  keyed.reserve(trajectories.size());
  for (const auto& t : trajectories) {
    if (!t.episodic_return)
      throw PreconditionError("oracle_rank: trajectory " + std::to_string(t.episode_id) +
                              " has no ground-truth return");
    keyed.emplace_back(*t.episodic_return, t.episode_id);
  }
  std::sort(keyed.begin(), keyed.end());
  RankedSet r;
  r.source = RankingSource::Oracle;
  r.env_name = std::move(env_name);
  r.dataset_hash = std::move(dataset_hash);
  for (const auto& [ret, id] : keyed) r.trajectory_ids.push_back(id);
  return r;
}

RankedSet perturb_ranking(const RankedSet& ranked, double swap_fraction, std::uint64_t seed) {
  if (!(swap_fraction >= 0.0 && swap_fraction <= 1.0))
    throw PreconditionError("perturb_ranking: swap_fraction must be in [0, 1]");
  RankedSet out = ranked;
  out.source = RankingSource::Perturbed;
  const std::size_t n = ranked.size();
  const auto pairs =
      static_cast<std::size_t>(std::floor(swap_fraction * static_cast<double>(n) / 2.0 + 1e-9));
  if (pairs == 0) return out;
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  Rng rng(seed, 0x70657274ULL);
  shuffle(positions, rng);
  for (std::size_t p = 0; p < pairs; ++p)
    std::swap(out.trajectory_ids[positions[2 * p]], out.trajectory_ids[positions[2 * p + 1]]);
  return out;
}

void validate_ranking(const RankedSet& ranked, const OfflineDataset& dataset) {
  if (!ranked.env_name.empty() && ranked.env_name != dataset.env_name)
    throw StaleRankingError("ranking is for environment '" + ranked.env_name +
                                "', dataset is '" + dataset.env_name + "'",
                            ranked.env_name);
  const std::string hash = dataset_hash(dataset);
  if (ranked.dataset_hash != hash)
    throw StaleRankingError("stale ranking: dataset hash " + ranked.dataset_hash +
                                " does not match " + hash,
                            ranked.dataset_hash);
  std::set<std::int64_t> known;
  for (const auto& t : dataset.transitions) known.insert(t.episode_id);
  std::set<std::int64_t> seen;
  for (std::int64_t id : ranked.trajectory_ids) {
    if (!seen.insert(id).second)
      throw ValidationError("duplicate trajectory id " + std::to_string(id), std::to_string(id));
    if (!known.count(id))
      throw ValidationError("unknown trajectory id " + std::to_string(id), std::to_string(id));
  }
  if (ranked.size() < 2) throw ValidationError("ranking must contain at least two trajectories");
}

std::string ranking_to_json(const RankedSet& ranked) {
  nlohmann::json j{{"version", kRankingVersion},
                   {"env", ranked.env_name},
                   {"dataset_hash", ranked.dataset_hash},
                   {"source", to_string(ranked.source)},
                   {"order", ranked.trajectory_ids}};
  return j.dump(2) + "\n";
}

RankedSet ranking_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("version").get<int>() != kRankingVersion)
      throw ParseError("unsupported ranking version");
    RankedSet r;
    r.env_name = j.at("env").get<std::string>();
    r.dataset_hash = j.at("dataset_hash").get<std::string>();
    r.source = parse_ranking_source(j.value("source", std::string("human")));
    r.trajectory_ids = j.at("order").get<std::vector<std::int64_t>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ranking: ") + e.what());
  }
}

void save_ranking(const RankedSet& ranked, const std::filesystem::path& path) {
  write_file(path, ranking_to_json(ranked));
}

RankedSet load_ranking(const std::filesystem::path& path) {
  return ranking_from_json(read_file(path));
}

RankedSet import_human_ranking(const std::filesystem::path& path, const OfflineDataset& dataset) {
  RankedSet r = load_ranking(path);
  r.source = RankingSource::Human;
  validate_ranking(r, dataset);
  return r;
}

std::vector<Trajectory> ranked_trajectories(const RankedSet& ranked, const OfflineDataset& dataset) {
  std::map<std::int64_t, Trajectory> by_id;
  for (auto& t : split_trajectories(dataset)) by_id.emplace(t.episode_id, std::move(t));
  std::vector<Trajectory> out;
  out.reserve(ranked.size());
  for (std::int64_t id : ranked.trajectory_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw ValidationError("unknown trajectory id " + std::to_string(id), std::to_string(id));
    out.push_back(it->second);
  }
  return out;
}

}  // namespace trofi
