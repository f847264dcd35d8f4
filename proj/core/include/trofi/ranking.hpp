#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trofi/dataset.hpp"

namespace trofi {

enum class RankingSource { Oracle, Human, Perturbed };

std::string to_string(RankingSource source);
RankingSource parse_ranking_source(const std::string& name);

/// Total order over a subset of dataset trajectories, worst first.
struct RankedSet {
  std::vector<std::int64_t> trajectory_ids;
  RankingSource source = RankingSource::Oracle;
  std::string env_name;
  std::string dataset_hash;

  std::size_t size() const noexcept { return trajectory_ids.size(); }
  friend bool operator==(const RankedSet&, const RankedSet&) = default;
};

/// Uniform sample without replacement of ceil(fraction * count) trajectories,
/// returned in episode-id order. Throws PreconditionError when fewer than two
/// would be selected or fraction is outside (0, 1].
std::vector<Trajectory> subsample_trajectories(const std::vector<Trajectory>& trajectories,
                                               double fraction, std::uint64_t seed);
std::vector<Trajectory> subsample_trajectories(const OfflineDataset& dataset, double fraction,
                                               std::uint64_t seed);

/// Ascending ground-truth return, ties broken by lower episode id first.
RankedSet oracle_rank(const std::vector<Trajectory>& trajectories, std::string env_name = {},
                      std::string dataset_hash = {});

/// Swaps floor(swap_fraction * n / 2) disjoint random position pairs.
RankedSet perturb_ranking(const RankedSet& ranked, double swap_fraction, std::uint64_t seed);

/// Checks ids against `dataset`: no duplicates, every id present, hash match.
/// Throws ValidationError / StaleRankingError naming the offender.
void validate_ranking(const RankedSet& ranked, const OfflineDataset& dataset);

std::string ranking_to_json(const RankedSet& ranked);
RankedSet ranking_from_json(const std::string& text);
void save_ranking(const RankedSet& ranked, const std::filesystem::path& path);
RankedSet load_ranking(const std::filesystem::path& path);

/// Reads a ranking produced by the ranking UI (or by hand) and validates it
/// against `dataset`. The result is tagged as a human ranking.
RankedSet import_human_ranking(const std::filesystem::path& path, const OfflineDataset& dataset);

/// The trajectories of `dataset` named by `ranked`, in ranking order.
std::vector<Trajectory> ranked_trajectories(const RankedSet& ranked, const OfflineDataset& dataset);

}  // namespace trofi
