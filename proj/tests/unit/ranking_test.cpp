#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include <trofi/dataset.hpp>
#include <trofi/error.hpp>
#include <trofi/ranking.hpp>

#include "support/oracles.hpp"

namespace trofi {
namespace {

OfflineDataset ten_episodes() {
  // returns distinct, episode 0 lowest and 9 highest
  return testing::synthetic_dataset(10, 4, 2, 1, [](int e, int) { return (e % 5) + 0.25 * (e / 5); });
}

TEST(Ranking, SubsampleSizeAndOrder) {
  const auto d = ten_episodes();
  const auto half = subsample_trajectories(d, 0.5, 1);
  EXPECT_EQ(half.size(), 5u);
  for (std::size_t i = 1; i < half.size(); ++i) EXPECT_LT(half[i - 1].episode_id, half[i].episode_id);
  EXPECT_EQ(subsample_trajectories(d, 0.25, 1).size(), 3u);  // ceil(2.5)
  EXPECT_EQ(subsample_trajectories(d, 1.0, 1).size(), 10u);
  EXPECT_THROW(subsample_trajectories(d, 0.1, 1), PreconditionError);
  EXPECT_THROW(subsample_trajectories(d, 0.0, 1), PreconditionError);
  EXPECT_THROW(subsample_trajectories(d, 1.5, 1), PreconditionError);
}

TEST(Ranking, SubsampleIsSeeded) {
  const auto d = ten_episodes();
  auto ids = [](const std::vector<Trajectory>& ts) {
    std::vector<std::int64_t> out;
    for (const auto& t : ts) out.push_back(t.episode_id);
    return out;
  };
  EXPECT_EQ(ids(subsample_trajectories(d, 0.5, 7)), ids(subsample_trajectories(d, 0.5, 7)));
  std::set<std::vector<std::int64_t>> distinct;
  for (std::uint64_t s = 0; s < 20; ++s) distinct.insert(ids(subsample_trajectories(d, 0.5, s)));
  EXPECT_GT(distinct.size(), 5u);
}

TEST(Ranking, OracleRankIsAscendingReturn) {
  const auto trajs = split_trajectories(ten_episodes());
  const auto r = oracle_rank(trajs, "lineworld", "h");
  ASSERT_EQ(r.size(), 10u);
  for (std::size_t i = 1; i < r.size(); ++i)
    EXPECT_LE(*trajs[r.trajectory_ids[i - 1]].episodic_return,
              *trajs[r.trajectory_ids[i]].episodic_return);
  EXPECT_EQ(r.trajectory_ids.front(), 0);
  EXPECT_EQ(r.trajectory_ids.back(), 9);
  EXPECT_EQ(r.source, RankingSource::Oracle);
}

TEST(Ranking, OracleTiesBreakByEpisodeId) {
  const auto d = testing::synthetic_dataset(4, 2, 1, 1, [](int e, int) { return e % 2; });
  const auto r = oracle_rank(split_trajectories(d));
  EXPECT_EQ(r.trajectory_ids, (std::vector<std::int64_t>{0, 2, 1, 3}));
}

TEST(Ranking, OracleRankNeedsRewards) {
  const auto d = strip_rewards(ten_episodes());
  EXPECT_ANY_THROW(oracle_rank(split_trajectories(d)));
}

TEST(Ranking, PerturbSwapsDisjointPairs) {
  RankedSet r;
  for (int i = 0; i < 100; ++i) r.trajectory_ids.push_back(i);
  for (double s : {0.0, 0.2, 0.5, 1.0}) {
    const auto p = perturb_ranking(r, s, 3);
    EXPECT_EQ(p.source, RankingSource::Perturbed);
    auto sorted = p.trajectory_ids;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, r.trajectory_ids);
    int moved = 0;
    for (int i = 0; i < 100; ++i) {
      if (p.trajectory_ids[i] == i) continue;
      ++moved;
      // a swap: the element at i's partner position is i
      EXPECT_EQ(p.trajectory_ids[p.trajectory_ids[i]], i);
    }
    EXPECT_EQ(moved, 2 * static_cast<int>(s * 100 / 2)) << s;
  }
  EXPECT_EQ(perturb_ranking(r, 0.2, 3), perturb_ranking(r, 0.2, 3));
  EXPECT_ANY_THROW(perturb_ranking(r, 1.5, 3));
}

TEST(Ranking, ValidateRejectsDuplicatesUnknownAndStale) {
  const auto d = ten_episodes();
  RankedSet r;
  r.env_name = "lineworld";
  r.dataset_hash = dataset_hash(d);
  r.trajectory_ids = {1, 2, 3};
  EXPECT_NO_THROW(validate_ranking(r, d));

  auto dup = r;
  dup.trajectory_ids = {1, 2, 1};
  try {
    validate_ranking(dup, d);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.offender(), "1");
  }

  auto unknown = r;
  unknown.trajectory_ids = {1, 42};
  try {
    validate_ranking(unknown, d);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.offender(), "42");
  }

  auto stale = r;
  stale.dataset_hash = std::string(64, '0');
  EXPECT_THROW(validate_ranking(stale, d), StaleRankingError);
}

TEST(Ranking, JsonRoundTripAndImport) {
  const auto d = ten_episodes();
  auto r = oracle_rank(subsample_trajectories(d, 0.5, 2), d.env_name, dataset_hash(d));
  EXPECT_EQ(ranking_from_json(ranking_to_json(r)), r);

  testing::TempDir tmp("ranking");
  save_ranking(r, tmp.path() / "ranking.json");
  EXPECT_EQ(load_ranking(tmp.path() / "ranking.json"), r);
  const auto imported = import_human_ranking(tmp.path() / "ranking.json", d);
  EXPECT_EQ(imported.source, RankingSource::Human);
  EXPECT_EQ(imported.trajectory_ids, r.trajectory_ids);

  EXPECT_THROW(ranking_from_json("{\"version\": 1}"), ParseError);
  EXPECT_THROW(ranking_from_json("not json"), ParseError);
}

TEST(Ranking, RankedTrajectoriesFollowOrder) {
  const auto d = ten_episodes();
  RankedSet r;
  r.trajectory_ids = {7, 3, 5};
  const auto ts = ranked_trajectories(r, d);
  ASSERT_EQ(ts.size(), 3u);
  EXPECT_EQ(ts[0].episode_id, 7);
  EXPECT_EQ(ts[2].episode_id, 5);
}

TEST(Ranking, SourceNames) {
  for (auto s : {RankingSource::Oracle, RankingSource::Human, RankingSource::Perturbed})
    EXPECT_EQ(parse_ranking_source(to_string(s)), s);
  EXPECT_THROW(parse_ranking_source("crowd"), ConfigError);
}

}  // namespace
}  // namespace trofi
