#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>
#include <trofi/checksum.hpp>
#include <trofi/dataset.hpp>
#include <trofi/envs.hpp>
#include <trofi/error.hpp>

#include "support/oracles.hpp"

namespace trofi {
namespace {

double mean_return(const OfflineDataset& d) {
  const auto trajs = split_trajectories(d);
  double s = 0;
  for (const auto& t : trajs) s += *t.episodic_return;
  return s / static_cast<double>(trajs.size());
}

TEST(Dataset, ExpertTierHasWholeEpisodes) {
  const auto env = make_env("lineworld");
  const auto d = generate_dataset(*env, Tier::Expert, 10000, 0);
  EXPECT_EQ(d.size(), 10000u);
  EXPECT_TRUE(d.labeled);
  EXPECT_EQ(split_trajectories(d).size(), 100u);
  EXPECT_NO_THROW(validate_dataset(d));
}

TEST(Dataset, PartialEpisodesAreDropped) {
  const auto env = make_env("lineworld");
  EXPECT_EQ(generate_dataset(*env, Tier::Medium, 1050, 0).size(), 1000u);
  EXPECT_THROW(generate_dataset(*env, Tier::Medium, 99, 0), PreconditionError);
}

TEST(Dataset, TierOrdering) {
  for (const auto& name : env_names()) {
    const auto env = make_env(name);
    const std::size_t n = 50u * env->spec().max_episode_steps;
    const double expert = mean_return(generate_dataset(*env, Tier::Expert, n, 1));
    const double medium = mean_return(generate_dataset(*env, Tier::Medium, n, 1));
    const double replay = mean_return(generate_dataset(*env, Tier::MediumReplay, n, 1));
    EXPECT_GT(expert, medium) << name;
    EXPECT_GT(medium, replay) << name;
  }
}

TEST(Dataset, MediumExpertConcatenatesHalves) {
  const auto env = make_env("lineworld");
  const auto d = generate_dataset(*env, Tier::MediumExpert, 2000, 3);
  EXPECT_EQ(split_trajectories(d).size(), 20u);
  std::set<std::int64_t> ids;
  for (const auto& t : d.transitions) ids.insert(t.episode_id);
  EXPECT_EQ(ids.size(), 20u);
}

TEST(Dataset, GenerationIsDeterministic) {
  const auto env = make_env("pointmass2d");
  EXPECT_EQ(generate_dataset(*env, Tier::MediumReplay, 1000, 9),
            generate_dataset(*env, Tier::MediumReplay, 1000, 9));
}

TEST(Dataset, UnknownTierNamesValidTiers) {
  try {
    parse_tier("bogus");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("medium-replay"), std::string::npos);
    EXPECT_NE(msg.find("expert"), std::string::npos);
  }
  EXPECT_EQ(parse_tier("medium-expert"), Tier::MediumExpert);
}

TEST(Dataset, StripAndRelabelRoundTrip) {
  const auto env = make_env("pointmass2d");
  const auto gt = generate_dataset(*env, Tier::Medium, 1000, 0);
  const auto stripped = strip_rewards(gt);
  EXPECT_FALSE(stripped.labeled);
  EXPECT_EQ(stripped.size(), gt.size());
  for (const auto& t : stripped.transitions) EXPECT_FALSE(t.reward.has_value());
  EXPECT_EQ(label_ground_truth(stripped, *env), gt);
  EXPECT_EQ(dataset_hash(stripped), dataset_hash(gt));
}

TEST(Dataset, NormStatsTwoPointHandCase) {
  OfflineDataset d;
  d.env_name = "lineworld";
  for (int i = 0; i < 2; ++i) {
    Transition t;
    t.episode_id = 0;
    t.step_index = i;
    t.state = {2.0 * i, 2.0 * i};
    t.next_state = {0.0, 0.0};
    t.action = {0.0};
    d.transitions.push_back(t);
  }
  const NormStats s = compute_norm_stats(d);
  EXPECT_DOUBLE_EQ(s.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(s.std[0], 1.0);
  const auto n = apply_normalization(d, s);
  EXPECT_DOUBLE_EQ(n.transitions[0].state[0], -1.0);
  EXPECT_DOUBLE_EQ(n.transitions[1].state[0], 1.0);
  EXPECT_DOUBLE_EQ(n.transitions[0].next_state[0], -1.0);
  EXPECT_THROW(apply_normalization(n, s), PreconditionError);
}

TEST(Dataset, ConstantColumnIsFloored) {
  auto d = testing::synthetic_dataset(2, 5, 2, 1, [](int, int) { return 0.0; });
  for (auto& t : d.transitions) t.state[1] = 4.0;
  const NormStats s = compute_norm_stats(d);
  EXPECT_EQ(s.std[1], NormStats::kStdFloor);
  for (const auto& t : apply_normalization(d, s).transitions) EXPECT_EQ(t.state[1], 0.0);
}

TEST(Dataset, NormalizedMomentsAndIdempotence) {
  const auto env = make_env("pointmass2d");
  const auto d = generate_dataset(*env, Tier::Medium, 2000, 4);
  const auto n = apply_normalization(d, compute_norm_stats(d));
  OfflineDataset copy = n;
  copy.norm_stats.reset();
  const NormStats again = compute_norm_stats(copy);
  for (std::size_t i = 0; i < again.mean.size(); ++i) {
    EXPECT_NEAR(again.mean[i], 0.0, 1e-6);
    EXPECT_NEAR(again.std[i], 1.0, 1e-6);
  }
}

TEST(Dataset, EmptyDatasetErrors) {
  OfflineDataset d;
  EXPECT_THROW(compute_norm_stats(d), EmptyDatasetError);
  EXPECT_THROW(validate_dataset(d), EmptyDatasetError);
}

TEST(Dataset, SplitTrajectories) {
  const auto d = testing::synthetic_dataset(3, 4, 2, 1, [](int e, int t) { return e + 0.5 * t; });
  const auto trajs = split_trajectories(d);
  ASSERT_EQ(trajs.size(), 3u);
  std::size_t total = 0;
  for (const auto& t : trajs) {
    total += t.size();
    double sum = 0;
    for (const auto& tr : t.transitions) sum += *tr.reward;
    EXPECT_DOUBLE_EQ(*t.episodic_return, sum);
  }
  EXPECT_EQ(total, d.size());
  EXPECT_DOUBLE_EQ(*trajs[2].episodic_return, 2 * 4 + 0.5 * 6);
}

TEST(Dataset, SplitOrdersSteps) {
  auto d = testing::synthetic_dataset(1, 4, 1, 1, [](int, int t) { return t; });
  std::swap(d.transitions[0], d.transitions[3]);
  const auto trajs = split_trajectories(d);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(trajs[0].transitions[i].step_index, i);
}

TEST(Dataset, MissingStepIsCorrupt) {
  auto d = testing::synthetic_dataset(1, 4, 1, 1, [](int, int) { return 0.0; });
  d.transitions.erase(d.transitions.begin() + 2);
  EXPECT_THROW(split_trajectories(d), CorruptDatasetError);
}

TEST(Dataset, JsonlRoundTripIsLossless) {
  const auto env = make_env("pointmass2d");
  auto d = generate_dataset(*env, Tier::Expert, 400, 2);
  EXPECT_EQ(dataset_from_jsonl(dataset_to_jsonl(d)), d);
  const auto n = apply_normalization(strip_rewards(d), compute_norm_stats(d));
  EXPECT_EQ(dataset_from_jsonl(dataset_to_jsonl(n)), n);

  testing::TempDir tmp("dataset");
  save_dataset(d, tmp.path() / "d.jsonl");
  EXPECT_EQ(load_dataset(tmp.path() / "d.jsonl"), d);
}

TEST(Dataset, HeaderCarriesMetadata) {
  const auto env = make_env("lineworld");
  const auto text = dataset_to_jsonl(generate_dataset(*env, Tier::Medium, 100, 0));
  const auto header = nlohmann::json::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(header["env"], "lineworld");
  EXPECT_EQ(header["tier"], "medium");
  EXPECT_EQ(header["labeled"], true);
  EXPECT_EQ(header["version"], 1);
}

TEST(Dataset, TruncatedFileNamesTheLine) {
  const auto env = make_env("lineworld");
  std::string text = dataset_to_jsonl(generate_dataset(*env, Tier::Medium, 100, 0));
  // cut the 4th line in half
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) pos = text.find('\n', pos) + 1;
  text = text.substr(0, pos + 20);
  try {
    dataset_from_jsonl(text);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
  }
}

TEST(Dataset, HeaderOnlyFileIsEmpty) {
  const auto env = make_env("lineworld");
  const std::string text = dataset_to_jsonl(generate_dataset(*env, Tier::Medium, 100, 0));
  EXPECT_THROW(dataset_from_jsonl(text.substr(0, text.find('\n') + 1)), EmptyDatasetError);
}

TEST(Dataset, HashIgnoresRewardsButNotStates) {
  auto d = testing::synthetic_dataset(2, 3, 2, 1, [](int, int) { return 1.0; });
  const std::string h = dataset_hash(d);
  auto relabeled = d;
  for (auto& t : relabeled.transitions) t.reward = 7.0;
  EXPECT_EQ(dataset_hash(relabeled), h);
  auto moved = d;
  moved.transitions[0].state[0] += 1e-12;
  EXPECT_NE(dataset_hash(moved), h);
  EXPECT_EQ(h.size(), 64u);
}

TEST(Dataset, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Dataset, Matrices) {
  const auto d = testing::synthetic_dataset(2, 3, 2, 1, [](int e, int t) { return e * 10 + t; });
  const auto m = to_matrices(d);
  EXPECT_EQ(m.states.rows(), 6);
  EXPECT_EQ(m.states.cols(), 2);
  EXPECT_EQ(m.actions.cols(), 1);
  EXPECT_EQ(m.rewards(4), 11.0);
  EXPECT_EQ(m.states(5, 1), d.transitions[5].state[1]);
}

}  // namespace
}  // namespace trofi
