#include <gtest/gtest.h>

#include <fstream>

#include <trofi/checksum.hpp>
#include <trofi/error.hpp>
#include <trofi/pipeline.hpp>

#include "support/oracles.hpp"

namespace trofi::pipeline {
namespace {

RewardTrainConfig tiny_reward() {
  RewardTrainConfig c;
  c.snippet_length = 20;
  c.updates = 30;
  c.log_every = 10;
  c.hidden_sizes = {8};
  c.pairs_per_update = 16;
  return c;
}

PolicyConfig tiny_policy() {
  PolicyConfig c;
  c.updates = 30;
  c.batch_size = 32;
  c.hidden_sizes = {16};
  c.log_every = 10;
  return c;
}

void run_chain(const fs::path& dir, Method method = Method::Trofi) {
  gen_data(dir, {.env = "lineworld", .tier = "medium", .n_transitions = 1000, .seed = 3});
  rank(dir, {.fraction = 0.6, .seed = 3});
  train_reward(dir, tiny_reward());
  label(dir);
  train_policy(dir, {.method = method, .config = tiny_policy()});
  evaluate(dir, method, 3, 3);
}

template <typename F>
std::string dependency_of(F&& f) {
  try {
    f();
  } catch (const DependencyError& e) {
    return e.required_command();
  }
  return "";
}

TEST(Pipeline, MethodNames) {
  for (auto m : {Method::Trofi, Method::GroundTruth, Method::Bc, Method::Constant, Method::Random,
                 Method::Transformed})
    EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_EQ(display_name(Method::Constant), "CONS");
  EXPECT_EQ(agent_file(Method::GroundTruth), "agent.gt.json");
  EXPECT_THROW(parse_method("oracle"), ConfigError);
}

TEST(Pipeline, ChainWritesArtifactsAndManifest) {
  testing::TempDir tmp("chain");
  const fs::path dir = tmp.path();
  run_chain(dir);
  for (const char* f : {files::kDataset, files::kGroundTruth, files::kRanking, files::kRewardModel,
                        files::kRewardLog, files::kLabeled, "agent.trofi.json", "policy_log.trofi.csv",
                        "eval.trofi.json", files::kManifest})
    EXPECT_TRUE(fs::exists(dir / f)) << f;

  const auto manifest = nlohmann::json::parse(read_file(dir / files::kManifest));
  EXPECT_FALSE(manifest["protocol"].get<std::string>().empty());
  const auto& artifacts = manifest["artifacts"];
  EXPECT_TRUE(artifacts.contains(files::kLabeled));
  for (const auto& [file, digest] : artifacts.items())
    EXPECT_EQ(digest.get<std::string>(), sha256_file(dir / file)) << file;
  for (const char* stage : {"gen-data", "rank", "train-reward", "train-policy.trofi"})
    EXPECT_TRUE(manifest["config"].contains(stage)) << stage;

  // the stripped dataset carries no rewards
  const auto stripped = load_dataset(dir / files::kDataset);
  EXPECT_FALSE(stripped.labeled);
  const auto eval = nlohmann::json::parse(read_file(dir / "eval.trofi.json"));
  EXPECT_EQ(eval["per_episode_returns"].size(), 3u);
  EXPECT_EQ(eval["method"], "trofi");
}

TEST(Pipeline, MissingInputsNameTheCommand) {
  testing::TempDir tmp("deps");
  const fs::path dir = tmp.path();
  EXPECT_EQ(dependency_of([&] { rank(dir, {}); }), "gen-data");
  gen_data(dir, {.n_transitions = 500});
  EXPECT_EQ(dependency_of([&] { train_reward(dir, tiny_reward()); }), "rank");
  EXPECT_EQ(dependency_of([&] { label(dir); }), "train-reward");
  EXPECT_EQ(dependency_of([&] { train_policy(dir, {.method = Method::Trofi, .config = tiny_policy()}); }),
            "label");
  EXPECT_EQ(dependency_of([&] { evaluate(dir, Method::GroundTruth, 2, 0); }), "train-policy");
}

TEST(Pipeline, StagesAreByteIdentical) {
  testing::TempDir a("same_a"), b("same_b");
  run_chain(a.path());
  run_chain(b.path());
  for (const char* f : {files::kDataset, files::kGroundTruth, files::kRanking, files::kRewardModel,
                        files::kRewardLog, files::kLabeled, "agent.trofi.json", "policy_log.trofi.csv",
                        "eval.trofi.json"})
    EXPECT_EQ(read_file(a.path() / f), read_file(b.path() / f)) << f;
}

TEST(Pipeline, ConstantRewardIsZeroEverywhere) {
  testing::TempDir tmp("cons");
  const fs::path dir = tmp.path();
  gen_data(dir, {.n_transitions = 500});
  train_policy(dir, {.method = Method::Constant, .config = tiny_policy()});
  const auto d = load_dataset(dir / "dataset.constant.jsonl");
  ASSERT_GT(d.size(), 0u);
  for (const auto& t : d.transitions) EXPECT_EQ(*t.reward, 0.0);
}

TEST(Pipeline, PerturbedRankingDiffersFromOracle) {
  testing::TempDir tmp("perturb");
  const fs::path dir = tmp.path();
  gen_data(dir, {.n_transitions = 5000});
  const auto oracle = rank(dir, {.fraction = 1.0, .seed = 1});
  const auto perturbed = rank(dir, {.fraction = 1.0, .source = RankingSource::Perturbed, .perturb = 0.2, .seed = 1});
  EXPECT_EQ(perturbed.source, RankingSource::Perturbed);
  int moved = 0;
  for (std::size_t i = 0; i < oracle.size(); ++i) moved += oracle.trajectory_ids[i] != perturbed.trajectory_ids[i];
  EXPECT_EQ(moved, 10);  // 5 swaps
  EXPECT_THROW(rank(dir, {.source = RankingSource::Perturbed}), ConfigError);
}

TEST(Pipeline, HumanRankingIsImported) {
  testing::TempDir tmp("human");
  const fs::path dir = tmp.path();
  gen_data(dir, {.n_transitions = 500});
  const auto d = load_dataset(dir / files::kDataset);
  RankedSet r;
  r.env_name = d.env_name;
  r.dataset_hash = dataset_hash(d);
  r.trajectory_ids = {4, 0, 2};
  save_ranking(r, tmp.path() / "mine.json");
  const auto out = rank(dir, {.source = RankingSource::Human, .human_ranking = tmp.path() / "mine.json"});
  EXPECT_EQ(out.trajectory_ids, r.trajectory_ids);
  EXPECT_EQ(load_ranking(dir / files::kRanking).source, RankingSource::Human);

  r.dataset_hash = std::string(64, 'f');
  save_ranking(r, tmp.path() / "stale.json");
  EXPECT_THROW(rank(dir, {.source = RankingSource::Human, .human_ranking = tmp.path() / "stale.json"}),
               StaleRankingError);
}

TEST(Pipeline, AnalyzeWritesReport) {
  testing::TempDir tmp("analyze");
  const fs::path dir = tmp.path();
  run_chain(dir);
  AnalyzeOptions opt;
  opt.config.eval_episodes = 2;
  opt.config.n_states = 50;
  opt.expert_transitions = 500;
  const auto report = analyze(dir, opt);
  EXPECT_GE(report.goodness_on_expert, 0.0);
  EXPECT_LE(report.goodness_on_expert, 1.0);
  for (const char* f : {"report.trofi.json", "report.trofi.md", "value_series.trofi.csv",
                        files::kExpertGroundTruth})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  opt.method = Method::Bc;
  EXPECT_THROW(analyze(dir, opt), ConfigError);
}

TEST(Pipeline, ResultsTable) {
  testing::TempDir tmp("results");
  ExperimentConfig c;
  c.data.n_transitions = 1000;
  c.reward = tiny_reward();
  c.policy = tiny_policy();
  c.methods = {Method::Trofi, Method::Constant, Method::Bc};
  c.n_seeds = 2;
  c.eval_episodes = 2;
  c.analyze = true;
  c.analysis.n_states = 50;
  c.output_dir = tmp.path();
  const auto result = run_pipeline(c);
  ASSERT_EQ(result.methods.size(), 3u);
  for (const auto& s : result.methods) {
    EXPECT_EQ(s.completed, 2u);
    ASSERT_EQ(s.per_seed.size(), 2u);
    const double a = *s.per_seed[0], b = *s.per_seed[1];
    EXPECT_NEAR(s.mean, (a + b) / 2, 1e-12);
    EXPECT_NEAR(s.std, std::abs(a - b) / std::sqrt(2.0), 1e-12);
  }
  const std::string md = read_file(tmp.path() / files::kResultsMd);
  EXPECT_EQ(md.substr(0, md.find('\n')), "| Method | lineworld-medium |");
  EXPECT_NE(md.find("| TROFI | "), std::string::npos);
  EXPECT_NE(md.find("| CONS | "), std::string::npos);
  EXPECT_NE(md.find(" ± "), std::string::npos);
  EXPECT_TRUE(fs::exists(tmp.path() / "seed_0" / "eval.bc.json"));
  EXPECT_TRUE(fs::exists(tmp.path() / "seed_1" / files::kManifest));
  const auto summary = nlohmann::json::parse(read_file(tmp.path() / files::kResultsJson));
  EXPECT_EQ(summary["methods"].size(), 3u);
  const std::string analysis = read_file(tmp.path() / files::kAnalysisMd);
  EXPECT_NE(analysis.find("## seed 1"), std::string::npos);
  EXPECT_NE(analysis.find("CONS"), std::string::npos);
  EXPECT_EQ(analysis.find("| BC"), std::string::npos);
}

TEST(Pipeline, FailedMethodsAreMarked) {
  PipelineResult r;
  MethodSummary ok;
  ok.method = Method::GroundTruth;
  ok.per_seed = {50.0, std::nullopt};
  ok.completed = 1;
  ok.mean = 50.0;
  MethodSummary bad;
  bad.method = Method::Random;
  bad.per_seed = {std::nullopt, std::nullopt};
  r.methods = {ok, bad};
  const std::string md = r.results_markdown("lineworld-medium");
  EXPECT_NE(md.find("| GT | 50.0 ± 0.0 (1/2 seeds, FAILED others) |"), std::string::npos);
  EXPECT_NE(md.find("| Random | FAILED |"), std::string::npos);
}

TEST(Pipeline, ConfigValidation) {
  ExperimentConfig c;
  c.n_seeds = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.ranked_fraction = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.base_seed = 40;
  EXPECT_EQ(c.seed_for(2), 42u);
}

}  // namespace
}  // namespace trofi::pipeline
