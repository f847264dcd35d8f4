#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trofi/analysis.hpp"
#include "trofi/dataset.hpp"
#include "trofi/policy.hpp"
#include "trofi/ranking.hpp"
#include "trofi/reward_model.hpp"

namespace trofi::pipeline {

namespace fs = std::filesystem;

/// Artifact file names inside a run directory.
namespace files {
inline constexpr const char* kDataset = "dataset.jsonl";
inline constexpr const char* kGroundTruth = "dataset.gt.jsonl";
inline constexpr const char* kExpertGroundTruth = "dataset.expert.gt.jsonl";
inline constexpr const char* kRanking = "ranking.json";
inline constexpr const char* kRewardModel = "reward_model.json";
inline constexpr const char* kRewardLog = "reward_log.csv";
inline constexpr const char* kLabeled = "dataset.labeled.jsonl";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kResultsMd = "results.md";
inline constexpr const char* kResultsJson = "results.json";
/// Per-seed tables comparing the analyzed methods.
inline constexpr const char* kAnalysisMd = "analysis.md";
}  // namespace files

/// Policy-training variants. Everything except Bc trains TD3+BC on a
/// differently labeled copy of the dataset.
enum class Method { Trofi, GroundTruth, Bc, Constant, Random, Transformed };

std::string to_string(Method m);
/// Accepts trofi, gt, bc, constant, random, transformed.
Method parse_method(const std::string& name);
/// Row label used in result tables (TROFI, GT, BC, CONS, Random, GT-affine).
std::string display_name(Method m);

std::string agent_file(Method m);
std::string policy_log_file(Method m);
std::string eval_file(Method m);
std::string report_file(Method m);

/// Records artifacts, config snapshots, metrics and timings for a run directory.
class Manifest {
 public:
  explicit Manifest(fs::path dir);
  void record_artifact(const std::string& file);
  void set_config(const std::string& stage, nlohmann::json config);
  void set_metric(const std::string& key, nlohmann::json value);
  void set_timing(const std::string& stage, double seconds);
  void save() const;
  const nlohmann::json& json() const noexcept { return data_; }

 private:
  fs::path dir_;
  nlohmann::json data_;
};

struct GenDataOptions {
  std::string env = "lineworld";
  std::string tier = "medium";
  std::size_t n_transitions = 10000;
  std::uint64_t seed = 0;
};

struct RankOptions {
  double fraction = 1.0;
  RankingSource source = RankingSource::Oracle;
  /// Swap fraction applied after oracle ranking; > 0 implies a perturbed source.
  double perturb = 0.0;
  fs::path human_ranking;
  std::uint64_t seed = 0;
};

struct TrainPolicyOptions {
  Method method = Method::Trofi;
  PolicyConfig config;
};

struct AnalyzeOptions {
  Method method = Method::Trofi;
  AnalysisConfig config;
  std::size_t expert_transitions = 10000;
  std::size_t series_trajectories = 5;
};

/// Writes dataset.jsonl (reward-free) and dataset.gt.jsonl.
void gen_data(const fs::path& dir, const GenDataOptions& opt);
/// Writes ranking.json.
RankedSet rank(const fs::path& dir, const RankOptions& opt);
/// Writes reward_model.json and reward_log.csv.
RewardTrainingLog train_reward(const fs::path& dir, const RewardTrainConfig& config);
/// Writes dataset.labeled.jsonl.
void label(const fs::path& dir);
/// Writes agent.<method>.json, policy_log.<method>.csv and, for substituted
/// rewards, the labeled intermediate dataset.<method>.jsonl.
void train_policy(const fs::path& dir, const TrainPolicyOptions& opt);
/// Writes eval.<method>.json.
EvalResult evaluate(const fs::path& dir, Method method, int episodes, std::uint64_t seed);
/// Writes report.<method>.json/.md and value_series.<method>.csv.
AnalysisReport analyze(const fs::path& dir, const AnalyzeOptions& opt);

/// The labeled dataset a method trains on (loads or builds it).
OfflineDataset training_dataset(const fs::path& dir, Method method, std::uint64_t seed);

struct ExperimentConfig {
  GenDataOptions data;
  double ranked_fraction = 1.0;
  RankingSource ranking_source = RankingSource::Oracle;
  double swap_fraction = 0.2;
  fs::path human_ranking;
  RewardTrainConfig reward;
  PolicyConfig policy;
  std::vector<Method> methods{Method::Trofi, Method::GroundTruth, Method::Bc, Method::Constant,
                              Method::Random};
  int n_seeds = 5;
  int eval_episodes = 100;
  std::uint64_t base_seed = 0;
  bool analyze = false;
  AnalysisConfig analysis;
  fs::path output_dir;

  void validate() const;
  nlohmann::json to_json() const;
  /// Seed of the k-th run.
  std::uint64_t seed_for(int k) const { return base_seed + static_cast<std::uint64_t>(k); }
};

struct MethodSummary {
  Method method = Method::Trofi;
  std::vector<std::optional<double>> per_seed;  // empty optional marks a failed run
  std::vector<std::string> failures;
  double mean = 0.0;
  double std = 0.0;
  std::size_t completed = 0;
};

struct PipelineResult {
  std::vector<MethodSummary> methods;
  const MethodSummary* find(Method m) const;
  std::string results_markdown(const std::string& column) const;
};

/// Runs the full chain for every seed under output_dir/seed_<k>, then writes
/// results.md and results.json.
PipelineResult run_pipeline(const ExperimentConfig& config);

}  // namespace trofi::pipeline
