#include "trofi/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "trofi/checksum.hpp"
#include "trofi/envs.hpp"
#include "trofi/error.hpp"

namespace trofi::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

constexpr const char* kProtocol =
    "Scores are the normalized mean return of 100 evaluation episodes run once after training "
    "completes (fixed evaluation seeds), not the last 100 episodes during training.";

void require(const fs::path& dir, const char* file, const std::string& command) {
  if (!fs::exists(dir / file))
    throw DependencyError(std::string("missing ") + (dir / file).string() + "; run `trofi " +
                              command + "` first",
                          command);
}

void save_text(const fs::path& dir, const std::string& file, const std::string& text,
               Manifest& manifest) {
  write_file(dir / file, text);
  manifest.record_artifact(file);
}

OfflineDataset load_required(const fs::path& dir, const char* file, const std::string& command) {
  require(dir, file, command);
  return load_dataset(dir / file);
}

std::string intermediate_file(Method m) { return "dataset." + to_string(m) + ".jsonl"; }

bool needs_reward_model(Method m) { return m == Method::Trofi || m == Method::Transformed; }

AffineTransform fitted_transform(const fs::path& dir) {
  const auto gt = load_required(dir, files::kGroundTruth, "gen-data");
  const auto trofi = load_required(dir, files::kLabeled, "label");
  return fit_affine_to_model(gt, trofi);
}

RewardSource reward_source_of(Method m) {
  switch (m) {
    case Method::Trofi: return RewardSource::Trofi;
    case Method::GroundTruth: return RewardSource::GroundTruth;
    case Method::Constant: return RewardSource::Constant;
    case Method::Random: return RewardSource::Random;
    case Method::Transformed: return RewardSource::Transformed;
    case Method::Bc: break;
  }
  throw ConfigError("analyze: behavior cloning trains no critic to analyze");
}

std::string format_score(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f ± %.1f", mean, std);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(Method m) {
  switch (m) {
    case Method::Trofi: return "trofi";
    case Method::GroundTruth: return "gt";
    case Method::Bc: return "bc";
    case Method::Constant: return "constant";
    case Method::Random: return "random";
    case Method::Transformed: return "transformed";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "trofi") return Method::Trofi;
  if (name == "gt") return Method::GroundTruth;
  if (name == "bc") return Method::Bc;
  if (name == "constant") return Method::Constant;
  if (name == "random") return Method::Random;
  if (name == "transformed") return Method::Transformed;
  throw ConfigError("unknown method '" + name +
                    "' (valid: trofi, gt, bc, constant, random, transformed)");
}

std::string display_name(Method m) {
  switch (m) {
    case Method::Trofi: return "TROFI";
    case Method::GroundTruth: return "GT";
    case Method::Bc: return "BC";
    case Method::Constant: return "CONS";
    case Method::Random: return "Random";
    case Method::Transformed: return "GT-affine";
  }
  return "unknown";
}

std::string agent_file(Method m) { return "agent." + to_string(m) + ".json"; }
std::string policy_log_file(Method m) { return "policy_log." + to_string(m) + ".csv"; }
std::string eval_file(Method m) { return "eval." + to_string(m) + ".json"; }
std::string report_file(Method m) { return "report." + to_string(m) + ".json"; }

// ---------------------------------------------------------------------------
// Manifest

Manifest::Manifest(fs::path dir) : dir_(std::move(dir)) {
  const fs::path path = dir_ / files::kManifest;
  if (fs::exists(path)) {
    try {
      data_ = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }
  if (!data_.is_object()) data_ = nlohmann::json::object();
  data_["version"] = 1;
  data_["protocol"] = kProtocol;
  for (const char* key : {"artifacts", "config", "metrics", "timings"})
    if (!data_.contains(key)) data_[key] = nlohmann::json::object();
}

void Manifest::record_artifact(const std::string& file) {
  data_["artifacts"][file] = sha256_file(dir_ / file);
}

void Manifest::set_config(const std::string& stage, nlohmann::json config) {
  data_["config"][stage] = std::move(config);
}

void Manifest::set_metric(const std::string& key, nlohmann::json value) {
  data_["metrics"][key] = std::move(value);
}

void Manifest::set_timing(const std::string& stage, double seconds) {
  data_["timings"][stage] = seconds;
}

void Manifest::save() const {
  fs::create_directories(dir_);
  write_file(dir_ / files::kManifest, data_.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Stages

void gen_data(const fs::path& dir, const GenDataOptions& opt) {
  const auto start = Clock::now();
  const auto env = make_env(opt.env);
  const Tier tier = parse_tier(opt.tier);
  fs::create_directories(dir);
  Manifest manifest(dir);

  const OfflineDataset gt = generate_dataset(*env, tier, opt.n_transitions, opt.seed);
  const OfflineDataset reward_free = strip_rewards(gt);
  save_dataset(gt, dir / files::kGroundTruth);
  save_dataset(reward_free, dir / files::kDataset);
  manifest.record_artifact(files::kGroundTruth);
  manifest.record_artifact(files::kDataset);

  const auto trajectories = split_trajectories(gt);
  double total = 0.0;
  for (const auto& t : trajectories) total += t.episodic_return.value_or(0.0);
  manifest.set_config("gen-data", {{"env", opt.env},
                                   {"tier", to_string(tier)},
                                   {"n_transitions", opt.n_transitions},
                                   {"seed", opt.seed}});
  manifest.set_metric("dataset_hash", dataset_hash(reward_free));
  manifest.set_metric("episodes", trajectories.size());
  manifest.set_metric("transitions", gt.size());
  manifest.set_metric("mean_gt_return", total / static_cast<double>(trajectories.size()));
  manifest.set_timing("gen-data", seconds_since(start));
  manifest.save();
}

RankedSet rank(const fs::path& dir, const RankOptions& opt) {
  const auto start = Clock::now();
  if (!(opt.fraction > 0.0 && opt.fraction <= 1.0))
    throw ConfigError("rank: fraction must be in (0, 1]");
  if (!(opt.perturb >= 0.0 && opt.perturb <= 1.0))
    throw ConfigError("rank: perturb must be in [0, 1]");
  const OfflineDataset dataset = load_required(dir, files::kDataset, "gen-data");
  Manifest manifest(dir);

  RankedSet ranked;
  if (opt.source == RankingSource::Human) {
    if (opt.perturb > 0.0) throw ConfigError("rank: --perturb applies to oracle rankings only");
    if (opt.human_ranking.empty())
      throw ConfigError("rank: the human source needs an input ranking file (--in)");
    ranked = import_human_ranking(opt.human_ranking, dataset);
  } else {
    if (opt.source == RankingSource::Perturbed && opt.perturb <= 0.0)
      throw ConfigError("rank: the perturbed source needs a positive --perturb swap fraction");
    if (!fs::exists(dir / files::kGroundTruth))
      throw DependencyError("oracle ranking needs the ground-truth companion " +
                                (dir / files::kGroundTruth).string() + "; run `trofi gen-data`",
                            "gen-data");
    const OfflineDataset gt = load_dataset(dir / files::kGroundTruth);
    const auto subset = subsample_trajectories(split_trajectories(gt), opt.fraction, opt.seed);
    ranked = oracle_rank(subset, dataset.env_name, dataset_hash(dataset));
    if (opt.perturb > 0.0) ranked = perturb_ranking(ranked, opt.perturb, opt.seed);
  }
  save_ranking(ranked, dir / files::kRanking);
  manifest.record_artifact(files::kRanking);
  manifest.set_config("rank", {{"fraction", opt.fraction},
                               {"source", to_string(ranked.source)},
                               {"perturb", opt.perturb},
                               {"seed", opt.seed}});
  manifest.set_metric("ranked_trajectories", ranked.size());
  manifest.set_timing("rank", seconds_since(start));
  manifest.save();
  return ranked;
}

RewardTrainingLog train_reward(const fs::path& dir, const RewardTrainConfig& config) {
  const auto start = Clock::now();
  config.validate();
  const OfflineDataset dataset = load_required(dir, files::kDataset, "gen-data");
  require(dir, files::kRanking, "rank");
  const RankedSet ranked = load_ranking(dir / files::kRanking);
  Manifest manifest(dir);

  const RewardTrainResult result = trofi::train_reward(ranked, dataset, config);
  save_reward_model(result.model, dir / files::kRewardModel);
  manifest.record_artifact(files::kRewardModel);
  save_text(dir, files::kRewardLog, result.log.to_csv(), manifest);

  manifest.set_config("train-reward", to_json(config));
  if (!result.log.rows.empty()) {
    const auto& last = result.log.rows.back();
    manifest.set_metric("reward_final_loss", last.loss);
    manifest.set_metric("reward_holdout_accuracy", std::isnan(last.holdout_accuracy)
                                                       ? nlohmann::json(nullptr)
                                                       : nlohmann::json(last.holdout_accuracy));
  }
  manifest.set_timing("train-reward", seconds_since(start));
  manifest.save();
  return result.log;
}

void label(const fs::path& dir) {
  const auto start = Clock::now();
  const OfflineDataset dataset = load_required(dir, files::kDataset, "gen-data");
  require(dir, files::kRewardModel, "train-reward");
  const RewardModel model = load_reward_model(dir / files::kRewardModel);
  if (model.env_name != dataset.env_name)
    throw PreconditionError("label: reward model was trained on '" + model.env_name +
                            "' but the dataset is '" + dataset.env_name + "'");
  Manifest manifest(dir);
  save_dataset(label_dataset(dataset, model), dir / files::kLabeled);
  manifest.record_artifact(files::kLabeled);
  manifest.set_timing("label", seconds_since(start));
  manifest.save();
}

OfflineDataset training_dataset(const fs::path& dir, Method method, std::uint64_t seed) {
  switch (method) {
    case Method::Trofi: return load_required(dir, files::kLabeled, "label");
    case Method::GroundTruth:
    case Method::Bc: return load_required(dir, files::kGroundTruth, "gen-data");
    case Method::Constant:
      return substitute_rewards(load_required(dir, files::kDataset, "gen-data"),
                                RewardSubstitution::ConstantZero, seed);
    case Method::Random:
      return substitute_rewards(load_required(dir, files::kDataset, "gen-data"),
                                RewardSubstitution::UniformRandom, seed);
    case Method::Transformed:
      return transform_rewards(load_required(dir, files::kGroundTruth, "gen-data"),
                               fitted_transform(dir));
  }
  throw ConfigError("unknown method");
}

void train_policy(const fs::path& dir, const TrainPolicyOptions& opt) {
  const auto start = Clock::now();
  opt.config.validate();
  const Method m = opt.method;
  const OfflineDataset data = training_dataset(dir, m, opt.config.seed);
  Manifest manifest(dir);

  if (m == Method::Constant || m == Method::Random || m == Method::Transformed) {
    save_dataset(data, dir / intermediate_file(m));
    manifest.record_artifact(intermediate_file(m));
  }
  const PolicyTrainResult result =
      m == Method::Bc ? trofi::train_bc(data, opt.config) : trofi::train_policy(data, opt.config);
  save_agent(result.agent, dir / agent_file(m));
  manifest.record_artifact(agent_file(m));
  save_text(dir, policy_log_file(m), result.log.to_csv(), manifest);

  nlohmann::json cfg = to_json(opt.config);
  cfg["method"] = to_string(m);
  if (m == Method::Transformed) {
    const AffineTransform t = fitted_transform(dir);
    cfg["affine"] = {{"scale", t.scale}, {"offset", t.offset}};
  }
  manifest.set_config("train-policy." + to_string(m), cfg);
  manifest.set_timing("train-policy." + to_string(m), seconds_since(start));
  manifest.save();
}

EvalResult evaluate(const fs::path& dir, Method method, int episodes, std::uint64_t seed) {
  const auto start = Clock::now();
  if (episodes < 1) throw ConfigError("evaluate: episodes must be >= 1");
  require(dir, agent_file(method).c_str(), "train-policy");
  const Agent agent = load_agent(dir / agent_file(method));
  const auto env = make_env(agent.env_name);
  Manifest manifest(dir);

  const EvalResult ev = trofi::evaluate(agent, *env, episodes, seed);
  const nlohmann::json out = {{"method", to_string(method)},
                              {"env", agent.env_name},
                              {"episodes", episodes},
                              {"seed", seed},
                              {"mean_return", ev.mean},
                              {"std_return", ev.std},
                              {"normalized_score", ev.normalized_score},
                              {"per_episode_returns", ev.per_episode_returns},
                              {"protocol", kProtocol}};
  save_text(dir, eval_file(method), out.dump(2) + "\n", manifest);
  manifest.set_metric("score." + to_string(method), ev.normalized_score);
  manifest.set_timing("evaluate." + to_string(method), seconds_since(start));
  manifest.save();
  return ev;
}

AnalysisReport analyze(const fs::path& dir, const AnalyzeOptions& opt) {
  const auto start = Clock::now();
  opt.config.validate();
  const Method m = opt.method;
  const RewardSource source = reward_source_of(m);
  require(dir, agent_file(m).c_str(), "train-policy");
  const Agent agent = load_agent(dir / agent_file(m));
  const auto env = make_env(agent.env_name);
  const OfflineDataset train = training_dataset(dir, m, agent.config.seed);
  Manifest manifest(dir);

  if (!fs::exists(dir / files::kExpertGroundTruth)) {
    save_dataset(generate_dataset(*env, Tier::Expert, opt.expert_transitions, opt.config.seed),
                 dir / files::kExpertGroundTruth);
    manifest.record_artifact(files::kExpertGroundTruth);
  }
  const OfflineDataset expert_gt = load_dataset(dir / files::kExpertGroundTruth);
  OfflineDataset expert;
  switch (m) {
    case Method::Trofi:
      require(dir, files::kRewardModel, "train-reward");
      expert = label_dataset(strip_rewards(expert_gt), load_reward_model(dir / files::kRewardModel));
      break;
    case Method::GroundTruth: expert = expert_gt; break;
    case Method::Constant:
      expert = substitute_rewards(strip_rewards(expert_gt), RewardSubstitution::ConstantZero,
                                  agent.config.seed);
      break;
    case Method::Random:
      expert = substitute_rewards(strip_rewards(expert_gt), RewardSubstitution::UniformRandom,
                                  agent.config.seed);
      break;
    case Method::Transformed: expert = transform_rewards(expert_gt, fitted_transform(dir)); break;
    case Method::Bc: break;
  }

  ReportInputs in;
  in.agent = &agent;
  in.env = env.get();
  in.train_labeled = &train;
  in.expert_labeled = &expert;
  in.reward_source = source;
  const AnalysisReport report = build_report(in, opt.config);

  const std::string stem = "report." + to_string(m);
  save_text(dir, stem + ".json", to_json(report).dump(2) + "\n", manifest);
  save_text(dir, stem + ".md", report_table({{display_name(m), report}}), manifest);
  save_text(dir, "value_series." + to_string(m) + ".csv",
            value_series_csv(critic_q(agent), train, opt.config.gamma, opt.series_trajectories),
            manifest);
  manifest.set_config("analyze." + to_string(m), to_json(opt.config));
  manifest.set_timing("analyze." + to_string(m), seconds_since(start));
  manifest.save();
  return report;
}

// ---------------------------------------------------------------------------
// Experiment

void ExperimentConfig::validate() const {
  make_env(data.env);
  parse_tier(data.tier);
  if (data.n_transitions == 0) throw ConfigError("pipeline: n_transitions must be positive");
  if (!(ranked_fraction > 0.0 && ranked_fraction <= 1.0))
    throw ConfigError("pipeline: ranked_fraction must be in (0, 1]");
  if (ranking_source == RankingSource::Perturbed && !(swap_fraction > 0.0 && swap_fraction <= 1.0))
    throw ConfigError("pipeline: swap_fraction must be in (0, 1]");
  if (ranking_source == RankingSource::Human && human_ranking.empty())
    throw ConfigError("pipeline: the human ranking source needs a ranking file");
  reward.validate();
  policy.validate();
  analysis.validate();
  if (methods.empty()) throw ConfigError("pipeline: no methods selected");
  if (n_seeds < 1) throw ConfigError("pipeline: n_seeds must be >= 1");
  if (eval_episodes < 1) throw ConfigError("pipeline: eval_episodes must be >= 1");
  if (output_dir.empty()) throw ConfigError("pipeline: output_dir is empty");
}

nlohmann::json ExperimentConfig::to_json() const {
  std::vector<std::string> names;
  for (Method m : methods) names.push_back(pipeline::to_string(m));
  return {{"env", data.env},
          {"tier", data.tier},
          {"n_transitions", data.n_transitions},
          {"ranked_fraction", ranked_fraction},
          {"ranking_source", trofi::to_string(ranking_source)},
          {"swap_fraction", swap_fraction},
          {"reward", trofi::to_json(reward)},
          {"policy", trofi::to_json(policy)},
          {"methods", names},
          {"n_seeds", n_seeds},
          {"eval_episodes", eval_episodes},
          {"base_seed", base_seed},
          {"analyze", analyze},
          {"analysis", trofi::to_json(analysis)}};
}

const MethodSummary* PipelineResult::find(Method m) const {
  for (const auto& s : methods)
    if (s.method == m) return &s;
  return nullptr;
}

std::string PipelineResult::results_markdown(const std::string& column) const {
  std::ostringstream out;
  out << "| Method | " << column << " |\n|---|---|\n";
  for (const auto& s : methods) {
    out << "| " << display_name(s.method) << " | ";
    if (s.completed == 0) {
      out << "FAILED";
    } else {
      out << format_score(s.mean, s.std);
      if (s.completed < s.per_seed.size())
        out << " (" << s.completed << "/" << s.per_seed.size() << " seeds, FAILED others)";
    }
    out << " |\n";
  }
  return out.str();
}

namespace {

void finish_summary(MethodSummary& s) {
  std::vector<double> v;
  for (const auto& x : s.per_seed)
    if (x) v.push_back(*x);
  s.completed = v.size();
  if (v.empty()) return;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - s.mean) * (x - s.mean);
  // Sample standard deviation across seeds; a single seed reports 0.
  s.std = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
}

void record_tree(const fs::path& root, Manifest& manifest) {
  std::vector<std::string> rel;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || entry.path().filename() == files::kManifest) continue;
    rel.push_back(fs::relative(entry.path(), root).generic_string());
  }
  std::sort(rel.begin(), rel.end());
  for (const auto& r : rel) manifest.record_artifact(r);
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& config) {
  config.validate();
  const auto start = Clock::now();
  fs::create_directories(config.output_dir);

  PipelineResult result;
  for (Method m : config.methods) {
    MethodSummary s;
    s.method = m;
    s.per_seed.assign(static_cast<std::size_t>(config.n_seeds), std::nullopt);
    result.methods.push_back(std::move(s));
  }
  const bool needs_reward = std::any_of(config.methods.begin(), config.methods.end(),
                                        needs_reward_model);

  std::string analysis_md;
  for (int k = 0; k < config.n_seeds; ++k) {
    const std::uint64_t seed = config.seed_for(k);
    std::vector<std::pair<std::string, AnalysisReport>> reports;
    const fs::path dir = config.output_dir / ("seed_" + std::to_string(k));
    auto fail_all = [&](const std::string& what) {
      for (auto& s : result.methods) s.failures.push_back("seed " + std::to_string(k) + ": " + what);
    };
    try {
      fs::create_directories(dir);
      GenDataOptions gd = config.data;
      gd.seed = seed;
      gen_data(dir, gd);
      if (needs_reward) {
        RankOptions ro;
        ro.fraction = config.ranked_fraction;
        ro.source = config.ranking_source;
        ro.perturb = config.ranking_source == RankingSource::Perturbed ? config.swap_fraction : 0.0;
        ro.human_ranking = config.human_ranking;
        ro.seed = seed;
        rank(dir, ro);
        RewardTrainConfig rc = config.reward;
        rc.seed = seed;
        train_reward(dir, rc);
        label(dir);
      }
    } catch (const std::exception& e) {
      fail_all(e.what());
      continue;
    }
    for (auto& s : result.methods) {
      try {
        TrainPolicyOptions po;
        po.method = s.method;
        po.config = config.policy;
        po.config.seed = seed;
        train_policy(dir, po);
        s.per_seed[static_cast<std::size_t>(k)] =
            evaluate(dir, s.method, config.eval_episodes, seed).normalized_score;
        if (config.analyze && s.method != Method::Bc) {
          AnalyzeOptions ao;
          ao.method = s.method;
          ao.config = config.analysis;
          ao.config.seed = seed;
          ao.config.eval_episodes = config.eval_episodes;
          reports.emplace_back(display_name(s.method), analyze(dir, ao));
        }
      } catch (const std::exception& e) {
        s.failures.push_back("seed " + std::to_string(k) + ": " + e.what());
      }
    }
    if (!reports.empty())
      analysis_md += "## seed " + std::to_string(k) + "\n\n" + report_table(reports) + "\n";
  }
  for (auto& s : result.methods) finish_summary(s);
  if (config.analyze) write_file(config.output_dir / files::kAnalysisMd, analysis_md);

  const std::string column = config.data.env + "-" + config.data.tier;
  write_file(config.output_dir / files::kResultsMd, result.results_markdown(column));

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : result.methods) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& x : s.per_seed) per_seed.push_back(x ? nlohmann::json(*x) : nlohmann::json());
    rows.push_back({{"method", to_string(s.method)},
                    {"label", display_name(s.method)},
                    {"per_seed", per_seed},
                    {"mean", s.completed ? nlohmann::json(s.mean) : nlohmann::json()},
                    {"std", s.completed ? nlohmann::json(s.std) : nlohmann::json()},
                    {"completed", s.completed},
                    {"failures", s.failures}});
  }
  const nlohmann::json summary = {{"column", column}, {"methods", rows}};
  write_file(config.output_dir / files::kResultsJson, summary.dump(2) + "\n");

  Manifest manifest(config.output_dir);
  manifest.set_config("pipeline", config.to_json());
  record_tree(config.output_dir, manifest);
  for (const auto& s : result.methods)
    if (s.completed) manifest.set_metric("mean_score." + to_string(s.method), s.mean);
  manifest.set_timing("pipeline", seconds_since(start));
  manifest.save();
  return result;
}

}  // namespace trofi::pipeline
