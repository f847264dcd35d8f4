#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trofi/checksum.hpp"
#include "trofi/envs.hpp"
#include "trofi/error.hpp"
#include "trofi/pipeline.hpp"
#include "trofi/rank_server.hpp"
#include "trofi/runtime.hpp"

namespace fs = std::filesystem;
namespace tp = trofi::pipeline;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kDependency = 3, kNumeric = 4 };

std::string default_out() {
  const char* env = std::getenv("TROFI_OUT");
  return env && *env ? env : "trofi_out";
}

void add_reward_options(CLI::App* sub, trofi::RewardTrainConfig& c, const std::string& prefix) {
  sub->add_option("--" + prefix + "snippet-length", c.snippet_length, "Snippet length L")
      ->capture_default_str();
  sub->add_option("--" + prefix + "pairs", c.pairs_per_update, "Snippet pairs per update")
      ->capture_default_str();
  sub->add_option("--" + prefix + "updates", c.updates, "Adam updates")->capture_default_str();
  sub->add_option("--" + prefix + "lr", c.learning_rate, "Learning rate")->capture_default_str();
  sub->add_option("--" + prefix + "hidden", c.hidden_sizes, "Hidden layer sizes")
      ->expected(1, -1)
      ->capture_default_str();
  sub->add_option("--" + prefix + "holdout-fraction", c.holdout_fraction,
                  "Fraction of ranked trajectories held out")
      ->capture_default_str();
}

void add_policy_options(CLI::App* sub, trofi::PolicyConfig& c, const std::string& prefix) {
  sub->add_option("--" + prefix + "updates", c.updates, "Gradient updates")->capture_default_str();
  sub->add_option("--" + prefix + "batch-size", c.batch_size, "Minibatch size")
      ->capture_default_str();
  sub->add_option("--" + prefix + "alpha", c.alpha, "TD3+BC alpha")->capture_default_str();
  sub->add_option("--" + prefix + "gamma", c.gamma, "Discount")->capture_default_str();
  sub->add_option("--" + prefix + "tau", c.tau, "Target soft-update rate")->capture_default_str();
  sub->add_option("--" + prefix + "policy-delay", c.policy_delay, "Critic updates per actor update")
      ->capture_default_str();
  sub->add_option("--" + prefix + "actor-lr", c.actor_learning_rate, "Actor learning rate")
      ->capture_default_str();
  sub->add_option("--" + prefix + "critic-lr", c.critic_learning_rate, "Critic learning rate")
      ->capture_default_str();
  sub->add_option("--" + prefix + "hidden", c.hidden_sizes, "Hidden layer sizes")
      ->expected(1, -1)
      ->capture_default_str();
  sub->add_option("--" + prefix + "eval-every", c.eval_every, "Periodic evaluation interval (0 = off)")
      ->capture_default_str();
}

const std::vector<std::string> kTiers{"expert", "medium", "medium-replay", "medium-expert"};
const std::vector<std::string> kMethods{"trofi", "gt", "bc", "constant", "random", "transformed"};

}  // namespace

int main(int argc, char** argv) {
  trofi::tune_allocator();

  CLI::App app{"trofi: offline reinforcement learning from ranked trajectories"};
  app.set_config("--config", "", "TOML/INI file supplying option values");
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string out = default_out();
  app.add_option("-o,--out", out, "Run directory (default: $TROFI_OUT or ./trofi_out)")
      ->capture_default_str();

  // gen-data
  tp::GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate dataset.jsonl and dataset.gt.jsonl");
  gen_cmd->add_option("--env", gen.env, "pointmass2d | lineworld")->capture_default_str();
  gen_cmd->add_option("--tier", gen.tier)->check(CLI::IsMember(kTiers))->capture_default_str();
  gen_cmd->add_option("--n", gen.n_transitions, "Transition count (whole episodes)")
      ->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();

  // rank
  tp::RankOptions rank;
  std::string rank_source = "oracle";
  std::string rank_in;
  auto* rank_cmd = app.add_subcommand("rank", "Subsample and rank trajectories into ranking.json");
  rank_cmd->add_option("--fraction", rank.fraction, "Fraction of trajectories to rank")
      ->capture_default_str();
  rank_cmd->add_option("--source", rank_source, "oracle | human | perturbed")
      ->capture_default_str();
  rank_cmd->add_option("--perturb", rank.perturb, "Swap fraction applied to the oracle ranking")
      ->capture_default_str();
  rank_cmd->add_option("--in", rank_in, "Human ranking file (source human)");
  rank_cmd->add_option("--seed", rank.seed)->capture_default_str();

  // train-reward
  trofi::RewardTrainConfig reward;
  auto* reward_cmd = app.add_subcommand("train-reward", "Fit the reward model to ranking.json");
  add_reward_options(reward_cmd, reward, "");
  reward_cmd->add_option("--seed", reward.seed)->capture_default_str();

  // label
  auto* label_cmd = app.add_subcommand("label", "Label dataset.jsonl with the reward model");

  // train-policy
  tp::TrainPolicyOptions policy;
  std::string policy_reward = "trofi";
  bool policy_bc = false;
  auto* policy_cmd = app.add_subcommand("train-policy", "Train a TD3+BC (or BC) agent");
  policy_cmd->add_option("--reward", policy_reward, "Reward labels to train on")
      ->check(CLI::IsMember({"trofi", "gt", "constant", "random", "transformed"}))
      ->capture_default_str();
  policy_cmd->add_flag("--bc", policy_bc, "Behavior cloning baseline (ignores rewards)");
  add_policy_options(policy_cmd, policy.config, "");
  policy_cmd->add_option("--seed", policy.config.seed)->capture_default_str();

  // evaluate
  std::string eval_method = "trofi";
  int eval_episodes = 100;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a trained agent");
  eval_cmd->add_option("--method", eval_method, "Agent to evaluate")
      ->check(CLI::IsMember(kMethods))
      ->capture_default_str();
  eval_cmd->add_option("--episodes", eval_episodes)->capture_default_str();
  eval_cmd->add_option("--seed", eval_seed)->capture_default_str();

  // analyze
  tp::AnalyzeOptions analyze;
  std::string analyze_method = "trofi";
  auto* analyze_cmd = app.add_subcommand("analyze", "Pearson / Goodness report for an agent");
  analyze_cmd->add_option("--method", analyze_method)
      ->check(CLI::IsMember(kMethods))
      ->capture_default_str();
  analyze_cmd->add_option("--episodes", analyze.config.eval_episodes)->capture_default_str();
  analyze_cmd->add_option("--k", analyze.config.goodness_actions, "Random actions per state")
      ->capture_default_str();
  analyze_cmd->add_option("--n-states", analyze.config.n_states, "Goodness states (0 = all)")
      ->capture_default_str();
  analyze_cmd->add_option("--gamma", analyze.config.gamma)->capture_default_str();
  analyze_cmd->add_option("--expert-n", analyze.expert_transitions,
                          "Transitions in the generated expert dataset")
      ->capture_default_str();
  analyze_cmd->add_option("--seed", analyze.config.seed)->capture_default_str();

  // pipeline
  tp::ExperimentConfig exp;
  exp.data.n_transitions = 20000;
  exp.reward.snippet_length = 100;
  exp.reward.learning_rate = 1e-3;
  exp.reward.hidden_sizes = {32, 32};
  exp.reward.updates = 1000;
  exp.policy.updates = 10000;
  std::string exp_source = "oracle";
  std::string exp_in;
  std::vector<std::string> exp_methods{"trofi", "gt", "bc", "constant", "random"};
  auto* pipe_cmd = app.add_subcommand("pipeline", "Full experiment over several seeds");
  pipe_cmd->add_option("--env", exp.data.env)->capture_default_str();
  pipe_cmd->add_option("--tier", exp.data.tier)->check(CLI::IsMember(kTiers))->capture_default_str();
  pipe_cmd->add_option("--n", exp.data.n_transitions)->capture_default_str();
  pipe_cmd->add_option("--fraction", exp.ranked_fraction)->capture_default_str();
  pipe_cmd->add_option("--source", exp_source, "oracle | human | perturbed")->capture_default_str();
  pipe_cmd->add_option("--perturb", exp.swap_fraction, "Swap fraction for the perturbed source")
      ->capture_default_str();
  pipe_cmd->add_option("--in", exp_in, "Human ranking file (source human)");
  pipe_cmd->add_option("--methods", exp_methods)
      ->expected(1, -1)
      ->check(CLI::IsMember(kMethods))
      ->capture_default_str();
  pipe_cmd->add_option("--seeds", exp.n_seeds)->capture_default_str();
  pipe_cmd->add_option("--base-seed", exp.base_seed)->capture_default_str();
  pipe_cmd->add_option("--episodes", exp.eval_episodes)->capture_default_str();
  pipe_cmd->add_flag("--analyze", exp.analyze, "Also write analysis reports");
  add_reward_options(pipe_cmd, exp.reward, "reward-");
  add_policy_options(pipe_cmd, exp.policy, "policy-");

  // serve-rank
  trofi::RankServerOptions serve;
  std::string serve_dataset;
  std::string serve_output;
  auto* serve_cmd = app.add_subcommand("serve-rank", "Local HTTP service for human ranking");
  serve_cmd->add_option("--dataset", serve_dataset, "Dataset (default: <out>/dataset.jsonl)");
  serve_cmd->add_option("--ranking-out", serve_output, "Ranking file (default: <out>/ranking.json)");
  serve_cmd->add_option("--fraction", serve.fraction)->capture_default_str();
  serve_cmd->add_option("--seed", serve.seed)->capture_default_str();
  serve_cmd->add_option("--host", serve.host)->capture_default_str();
  serve_cmd->add_option("--port", serve.port, "0 picks a free port")->capture_default_str();
  serve_cmd->add_option("--ui-dir", serve.ui_dir, "Built UI assets");
  serve_cmd->add_option("--max-points", serve.max_points)->capture_default_str();

  // calibrate
  int cal_episodes = 1000;
  std::uint64_t cal_seed = 0;
  std::string cal_file;
  auto* cal_cmd = app.add_subcommand("calibrate", "Measure random and expert reference returns");
  cal_cmd->add_option("--episodes", cal_episodes)->capture_default_str();
  cal_cmd->add_option("--seed", cal_seed)->capture_default_str();
  cal_cmd->add_option("--file", cal_file, "Write JSON here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  const fs::path dir = out;
  try {
    if (*gen_cmd) {
      tp::gen_data(dir, gen);
      std::cerr << "wrote " << (dir / tp::files::kDataset).string() << " and "
                << (dir / tp::files::kGroundTruth).string() << "\n";
    } else if (*rank_cmd) {
      rank.source = trofi::parse_ranking_source(rank_source);
      rank.human_ranking = rank_in;
      const auto ranked = tp::rank(dir, rank);
      std::cerr << "ranked " << ranked.size() << " trajectories ("
                << trofi::to_string(ranked.source) << ")\n";
    } else if (*reward_cmd) {
      const auto log = tp::train_reward(dir, reward);
      if (!log.rows.empty())
        std::cerr << "final loss " << log.rows.back().loss << ", holdout accuracy "
                  << log.rows.back().holdout_accuracy << "\n";
    } else if (*label_cmd) {
      tp::label(dir);
      std::cerr << "wrote " << (dir / tp::files::kLabeled).string() << "\n";
    } else if (*policy_cmd) {
      policy.method = policy_bc ? tp::Method::Bc : tp::parse_method(policy_reward);
      if (policy.method == tp::Method::Bc && !policy_bc)
        throw trofi::ConfigError("use --bc for the behavior cloning baseline");
      tp::train_policy(dir, policy);
      std::cerr << "wrote " << (dir / tp::agent_file(policy.method)).string() << "\n";
    } else if (*eval_cmd) {
      const auto ev = tp::evaluate(dir, tp::parse_method(eval_method), eval_episodes, eval_seed);
      std::printf("normalized score %.2f (mean return %.3f over %d episodes)\n",
                  ev.normalized_score, ev.mean, eval_episodes);
    } else if (*analyze_cmd) {
      analyze.method = tp::parse_method(analyze_method);
      const auto report = tp::analyze(dir, analyze);
      std::cout << trofi::report_table({{tp::display_name(analyze.method), report}});
    } else if (*pipe_cmd) {
      exp.output_dir = dir;
      exp.ranking_source = trofi::parse_ranking_source(exp_source);
      exp.human_ranking = exp_in;
      exp.methods.clear();
      for (const auto& m : exp_methods) exp.methods.push_back(tp::parse_method(m));
      const auto result = tp::run_pipeline(exp);
      std::cout << result.results_markdown(exp.data.env + "-" + exp.data.tier);
      bool any_failed = false;
      for (const auto& s : result.methods)
        for (const auto& f : s.failures) {
          std::cerr << tp::display_name(s.method) << " failed: " << f << "\n";
          any_failed = true;
        }
      return any_failed ? kFailure : kOk;
    } else if (*serve_cmd) {
      serve.dataset_path = serve_dataset.empty() ? dir / tp::files::kDataset : fs::path(serve_dataset);
      serve.output_path = serve_output.empty() ? dir / tp::files::kRanking : fs::path(serve_output);
      if (!fs::exists(serve.dataset_path))
        throw trofi::DependencyError("missing " + serve.dataset_path.string() +
                                         "; run `trofi gen-data` first",
                                     "gen-data");
      trofi::RankServer server(serve);
      const int port = server.bind();
      std::cerr << "serving " << server.session()["trajectories"].size()
                << " trajectories on http://" << serve.host << ":" << port << "\n";
      server.listen();
    } else if (*cal_cmd) {
      std::vector<trofi::Calibration> entries;
      for (const auto& name : trofi::env_names())
        entries.push_back(trofi::calibrate(*trofi::make_env(name), cal_episodes, cal_seed));
      const std::string text = trofi::calibration_to_json(entries);
      if (cal_file.empty())
        std::cout << text;
      else
        trofi::write_file(cal_file, text);
    }
  } catch (const trofi::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const trofi::DependencyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDependency;
  } catch (const trofi::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
