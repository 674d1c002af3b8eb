#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "serc/env.hpp"
#include "serc/errors.hpp"
#include "serc/grpo.hpp"
#include "serc/policy.hpp"
#include "serc/remote.hpp"
#include "serc/runner.hpp"
#include "serc/util.hpp"

using namespace serc;

namespace {

struct CommonFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int iters = 0;
  bool iters_given = false;
  std::string env_kind;
  std::string backend = "toy";
  std::string out_dir;
};

void add_common_options(CLI::App& cmd, CommonFlags& flags, bool with_backend) {
  cmd.add_option("-c,--config", flags.config_path,
                 "JSON configuration file (keys mirror the documented run schema)")
      ->check(CLI::ExistingFile);
  cmd.add_option_function<std::uint64_t>(
         "--seed",
         [&flags](const std::uint64_t& value) {
           flags.seed = value;
           flags.seed_given = true;
         },
         "Master seed override");
  cmd.add_option_function<int>(
         "--iters",
         [&flags](const int& value) {
           flags.iters = value;
           flags.iters_given = true;
         },
         "Outer iteration count override");
  cmd.add_option("--env", flags.env_kind, "Task environment override")
      ->check(CLI::IsMember({"arithmetic-chain", "table-qa"}));
  if (with_backend) {
    cmd.add_option("--backend", flags.backend, "Policy backend")
        ->check(CLI::IsMember({"toy", "remote"}));
  }
  cmd.add_option("--out", flags.out_dir, "Directory for metrics and trajectory logs");
}

RunConfig load_run_config(const CommonFlags& flags) {
  RunConfig cfg;
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in.good()) {
      throw ConfigError("cannot open config file '" + flags.config_path + "'");
    }
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& err) {
      throw ConfigError("config file '" + flags.config_path +
                        "' is not valid JSON: " + err.what());
    }
    cfg = run_config_from_json(doc);
  }
  if (flags.seed_given) {
    cfg.seed = flags.seed;
  }
  if (flags.iters_given) {
    cfg.n_iter = flags.iters;
  }
  if (!flags.env_kind.empty()) {
    cfg.env.kind = flags.env_kind == "table-qa" ? TaskKind::TableQa
                                                : TaskKind::ArithmeticChain;
  }
  if (!flags.out_dir.empty()) {
    cfg.out_dir = flags.out_dir;
  }
  validate(cfg);
  return cfg;
}

std::unique_ptr<PolicyBackend> make_eval_backend(const CommonFlags& flags,
                                                 const RunConfig& cfg) {
  if (flags.backend == "remote") {
    auto client = std::make_shared<RemoteClient>(remote_config_from_env());
    return std::make_unique<RemotePolicy>(std::move(client));
  }
  if (cfg.cold_start) {
    return std::make_unique<ToyPolicy>(cold_start_policy(cfg));
  }
  return std::make_unique<ToyPolicy>(cfg.policy);
}

void print_metrics_table(const std::vector<IterationMetrics>& metrics) {
  std::printf("%5s %12s %11s %10s %12s %12s %8s\n", "iter", "mean_return",
              "solve_rate", "mean_conf", "repair_rate", "loss", "ms");
  for (const IterationMetrics& m : metrics) {
    std::printf("%5d %12.4f %11.4f %10.4f %12.4f %12.4f %8lld\n", m.iteration,
                m.mean_return, m.solve_rate, m.mean_conf, m.repair_rate, m.loss.total,
                static_cast<long long>(m.wall_clock_ms));
  }
}

int cmd_run(const CommonFlags& flags) {
  RunConfig cfg = load_run_config(flags);
  if (flags.backend == "remote") {
    throw ConfigError("the remote backend is evaluation-only; use it with 'eval' or "
                      "'bon' and train with the toy backend");
  }
  ToyPolicy policy = cfg.cold_start ? cold_start_policy(cfg) : ToyPolicy(cfg.policy);
  std::vector<IterationMetrics> metrics = run_serc(policy, cfg);
  print_metrics_table(metrics);
  if (!cfg.out_dir.empty()) {
    std::printf("logs written to %s\n", cfg.out_dir.c_str());
  }
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& export_tasks) {
  RunConfig cfg = load_run_config(flags);
  EnvConfig env_cfg = cfg.env;
  env_cfg.seed = mix_seed(cfg.seed, env_cfg.seed);
  std::vector<GeneratedTask> tasks = make_task_batch(env_cfg, cfg.tasks_per_iter, 0);

  if (!export_tasks.empty()) {
    std::ofstream out(export_tasks, std::ios::binary);
    if (!out.good()) {
      throw ConfigError("cannot open task export file '" + export_tasks + "'");
    }
    for (const GeneratedTask& task : tasks) {
      out << encode_task_record(task) << "\n";
    }
    std::printf("exported %zu tasks to %s\n", tasks.size(), export_tasks.c_str());
  }

  std::unique_ptr<PolicyBackend> backend = make_eval_backend(flags, cfg);
  // evaluation always runs the full verification pipeline, never the warm-up
  // shortcut
  InnerLoopResult inner = run_inner_loop(*backend, tasks, cfg, cfg.warmup_iterations);

  int solved = 0;
  double return_sum = 0.0;
  double conf_sum = 0.0;
  int verified_steps = 0;
  for (const ScoredTrajectory& scored : inner.trajectories) {
    solved += scored.solved ? 1 : 0;
    return_sum += scored.trajectory.total_return.value_or(0.0);
    for (const Step& step : scored.trajectory.steps) {
      if (step.verification) {
        conf_sum += step.verification->conf;
        ++verified_steps;
      }
    }
  }
  std::size_t kept = inner.trajectories.size();
  std::printf("backend        %s\n", backend->name().c_str());
  std::printf("trajectories   %zu (aborted %d)\n", kept, inner.aborted);
  std::printf("solve_rate     %s\n",
              format_double(kept == 0 ? 0.0 : static_cast<double>(solved) /
                                              static_cast<double>(kept))
                  .c_str());
  std::printf("mean_return    %s\n",
              format_double(kept == 0 ? 0.0 : return_sum / static_cast<double>(kept))
                  .c_str());
  std::printf("mean_conf      %s\n",
              format_double(verified_steps == 0 ? 0.0
                                                : conf_sum / verified_steps)
                  .c_str());

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::filesystem::path log_path =
        std::filesystem::path(cfg.out_dir) / "eval_trajectories.jsonl";
    std::ofstream log(log_path, std::ios::binary);
    for (const ScoredTrajectory& scored : inner.trajectories) {
      log << encode_trajectory(scored.trajectory) << "\n";
    }
    std::printf("trajectories written to %s\n", log_path.string().c_str());
  }
  return 0;
}

int cmd_bon(const CommonFlags& flags, const std::string& candidates_path) {
  RunConfig cfg = load_run_config(flags);
  std::ifstream in(candidates_path, std::ios::binary);
  if (!in.good()) {
    throw ConfigError("cannot open candidate file '" + candidates_path + "'");
  }
  std::vector<Trajectory> candidates;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    candidates.push_back(decode_trajectory(line));
  }
  if (candidates.empty()) {
    throw ConfigError("candidate file '" + candidates_path + "' holds no trajectories");
  }

  BonConfig bon_cfg;
  bon_cfg.reward = cfg.reward;
  bon_cfg.returns = cfg.returns;
  bon_cfg.limits = cfg.limits;
  bon_cfg.protocol_retries = cfg.protocol_retries;

  std::unique_ptr<PolicyBackend> verifier = make_eval_backend(flags, cfg);
  BonResult result = best_of_n(*verifier, candidates, bon_cfg);
  for (std::size_t i = 0; i < result.scores.size(); ++i) {
    std::printf("candidate %zu: %s\n", i, format_double(result.scores[i]).c_str());
  }
  std::printf("selected: %d\n", result.selected);
  return 0;
}

int cmd_grad_check(std::uint64_t seed, int rounds, double h) {
  if (rounds < 1) {
    throw ConfigError("grad-check needs at least one round");
  }
  OptimConfig optim;
  double worst = 0.0;
  for (int round = 0; round < rounds; ++round) {
    std::mt19937_64 rng = make_rng(mix_seed(seed, static_cast<std::uint64_t>(round)));
    ToyPolicyConfig policy_cfg;
    policy_cfg.embedding_dim = 3 + round % 3;
    policy_cfg.init_scale = 0.6;
    policy_cfg.init_seed = mix_seed(seed, static_cast<std::uint64_t>(round), 7);
    ToyPolicy policy(policy_cfg);
    ToyPolicyConfig old_cfg = policy_cfg;
    old_cfg.init_seed = policy_cfg.init_seed + 100;
    ToyPolicy old_policy(old_cfg);

    std::uniform_real_distribution<double> feature(-1.0, 1.0);
    // Stay inside ln(1 + clip) so no sample lands on the clipped branch, where
    // the surrogate gradient is identically zero and the relative-error metric
    // degenerates to noise-floor comparisons on near-zero coordinates.
    std::uniform_real_distribution<double> offset(-0.15, 0.15);
    std::uniform_int_distribution<int> template_pick(0, policy_cfg.template_count - 1);
    std::uniform_int_distribution<int> length_pick(1, 3);

    std::vector<TrajectorySample> samples;
    for (int i = 0; i < optim.group_size; ++i) {
      TrajectorySample sample;
      int steps = length_pick(rng);
      for (int s = 0; s < steps; ++s) {
        StepChoice choice;
        choice.features.assign(kFeatureCount, 0.0);
        choice.features[0] = 1.0;
        for (std::size_t f = 1; f < choice.features.size(); ++f) {
          choice.features[f] = feature(rng);
        }
        choice.template_id = template_pick(rng);
        sample.choices.push_back(std::move(choice));
      }
      sample.logp_old = trajectory_logp(policy, sample) - offset(rng);
      sample.g_return = static_cast<double>(i % 4) + (i % 2 == 0 ? 1.0 : 0.0);
      samples.push_back(std::move(sample));
    }
    GroupBatch batch = make_group_batch(std::move(samples), optim.adv_epsilon);
    double err = finite_diff_check(batch, policy, old_policy, optim, h);
    std::printf("round %2d: max relative error %s\n", round, format_double(err).c_str());
    if (err > worst) {
      worst = err;
    }
  }
  std::printf("worst over %d rounds: %s\n", rounds, format_double(worst).c_str());
  if (worst > 1e-5) {
    std::fprintf(stderr, "grad-check FAILED: tolerance 1e-5 exceeded\n");
    return 1;
  }
  std::printf("grad-check passed (tolerance 1e-5)\n");
  return 0;
}

int cmd_report(const std::string& metrics_path, const std::string& dat_path) {
  std::ifstream in(metrics_path, std::ios::binary);
  if (!in.good()) {
    throw ConfigError("cannot open metrics file '" + metrics_path + "'");
  }
  std::string header;
  if (!std::getline(in, header) || header != kMetricsCsvHeader) {
    throw ConfigError("'" + metrics_path + "' does not start with the metrics header");
  }
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream split(line);
    std::string cell;
    while (std::getline(split, cell, ',')) {
      cells.push_back(cell);
    }
    if (cells.size() != 7) {
      throw ConfigError("metrics row with " + std::to_string(cells.size()) +
                        " cells (expected 7): " + line);
    }
    rows.push_back(std::move(cells));
  }

  std::printf("%5s %12s %11s %10s %12s %12s %8s\n", "iter", "mean_return",
              "solve_rate", "mean_conf", "repair_rate", "loss", "ms");
  for (const auto& cells : rows) {
    std::printf("%5s %12.4f %11.4f %10.4f %12.4f %12.4f %8s\n", cells[0].c_str(),
                std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]),
                std::stod(cells[4]), std::stod(cells[5]), cells[6].c_str());
  }

  if (!dat_path.empty()) {
    std::ofstream dat(dat_path, std::ios::binary);
    if (!dat.good()) {
      throw ConfigError("cannot open data file '" + dat_path + "'");
    }
    dat << "# iteration mean_return solve_rate mean_conf repair_rate loss"
        << " wall_clock_ms\n";
    for (const auto& cells : rows) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        dat << (i == 0 ? "" : " ") << cells[i];
      }
      dat << "\n";
    }
    std::printf("gnuplot data written to %s\n", dat_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serc: a desk-scale solver/verifier self-evolution loop"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  CLI::App* run_cmd =
      app.add_subcommand("run", "Train the toy policy through the full cycle");
  add_common_options(*run_cmd, run_flags, true);

  CommonFlags eval_flags;
  std::string export_tasks;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Run the inner loop once with a frozen policy");
  add_common_options(*eval_cmd, eval_flags, true);
  eval_cmd->add_option("--export-tasks", export_tasks,
                       "Write the evaluation task corpus to this JSONL file");

  CommonFlags bon_flags;
  std::string candidates_path;
  CLI::App* bon_cmd = app.add_subcommand(
      "bon", "Rank candidate trajectories with the verifier and pick the best");
  add_common_options(*bon_cmd, bon_flags, true);
  bon_cmd->add_option("--candidates", candidates_path,
                      "JSONL file of encoded candidate trajectories")
      ->required()
      ->check(CLI::ExistingFile);

  std::uint64_t check_seed = 0;
  int check_rounds = 20;
  double check_h = 1e-6;
  CLI::App* check_cmd = app.add_subcommand(
      "grad-check", "Cross-check the analytic gradient against finite differences");
  check_cmd->add_option("--seed", check_seed, "Seed for the randomized batches");
  check_cmd->add_option("--rounds", check_rounds, "Number of randomized batches");
  check_cmd->add_option("--step", check_h, "Finite-difference step size");

  std::string metrics_path = "metrics.csv";
  std::string dat_path;
  CLI::App* report_cmd =
      app.add_subcommand("report", "Summarize a metrics CSV from a training run");
  report_cmd->add_option("--metrics", metrics_path, "Metrics CSV to read");
  report_cmd->add_option("--dat", dat_path, "Also write a gnuplot-compatible data file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      return cmd_run(run_flags);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_flags, export_tasks);
    }
    if (bon_cmd->parsed()) {
      return cmd_bon(bon_flags, candidates_path);
    }
    if (check_cmd->parsed()) {
      return cmd_grad_check(check_seed, check_rounds, check_h);
    }
    if (report_cmd->parsed()) {
      return cmd_report(metrics_path, dat_path);
    }
  } catch (const Error& err) {
    std::fprintf(stderr, "serc: error: %s\n", err.what());
    return 1;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "serc: unexpected error: %s\n", err.what());
    return 1;
  }
  return 0;
}
