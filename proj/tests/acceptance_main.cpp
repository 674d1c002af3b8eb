// Acceptance harness: one line per criterion, nonzero exit on any failure.
// Each criterion is independent; a throw inside one is reported and the rest
// still run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <nlohmann/json.hpp>

#include "serc/env.hpp"
#include "serc/errors.hpp"
#include "serc/grpo.hpp"
#include "serc/policy.hpp"
#include "serc/rational.hpp"
#include "serc/runner.hpp"
#include "serc/tools.hpp"
#include "serc/trajectory.hpp"
#include "serc/util.hpp"
#include "serc/verification.hpp"
#include "support/expr_gen.hpp"
#include "support/rational_oracle.hpp"

using namespace serc;
using HighFloat = boost::multiprecision::cpp_bin_float_50;

namespace {

struct CriterionFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool condition, const std::string& message) {
  if (!condition) {
    throw CriterionFailure(message);
  }
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "missing file " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// ---- high-precision mirror of the reward equations -------------------------

HighFloat hp_sigmoid(HighFloat x) { return HighFloat(1) / (HighFloat(1) + exp(-x)); }

HighFloat hp_bernoulli_kl(double p_in, double q_in) {
  // mirrors the double implementation's clamping so both sides evaluate the
  // same mathematical expression
  double q_clamped = std::clamp(q_in, 1e-6, 1.0 - 1e-6);
  double p_clamped = std::clamp(p_in, 0.0, 1.0);
  HighFloat p(p_clamped);
  HighFloat q(q_clamped);
  HighFloat kl = 0;
  if (p_clamped > 0.0) {
    kl += p * log(p / q);
  }
  if (p_clamped < 1.0) {
    kl += (HighFloat(1) - p) * log((HighFloat(1) - p) / (HighFloat(1) - q));
  }
  if (kl < 0) {
    kl = 0;
  }
  return kl;
}

HighFloat hp_r_proc(const VerificationTuple& v, double solver_conf,
                    const RewardConfig& cfg) {
  HighFloat tool_term = HighFloat(cfg.lambda_tool) * v.tool_result;
  HighFloat semantic = HighFloat(v.score) * HighFloat(v.conf);
  HighFloat divergence = HighFloat(cfg.beta_div) * hp_bernoulli_kl(v.conf, solver_conf);
  return tool_term + semantic - divergence;
}

HighFloat hp_gate(double conf, const RewardConfig& cfg) {
  return hp_sigmoid(HighFloat(cfg.kappa) * (HighFloat(cfg.tau_conf) - HighFloat(conf)));
}

double abs_err(double mine, const HighFloat& reference) {
  return std::abs(HighFloat(HighFloat(mine) - reference).convert_to<double>());
}

// ---- shared batch builder for the gradient criteria ------------------------

GroupBatch random_batch(const ToyPolicy& policy, std::mt19937_64& rng,
                        const OptimConfig& optim, double max_offset) {
  std::uniform_real_distribution<double> feature(-1.0, 1.0);
  std::uniform_real_distribution<double> offset(-max_offset, max_offset);
  std::uniform_int_distribution<int> template_pick(0, policy.config().template_count - 1);
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
  return make_group_batch(std::move(samples), optim.adv_epsilon);
}

// ---- criteria ---------------------------------------------------------------

void criterion_equation_oracles() {
  std::mt19937_64 rng = make_rng(101);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> score_pick(-1.0, 1.0);
  std::uniform_real_distribution<double> reward_pick(-3.0, 3.0);
  std::uniform_int_distribution<int> tool_pick(-1, 1);
  std::uniform_int_distribution<int> len_pick(1, 8);

  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    RewardConfig cfg;
    cfg.lambda_tool = unit(rng);
    cfg.beta_div = 0.1 * unit(rng);
    cfg.kappa = 1.0 + 19.0 * unit(rng);
    cfg.tau_conf = 0.05 + 0.9 * unit(rng);
    cfg.repair_cost = 0.2 * unit(rng);

    VerificationTuple v;
    v.step_index = 1;
    v.score = score_pick(rng);
    v.conf = unit(rng);
    v.tool_check = i % 3 != 0;
    v.tool_result = v.tool_check ? tool_pick(rng) : 0;
    double solver_conf = unit(rng);

    ProcessRewardBreakdown breakdown = process_reward(v, solver_conf, cfg);
    worst = std::max(worst, abs_err(breakdown.r_proc, hp_r_proc(v, solver_conf, cfg)));

    GateResult gate = repair_gate(v.conf, cfg);
    HighFloat gate_hp = hp_gate(v.conf, cfg);
    worst = std::max(worst, abs_err(gate.gate, gate_hp));

    double r_t = effective_step_reward(breakdown, gate, cfg);
    HighFloat r_t_hp = hp_r_proc(v, solver_conf, cfg) - gate_hp * HighFloat(cfg.repair_cost);
    worst = std::max(worst, abs_err(r_t, r_t_hp));

    ReturnConfig returns;
    returns.alpha_out = 2.0 * unit(rng);
    returns.gamma = 0.05 + 0.95 * unit(rng);
    std::vector<double> rewards(static_cast<std::size_t>(len_pick(rng)));
    for (double& r : rewards) {
      r = reward_pick(rng);
    }
    double r_out = unit(rng) < 0.5 ? 0.0 : 1.0;
    double g = trajectory_return(rewards, r_out, returns);
    HighFloat g_hp = HighFloat(returns.alpha_out) * r_out;
    HighFloat discount = 1;
    for (double r : rewards) {
      g_hp += discount * r;
      discount *= HighFloat(returns.gamma);
    }
    worst = std::max(worst, abs_err(g, g_hp));
  }
  require(worst <= 1e-9,
          "max abs error vs high-precision oracle " + format_double(worst));
}

void criterion_gate_exactness() {
  RewardConfig cfg;
  GateResult at_threshold = repair_gate(cfg.tau_conf, cfg);
  require(std::abs(at_threshold.gate - 0.5) <= 1e-12,
          "gate at tau_conf is " + format_double(at_threshold.gate));
  require(!at_threshold.triggered, "gate must not trigger at conf == tau_conf");
  require(repair_gate(std::nextafter(cfg.tau_conf, 0.0), cfg).triggered,
          "gate must trigger just below tau_conf");
  require(!repair_gate(std::nextafter(cfg.tau_conf, 1.0), cfg).triggered,
          "gate must not trigger just above tau_conf");

  double previous = repair_gate(0.0, cfg).gate;
  for (int i = 1; i < 1000; ++i) {
    double conf = static_cast<double>(i) / 999.0;
    GateResult gate = repair_gate(conf, cfg);
    require(gate.gate < previous,
            "gate not strictly decreasing at conf " + format_double(conf));
    require(gate.triggered == (conf < cfg.tau_conf),
            "trigger mismatch at conf " + format_double(conf));
    previous = gate.gate;
  }
}

void criterion_advantage_laws() {
  std::mt19937_64 rng = make_rng(202);
  std::uniform_int_distribution<long> lattice(-(1L << 20), 1L << 20);
  std::uniform_int_distribution<int> exponent(-8, 8);

  for (int round = 0; round < 1000; ++round) {
    std::vector<double> returns(8);
    bool varied = false;
    do {
      for (double& g : returns) {
        g = static_cast<double>(lattice(rng)) / 256.0;
      }
      varied = std::any_of(returns.begin(), returns.end(),
                           [&](double g) { return g != returns[0]; });
    } while (!varied);

    std::vector<double> adv = group_advantages(returns, 0.0);
    double sum = 0.0;
    for (double a : adv) {
      sum += a;
    }
    require(std::abs(sum) <= 1e-9, "advantage sum " + format_double(sum));

    double shift = static_cast<double>(lattice(rng)) / 256.0;
    std::vector<double> shifted = returns;
    for (double& g : shifted) {
      g += shift;
    }
    require(group_advantages(shifted, 0.0) == adv, "shift invariance violated");

    int e = exponent(rng);
    double scale = std::ldexp(1.0, e == 0 ? 1 : e);
    std::vector<double> scaled = returns;
    for (double& g : scaled) {
      g *= scale;
    }
    require(group_advantages(scaled, 0.0) == adv, "scale invariance violated");
  }
}

void criterion_gradient_check() {
  OptimConfig optim;
  double worst = 0.0;
  for (int round = 0; round < 20; ++round) {
    std::mt19937_64 rng = make_rng(mix_seed(303, static_cast<std::uint64_t>(round)));
    ToyPolicyConfig policy_cfg;
    policy_cfg.embedding_dim = 3 + round % 3;
    policy_cfg.init_scale = 0.6;
    policy_cfg.init_seed = 7000 + static_cast<std::uint64_t>(round);
    ToyPolicy policy(policy_cfg);
    ToyPolicyConfig old_cfg = policy_cfg;
    old_cfg.init_seed = policy_cfg.init_seed + 100;
    ToyPolicy old_policy(old_cfg);

    // Offsets stay inside ln(1 + clip) so every sample sits on the smooth
    // unclipped branch: the clipped branch has zero surrogate gradient, which
    // starves coordinates down to the noise floor of the relative-error metric.
    GroupBatch batch = random_batch(policy, rng, optim, 0.15);
    worst = std::max(worst, finite_diff_check(batch, policy, old_policy, optim, 1e-6));
  }
  require(worst <= 1e-5, "worst relative gradient error " + format_double(worst));
}

void criterion_loss_stationarity() {
  std::mt19937_64 rng = make_rng(404);
  ToyPolicyConfig policy_cfg;
  policy_cfg.init_scale = 0.5;
  policy_cfg.init_seed = 99;
  ToyPolicy policy(policy_cfg);
  ToyPolicy frozen = policy;

  OptimConfig optim;
  optim.beta_ent = 0.0;
  GroupBatch batch = random_batch(policy, rng, optim, 0.0);  // logp_old == logp_new

  EdlpBreakdown loss = edlp_loss(batch, policy, frozen, optim);
  double adv_acc = 0.0;
  for (double a : batch.advantages) {
    adv_acc += a;
  }
  double expected = -(adv_acc / static_cast<double>(batch.advantages.size()));
  require(loss.surrogate == expected, "surrogate at theta == theta_old is " +
                                          format_double(loss.surrogate) + ", expected " +
                                          format_double(expected));
  require(loss.kl == 0.0, "kl at theta == theta_old is " + format_double(loss.kl));
  require(loss.total == expected, "total at theta == theta_old is " +
                                      format_double(loss.total));

  OptimConfig heavy_kl = optim;
  heavy_kl.beta_kl = 5.0;
  OptimConfig no_kl = optim;
  no_kl.beta_kl = 0.0;
  std::vector<double> with_kl = edlp_gradient(batch, policy, frozen, heavy_kl);
  std::vector<double> without_kl = edlp_gradient(batch, policy, frozen, no_kl);
  double worst = 0.0;
  for (std::size_t k = 0; k < with_kl.size(); ++k) {
    worst = std::max(worst, std::abs(with_kl[k] - without_kl[k]));
  }
  require(worst <= 1e-10, "KL-term gradient at theta == theta_old reaches " +
                              format_double(worst));
}

void criterion_self_evolution() {
  double improvement_sum = 0.0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RunConfig cfg;
    cfg.n_iter = 3;
    cfg.tasks_per_iter = 64;
    cfg.rollouts_per_task = 4;
    cfg.group_size = 8;
    cfg.optim.group_size = 8;
    cfg.max_steps = 2;
    cfg.warmup_iterations = 2;
    cfg.env.difficulty = 2;
    cfg.optim.learning_rate = 12.0;
    cfg.optim.beta_ent = 0.15;
    cfg.seed = seed;

    ToyPolicy policy(cfg.policy);
    std::vector<IterationMetrics> metrics = run_serc(policy, cfg);
    double baseline = metrics.front().solve_rate;
    double final_rate = metrics.back().solve_rate;
    detail += " seed" + std::to_string(seed) + ": " + format_double(baseline) + "->" +
              format_double(final_rate);
    require(final_rate > baseline,
            "seed " + std::to_string(seed) + " did not improve (" +
                format_double(baseline) + " -> " + format_double(final_rate) + ")");
    improvement_sum += final_rate - baseline;
  }
  double mean_improvement = improvement_sum / 5.0;
  require(mean_improvement >= 0.10,
          "mean improvement " + format_double(mean_improvement) + " below 0.10;" + detail);
}

void criterion_bon_efficacy() {
  ToyPolicy verifier = ToyPolicy::uniform({});
  BonConfig bon_cfg;
  ToolLimits limits;

  int correct = 0;
  for (int group = 0; group < 200; ++group) {
    EnvConfig env_cfg;
    env_cfg.difficulty = 2;
    env_cfg.seed = 5000 + static_cast<std::uint64_t>(group);
    GeneratedTask generated = generate_task(env_cfg);
    ToolRegistry registry = registry_for_task(generated.task);

    auto build = [&](bool confirmed, std::uint64_t traj_seed) {
      TrajectoryBuilder builder(generated.task, traj_seed);
      ToolCall call = confirmed ? canonical_tool_call(generated.task)
                                : corrupted_tool_call(generated.task);
      nlohmann::ordered_json line;
      line["tool_name"] = call.tool_name;
      line["tool_input"] = call.tool_input;
      Action tool_action = parse_solver_action("Checking the scene.\n" + line.dump() + "\n");
      Observation obs = registry.invoke(call, limits);
      builder.append_step(tool_action, obs);
      Action answer = parse_solver_action("CONFIDENCE: 0.8\nFINAL_ANSWER: " + obs.payload +
                                          "\n");
      builder.append_step(answer, std::nullopt);
      return builder.finalize(0.0);
    };

    int correct_position = group % 8;
    std::vector<Trajectory> candidates;
    for (int i = 0; i < 8; ++i) {
      candidates.push_back(build(i == correct_position,
                                 static_cast<std::uint64_t>(100 * group + i)));
    }
    BonResult result = best_of_n(verifier, candidates, bon_cfg);
    if (result.selected == correct_position) {
      ++correct;
    }
  }
  require(correct >= 190, "verifier-guided selection correct in " +
                              std::to_string(correct) + "/200 groups");
}

void criterion_repair_bookkeeping() {
  RunConfig cfg;
  cfg.tasks_per_iter = 250;
  cfg.rollouts_per_task = 4;
  cfg.group_size = 8;
  cfg.optim.group_size = 8;
  cfg.max_steps = 6;
  cfg.env.difficulty = 2;
  cfg.env.seed = 31;
  cfg.seed = 31;

  ToyPolicy policy(cfg.policy);
  EnvConfig env_cfg = cfg.env;
  std::vector<GeneratedTask> tasks = make_task_batch(env_cfg, cfg.tasks_per_iter, 0);
  InnerLoopResult inner = run_inner_loop(policy, tasks, cfg, 0);
  require(inner.trajectories.size() == 1000,
          "expected 1000 trajectories, kept " + std::to_string(inner.trajectories.size()) +
              " (aborted " + std::to_string(inner.aborted) + ")");

  int repaired_steps = 0;
  for (const ScoredTrajectory& scored : inner.trajectories) {
    for (const Step& step : scored.trajectory.steps) {
      require(step.repair_attempts <= cfg.repair.max_repairs_per_step,
              "repair attempts exceed the budget");
      if (step.repaired) {
        ++repaired_steps;
        require(step.pre_repair_verification.has_value(),
                "repaired step lacks its triggering verdict");
        require(step.pre_repair_verification->conf < cfg.reward.tau_conf,
                "repaired step had conf >= tau_conf");
      }
    }
    require(verify_log_consistency(scored.trajectory, cfg.reward),
            "stored rewards do not recompute from stored verification tuples");

    std::string encoded = encode_trajectory(scored.trajectory);
    Trajectory decoded = decode_trajectory(encoded);
    require(encode_trajectory(decoded) == encoded,
            "trajectory does not re-serialize bit-for-bit");
    require(verify_log_consistency(decoded, cfg.reward),
            "decoded trajectory fails the self-consistency sweep");
  }
  require(repaired_steps > 0, "the run produced no repaired steps to audit");
}

void criterion_sandbox_limits() {
  ToolRegistry registry = make_builtin_registry();
  registry.register_tool("sleeper", [](const nlohmann::json&) -> std::string {
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    return "late";
  });
  ToolLimits limits;
  limits.wall_clock_timeout = std::chrono::milliseconds(20);

  ToolCall nap{"sleeper", nlohmann::json::object()};
  for (int trial = 0; trial < 100; ++trial) {
    auto start = std::chrono::steady_clock::now();
    Observation obs = registry.invoke(nap, limits);
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - start)
                       .count();
    require(obs.status == ObservationStatus::Timeout,
            "trial " + std::to_string(trial) + " did not time out");
    require(elapsed <= 120, "trial " + std::to_string(trial) + " took " +
                                std::to_string(elapsed) + " ms");
  }

  std::mt19937_64 rng = make_rng(7);
  std::uniform_int_distribution<int> depth(1, 6);
  ToolLimits calc_limits;
  int value_count = 0;
  for (int i = 0; i < 10000; ++i) {
    std::string expr = testing::random_expression(rng, depth(rng));
    ToolCall call{"calculator", {{"expr", expr}}};
    Observation obs = registry.invoke(call, calc_limits);
    testing::OracleResult oracle = testing::oracle_eval(expr);
    if (oracle.status == testing::OracleStatus::Value) {
      ++value_count;
      require(obs.status == ObservationStatus::Ok,
              "calculator rejected a valid expression: " + expr);
      Rational reference(BigInt(oracle.numerator), BigInt(oracle.denominator));
      require(obs.payload == render_canonical(reference),
              "calculator disagrees with the oracle on: " + expr);
    } else {
      require(obs.status == ObservationStatus::ToolError,
              "calculator accepted an invalid expression: " + expr);
    }
  }
  require(value_count > 5000, "expression sweep exercised only " +
                                  std::to_string(value_count) + " value cases");
}

void criterion_determinism() {
  auto make_cfg = [](const std::filesystem::path& dir) {
    RunConfig cfg;
    cfg.n_iter = 3;
    cfg.tasks_per_iter = 16;
    cfg.rollouts_per_task = 4;
    cfg.group_size = 8;
    cfg.optim.group_size = 8;
    cfg.max_steps = 4;
    cfg.env.difficulty = 2;
    cfg.seed = 123;
    cfg.out_dir = dir.string();
    return cfg;
  };

  std::filesystem::path base =
      std::filesystem::temp_directory_path() / "serc_acceptance_det";
  std::filesystem::remove_all(base);
  std::filesystem::path dir_a = base / "a";
  std::filesystem::path dir_b = base / "b";

  RunConfig cfg_a = make_cfg(dir_a);
  ToyPolicy policy_a(cfg_a.policy);
  run_serc(policy_a, cfg_a);

  RunConfig cfg_b = make_cfg(dir_b);
  ToyPolicy policy_b(cfg_b.policy);
  run_serc(policy_b, cfg_b);

  require(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"),
          "metrics CSV differs between identical runs");
  for (int k = 0; k < 3; ++k) {
    char name[64];
    std::snprintf(name, sizeof(name), "trajectories_iter_%03d.jsonl", k);
    require(slurp(dir_a / name) == slurp(dir_b / name),
            std::string(name) + " differs between identical runs");
    std::snprintf(name, sizeof(name), "batches_iter_%03d.jsonl", k);
    require(slurp(dir_a / name) == slurp(dir_b / name),
            std::string(name) + " differs between identical runs");
  }
}

}  // namespace

int main() {
  struct Criterion {
    const char* label;
    void (*body)();
  };
  const std::vector<Criterion> criteria = {
      {"C1 equation oracles (10k randomized inputs vs 50-digit floats)",
       criterion_equation_oracles},
      {"C2 gate exactness (midpoint, monotonicity, strict threshold)",
       criterion_gate_exactness},
      {"C3 advantage laws (zero mean, shift/scale invariance, 1000 groups)",
       criterion_advantage_laws},
      {"C4 gradient vs central finite differences (20 batches)", criterion_gradient_check},
      {"C5 loss stationarity at theta == theta_old", criterion_loss_stationarity},
      {"C6 self-evolution smoke (5 seeds, 3 iterations, 64 tasks)",
       criterion_self_evolution},
      {"C7 best-of-n efficacy (200 synthetic candidate groups)", criterion_bon_efficacy},
      {"C8 repair bookkeeping and log self-consistency (1000 trajectories)",
       criterion_repair_bookkeeping},
      {"C9 sandbox limits and calculator-oracle agreement", criterion_sandbox_limits},
      {"C10 byte-identical reruns (metrics and logs)", criterion_determinism},
  };

  int failures = 0;
  for (const Criterion& criterion : criteria) {
    auto start = std::chrono::steady_clock::now();
    std::string failure;
    try {
      criterion.body();
    } catch (const std::exception& err) {
      failure = err.what();
    }
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - start)
                  .count();
    if (failure.empty()) {
      std::printf("[PASS] %s (%lld ms)\n", criterion.label, static_cast<long long>(ms));
    } else {
      ++failures;
      std::printf("[FAIL] %s (%lld ms): %s\n", criterion.label,
                  static_cast<long long>(ms), failure.c_str());
    }
  }
  if (failures != 0) {
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return 1;
  }
  std::printf("all %zu criteria passed\n", criteria.size());
  return 0;
}
