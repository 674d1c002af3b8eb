#include "serc/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>
#include <utility>

#include "serc/errors.hpp"
#include "serc/util.hpp"

namespace serc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// seed-stream salts, one per purpose so streams never collide
constexpr std::uint64_t kTaskStreamSalt = 0x7a53;
constexpr std::uint64_t kTrajectoryStreamSalt = 0x7261;
constexpr std::uint64_t kColdStartStreamSalt = 0xc01d;

double mean_or_zero(double sum, int count) {
  return count > 0 ? sum / count : 0.0;
}

// --- inner loop -------------------------------------------------------------

struct RolloutJob {
  const GeneratedTask* task = nullptr;
  int task_index = 0;
  int rollout_index = 0;
  std::uint64_t seed = 0;
};

Observation execute_tool_call(const ToolRegistry& registry, const ToolCall& call,
                              const ToolLimits& limits) {
  if (!registry.contains(call.tool_name)) {
    Observation obs;
    obs.source = call.tool_name;
    obs.payload = "unknown tool '" + call.tool_name + "'";
    obs.status = ObservationStatus::ToolError;
    return obs;
  }
  return registry.invoke(call, limits);
}

// Samples one solver action, retrying on malformed output up to the budget.
// Throws the last parse error when the budget runs out.
std::pair<ActionRecord, Action> sample_action_with_retries(PolicyBackend& policy,
                                                           const PolicyContext& ctx,
                                                           int retries,
                                                           std::mt19937_64& rng) {
  for (int attempt = 0;; ++attempt) {
    ActionRecord record = sample_solver_action(policy, ctx, rng);
    try {
      Action action = parse_solver_action(record.text);
      return {std::move(record), std::move(action)};
    } catch (const MalformedToolCall&) {
      if (attempt >= retries) {
        throw;
      }
    }
  }
}

VerificationTuple verify_with_retries(PolicyBackend& policy, const PolicyContext& ctx,
                                      int step_index, int retries, std::mt19937_64& rng) {
  for (int attempt = 0;; ++attempt) {
    std::string text = policy.generate(ctx, RoleMode::Verifier, rng);
    try {
      return parse_verification(text, step_index);
    } catch (const SchemaError&) {
      if (attempt >= retries) {
        throw;
      }
    }
  }
}

// Per-step record of the policy decision behind the committed action.
struct ChoiceSlot {
  std::optional<StepChoice> choice;
  double log_prob = 0.0;
};

ScoredTrajectory run_one_rollout(PolicyBackend& policy, const RolloutJob& job,
                                 const RunConfig& cfg, bool warmup) {
  const GeneratedTask& generated = *job.task;
  TrajectoryBuilder builder(generated.task, job.seed);
  auto rng = make_rng(job.seed);
  ToolRegistry registry = registry_for_task(generated.task);

  std::vector<ChoiceSlot> slots;

  for (int t = 1; t <= cfg.max_steps; ++t) {
    PolicyContext ctx;
    ctx.task = &generated.task;
    ctx.solver = builder.context();
    ctx.tools = &registry;
    ctx.limits = &cfg.limits;

    auto [record, action] =
        sample_action_with_retries(policy, ctx, cfg.protocol_retries, rng);

    std::optional<Observation> observation;
    if (action.kind == ActionKind::ToolCallStep) {
      observation = execute_tool_call(registry, *action.tool_call, cfg.limits);
    }
    builder.append_step(std::move(action), std::move(observation));

    ChoiceSlot slot;
    slot.choice = record.choice;
    slot.log_prob = record.log_prob;
    slots.push_back(std::move(slot));

    if (!warmup) {
      Step& step = builder.step_at(t);
      PolicyContext vctx;
      vctx.task = &generated.task;
      vctx.solver = builder.context();
      vctx.review = &step;
      vctx.tools = &registry;
      vctx.limits = &cfg.limits;
      VerificationTuple verdict =
          verify_with_retries(policy, vctx, t, cfg.protocol_retries, rng);
      ground_tool_check(verdict, generated.task, step, registry, cfg.limits);
      step.verification = verdict;

      GateResult gate = repair_gate(verdict.conf, cfg.reward);
      bool repaired = false;
      if (gate.triggered && cfg.repair.max_repairs_per_step > 0) {
        RepairOutcome outcome = run_repair_cycle(policy, builder, verdict, registry,
                                                 cfg.limits, cfg.repair, rng);
        if (outcome.applied) {
          repaired = true;
          Step& replacement = builder.step_at(t);
          double solver_conf =
              replacement.action.declared_confidence.value_or(0.5);
          ProcessRewardBreakdown breakdown =
              process_reward(*replacement.verification, solver_conf, cfg.reward);
          // the repair cost gates on the confidence that triggered the repair
          effective_step_reward(breakdown, gate, cfg.reward);
          replacement.rewards = breakdown;
          if (outcome.resample) {
            slots.back().choice = outcome.resample->choice;
            slots.back().log_prob = outcome.resample->log_prob;
          } else {
            slots.back().choice.reset();
            slots.back().log_prob = 0.0;
          }
        }
      }
      if (!repaired) {
        Step& settled = builder.step_at(t);
        double solver_conf = settled.action.declared_confidence.value_or(0.5);
        ProcessRewardBreakdown breakdown =
            process_reward(*settled.verification, solver_conf, cfg.reward);
        effective_step_reward(breakdown, gate, cfg.reward);
        settled.rewards = breakdown;
      }
    }

    if (builder.has_final_answer()) {
      break;
    }
  }

  ScoredTrajectory scored;
  scored.task_index = job.task_index;
  scored.rollout_index = job.rollout_index;

  if (builder.has_final_answer()) {
    const Step& last = builder.steps().back();
    std::string answer = extract_final_answer(last.action.content).value_or("");
    double r_out = outcome_reward(generated, answer);
    scored.solved = r_out == 1.0;
    scored.trajectory = builder.finalize(r_out);
  } else {
    scored.solved = false;
    scored.trajectory = builder.finalize_truncated(0.0);
  }

  double g = trajectory_return(scored.trajectory, cfg.returns);
  scored.trajectory.total_return = g;
  scored.sample.g_return = g;
  for (const ChoiceSlot& slot : slots) {
    if (slot.choice) {
      scored.sample.choices.push_back(*slot.choice);
      scored.sample.logp_old += slot.log_prob;
    }
  }
  return scored;
}

// --- persistence ------------------------------------------------------------

std::string iteration_suffix(int iteration) {
  std::string digits = std::to_string(iteration);
  while (digits.size() < 3) {
    digits.insert(digits.begin(), '0');
  }
  return digits;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  return out;
}

void write_trajectory_log(const std::filesystem::path& path, const OuterResult& result) {
  std::ofstream out = open_for_write(path);
  for (const ScoredTrajectory& scored : result.inner.trajectories) {
    out << encode_trajectory(scored.trajectory) << '\n';
  }
}

void write_batch_log(const std::filesystem::path& path, const OuterResult& result,
                     const ToyPolicy& policy) {
  std::ofstream out = open_for_write(path);
  for (std::size_t g = 0; g < result.groups.size(); ++g) {
    const GroupRecord& group = result.groups[g];
    ordered_json line;
    line["group"] = g;
    line["task_ids"] = ordered_json::array();
    line["returns"] = ordered_json::array();
    line["advantages"] = ordered_json::array();
    line["logp_old"] = ordered_json::array();
    line["logp_new"] = ordered_json::array();
    for (std::size_t m = 0; m < group.members.size(); ++m) {
      const ScoredTrajectory& scored =
          result.inner.trajectories[static_cast<std::size_t>(group.members[m])];
      line["task_ids"].push_back(scored.trajectory.task.id);
      line["returns"].push_back(group.batch.returns[m]);
      line["advantages"].push_back(group.batch.advantages[m]);
      line["logp_old"].push_back(group.batch.samples[m].logp_old);
      line["logp_new"].push_back(trajectory_logp(policy, group.batch.samples[m]));
    }
    line["degenerate"] = group.degenerate;
    line["loss"] = {{"surrogate", group.loss.surrogate},
                    {"kl", group.loss.kl},
                    {"entropy", group.loss.entropy},
                    {"total", group.loss.total}};
    out << line.dump() << '\n';
  }
}

// --- config parsing ---------------------------------------------------------

void expect_keys(const json& obj, std::initializer_list<const char*> keys,
                 const std::string& prefix) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : keys) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown config key '" + prefix + item.key() + "'");
    }
  }
}

int read_int(const json& obj, const char* key, int fallback, const std::string& prefix) {
  if (!obj.contains(key)) {
    return fallback;
  }
  if (!obj[key].is_number_integer()) {
    throw ConfigError("config key '" + prefix + key + "' must be an integer");
  }
  return obj[key].get<int>();
}

double read_real(const json& obj, const char* key, double fallback,
                 const std::string& prefix) {
  if (!obj.contains(key)) {
    return fallback;
  }
  if (!obj[key].is_number()) {
    throw ConfigError("config key '" + prefix + key + "' must be a number");
  }
  return obj[key].get<double>();
}

std::uint64_t read_seed(const json& obj, const char* key, std::uint64_t fallback,
                        const std::string& prefix) {
  if (!obj.contains(key)) {
    return fallback;
  }
  const json& value = obj[key];
  bool ok = value.is_number_unsigned() ||
            (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  if (!ok) {
    throw ConfigError("config key '" + prefix + key + "' must be a nonnegative integer");
  }
  return value.get<std::uint64_t>();
}

bool read_bool(const json& obj, const char* key, bool fallback, const std::string& prefix) {
  if (!obj.contains(key)) {
    return fallback;
  }
  if (!obj[key].is_boolean()) {
    throw ConfigError("config key '" + prefix + key + "' must be a boolean");
  }
  return obj[key].get<bool>();
}

std::string read_string(const json& obj, const char* key, std::string fallback,
                        const std::string& prefix) {
  if (!obj.contains(key)) {
    return fallback;
  }
  if (!obj[key].is_string()) {
    throw ConfigError("config key '" + prefix + key + "' must be a string");
  }
  return obj[key].get<std::string>();
}

}  // namespace

void validate(const RunConfig& cfg) {
  if (cfg.n_iter < 0) {
    throw ConfigError("n_iter must be nonnegative");
  }
  if (cfg.tasks_per_iter < 1 || cfg.rollouts_per_task < 1 || cfg.group_size < 1 ||
      cfg.max_steps < 1) {
    throw ConfigError("tasks_per_iter, rollouts_per_task, group_size and max_steps "
                      "must all be at least 1");
  }
  if (cfg.group_size != cfg.optim.group_size) {
    throw ConfigError("group_size (" + std::to_string(cfg.group_size) +
                      ") must match optim.group_size (" +
                      std::to_string(cfg.optim.group_size) + ")");
  }
  if (cfg.warmup_iterations < 0) {
    throw ConfigError("warmup_iterations must be nonnegative");
  }
  if (cfg.parallelism < 1) {
    throw ConfigError("parallelism must be at least 1");
  }
  if (cfg.protocol_retries < 0) {
    throw ConfigError("protocol_retries must be nonnegative");
  }
  if (cfg.cold_start_demos < 1) {
    throw ConfigError("cold_start_demos must be at least 1");
  }
  validate(cfg.reward);
  validate(cfg.returns);
  validate(cfg.optim);
  validate(cfg.env);
  validate(cfg.repair);
  validate(cfg.policy);
  validate(cfg.limits);
}

RunConfig run_config_from_json(const json& doc) {
  if (!doc.is_object()) {
    throw ConfigError("config document must be a JSON object");
  }
  expect_keys(doc,
              {"n_iter", "tasks_per_iter", "rollouts_per_task", "group_size", "max_steps",
               "warmup_iterations", "parallelism", "protocol_retries", "cold_start",
               "cold_start_demos", "timings", "out_dir", "seed", "reward", "returns",
               "optim", "env", "repair", "policy", "limits"},
              "");

  RunConfig cfg;
  cfg.n_iter = read_int(doc, "n_iter", cfg.n_iter, "");
  cfg.tasks_per_iter = read_int(doc, "tasks_per_iter", cfg.tasks_per_iter, "");
  cfg.rollouts_per_task = read_int(doc, "rollouts_per_task", cfg.rollouts_per_task, "");
  cfg.max_steps = read_int(doc, "max_steps", cfg.max_steps, "");
  cfg.warmup_iterations = read_int(doc, "warmup_iterations", cfg.warmup_iterations, "");
  cfg.parallelism = read_int(doc, "parallelism", cfg.parallelism, "");
  cfg.protocol_retries = read_int(doc, "protocol_retries", cfg.protocol_retries, "");
  cfg.cold_start = read_bool(doc, "cold_start", cfg.cold_start, "");
  cfg.cold_start_demos = read_int(doc, "cold_start_demos", cfg.cold_start_demos, "");
  cfg.timings = read_bool(doc, "timings", cfg.timings, "");
  cfg.out_dir = read_string(doc, "out_dir", cfg.out_dir, "");
  cfg.seed = read_seed(doc, "seed", cfg.seed, "");

  if (doc.contains("reward")) {
    const json& r = doc["reward"];
    expect_keys(r, {"lambda_tool", "beta_div", "kappa", "tau_conf", "repair_cost"},
                "reward.");
    cfg.reward.lambda_tool = read_real(r, "lambda_tool", cfg.reward.lambda_tool, "reward.");
    cfg.reward.beta_div = read_real(r, "beta_div", cfg.reward.beta_div, "reward.");
    cfg.reward.kappa = read_real(r, "kappa", cfg.reward.kappa, "reward.");
    cfg.reward.tau_conf = read_real(r, "tau_conf", cfg.reward.tau_conf, "reward.");
    cfg.reward.repair_cost = read_real(r, "repair_cost", cfg.reward.repair_cost, "reward.");
  }
  if (doc.contains("returns")) {
    const json& r = doc["returns"];
    expect_keys(r, {"alpha_out", "gamma"}, "returns.");
    cfg.returns.alpha_out = read_real(r, "alpha_out", cfg.returns.alpha_out, "returns.");
    cfg.returns.gamma = read_real(r, "gamma", cfg.returns.gamma, "returns.");
  }
  if (doc.contains("optim")) {
    const json& o = doc["optim"];
    expect_keys(o,
                {"group_size", "adv_epsilon", "clip_range", "beta_kl", "beta_ent",
                 "learning_rate", "ratio_cap"},
                "optim.");
    cfg.optim.group_size = read_int(o, "group_size", cfg.optim.group_size, "optim.");
    cfg.optim.adv_epsilon = read_real(o, "adv_epsilon", cfg.optim.adv_epsilon, "optim.");
    cfg.optim.clip_range = read_real(o, "clip_range", cfg.optim.clip_range, "optim.");
    cfg.optim.beta_kl = read_real(o, "beta_kl", cfg.optim.beta_kl, "optim.");
    cfg.optim.beta_ent = read_real(o, "beta_ent", cfg.optim.beta_ent, "optim.");
    cfg.optim.learning_rate =
        read_real(o, "learning_rate", cfg.optim.learning_rate, "optim.");
    cfg.optim.ratio_cap = read_real(o, "ratio_cap", cfg.optim.ratio_cap, "optim.");
  }
  if (doc.contains("env")) {
    const json& e = doc["env"];
    expect_keys(e, {"kind", "difficulty", "seed"}, "env.");
    if (e.contains("kind")) {
      std::string kind = read_string(e, "kind", "", "env.");
      if (kind == task_kind_name(TaskKind::ArithmeticChain)) {
        cfg.env.kind = TaskKind::ArithmeticChain;
      } else if (kind == task_kind_name(TaskKind::TableQa)) {
        cfg.env.kind = TaskKind::TableQa;
      } else {
        throw ConfigError("env.kind must be '" +
                          task_kind_name(TaskKind::ArithmeticChain) + "' or '" +
                          task_kind_name(TaskKind::TableQa) + "' (got '" + kind + "')");
      }
    }
    cfg.env.difficulty = read_int(e, "difficulty", cfg.env.difficulty, "env.");
    cfg.env.seed = read_seed(e, "seed", cfg.env.seed, "env.");
  }
  if (doc.contains("repair")) {
    const json& r = doc["repair"];
    expect_keys(r, {"max_repairs_per_step"}, "repair.");
    cfg.repair.max_repairs_per_step =
        read_int(r, "max_repairs_per_step", cfg.repair.max_repairs_per_step, "repair.");
  }
  if (doc.contains("policy")) {
    const json& p = doc["policy"];
    expect_keys(p, {"embedding_dim", "template_count", "init_scale", "init_seed"},
                "policy.");
    cfg.policy.embedding_dim =
        read_int(p, "embedding_dim", cfg.policy.embedding_dim, "policy.");
    cfg.policy.template_count =
        read_int(p, "template_count", cfg.policy.template_count, "policy.");
    cfg.policy.init_scale = read_real(p, "init_scale", cfg.policy.init_scale, "policy.");
    cfg.policy.init_seed = read_seed(p, "init_seed", cfg.policy.init_seed, "policy.");
  }
  if (doc.contains("limits")) {
    const json& l = doc["limits"];
    expect_keys(l, {"wall_clock_timeout_ms", "max_output_bytes"}, "limits.");
    int timeout = read_int(l, "wall_clock_timeout_ms",
                           static_cast<int>(cfg.limits.wall_clock_timeout.count()),
                           "limits.");
    cfg.limits.wall_clock_timeout = std::chrono::milliseconds(timeout);
    cfg.limits.max_output_bytes = static_cast<std::size_t>(read_int(
        l, "max_output_bytes", static_cast<int>(cfg.limits.max_output_bytes), "limits."));
  }

  // the top-level count wins unless only the optimizer one is given
  if (doc.contains("group_size")) {
    cfg.group_size = read_int(doc, "group_size", cfg.group_size, "");
    if (doc.contains("optim") && doc["optim"].contains("group_size") &&
        cfg.optim.group_size != cfg.group_size) {
      throw ConfigError("group_size and optim.group_size disagree");
    }
    cfg.optim.group_size = cfg.group_size;
  } else {
    cfg.group_size = cfg.optim.group_size;
  }

  validate(cfg);
  return cfg;
}

std::string metrics_csv_row(const IterationMetrics& metrics) {
  std::string row = std::to_string(metrics.iteration);
  row += ',';
  row += format_double(metrics.mean_return);
  row += ',';
  row += format_double(metrics.solve_rate);
  row += ',';
  row += format_double(metrics.mean_conf);
  row += ',';
  row += format_double(metrics.repair_rate);
  row += ',';
  row += format_double(metrics.loss.total);
  row += ',';
  row += std::to_string(metrics.wall_clock_ms);
  return row;
}

InnerLoopResult run_inner_loop(PolicyBackend& policy, const std::vector<GeneratedTask>& tasks,
                               const RunConfig& cfg, int iteration) {
  validate(cfg);
  bool warmup = iteration < cfg.warmup_iterations;

  std::vector<RolloutJob> jobs;
  jobs.reserve(tasks.size() * static_cast<std::size_t>(cfg.rollouts_per_task));
  for (std::size_t task_i = 0; task_i < tasks.size(); ++task_i) {
    for (int r = 0; r < cfg.rollouts_per_task; ++r) {
      RolloutJob job;
      job.task = &tasks[task_i];
      job.task_index = static_cast<int>(task_i);
      job.rollout_index = r;
      std::uint64_t flat =
          static_cast<std::uint64_t>(task_i) * static_cast<std::uint64_t>(cfg.rollouts_per_task) +
          static_cast<std::uint64_t>(r);
      job.seed = mix_seed(cfg.seed, mix_seed(kTrajectoryStreamSalt,
                                             static_cast<std::uint64_t>(iteration)),
                          flat);
      jobs.push_back(job);
    }
  }

  std::vector<std::optional<ScoredTrajectory>> results(jobs.size());
  std::atomic<int> aborted{0};

  // Per-trajectory protocol failures are contained here; credential and
  // endpoint-level failures propagate because every other trajectory would
  // hit them too.
  auto run_job = [&](std::size_t i) {
    try {
      results[i] = run_one_rollout(policy, jobs[i], cfg, warmup);
    } catch (const SchemaError&) {
      ++aborted;
    } catch (const MalformedToolCall&) {
      ++aborted;
    } catch (const BackendProtocolError&) {
      ++aborted;
    } catch (const BackendTimeout&) {
      ++aborted;
    }
  };

  int width = std::min<int>(cfg.parallelism, static_cast<int>(jobs.size()));
  if (width <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      run_job(i);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(width));
    for (int w = 0; w < width; ++w) {
      workers.emplace_back([&] {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= jobs.size()) {
            return;
          }
          try {
            run_job(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mu);
            if (!failure) {
              failure = std::current_exception();
            }
            return;
          }
        }
      });
    }
    for (std::thread& worker : workers) {
      worker.join();
    }
    if (failure) {
      std::rethrow_exception(failure);
    }
  }

  InnerLoopResult out;
  out.aborted = aborted.load();
  out.trajectories.reserve(jobs.size());
  for (std::optional<ScoredTrajectory>& result : results) {
    if (result) {
      out.trajectories.push_back(std::move(*result));
    }
  }
  return out;
}

OuterResult run_outer_iteration(ToyPolicy& policy, const RunConfig& cfg, int iteration) {
  validate(cfg);
  auto started = std::chrono::steady_clock::now();

  EnvConfig env_cfg = cfg.env;
  env_cfg.seed = mix_seed(cfg.seed, env_cfg.seed, kTaskStreamSalt);
  std::vector<GeneratedTask> tasks =
      make_task_batch(env_cfg, cfg.tasks_per_iter, static_cast<std::uint64_t>(iteration));

  OuterResult result;
  result.inner = run_inner_loop(policy, tasks, cfg, iteration);

  // snapshot of the pre-update parameters; logp_old values were recorded
  // under these same parameters during sampling
  ToyPolicy old_policy = policy;

  const auto& kept = result.inner.trajectories;
  for (std::size_t begin = 0; begin < kept.size();
       begin += static_cast<std::size_t>(cfg.group_size)) {
    std::size_t end = std::min(kept.size(), begin + static_cast<std::size_t>(cfg.group_size));
    GroupRecord group;
    std::vector<TrajectorySample> samples;
    for (std::size_t i = begin; i < end; ++i) {
      group.members.push_back(static_cast<int>(i));
      samples.push_back(kept[i].sample);
    }
    group.batch = make_group_batch(std::move(samples), cfg.optim.adv_epsilon);
    group.degenerate = std::all_of(group.batch.returns.begin(), group.batch.returns.end(),
                                   [&](double g) { return g == group.batch.returns[0]; });
    group.loss = edlp_loss(group.batch, policy, old_policy, cfg.optim);
    result.groups.push_back(std::move(group));
  }

  std::vector<double> grad(policy.param_count(), 0.0);
  if (!result.groups.empty()) {
    for (const GroupRecord& group : result.groups) {
      std::vector<double> group_grad =
          edlp_gradient(group.batch, policy, old_policy, cfg.optim);
      for (std::size_t k = 0; k < grad.size(); ++k) {
        grad[k] += group_grad[k];
      }
    }
    double scale = 1.0 / static_cast<double>(result.groups.size());
    for (double& g : grad) {
      g *= scale;
    }
  }

  IterationMetrics& metrics = result.metrics;
  metrics.iteration = iteration;
  metrics.trajectories = static_cast<int>(kept.size());
  metrics.aborted = result.inner.aborted;
  metrics.groups = static_cast<int>(result.groups.size());

  double return_sum = 0.0;
  double conf_sum = 0.0;
  int verified_steps = 0;
  int gated_steps = 0;
  int repaired_steps = 0;
  for (const ScoredTrajectory& scored : kept) {
    return_sum += scored.sample.g_return;
    if (scored.solved) {
      ++metrics.solved;
    }
    for (const Step& step : scored.trajectory.steps) {
      if (!step.verification) {
        continue;
      }
      ++verified_steps;
      conf_sum += step.verification->conf;
      double gate_conf = step.pre_repair_verification ? step.pre_repair_verification->conf
                                                      : step.verification->conf;
      if (repair_gate(gate_conf, cfg.reward).triggered) {
        ++gated_steps;
      }
      if (step.repaired) {
        ++repaired_steps;
      }
    }
  }
  metrics.mean_return = mean_or_zero(return_sum, metrics.trajectories);
  metrics.solve_rate =
      metrics.trajectories > 0
          ? static_cast<double>(metrics.solved) / static_cast<double>(metrics.trajectories)
          : 0.0;
  metrics.mean_conf = mean_or_zero(conf_sum, verified_steps);
  metrics.repair_rate = gated_steps > 0
                            ? static_cast<double>(repaired_steps) / static_cast<double>(gated_steps)
                            : 0.0;

  for (const GroupRecord& group : result.groups) {
    metrics.loss.surrogate += group.loss.surrogate;
    metrics.loss.kl += group.loss.kl;
    metrics.loss.entropy += group.loss.entropy;
    metrics.loss.total += group.loss.total;
    if (group.degenerate) {
      ++metrics.degenerate_groups;
    }
  }
  if (!result.groups.empty()) {
    double scale = 1.0 / static_cast<double>(result.groups.size());
    metrics.loss.surrogate *= scale;
    metrics.loss.kl *= scale;
    metrics.loss.entropy *= scale;
    metrics.loss.total *= scale;
  }

  if (!result.groups.empty()) {
    apply_update(policy, grad, cfg.optim.learning_rate);
  }

  if (cfg.timings) {
    metrics.wall_clock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - started)
                                .count();
  }
  return result;
}

std::vector<IterationMetrics> run_serc(ToyPolicy& policy, const RunConfig& cfg) {
  validate(cfg);

  std::optional<std::ofstream> metrics_file;
  std::filesystem::path out_dir;
  if (!cfg.out_dir.empty()) {
    out_dir = cfg.out_dir;
    std::filesystem::create_directories(out_dir);
    metrics_file = open_for_write(out_dir / "metrics.csv");
    *metrics_file << kMetricsCsvHeader << '\n';
  }

  std::vector<IterationMetrics> metrics;
  metrics.reserve(static_cast<std::size_t>(cfg.n_iter));
  for (int iteration = 0; iteration < cfg.n_iter; ++iteration) {
    OuterResult result = run_outer_iteration(policy, cfg, iteration);
    if (metrics_file) {
      *metrics_file << metrics_csv_row(result.metrics) << '\n';
      std::string suffix = iteration_suffix(iteration);
      write_trajectory_log(out_dir / ("trajectories_iter_" + suffix + ".jsonl"), result);
      write_batch_log(out_dir / ("batches_iter_" + suffix + ".jsonl"), result, policy);
    }
    metrics.push_back(result.metrics);
  }
  return metrics;
}

std::vector<IterationMetrics> run_serc(const RunConfig& cfg) {
  ToyPolicy policy = cfg.cold_start ? cold_start_policy(cfg) : ToyPolicy(cfg.policy);
  return run_serc(policy, cfg);
}

ToyPolicy cold_start_policy(const RunConfig& cfg) {
  validate(cfg);

  EnvConfig env_cfg = cfg.env;
  env_cfg.seed = mix_seed(cfg.seed, env_cfg.seed, kColdStartStreamSalt);
  std::vector<GeneratedTask> demos = make_task_batch(env_cfg, cfg.cold_start_demos, 0);

  // The demonstrator settles every task in two moves: ground with the
  // canonical tool call, then answer from the tool output. Template counts
  // are its sufficient statistic; Laplace smoothing keeps every template
  // reachable so log-probabilities stay finite.
  int templates = cfg.policy.template_count;
  std::vector<double> counts(static_cast<std::size_t>(templates), 0.0);
  for (const GeneratedTask& demo : demos) {
    ToolRegistry registry = registry_for_task(demo.task);
    Observation obs = registry.invoke(canonical_tool_call(demo.task), cfg.limits);
    if (obs.status != ObservationStatus::Ok) {
      continue;
    }
    counts[0] += 1.0;  // canonical tool call
    if (templates > 2) {
      counts[2] += 1.0;  // answer with the last tool output
    }
  }

  double total = 0.0;
  for (double count : counts) {
    total += count + 1.0;
  }

  ToyPolicy policy(cfg.policy);
  std::vector<double>& params = policy.params();
  std::fill(params.begin(), params.end(), 0.0);
  int embedding = cfg.policy.embedding_dim;
  // only the bias feature feeds the first embedding coordinate, so the
  // logits equal the S row of that coordinate at every context
  params[0] = 1.0;  // W[bias feature, embedding 0]
  std::size_t s_base = static_cast<std::size_t>(kFeatureCount) * embedding;
  for (int k = 0; k < templates; ++k) {
    params[s_base + static_cast<std::size_t>(k)] = std::log((counts[k] + 1.0) / total);
  }
  return policy;
}

bool verify_log_consistency(const Trajectory& trajectory, const RewardConfig& cfg) {
  for (const Step& step : trajectory.steps) {
    if (step.verification.has_value() != step.rewards.has_value()) {
      return false;
    }
    if (!step.verification) {
      continue;
    }
    if (step.repaired && !step.pre_repair_verification) {
      return false;
    }
    double solver_conf = step.action.declared_confidence.value_or(0.5);
    ProcessRewardBreakdown breakdown =
        process_reward(*step.verification, solver_conf, cfg);
    double gate_conf = step.pre_repair_verification ? step.pre_repair_verification->conf
                                                    : step.verification->conf;
    GateResult gate = repair_gate(gate_conf, cfg);
    effective_step_reward(breakdown, gate, cfg);
    if (!(breakdown == *step.rewards)) {
      return false;
    }
  }
  return true;
}

BonResult best_of_n(PolicyBackend& verifier, const std::vector<Trajectory>& candidates,
                    const BonConfig& cfg) {
  if (candidates.empty()) {
    throw Error("best_of_n needs at least one candidate");
  }
  for (const Trajectory& candidate : candidates) {
    if (!(candidate.task == candidates.front().task)) {
      throw CandidatesMismatchError("candidates describe different tasks: '" +
                                    candidate.task.id + "' vs '" +
                                    candidates.front().task.id + "'");
    }
  }

  ReturnConfig aggregate_cfg = cfg.returns;
  aggregate_cfg.alpha_out = 0.0;  // no ground truth at selection time

  BonResult result;
  result.scores.reserve(candidates.size());
  double best = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Trajectory& candidate = candidates[i];
    ToolRegistry registry = registry_for_task(candidate.task);
    // seed by content so the verdicts follow the candidate across reorderings
    auto rng = make_rng(fnv1a64(candidate.task.id + "\x1f" + encode_trajectory(candidate)));

    std::vector<double> step_rewards;
    step_rewards.reserve(candidate.steps.size());
    SolverContext context;
    context.task_rendering = render_task(candidate.task);
    for (std::size_t s = 0; s < candidate.steps.size(); ++s) {
      const Step& step = candidate.steps[s];
      BeliefEntry entry;
      entry.action = step.action;
      entry.observation = step.observation;
      context.belief.push_back(std::move(entry));
      context.turn = static_cast<int>(s) + 2;

      PolicyContext vctx;
      vctx.task = &candidate.task;
      vctx.solver = context;
      vctx.review = &step;
      vctx.tools = &registry;
      vctx.limits = &cfg.limits;
      VerificationTuple verdict = verify_with_retries(
          verifier, vctx, static_cast<int>(s) + 1, cfg.protocol_retries, rng);
      ground_tool_check(verdict, candidate.task, step, registry, cfg.limits);

      double solver_conf = step.action.declared_confidence.value_or(0.5);
      ProcessRewardBreakdown breakdown = process_reward(verdict, solver_conf, cfg.reward);
      GateResult gate = repair_gate(verdict.conf, cfg.reward);
      step_rewards.push_back(effective_step_reward(breakdown, gate, cfg.reward));
    }

    double score =
        step_rewards.empty() ? 0.0 : trajectory_return(step_rewards, 0.0, aggregate_cfg);
    if (i == 0 || score > best) {
      best = score;
      result.selected = static_cast<int>(i);
    }
    result.scores.push_back(score);
  }
  return result;
}

}  // namespace serc
