#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "serc/env.hpp"
#include "serc/grpo.hpp"
#include "serc/policy.hpp"
#include "serc/repair.hpp"
#include "serc/tools.hpp"
#include "serc/trajectory.hpp"
#include "serc/verification.hpp"

namespace serc {

struct RunConfig {
  int n_iter = 3;
  int tasks_per_iter = 16;
  int rollouts_per_task = 4;
  int group_size = 8;  // must agree with optim.group_size
  int max_steps = 8;
  // Iterations below this index train on the outcome reward alone: no
  // verifier calls, no repair, no process terms.
  int warmup_iterations = 0;
  int parallelism = 1;
  // Re-queries after a malformed solver action or verifier line before the
  // trajectory is abandoned.
  int protocol_retries = 2;
  bool cold_start = false;
  int cold_start_demos = 100;
  bool timings = false;   // keep wall_clock_ms at 0 so logs stay reproducible
  std::string out_dir;    // empty: nothing is written
  RewardConfig reward;
  ReturnConfig returns;
  OptimConfig optim;
  EnvConfig env;
  RepairConfig repair;
  ToyPolicyConfig policy;
  ToolLimits limits;
  std::uint64_t seed = 0;
};

void validate(const RunConfig& cfg);

// Parses the documented configuration document (see README). Unknown keys
// are rejected so typos fail loudly instead of silently using a default.
RunConfig run_config_from_json(const nlohmann::json& doc);

struct IterationMetrics {
  int iteration = 0;
  double mean_return = 0.0;
  double solve_rate = 0.0;   // solved / trajectories, exactly
  double mean_conf = 0.0;    // mean verifier confidence over verified steps
  double repair_rate = 0.0;  // repaired steps / gate-triggered steps
  EdlpBreakdown loss;
  std::int64_t wall_clock_ms = 0;
  int trajectories = 0;
  int solved = 0;
  int aborted = 0;
  int degenerate_groups = 0;
  int groups = 0;
};

inline constexpr const char* kMetricsCsvHeader =
    "iteration,mean_return,solve_rate,mean_conf,repair_rate,loss,wall_clock_ms";

std::string metrics_csv_row(const IterationMetrics& metrics);

struct ScoredTrajectory {
  Trajectory trajectory;
  TrajectorySample sample;  // choices behind the committed steps, in order
  int task_index = 0;
  int rollout_index = 0;
  bool solved = false;
};

struct InnerLoopResult {
  std::vector<ScoredTrajectory> trajectories;  // task-major order, aborted removed
  int aborted = 0;
};

// Rolls out rollouts_per_task trajectories per task: sample, execute,
// verify, gate, repair, reward. A protocol failure that survives the retry
// budget aborts only its own trajectory.
InnerLoopResult run_inner_loop(PolicyBackend& policy, const std::vector<GeneratedTask>& tasks,
                               const RunConfig& cfg, int iteration = 0);

struct GroupRecord {
  std::vector<int> members;  // indices into InnerLoopResult::trajectories
  GroupBatch batch;
  bool degenerate = false;  // all returns equal: advantages are exact zeros
  EdlpBreakdown loss;
};

struct OuterResult {
  IterationMetrics metrics;
  InnerLoopResult inner;
  std::vector<GroupRecord> groups;
};

// One Algorithm-1 outer step: generate tasks, run the inner loop, group the
// rollouts, and apply exactly one gradient update from all groups combined.
OuterResult run_outer_iteration(ToyPolicy& policy, const RunConfig& cfg, int iteration);

// Full training run. The overload without a policy builds one from
// cfg.policy (or the cold-start estimate) and discards it afterwards.
std::vector<IterationMetrics> run_serc(ToyPolicy& policy, const RunConfig& cfg);
std::vector<IterationMetrics> run_serc(const RunConfig& cfg);

// Maximum-likelihood template prior fitted on scripted demonstrations:
// the returned policy emits those probabilities at every context, with
// neutral verifier and confidence heads.
ToyPolicy cold_start_policy(const RunConfig& cfg);

// Recomputes every annotated step reward from its stored verification tuple
// and compares against the stored breakdown field by field. Repaired steps
// gate on their pre-repair confidence.
bool verify_log_consistency(const Trajectory& trajectory, const RewardConfig& cfg);

struct BonConfig {
  RewardConfig reward;
  ReturnConfig returns;  // alpha_out is forced to 0 during aggregation
  ToolLimits limits;
  int protocol_retries = 2;
};

struct BonResult {
  int selected = 0;
  std::vector<double> scores;
};

// Process-reward-model selection: re-verifies every candidate step-wise with
// the given backend and picks the highest aggregate (lowest index on ties).
// Verdicts depend only on candidate content, never on position.
BonResult best_of_n(PolicyBackend& verifier, const std::vector<Trajectory>& candidates,
                    const BonConfig& cfg);

}  // namespace serc
