#pragma once

#include <vector>

#include "serc/policy.hpp"
#include "serc/trajectory.hpp"

namespace serc {

struct ReturnConfig {
  double alpha_out = 1.0;
  double gamma = 0.99;

  bool operator==(const ReturnConfig&) const = default;
};

void validate(const ReturnConfig& cfg);

struct OptimConfig {
  int group_size = 8;
  double adv_epsilon = 1e-8;
  double clip_range = 0.2;
  double beta_kl = 0.001;
  double beta_ent = 0.01;
  // Toy-policy scale; hosted-model training would sit near 5e-7.
  double learning_rate = 1e-2;
  double ratio_cap = 1e6;

  bool operator==(const OptimConfig&) const = default;
};

void validate(const OptimConfig& cfg);

// alpha_out * r_out + sum_t gamma^(t-1) * r_t, left to right.
double trajectory_return(const std::vector<double>& step_rewards, double outcome_reward,
                         const ReturnConfig& cfg);

// Same aggregation, pulling r_t from annotated steps (0 for unverified ones)
// and r_out from the trajectory record.
double trajectory_return(const Trajectory& trajectory, const ReturnConfig& cfg);

// (g_i - mean) / (population std + epsilon); exact zeros where g_i == mean.
std::vector<double> group_advantages(const std::vector<double>& returns, double epsilon);

struct RatioResult {
  double value = 1.0;
  bool capped = false;
};

RatioResult importance_ratio(double logp_new, double logp_old, double ratio_cap);

// One trajectory's policy decisions, as needed for loss recomputation.
struct TrajectorySample {
  std::vector<StepChoice> choices;
  double logp_old = 0.0;
  double g_return = 0.0;
};

struct GroupBatch {
  std::vector<TrajectorySample> samples;
  std::vector<double> returns;
  std::vector<double> advantages;
};

GroupBatch make_group_batch(std::vector<TrajectorySample> samples, double adv_epsilon);

// Sum of current-policy log-probs over the sample's recorded choices.
double trajectory_logp(const ToyPolicy& policy, const TrajectorySample& sample);

struct EdlpBreakdown {
  double surrogate = 0.0;  // -mean of the clipped objective
  double kl = 0.0;         // mean KL(new policy || old) over visited states
  double entropy = 0.0;    // mean entropy of the new policy over visited states
  double total = 0.0;      // surrogate + beta_kl*kl - beta_ent*entropy
};

EdlpBreakdown edlp_loss(const GroupBatch& batch, const ToyPolicy& policy,
                        const ToyPolicy& old_policy, const OptimConfig& cfg);

// Exact gradient of edlp_loss, treating clip/min as piecewise-constant branch
// selections at the current point (zero at exact ties and at capped ratios).
std::vector<double> edlp_gradient(const GroupBatch& batch, const ToyPolicy& policy,
                                  const ToyPolicy& old_policy, const OptimConfig& cfg);

// Max over coordinates of |analytic - central difference| relative to
// max(|analytic|, 1e-12). Parameters are restored before returning.
double finite_diff_check(const GroupBatch& batch, ToyPolicy& policy, const ToyPolicy& old_policy,
                         const OptimConfig& cfg, double h);

// Plain gradient descent: params -= learning_rate * gradient.
void apply_update(ToyPolicy& policy, const std::vector<double>& gradient, double learning_rate);

}  // namespace serc
