#pragma once

#include <string>
#include <string_view>

namespace serc {

// One verdict over one step: bounded semantic score, calibration
// confidence, free-text critique, and the tool re-check outcome.
// tool_result is +1/-1 only when tool_check ran, else 0.
struct VerificationTuple {
  int step_index = 0;
  double score = 0.0;
  double conf = 0.0;
  std::string critique;
  bool tool_check = false;
  int tool_result = 0;

  bool operator==(const VerificationTuple&) const = default;
};

struct RewardConfig {
  double lambda_tool = 0.5;
  double beta_div = 0.01;
  double kappa = 10.0;
  double tau_conf = 0.7;
  double repair_cost = 0.05;
};

void validate(const RewardConfig& cfg);

struct ProcessRewardBreakdown {
  double tool_term = 0.0;
  double semantic_term = 0.0;
  double divergence_term = 0.0;
  double r_proc = 0.0;
  double gate = 0.0;
  bool repair_triggered = false;
  double r_t = 0.0;

  bool operator==(const ProcessRewardBreakdown&) const = default;
};

struct GateResult {
  double gate = 0.0;
  bool triggered = false;
};

// Extracts the single JSON verdict line from verifier output, tolerating
// surrounding prose. tool_result is provisionally sign(score) when
// tool_check is set; callers with tool access re-ground it afterwards.
VerificationTuple parse_verification(std::string_view text, int expected_step);

// KL between Bernoulli(p) and Bernoulli(q); q is clamped away from {0,1}.
double bernoulli_kl(double p, double q);

ProcessRewardBreakdown process_reward(const VerificationTuple& v, double solver_conf,
                                      const RewardConfig& cfg);

GateResult repair_gate(double conf, const RewardConfig& cfg);

// Applies the gated repair cost to the breakdown and returns r_t.
double effective_step_reward(ProcessRewardBreakdown& breakdown, const GateResult& gate,
                             const RewardConfig& cfg);

}  // namespace serc
