#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "serc/policy.hpp"
#include "serc/tools.hpp"
#include "serc/trajectory.hpp"
#include "serc/verification.hpp"

namespace serc {

enum class RepairAction { Patch, NoChange };

struct RepairDecision {
  RepairAction action = RepairAction::NoChange;
  int target_step = 0;
  std::string patch_type;     // PATCH only: text | code | tool_call | parameter
  std::string new_content;    // PATCH only
  std::string justification;  // PATCH only, may be empty
  std::string reason;         // NO_CHANGE only

  bool operator==(const RepairDecision&) const = default;
};

// Finds the single-line PATCH or NO_CHANGE JSON inside possibly chatty text.
RepairDecision parse_repair_decision(const std::string& text);

// Pure structural patch: the target step's action is rebuilt from
// new_content and every later step is dropped (it depended on the patched
// one). Stale annotations on the target step are cleared. NO_CHANGE returns
// the prefix untouched.
std::vector<Step> apply_patch(const std::vector<Step>& prefix, const RepairDecision& decision);

struct RepairConfig {
  int max_repairs_per_step = 1;

  bool operator==(const RepairConfig&) const = default;
};

void validate(const RepairConfig& cfg);

struct RepairOutcome {
  bool applied = false;
  Step original_step;
  std::optional<Step> repaired_step;
  std::optional<VerificationTuple> re_verification;
  int attempts = 0;
  // The re-sampled solver action behind repaired_step, with its log-prob
  // when the backend is trainable.
  std::optional<ActionRecord> resample;
};

// One confidence-gated repair pass over the step named by verdict.step_index.
// Queries the policy in self-repair mode; on PATCH, re-samples the corrected
// segment in solver mode (the patch content rides along as a hint),
// re-executes any tool call, re-verifies, and commits the replacement to the
// builder. The caller owns the hard gate (verdict.conf below the threshold).
RepairOutcome run_repair_cycle(PolicyBackend& policy, TrajectoryBuilder& builder,
                               const VerificationTuple& verdict, const ToolRegistry& registry,
                               const ToolLimits& limits, const RepairConfig& cfg,
                               std::mt19937_64& rng);

}  // namespace serc
