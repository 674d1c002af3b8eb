#include "serc/repair.hpp"

#include <array>
#include <utility>

#include <nlohmann/json.hpp>

#include "serc/env.hpp"
#include "serc/errors.hpp"

namespace serc {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view text) {
  std::size_t begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) {
    return {};
  }
  std::size_t end = text.find_last_not_of(" \t\r\n");
  return text.substr(begin, end - begin + 1);
}

std::optional<json> decision_candidate(std::string_view chunk) {
  json parsed = json::parse(chunk, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("action")) {
    return std::nullopt;
  }
  return parsed;
}

json find_decision_json(const std::string& text) {
  std::size_t begin = 0;
  while (begin <= text.size()) {
    std::size_t end = text.find('\n', begin);
    std::size_t stop = end == std::string::npos ? text.size() : end;
    std::string_view line = trim(std::string_view(text).substr(begin, stop - begin));
    if (!line.empty() && line.front() == '{') {
      if (auto candidate = decision_candidate(line)) {
        return *candidate;
      }
    }
    if (end == std::string::npos) {
      break;
    }
    begin = end + 1;
  }
  // tolerate a pretty-printed decision spanning several lines
  if (auto whole = decision_candidate(trim(text))) {
    return *whole;
  }
  throw SchemaError("no PATCH or NO_CHANGE decision in repair output");
}

int require_target_step(const json& decision) {
  auto it = decision.find("target_step");
  if (it == decision.end() || !it->is_number_integer()) {
    throw SchemaError("repair decision needs an integer target_step");
  }
  return it->get<int>();
}

std::string require_string_field(const json& decision, const char* key) {
  auto it = decision.find(key);
  if (it == decision.end() || !it->is_string()) {
    throw SchemaError(std::string("repair decision needs a string ") + key);
  }
  return it->get<std::string>();
}

}  // namespace

RepairDecision parse_repair_decision(const std::string& text) {
  json raw = find_decision_json(text);
  if (!raw["action"].is_string()) {
    throw SchemaError("repair action must be a string");
  }
  std::string action = raw["action"].get<std::string>();

  RepairDecision decision;
  if (action == "PATCH") {
    decision.action = RepairAction::Patch;
    decision.target_step = require_target_step(raw);
    decision.patch_type = require_string_field(raw, "patch_type");
    static constexpr std::array<std::string_view, 4> kPatchTypes = {"text", "code", "tool_call",
                                                                    "parameter"};
    bool known = false;
    for (std::string_view type : kPatchTypes) {
      known = known || type == decision.patch_type;
    }
    if (!known) {
      throw SchemaError("patch_type must be one of text, code, tool_call, parameter");
    }
    decision.new_content = require_string_field(raw, "new_content");
    if (auto it = raw.find("justification"); it != raw.end() && it->is_string()) {
      decision.justification = it->get<std::string>();
    }
    return decision;
  }
  if (action == "NO_CHANGE") {
    decision.action = RepairAction::NoChange;
    decision.target_step = require_target_step(raw);
    decision.reason = require_string_field(raw, "reason");
    return decision;
  }
  throw UnknownActionError("unknown repair action '" + action + "'");
}

std::vector<Step> apply_patch(const std::vector<Step>& prefix, const RepairDecision& decision) {
  if (decision.action == RepairAction::NoChange) {
    return prefix;
  }
  int target = decision.target_step;
  if (target < 1 || target > static_cast<int>(prefix.size())) {
    throw OutOfRangeStepError("patch target " + std::to_string(target) + " outside prefix of " +
                              std::to_string(prefix.size()) + " steps");
  }
  std::vector<Step> patched(prefix.begin(), prefix.begin() + target);
  Step& step = patched.back();
  step.action = parse_solver_action(decision.new_content);
  step.observation.reset();
  step.verification.reset();
  step.rewards.reset();
  return patched;
}

void validate(const RepairConfig& cfg) {
  if (cfg.max_repairs_per_step < 0) {
    throw ConfigError("max_repairs_per_step must be nonnegative");
  }
}

RepairOutcome run_repair_cycle(PolicyBackend& policy, TrajectoryBuilder& builder,
                               const VerificationTuple& verdict, const ToolRegistry& registry,
                               const ToolLimits& limits, const RepairConfig& cfg,
                               std::mt19937_64& rng) {
  validate(cfg);
  RepairOutcome outcome;
  outcome.original_step = builder.step_at(verdict.step_index);

  int attempts = 0;
  while (attempts < cfg.max_repairs_per_step) {
    ++attempts;

    PolicyContext repair_ctx;
    repair_ctx.task = &builder.task();
    repair_ctx.solver = builder.context();
    repair_ctx.review = &builder.step_at(verdict.step_index);
    repair_ctx.repair_target = &verdict;
    repair_ctx.tools = &registry;
    repair_ctx.limits = &limits;
    std::string decision_text = policy.generate(repair_ctx, RoleMode::SelfRepair, rng);

    RepairDecision decision;
    try {
      decision = parse_repair_decision(decision_text);
    } catch (const SchemaError&) {
      continue;
    }
    if (decision.action == RepairAction::NoChange) {
      break;
    }

    // Validate the structural patch before regenerating anything.
    try {
      apply_patch(builder.steps(), decision);
    } catch (const OutOfRangeStepError&) {
      continue;
    } catch (const MalformedToolCall&) {
      continue;
    }

    // The corrected segment is regenerated on-policy; the patch content
    // rides along as conditioning so the decision stays in the gradient.
    PolicyContext solver_ctx;
    solver_ctx.task = &builder.task();
    solver_ctx.solver = builder.context_through(decision.target_step - 1);
    solver_ctx.repair_hint = decision.new_content;
    solver_ctx.tools = &registry;
    solver_ctx.limits = &limits;
    ActionRecord record = sample_solver_action(policy, solver_ctx, rng);

    Step replacement;
    try {
      replacement.action = parse_solver_action(record.text);
    } catch (const MalformedToolCall&) {
      continue;
    }
    replacement.index = decision.target_step;
    if (replacement.action.kind == ActionKind::ToolCallStep) {
      try {
        replacement.observation = registry.invoke(*replacement.action.tool_call, limits);
      } catch (const UnknownToolError& err) {
        replacement.observation =
            Observation{replacement.action.tool_call->tool_name, err.what(),
                        ObservationStatus::ToolError};
      }
    }
    replacement.repaired = true;
    replacement.pre_repair_verification = verdict;
    replacement.repair_attempts = attempts;

    // Re-verify against the post-replacement context before committing, so a
    // malformed verdict leaves the builder untouched.
    SolverContext after = builder.context_through(decision.target_step - 1);
    after.belief.push_back({replacement.action, replacement.observation});
    after.turn += 1;
    PolicyContext verify_ctx;
    verify_ctx.task = &builder.task();
    verify_ctx.solver = std::move(after);
    verify_ctx.review = &replacement;
    verify_ctx.tools = &registry;
    verify_ctx.limits = &limits;
    std::string verdict_text = policy.generate(verify_ctx, RoleMode::Verifier, rng);
    VerificationTuple fresh;
    try {
      fresh = parse_verification(verdict_text, decision.target_step);
    } catch (const SchemaError&) {
      continue;
    }
    ground_tool_check(fresh, builder.task(), replacement, registry, limits);
    replacement.verification = fresh;

    builder.replace_tail(decision.target_step, std::move(replacement));
    outcome.applied = true;
    outcome.repaired_step = builder.step_at(decision.target_step);
    outcome.re_verification = fresh;
    outcome.resample = std::move(record);
    break;
  }
  outcome.attempts = attempts;
  return outcome;
}

}  // namespace serc
