#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "serc/tools.hpp"
#include "serc/trajectory.hpp"

namespace serc {

enum class TaskKind { ArithmeticChain, TableQa };

std::string task_kind_name(TaskKind kind);

struct EnvConfig {
  TaskKind kind = TaskKind::ArithmeticChain;
  int difficulty = 2;
  std::uint64_t seed = 0;

  bool operator==(const EnvConfig&) const = default;
};

void validate(const EnvConfig& cfg);

// Ground truth stays here, outside TaskInstance, so Solver and Verifier
// renderings never see it.
struct GeneratedTask {
  TaskInstance task;
  std::string ground_truth;
  EnvConfig origin;

  bool operator==(const GeneratedTask&) const = default;
};

GeneratedTask generate_task(const EnvConfig& cfg);
std::vector<GeneratedTask> make_task_batch(const EnvConfig& cfg, int count, std::uint64_t salt);

// 1.0 on canonical-equal answers ("21.0" matches "21"), else 0.0;
// ill-formed answers score 0.
double outcome_reward(const GeneratedTask& task, std::string_view final_answer);

// Reference solution computed from the scene payload directly, sharing
// nothing with the tool handlers.
std::string oracle_solve(const GeneratedTask& task);

std::string encode_task_record(const GeneratedTask& task);
GeneratedTask decode_task_record(std::string_view line);

TaskKind task_kind_of(const TaskInstance& task);
ToolRegistry registry_for_task(const TaskInstance& task);

// The one tool invocation that settles the task, derived from the scene.
ToolCall canonical_tool_call(const TaskInstance& task);

// Deterministic wrong-but-plausible variants used for behavior shaping.
std::string corrupted_expression(const std::string& expr);
ToolCall corrupted_tool_call(const TaskInstance& task);

bool answers_equal(std::string_view left, std::string_view right);

// Replaces the provisional tool_result with evidence from re-invoking
// the canonical tool call against the step's claim.
void ground_tool_check(VerificationTuple& tuple, const TaskInstance& task, const Step& step,
                       const ToolRegistry& registry, const ToolLimits& limits);

}  // namespace serc
