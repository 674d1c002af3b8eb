#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "serc/tool_call.hpp"
#include "serc/verification.hpp"

namespace serc {

enum class ActionKind { TextStep, ToolCallStep, FinalAnswer };

enum class ObservationStatus { Ok, ToolError, Timeout };

struct Action {
  ActionKind kind = ActionKind::TextStep;
  std::string content;
  std::optional<ToolCall> tool_call;           // present iff kind == ToolCallStep
  std::optional<double> declared_confidence;   // present iff kind == FinalAnswer

  bool operator==(const Action&) const = default;
};

struct Observation {
  std::string source;
  std::string payload;
  ObservationStatus status = ObservationStatus::Ok;

  bool operator==(const Observation&) const = default;
};

struct Step {
  int index = 0;  // 1-based
  std::string state_digest;
  Action action;
  std::optional<Observation> observation;
  std::optional<VerificationTuple> verification;
  std::optional<ProcessRewardBreakdown> rewards;
  bool repaired = false;
  std::optional<VerificationTuple> pre_repair_verification;
  int repair_attempts = 0;

  bool operator==(const Step&) const = default;
};

struct TaskInstance {
  std::string id;
  std::string question;
  nlohmann::json scene;
  std::string answer_spec;  // integer | decimal | categorical

  bool operator==(const TaskInstance&) const = default;
};

struct Trajectory {
  TaskInstance task;
  std::uint64_t seed = 0;
  std::vector<Step> steps;
  std::string final_answer;
  double outcome_reward = 0.0;
  std::optional<double> total_return;

  bool operator==(const Trajectory&) const = default;
};

struct BeliefEntry {
  Action action;
  std::optional<Observation> observation;

  bool operator==(const BeliefEntry&) const = default;
};

// Everything the policy sees when choosing the next action. The rendering
// grows append-only as steps accumulate.
struct SolverContext {
  std::string task_rendering;
  std::vector<BeliefEntry> belief;
  int turn = 1;

  std::string render() const;

  bool operator==(const SolverContext&) const = default;
};

std::string render_task(const TaskInstance& task);

std::optional<std::string> extract_final_answer(std::string_view text);
std::optional<double> extract_declared_confidence(std::string_view text);

class TrajectoryBuilder {
 public:
  TrajectoryBuilder(TaskInstance task, std::uint64_t seed);

  const TaskInstance& task() const { return task_; }
  std::uint64_t seed() const { return seed_; }
  int step_count() const { return static_cast<int>(steps_.size()); }
  const std::vector<Step>& steps() const { return steps_; }
  bool has_final_answer() const;

  SolverContext context() const;                 // belief over all steps so far
  SolverContext context_through(int index) const;

  void append_step(Action action, std::optional<Observation> observation);

  // Replaces step `index` and discards everything after it.
  void replace_tail(int index, Step step);

  Step& step_at(int index);

  Trajectory finalize(double outcome_reward);
  // Step budget ran out before a final answer; final_answer stays empty.
  Trajectory finalize_truncated(double outcome_reward);

 private:
  void ensure_open() const;
  Trajectory take(double outcome_reward, std::string final_answer);

  TaskInstance task_;
  std::uint64_t seed_;
  std::vector<Step> steps_;
  bool finalized_ = false;
};

TrajectoryBuilder begin_trajectory(TaskInstance task, std::uint64_t seed);

std::string encode_trajectory(const Trajectory& trajectory);
Trajectory decode_trajectory(std::string_view line);

}  // namespace serc
