#include "serc/trajectory.hpp"

#include <cstdlib>
#include <utility>

#include "serc/errors.hpp"

namespace serc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

const char* kind_name(ActionKind kind) {
  switch (kind) {
    case ActionKind::TextStep:
      return "text-step";
    case ActionKind::ToolCallStep:
      return "tool-call";
    case ActionKind::FinalAnswer:
      return "final-answer";
  }
  return "text-step";
}

std::optional<ActionKind> kind_from(std::string_view name) {
  if (name == "text-step") {
    return ActionKind::TextStep;
  }
  if (name == "tool-call") {
    return ActionKind::ToolCallStep;
  }
  if (name == "final-answer") {
    return ActionKind::FinalAnswer;
  }
  return std::nullopt;
}

const char* status_name(ObservationStatus status) {
  switch (status) {
    case ObservationStatus::Ok:
      return "ok";
    case ObservationStatus::ToolError:
      return "tool-error";
    case ObservationStatus::Timeout:
      return "timeout";
  }
  return "ok";
}

std::optional<ObservationStatus> status_from(std::string_view name) {
  if (name == "ok") {
    return ObservationStatus::Ok;
  }
  if (name == "tool-error") {
    return ObservationStatus::ToolError;
  }
  if (name == "timeout") {
    return ObservationStatus::Timeout;
  }
  return std::nullopt;
}

std::string render_observation(const Observation& obs) {
  std::string out = "tool_output: ";
  if (obs.status != ObservationStatus::Ok) {
    out += "[";
    out += status_name(obs.status);
    out += "] ";
  }
  out += obs.payload;
  return out;
}

std::string_view trim(std::string_view text) {
  std::size_t begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) {
    return {};
  }
  std::size_t end = text.find_last_not_of(" \t\r\n");
  return text.substr(begin, end - begin + 1);
}

std::optional<std::string_view> line_after_prefix(std::string_view text, std::string_view prefix) {
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
    std::string_view stripped = trim(line);
    if (stripped.substr(0, prefix.size()) == prefix) {
      return trim(stripped.substr(prefix.size()));
    }
    if (nl == std::string_view::npos) {
      break;
    }
    pos = nl + 1;
  }
  return std::nullopt;
}

}  // namespace

std::string render_task(const TaskInstance& task) {
  return "task: " + task.question + "\nscene: " + task.scene.dump();
}

std::string SolverContext::render() const {
  // append-only: the rendering for turn t+1 extends the rendering for
  // turn t by exactly one action/observation block
  std::string out = task_rendering;
  out += '\n';
  for (std::size_t i = 0; i < belief.size(); ++i) {
    std::string n = std::to_string(i + 1);
    out += "a" + n + ": " + belief[i].action.content + "\n";
    if (belief[i].observation) {
      out += "o" + n + ": " + render_observation(*belief[i].observation) + "\n";
    }
  }
  return out;
}

std::optional<std::string> extract_final_answer(std::string_view text) {
  auto rest = line_after_prefix(text, "FINAL_ANSWER:");
  if (!rest) {
    return std::nullopt;
  }
  return std::string(*rest);
}

std::optional<double> extract_declared_confidence(std::string_view text) {
  auto rest = line_after_prefix(text, "CONFIDENCE:");
  if (!rest || rest->empty()) {
    return std::nullopt;
  }
  std::string buf(*rest);
  char* end = nullptr;
  double value = std::strtod(buf.c_str(), &end);
  if (end == buf.c_str()) {
    return std::nullopt;
  }
  if (value < 0.0) {
    value = 0.0;
  }
  if (value > 1.0) {
    value = 1.0;
  }
  return value;
}

TrajectoryBuilder::TrajectoryBuilder(TaskInstance task, std::uint64_t seed)
    : task_(std::move(task)), seed_(seed) {}

TrajectoryBuilder begin_trajectory(TaskInstance task, std::uint64_t seed) {
  return TrajectoryBuilder(std::move(task), seed);
}

bool TrajectoryBuilder::has_final_answer() const {
  return !steps_.empty() && steps_.back().action.kind == ActionKind::FinalAnswer;
}

SolverContext TrajectoryBuilder::context() const { return context_through(step_count()); }

SolverContext TrajectoryBuilder::context_through(int index) const {
  if (index < 0 || index > step_count()) {
    throw OutOfRangeStepError("context_through index " + std::to_string(index));
  }
  SolverContext ctx;
  ctx.task_rendering = render_task(task_);
  ctx.belief.reserve(static_cast<std::size_t>(index));
  for (int i = 0; i < index; ++i) {
    ctx.belief.push_back({steps_[static_cast<std::size_t>(i)].action,
                          steps_[static_cast<std::size_t>(i)].observation});
  }
  ctx.turn = index + 1;
  return ctx;
}

void TrajectoryBuilder::ensure_open() const {
  if (finalized_) {
    throw Error("trajectory already finalized");
  }
}

namespace {

void validate_step_shape(const Action& action, const std::optional<Observation>& observation) {
  bool is_tool = action.kind == ActionKind::ToolCallStep;
  if (is_tool != action.tool_call.has_value()) {
    throw SchemaError("tool_call payload must be present exactly on tool-call actions");
  }
  if (is_tool != observation.has_value()) {
    throw ObservationMismatchError("observation must be present exactly on tool-call actions");
  }
  bool is_final = action.kind == ActionKind::FinalAnswer;
  if (is_final != action.declared_confidence.has_value()) {
    throw SchemaError("declared_confidence must be present exactly on final-answer actions");
  }
  if (is_final && !extract_final_answer(action.content)) {
    throw NoFinalAnswerError("final-answer action content lacks a FINAL_ANSWER line");
  }
}

}  // namespace

void TrajectoryBuilder::append_step(Action action, std::optional<Observation> observation) {
  ensure_open();
  if (has_final_answer()) {
    throw AppendAfterFinalError("cannot append after a final answer");
  }
  validate_step_shape(action, observation);
  Step step;
  step.index = step_count() + 1;
  step.state_digest = context().render();
  step.action = std::move(action);
  step.observation = std::move(observation);
  steps_.push_back(std::move(step));
}

void TrajectoryBuilder::replace_tail(int index, Step step) {
  ensure_open();
  if (index < 1 || index > step_count()) {
    throw OutOfRangeStepError("replace_tail index " + std::to_string(index));
  }
  validate_step_shape(step.action, step.observation);
  steps_.resize(static_cast<std::size_t>(index - 1));
  step.index = index;
  step.state_digest = context().render();
  steps_.push_back(std::move(step));
}

Step& TrajectoryBuilder::step_at(int index) {
  if (index < 1 || index > step_count()) {
    throw OutOfRangeStepError("step_at index " + std::to_string(index));
  }
  return steps_[static_cast<std::size_t>(index - 1)];
}

Trajectory TrajectoryBuilder::take(double outcome_reward, std::string final_answer) {
  finalized_ = true;
  Trajectory out;
  out.task = std::move(task_);
  out.seed = seed_;
  out.steps = std::move(steps_);
  out.final_answer = std::move(final_answer);
  out.outcome_reward = outcome_reward;
  return out;
}

Trajectory TrajectoryBuilder::finalize(double outcome_reward) {
  ensure_open();
  if (!has_final_answer()) {
    throw NoFinalAnswerError("finalize requires a terminal final-answer step");
  }
  std::string answer = *extract_final_answer(steps_.back().action.content);
  return take(outcome_reward, std::move(answer));
}

Trajectory TrajectoryBuilder::finalize_truncated(double outcome_reward) {
  ensure_open();
  if (has_final_answer()) {
    throw Error("trajectory has a final answer; use finalize");
  }
  return take(outcome_reward, "");
}

namespace {

ordered_json verification_json(const VerificationTuple& v) {
  ordered_json out;
  out["step_index"] = v.step_index;
  out["score"] = v.score;
  out["confidence"] = v.conf;
  out["critique"] = v.critique;
  out["tool_check"] = v.tool_check;
  out["tool_result"] = v.tool_result;
  return out;
}

ordered_json rewards_json(const ProcessRewardBreakdown& b) {
  ordered_json out;
  out["tool_term"] = b.tool_term;
  out["semantic_term"] = b.semantic_term;
  out["divergence_term"] = b.divergence_term;
  out["r_proc"] = b.r_proc;
  out["gate"] = b.gate;
  out["repair_triggered"] = b.repair_triggered;
  out["r_t"] = b.r_t;
  return out;
}

ordered_json step_json(const Step& step) {
  ordered_json out;
  out["index"] = step.index;
  ordered_json action;
  action["kind"] = kind_name(step.action.kind);
  action["content"] = step.action.content;
  if (step.action.tool_call) {
    ordered_json call;
    call["tool_name"] = step.action.tool_call->tool_name;
    call["tool_input"] = step.action.tool_call->tool_input;
    action["tool_call"] = std::move(call);
  }
  if (step.action.declared_confidence) {
    action["declared_confidence"] = *step.action.declared_confidence;
  }
  out["action"] = std::move(action);
  if (step.observation) {
    ordered_json obs;
    obs["source"] = step.observation->source;
    obs["payload"] = step.observation->payload;
    obs["status"] = status_name(step.observation->status);
    out["observation"] = std::move(obs);
  }
  if (step.verification) {
    out["verification"] = verification_json(*step.verification);
  }
  if (step.rewards) {
    out["rewards"] = rewards_json(*step.rewards);
  }
  if (step.repaired) {
    out["repaired"] = true;
    if (step.pre_repair_verification) {
      out["pre_repair_verification"] = verification_json(*step.pre_repair_verification);
    }
  }
  if (step.repair_attempts > 0) {
    out["repair_attempts"] = step.repair_attempts;
  }
  return out;
}

[[noreturn]] void malformed(const std::string& path, const std::string& detail) {
  throw MalformedRecord(path, detail);
}

const json& require_field(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    malformed(path, "missing");
  }
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& path) {
  const json& v = require_field(obj, key, path);
  if (!v.is_string()) {
    malformed(path, "expected a string");
  }
  return v.get<std::string>();
}

double require_number(const json& obj, const char* key, const std::string& path) {
  const json& v = require_field(obj, key, path);
  if (!v.is_number()) {
    malformed(path, "expected a number");
  }
  return v.get<double>();
}

bool require_bool(const json& obj, const char* key, const std::string& path) {
  const json& v = require_field(obj, key, path);
  if (!v.is_boolean()) {
    malformed(path, "expected a boolean");
  }
  return v.get<bool>();
}

int require_int(const json& obj, const char* key, const std::string& path) {
  const json& v = require_field(obj, key, path);
  if (!v.is_number_integer()) {
    malformed(path, "expected an integer");
  }
  return v.get<int>();
}

VerificationTuple decode_verification(const json& obj, int step_index, const std::string& path) {
  if (!obj.is_object()) {
    malformed(path, "expected an object");
  }
  VerificationTuple v;
  v.step_index = require_int(obj, "step_index", path + ".step_index");
  if (v.step_index != step_index) {
    malformed(path + ".step_index", "does not match the step index");
  }
  v.score = require_number(obj, "score", path + ".score");
  if (v.score < -1.0 || v.score > 1.0) {
    malformed(path + ".score", "outside [-1, 1]");
  }
  v.conf = require_number(obj, "confidence", path + ".confidence");
  if (v.conf < 0.0 || v.conf > 1.0) {
    malformed(path + ".confidence", "outside [0, 1]");
  }
  v.critique = require_string(obj, "critique", path + ".critique");
  v.tool_check = require_bool(obj, "tool_check", path + ".tool_check");
  v.tool_result = require_int(obj, "tool_result", path + ".tool_result");
  if (v.tool_check ? (v.tool_result != 1 && v.tool_result != -1) : v.tool_result != 0) {
    malformed(path + ".tool_result", "inconsistent with tool_check");
  }
  return v;
}

ProcessRewardBreakdown decode_rewards(const json& obj, const std::string& path) {
  if (!obj.is_object()) {
    malformed(path, "expected an object");
  }
  ProcessRewardBreakdown b;
  b.tool_term = require_number(obj, "tool_term", path + ".tool_term");
  b.semantic_term = require_number(obj, "semantic_term", path + ".semantic_term");
  b.divergence_term = require_number(obj, "divergence_term", path + ".divergence_term");
  b.r_proc = require_number(obj, "r_proc", path + ".r_proc");
  b.gate = require_number(obj, "gate", path + ".gate");
  b.repair_triggered = require_bool(obj, "repair_triggered", path + ".repair_triggered");
  b.r_t = require_number(obj, "r_t", path + ".r_t");
  return b;
}

}  // namespace

std::string encode_trajectory(const Trajectory& trajectory) {
  ordered_json root;
  root["task_id"] = trajectory.task.id;
  root["seed"] = trajectory.seed;
  ordered_json steps = ordered_json::array();
  for (const Step& step : trajectory.steps) {
    steps.push_back(step_json(step));
  }
  root["steps"] = std::move(steps);
  root["final_answer"] = trajectory.final_answer;
  root["outcome_reward"] = trajectory.outcome_reward;
  if (trajectory.total_return) {
    root["total_return"] = *trajectory.total_return;
  } else {
    root["total_return"] = nullptr;
  }
  ordered_json task;
  task["id"] = trajectory.task.id;
  task["question"] = trajectory.task.question;
  task["scene"] = trajectory.task.scene;
  task["answer_spec"] = trajectory.task.answer_spec;
  root["task"] = std::move(task);
  return root.dump();
}

Trajectory decode_trajectory(std::string_view line) {
  json root = json::parse(line, nullptr, false);
  if (root.is_discarded() || !root.is_object()) {
    malformed("", "not a JSON object");
  }

  std::string task_id = require_string(root, "task_id", "task_id");
  const json& seed_field = require_field(root, "seed", "seed");
  if (!seed_field.is_number_unsigned()) {
    malformed("seed", "expected an unsigned integer");
  }

  const json& task_obj = require_field(root, "task", "task");
  if (!task_obj.is_object()) {
    malformed("task", "expected an object");
  }
  TaskInstance task;
  task.id = require_string(task_obj, "id", "task.id");
  if (task.id != task_id) {
    malformed("task.id", "does not match task_id");
  }
  task.question = require_string(task_obj, "question", "task.question");
  task.scene = require_field(task_obj, "scene", "task.scene");
  task.answer_spec = require_string(task_obj, "answer_spec", "task.answer_spec");

  const json& steps = require_field(root, "steps", "steps");
  if (!steps.is_array()) {
    malformed("steps", "expected an array");
  }

  TrajectoryBuilder builder(task, seed_field.get<std::uint64_t>());

  struct Annotation {
    std::optional<VerificationTuple> verification;
    std::optional<ProcessRewardBreakdown> rewards;
    bool repaired = false;
    std::optional<VerificationTuple> pre_repair;
    int repair_attempts = 0;
  };
  std::vector<Annotation> annotations;

  for (std::size_t i = 0; i < steps.size(); ++i) {
    std::string path = "steps[" + std::to_string(i) + "]";
    const json& s = steps[i];
    if (!s.is_object()) {
      malformed(path, "expected an object");
    }
    int index = require_int(s, "index", path + ".index");
    if (index != static_cast<int>(i) + 1) {
      malformed(path + ".index", "expected " + std::to_string(i + 1));
    }

    const json& action_obj = require_field(s, "action", path + ".action");
    if (!action_obj.is_object()) {
      malformed(path + ".action", "expected an object");
    }
    Action action;
    std::string kind_text = require_string(action_obj, "kind", path + ".action.kind");
    auto kind = kind_from(kind_text);
    if (!kind) {
      malformed(path + ".action.kind", "unknown kind '" + kind_text + "'");
    }
    action.kind = *kind;
    action.content = require_string(action_obj, "content", path + ".action.content");

    bool is_tool = action.kind == ActionKind::ToolCallStep;
    if (action_obj.contains("tool_call") != is_tool) {
      malformed(path + ".action.tool_call", "present iff kind is tool-call");
    }
    if (is_tool) {
      const json& call = action_obj["tool_call"];
      if (!call.is_object()) {
        malformed(path + ".action.tool_call", "expected an object");
      }
      ToolCall tc;
      tc.tool_name = require_string(call, "tool_name", path + ".action.tool_call.tool_name");
      const json& input = require_field(call, "tool_input", path + ".action.tool_call.tool_input");
      if (!input.is_object()) {
        malformed(path + ".action.tool_call.tool_input", "expected an object");
      }
      tc.tool_input = input;
      action.tool_call = std::move(tc);
    }

    bool is_final = action.kind == ActionKind::FinalAnswer;
    if (action_obj.contains("declared_confidence") != is_final) {
      malformed(path + ".action.declared_confidence", "present iff kind is final-answer");
    }
    if (is_final) {
      double dc = require_number(action_obj, "declared_confidence",
                                 path + ".action.declared_confidence");
      if (dc < 0.0 || dc > 1.0) {
        malformed(path + ".action.declared_confidence", "outside [0, 1]");
      }
      action.declared_confidence = dc;
      if (i + 1 != steps.size()) {
        malformed(path + ".action.kind", "final-answer before the last step");
      }
    }

    std::optional<Observation> observation;
    if (s.contains("observation") != is_tool) {
      malformed(path + ".observation", "present iff the action is a tool call");
    }
    if (is_tool) {
      const json& obs = s["observation"];
      if (!obs.is_object()) {
        malformed(path + ".observation", "expected an object");
      }
      Observation o;
      o.source = require_string(obs, "source", path + ".observation.source");
      o.payload = require_string(obs, "payload", path + ".observation.payload");
      std::string status_text = require_string(obs, "status", path + ".observation.status");
      auto status = status_from(status_text);
      if (!status) {
        malformed(path + ".observation.status", "unknown status '" + status_text + "'");
      }
      o.status = *status;
      observation = std::move(o);
    }

    Annotation ann;
    if (s.contains("verification")) {
      ann.verification = decode_verification(s["verification"], index, path + ".verification");
    }
    if (s.contains("rewards")) {
      ann.rewards = decode_rewards(s["rewards"], path + ".rewards");
    }
    if (s.contains("repaired")) {
      const json& rep = s["repaired"];
      if (!rep.is_boolean()) {
        malformed(path + ".repaired", "expected a boolean");
      }
      ann.repaired = rep.get<bool>();
    }
    if (s.contains("pre_repair_verification")) {
      if (!ann.repaired) {
        malformed(path + ".pre_repair_verification", "present without repaired flag");
      }
      ann.pre_repair = decode_verification(s["pre_repair_verification"], index,
                                           path + ".pre_repair_verification");
    }
    if (s.contains("repair_attempts")) {
      int attempts = require_int(s, "repair_attempts", path + ".repair_attempts");
      if (attempts < 0) {
        malformed(path + ".repair_attempts", "negative");
      }
      ann.repair_attempts = attempts;
    }
    annotations.push_back(std::move(ann));

    try {
      builder.append_step(std::move(action), std::move(observation));
    } catch (const MalformedRecord&) {
      throw;
    } catch (const Error& e) {
      malformed(path, e.what());
    }
  }

  for (std::size_t i = 0; i < annotations.size(); ++i) {
    Step& step = builder.step_at(static_cast<int>(i) + 1);
    step.verification = std::move(annotations[i].verification);
    step.rewards = std::move(annotations[i].rewards);
    step.repaired = annotations[i].repaired;
    step.pre_repair_verification = std::move(annotations[i].pre_repair);
    step.repair_attempts = annotations[i].repair_attempts;
  }

  std::string final_answer = require_string(root, "final_answer", "final_answer");
  double outcome = require_number(root, "outcome_reward", "outcome_reward");

  Trajectory out;
  try {
    out = builder.has_final_answer() ? builder.finalize(outcome)
                                     : builder.finalize_truncated(outcome);
  } catch (const Error& e) {
    malformed("steps", e.what());
  }
  if (out.final_answer != final_answer) {
    malformed("final_answer", "does not match the terminal step");
  }

  const json& ret = require_field(root, "total_return", "total_return");
  if (ret.is_null()) {
    out.total_return = std::nullopt;
  } else if (ret.is_number()) {
    out.total_return = ret.get<double>();
  } else {
    malformed("total_return", "expected a number or null");
  }
  return out;
}

}  // namespace serc
