#include "serc/policy.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "serc/env.hpp"
#include "serc/errors.hpp"
#include "serc/util.hpp"

namespace serc {

namespace {

using nlohmann::ordered_json;

std::string tool_call_text(const ToolCall& call) {
  ordered_json line;
  line["tool_name"] = call.tool_name;
  line["tool_input"] = call.tool_input;
  return line.dump();
}

const TaskInstance& require_task(const PolicyContext& ctx) {
  if (ctx.task == nullptr) {
    throw Error("policy context carries no task");
  }
  return *ctx.task;
}

}  // namespace

std::string role_mode_name(RoleMode mode) {
  switch (mode) {
    case RoleMode::Solver:
      return "solver";
    case RoleMode::Verifier:
      return "verifier";
    case RoleMode::SelfRepair:
      return "self-repair";
  }
  return "unknown";
}

void validate(const ToyPolicyConfig& cfg) {
  if (cfg.embedding_dim < 1) {
    throw ConfigError("embedding_dim must be at least 1");
  }
  if (cfg.template_count < 1) {
    throw ConfigError("template_count must be at least 1");
  }
  if (cfg.init_scale < 0.0) {
    throw ConfigError("init_scale must be nonnegative");
  }
}

ToyPolicy::ToyPolicy(const ToyPolicyConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  std::size_t f = kFeatureCount;
  std::size_t e = static_cast<std::size_t>(cfg_.embedding_dim);
  std::size_t k = static_cast<std::size_t>(cfg_.template_count);
  params_.resize(f * e + e * k + 2 * e + e);
  auto rng = make_rng(cfg_.init_seed);
  std::normal_distribution<double> noise(0.0, cfg_.init_scale);
  for (double& p : params_) {
    p = noise(rng);
  }
}

ToyPolicy ToyPolicy::uniform(const ToyPolicyConfig& cfg) {
  ToyPolicy policy(cfg);
  std::size_t w_size = static_cast<std::size_t>(kFeatureCount) *
                       static_cast<std::size_t>(cfg.embedding_dim);
  std::fill(policy.params_.begin() + static_cast<std::ptrdiff_t>(w_size), policy.params_.end(),
            0.0);
  return policy;
}

std::vector<double> ToyPolicy::features(const PolicyContext& ctx) const {
  std::vector<double> phi(kFeatureCount, 0.0);
  phi[0] = 1.0;
  phi[1] = std::min(ctx.solver.turn, 8) / 8.0;
  bool has_ok_tool = false;
  for (const BeliefEntry& entry : ctx.solver.belief) {
    if (entry.observation && entry.observation->status == ObservationStatus::Ok) {
      has_ok_tool = true;
    }
  }
  phi[2] = has_ok_tool ? 1.0 : 0.0;
  if (!ctx.solver.belief.empty()) {
    const auto& last = ctx.solver.belief.back();
    if (last.observation && last.observation->status != ObservationStatus::Ok) {
      phi[3] = 1.0;
    }
  }
  if (ctx.task != nullptr) {
    TaskKind kind = task_kind_of(*ctx.task);
    phi[4] = kind == TaskKind::ArithmeticChain ? 1.0 : 0.0;
    phi[5] = kind == TaskKind::TableQa ? 1.0 : 0.0;
  }
  phi[6] = ctx.repair_hint.empty() ? 0.0 : 1.0;
  phi[7] = std::min(static_cast<double>(ctx.solver.belief.size()) / 8.0, 1.0);
  return phi;
}

std::vector<double> ToyPolicy::embed(const std::vector<double>& features) const {
  std::size_t e_dim = static_cast<std::size_t>(cfg_.embedding_dim);
  std::vector<double> embedding(e_dim, 0.0);
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    double phi = features.at(f);
    for (std::size_t e = 0; e < e_dim; ++e) {
      embedding[e] += phi * params_[f * e_dim + e];
    }
  }
  return embedding;
}

std::vector<double> ToyPolicy::log_probs(const std::vector<double>& features) const {
  std::size_t e_dim = static_cast<std::size_t>(cfg_.embedding_dim);
  std::size_t k_dim = static_cast<std::size_t>(cfg_.template_count);
  std::size_t s_base = kFeatureCount * e_dim;
  std::vector<double> embedding = embed(features);
  std::vector<double> logits(k_dim, 0.0);
  for (std::size_t e = 0; e < e_dim; ++e) {
    for (std::size_t k = 0; k < k_dim; ++k) {
      logits[k] += embedding[e] * params_[s_base + e * k_dim + k];
    }
  }
  double max_logit = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double logit : logits) {
    sum += std::exp(logit - max_logit);
  }
  double lse = max_logit + std::log(sum);
  for (double& logit : logits) {
    logit -= lse;
  }
  return logits;
}

double ToyPolicy::action_log_prob(const std::vector<double>& features, int template_id) const {
  if (template_id < 0 || template_id >= cfg_.template_count) {
    throw UnknownTemplateError("template id " + std::to_string(template_id) +
                               " outside vocabulary of " + std::to_string(cfg_.template_count));
  }
  return log_probs(features)[static_cast<std::size_t>(template_id)];
}

int ToyPolicy::sample_template(const std::vector<double>& features, std::mt19937_64& rng) const {
  std::vector<double> lp = log_probs(features);
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cumulative = 0.0;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    cumulative += std::exp(lp[k]);
    if (u < cumulative) {
      return static_cast<int>(k);
    }
  }
  return cfg_.template_count - 1;
}

double ToyPolicy::declared_confidence(const std::vector<double>& features) const {
  std::size_t e_dim = static_cast<std::size_t>(cfg_.embedding_dim);
  std::size_t c_base = kFeatureCount * e_dim +
                       e_dim * static_cast<std::size_t>(cfg_.template_count) + 2 * e_dim;
  std::vector<double> embedding = embed(features);
  double raw = 0.0;
  for (std::size_t e = 0; e < e_dim; ++e) {
    raw += embedding[e] * params_[c_base + e];
  }
  return sigmoid(raw);
}

std::pair<double, double> ToyPolicy::verifier_outputs(const std::vector<double>& features,
                                                      std::optional<int> tool_recheck) const {
  std::size_t e_dim = static_cast<std::size_t>(cfg_.embedding_dim);
  std::size_t v_base =
      kFeatureCount * e_dim + e_dim * static_cast<std::size_t>(cfg_.template_count);
  std::vector<double> embedding = embed(features);
  double score_raw = 0.0;
  double conf_raw = 0.0;
  for (std::size_t e = 0; e < e_dim; ++e) {
    score_raw += embedding[e] * params_[v_base + e * 2];
    conf_raw += embedding[e] * params_[v_base + e * 2 + 1];
  }
  double score = tool_recheck ? static_cast<double>(*tool_recheck) : std::tanh(score_raw);
  return {score, sigmoid(conf_raw)};
}

void ToyPolicy::accumulate_logit_grad(const std::vector<double>& features,
                                      const std::vector<double>& gz, double coeff,
                                      std::vector<double>& grad) const {
  std::size_t e_dim = static_cast<std::size_t>(cfg_.embedding_dim);
  std::size_t k_dim = static_cast<std::size_t>(cfg_.template_count);
  std::size_t s_base = kFeatureCount * e_dim;
  std::vector<double> embedding = embed(features);
  for (std::size_t e = 0; e < e_dim; ++e) {
    double de = 0.0;
    for (std::size_t k = 0; k < k_dim; ++k) {
      grad[s_base + e * k_dim + k] += coeff * embedding[e] * gz[k];
      de += params_[s_base + e * k_dim + k] * gz[k];
    }
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      grad[f * e_dim + e] += coeff * features[f] * de;
    }
  }
}

std::string ToyPolicy::render_template(const PolicyContext& ctx, int template_id,
                                       std::mt19937_64& rng) const {
  switch (template_id) {
    case 0:
      return "Let me confirm this with a tool.\n" +
             tool_call_text(canonical_tool_call(require_task(ctx)));
    case 1:
      return "Let me confirm this with a tool.\n" +
             tool_call_text(corrupted_tool_call(require_task(ctx)));
    case 2: {
      std::string payload = "0";
      for (auto it = ctx.solver.belief.rbegin(); it != ctx.solver.belief.rend(); ++it) {
        if (it->observation && it->observation->status == ObservationStatus::Ok) {
          payload = it->observation->payload;
          break;
        }
      }
      double conf = declared_confidence(features(ctx));
      return "CONFIDENCE: " + format_double(conf) + "\nFINAL_ANSWER: " + payload;
    }
    case 3: {
      int guess = std::uniform_int_distribution<int>(0, 99)(rng);
      double conf = declared_confidence(features(ctx));
      return "CONFIDENCE: " + format_double(conf) + "\nFINAL_ANSWER: " + std::to_string(guess);
    }
    case 4:
      return "Restating the task before deciding the next move: " + require_task(ctx).question;
    default:
      throw UnknownTemplateError("no rendering for template id " + std::to_string(template_id));
  }
}

std::string ToyPolicy::generate(const PolicyContext& ctx, RoleMode mode, std::mt19937_64& rng) {
  if (mode == RoleMode::Solver) {
    std::vector<double> phi = features(ctx);
    int choice = sample_template(phi, rng);
    return render_template(ctx, choice, rng);
  }

  if (mode == RoleMode::Verifier) {
    if (ctx.review == nullptr) {
      throw Error("verifier mode needs a step under review");
    }
    std::optional<int> recheck;
    bool tool_check = false;
    if (ctx.task != nullptr && ctx.tools != nullptr && ctx.limits != nullptr) {
      VerificationTuple probe;
      probe.step_index = ctx.review->index;
      ground_tool_check(probe, *ctx.task, *ctx.review, *ctx.tools, *ctx.limits);
      tool_check = probe.tool_check;
      if (probe.tool_check) {
        recheck = probe.tool_result;
      }
    }
    auto [score, conf] = verifier_outputs(features(ctx), recheck);
    std::string critique;
    if (!recheck) {
      critique = "No tool evidence applies to this step.";
    } else if (*recheck > 0) {
      critique = "Re-running the grounding tool matches the step's claim.";
    } else {
      critique = "Re-running the grounding tool contradicts the step's claim.";
    }
    ordered_json verdict;
    verdict["step_index"] = ctx.review->index;
    verdict["score"] = score;
    verdict["confidence"] = conf;
    verdict["critique"] = critique;
    verdict["tool_check"] = tool_check;
    return verdict.dump();
  }

  if (ctx.repair_target == nullptr) {
    throw Error("self-repair mode needs a verification target");
  }
  ordered_json decision;
  if (ctx.repair_target->tool_result == -1 && ctx.task != nullptr) {
    decision["action"] = "PATCH";
    decision["target_step"] = ctx.repair_target->step_index;
    decision["patch_type"] = "tool_call";
    decision["new_content"] = tool_call_text(canonical_tool_call(*ctx.task));
    decision["justification"] =
        "Tool evidence contradicts this step, so rebuild the call from the task scene.";
  } else {
    decision["action"] = "NO_CHANGE";
    decision["target_step"] = ctx.repair_target->step_index;
    decision["reason"] = "The flagged step still agrees with the tool evidence.";
  }
  return decision.dump();
}

ScriptedPolicy::ScriptedPolicy(Script script, std::string name)
    : script_(std::move(script)), name_(std::move(name)) {
  if (!script_) {
    throw ConfigError("scripted policy needs a callable script");
  }
}

std::string ScriptedPolicy::generate(const PolicyContext& ctx, RoleMode mode,
                                     std::mt19937_64& rng) {
  return script_(ctx, mode, rng);
}

ActionRecord sample_solver_action(PolicyBackend& backend, const PolicyContext& ctx,
                                  std::mt19937_64& rng) {
  if (auto* toy = dynamic_cast<ToyPolicy*>(&backend)) {
    std::vector<double> phi = toy->features(ctx);
    int choice = toy->sample_template(phi, rng);
    ActionRecord record;
    record.text = toy->render_template(ctx, choice, rng);
    record.log_prob = toy->action_log_prob(phi, choice);
    record.choice = StepChoice{std::move(phi), choice};
    return record;
  }
  return {backend.generate(ctx, RoleMode::Solver, rng), std::nullopt, 0.0};
}

Action parse_solver_action(const std::string& text) {
  Action action;
  action.content = text;
  if (extract_final_answer(text)) {
    action.kind = ActionKind::FinalAnswer;
    action.declared_confidence = extract_declared_confidence(text).value_or(0.5);
    return action;
  }
  if (auto call = parse_tool_call(text)) {
    action.kind = ActionKind::ToolCallStep;
    action.tool_call = std::move(call);
    return action;
  }
  action.kind = ActionKind::TextStep;
  return action;
}

}  // namespace serc
