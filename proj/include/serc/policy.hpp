#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "serc/tools.hpp"
#include "serc/trajectory.hpp"
#include "serc/verification.hpp"

namespace serc {

enum class RoleMode { Solver, Verifier, SelfRepair };

std::string role_mode_name(RoleMode mode);

// Everything a policy call may condition on. Solver mode reads task + solver;
// Verifier mode additionally reads review (the step under scrutiny);
// SelfRepair mode reads repair_target. tools and limits let grounded roles
// re-run factual checks.
struct PolicyContext {
  const TaskInstance* task = nullptr;
  SolverContext solver;
  const Step* review = nullptr;
  const VerificationTuple* repair_target = nullptr;
  std::string repair_hint;
  const ToolRegistry* tools = nullptr;
  const ToolLimits* limits = nullptr;
};

struct StepChoice {
  std::vector<double> features;
  int template_id = 0;

  bool operator==(const StepChoice&) const = default;
};

// A sampled solver action. choice and log_prob are present only for
// trainable backends; scripted and remote backends emit text alone.
struct ActionRecord {
  std::string text;
  std::optional<StepChoice> choice;
  double log_prob = 0.0;
};

class PolicyBackend {
 public:
  virtual ~PolicyBackend() = default;

  virtual std::string generate(const PolicyContext& ctx, RoleMode mode, std::mt19937_64& rng) = 0;
  virtual std::string name() const = 0;
};

inline constexpr int kFeatureCount = 8;
inline constexpr int kSolverTemplateCount = 5;

struct ToyPolicyConfig {
  int embedding_dim = 4;
  int template_count = kSolverTemplateCount;
  double init_scale = 0.1;
  std::uint64_t init_seed = 1;

  bool operator==(const ToyPolicyConfig&) const = default;
};

void validate(const ToyPolicyConfig& cfg);

// Linear-softmax policy over a fixed template vocabulary. The flat parameter
// vector is laid out as W (features x embedding), S (embedding x templates),
// V (embedding x 2, the verifier score/conf heads) and c (embedding, the
// declared-confidence head), which keeps gradient plumbing explicit.
//
// Template ids: 0 canonical tool call, 1 corrupted tool call, 2 answer with
// the last tool output, 3 answer with a guess, 4 restate the task. Rendering
// is defined for ids 0 through 4 only.
class ToyPolicy : public PolicyBackend {
 public:
  explicit ToyPolicy(const ToyPolicyConfig& cfg = {});

  // Same W draw, but zeroed S/V/c heads: uniform templates, score 0,
  // every confidence 0.5.
  static ToyPolicy uniform(const ToyPolicyConfig& cfg = {});

  const ToyPolicyConfig& config() const { return cfg_; }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::vector<double> features(const PolicyContext& ctx) const;
  std::vector<double> log_probs(const std::vector<double>& features) const;
  double action_log_prob(const std::vector<double>& features, int template_id) const;
  int sample_template(const std::vector<double>& features, std::mt19937_64& rng) const;
  double declared_confidence(const std::vector<double>& features) const;

  // score = tanh of head 1, conf = logistic of head 2. A tool re-check
  // overrides the score with its sign outright; conf is never overridden.
  std::pair<double, double> verifier_outputs(const std::vector<double>& features,
                                             std::optional<int> tool_recheck) const;

  // grad += coeff * d(logits . gz)/d(params). Only W and S receive
  // contributions; the scalar heads do not feed the template logits.
  void accumulate_logit_grad(const std::vector<double>& features, const std::vector<double>& gz,
                             double coeff, std::vector<double>& grad) const;

  std::string render_template(const PolicyContext& ctx, int template_id,
                              std::mt19937_64& rng) const;

  std::string generate(const PolicyContext& ctx, RoleMode mode, std::mt19937_64& rng) override;
  std::string name() const override { return "toy"; }

 private:
  std::vector<double> embed(const std::vector<double>& features) const;

  ToyPolicyConfig cfg_;
  std::vector<double> params_;
};

// Canned backend for tests and fixtures: the script sees the full context
// and role and returns the raw text.
class ScriptedPolicy : public PolicyBackend {
 public:
  using Script = std::function<std::string(const PolicyContext&, RoleMode, std::mt19937_64&)>;

  explicit ScriptedPolicy(Script script, std::string name = "scripted");

  std::string generate(const PolicyContext& ctx, RoleMode mode, std::mt19937_64& rng) override;
  std::string name() const override { return name_; }

 private:
  Script script_;
  std::string name_;
};

// Samples one solver action, recording the template choice and log-prob when
// the backend is trainable.
ActionRecord sample_solver_action(PolicyBackend& backend, const PolicyContext& ctx,
                                  std::mt19937_64& rng);

// Classifies raw solver text: a FINAL_ANSWER line wins, then a single
// embedded tool call, otherwise a prose step.
Action parse_solver_action(const std::string& text);

}  // namespace serc
