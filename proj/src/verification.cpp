#include "serc/verification.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "serc/errors.hpp"
#include "serc/util.hpp"

namespace serc {

namespace {

using nlohmann::json;

double require_number(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    throw SchemaError(std::string("verification field '") + key + "' missing or not a number");
  }
  return it->get<double>();
}

VerificationTuple tuple_from_json(const json& obj, int expected_step) {
  auto idx = obj.find("step_index");
  if (idx == obj.end() || !idx->is_number_integer()) {
    throw SchemaError("verification field 'step_index' missing or not an integer");
  }
  int step_index = idx->get<int>();
  if (step_index != expected_step) {
    throw StepMismatchError("verification step_index " + std::to_string(step_index) +
                            " does not match expected step " + std::to_string(expected_step));
  }

  double score = require_number(obj, "score");
  if (score < -1.0 || score > 1.0) {
    throw RangeError("verification score outside [-1, 1]");
  }
  double conf = require_number(obj, "confidence");
  if (conf < 0.0 || conf > 1.0) {
    throw RangeError("verification confidence outside [0, 1]");
  }

  auto crit = obj.find("critique");
  if (crit == obj.end() || !crit->is_string()) {
    throw SchemaError("verification field 'critique' missing or not a string");
  }
  auto check = obj.find("tool_check");
  if (check == obj.end() || !check->is_boolean()) {
    throw SchemaError("verification field 'tool_check' missing or not a boolean");
  }

  VerificationTuple out;
  out.step_index = step_index;
  out.score = score;
  out.conf = conf;
  out.critique = crit->get<std::string>();
  out.tool_check = check->get<bool>();
  out.tool_result = out.tool_check ? (score >= 0.0 ? 1 : -1) : 0;
  return out;
}

}  // namespace

void validate(const RewardConfig& cfg) {
  if (cfg.lambda_tool < 0.0 || cfg.beta_div < 0.0 || cfg.kappa < 0.0 || cfg.repair_cost < 0.0) {
    throw ConfigError("reward coefficients must be nonnegative");
  }
  if (cfg.tau_conf < 0.0 || cfg.tau_conf > 1.0) {
    throw ConfigError("tau_conf must lie in [0, 1]");
  }
}

VerificationTuple parse_verification(std::string_view text, int expected_step) {
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
    std::size_t lead = line.find_first_not_of(" \t\r");
    if (lead != std::string_view::npos && line[lead] == '{') {
      json obj = json::parse(line.substr(lead), nullptr, false);
      if (obj.is_object() && obj.contains("step_index")) {
        return tuple_from_json(obj, expected_step);
      }
    }
    if (nl == std::string_view::npos) {
      break;
    }
    pos = nl + 1;
  }
  // tolerate pretty-printed output spanning several lines
  json whole = json::parse(text, nullptr, false);
  if (whole.is_object() && whole.contains("step_index")) {
    return tuple_from_json(whole, expected_step);
  }
  throw SchemaError("no verification object found in verifier output");
}

double bernoulli_kl(double p, double q) {
  q = std::clamp(q, 1e-6, 1.0 - 1e-6);
  p = std::clamp(p, 0.0, 1.0);
  double kl = 0.0;
  if (p > 0.0) {
    kl += p * std::log(p / q);
  }
  if (p < 1.0) {
    kl += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  }
  return std::max(kl, 0.0);
}

ProcessRewardBreakdown process_reward(const VerificationTuple& v, double solver_conf,
                                      const RewardConfig& cfg) {
  ProcessRewardBreakdown out;
  out.tool_term = cfg.lambda_tool * static_cast<double>(v.tool_result);
  out.semantic_term = v.score * v.conf;
  out.divergence_term = cfg.beta_div * bernoulli_kl(v.conf, solver_conf);
  out.r_proc = out.tool_term + out.semantic_term - out.divergence_term;
  return out;
}

GateResult repair_gate(double conf, const RewardConfig& cfg) {
  GateResult out;
  out.gate = sigmoid(cfg.kappa * (cfg.tau_conf - conf));
  out.triggered = conf < cfg.tau_conf;
  return out;
}

double effective_step_reward(ProcessRewardBreakdown& breakdown, const GateResult& gate,
                             const RewardConfig& cfg) {
  breakdown.gate = gate.gate;
  breakdown.repair_triggered = gate.triggered;
  breakdown.r_t = breakdown.r_proc - gate.gate * cfg.repair_cost;
  return breakdown.r_t;
}

}  // namespace serc
