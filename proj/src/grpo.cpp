#include "serc/grpo.hpp"

#include <algorithm>
#include <cmath>

#include "serc/errors.hpp"

namespace serc {

namespace {

void ensure_complete(const GroupBatch& batch) {
  if (batch.samples.empty()) {
    throw Error("empty group batch");
  }
  if (batch.advantages.size() != batch.samples.size() ||
      batch.returns.size() != batch.samples.size()) {
    throw Error("group batch is missing returns or advantages");
  }
}

struct SampleTerms {
  double ratio = 1.0;
  bool capped = false;
  bool gradient_flows = false;
};

// Resolves which min/clip branch is active for one trajectory. The gradient
// flows only through the unclipped rho * advantage branch, and never through
// a capped ratio or an exact tie on the clip boundary.
SampleTerms resolve_sample(double logp_new, double logp_old, double advantage,
                           const OptimConfig& cfg) {
  SampleTerms terms;
  RatioResult rho = importance_ratio(logp_new, logp_old, cfg.ratio_cap);
  terms.ratio = rho.value;
  terms.capped = rho.capped;
  double lo = 1.0 - cfg.clip_range;
  double hi = 1.0 + cfg.clip_range;
  double unclipped = rho.value * advantage;
  double clipped = std::clamp(rho.value, lo, hi) * advantage;
  if (unclipped < clipped) {
    terms.gradient_flows = true;
  } else if (unclipped == clipped && rho.value > lo && rho.value < hi) {
    terms.gradient_flows = true;
  }
  terms.gradient_flows = terms.gradient_flows && !terms.capped;
  return terms;
}

}  // namespace

void validate(const ReturnConfig& cfg) {
  if (!(cfg.gamma > 0.0) || cfg.gamma > 1.0) {
    throw ConfigError("gamma must lie in (0, 1]");
  }
  if (!std::isfinite(cfg.alpha_out)) {
    throw ConfigError("alpha_out must be finite");
  }
}

void validate(const OptimConfig& cfg) {
  if (cfg.group_size < 1) {
    throw ConfigError("group_size must be at least 1");
  }
  if (cfg.adv_epsilon < 0.0) {
    throw ConfigError("adv_epsilon must be nonnegative");
  }
  if (!(cfg.clip_range > 0.0) || cfg.clip_range >= 1.0) {
    throw ConfigError("clip_range must lie in (0, 1)");
  }
  if (cfg.beta_kl < 0.0 || cfg.beta_ent < 0.0) {
    throw ConfigError("loss coefficients must be nonnegative");
  }
  if (!(cfg.learning_rate > 0.0)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!(cfg.ratio_cap > 0.0)) {
    throw ConfigError("ratio_cap must be positive");
  }
}

double trajectory_return(const std::vector<double>& step_rewards, double outcome_reward,
                         const ReturnConfig& cfg) {
  validate(cfg);
  if (step_rewards.empty()) {
    throw Error("trajectory_return needs at least one step");
  }
  double total = cfg.alpha_out * outcome_reward;
  double discount = 1.0;
  for (double reward : step_rewards) {
    total += discount * reward;
    discount *= cfg.gamma;
  }
  return total;
}

double trajectory_return(const Trajectory& trajectory, const ReturnConfig& cfg) {
  std::vector<double> rewards;
  rewards.reserve(trajectory.steps.size());
  for (const Step& step : trajectory.steps) {
    rewards.push_back(step.rewards ? step.rewards->r_t : 0.0);
  }
  return trajectory_return(rewards, trajectory.outcome_reward, cfg);
}

std::vector<double> group_advantages(const std::vector<double>& returns, double epsilon) {
  if (returns.empty()) {
    throw Error("group_advantages needs at least one return");
  }
  if (epsilon < 0.0) {
    throw ConfigError("adv_epsilon must be nonnegative");
  }
  double mean = 0.0;
  for (double value : returns) {
    mean += value;
  }
  mean /= static_cast<double>(returns.size());
  double variance = 0.0;
  for (double value : returns) {
    double d = value - mean;
    variance += d * d;
  }
  variance /= static_cast<double>(returns.size());
  double std_dev = std::sqrt(variance);

  std::vector<double> advantages(returns.size(), 0.0);
  for (std::size_t i = 0; i < returns.size(); ++i) {
    double d = returns[i] - mean;
    advantages[i] = d == 0.0 ? 0.0 : d / (std_dev + epsilon);
  }
  return advantages;
}

RatioResult importance_ratio(double logp_new, double logp_old, double ratio_cap) {
  if (!std::isfinite(logp_new) || !std::isfinite(logp_old)) {
    throw NonFiniteError("importance ratio needs finite log-probabilities");
  }
  if (!(ratio_cap > 0.0)) {
    throw ConfigError("ratio_cap must be positive");
  }
  double value = std::exp(logp_new - logp_old);
  if (value > ratio_cap) {
    return {ratio_cap, true};
  }
  return {value, false};
}

GroupBatch make_group_batch(std::vector<TrajectorySample> samples, double adv_epsilon) {
  GroupBatch batch;
  batch.samples = std::move(samples);
  batch.returns.reserve(batch.samples.size());
  for (const TrajectorySample& sample : batch.samples) {
    batch.returns.push_back(sample.g_return);
  }
  batch.advantages = group_advantages(batch.returns, adv_epsilon);
  return batch;
}

double trajectory_logp(const ToyPolicy& policy, const TrajectorySample& sample) {
  double total = 0.0;
  for (const StepChoice& choice : sample.choices) {
    total += policy.action_log_prob(choice.features, choice.template_id);
  }
  return total;
}

EdlpBreakdown edlp_loss(const GroupBatch& batch, const ToyPolicy& policy,
                        const ToyPolicy& old_policy, const OptimConfig& cfg) {
  validate(cfg);
  ensure_complete(batch);

  EdlpBreakdown breakdown;
  double surrogate_sum = 0.0;
  double kl_sum = 0.0;
  double entropy_sum = 0.0;
  std::size_t state_count = 0;

  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const TrajectorySample& sample = batch.samples[i];
    double advantage = batch.advantages[i];
    double logp_new = trajectory_logp(policy, sample);
    RatioResult rho = importance_ratio(logp_new, sample.logp_old, cfg.ratio_cap);
    double lo = 1.0 - cfg.clip_range;
    double hi = 1.0 + cfg.clip_range;
    surrogate_sum +=
        std::min(rho.value * advantage, std::clamp(rho.value, lo, hi) * advantage);

    for (const StepChoice& choice : sample.choices) {
      std::vector<double> lp_new = policy.log_probs(choice.features);
      std::vector<double> lp_old = old_policy.log_probs(choice.features);
      double kl = 0.0;
      double entropy = 0.0;
      for (std::size_t k = 0; k < lp_new.size(); ++k) {
        double p = std::exp(lp_new[k]);
        kl += p * (lp_new[k] - lp_old[k]);
        entropy -= p * lp_new[k];
      }
      kl_sum += kl;
      entropy_sum += entropy;
      ++state_count;
    }
  }

  double count = static_cast<double>(batch.samples.size());
  breakdown.surrogate = -surrogate_sum / count;
  if (state_count > 0) {
    breakdown.kl = kl_sum / static_cast<double>(state_count);
    breakdown.entropy = entropy_sum / static_cast<double>(state_count);
  }
  breakdown.total = breakdown.surrogate + cfg.beta_kl * breakdown.kl;
  if (cfg.beta_ent != 0.0) {
    breakdown.total -= cfg.beta_ent * breakdown.entropy;
  }
  return breakdown;
}

std::vector<double> edlp_gradient(const GroupBatch& batch, const ToyPolicy& policy,
                                  const ToyPolicy& old_policy, const OptimConfig& cfg) {
  validate(cfg);
  ensure_complete(batch);

  std::vector<double> grad(policy.param_count(), 0.0);
  double count = static_cast<double>(batch.samples.size());

  std::size_t state_count = 0;
  for (const TrajectorySample& sample : batch.samples) {
    state_count += sample.choices.size();
  }

  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const TrajectorySample& sample = batch.samples[i];
    double advantage = batch.advantages[i];
    double logp_new = trajectory_logp(policy, sample);
    SampleTerms terms = resolve_sample(logp_new, sample.logp_old, advantage, cfg);

    for (const StepChoice& choice : sample.choices) {
      std::vector<double> lp = policy.log_probs(choice.features);
      std::vector<double> probs(lp.size());
      for (std::size_t k = 0; k < lp.size(); ++k) {
        probs[k] = std::exp(lp[k]);
      }

      if (terms.gradient_flows && advantage != 0.0) {
        // d(-rho*A)/dlogits via dlogp/dlogits = onehot - p
        std::vector<double> gz(probs.size());
        for (std::size_t k = 0; k < gz.size(); ++k) {
          gz[k] = -probs[k];
        }
        gz[static_cast<std::size_t>(choice.template_id)] += 1.0;
        policy.accumulate_logit_grad(choice.features, gz,
                                     -(advantage * terms.ratio) / count, grad);
      }

      if (state_count > 0 && (cfg.beta_kl != 0.0 || cfg.beta_ent != 0.0)) {
        std::vector<double> lp_old = old_policy.log_probs(choice.features);
        double kl = 0.0;
        double entropy = 0.0;
        for (std::size_t k = 0; k < lp.size(); ++k) {
          kl += probs[k] * (lp[k] - lp_old[k]);
          entropy -= probs[k] * lp[k];
        }
        std::vector<double> gz(lp.size(), 0.0);
        double state_scale = 1.0 / static_cast<double>(state_count);
        for (std::size_t k = 0; k < lp.size(); ++k) {
          double d_kl = probs[k] * (lp[k] - lp_old[k] - kl);
          double d_entropy = -probs[k] * (lp[k] + entropy);
          gz[k] = cfg.beta_kl * d_kl * state_scale - cfg.beta_ent * d_entropy * state_scale;
        }
        policy.accumulate_logit_grad(choice.features, gz, 1.0, grad);
      }
    }
  }
  return grad;
}

double finite_diff_check(const GroupBatch& batch, ToyPolicy& policy, const ToyPolicy& old_policy,
                         const OptimConfig& cfg, double h) {
  if (!(h > 0.0)) {
    throw ConfigError("finite difference step must be positive");
  }
  std::vector<double> analytic = edlp_gradient(batch, policy, old_policy, cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < policy.param_count(); ++i) {
    double saved = policy.params()[i];
    policy.params()[i] = saved + h;
    double up = edlp_loss(batch, policy, old_policy, cfg).total;
    policy.params()[i] = saved - h;
    double down = edlp_loss(batch, policy, old_policy, cfg).total;
    policy.params()[i] = saved;
    double numeric = (up - down) / (2.0 * h);
    double error = std::abs(analytic[i] - numeric) / std::max(std::abs(analytic[i]), 1e-12);
    worst = std::max(worst, error);
  }
  return worst;
}

void apply_update(ToyPolicy& policy, const std::vector<double>& gradient, double learning_rate) {
  if (gradient.size() != policy.param_count()) {
    throw Error("gradient size does not match parameter count");
  }
  for (double g : gradient) {
    if (!std::isfinite(g)) {
      throw NonFiniteError("gradient has a non-finite coordinate");
    }
  }
  if (!std::isfinite(learning_rate)) {
    throw NonFiniteError("learning rate must be finite");
  }
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    policy.params()[i] -= learning_rate * gradient[i];
  }
}

}  // namespace serc
