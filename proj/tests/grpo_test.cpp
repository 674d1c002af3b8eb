#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "serc/errors.hpp"
#include "serc/grpo.hpp"
#include "serc/policy.hpp"
#include "serc/util.hpp"

using namespace serc;

TEST_SUITE_BEGIN("returns_grpo");

namespace {

std::vector<double> random_features(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<double> phi(kFeatureCount);
  for (double& value : phi) {
    value = unit(rng);
  }
  phi[0] = 1.0;
  return phi;
}

// Builds a batch of trajectories sampled from `policy` itself, with logp_old
// shifted by a chosen offset per sample so the importance ratio lands at a
// known, boundary-safe spot: exp(offset).
GroupBatch sampled_batch(const ToyPolicy& policy, std::mt19937_64& rng, int group,
                         const std::vector<double>& ratio_offsets, double adv_epsilon) {
  std::vector<TrajectorySample> samples;
  std::uniform_int_distribution<int> n_choices(1, 3);
  std::uniform_int_distribution<int> pick(0, policy.config().template_count - 1);
  for (int i = 0; i < group; ++i) {
    TrajectorySample sample;
    int n = n_choices(rng);
    for (int t = 0; t < n; ++t) {
      StepChoice choice;
      choice.features = random_features(rng);
      choice.template_id = pick(rng);
      sample.choices.push_back(std::move(choice));
    }
    double offset = ratio_offsets[static_cast<std::size_t>(i) % ratio_offsets.size()];
    sample.logp_old = trajectory_logp(policy, sample) - offset;
    sample.g_return = static_cast<double>(i % 4) + (i % 2 == 0 ? 1.0 : 0.0);
    samples.push_back(std::move(sample));
  }
  return make_group_batch(std::move(samples), adv_epsilon);
}

}  // namespace

TEST_CASE("trajectory return aggregates discounted step rewards plus the outcome") {
  ReturnConfig cfg;
  cfg.alpha_out = 1.0;
  cfg.gamma = 0.5;
  CHECK(trajectory_return({0.25}, 1.0, cfg) == 1.25);

  cfg.alpha_out = 2.0;
  cfg.gamma = 0.9;
  CHECK(trajectory_return({1.0, 1.0, 1.0}, 1.0, cfg) ==
        doctest::Approx(4.71).epsilon(1e-12));

  cfg = ReturnConfig{};
  CHECK(trajectory_return({0.0, 0.0, 0.0}, 0.0, cfg) == 0.0);

  CHECK_THROWS_AS(trajectory_return({}, 1.0, cfg), Error);
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(trajectory_return({1.0}, 1.0, cfg), ConfigError);
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(trajectory_return({1.0}, 1.0, cfg), ConfigError);
}

TEST_CASE("trajectory return overload reads annotated steps") {
  Trajectory trajectory;
  trajectory.outcome_reward = 1.0;
  Step verified;
  verified.index = 1;
  verified.action.kind = ActionKind::TextStep;
  verified.action.content = "first";
  verified.rewards = ProcessRewardBreakdown{};
  verified.rewards->r_t = 0.5;
  Step unverified;
  unverified.index = 2;
  unverified.action.kind = ActionKind::TextStep;
  unverified.action.content = "second";
  trajectory.steps = {verified, unverified};

  ReturnConfig cfg;
  cfg.gamma = 0.5;
  // unverified steps contribute zero reward
  CHECK(trajectory_return(trajectory, cfg) == 1.5);
}

TEST_CASE("group advantages normalize against the group") {
  auto advantages = group_advantages({1.0, 0.0, 0.0, 1.0}, 0.0);
  REQUIRE(advantages.size() == 4);
  CHECK(advantages[0] == 1.0);
  CHECK(advantages[1] == -1.0);
  CHECK(advantages[2] == -1.0);
  CHECK(advantages[3] == 1.0);

  for (double value : group_advantages({3.0, 3.0, 3.0}, 1e-8)) {
    CHECK(value == 0.0);
  }
  CHECK(group_advantages({5.0}, 1e-8)[0] == 0.0);
  CHECK_THROWS_AS(group_advantages({}, 0.0), Error);
  CHECK_THROWS_AS(group_advantages({1.0}, -1.0), ConfigError);
}

TEST_CASE("advantage invariances hold bit for bit on integer groups") {
  std::vector<double> returns = {4.0, 1.0, 0.0, 3.0, 2.0, 2.0, 5.0, 1.0};
  auto base = group_advantages(returns, 0.0);

  double total = 0.0;
  for (double value : base) {
    total += value;
  }
  CHECK(std::abs(total) <= 1e-9);

  for (double shift : {1.0, -7.0, 128.0}) {
    std::vector<double> shifted = returns;
    for (double& value : shifted) {
      value += shift;
    }
    auto moved = group_advantages(shifted, 0.0);
    for (std::size_t i = 0; i < returns.size(); ++i) {
      CHECK(moved[i] == base[i]);
    }
  }

  for (double scale : {2.0, 0.25, 1024.0}) {
    std::vector<double> scaled = returns;
    for (double& value : scaled) {
      value *= scale;
    }
    auto stretched = group_advantages(scaled, 0.0);
    for (std::size_t i = 0; i < returns.size(); ++i) {
      CHECK(stretched[i] == base[i]);
    }
  }

  auto damped = group_advantages(returns, 1e-8);
  for (std::size_t i = 0; i < returns.size(); ++i) {
    CHECK(damped[i] == doctest::Approx(base[i]).epsilon(1e-6));
  }
}

TEST_CASE("importance ratio exponentiates the log gap under a cap") {
  CHECK(importance_ratio(-1.5, -1.5, 1e6).value == 1.0);
  CHECK_FALSE(importance_ratio(-1.5, -1.5, 1e6).capped);

  RatioResult doubled = importance_ratio(std::log(2.0), 0.0, 1e6);
  CHECK(doubled.value == doctest::Approx(2.0).epsilon(1e-12));

  RatioResult capped = importance_ratio(50.0, -50.0, 1e6);
  CHECK(capped.value == 1e6);
  CHECK(capped.capped);

  CHECK_THROWS_AS(importance_ratio(std::nan(""), 0.0, 1e6), NonFiniteError);
  CHECK_THROWS_AS(importance_ratio(0.0, -INFINITY, 1e6), NonFiniteError);
  CHECK_THROWS_AS(importance_ratio(0.0, 0.0, 0.0), ConfigError);
}

TEST_CASE("clipped objective pins down the textbook branches") {
  ToyPolicy policy = ToyPolicy::uniform({});
  OptimConfig cfg;
  cfg.beta_kl = 0.0;
  cfg.beta_ent = 0.0;

  GroupBatch batch;
  TrajectorySample sample;
  sample.logp_old = -std::log(1.5);  // no choices: logp_new = 0, rho = 1.5
  sample.g_return = 1.0;
  batch.samples = {sample};
  batch.returns = {1.0};

  batch.advantages = {1.0};
  CHECK(edlp_loss(batch, policy, policy, cfg).total ==
        doctest::Approx(-1.2).epsilon(1e-12));

  batch.advantages = {-1.0};
  CHECK(edlp_loss(batch, policy, policy, cfg).total ==
        doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("at the old policy the loss collapses to the mean advantage") {
  ToyPolicyConfig pc;
  pc.init_seed = 4;
  pc.init_scale = 0.8;
  ToyPolicy policy(pc);
  auto rng = make_rng(40);
  GroupBatch batch = sampled_batch(policy, rng, 8, {0.0}, 1e-8);

  OptimConfig cfg;
  cfg.beta_ent = 0.0;
  EdlpBreakdown breakdown = edlp_loss(batch, policy, policy, cfg);

  double advantage_sum = 0.0;
  for (double a : batch.advantages) {
    advantage_sum += a;
  }
  CHECK(breakdown.surrogate == -advantage_sum / 8.0);
  CHECK(breakdown.kl == 0.0);
  CHECK(breakdown.total == breakdown.surrogate);
}

TEST_CASE("kl and surrogate gradients vanish at the stationary point") {
  ToyPolicyConfig pc;
  pc.init_seed = 9;
  ToyPolicy policy(pc);
  auto rng = make_rng(41);
  GroupBatch batch = sampled_batch(policy, rng, 6, {0.0}, 1e-8);
  for (auto& sample : batch.samples) {
    sample.g_return = 2.0;  // equal returns: all advantages zero
  }
  batch = make_group_batch(std::move(batch.samples), 1e-8);

  OptimConfig cfg;
  cfg.beta_ent = 0.0;
  std::vector<double> grad = edlp_gradient(batch, policy, policy, cfg);
  for (double g : grad) {
    CHECK(g == 0.0);
  }
}

TEST_CASE("analytic gradients match finite differences across sizes") {
  int round = 0;
  for (int embedding : {1, 2, 3, 4, 5}) {
    for (int templates : {3, 4, 5, 8}) {
      ++round;
      ToyPolicyConfig pc;
      pc.embedding_dim = embedding;
      pc.template_count = templates;
      pc.init_scale = 0.6;
      pc.init_seed = static_cast<std::uint64_t>(round);
      ToyPolicy policy(pc);
      ToyPolicyConfig oc = pc;
      oc.init_seed = static_cast<std::uint64_t>(round) + 100;
      ToyPolicy old_policy(oc);

      auto rng = make_rng(static_cast<std::uint64_t>(round) * 13 + 1);
      GroupBatch batch =
          sampled_batch(policy, rng, 6, {-0.35, -0.08, 0.0, 0.12, 0.4}, 1e-8);

      OptimConfig cfg;
      std::vector<double> params_before = policy.params();
      double worst = finite_diff_check(batch, policy, old_policy, cfg, 1e-6);
      CHECK(worst <= 1e-5);
      CHECK(policy.params() == params_before);
    }
  }
}

TEST_CASE("degenerate and oversized finite-difference steps behave as documented") {
  ToyPolicyConfig pc;
  pc.init_scale = 1.0;
  pc.init_seed = 3;
  ToyPolicy policy(pc);
  auto rng = make_rng(77);
  GroupBatch batch = sampled_batch(policy, rng, 6, {0.05}, 1e-8);

  SUBCASE("zero-advantage batch with zero coefficients is exactly flat") {
    for (auto& sample : batch.samples) {
      sample.g_return = 1.0;
    }
    GroupBatch flat = make_group_batch(std::move(batch.samples), 1e-8);
    OptimConfig cfg;
    cfg.beta_kl = 0.0;
    cfg.beta_ent = 0.0;
    CHECK(finite_diff_check(flat, policy, policy, cfg, 1e-6) == 0.0);
  }

  SUBCASE("a coarse step reports its discretization error instead of hiding it") {
    OptimConfig cfg;
    cfg.beta_ent = 0.5;
    ToyPolicy old_policy = policy;
    double coarse = finite_diff_check(batch, policy, old_policy, cfg, 1e-1);
    double fine = finite_diff_check(batch, policy, old_policy, cfg, 1e-6);
    CHECK(coarse > fine);
    CHECK(coarse > 1e-5);
  }

  CHECK_THROWS_AS(finite_diff_check(batch, policy, policy, OptimConfig{}, 0.0), ConfigError);
}

TEST_CASE("gradient descent reduces the loss for small steps") {
  ToyPolicyConfig pc;
  pc.init_seed = 12;
  pc.init_scale = 0.7;
  ToyPolicy policy(pc);
  ToyPolicy old_policy = policy;
  auto rng = make_rng(55);
  GroupBatch batch = sampled_batch(policy, rng, 8, {0.0}, 1e-8);

  OptimConfig cfg;
  double before = edlp_loss(batch, policy, old_policy, cfg).total;
  std::vector<double> grad = edlp_gradient(batch, policy, old_policy, cfg);
  double norm = 0.0;
  for (double g : grad) {
    norm += g * g;
  }
  REQUIRE(norm > 0.0);

  for (double lr : {1e-4, 1e-5}) {
    ToyPolicy stepped = policy;
    apply_update(stepped, grad, lr);
    CHECK(edlp_loss(batch, stepped, old_policy, cfg).total < before);
  }
}

TEST_CASE("apply_update follows the gradient exactly") {
  ToyPolicy policy = ToyPolicy::uniform({});
  std::vector<double> before = policy.params();

  std::vector<double> zero(policy.param_count(), 0.0);
  apply_update(policy, zero, 0.5);
  CHECK(policy.params() == before);

  std::vector<double> grad(policy.param_count(), 0.0);
  grad[3] = 2.0;
  apply_update(policy, grad, 0.0);
  CHECK(policy.params() == before);

  apply_update(policy, grad, 0.1);
  CHECK(policy.params()[3] == before[3] - 0.2);

  grad[4] = std::nan("");
  CHECK_THROWS_AS(apply_update(policy, grad, 0.1), NonFiniteError);
  CHECK_THROWS_AS(apply_update(policy, {1.0, 2.0}, 0.1), Error);
}

TEST_CASE("optimizer config validation") {
  OptimConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.group_size = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = {};
  cfg.clip_range = 0.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg.clip_range = 1.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = {};
  cfg.adv_epsilon = -1e-9;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = {};
  cfg.beta_kl = -0.1;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = {};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = {};
  cfg.ratio_cap = -2.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("trajectory log-prob sums the recorded choices") {
  ToyPolicy policy;
  auto rng = make_rng(2);
  TrajectorySample sample;
  for (int t = 0; t < 3; ++t) {
    StepChoice choice;
    choice.features = random_features(rng);
    choice.template_id = t % policy.config().template_count;
    sample.choices.push_back(choice);
  }
  double expected = 0.0;
  for (const StepChoice& choice : sample.choices) {
    expected += policy.action_log_prob(choice.features, choice.template_id);
  }
  CHECK(trajectory_logp(policy, sample) == expected);

  GroupBatch batch = make_group_batch({sample}, 1e-8);
  CHECK(batch.returns.size() == 1);
  CHECK(batch.advantages == std::vector<double>{0.0});
}

TEST_SUITE_END();
