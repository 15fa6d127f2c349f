#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dflex/nn.hpp"
#include "dflex/rl.hpp"

namespace dflex {

enum class ActMode { Stochastic, Deterministic };

struct PolicyOutput {
  Eigen::VectorXd action;  // in [-1, 1]^d
  double log_prob = 0.0;   // density of `action`, squash correction included
};

/// Diagonal Gaussian in pre-squash space followed by tanh. The network emits
/// [mean; log_std] and log_std is clamped to [kLogStdMin, kLogStdMax].
class SquashedGaussianPolicy {
 public:
  static constexpr double kLogStdMin = -20.0;
  static constexpr double kLogStdMax = 2.0;

  SquashedGaussianPolicy() = default;
  SquashedGaussianPolicy(int obs_dim, int act_dim, const std::vector<int>& hidden, std::mt19937_64& rng);
  /// Throws ShapeMismatch unless the output width is even.
  explicit SquashedGaussianPolicy(nn::Mlp net);

  [[nodiscard]] int obs_dim() const { return net_.input_size(); }
  [[nodiscard]] int act_dim() const { return net_.output_size() / 2; }
  nn::Mlp& net() { return net_; }
  [[nodiscard]] const nn::Mlp& net() const { return net_; }

  /// Log density of an action strictly inside (-1, 1)^d.
  [[nodiscard]] double log_prob(const Eigen::VectorXd& obs, const Eigen::VectorXd& action) const;

 private:
  nn::Mlp net_;
};

/// log(1 - tanh(u)^2) without cancellation for large |u|.
double log_one_minus_tanh_sq(double u);

/// Throws NonFiniteObservation or ShapeMismatch.
PolicyOutput sac_act(const SquashedGaussianPolicy& policy, const Eigen::VectorXd& obs, ActMode mode,
                     std::mt19937_64& rng);

/// One independent learner: actor, twin critics with slow targets, optimizers, replay.
struct SacAgent {
  SacAgent(int obs_dim, int act_dim, const RlConfig& cfg, std::mt19937_64& rng);

  SquashedGaussianPolicy policy;
  nn::Mlp q1, q2, q1_target, q2_target;
  nn::Adam policy_opt, q1_opt, q2_opt;
  ReplayBuffer buffer;
};

struct SacLosses {
  double critic = 0.0;        // mean of the two critics' squared TD errors
  double actor = 0.0;         // mean(alpha log pi - min Q)
  double entropy_term = 0.0;  // mean(alpha log pi)
  double q_mean = 0.0;        // mean min Q at the policy's actions
};

/// Mean squared difference.
double critic_loss(const Eigen::VectorXd& q, const Eigen::VectorXd& target);

struct ActorObjective {
  double loss = 0.0;          // mean(alpha log pi - min(Q1, Q2))
  double entropy_term = 0.0;  // mean(alpha log pi)
  double q_mean = 0.0;
  Eigen::VectorXd grad;       // d loss / d policy parameters
};

/// Reparameterized actor loss for fixed standard-normal noise `eps`
/// (act_dim x batch), with its exact gradient.
ActorObjective sac_actor_objective(const SquashedGaussianPolicy& policy, const nn::Mlp& q1, const nn::Mlp& q2,
                                   const Eigen::MatrixXd& obs, const Eigen::MatrixXd& eps, double alpha);

/// One gradient step on both critics, then the actor, then the targets.
/// Throws BufferUnderflow when the buffer holds fewer than a batch.
SacLosses sac_update(SacAgent& agent, const RlConfig& cfg, std::mt19937_64& rng);

/// Frozen per-building actors with the statistics they were trained under.
struct SacPolicies {
  std::vector<SquashedGaussianPolicy> actors;
  ObservationStats stats;

  /// Deterministic action of building i.
  [[nodiscard]] Action act(const StepContext& ctx, std::size_t i) const;

  [[nodiscard]] nn::Checkpoint to_checkpoint() const;
  /// Throws MissingArtifact or ShapeMismatch.
  static SacPolicies from_checkpoint(const nn::Checkpoint& ckpt);
};

struct SacTrainConfig {
  RlConfig rl;
  RewardConfig reward;
  int episodes = 60;
  int episode_steps = 24;
  int updates_per_step = 1;
  double init_temp_spread_c = 1.0;
  /// <= 0 picks 1 / delta^2, so a tracking error of delta costs 0.5 per step.
  double reward_scale = 0.0;
};

struct TrainResult {
  std::vector<CurveRow> curve;  // one row per episode
};

struct SacTrainResult : TrainResult {
  SacPolicies policies;
};

/// Learning-signal scale used by the training loops.
double resolve_reward_scale(double requested, const RewardConfig& reward);

/// Independent learners on random one-episode windows of `train`; every agent
/// stores the shared reward. Actions are uniform until the buffers hold a batch.
SacTrainResult train_sac(const Scenario& train, const ReferenceSignal& reference, const ObservationStats& stats,
                         const SacTrainConfig& cfg, std::uint64_t seed);

class SacController final : public Controller {
 public:
  explicit SacController(SacPolicies policies);
  [[nodiscard]] std::string name() const override { return "sac"; }
  std::vector<Action> act(const StepContext& ctx) override;
  [[nodiscard]] const SacPolicies& policies() const { return policies_; }

 private:
  SacPolicies policies_;
};

}  // namespace dflex
