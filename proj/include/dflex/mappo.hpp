#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dflex/nn.hpp"
#include "dflex/rl.hpp"
#include "dflex/sac.hpp"

namespace dflex {

/// Diagonal Gaussian whose mean is a network of the observation and whose
/// log standard deviation is a free parameter vector. Samples are unbounded;
/// they are clipped to [-1, 1] only when mapped to an Action.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(int obs_dim, int act_dim, const std::vector<int>& hidden, std::mt19937_64& rng,
                 double init_log_std = -0.5);
  /// Throws ShapeMismatch when the widths disagree.
  GaussianPolicy(nn::Mlp mean_net, Eigen::VectorXd log_std);

  [[nodiscard]] int obs_dim() const { return net_.input_size(); }
  [[nodiscard]] int act_dim() const { return net_.output_size(); }
  nn::Mlp& net() { return net_; }
  [[nodiscard]] const nn::Mlp& net() const { return net_; }
  Eigen::VectorXd& log_std() { return log_std_; }
  [[nodiscard]] const Eigen::VectorXd& log_std() const { return log_std_; }

  /// Throws NonFiniteObservation.
  [[nodiscard]] Eigen::VectorXd mean(const Eigen::VectorXd& obs) const;
  PolicyOutput sample(const Eigen::VectorXd& obs, std::mt19937_64& rng) const;
  [[nodiscard]] double log_prob(const Eigen::VectorXd& obs, const Eigen::VectorXd& action) const;

 private:
  nn::Mlp net_;
  Eigen::VectorXd log_std_;
};

/// Execution-time artifacts: actors and normalization only, no critic.
struct MappoPolicies {
  std::vector<GaussianPolicy> actors;
  ObservationStats stats;

  /// Deterministic (mean) action of building i from its local observation.
  [[nodiscard]] Action act(const StepContext& ctx, std::size_t i) const;

  [[nodiscard]] nn::Checkpoint to_checkpoint() const;
  static MappoPolicies from_checkpoint(const nn::Checkpoint& ckpt);
};

/// On-policy trajectories, one entry per time step. Per-agent quantities hold
/// one column (or element) per building.
struct RolloutBuffer {
  explicit RolloutBuffer(int n_agents = 0) : n_agents(n_agents) {}

  int n_agents;
  std::vector<Eigen::MatrixXd> obs;        // kObsSize x N per step
  std::vector<Eigen::VectorXd> state;      // global state per step
  std::vector<Eigen::MatrixXd> actions;    // kActSize x N, unclipped
  std::vector<Eigen::VectorXd> log_probs;  // N per step, behaviour policy
  std::vector<double> rewards;             // learner-scaled shared reward
  std::vector<double> values;
  std::vector<double> advantages;
  std::vector<double> td_residuals;
  std::vector<double> returns;
  std::vector<Eigen::VectorXd> ratios;  // N per step, from the latest update pass

  [[nodiscard]] std::size_t size() const { return rewards.size(); }
  void add(Eigen::MatrixXd o, Eigen::VectorXd s, Eigen::MatrixXd a, Eigen::VectorXd logp, double reward, double value);
  /// Runs gae over the steps added since the previous call, bootstrapping from `last_value`.
  void finish_segment(double last_value, double gamma, double lambda);
  void clear();

 private:
  std::size_t segment_start_ = 0;
};

struct PpoLosses {
  double policy = 0.0;  // mean over agents and minibatches of -surrogate
  double value = 0.0;
  double first_surrogate = 0.0;        // surrogate of the first minibatch of the first epoch
  double first_mean_advantage = 0.0;   // its mean normalized advantage
  double first_max_ratio_error = 0.0;  // max |rho - 1| there
  double clip_fraction = 0.0;
  int minibatches = 0;
};

struct MappoLearner {
  MappoLearner(std::size_t n_agents, const RlConfig& cfg, std::mt19937_64& rng, double init_log_std = -0.5);

  std::vector<GaussianPolicy> actors;
  std::vector<nn::Adam> actor_opts;
  std::vector<nn::Adam> log_std_opts;
  nn::Mlp critic;
  nn::Adam critic_opt;
};

/// Epochs over shuffled time-step minibatches of ceil(ppo_minibatch / N) steps.
/// Advantages are normalized per minibatch. Throws EmptyRollout.
PpoLosses ppo_update(MappoLearner& learner, RolloutBuffer& rollout, const RlConfig& cfg, std::mt19937_64& rng);

struct MappoTrainConfig {
  RlConfig rl;
  RewardConfig reward;
  int iterations = 40;
  int episodes_per_iteration = 4;
  int episode_steps = 24;
  double init_temp_spread_c = 1.0;
  double init_log_std = -0.5;
  double reward_scale = 0.0;  // as in SacTrainConfig
};

struct MappoTrainResult : TrainResult {
  MappoPolicies policies;
  nn::Mlp critic;
};

MappoTrainResult train_mappo(const Scenario& train, const ReferenceSignal& reference,
                             const ObservationStats& stats, const MappoTrainConfig& cfg, std::uint64_t seed);

class MappoController final : public Controller {
 public:
  explicit MappoController(MappoPolicies policies);
  [[nodiscard]] std::string name() const override { return "mappo"; }
  std::vector<Action> act(const StepContext& ctx) override;

 private:
  MappoPolicies policies_;
};

}  // namespace dflex
