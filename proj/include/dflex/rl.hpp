#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dflex/metrics.hpp"
#include "dflex/sim.hpp"

namespace dflex {

/// e^2/2 inside |e| <= delta, delta*(|e| - delta/2) outside. Throws InvalidParams for delta <= 0.
double huber(double e, double delta);

/// Mean comfort violation over buildings. Throws EmptyDistrict or RosterMismatch.
double comfort_loss(std::span<const double> temps, std::span<const ComfortBand> bands);

struct RewardConfig {
  double w_track = 1.0;
  double w_comfort = 10.0;
  double delta_kwh = 0.0;  // <= 0 means 0.1 * mean(r), resolved by with_default_delta
};

/// Throws InvalidParams for negative weights or an unresolved delta.
void validate(const RewardConfig& cfg);

/// Fills delta_kwh = 0.1 * mean(r) when it is unset.
RewardConfig with_default_delta(RewardConfig cfg, const ReferenceSignal& reference);

struct RewardTerms {
  double reward = 0.0;
  double tracking = 0.0;  // huber(y - r)
  double comfort = 0.0;   // comfort_loss
};

/// R = -(w_track * huber(y - r) + w_comfort * comfort_loss), shared by every agent.
RewardTerms global_reward(double y, double r, std::span<const double> temps,
                          std::span<const ComfortBand> bands, const RewardConfig& cfg);

// Local observation layout.
inline constexpr int kObsSize = 7;
inline constexpr int kActSize = 2;
enum ObsFeature : int { kSinHour, kCosHour, kTOut, kTIn, kSoc, kRef, kPrevLoad };

/// Per-building affine normalization of [T_out, T, soc, r, previous own load].
struct ObservationStats {
  static constexpr int kFeatures = 5;
  std::vector<std::array<double, kFeatures>> mean;
  std::vector<std::array<double, kFeatures>> scale;

  [[nodiscard]] std::size_t num_buildings() const { return mean.size(); }
  /// Flattened building-major, for checkpoints.
  [[nodiscard]] std::vector<double> flat_mean() const;
  [[nodiscard]] std::vector<double> flat_scale() const;
  static ObservationStats from_flat(const std::vector<double>& mean, const std::vector<double>& scale);
};

/// Statistics over every step of a training-period trace. A feature whose
/// standard deviation is below 1e-6 gets scale max(1, 0.1 * |mean|).
ObservationStats fit_observation_stats(const DistrictTrace& train_trace);

/// Observation of building i from its own state, its own disturbance and r_k only.
/// Throws NonFiniteObservation.
Eigen::VectorXd local_observation(const StepContext& ctx, std::size_t i, const ObservationStats& stats);

/// Critic input: per-building normalized (T, soc, previous load), then
/// normalized mean T_out, sin/cos hour and normalized r. Length 3N + 4.
Eigen::VectorXd global_state(const StepContext& ctx, const ObservationStats& stats);
inline int global_state_size(std::size_t n) { return 3 * static_cast<int>(n) + 4; }

/// Maps a in [-1, 1]^2 to u in [0, 1] and p in [p_min, p_max].
Action to_action(double a_hvac, double a_batt, const BuildingParams& params);

/// Steps a scenario one decision at a time, for training loops.
class DistrictEnv {
 public:
  DistrictEnv(const Scenario& scenario, const ReferenceSignal& reference, RewardConfig reward);

  /// Starts an episode covering steps [start, start + length).
  void reset(std::size_t start, std::size_t length, std::vector<BuildingState> initial);
  /// Random start on a multiple of `length`, leaving at least one step after
  /// the window. Initial states: T uniform on the band widened by
  /// `temp_spread_c` each side, SOC uniform on [soc_min, soc_max].
  void reset_random(std::size_t length, std::mt19937_64& rng, double temp_spread_c = 1.0);

  [[nodiscard]] StepContext context() const;
  RewardTerms step(const std::vector<Action>& actions);

  [[nodiscard]] bool done() const { return k_ >= end_; }
  [[nodiscard]] std::size_t k() const { return k_; }
  [[nodiscard]] const std::vector<BuildingState>& states() const { return states_; }
  [[nodiscard]] const Scenario& scenario() const { return *scenario_; }
  [[nodiscard]] const RewardConfig& reward_config() const { return reward_; }

 private:
  const Scenario* scenario_;
  const ReferenceSignal* reference_;
  RewardConfig reward_;
  std::vector<ComfortBand> bands_;
  std::vector<BuildingState> states_;
  std::vector<double> temps_;
  std::size_t k_ = 0;
  std::size_t end_ = 0;
  double y_prev_ = 0.0;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> td_residuals;
};

/// delta_k = R_k + gamma V_{k+1} - V_k and A_k = sum_j (gamma lambda)^j delta_{k+j},
/// by backward recursion. `values` carries the bootstrap V_K. Throws LengthMismatch.
GaeResult gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda);

/// min(rho A, clip(rho, 1 - eps, 1 + eps) A).
double ppo_clip_objective(double ratio, double advantage, double eps);
/// Derivative of ppo_clip_objective with respect to the ratio.
double ppo_clip_gradient(double ratio, double advantage, double eps);

/// Ring buffer of (o, a, R, o', done); storage grows on demand up to capacity.
class ReplayBuffer {
 public:
  ReplayBuffer(int obs_dim, int act_dim, std::size_t capacity = 1'000'000);

  void add(const Eigen::VectorXd& obs, const Eigen::VectorXd& act, double reward,
           const Eigen::VectorXd& next_obs, bool done);

  struct Batch {
    Eigen::MatrixXd obs, act, next_obs;  // columns are samples
    Eigen::VectorXd reward, done;
  };
  /// Uniform with replacement over the occupied slots. Throws BufferUnderflow
  /// when fewer than `batch` transitions are stored.
  Batch sample(int batch, std::mt19937_64& rng) const;

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] int obs_dim() const { return obs_dim_; }
  [[nodiscard]] int act_dim() const { return act_dim_; }

 private:
  int obs_dim_;
  int act_dim_;
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t next_ = 0;
  std::vector<double> obs_, act_, next_obs_, reward_, done_;
};

/// Hyper-parameters shared by both learners.
struct RlConfig {
  double gamma = 0.99;
  double alpha = 0.2;    // SAC entropy temperature, fixed
  double lambda = 0.95;  // GAE
  double clip = 0.2;     // PPO
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double tau = 0.005;  // target-network averaging
  int sac_batch = 256;
  std::size_t replay_capacity = 1'000'000;
  int ppo_minibatch = 1024;  // agent-samples per minibatch
  int ppo_epochs = 10;
  std::vector<int> hidden{64, 64};
  /// Multiplies rewards inside the learners only; reported rewards are unscaled.
  double reward_scale = 1.0;
};

/// Throws InvalidParams.
void validate(const RlConfig& cfg);

/// One row of a training curve; rewards are per-step means over the episode.
struct CurveRow {
  int episode = 0;
  double mean_reward = 0.0;
  double tracking_term = 0.0;
  double comfort_term = 0.0;
};

void write_training_curve(const std::vector<CurveRow>& curve, const std::filesystem::path& path);

/// Mean per-step reward terms of a finished trace, scored with `cfg`.
CurveRow score_trace(const DistrictTrace& trace, const std::vector<ComfortBand>& bands, const RewardConfig& cfg);

/// Raises glibc's mmap and trim thresholds so the batch-sized temporaries of
/// the learners are recycled instead of mapped and unmapped on every update.
/// Process-wide and idempotent; a no-op on other C libraries.
void tune_allocator_for_training();

/// Uniform random actions over the full action box; the learning baseline.
class RandomController final : public Controller {
 public:
  [[nodiscard]] std::string name() const override { return "random"; }
  void reset(const Scenario& scenario, std::uint64_t seed) override;
  std::vector<Action> act(const StepContext& ctx) override;

 private:
  std::mt19937_64 rng_;
};

}  // namespace dflex
