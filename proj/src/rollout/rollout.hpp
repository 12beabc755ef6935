#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "data/trajectory.hpp"
#include "envs/envs.hpp"
#include "model/model.hpp"

namespace slimdt::rollout {

/// Running history of one episode plus the expected return-to-go.
class RolloutState {
 public:
  RolloutState(double target_rtg, std::size_t state_dim, std::size_t action_dim);

  void observe(std::span<const double> state);
  /// Records the action taken at the current step and its reward, then
  /// advances rtg_hat by exact subtraction.
  void commit(std::span<const double> action, double reward);

  std::size_t step() const { return rewards_.size(); }
  double initial_rtg() const { return initial_; }
  double rtg_hat() const { return rtg_hat_; }
  double reward_sum() const { return reward_sum_; }
  const std::vector<double>& rtg_history() const { return rtg_history_; }

  /// Window of the last <= k steps ending at the current (unacted) step. The
  /// current action slot is zero and masked; states are raw.
  data::Window window(std::size_t k, double rtg_scale) const;

 private:
  std::size_t ds_, da_;
  double initial_;
  double rtg_hat_;
  double reward_sum_ = 0.0;
  std::vector<double> states_, actions_, rewards_, rtg_history_;
};

struct TraceStep {
  std::size_t t = 0;
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  double rtg_hat = 0.0;
};

struct EpisodeResult {
  double episode_return = 0.0;
  std::size_t length = 0;
  std::vector<TraceStep> trace;
};

/// Autoregressive return-conditioned rollout. Throws NumericalError (with the
/// partial trace in the message) if the model emits a non-finite action.
EpisodeResult run_episode(const model::DecisionModel& model, envs::Env& env, double target_rtg,
                          const data::DatasetStats& stats, std::uint64_t seed);

void write_trace_csv(const std::filesystem::path& path, const EpisodeResult& episode);

struct ReturnStats {
  std::size_t n = 0;
  std::vector<double> returns;
  std::optional<double> mean;
  std::optional<double> std;     // sample std, n >= 2
  std::optional<double> stderr_; // std / sqrt(n), n >= 2
};

ReturnStats summarize_returns(std::vector<double> returns);

/// n_episodes per seed; episode e under seed s resets with a seed derived
/// from (s, e).
ReturnStats batch_evaluate(const model::DecisionModel& model, const envs::EnvFactory& factory,
                           std::size_t n_episodes, double target_rtg,
                           std::span<const std::uint64_t> seeds,
                           const data::DatasetStats& stats);

std::uint64_t episode_seed(std::uint64_t seed, std::size_t episode);

}  // namespace slimdt::rollout
