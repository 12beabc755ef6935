#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "data/trajectory.hpp"

namespace slimdt::envs {

struct StepResult {
  std::vector<double> state;
  double reward = 0.0;
  bool done = false;
};

/// Episodic environment with a continuous action space.
class Env {
 public:
  virtual ~Env() = default;
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  virtual StepResult step(std::span<const double> action) = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual std::size_t max_steps() const = 0;
  virtual bool deterministic() const { return true; }
};

using EnvFactory = std::function<std::unique_ptr<Env>()>;

/// 1-D point mass: state (position, velocity), action = acceleration in
/// [-1, 1]. pos += vel; vel += 0.1 * a; reward = -|pos - goal| after the move.
/// Position is clamped to [-pos_max, pos_max] (velocity zeroed on contact).
struct PointParams {
  double goal = 0.0;
  double pos_max = 6.0;
  double accel_scale = 0.1;
  double start_min = 1.8;  // |initial position| ~ U(start_min, start_max)
  double start_max = 2.2;
  std::size_t horizon = 50;
};

struct PointState {
  double pos = 0.0;
  double vel = 0.0;
};

/// Pure transition shared by both environments.
PointState point_transition(const PointParams& p, PointState s, double action);

class LinearPointEnv : public Env {
 public:
  explicit LinearPointEnv(PointParams params = {}) : params_(params) {}

  std::vector<double> reset(std::uint64_t seed) override;
  /// Starts from an explicit state (used by dataset contrast pairs and tests).
  std::vector<double> reset_to(PointState s);
  StepResult step(std::span<const double> action) override;
  std::size_t state_dim() const override { return 2; }
  std::size_t action_dim() const override { return 1; }
  std::size_t max_steps() const override { return params_.horizon; }

  const PointParams& params() const { return params_; }
  PointState state() const { return state_; }

 protected:
  PointParams params_;
  PointState state_;
  std::size_t t_ = 0;
};

struct SpikeEvent {
  double threshold = 0.5;
  double bonus = 10.0;
};

/// LinearPointEnv plus a hidden one-shot event: while the episode is armed,
/// the first move that crosses `threshold` pays `bonus` once. The armed flag
/// is drawn at reset and never appears in the observation.
class SpikeRewardEnv : public LinearPointEnv {
 public:
  using Event = SpikeEvent;

  explicit SpikeRewardEnv(PointParams params = {}, Event event = {})
      : LinearPointEnv(params), event_(event) {}

  std::vector<double> reset(std::uint64_t seed) override;
  std::vector<double> reset_to(PointState s, bool armed);
  StepResult step(std::span<const double> action) override;

  bool armed() const { return armed_; }
  const Event& event() const { return event_; }

  struct Transition {
    PointState next;
    double reward;
    bool armed_after;
  };
  /// Pure function of (state, action, event flag).
  static Transition transition(const PointParams& p, const Event& e, PointState s,
                               double action, bool armed);

 private:
  Event event_;
  bool armed_ = false;
};

// ---------------------------------------------------------------------------
// scripted controllers and dataset generation

enum class Policy { Expert, Medium, Random };
std::string_view to_string(Policy p);

/// Proportional-derivative controller toward the goal, clipped to [-1, 1].
double expert_action(const PointParams& p, PointState s);

inline constexpr double kExpertKp = 1.0;
inline constexpr double kExpertKd = 4.0;

enum class EnvId { LinearPoint, SpikeReward };
std::string_view to_string(EnvId id);
EnvId parse_env_id(std::string_view name);

struct DatasetSpec {
  EnvId env = EnvId::LinearPoint;
  std::size_t n_trajectories = 300;
  double expert_fraction = 0.1;
  double medium_fraction = 0.6;
  double random_fraction = 0.3;
  /// Action noise std of the medium controller.
  double noise = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratedDataset {
  data::Dataset dataset;
  std::vector<Policy> sources;  // controller per trajectory
};

std::unique_ptr<Env> make_env(EnvId id);
EnvFactory env_factory(EnvId id);

/// Deterministic under spec.seed. For SpikeRewardEnv with n >= 2 the last two
/// trajectories are an expert contrast pair: identical states and actions,
/// armed vs unarmed, so only their rewards differ.
GeneratedDataset generate_dataset(const DatasetSpec& spec);

/// Runs one scripted episode.
data::Trajectory rollout_controller(Env& env, Policy policy, double noise,
                                    std::uint64_t seed);

struct DatasetReport {
  std::size_t n_trajectories = 0;
  std::vector<double> returns;
  std::vector<double> histogram_edges;   // bins + 1
  std::vector<std::size_t> histogram;    // counts per bin
  double return_min = 0.0, return_max = 0.0, return_mean = 0.0;
  double return_p10 = 0.0, return_p50 = 0.0, return_p90 = 0.0;
  double rtg_min = 0.0, rtg_max = 0.0;
  std::size_t length_min = 0, length_max = 0;
  double length_mean = 0.0;
  /// Mean return per controller when sources are known.
  std::vector<std::pair<Policy, double>> policy_means;
};

DatasetReport dataset_report(const data::Dataset& dataset, std::size_t bins = 10,
                             std::span<const Policy> sources = {});

/// Linear-interpolation percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

}  // namespace slimdt::envs
