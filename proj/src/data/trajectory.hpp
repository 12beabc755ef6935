#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "numerics/ops.hpp"

namespace slimdt::data {

/// One episode. States and actions are stored row-major, one row per step.
struct Trajectory {
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::vector<double> states;
  std::vector<double> actions;
  std::vector<double> rewards;
  std::vector<double> rtg;

  std::size_t length() const { return rewards.size(); }
  std::span<const double> state(std::size_t t) const {
    return {states.data() + t * state_dim, state_dim};
  }
  std::span<const double> action(std::size_t t) const {
    return {actions.data() + t * action_dim, action_dim};
  }
  double episode_return() const { return rtg.empty() ? 0.0 : rtg.front(); }

  /// Builds a trajectory and derives its return-to-go sequence. Throws
  /// ContractError when the per-step arrays disagree in length or T == 0.
  static Trajectory make(std::size_t state_dim, std::size_t action_dim,
                         std::vector<double> states, std::vector<double> actions,
                         std::vector<double> rewards);
};

struct Dataset {
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::vector<Trajectory> trajectories;

  bool empty() const { return trajectories.empty(); }
  std::size_t size() const { return trajectories.size(); }
};

struct DatasetStats {
  std::vector<double> state_mean;
  std::vector<double> state_std;
  double rtg_scale = 1.0;
};

inline constexpr double kMinStateStd = 1e-6;

/// Suffix sums: rtg[t] = rewards[t] + ... + rewards[T-1].
std::vector<double> compute_rtg(std::span<const double> rewards);

/// A single context window of length k ending at step `end`.
struct Window {
  std::size_t k = 0;
  std::vector<double> rtg;       // k, divided by rtg_scale
  std::vector<double> states;    // k * d_s
  std::vector<double> actions;   // k * d_a
  std::vector<std::int64_t> timesteps;
  std::vector<std::uint8_t> valid;
  std::vector<std::uint8_t> action_known;
};

/// Window ending at step `end` (inclusive). Positions before the episode start
/// are zero-filled and marked invalid; valid steps are right-aligned.
Window make_window(const Trajectory& traj, std::size_t end, std::size_t k,
                   double rtg_scale = 1.0);

/// One window per sampled end step 0, stride, 2*stride, ... < T.
std::vector<Window> make_windows(const Trajectory& traj, std::size_t k,
                                 std::size_t stride = 1, double rtg_scale = 1.0);

/// Batched windows as tensors.
struct WindowBatch {
  std::size_t batch = 0;
  std::size_t k = 0;
  nn::Tensor rtg;             // B x k x 1
  nn::Tensor states;          // B x k x d_s
  nn::Tensor actions;         // B x k x d_a
  nn::Tensor target_actions;  // B x k x d_a
  std::vector<std::int64_t> timesteps;  // B * k
  nn::Mask pad_mask;                    // B * k, 1 = valid
  nn::Mask action_mask;                 // B * k, 1 = action token observable
};

WindowBatch collate(std::span<const Window> windows, std::size_t state_dim,
                    std::size_t action_dim);

DatasetStats fit_stats(const Dataset& dataset);

/// (s - mean) / std on the states of a batch, in place on a fresh tensor.
WindowBatch normalize_states(const WindowBatch& batch, const DatasetStats& stats);
WindowBatch denormalize_states(const WindowBatch& batch, const DatasetStats& stats);
void normalize_state(std::span<double> state, const DatasetStats& stats);

/// Raised for malformed dataset or checkpoint files.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Raised when a file cannot be opened, read, or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kDatasetMagic[4] = {'S', 'D', 'T', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace slimdt::data
