#include "data/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "data/binary_io.hpp"

namespace slimdt::data {

using nn::ContractError;

std::vector<double> compute_rtg(std::span<const double> rewards) {
  if (rewards.empty()) throw ContractError("compute_rtg: empty reward sequence");
  std::vector<double> rtg(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc += rewards[i];
    rtg[i] = acc;
  }
  return rtg;
}

Trajectory Trajectory::make(std::size_t state_dim, std::size_t action_dim,
                            std::vector<double> states, std::vector<double> actions,
                            std::vector<double> rewards) {
  const std::size_t T = rewards.size();
  if (T == 0) throw ContractError("trajectory must have at least one step");
  if (states.size() != T * state_dim || actions.size() != T * action_dim) {
    throw ContractError("trajectory arrays disagree: T=" + std::to_string(T) +
                        ", states=" + std::to_string(states.size()) +
                        ", actions=" + std::to_string(actions.size()));
  }
  Trajectory traj;
  traj.state_dim = state_dim;
  traj.action_dim = action_dim;
  traj.states = std::move(states);
  traj.actions = std::move(actions);
  traj.rtg = compute_rtg(rewards);
  traj.rewards = std::move(rewards);
  return traj;
}

Window make_window(const Trajectory& traj, std::size_t end, std::size_t k,
                   double rtg_scale) {
  if (k == 0) throw ContractError("make_window: context length must be >= 1");
  if (end >= traj.length()) {
    throw ContractError("make_window: end step " + std::to_string(end) +
                        " outside episode of length " + std::to_string(traj.length()));
  }
  const std::size_t ds = traj.state_dim, da = traj.action_dim;
  Window w;
  w.k = k;
  w.rtg.assign(k, 0.0);
  w.states.assign(k * ds, 0.0);
  w.actions.assign(k * da, 0.0);
  w.timesteps.assign(k, 0);
  w.valid.assign(k, 0);
  w.action_known.assign(k, 0);
  const std::size_t n_valid = std::min(k, end + 1);
  const std::size_t first_step = end + 1 - n_valid;
  const std::size_t offset = k - n_valid;
  for (std::size_t i = 0; i < n_valid; ++i) {
    const std::size_t t = first_step + i;
    const std::size_t pos = offset + i;
    w.rtg[pos] = traj.rtg[t] / rtg_scale;
    std::copy_n(traj.states.data() + t * ds, ds, w.states.data() + pos * ds);
    std::copy_n(traj.actions.data() + t * da, da, w.actions.data() + pos * da);
    w.timesteps[pos] = static_cast<std::int64_t>(t);
    w.valid[pos] = 1;
    w.action_known[pos] = 1;
  }
  return w;
}

std::vector<Window> make_windows(const Trajectory& traj, std::size_t k,
                                 std::size_t stride, double rtg_scale) {
  if (k == 0) throw ContractError("make_windows: context length must be >= 1");
  if (stride == 0) throw ContractError("make_windows: stride must be >= 1");
  std::vector<Window> out;
  for (std::size_t t = 0; t < traj.length(); t += stride) {
    out.push_back(make_window(traj, t, k, rtg_scale));
  }
  return out;
}

WindowBatch collate(std::span<const Window> windows, std::size_t state_dim,
                    std::size_t action_dim) {
  if (windows.empty()) throw ContractError("collate: no windows");
  const std::size_t b = windows.size(), k = windows[0].k;
  std::vector<double> rtg, states, actions;
  rtg.reserve(b * k);
  states.reserve(b * k * state_dim);
  actions.reserve(b * k * action_dim);
  WindowBatch batch;
  batch.batch = b;
  batch.k = k;
  for (const Window& w : windows) {
    if (w.k != k || w.states.size() != k * state_dim || w.actions.size() != k * action_dim) {
      throw nn::DimensionError("collate: window dimensions disagree");
    }
    rtg.insert(rtg.end(), w.rtg.begin(), w.rtg.end());
    states.insert(states.end(), w.states.begin(), w.states.end());
    actions.insert(actions.end(), w.actions.begin(), w.actions.end());
    batch.timesteps.insert(batch.timesteps.end(), w.timesteps.begin(), w.timesteps.end());
    batch.pad_mask.insert(batch.pad_mask.end(), w.valid.begin(), w.valid.end());
    batch.action_mask.insert(batch.action_mask.end(), w.action_known.begin(),
                             w.action_known.end());
  }
  batch.rtg = nn::Tensor::from({b, k, 1}, std::move(rtg));
  batch.target_actions = nn::Tensor::from({b, k, action_dim}, actions);
  batch.actions = nn::Tensor::from({b, k, action_dim}, std::move(actions));
  batch.states = nn::Tensor::from({b, k, state_dim}, std::move(states));
  return batch;
}

DatasetStats fit_stats(const Dataset& dataset) {
  if (dataset.empty()) throw ContractError("fit_stats: empty dataset");
  const std::size_t ds = dataset.state_dim;
  DatasetStats stats;
  stats.state_mean.assign(ds, 0.0);
  stats.state_std.assign(ds, 0.0);
  std::size_t count = 0;
  double max_abs_rtg = 0.0;
  for (const auto& traj : dataset.trajectories) {
    for (std::size_t t = 0; t < traj.length(); ++t) {
      for (std::size_t j = 0; j < ds; ++j) stats.state_mean[j] += traj.states[t * ds + j];
      max_abs_rtg = std::max(max_abs_rtg, std::abs(traj.rtg[t]));
    }
    count += traj.length();
  }
  for (double& m : stats.state_mean) m /= static_cast<double>(count);
  for (const auto& traj : dataset.trajectories) {
    for (std::size_t t = 0; t < traj.length(); ++t) {
      for (std::size_t j = 0; j < ds; ++j) {
        const double d = traj.states[t * ds + j] - stats.state_mean[j];
        stats.state_std[j] += d * d;
      }
    }
  }
  for (double& s : stats.state_std) {
    s = std::max(std::sqrt(s / static_cast<double>(count)), kMinStateStd);
  }
  stats.rtg_scale = max_abs_rtg > 0.0 ? max_abs_rtg : 1.0;
  return stats;
}

void normalize_state(std::span<double> state, const DatasetStats& stats) {
  for (std::size_t j = 0; j < state.size(); ++j) {
    state[j] = (state[j] - stats.state_mean[j]) / stats.state_std[j];
  }
}

namespace {

WindowBatch map_states(const WindowBatch& batch, const DatasetStats& stats, bool forward) {
  const std::size_t ds = batch.states.shape().back();
  if (stats.state_mean.size() != ds || stats.state_std.size() != ds) {
    throw nn::DimensionError("normalize_states: stats dimension " +
                             std::to_string(stats.state_mean.size()) +
                             " does not match state dimension " + std::to_string(ds));
  }
  std::vector<double> s(batch.states.data().begin(), batch.states.data().end());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t j = i % ds;
    s[i] = forward ? (s[i] - stats.state_mean[j]) / stats.state_std[j]
                   : s[i] * stats.state_std[j] + stats.state_mean[j];
  }
  WindowBatch out = batch;
  out.states = nn::Tensor::from(batch.states.shape(), std::move(s));
  return out;
}

}  // namespace

WindowBatch normalize_states(const WindowBatch& batch, const DatasetStats& stats) {
  return map_states(batch, stats, true);
}

WindowBatch denormalize_states(const WindowBatch& batch, const DatasetStats& stats) {
  return map_states(batch, stats, false);
}

// ---------------------------------------------------------------------------
// SDT1 file format

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  ByteWriter w;
  w.bytes(kDatasetMagic, 4);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(dataset.state_dim));
  w.u32(static_cast<std::uint32_t>(dataset.action_dim));
  w.u64(dataset.trajectories.size());
  for (const auto& traj : dataset.trajectories) {
    w.u64(traj.length());
    w.f64s(traj.states);
    w.f64s(traj.actions);
    w.f64s(traj.rewards);
  }
  write_file(path, w.buffer());
}

Dataset load_dataset(const std::filesystem::path& path) {
  ByteReader r(read_file(path));
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kDatasetMagic)) {
    throw FormatError("bad magic (expected SDT1)", 0);
  }
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version), version_at);
  }
  Dataset ds;
  ds.state_dim = r.u32("state_dim");
  ds.action_dim = r.u32("action_dim");
  const std::uint64_t n = r.u64("trajectory count");
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t len_at = r.offset();
    const std::uint64_t T = r.u64("trajectory length");
    if (T == 0) throw FormatError("trajectory with zero steps", len_at);
    if (T > r.remaining() / 8) throw FormatError("truncated trajectory", len_at);
    auto states = r.f64s(T * ds.state_dim, "states");
    auto actions = r.f64s(T * ds.action_dim, "actions");
    auto rewards = r.f64s(T, "rewards");
    ds.trajectories.push_back(Trajectory::make(ds.state_dim, ds.action_dim, std::move(states),
                                               std::move(actions), std::move(rewards)));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last trajectory", r.offset());
  return ds;
}

}  // namespace slimdt::data
