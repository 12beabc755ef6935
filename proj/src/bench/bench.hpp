#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "model/model.hpp"

namespace slimdt::bench {

/// Analytic multiply-add counts for one forward at batch size 1.
model::FlopReport count_flops(const model::ModelConfig& cfg);

/// The same counts measured by running the model under the kernel counter.
model::FlopReport instrumented_flops(const model::ModelConfig& cfg, std::uint64_t seed = 0);

/// Attention score+mix ratio of `cfg` against the same config as DT. With
/// include_injector the injector's k^2 terms are counted too.
double quadratic_ratio_vs_dt(const model::ModelConfig& cfg, bool include_injector);

/// A fully valid single-window batch for timing and counting.
data::WindowBatch probe_batch(const model::ModelConfig& cfg, std::uint64_t seed = 0);

struct TimingRow {
  std::string variant;
  std::string injector;
  std::size_t k = 0;
  std::size_t embed_dim = 0;
  std::size_t n_layers = 0;
  std::size_t reps = 0;
  std::size_t warmup = 0;
  /// Forwards per timed sample; raised above 1 when a single forward is
  /// too short for the clock.
  std::size_t inner = 1;
  double median_s = 0.0;
  double p10_s = 0.0;
  double p90_s = 0.0;
};

struct TimingOptions {
  std::size_t reps = 100;
  std::size_t warmup = 10;
  /// A sample must span at least this many clock ticks.
  std::size_t min_ticks = 1000;
};

/// Times inference forwards of `cfg` at each k in the sweep (single thread).
std::vector<TimingRow> time_forward(const model::ModelConfig& cfg,
                                    std::span<const std::size_t> k_sweep,
                                    const TimingOptions& opts = {});

void write_flops_csv(const std::filesystem::path& path,
                     std::span<const model::ModelConfig> configs);
void write_timing_csv(const std::filesystem::path& path, std::span<const TimingRow> rows);

}  // namespace slimdt::bench
