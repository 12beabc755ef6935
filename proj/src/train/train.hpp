#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "data/trajectory.hpp"
#include "model/model.hpp"

namespace slimdt::train {

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double grad_clip = 0.25;
  std::size_t warmup_steps = 10000;
  std::size_t total_steps = 10000;
  std::uint64_t seed = 0;
  /// 0 disables periodic evaluation.
  std::size_t eval_every = 0;

  void validate() const;
};

/// lr * min(1, (step + 1) / warmup), constant afterwards.
double learning_rate(const TrainConfig& cfg, std::size_t step);

class AdamW {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit AdamW(const model::ParamStore& params);

  /// One update with learning rate `lr`; decay is decoupled and scaled by lr.
  void step(model::ParamStore& params, double lr, double weight_decay);
  std::size_t steps_taken() const { return t_; }

 private:
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Uniform over all (trajectory, end step) pairs of the dataset.
class BatchSampler {
 public:
  BatchSampler(const data::Dataset& dataset, const data::DatasetStats& stats, std::size_t k,
               std::uint64_t seed);
  data::WindowBatch next(std::size_t batch_size);

 private:
  const data::Dataset& dataset_;
  const data::DatasetStats& stats_;
  std::size_t k_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> offsets_;  // cumulative lengths
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;       // before clipping
  double grad_norm_clipped = 0.0;
  double lr = 0.0;
};

/// Global L2 norm over all parameter gradients.
double global_grad_norm(const model::ParamStore& params);

/// Forward, masked MSE, backward, clip, AdamW. `batch` must already hold
/// normalized states. Throws NumericalError on a non-finite loss or gradient.
StepResult train_step(model::DecisionModel& model, const data::WindowBatch& batch, AdamW& opt,
                      const TrainConfig& cfg, std::size_t step, nn::DropoutRng& rng);

struct LogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double grad_norm_clipped = 0.0;
  double lr = 0.0;
  std::optional<double> eval_return_mean;
  std::optional<double> eval_return_stderr;
};

struct TrainLog {
  std::vector<LogRow> rows;
  void write_csv(const std::filesystem::path& path) const;
};

struct EvalPoint {
  std::optional<double> mean;
  std::optional<double> stderr_;
};
using EvalHook = std::function<EvalPoint(const model::DecisionModel&, std::size_t step)>;

/// Full loop over cfg.total_steps. The hook (if any) runs every eval_every
/// steps and after the final step.
TrainLog train(model::DecisionModel& model, const data::Dataset& dataset,
               const data::DatasetStats& stats, const TrainConfig& cfg,
               const EvalHook& eval = {});

}  // namespace slimdt::train
