#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "app/config.hpp"
#include "bench/bench.hpp"
#include "envs/envs.hpp"
#include "rollout/rollout.hpp"
#include "train/train.hpp"

namespace slimdt::app {

namespace fs = std::filesystem;

inline constexpr const char* kDatasetFile = "dataset.sdt1";
inline constexpr const char* kCheckpointFile = "model.sdtc";
inline constexpr const char* kConfigEcho = "config.echo.json";

/// Dataset for a run: the file named by dataset.path, or a freshly generated
/// one (sources known) otherwise.
struct PreparedDataset {
  data::Dataset dataset;
  std::vector<envs::Policy> sources;  // empty when loaded from a file
  envs::DatasetReport report;
};

PreparedDataset prepare_dataset(const RunConfig& cfg);
double resolve_target(const TargetRtg& target, const envs::DatasetReport& report);
/// Model config with state/action sizes taken from the dataset.
model::ModelConfig resolved_model_config(const RunConfig& cfg, const data::Dataset& dataset);

struct DatagenResult {
  fs::path dataset_path;
  envs::DatasetReport report;
};
DatagenResult cmd_datagen(const RunConfig& cfg);

struct TrainResult {
  fs::path checkpoint_path;
  fs::path log_path;
  train::TrainLog log;
};
TrainResult cmd_train(const RunConfig& cfg);

struct EvalRow {
  std::string label;
  double target_rtg = 0.0;
  rollout::ReturnStats stats;
};
/// Empty checkpoint path means <output_dir>/model.sdtc.
std::vector<EvalRow> cmd_eval(const RunConfig& cfg, const fs::path& checkpoint = {});

struct BenchResult {
  fs::path flops_path;
  fs::path timing_path;
  std::vector<bench::TimingRow> timing;
};
BenchResult cmd_bench(const RunConfig& cfg);

struct AblationCell {
  model::Variant variant = model::Variant::DT;
  model::InjectorKind kind = model::InjectorKind::Concat;
  bool causal_mask = false;
  std::size_t rtg_embed_dim = 0;  // 0: injector default
  std::uint64_t seed = 0;
  std::string id() const;
};

/// The ablation grid. DT has no injector axes; the causal flag only varies
/// for cross-attention kinds and the rtg width only for Concat.
std::vector<AblationCell> ablation_cells(const AblationSection& a);

struct AblateResult {
  std::size_t cells = 0;
  std::size_t ran = 0;
  std::size_t skipped = 0;
  fs::path results_path;
};
AblateResult cmd_ablate(const RunConfig& cfg);

/// Checkpoints (*.sdtc) below `dir`, sorted.
std::vector<fs::path> list_checkpoints(const fs::path& dir);

}  // namespace slimdt::app
