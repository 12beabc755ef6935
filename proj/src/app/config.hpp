#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "envs/envs.hpp"
#include "model/model.hpp"
#include "train/train.hpp"

namespace slimdt::app {

/// A target return: a literal value or a dataset quantile resolved at run
/// time ("p10", "p50", "p90", "max", "expert").
struct TargetRtg {
  std::variant<double, std::string> value;
  std::string label() const;
};

struct DatasetSection {
  envs::DatasetSpec spec;
  /// Existing SDT1 file to use instead of generating one.
  std::string path;
};

struct EvalSection {
  std::vector<TargetRtg> target_rtg;
  std::size_t n_episodes = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  /// Episodes per seed for the periodic evaluation inside training.
  std::size_t train_eval_episodes = 10;
};

struct AblationSection {
  std::vector<model::Variant> variants{model::Variant::DT, model::Variant::SlimPre,
                                       model::Variant::SlimPost, model::Variant::SlimPrePost};
  std::vector<model::InjectorKind> injector_kinds{std::begin(model::kAllInjectorKinds),
                                                  std::end(model::kAllInjectorKinds)};
  std::vector<bool> causal_mask{false, true};
  std::vector<std::size_t> rtg_embed_dims{32, 64, 128};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

struct BenchSection {
  std::vector<std::size_t> k_sweep{1, 5, 10, 20, 40};
  std::size_t reps = 100;
  std::size_t warmup = 10;
};

struct RunConfig {
  std::string output_dir = "runs/default";
  model::ModelConfig model;  // state_dim/action_dim come from the environment
  train::TrainConfig train;
  DatasetSection dataset;
  EvalSection eval;
  AblationSection ablation;
  BenchSection bench;

  RunConfig();
  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// output_dir, re-rooted under $SLIMDT_OUTPUT_ROOT when that is set and
  /// output_dir is relative.
  std::filesystem::path resolved_output_dir() const;
};

/// Parses the JSON dialect. Missing keys take defaults; unknown keys and
/// ill-typed values raise ConfigError with the dotted field path.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully resolved config (every default spelled out). parse(echo(c)) == c.
std::string echo_run_config(const RunConfig& cfg);

inline constexpr const char* kOutputRootEnv = "SLIMDT_OUTPUT_ROOT";

}  // namespace slimdt::app
