#include "app/commands.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "errors.hpp"

namespace slimdt::app {

namespace {

fs::path ensure_output_dir(const RunConfig& cfg) {
  const fs::path dir = cfg.resolved_output_dir();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failure on " + path.string());
}

void write_echo(const RunConfig& cfg, const fs::path& dir) {
  write_text(dir / kConfigEcho, echo_run_config(cfg) + "\n");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void write_report_json(const fs::path& path, const envs::DatasetReport& r) {
  nlohmann::ordered_json j;
  j["n_trajectories"] = r.n_trajectories;
  j["return_min"] = r.return_min;
  j["return_max"] = r.return_max;
  j["return_mean"] = r.return_mean;
  j["return_p10"] = r.return_p10;
  j["return_p50"] = r.return_p50;
  j["return_p90"] = r.return_p90;
  j["rtg_min"] = r.rtg_min;
  j["rtg_max"] = r.rtg_max;
  j["length_min"] = r.length_min;
  j["length_max"] = r.length_max;
  j["length_mean"] = r.length_mean;
  j["histogram_edges"] = r.histogram_edges;
  j["histogram"] = r.histogram;
  for (const auto& [p, m] : r.policy_means) j["policy_mean_return"][std::string(envs::to_string(p))] = m;
  write_text(path, j.dump(2) + "\n");
}

}  // namespace

PreparedDataset prepare_dataset(const RunConfig& cfg) {
  PreparedDataset out;
  if (!cfg.dataset.path.empty()) {
    out.dataset = data::load_dataset(cfg.dataset.path);
  } else {
    envs::GeneratedDataset g = envs::generate_dataset(cfg.dataset.spec);
    out.dataset = std::move(g.dataset);
    out.sources = std::move(g.sources);
  }
  if (out.dataset.empty()) throw ConfigError("dataset has no trajectories", "dataset");
  out.report = envs::dataset_report(out.dataset, 10, out.sources);
  return out;
}

double resolve_target(const TargetRtg& target, const envs::DatasetReport& report) {
  if (const double* v = std::get_if<double>(&target.value)) return *v;
  const std::string& q = std::get<std::string>(target.value);
  if (q == "p10") return report.return_p10;
  if (q == "p50") return report.return_p50;
  if (q == "p90") return report.return_p90;
  if (q == "max") return report.return_max;
  if (q == "expert") {
    for (const auto& [p, m] : report.policy_means) {
      if (p == envs::Policy::Expert) return m;
    }
    throw ConfigError("'expert' needs a generated dataset with expert trajectories",
                      "eval.target_rtg");
  }
  throw ConfigError("unknown target '" + q + "'", "eval.target_rtg");
}

model::ModelConfig resolved_model_config(const RunConfig& cfg, const data::Dataset& dataset) {
  model::ModelConfig m = cfg.model;
  m.state_dim = dataset.state_dim;
  m.action_dim = dataset.action_dim;
  m.validate();
  return m;
}

DatagenResult cmd_datagen(const RunConfig& cfg) {
  const fs::path dir = ensure_output_dir(cfg);
  write_echo(cfg, dir);
  PreparedDataset prepared = prepare_dataset(cfg);
  DatagenResult r;
  r.dataset_path = dir / kDatasetFile;
  data::save_dataset(r.dataset_path, prepared.dataset);
  write_report_json(dir / "dataset_report.json", prepared.report);
  r.report = std::move(prepared.report);
  return r;
}

namespace {

struct TrainedRun {
  std::unique_ptr<model::DecisionModel> model;
  data::DatasetStats stats;
  train::TrainLog log;
};

TrainedRun train_run(const RunConfig& cfg, const PreparedDataset& prepared) {
  TrainedRun run;
  const model::ModelConfig mcfg = resolved_model_config(cfg, prepared.dataset);
  run.stats = data::fit_stats(prepared.dataset);
  run.model = std::make_unique<model::DecisionModel>(mcfg, cfg.train.seed);
  train::EvalHook hook;
  if (cfg.eval.train_eval_episodes > 0 && !cfg.eval.target_rtg.empty()) {
    const double target = resolve_target(cfg.eval.target_rtg.front(), prepared.report);
    const auto factory = envs::env_factory(cfg.dataset.spec.env);
    hook = [&, target, factory](const model::DecisionModel& m, std::size_t) {
      const rollout::ReturnStats s = rollout::batch_evaluate(
          m, factory, cfg.eval.train_eval_episodes, target, cfg.eval.seeds, run.stats);
      return train::EvalPoint{s.mean, s.stderr_};
    };
  }
  run.log = train::train(*run.model, prepared.dataset, run.stats, cfg.train, hook);
  return run;
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg) {
  const fs::path dir = ensure_output_dir(cfg);
  write_echo(cfg, dir);
  const PreparedDataset prepared = prepare_dataset(cfg);
  data::save_dataset(dir / kDatasetFile, prepared.dataset);
  TrainedRun run = train_run(cfg, prepared);
  TrainResult r;
  r.checkpoint_path = dir / kCheckpointFile;
  r.log_path = dir / "train_log.csv";
  model::save_checkpoint(r.checkpoint_path, *run.model, run.stats, echo_run_config(cfg));
  run.log.write_csv(r.log_path);
  r.log = std::move(run.log);
  return r;
}

std::vector<fs::path> list_checkpoints(const fs::path& dir) {
  std::vector<fs::path> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (auto it = fs::recursive_directory_iterator(dir, ec); !ec && it != fs::end(it);
       it.increment(ec)) {
    if (it->is_regular_file(ec) && it->path().extension() == ".sdtc") out.push_back(it->path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<EvalRow> cmd_eval(const RunConfig& cfg, const fs::path& checkpoint) {
  const fs::path dir = cfg.resolved_output_dir();
  const fs::path ckpt_path = checkpoint.empty() ? dir / kCheckpointFile : checkpoint;
  if (!fs::exists(ckpt_path)) {
    std::string msg = "checkpoint " + ckpt_path.string() + " not found; available under " +
                      dir.string() + ":";
    const auto found = list_checkpoints(dir);
    if (found.empty()) msg += " none";
    for (const auto& p : found) msg += "\n  " + p.string();
    throw IoError(msg);
  }
  ensure_output_dir(cfg);
  write_echo(cfg, dir);
  const model::Checkpoint ckpt = model::load_checkpoint(ckpt_path);
  const auto m = model::restore_model(ckpt);
  const PreparedDataset prepared = prepare_dataset(cfg);
  auto env = envs::make_env(cfg.dataset.spec.env);
  if (env->state_dim() != ckpt.config.state_dim || env->action_dim() != ckpt.config.action_dim) {
    throw ConfigError("checkpoint dimensions do not match environment " +
                          std::string(envs::to_string(cfg.dataset.spec.env)),
                      "dataset.env");
  }
  const auto factory = envs::env_factory(cfg.dataset.spec.env);

  std::vector<EvalRow> rows;
  fs::create_directories(dir / "traces");
  for (const TargetRtg& t : cfg.eval.target_rtg) {
    EvalRow row;
    row.label = t.label();
    row.target_rtg = resolve_target(t, prepared.report);
    row.stats = rollout::batch_evaluate(*m, factory, cfg.eval.n_episodes, row.target_rtg,
                                        cfg.eval.seeds, ckpt.stats);
    if (cfg.eval.n_episodes > 0) {
      auto trace_env = factory();
      const auto episode =
          rollout::run_episode(*m, *trace_env, row.target_rtg, ckpt.stats,
                               rollout::episode_seed(cfg.eval.seeds.front(), 0));
      rollout::write_trace_csv(dir / "traces" / ("target_" + row.label + ".csv"), episode);
    }
    rows.push_back(std::move(row));
  }
  std::ostringstream csv;
  csv << "target,target_rtg,n_episodes,mean_return,std_return,stderr_return\n";
  for (const auto& r : rows) {
    csv << r.label << ',' << fmt(r.target_rtg) << ',' << r.stats.n << ',' << fmt(r.stats.mean)
        << ',' << fmt(r.stats.std) << ',' << fmt(r.stats.stderr_) << '\n';
  }
  write_text(dir / "eval.csv", csv.str());
  return rows;
}

BenchResult cmd_bench(const RunConfig& cfg) {
  const fs::path dir = ensure_output_dir(cfg);
  write_echo(cfg, dir);
  auto env = envs::make_env(cfg.dataset.spec.env);
  model::ModelConfig base = cfg.model;
  base.state_dim = env->state_dim();
  base.action_dim = env->action_dim();

  std::vector<model::ModelConfig> flop_cfgs;
  for (std::size_t k : cfg.bench.k_sweep) {
    for (model::Variant v : model::kAllVariants) {
      for (model::InjectorKind kind : model::kAllInjectorKinds) {
        model::ModelConfig c = base;
        c.context_k = k;
        c.max_timestep = std::max(c.max_timestep, k);
        c.variant = v;
        c.injector.kind = kind;
        const model::FlopReport analytic = bench::count_flops(c);
        if (!(analytic == bench::instrumented_flops(c))) {
          throw ContractError("analytic and instrumented FLOP counts disagree for " +
                              std::string(model::to_string(v)) + "/" +
                              std::string(model::to_string(kind)) + " k=" + std::to_string(k));
        }
        flop_cfgs.push_back(c);
        if (v == model::Variant::DT) break;
      }
    }
  }
  BenchResult r;
  r.flops_path = dir / "flops.csv";
  bench::write_flops_csv(r.flops_path, flop_cfgs);

  bench::TimingOptions opts;
  opts.reps = cfg.bench.reps;
  opts.warmup = cfg.bench.warmup;
  for (model::Variant v : model::kAllVariants) {
    model::ModelConfig c = base;
    c.variant = v;
    const auto rows = bench::time_forward(c, cfg.bench.k_sweep, opts);
    r.timing.insert(r.timing.end(), rows.begin(), rows.end());
  }
  r.timing_path = dir / "timing.csv";
  bench::write_timing_csv(r.timing_path, r.timing);
  return r;
}

std::string AblationCell::id() const {
  std::string s(model::to_string(variant));
  if (variant != model::Variant::DT) {
    s += "__" + std::string(model::to_string(kind));
    if (model::is_cross_attention(kind)) s += causal_mask ? "__causal" : "__nocausal";
    if (kind == model::InjectorKind::Concat) {
      s += "__r" + (rtg_embed_dim ? std::to_string(rtg_embed_dim) : std::string("default"));
    }
  }
  return s + "__seed" + std::to_string(seed);
}

std::vector<AblationCell> ablation_cells(const AblationSection& a) {
  std::vector<AblationCell> cells;
  for (model::Variant v : a.variants) {
    std::vector<AblationCell> shapes;
    if (v == model::Variant::DT) {
      shapes.push_back({v, model::InjectorKind::Concat, false, 0, 0});
    } else {
      for (model::InjectorKind kind : a.injector_kinds) {
        std::vector<bool> causal{false};
        if (model::is_cross_attention(kind) && !a.causal_mask.empty()) causal = a.causal_mask;
        std::vector<std::size_t> dims{0};
        if (kind == model::InjectorKind::Concat && !a.rtg_embed_dims.empty()) {
          dims = a.rtg_embed_dims;
        }
        for (bool c : causal) {
          for (std::size_t d : dims) shapes.push_back({v, kind, c, d, 0});
        }
      }
    }
    for (const auto& shape : shapes) {
      for (std::uint64_t seed : a.seeds) {
        AblationCell cell = shape;
        cell.seed = seed;
        cells.push_back(cell);
      }
    }
  }
  return cells;
}

AblateResult cmd_ablate(const RunConfig& cfg) {
  const fs::path dir = ensure_output_dir(cfg);
  write_echo(cfg, dir);
  if (cfg.eval.target_rtg.empty()) {
    throw ConfigError("ablation needs at least one target", "eval.target_rtg");
  }
  const PreparedDataset prepared = prepare_dataset(cfg);
  const double target = resolve_target(cfg.eval.target_rtg.front(), prepared.report);
  const auto factory = envs::env_factory(cfg.dataset.spec.env);

  AblateResult result;
  result.results_path = dir / "ablation_results.csv";
  const auto cells = ablation_cells(cfg.ablation);
  result.cells = cells.size();
  for (const AblationCell& cell : cells) {
    const fs::path cell_dir = dir / "ablation" / cell.id();
    const fs::path marker = cell_dir / "result.json";
    if (fs::exists(marker)) {
      ++result.skipped;
      continue;
    }
    fs::create_directories(cell_dir);
    RunConfig cell_cfg = cfg;
    cell_cfg.output_dir = cell_dir.string();
    cell_cfg.model.variant = cell.variant;
    cell_cfg.model.injector.kind = cell.kind;
    cell_cfg.model.injector.causal_mask = cell.causal_mask;
    cell_cfg.model.injector.rtg_embed_dim = cell.rtg_embed_dim;
    cell_cfg.train.seed = cell.seed;
    cell_cfg.eval.train_eval_episodes = 0;
    write_echo(cell_cfg, cell_dir);

    TrainedRun run = train_run(cell_cfg, prepared);
    run.log.write_csv(cell_dir / "train_log.csv");
    model::save_checkpoint(cell_dir / kCheckpointFile, *run.model, run.stats,
                           echo_run_config(cell_cfg));
    const std::uint64_t eval_seed[] = {cell.seed};
    const rollout::ReturnStats s = rollout::batch_evaluate(
        *run.model, factory, cfg.eval.n_episodes, target, eval_seed, run.stats);

    const bool fresh = !fs::exists(result.results_path);
    std::ofstream csv(result.results_path, std::ios::app);
    if (!csv) throw IoError("cannot append to " + result.results_path.string());
    if (fresh) {
      csv << "cell,variant,injector,causal_mask,rtg_embed_dim,seed,target_rtg,n_episodes,"
             "mean_return,stderr_return\n";
    }
    const bool has_injector = cell.variant != model::Variant::DT;
    csv << cell.id() << ',' << model::to_string(cell.variant) << ','
        << (has_injector ? std::string(model::to_string(cell.kind)) : "none") << ','
        << (cell.causal_mask ? "true" : "false") << ',' << cell.rtg_embed_dim << ','
        << cell.seed << ',' << fmt(target) << ',' << s.n << ',' << fmt(s.mean) << ','
        << fmt(s.stderr_) << '\n';
    csv.close();
    if (!csv) throw IoError("write failure on " + result.results_path.string());

    nlohmann::ordered_json j;
    j["cell"] = cell.id();
    j["target_rtg"] = target;
    j["n_episodes"] = s.n;
    j["mean_return"] = s.mean ? nlohmann::ordered_json(*s.mean) : nlohmann::ordered_json();
    j["stderr_return"] = s.stderr_ ? nlohmann::ordered_json(*s.stderr_) : nlohmann::ordered_json();
    const fs::path tmp = cell_dir / "result.json.tmp";
    write_text(tmp, j.dump(2) + "\n");
    fs::rename(tmp, marker);
    ++result.ran;
  }
  return result;
}

}  // namespace slimdt::app
