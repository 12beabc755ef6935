#include "slimdt/slimdt.h"

#include <cstring>
#include <iomanip>
#include <memory>
#include <new>
#include <sstream>
#include <string>

#include "app/commands.hpp"
#include "errors.hpp"

struct slimdt_config {
  slimdt::app::RunConfig cfg;
};

struct slimdt_dataset {
  slimdt::data::Dataset data;
};

struct slimdt_model {
  slimdt::model::Checkpoint ckpt;
  std::unique_ptr<slimdt::model::DecisionModel> model;
};

namespace {

using namespace slimdt;

thread_local std::string g_error;
thread_local std::string g_field;
thread_local std::string g_summary;

slimdt_status fail(slimdt_status s, const std::string& msg, const std::string& field = {}) {
  g_error = msg;
  g_field = field;
  return s;
}

template <typename F>
slimdt_status guarded(F&& body) {
  g_error.clear();
  g_field.clear();
  try {
    body();
    return SLIMDT_OK;
  } catch (const ConfigError& e) {
    return fail(SLIMDT_CONFIG, e.what(), e.field());
  } catch (const NumericalError& e) {
    return fail(SLIMDT_NUMERIC, e.what());
  } catch (const FormatError& e) {
    return fail(SLIMDT_FORMAT, e.what());
  } catch (const IoError& e) {
    return fail(SLIMDT_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(SLIMDT_IO, e.what());
  } catch (const DimensionError& e) {
    return fail(SLIMDT_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(SLIMDT_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SLIMDT_INTERNAL, e.what());
  }
}

slimdt_status null_arg(const char* name) {
  return fail(SLIMDT_INVALID_ARGUMENT, std::string(name) + " must not be NULL");
}

slimdt_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > 0) {
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  return SLIMDT_OK;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string("n/a"); }

void fill(const model::FlopReport& r, slimdt_flop_report* out) {
  out->sequence_length = r.sequence_length;
  out->embed = r.embed;
  out->attn_proj = r.attn_proj;
  out->attn_score = r.attn_score;
  out->attn_mix = r.attn_mix;
  out->mlp = r.mlp;
  out->injector = r.injector;
  out->injector_score = r.injector_score;
  out->injector_mix = r.injector_mix;
  out->head = r.head;
  out->total = r.total();
  out->softmax_elements = r.softmax_elements;
  out->layernorm_elements = r.layernorm_elements;
}

model::ModelConfig flop_config(const slimdt_config* cfg, size_t ds, size_t da) {
  model::ModelConfig m = cfg->cfg.model;
  m.state_dim = ds;
  m.action_dim = da;
  return m;
}

}  // namespace

extern "C" {

const char* slimdt_version(void) { return "0.1.0"; }

const char* slimdt_status_name(slimdt_status status) {
  switch (status) {
    case SLIMDT_OK: return "ok";
    case SLIMDT_INVALID_ARGUMENT: return "invalid argument";
    case SLIMDT_CONFIG: return "config error";
    case SLIMDT_NUMERIC: return "numerical error";
    case SLIMDT_IO: return "i/o error";
    case SLIMDT_FORMAT: return "format error";
    case SLIMDT_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* slimdt_last_error(void) { return g_error.c_str(); }
const char* slimdt_last_error_field(void) { return g_field.c_str(); }
const char* slimdt_last_summary(void) { return g_summary.c_str(); }

slimdt_status slimdt_config_load(const char* path, slimdt_config** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new slimdt_config{app::load_run_config(path)}; });
}

slimdt_status slimdt_config_parse(const char* text, slimdt_config** out) {
  if (!text) return null_arg("text");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new slimdt_config{app::parse_run_config(text)}; });
}

void slimdt_config_free(slimdt_config* cfg) { delete cfg; }

slimdt_status slimdt_config_echo(const slimdt_config* cfg, char* buf, size_t cap,
                                 size_t* needed) {
  if (!cfg) return null_arg("cfg");
  slimdt_status s = SLIMDT_OK;
  const slimdt_status g =
      guarded([&] { s = copy_out(app::echo_run_config(cfg->cfg), buf, cap, needed); });
  return g == SLIMDT_OK ? s : g;
}

slimdt_status slimdt_config_output_dir(const slimdt_config* cfg, char* buf, size_t cap,
                                       size_t* needed) {
  if (!cfg) return null_arg("cfg");
  return guarded(
      [&] { copy_out(cfg->cfg.resolved_output_dir().string(), buf, cap, needed); });
}

slimdt_status slimdt_cmd_datagen(const slimdt_config* cfg) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] {
    const auto r = app::cmd_datagen(cfg->cfg);
    std::ostringstream os;
    os << "wrote " << r.dataset_path.string() << " (" << r.report.n_trajectories
       << " trajectories)\n"
       << "return mean " << num(r.report.return_mean) << ", p10 " << num(r.report.return_p10)
       << ", p50 " << num(r.report.return_p50) << ", p90 " << num(r.report.return_p90)
       << ", max " << num(r.report.return_max) << "\n";
    for (const auto& [p, m] : r.report.policy_means) {
      os << "  " << envs::to_string(p) << " mean return " << num(m) << "\n";
    }
    g_summary = os.str();
  });
}

slimdt_status slimdt_cmd_train(const slimdt_config* cfg) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] {
    const auto r = app::cmd_train(cfg->cfg);
    std::ostringstream os;
    os << "wrote " << r.checkpoint_path.string() << " and " << r.log_path.string() << "\n";
    if (!r.log.rows.empty()) {
      const auto& last = r.log.rows.back();
      os << "steps " << r.log.rows.size() << ", final loss " << num(last.loss);
      if (last.eval_return_mean) {
        os << ", eval return " << num(last.eval_return_mean) << " +- "
           << num(last.eval_return_stderr);
      }
      os << "\n";
    }
    g_summary = os.str();
  });
}

slimdt_status slimdt_cmd_eval(const slimdt_config* cfg, const char* checkpoint) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] {
    const auto rows = app::cmd_eval(cfg->cfg, checkpoint ? checkpoint : "");
    std::ostringstream os;
    os << "target       target_rtg    n     mean        stderr\n";
    for (const auto& r : rows) {
      os << std::left << std::setw(12) << r.label << ' ' << std::setw(13) << num(r.target_rtg)
         << std::setw(5) << r.stats.n << ' ' << std::setw(11) << num(r.stats.mean) << ' '
         << num(r.stats.stderr_) << "\n";
    }
    g_summary = os.str();
  });
}

slimdt_status slimdt_cmd_bench(const slimdt_config* cfg) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] {
    const auto r = app::cmd_bench(cfg->cfg);
    std::ostringstream os;
    os << "wrote " << r.flops_path.string() << " and " << r.timing_path.string() << "\n";
    for (const auto& row : r.timing) {
      os << "  " << std::left << std::setw(14) << row.variant << " k=" << std::setw(4) << row.k
         << " median " << num(row.median_s * 1e3) << " ms\n";
    }
    g_summary = os.str();
  });
}

slimdt_status slimdt_cmd_ablate(const slimdt_config* cfg) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] {
    const auto r = app::cmd_ablate(cfg->cfg);
    std::ostringstream os;
    os << "ablation: " << r.cells << " cells, " << r.ran << " run, " << r.skipped
       << " already complete\nresults in " << r.results_path.string() << "\n";
    g_summary = os.str();
  });
}

slimdt_status slimdt_dataset_load(const char* path, slimdt_dataset** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new slimdt_dataset{data::load_dataset(path)}; });
}

slimdt_status slimdt_dataset_generate(const slimdt_config* cfg, slimdt_dataset** out) {
  if (!cfg) return null_arg("cfg");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded(
      [&] { *out = new slimdt_dataset{envs::generate_dataset(cfg->cfg.dataset.spec).dataset}; });
}

slimdt_status slimdt_dataset_save(const slimdt_dataset* ds, const char* path) {
  if (!ds) return null_arg("ds");
  if (!path) return null_arg("path");
  return guarded([&] { data::save_dataset(path, ds->data); });
}

void slimdt_dataset_free(slimdt_dataset* ds) { delete ds; }

size_t slimdt_dataset_size(const slimdt_dataset* ds) { return ds ? ds->data.size() : 0; }

slimdt_status slimdt_dataset_dims(const slimdt_dataset* ds, size_t* state_dim,
                                  size_t* action_dim) {
  if (!ds) return null_arg("ds");
  if (state_dim) *state_dim = ds->data.state_dim;
  if (action_dim) *action_dim = ds->data.action_dim;
  return SLIMDT_OK;
}

slimdt_status slimdt_dataset_trajectory(const slimdt_dataset* ds, size_t index, size_t* length,
                                        double* episode_return) {
  if (!ds) return null_arg("ds");
  if (index >= ds->data.size()) {
    return fail(SLIMDT_INVALID_ARGUMENT, "trajectory index " + std::to_string(index) +
                                             " out of range (size " +
                                             std::to_string(ds->data.size()) + ")");
  }
  const auto& t = ds->data.trajectories[index];
  if (length) *length = t.length();
  if (episode_return) *episode_return = t.episode_return();
  return SLIMDT_OK;
}

slimdt_status slimdt_model_load(const char* checkpoint, slimdt_model** out) {
  if (!checkpoint) return null_arg("checkpoint");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<slimdt_model>();
    m->ckpt = model::load_checkpoint(checkpoint);
    m->model = model::restore_model(m->ckpt);
    *out = m.release();
  });
}

void slimdt_model_free(slimdt_model* model) { delete model; }

size_t slimdt_model_param_count(const slimdt_model* model) {
  return model ? model->model->params().scalar_count() : 0;
}

slimdt_status slimdt_model_evaluate(const slimdt_model* model, const char* env,
                                    double target_rtg, size_t n_episodes, const uint64_t* seeds,
                                    size_t n_seeds, slimdt_return_stats* out) {
  if (!model) return null_arg("model");
  if (!env) return null_arg("env");
  if (!out) return null_arg("out");
  if (n_seeds > 0 && !seeds) return null_arg("seeds");
  return guarded([&] {
    const auto factory = envs::env_factory(envs::parse_env_id(env));
    const auto s = rollout::batch_evaluate(*model->model, factory, n_episodes, target_rtg,
                                           std::span<const uint64_t>(seeds, n_seeds),
                                           model->ckpt.stats);
    *out = slimdt_return_stats{};
    out->n = s.n;
    out->has_mean = s.mean.has_value();
    out->has_std = s.std.has_value();
    out->mean = s.mean.value_or(0.0);
    out->std_dev = s.std.value_or(0.0);
    out->std_error = s.stderr_.value_or(0.0);
  });
}

slimdt_status slimdt_count_flops(const slimdt_config* cfg, size_t state_dim, size_t action_dim,
                                 slimdt_flop_report* out) {
  if (!cfg) return null_arg("cfg");
  if (!out) return null_arg("out");
  return guarded([&] { fill(bench::count_flops(flop_config(cfg, state_dim, action_dim)), out); });
}

slimdt_status slimdt_instrumented_flops(const slimdt_config* cfg, size_t state_dim,
                                        size_t action_dim, slimdt_flop_report* out) {
  if (!cfg) return null_arg("cfg");
  if (!out) return null_arg("out");
  return guarded(
      [&] { fill(bench::instrumented_flops(flop_config(cfg, state_dim, action_dim)), out); });
}

}  // extern "C"
