#include "bench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>

#include "envs/envs.hpp"
#include "errors.hpp"

namespace slimdt::bench {

model::FlopReport count_flops(const model::ModelConfig& cfg) { return model::model_flops(cfg); }

data::WindowBatch probe_batch(const model::ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t k = cfg.context_k, ds = cfg.state_dim, da = cfg.action_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  data::Window w;
  w.k = k;
  for (std::size_t t = 0; t < k; ++t) {
    w.rtg.push_back(normal(rng));
    w.timesteps.push_back(static_cast<std::int64_t>(t % cfg.max_timestep));
    w.valid.push_back(1);
    w.action_known.push_back(t + 1 < k ? 1 : 0);
  }
  for (std::size_t i = 0; i < k * ds; ++i) w.states.push_back(normal(rng));
  for (std::size_t i = 0; i < k * da; ++i) w.actions.push_back(normal(rng));
  return data::collate(std::span(&w, 1), ds, da);
}

model::FlopReport instrumented_flops(const model::ModelConfig& cfg, std::uint64_t seed) {
  const model::DecisionModel m(cfg, seed);
  const data::WindowBatch batch = probe_batch(cfg, seed);
  nn::FlopCounter counter;
  {
    nn::FlopCounter::Scope scope(counter);
    (void)m.forward(batch);
  }
  model::FlopReport r;
  r.sequence_length = cfg.sequence_length();
  r.embed = counter.macs("embed");
  r.attn_proj = counter.macs("attn_proj");
  r.attn_score = counter.macs("attn_score");
  r.attn_mix = counter.macs("attn_mix");
  r.mlp = counter.macs("mlp");
  r.injector_score = counter.macs("injector_score");
  r.injector_mix = counter.macs("injector_mix");
  r.injector = counter.macs("injector") + r.injector_score + r.injector_mix;
  r.head = counter.macs("head");
  r.softmax_elements = counter.elementwise("softmax");
  r.layernorm_elements = counter.elementwise("layernorm");
  if (r.total() != counter.total_macs()) {
    throw ContractError("instrumented_flops: uncategorized multiply-adds");
  }
  return r;
}

double quadratic_ratio_vs_dt(const model::ModelConfig& cfg, bool include_injector) {
  model::ModelConfig dt = cfg;
  dt.variant = model::Variant::DT;
  const model::FlopReport base = count_flops(dt);
  const model::FlopReport r = count_flops(cfg);
  const double num = static_cast<double>(include_injector ? r.quadratic_terms()
                                                          : r.decoder_quadratic_terms());
  return num / static_cast<double>(base.decoder_quadratic_terms());
}

namespace {

using Clock = std::chrono::steady_clock;

double clock_tick_seconds() {
  // Smallest observable increment of the clock.
  double best = 1.0;
  for (int i = 0; i < 50; ++i) {
    const auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    best = std::min(best, std::chrono::duration<double>(b - a).count());
  }
  return best;
}

}  // namespace

std::vector<TimingRow> time_forward(const model::ModelConfig& cfg,
                                    std::span<const std::size_t> k_sweep,
                                    const TimingOptions& opts) {
  if (opts.reps < 10) throw ConfigError("must be >= 10", "bench.reps");
  const double tick = clock_tick_seconds();
  std::vector<TimingRow> rows;
  for (std::size_t k : k_sweep) {
    model::ModelConfig c = cfg;
    c.context_k = k;
    c.max_timestep = std::max(c.max_timestep, k);
    const model::DecisionModel m(c, 0);
    const data::WindowBatch batch = probe_batch(c, 0);
    for (std::size_t i = 0; i < opts.warmup; ++i) (void)m.forward(batch);

    TimingRow row;
    row.variant = std::string(model::to_string(c.variant));
    row.injector = model::has_pre_injector(c.variant) || model::has_post_injector(c.variant)
                       ? std::string(model::to_string(c.injector.kind))
                       : "none";
    row.k = k;
    row.embed_dim = c.embed_dim;
    row.n_layers = c.n_layers;
    row.reps = opts.reps;
    row.warmup = opts.warmup;
    // Grow the inner loop until one sample spans enough clock ticks.
    for (;;) {
      const auto a = Clock::now();
      for (std::size_t i = 0; i < row.inner; ++i) (void)m.forward(batch);
      const double dt = std::chrono::duration<double>(Clock::now() - a).count();
      if (dt >= tick * static_cast<double>(opts.min_ticks)) break;
      row.inner *= 2;
    }
    std::vector<double> samples;
    samples.reserve(opts.reps);
    for (std::size_t r = 0; r < opts.reps; ++r) {
      const auto a = Clock::now();
      for (std::size_t i = 0; i < row.inner; ++i) (void)m.forward(batch);
      samples.push_back(std::chrono::duration<double>(Clock::now() - a).count() /
                        static_cast<double>(row.inner));
    }
    row.median_s = envs::percentile(samples, 50.0);
    row.p10_s = envs::percentile(samples, 10.0);
    row.p90_s = envs::percentile(samples, 90.0);
    rows.push_back(row);
  }
  return rows;
}

void write_flops_csv(const std::filesystem::path& path,
                     std::span<const model::ModelConfig> configs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "variant,injector,k,embed_dim,n_layers,n_heads,sequence_length,embed,attn_proj,"
         "attn_score,attn_mix,mlp,injector_macs,injector_score,injector_mix,head,total,"
         "softmax_elements,layernorm_elements,quadratic_ratio_vs_dt,"
         "quadratic_ratio_vs_dt_with_injector\n";
  out.precision(17);
  for (const auto& cfg : configs) {
    const model::FlopReport r = count_flops(cfg);
    const bool has_inj =
        model::has_pre_injector(cfg.variant) || model::has_post_injector(cfg.variant);
    out << model::to_string(cfg.variant) << ','
        << (has_inj ? std::string(model::to_string(cfg.injector.kind)) : "none") << ','
        << cfg.context_k << ',' << cfg.embed_dim << ',' << cfg.n_layers << ',' << cfg.n_heads
        << ',' << r.sequence_length << ',' << r.embed << ',' << r.attn_proj << ','
        << r.attn_score << ',' << r.attn_mix << ',' << r.mlp << ',' << r.injector << ','
        << r.injector_score << ',' << r.injector_mix << ',' << r.head << ',' << r.total() << ','
        << r.softmax_elements << ',' << r.layernorm_elements << ','
        << quadratic_ratio_vs_dt(cfg, false) << ',' << quadratic_ratio_vs_dt(cfg, true) << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

void write_timing_csv(const std::filesystem::path& path, std::span<const TimingRow> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "variant,injector,k,embed_dim,n_layers,reps,warmup,inner,median_s,p10_s,p90_s\n";
  out.precision(9);
  for (const auto& r : rows) {
    out << r.variant << ',' << r.injector << ',' << r.k << ',' << r.embed_dim << ','
        << r.n_layers << ',' << r.reps << ',' << r.warmup << ',' << r.inner << ','
        << r.median_s << ',' << r.p10_s << ',' << r.p90_s << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace slimdt::bench
