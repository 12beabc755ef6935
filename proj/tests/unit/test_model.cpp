#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "bench/bench.hpp"
#include "errors.hpp"
#include "forward_oracle_data.hpp"
#include "model/model.hpp"
#include "support.hpp"

using namespace slimdt;
using model::InjectorConfig;
using model::InjectorKind;
using model::ModelConfig;
using model::Variant;

namespace {

data::WindowBatch copy_batch(const data::WindowBatch& b) {
  data::WindowBatch c = b;
  c.rtg = b.rtg.clone();
  c.states = b.states.clone();
  c.actions = b.actions.clone();
  c.target_actions = b.target_actions.clone();
  return c;
}

std::vector<double> run(const ModelConfig& cfg, const data::WindowBatch& batch) {
  model::DecisionModel m(cfg, 0);
  testing::formula_fill(m);
  const nn::Tensor out = m.forward(batch);
  return {out.data().begin(), out.data().end()};
}

struct Shape {
  Variant variant;
  InjectorConfig inj;
};

std::vector<Shape> all_shapes() {
  std::vector<Shape> out;
  out.push_back({Variant::DT, {}});
  for (Variant v : {Variant::SlimPre, Variant::SlimPost, Variant::SlimPrePost}) {
    for (InjectorKind k : model::kAllInjectorKinds) {
      InjectorConfig inj;
      inj.kind = k;
      out.push_back({v, inj});
      if (model::is_cross_attention(k)) {
        inj.causal_mask = true;
        out.push_back({v, inj});
      }
    }
  }
  return out;
}

bool is_causal(const Shape& s) {
  return s.variant == Variant::DT || !model::is_cross_attention(s.inj.kind) ||
         s.inj.causal_mask;
}

std::string describe(const Shape& s) {
  return std::string(model::to_string(s.variant)) + "/" +
         std::string(model::to_string(s.inj.kind)) + (s.inj.causal_mask ? "/causal" : "");
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("forward matches the independent oracle") {
  const data::WindowBatch batch = testing::oracle_batch();
  for (const auto& c : oracle::kForwardCases) {
    CAPTURE(c.name);
    InjectorConfig inj;
    inj.kind = model::parse_injector_kind(c.kind);
    inj.causal_mask = c.causal;
    inj.residual = c.residual;
    inj.rtg_embed_dim = static_cast<std::size_t>(c.rtg_dim);
    ModelConfig cfg = testing::oracle_config(model::parse_variant(c.variant), inj);
    cfg.post_injector_after_final_ln = c.after_final_ln;
    cfg.tanh_head = c.tanh_head;
    const auto got = run(cfg, batch);
    REQUIRE(got.size() == c.out.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(std::abs(got[i] - c.out[i]) <= 1e-12 * std::max(1.0, std::abs(c.out[i])));
    }
  }
}

TEST_CASE("sequence length per layout") {
  for (const Shape& s : all_shapes()) {
    ModelConfig cfg = testing::oracle_config(s.variant, s.inj);
    cfg.context_k = 5;
    CHECK(cfg.sequence_length() == (s.variant == Variant::DT ? 15u : 10u));
    model::DecisionModel m(cfg, 1);
    nn::DropoutRng rng(0);
    const auto batch = bench::probe_batch(cfg, 3);
    const auto seq = m.assemble(batch, false, rng);
    CHECK(seq.length == cfg.sequence_length());
    CHECK(seq.tokens.dim(1) == cfg.sequence_length());
    for (std::size_t t = 0; t < 5; ++t) {
      CHECK(seq.action_read_positions[t] == (s.variant == Variant::DT ? 3 * t + 1 : 2 * t));
    }
    CHECK(m.forward(batch).shape() == nn::Shape{1, 5, 1});
  }
}

TEST_CASE("prediction at step t ignores later inputs and the current action") {
  const data::WindowBatch base = testing::oracle_batch();
  for (const Shape& s : all_shapes()) {
    CAPTURE(describe(s));
    const ModelConfig cfg = testing::oracle_config(s.variant, s.inj);
    const auto ref = run(cfg, base);
    for (std::size_t t = 0; t < 3; ++t) {
      data::WindowBatch p = copy_batch(base);
      for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t u = t; u < 3; ++u) {
          p.actions.mutable_data()[b * 3 + u] += 0.77;
          if (u == t) continue;
          p.rtg.mutable_data()[b * 3 + u] -= 1.3;
          p.states.mutable_data()[(b * 3 + u) * 2] += 0.5;
        }
      }
      const auto out = run(cfg, p);
      bool unchanged = true;
      for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t u = 0; u <= t; ++u) unchanged &= out[b * 3 + u] == ref[b * 3 + u];
      }
      if (is_causal(s)) {
        CHECK(unchanged);
      } else if (t < 2) {
        // Non-causal cross-attention reads the whole window.
        CHECK_FALSE(unchanged);
      }
    }
  }
}

TEST_CASE("decoder token perturbation only moves later positions") {
  for (Variant v : model::kAllVariants) {
    CAPTURE(model::to_string(v));
    ModelConfig cfg = testing::oracle_config(v, {});
    cfg.context_k = v == Variant::DT ? 2 : 4;
    model::DecisionModel m(cfg, 1);
    nn::DropoutRng rng(0);
    const auto seq = m.assemble(bench::probe_batch(cfg, 2), false, rng);
    REQUIRE(seq.length <= 8);
    const std::size_t h = cfg.embed_dim;
    const nn::Tensor ref = m.decoder_forward(seq, false, rng);
    for (std::size_t i = 0; i < seq.length; ++i) {
      auto p = seq;
      p.tokens = seq.tokens.clone();
      for (std::size_t j = 0; j < h; ++j) p.tokens.mutable_data()[i * h + j] -= 0.4;
      const nn::Tensor out = m.decoder_forward(p, false, rng);
      for (std::size_t e = 0; e < i * h; ++e) CHECK(out.at(e) == ref.at(e));
      bool moved = false;
      for (std::size_t e = i * h; e < (i + 1) * h; ++e) moved |= out.at(e) != ref.at(e);
      CHECK(moved);
    }
  }
}

TEST_CASE("padded steps do not influence valid outputs") {
  const data::WindowBatch base = testing::oracle_batch();
  for (const Shape& s : all_shapes()) {
    CAPTURE(describe(s));
    const ModelConfig cfg = testing::oracle_config(s.variant, s.inj);
    const auto ref = run(cfg, base);
    data::WindowBatch p = copy_batch(base);
    const std::size_t pad = 1 * 3 + 0;
    p.rtg.mutable_data()[pad] = 9.0;
    p.states.mutable_data()[pad * 2] = -4.0;
    p.states.mutable_data()[pad * 2 + 1] = 3.0;
    p.actions.mutable_data()[pad] = 2.0;
    p.timesteps[pad] = 7;
    const auto out = run(cfg, p);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (i == pad) continue;
      CHECK(out[i] == ref[i]);
    }
  }
}

TEST_CASE("adaln injector is the identity modulation at init") {
  model::ParamStore store(3);
  InjectorConfig inj;
  inj.kind = InjectorKind::AdaLN;
  model::Injector injector(inj, 4, 4, store, "x.");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::vector<double> xv(12), rv(3);
  for (double& v : xv) v = n(rng);
  for (double& v : rv) v = n(rng);
  const nn::Tensor x = nn::Tensor::from({1, 3, 4}, xv);
  const nn::Tensor r = nn::Tensor::from({1, 3, 1}, rv);
  nn::DropoutRng drng(0);
  const nn::Tensor out = injector.forward(r, x, {1, 1, 1}, false, drng);
  const nn::Tensor want = nn::layer_norm(x);
  for (std::size_t i = 0; i < 12; ++i) CHECK(out.at(i) == doctest::Approx(want.at(i)));
}

TEST_CASE("injector width checks") {
  model::ParamStore store;
  InjectorConfig inj;
  inj.kind = InjectorKind::AdaLN;
  CHECK_THROWS_AS(model::Injector(inj, 3, 4, store, "a."), ConfigError);
  inj.kind = InjectorKind::CrossAttnKVtoQ;
  inj.residual = true;
  CHECK_THROWS_AS(model::Injector(inj, 3, 4, store, "b."), ConfigError);
  inj.kind = InjectorKind::Concat;
  CHECK_THROWS_AS(model::Injector(inj, 3, 4, store, "c."), ConfigError);
  inj.residual = false;
  inj.causal_mask = true;
  CHECK_THROWS_AS(model::Injector(inj, 3, 4, store, "d."), ConfigError);
}

TEST_CASE("config validation names the field") {
  ModelConfig cfg = testing::oracle_config(Variant::DT, {});
  cfg.n_heads = 3;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "model.n_heads");
  }
  cfg.n_heads = 1;
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.dropout = 0.1;
  cfg.activation = "gelu";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(model::parse_variant("slim"), ConfigError);
  CHECK_THROWS_AS(model::parse_injector_kind("film"), ConfigError);
}

TEST_CASE("timesteps beyond the table are rejected") {
  const ModelConfig cfg = testing::oracle_config(Variant::DT, {});
  model::DecisionModel m(cfg, 0);
  data::WindowBatch b = testing::oracle_batch();
  b.timesteps[0] = 8;
  CHECK_THROWS_AS(m.forward(b), ConfigError);
}

TEST_CASE("analytic FLOPs equal instrumented counts") {
  for (const Shape& s : all_shapes()) {
    CAPTURE(describe(s));
    for (std::size_t k : {1u, 4u, 7u}) {
      ModelConfig cfg = testing::oracle_config(s.variant, s.inj);
      cfg.context_k = k;
      cfg.max_timestep = 16;
      CHECK(bench::count_flops(cfg) == bench::instrumented_flops(cfg, 2));
    }
  }
}

TEST_CASE("quadratic attention ratio against DT") {
  for (std::size_t layers : {1u, 2u, 3u, 6u}) {
    for (std::size_t k : {1u, 5u, 20u}) {
      for (std::size_t h : {8u, 32u}) {
        ModelConfig cfg = testing::oracle_config(Variant::SlimPre, {});
        cfg.n_layers = layers;
        cfg.context_k = k;
        cfg.embed_dim = h;
        cfg.max_timestep = 32;
        CHECK(bench::quadratic_ratio_vs_dt(cfg, false) == doctest::Approx(4.0 / 9.0));
        CHECK(bench::quadratic_ratio_vs_dt(cfg, true) == doctest::Approx(4.0 / 9.0));
        cfg.injector.kind = InjectorKind::CrossAttnKVtoQ;
        const double n = static_cast<double>(layers);
        CHECK(bench::quadratic_ratio_vs_dt(cfg, false) == doctest::Approx(4.0 / 9.0));
        CHECK(bench::quadratic_ratio_vs_dt(cfg, true) ==
              doctest::Approx((4.0 * n + 1.0) / (9.0 * n)));
        if (layers == 1) {
          CHECK(bench::quadratic_ratio_vs_dt(cfg, true) == doctest::Approx(5.0 / 9.0));
        }
      }
    }
  }
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir("ckpt");
  InjectorConfig inj;
  inj.kind = InjectorKind::CrossAttnQVtoK;
  inj.causal_mask = true;
  ModelConfig cfg = testing::oracle_config(Variant::SlimPrePost, inj);
  cfg.tanh_head = true;
  model::DecisionModel m(cfg, 9);
  data::DatasetStats stats{{0.5, -1.0}, {2.0, 3.0}, 42.0};
  const auto path = dir.path / "m.sdtc";
  model::save_checkpoint(path, m, stats, "{\"echo\": 1}");

  const model::Checkpoint ck = model::load_checkpoint(path);
  CHECK(ck.stats.state_mean == stats.state_mean);
  CHECK(ck.stats.state_std == stats.state_std);
  CHECK(ck.stats.rtg_scale == 42.0);
  CHECK(ck.run_config_echo == "{\"echo\": 1}");
  CHECK(ck.config.variant == Variant::SlimPrePost);
  CHECK(ck.config.injector.kind == InjectorKind::CrossAttnQVtoK);
  CHECK(ck.config.injector.causal_mask);
  CHECK(ck.config.tanh_head);
  const auto restored = model::restore_model(ck);
  const auto batch = testing::oracle_batch();
  const nn::Tensor a = m.forward(batch), b = restored->forward(batch);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));

  // Truncation and a bad magic are format errors.
  const auto bytes = std::filesystem::file_size(path);
  std::filesystem::copy_file(path, dir.path / "cut.sdtc");
  std::filesystem::resize_file(dir.path / "cut.sdtc", bytes - 5);
  CHECK_THROWS_AS(model::load_checkpoint(dir.path / "cut.sdtc"), FormatError);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(model::load_checkpoint(path), FormatError);
  CHECK_THROWS_AS(model::load_checkpoint(dir.path / "missing.sdtc"), IoError);
}

TEST_CASE("model config json round trip") {
  InjectorConfig inj;
  inj.kind = InjectorKind::Concat;
  inj.rtg_embed_dim = 5;
  ModelConfig cfg = testing::oracle_config(Variant::SlimPost, inj);
  cfg.post_injector_after_final_ln = false;
  const ModelConfig back = model::model_config_from_json(model::model_config_to_json(cfg));
  CHECK(model::model_config_to_json(back) == model::model_config_to_json(cfg));
  CHECK(back.injector.rtg_embed_dim == 5);
  CHECK_FALSE(back.post_injector_after_final_ln);
}

TEST_CASE("slim variants drop the rtg token embedding") {
  const ModelConfig dt = testing::oracle_config(Variant::DT, {});
  model::DecisionModel m(dt, 0);
  CHECK(m.params().find("embed.rtg.weight") != nullptr);
  const ModelConfig slim = testing::oracle_config(Variant::SlimPre, {});
  model::DecisionModel s(slim, 0);
  CHECK(s.params().find("embed.rtg.weight") == nullptr);
  CHECK(s.params().find("embed.state.weight") == nullptr);
  CHECK(s.params().find("injector_pre.fuse.weight") != nullptr);
}

}  // TEST_SUITE
