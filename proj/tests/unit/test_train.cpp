#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "envs/envs.hpp"
#include "errors.hpp"
#include "support.hpp"
#include "train/train.hpp"

using namespace slimdt;

namespace {

struct Fixture {
  data::Dataset dataset;
  data::DatasetStats stats;
  Fixture() {
    envs::DatasetSpec spec;
    spec.n_trajectories = 20;
    spec.seed = 3;
    dataset = envs::generate_dataset(spec).dataset;
    stats = data::fit_stats(dataset);
  }
};

model::ModelConfig small(model::Variant v, model::InjectorKind kind = model::InjectorKind::Concat) {
  model::InjectorConfig inj;
  inj.kind = kind;
  model::ModelConfig c = testing::oracle_config(v, inj);
  c.n_heads = 1;
  c.embed_dim = 16;
  c.context_k = 5;
  c.max_timestep = 64;
  c.state_dim = 2;
  c.action_dim = 1;
  return c;
}

std::vector<double> flat_params(const model::DecisionModel& m) {
  std::vector<double> out;
  for (const auto& p : m.params().entries()) {
    out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  }
  return out;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("warmup schedule") {
  train::TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_steps = 10;
  CHECK(train::learning_rate(cfg, 0) == doctest::Approx(1e-4));
  CHECK(train::learning_rate(cfg, 4) == doctest::Approx(5e-4));
  CHECK(train::learning_rate(cfg, 9) == 1e-3);
  CHECK(train::learning_rate(cfg, 5000) == 1e-3);
}

TEST_CASE("train config validation") {
  train::TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.warmup_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.grad_clip = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lr = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("adamw update by hand") {
  model::ParamStore store;
  nn::Tensor w = store.constant("w", {2}, 0.0);
  w.mutable_data()[0] = 1.0;
  w.mutable_data()[1] = -2.0;
  auto g = w.mutable_grad();
  g[0] = 0.5;
  g[1] = 0.0;
  train::AdamW opt(store);
  opt.step(store, 0.1, 0.01);
  CHECK(w.at(0) == doctest::Approx(1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01)).epsilon(1e-14));
  CHECK(w.at(1) == doctest::Approx(-1.998).epsilon(1e-14));
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("sampler windows are normalized and reproducible") {
  Fixture f;
  train::BatchSampler a(f.dataset, f.stats, 5, 9), b(f.dataset, f.stats, 5, 9);
  const auto x = a.next(32), y = b.next(32);
  CHECK(x.states.shape() == nn::Shape{32, 5, 2});
  CHECK(x.timesteps == y.timesteps);
  for (std::size_t i = 0; i < x.states.numel(); ++i) CHECK(x.states.at(i) == y.states.at(i));
  // End steps cover the whole episode, so early windows are padded.
  std::size_t padded = 0, total = 0;
  for (int r = 0; r < 20; ++r) {
    const auto z = a.next(64);
    for (std::size_t i = 0; i < 64; ++i) {
      padded += z.pad_mask[i * 5] == 0;
      ++total;
    }
  }
  CHECK(padded > 0);
  CHECK(padded < total / 5);
}

TEST_CASE("clipping bounds the applied gradient") {
  Fixture f;
  train::TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_steps = 1;
  for (model::Variant v : model::kAllVariants) {
    model::DecisionModel m(small(v), 1);
    train::AdamW opt(m.params());
    train::BatchSampler s(f.dataset, f.stats, 5, 1);
    nn::DropoutRng rng(0);
    for (std::size_t step = 0; step < 5; ++step) {
      const auto r = train::train_step(m, s.next(16), opt, cfg, step, rng);
      CHECK(r.grad_norm_clipped <= 0.25 + 1e-12);
      CHECK(r.grad_norm_clipped == doctest::Approx(std::min(r.grad_norm, 0.25)));
      CHECK(train::global_grad_norm(m.params()) == doctest::Approx(r.grad_norm_clipped));
      CHECK(std::isfinite(r.loss));
    }
  }
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
  Fixture f;
  train::TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.1;
  cfg.warmup_steps = 1;
  model::DecisionModel m(small(model::Variant::SlimPrePost, model::InjectorKind::AdaLN), 4);
  const auto before = flat_params(m);
  train::AdamW opt(m.params());
  train::BatchSampler s(f.dataset, f.stats, 5, 2);
  nn::DropoutRng rng(0);
  for (std::size_t step = 0; step < 3; ++step) train::train_step(m, s.next(8), opt, cfg, step, rng);
  CHECK(flat_params(m) == before);
}

TEST_CASE("loss ignores padded positions") {
  data::WindowBatch b = testing::oracle_batch();
  model::ModelConfig c3 = testing::oracle_config(model::Variant::DT, {});
  model::DecisionModel m3(c3, 3);
  const auto loss = [&](const data::WindowBatch& batch) {
    return nn::masked_mse(m3.forward(batch), batch.target_actions, batch.pad_mask).item();
  };
  const double ref = loss(b);
  data::WindowBatch p = b;
  p.states = b.states.clone();
  p.target_actions = b.target_actions.clone();
  p.states.mutable_data()[6] = 100.0;   // batch 1, step 0 (padded)
  p.target_actions.mutable_data()[3] = -50.0;
  CHECK(loss(p) == ref);
}

TEST_CASE("single batch overfit for every variant") {
  Fixture f;
  train::TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  cfg.warmup_steps = 10;
  cfg.grad_clip = 0.25;
  for (model::Variant v : model::kAllVariants) {
    CAPTURE(model::to_string(v));
    model::ModelConfig mc = small(v);
    mc.dropout = 0.0;
    model::DecisionModel m(mc, 11);
    train::AdamW opt(m.params());
    train::BatchSampler s(f.dataset, f.stats, 5, 5);
    const auto batch = s.next(16);
    nn::DropoutRng rng(0);
    double last = 0.0;
    for (std::size_t step = 0; step < 500; ++step) {
      last = train::train_step(m, batch, opt, cfg, step, rng).loss;
    }
    const double final_loss =
        nn::masked_mse(m.forward(batch), batch.target_actions, batch.pad_mask).item();
    CHECK(final_loss < 1e-3);
    CHECK(last < 1e-2);
  }
}

TEST_CASE("training is deterministic under the seed") {
  Fixture f;
  train::TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.warmup_steps = 5;
  cfg.total_steps = 20;
  cfg.seed = 21;
  model::ModelConfig mc = small(model::Variant::SlimPre, model::InjectorKind::CrossAttnKtoQV);
  mc.dropout = 0.1;
  model::DecisionModel a(mc, 1), b(mc, 1);
  const auto la = train::train(a, f.dataset, f.stats, cfg);
  const auto lb = train::train(b, f.dataset, f.stats, cfg);
  CHECK(flat_params(a) == flat_params(b));
  REQUIRE(la.rows.size() == lb.rows.size());
  for (std::size_t i = 0; i < la.rows.size(); ++i) CHECK(la.rows[i].loss == lb.rows[i].loss);

  cfg.seed = 22;
  model::DecisionModel c(mc, 1);
  train::train(c, f.dataset, f.stats, cfg);
  CHECK(flat_params(c) != flat_params(a));
}

TEST_CASE("eval hook cadence and log csv") {
  testing::TempDir dir("trainlog");
  Fixture f;
  train::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.warmup_steps = 2;
  cfg.total_steps = 7;
  cfg.eval_every = 3;
  model::DecisionModel m(small(model::Variant::DT), 0);
  std::vector<std::size_t> seen;
  const auto log = train::train(m, f.dataset, f.stats, cfg,
                                [&](const model::DecisionModel&, std::size_t step) {
                                  seen.push_back(step);
                                  return train::EvalPoint{-1.5, 0.25};
                                });
  CHECK(seen == std::vector<std::size_t>{2, 5, 6});
  REQUIRE(log.rows.size() == 7);
  CHECK(log.rows[2].eval_return_mean == -1.5);
  CHECK_FALSE(log.rows[3].eval_return_mean.has_value());
  log.write_csv(dir.path / "log.csv");
  std::ifstream in(dir.path / "log.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "step,loss,grad_norm,grad_norm_clipped,lr,eval_return_mean,eval_return_stderr");
}

TEST_CASE("non-finite loss raises") {
  Fixture f;
  model::DecisionModel m(small(model::Variant::DT), 0);
  for (auto& p : m.params().entries()) {
    if (p.name == "head.bias") p.value.mutable_data()[0] = std::numeric_limits<double>::infinity();
  }
  train::TrainConfig cfg;
  train::AdamW opt(m.params());
  train::BatchSampler s(f.dataset, f.stats, 5, 0);
  nn::DropoutRng rng(0);
  CHECK_THROWS_AS(train::train_step(m, s.next(4), opt, cfg, 0, rng), NumericalError);
}

}  // TEST_SUITE
