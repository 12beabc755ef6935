#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include "app/commands.hpp"
#include "app/config.hpp"
#include "errors.hpp"
#include "support.hpp"

using namespace slimdt;

namespace {

std::string field_of(const std::string& json) {
  try {
    app::parse_run_config(json);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

// A run small enough for unit tests.
app::RunConfig tiny_run(const std::filesystem::path& out) {
  app::RunConfig c = app::parse_run_config(R"({
    "model": {"n_layers": 1, "embed_dim": 8, "context_k": 3, "dropout": 0.0,
              "max_timestep": 64, "variant": "slim_pre"},
    "train": {"batch_size": 4, "lr": 1e-3, "warmup_steps": 2, "total_steps": 4, "seed": 3},
    "dataset": {"n_trajectories": 10, "seed": 2},
    "eval": {"target_rtg": ["max", -20.0], "n_episodes": 2, "seeds": [0],
             "train_eval_episodes": 1},
    "bench": {"k_sweep": [1, 2], "reps": 10, "warmup": 1},
    "ablation": {"variants": ["dt", "slim_pre"], "injector_kinds": ["concat", "cross_k_to_qv"],
                 "causal_mask": [false], "rtg_embed_dims": [4], "seeds": [0]}
  })");
  c.output_dir = out.string();
  return c;
}

}  // namespace

TEST_SUITE("app") {

TEST_CASE("defaults") {
  const app::RunConfig c = app::parse_run_config("{}");
  CHECK(c.model.n_layers == 3);
  CHECK(c.model.embed_dim == 128);
  CHECK(c.model.context_k == 20);
  CHECK(c.model.dropout == 0.1);
  CHECK(c.train.batch_size == 128);
  CHECK(c.train.lr == 1e-4);
  CHECK(c.train.weight_decay == 1e-4);
  CHECK(c.train.grad_clip == 0.25);
  CHECK(c.train.warmup_steps == 10000);
  CHECK(c.dataset.spec.n_trajectories == 300);
  REQUIRE(c.eval.target_rtg.size() == 3);
  CHECK(c.eval.target_rtg[0].label() == "max");
}

TEST_CASE("parsing values") {
  const app::RunConfig c = app::parse_run_config(R"({
    "output_dir": "x/y",
    "model": {"variant": "slim_post", "injector": {"kind": "cross_kv_to_q", "causal_mask": true,
              "residual": true}, "post_injector_after_final_ln": false, "tanh_head": true},
    "train": {"total_steps": 7, "seed": 9},
    "dataset": {"env": "spike_reward", "expert_fraction": 0.2, "medium_fraction": 0.5,
                "random_fraction": 0.3},
    "eval": {"target_rtg": [-12.5, "p90"]}
  })");
  CHECK(c.output_dir == "x/y");
  CHECK(c.model.variant == model::Variant::SlimPost);
  CHECK(c.model.injector.kind == model::InjectorKind::CrossAttnKVtoQ);
  CHECK(c.model.injector.causal_mask);
  CHECK(c.model.injector.residual);
  CHECK_FALSE(c.model.post_injector_after_final_ln);
  CHECK(c.model.tanh_head);
  CHECK(c.train.total_steps == 7);
  CHECK(c.dataset.spec.env == envs::EnvId::SpikeReward);
  CHECK(std::get<double>(c.eval.target_rtg[0].value) == -12.5);
  CHECK(c.eval.target_rtg[1].label() == "p90");
}

TEST_CASE("errors name the dotted field") {
  CHECK(field_of(R"({"modle": {}})") == "modle");
  CHECK(field_of(R"({"model": {"n_layer": 2}})") == "model.n_layer");
  CHECK(field_of(R"({"model": {"injector": {"knd": "concat"}}})") == "model.injector.knd");
  CHECK(field_of(R"({"model": {"n_layers": "three"}})") == "model.n_layers");
  CHECK(field_of(R"({"model": {"n_layers": -1}})") == "model.n_layers");
  CHECK(field_of(R"({"train": {"lr": true}})") == "train.lr");
  CHECK(field_of(R"({"model": {"variant": "gpt"}})") == "model.variant");
  CHECK(field_of(R"({"model": {"embed_dim": 10, "n_heads": 3}})") == "model.n_heads");
  CHECK(field_of(R"({"eval": {"target_rtg": ["p42"]}})").rfind("eval.target_rtg", 0) == 0);
  CHECK(field_of(R"({"dataset": {"env": "pong"}})") == "dataset.env");
  CHECK_THROWS_AS(app::parse_run_config("{"), ConfigError);
  CHECK_THROWS_AS(app::parse_run_config("[]"), ConfigError);
}

TEST_CASE("echo round trip") {
  const app::RunConfig c = app::parse_run_config(R"({
    "model": {"variant": "slim_pre_post", "injector": {"kind": "adaln"}},
    "train": {"seed": 5}, "eval": {"target_rtg": [-3.25, "expert"]}
  })");
  const std::string echo = app::echo_run_config(c);
  CHECK(app::echo_run_config(app::parse_run_config(echo)) == echo);
  CHECK(echo.find("\"adaln\"") != std::string::npos);
}

TEST_CASE("output root override") {
  app::RunConfig c;
  c.output_dir = "runs/a";
  ::setenv(app::kOutputRootEnv, "/tmp/root", 1);
  CHECK(c.resolved_output_dir() == std::filesystem::path("/tmp/root/runs/a"));
  c.output_dir = "/abs/b";
  CHECK(c.resolved_output_dir() == std::filesystem::path("/abs/b"));
  ::unsetenv(app::kOutputRootEnv);
  c.output_dir = "runs/a";
  CHECK(c.resolved_output_dir() == std::filesystem::path("runs/a"));
}

TEST_CASE("missing config file is an io error") {
  CHECK_THROWS_AS(app::load_run_config("/nonexistent/cfg.json"), IoError);
}

TEST_CASE("ablation grid collapses irrelevant axes") {
  const app::AblationSection defaults;
  const auto cells = app::ablation_cells(defaults);
  // DT: 1 shape. Each Slim variant: 3 concat widths + adaln + 4 kinds x 2 masks.
  CHECK(cells.size() == (1 + 3 * 12) * 5);
  std::set<std::string> ids;
  for (const auto& c : cells) ids.insert(c.id());
  CHECK(ids.size() == cells.size());
  for (const auto& c : cells) {
    if (c.variant == model::Variant::DT) {
      CHECK(c.kind == model::InjectorKind::Concat);
      CHECK_FALSE(c.causal_mask);
    }
    if (!model::is_cross_attention(c.kind)) CHECK_FALSE(c.causal_mask);
    if (c.kind != model::InjectorKind::Concat) CHECK(c.rtg_embed_dim == 0);
  }
}

TEST_CASE("target resolution") {
  envs::DatasetReport r;
  r.return_p10 = -100;
  r.return_p50 = -50;
  r.return_p90 = -20;
  r.return_max = -10;
  CHECK(app::resolve_target({std::string("p10")}, r) == -100);
  CHECK(app::resolve_target({std::string("p90")}, r) == -20);
  CHECK(app::resolve_target({std::string("max")}, r) == -10);
  CHECK(app::resolve_target({-7.5}, r) == -7.5);
  CHECK_THROWS_AS(app::resolve_target({std::string("expert")}, r), ConfigError);
  r.policy_means = {{envs::Policy::Expert, -11.0}};
  CHECK(app::resolve_target({std::string("expert")}, r) == -11.0);
}

TEST_CASE("datagen, train, eval end to end") {
  testing::TempDir dir("e2e");
  const app::RunConfig cfg = tiny_run(dir.path);
  const auto dg = app::cmd_datagen(cfg);
  CHECK(std::filesystem::exists(dg.dataset_path));
  CHECK(std::filesystem::exists(dir.path / "dataset_report.json"));
  CHECK(dg.report.n_trajectories == 10);

  const auto tr = app::cmd_train(cfg);
  CHECK(std::filesystem::exists(tr.checkpoint_path));
  CHECK(count_lines(tr.log_path) == 5);
  const auto ck = model::load_checkpoint(tr.checkpoint_path);
  CHECK(ck.run_config_echo == app::echo_run_config(cfg));

  const auto rows = app::cmd_eval(cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].label == "max");
  CHECK(rows[0].target_rtg == doctest::Approx(dg.report.return_max));
  CHECK(rows[1].target_rtg == -20.0);
  CHECK(rows[0].stats.n == 2);
  CHECK(count_lines(dir.path / "eval.csv") == 3);
  CHECK(std::filesystem::exists(dir.path / "traces" / "target_max.csv"));

  // A dataset file given by path is used as-is.
  app::RunConfig from_file = cfg;
  from_file.dataset.path = dg.dataset_path.string();
  from_file.output_dir = (dir.path / "again").string();
  const auto prepared = app::prepare_dataset(from_file);
  CHECK(prepared.dataset.size() == 10);
  CHECK(prepared.sources.empty());
}

TEST_CASE("eval without a checkpoint lists what exists") {
  testing::TempDir dir("nock");
  app::RunConfig cfg = tiny_run(dir.path / "run");
  std::filesystem::create_directories(dir.path / "run" / "sub");
  std::ofstream(dir.path / "run" / "sub" / "old.sdtc") << "x";
  try {
    app::cmd_eval(cfg);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("old.sdtc") != std::string::npos);
  }
  testing::TempDir empty("nock2");
  try {
    app::cmd_eval(tiny_run(empty.path));
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("none") != std::string::npos);
  }
}

TEST_CASE("bench writes flops and timing tables") {
  testing::TempDir dir("bench");
  const app::RunConfig cfg = tiny_run(dir.path);
  const auto b = app::cmd_bench(cfg);
  // Per k: DT once, then 3 Slim variants x 6 kinds.
  CHECK(count_lines(b.flops_path) == 1 + 2 * 19);
  CHECK(count_lines(b.timing_path) == 1 + 2 * 4);
  CHECK(b.timing.size() == 8);
  for (const auto& row : b.timing) {
    CHECK(row.reps == 10);
    CHECK(row.median_s > 0.0);
    CHECK(row.p10_s <= row.median_s);
    CHECK(row.median_s <= row.p90_s);
  }
}

TEST_CASE("ablation resumes completed cells") {
  testing::TempDir dir("ablate");
  const app::RunConfig cfg = tiny_run(dir.path);
  const auto first = app::cmd_ablate(cfg);
  // DT + slim_pre x {concat, cross_k_to_qv}; one row per cell at the first target
  CHECK(first.cells == 3);
  CHECK(first.ran == 3);
  CHECK(count_lines(first.results_path) == 1 + 3);
  const auto second = app::cmd_ablate(cfg);
  CHECK(second.ran == 0);
  CHECK(second.skipped == 3);
  CHECK(count_lines(second.results_path) == 1 + 3);
}

}  // TEST_SUITE
