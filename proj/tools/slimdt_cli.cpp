// Command-line front end over the C API.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "slimdt/slimdt.h"

namespace {

int exit_code(slimdt_status s) {
  switch (s) {
    case SLIMDT_OK: return 0;
    case SLIMDT_CONFIG:
    case SLIMDT_INVALID_ARGUMENT: return 2;
    case SLIMDT_NUMERIC: return 3;
    case SLIMDT_IO:
    case SLIMDT_FORMAT: return 4;
    case SLIMDT_INTERNAL: return 1;
  }
  return 1;
}

int report(slimdt_status s) {
  if (s == SLIMDT_OK) {
    std::fputs(slimdt_last_summary(), stdout);
    return 0;
  }
  std::fprintf(stderr, "slimdt: %s: %s\n", slimdt_status_name(s), slimdt_last_error());
  return exit_code(s);
}

struct ConfigHandle {
  slimdt_config* ptr = nullptr;
  ~ConfigHandle() { slimdt_config_free(ptr); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Return-conditioned sequence models on synthetic control tasks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(slimdt_version()));

  std::string config_path;
  std::string checkpoint;

  auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "Run config (JSON)")->required();
    return sub;
  };
  add("datagen", "Generate the offline dataset");
  add("train", "Train a model and write a checkpoint");
  CLI::App* eval = add("eval", "Evaluate a checkpoint at the configured target returns");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <output_dir>/model.sdtc)");
  add("bench", "Write FLOP counts and forward timings");
  add("ablate", "Run the ablation grid (resumes completed cells)");
  add("echo-config", "Print the fully resolved config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  ConfigHandle cfg;
  slimdt_status s = slimdt_config_load(config_path.c_str(), &cfg.ptr);
  if (s != SLIMDT_OK) return report(s);

  const std::string cmd = app.get_subcommands().front()->get_name();
  if (cmd == "datagen") return report(slimdt_cmd_datagen(cfg.ptr));
  if (cmd == "train") return report(slimdt_cmd_train(cfg.ptr));
  if (cmd == "eval") {
    return report(slimdt_cmd_eval(cfg.ptr, checkpoint.empty() ? nullptr : checkpoint.c_str()));
  }
  if (cmd == "bench") return report(slimdt_cmd_bench(cfg.ptr));
  if (cmd == "ablate") return report(slimdt_cmd_ablate(cfg.ptr));

  size_t needed = 0;
  s = slimdt_config_echo(cfg.ptr, nullptr, 0, &needed);
  if (s != SLIMDT_OK) return report(s);
  std::string text(needed, '\0');
  s = slimdt_config_echo(cfg.ptr, text.data(), text.size(), &needed);
  if (s != SLIMDT_OK) return report(s);
  std::printf("%s\n", text.c_str());
  return 0;
}
