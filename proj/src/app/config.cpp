#include "app/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "errors.hpp"

namespace slimdt::app {

using json = nlohmann::ordered_json;

std::string TargetRtg::label() const {
  if (const auto* s = std::get_if<std::string>(&value)) return *s;
  std::ostringstream os;
  os.precision(17);
  os << std::get<double>(value);
  return os.str();
}

RunConfig::RunConfig() {
  // Only the evaluation targets differ from the member defaults.
  eval.target_rtg = {TargetRtg{std::string("max")}, TargetRtg{std::string("p90")},
                     TargetRtg{std::string("p10")}};
}

namespace {

const std::set<std::string> kQuantileTargets{"p10", "p50", "p90", "max", "expert"};

/// Walks one JSON object, remembering which keys were read so that leftovers
/// can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void size(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = as_size(*v, field(key));
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_size(*v, field(key));
  }
  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError("expected a number", field(key));
      out = v->get<double>();
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError("expected true or false", field(key));
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError("expected a string", field(key));
      out = v->get<std::string>();
    }
  }
  template <typename T, typename F>
  void list(const std::string& key, std::vector<T>& out, F convert) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_array()) throw ConfigError("expected a list", field(key));
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      out.push_back(convert((*v)[i], field(key) + "[" + std::to_string(i) + "]"));
    }
  }
  const json* object(const std::string& key) {
    const json* v = find(key);
    if (v && !v->is_object()) throw ConfigError("expected an object", field(key));
    return v;
  }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key", field(it.key()));
    }
  }

  static std::uint64_t as_size(const json& v, const std::string& field) {
    if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer", field);
    return v.get<std::uint64_t>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T>
T with_field(const std::string& field, const std::string& text, T (*parse)(std::string_view)) {
  try {
    return parse(text);
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), field);
  }
}

void parse_injector(Section& s, model::InjectorConfig& inj) {
  std::string kind(model::to_string(inj.kind));
  s.string("kind", kind);
  inj.kind = with_field<model::InjectorKind>(s.field("kind"), kind, model::parse_injector_kind);
  s.boolean("causal_mask", inj.causal_mask);
  s.size("rtg_embed_dim", inj.rtg_embed_dim);
  s.boolean("residual", inj.residual);
  s.number("dropout", inj.dropout);
  s.reject_unknown();
}

void parse_model(Section& s, model::ModelConfig& m) {
  s.size("n_layers", m.n_layers);
  s.size("n_heads", m.n_heads);
  s.size("context_k", m.context_k);
  s.size("embed_dim", m.embed_dim);
  s.number("dropout", m.dropout);
  s.string("activation", m.activation);
  s.size("max_timestep", m.max_timestep);
  std::string variant(model::to_string(m.variant));
  s.string("variant", variant);
  m.variant = with_field<model::Variant>(s.field("variant"), variant, model::parse_variant);
  if (const json* inj = s.object("injector")) {
    Section sub(*inj, s.field("injector"));
    parse_injector(sub, m.injector);
  }
  s.boolean("post_injector_after_final_ln", m.post_injector_after_final_ln);
  s.boolean("tanh_head", m.tanh_head);
  s.reject_unknown();
}

void parse_train(Section& s, train::TrainConfig& t) {
  s.size("batch_size", t.batch_size);
  s.number("lr", t.lr);
  s.number("weight_decay", t.weight_decay);
  s.number("grad_clip", t.grad_clip);
  s.size("warmup_steps", t.warmup_steps);
  s.size("total_steps", t.total_steps);
  s.u64("seed", t.seed);
  s.size("eval_every", t.eval_every);
  s.reject_unknown();
}

void parse_dataset(Section& s, DatasetSection& d) {
  std::string env(envs::to_string(d.spec.env));
  s.string("env", env);
  d.spec.env = with_field<envs::EnvId>(s.field("env"), env, envs::parse_env_id);
  s.size("n_trajectories", d.spec.n_trajectories);
  s.number("expert_fraction", d.spec.expert_fraction);
  s.number("medium_fraction", d.spec.medium_fraction);
  s.number("random_fraction", d.spec.random_fraction);
  s.number("noise", d.spec.noise);
  s.u64("seed", d.spec.seed);
  s.string("path", d.path);
  s.reject_unknown();
}

std::uint64_t to_u64(const json& v, const std::string& field) {
  return Section::as_size(v, field);
}

void parse_eval(Section& s, EvalSection& e) {
  s.list("target_rtg", e.target_rtg, [](const json& v, const std::string& field) {
    if (v.is_number()) return TargetRtg{v.get<double>()};
    if (v.is_string() && kQuantileTargets.count(v.get<std::string>())) {
      return TargetRtg{v.get<std::string>()};
    }
    throw ConfigError("expected a number or one of p10, p50, p90, max, expert", field);
  });
  s.size("n_episodes", e.n_episodes);
  s.list("seeds", e.seeds, to_u64);
  s.size("train_eval_episodes", e.train_eval_episodes);
  s.reject_unknown();
}

void parse_ablation(Section& s, AblationSection& a) {
  s.list("variants", a.variants, [](const json& v, const std::string& field) {
    if (!v.is_string()) throw ConfigError("expected a string", field);
    return with_field<model::Variant>(field, v.get<std::string>(), model::parse_variant);
  });
  s.list("injector_kinds", a.injector_kinds, [](const json& v, const std::string& field) {
    if (!v.is_string()) throw ConfigError("expected a string", field);
    return with_field<model::InjectorKind>(field, v.get<std::string>(),
                                           model::parse_injector_kind);
  });
  s.list("causal_mask", a.causal_mask, [](const json& v, const std::string& field) {
    if (!v.is_boolean()) throw ConfigError("expected true or false", field);
    return v.get<bool>();
  });
  s.list("rtg_embed_dims", a.rtg_embed_dims, [](const json& v, const std::string& field) {
    return static_cast<std::size_t>(Section::as_size(v, field));
  });
  s.list("seeds", a.seeds, to_u64);
  s.reject_unknown();
}

void parse_bench(Section& s, BenchSection& b) {
  s.list("k_sweep", b.k_sweep, [](const json& v, const std::string& field) {
    return static_cast<std::size_t>(Section::as_size(v, field));
  });
  s.size("reps", b.reps);
  s.size("warmup", b.warmup);
  s.reject_unknown();
}

}  // namespace

void RunConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("must not be empty", "output_dir");
  model::ModelConfig m = model;
  // Dimensions are filled in from the environment; validate with placeholders.
  if (m.state_dim == 0) m.state_dim = 1;
  if (m.action_dim == 0) m.action_dim = 1;
  m.validate();
  train.validate();
  dataset.spec.validate();
  if (eval.seeds.empty()) throw ConfigError("must list at least one seed", "eval.seeds");
  if (bench.reps < 10) throw ConfigError("must be >= 10", "bench.reps");
  for (std::size_t k : bench.k_sweep) {
    if (k == 0) throw ConfigError("context lengths must be >= 1", "bench.k_sweep");
  }
  for (std::size_t d : ablation.rtg_embed_dims) {
    if (d == 0) throw ConfigError("dimensions must be >= 1", "ablation.rtg_embed_dims");
  }
}

std::filesystem::path RunConfig::resolved_output_dir() const {
  std::filesystem::path p(output_dir);
  if (const char* root = std::getenv(kOutputRootEnv); root && *root && p.is_relative()) {
    return std::filesystem::path(root) / p;
  }
  return p;
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("not valid JSON: ") + e.what(), "<root>");
  }
  RunConfig cfg;
  Section root(j, "");
  root.string("output_dir", cfg.output_dir);
  const std::pair<const char*, void (*)(Section&, RunConfig&)> sections[] = {
      {"model", [](Section& s, RunConfig& c) { parse_model(s, c.model); }},
      {"train", [](Section& s, RunConfig& c) { parse_train(s, c.train); }},
      {"dataset", [](Section& s, RunConfig& c) { parse_dataset(s, c.dataset); }},
      {"eval", [](Section& s, RunConfig& c) { parse_eval(s, c.eval); }},
      {"ablation", [](Section& s, RunConfig& c) { parse_ablation(s, c.ablation); }},
      {"bench", [](Section& s, RunConfig& c) { parse_bench(s, c.bench); }},
  };
  for (const auto& [name, parse] : sections) {
    if (const json* sub = root.object(name)) {
      Section s(*sub, name);
      parse(s, cfg);
    }
  }
  root.reject_unknown();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string echo_run_config(const RunConfig& c) {
  json j;
  j["output_dir"] = c.output_dir;
  const auto& m = c.model;
  j["model"] = {
      {"n_layers", m.n_layers},
      {"n_heads", m.n_heads},
      {"context_k", m.context_k},
      {"embed_dim", m.embed_dim},
      {"dropout", m.dropout},
      {"activation", m.activation},
      {"max_timestep", m.max_timestep},
      {"variant", model::to_string(m.variant)},
      {"injector",
       {{"kind", model::to_string(m.injector.kind)},
        {"causal_mask", m.injector.causal_mask},
        {"rtg_embed_dim", m.injector.rtg_embed_dim},
        {"residual", m.injector.residual},
        {"dropout", m.injector.dropout}}},
      {"post_injector_after_final_ln", m.post_injector_after_final_ln},
      {"tanh_head", m.tanh_head},
  };
  const auto& t = c.train;
  j["train"] = {{"batch_size", t.batch_size},     {"lr", t.lr},
                {"weight_decay", t.weight_decay}, {"grad_clip", t.grad_clip},
                {"warmup_steps", t.warmup_steps}, {"total_steps", t.total_steps},
                {"seed", t.seed},                 {"eval_every", t.eval_every}};
  const auto& d = c.dataset;
  j["dataset"] = {{"env", envs::to_string(d.spec.env)},
                  {"n_trajectories", d.spec.n_trajectories},
                  {"expert_fraction", d.spec.expert_fraction},
                  {"medium_fraction", d.spec.medium_fraction},
                  {"random_fraction", d.spec.random_fraction},
                  {"noise", d.spec.noise},
                  {"seed", d.spec.seed},
                  {"path", d.path}};
  json targets = json::array();
  for (const auto& tr : c.eval.target_rtg) {
    if (const auto* s = std::get_if<std::string>(&tr.value)) {
      targets.push_back(*s);
    } else {
      targets.push_back(std::get<double>(tr.value));
    }
  }
  j["eval"] = {{"target_rtg", targets},
               {"n_episodes", c.eval.n_episodes},
               {"seeds", c.eval.seeds},
               {"train_eval_episodes", c.eval.train_eval_episodes}};
  json variants = json::array(), kinds = json::array();
  for (auto v : c.ablation.variants) variants.push_back(model::to_string(v));
  for (auto k : c.ablation.injector_kinds) kinds.push_back(model::to_string(k));
  j["ablation"] = {{"variants", variants},
                   {"injector_kinds", kinds},
                   {"causal_mask", c.ablation.causal_mask},
                   {"rtg_embed_dims", c.ablation.rtg_embed_dims},
                   {"seeds", c.ablation.seeds}};
  j["bench"] = {{"k_sweep", c.bench.k_sweep},
                {"reps", c.bench.reps},
                {"warmup", c.bench.warmup}};
  return j.dump(2);
}

}  // namespace slimdt::app
