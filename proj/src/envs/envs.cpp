#include "envs/envs.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "errors.hpp"
#include "numerics/ops.hpp"

namespace slimdt::envs {

namespace {

std::vector<double> observe(PointState s) { return {s.pos, s.vel}; }

double clip_action(double a) { return std::clamp(a, -1.0, 1.0); }

PointState sample_start(const PointParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(p.start_min, p.start_max);
  std::bernoulli_distribution sign(0.5);
  const double m = mag(rng);
  return {p.goal + (sign(rng) ? m : -m), 0.0};
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return nn::splitmix64(seed ^ nn::splitmix64(index + 0x5151));
}

}  // namespace

PointState point_transition(const PointParams& p, PointState s, double action) {
  const double a = clip_action(action);
  PointState n{s.pos + s.vel, s.vel + p.accel_scale * a};
  if (std::abs(n.pos) > p.pos_max) {
    n.pos = std::copysign(p.pos_max, n.pos);
    n.vel = 0.0;
  }
  return n;
}

std::vector<double> LinearPointEnv::reset(std::uint64_t seed) {
  return reset_to(sample_start(params_, seed));
}

std::vector<double> LinearPointEnv::reset_to(PointState s) {
  state_ = s;
  t_ = 0;
  return observe(state_);
}

StepResult LinearPointEnv::step(std::span<const double> action) {
  if (action.size() != 1) throw DimensionError("LinearPointEnv: action must have 1 entry");
  state_ = point_transition(params_, state_, action[0]);
  ++t_;
  return {observe(state_), -std::abs(state_.pos - params_.goal), t_ >= params_.horizon};
}

std::vector<double> SpikeRewardEnv::reset(std::uint64_t seed) {
  std::mt19937_64 rng(nn::splitmix64(seed ^ 0xA11CE));
  std::bernoulli_distribution armed(0.5);
  return reset_to(sample_start(params_, seed), armed(rng));
}

std::vector<double> SpikeRewardEnv::reset_to(PointState s, bool armed) {
  armed_ = armed;
  return LinearPointEnv::reset_to(s);
}

SpikeRewardEnv::Transition SpikeRewardEnv::transition(const PointParams& p, const Event& e,
                                                      PointState s, double action,
                                                      bool armed) {
  Transition tr;
  tr.next = point_transition(p, s, action);
  tr.reward = -std::abs(tr.next.pos - p.goal);
  tr.armed_after = armed;
  const bool crossed = (s.pos - e.threshold) * (tr.next.pos - e.threshold) <= 0.0 &&
                       s.pos != tr.next.pos;
  if (armed && crossed) {
    tr.reward += e.bonus;
    tr.armed_after = false;
  }
  return tr;
}

StepResult SpikeRewardEnv::step(std::span<const double> action) {
  if (action.size() != 1) throw DimensionError("SpikeRewardEnv: action must have 1 entry");
  const Transition tr = transition(params_, event_, state_, action[0], armed_);
  state_ = tr.next;
  armed_ = tr.armed_after;
  ++t_;
  return {observe(state_), tr.reward, t_ >= params_.horizon};
}

// ---------------------------------------------------------------------------

std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::Expert: return "expert";
    case Policy::Medium: return "medium";
    case Policy::Random: return "random";
  }
  return "unknown";
}

double expert_action(const PointParams& p, PointState s) {
  return clip_action(-kExpertKp * (s.pos - p.goal) - kExpertKd * s.vel);
}

std::string_view to_string(EnvId id) {
  return id == EnvId::LinearPoint ? "linear_point" : "spike_reward";
}

EnvId parse_env_id(std::string_view name) {
  if (name == "linear_point") return EnvId::LinearPoint;
  if (name == "spike_reward") return EnvId::SpikeReward;
  throw ConfigError("unknown environment '" + std::string(name) +
                        "' (expected linear_point or spike_reward)",
                    "dataset.env");
}

void DatasetSpec::validate() const {
  for (double f : {expert_fraction, medium_fraction, random_fraction}) {
    if (f < 0.0 || f > 1.0) throw ConfigError("fractions must lie in [0, 1]", "dataset");
  }
  if (std::abs(expert_fraction + medium_fraction + random_fraction - 1.0) > 1e-9) {
    throw ConfigError("expert/medium/random fractions must sum to 1", "dataset");
  }
  if (noise < 0.0) throw ConfigError("must be >= 0", "dataset.noise");
}

std::unique_ptr<Env> make_env(EnvId id) {
  if (id == EnvId::SpikeReward) return std::make_unique<SpikeRewardEnv>();
  return std::make_unique<LinearPointEnv>();
}

EnvFactory env_factory(EnvId id) {
  return [id] { return make_env(id); };
}

namespace {

struct ControllerRng {
  std::mt19937_64 engine;
  std::normal_distribution<double> noise{0.0, 1.0};
  std::uniform_real_distribution<double> uniform{-1.0, 1.0};
};

double controller_action(Policy policy, const PointParams& p, PointState s, double noise,
                         ControllerRng& rng) {
  switch (policy) {
    case Policy::Expert: return expert_action(p, s);
    case Policy::Medium: return clip_action(expert_action(p, s) + noise * rng.noise(rng.engine));
    case Policy::Random: return rng.uniform(rng.engine);
  }
  return 0.0;
}

data::Trajectory run_controller(Env& env, const PointParams& p,
                                const std::function<PointState()>& current, Policy policy,
                                double noise, std::uint64_t seed, std::vector<double> first) {
  ControllerRng rng{std::mt19937_64(nn::splitmix64(seed ^ 0xC0FFEE))};
  std::vector<double> states, actions, rewards;
  std::vector<double> obs = std::move(first);
  for (std::size_t t = 0; t < env.max_steps(); ++t) {
    const double a = controller_action(policy, p, current(), noise, rng);
    states.insert(states.end(), obs.begin(), obs.end());
    actions.push_back(a);
    const StepResult r = env.step(std::span<const double>(&a, 1));
    rewards.push_back(r.reward);
    obs = r.state;
    if (r.done) break;
  }
  return data::Trajectory::make(env.state_dim(), env.action_dim(), std::move(states),
                                std::move(actions), std::move(rewards));
}

}  // namespace

data::Trajectory rollout_controller(Env& env, Policy policy, double noise, std::uint64_t seed) {
  auto* point = dynamic_cast<LinearPointEnv*>(&env);
  if (!point) throw ConfigError("scripted controllers need a point-mass environment", "dataset.env");
  std::vector<double> first = env.reset(seed);
  return run_controller(env, point->params(), [point] { return point->state(); }, policy, noise,
                        seed, std::move(first));
}

GeneratedDataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  GeneratedDataset out;
  auto env = make_env(spec.env);
  out.dataset.state_dim = env->state_dim();
  out.dataset.action_dim = env->action_dim();
  const std::size_t n = spec.n_trajectories;
  const auto n_expert = static_cast<std::size_t>(std::floor(spec.expert_fraction * n + 0.5));
  const auto n_random = std::min(
      n - std::min(n, n_expert),
      static_cast<std::size_t>(std::floor(spec.random_fraction * n + 0.5)));
  const std::size_t expert_end = std::min(n, n_expert);
  const std::size_t medium_end = n - n_random;
  for (std::size_t i = 0; i < n; ++i) {
    const Policy policy = i < expert_end ? Policy::Expert
                          : i < medium_end ? Policy::Medium
                                           : Policy::Random;
    out.dataset.trajectories.push_back(
        rollout_controller(*env, policy, spec.noise, derive_seed(spec.seed, i)));
    out.sources.push_back(policy);
  }

  if (spec.env == EnvId::SpikeReward && n >= 2) {
    SpikeRewardEnv spike;
    const PointState start{spike.params().goal + 2.0, 0.0};
    for (int armed = 1; armed >= 0; --armed) {
      std::vector<double> first = spike.reset_to(start, armed != 0);
      const std::size_t idx = n - 1 - static_cast<std::size_t>(armed);
      out.dataset.trajectories[idx] =
          run_controller(spike, spike.params(), [&spike] { return spike.state(); },
                         Policy::Expert, 0.0, derive_seed(spec.seed, idx), std::move(first));
      out.sources[idx] = Policy::Expert;
    }
    const auto& a = out.dataset.trajectories[n - 2];
    const auto& b = out.dataset.trajectories[n - 1];
    if (a.states != b.states || a.actions != b.actions || a.rewards == b.rewards) {
      throw ContractError("spike contrast pair was not produced");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile of empty sequence");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

DatasetReport dataset_report(const data::Dataset& dataset, std::size_t bins,
                             std::span<const Policy> sources) {
  DatasetReport rep;
  rep.n_trajectories = dataset.size();
  if (dataset.empty()) return rep;
  if (bins == 0) throw ContractError("dataset_report: bins must be >= 1");
  rep.rtg_min = dataset.trajectories[0].rtg[0];
  rep.rtg_max = rep.rtg_min;
  rep.length_min = dataset.trajectories[0].length();
  std::size_t total_len = 0;
  for (const auto& traj : dataset.trajectories) {
    rep.returns.push_back(traj.episode_return());
    for (double r : traj.rtg) {
      rep.rtg_min = std::min(rep.rtg_min, r);
      rep.rtg_max = std::max(rep.rtg_max, r);
    }
    rep.length_min = std::min(rep.length_min, traj.length());
    rep.length_max = std::max(rep.length_max, traj.length());
    total_len += traj.length();
  }
  rep.length_mean = static_cast<double>(total_len) / static_cast<double>(dataset.size());
  const auto [mn, mx] = std::minmax_element(rep.returns.begin(), rep.returns.end());
  rep.return_min = *mn;
  rep.return_max = *mx;
  double acc = 0.0;
  for (double r : rep.returns) acc += r;
  rep.return_mean = acc / static_cast<double>(rep.returns.size());
  rep.return_p10 = percentile(rep.returns, 10.0);
  rep.return_p50 = percentile(rep.returns, 50.0);
  rep.return_p90 = percentile(rep.returns, 90.0);

  const double width = (rep.return_max - rep.return_min) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) {
    rep.histogram_edges.push_back(b == bins ? rep.return_max
                                            : rep.return_min + width * static_cast<double>(b));
  }
  rep.histogram.assign(bins, 0);
  for (double r : rep.returns) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((r - rep.return_min) / width) : 0;
    rep.histogram[std::min(b, bins - 1)] += 1;
  }

  if (sources.size() == dataset.size()) {
    for (Policy p : {Policy::Expert, Policy::Medium, Policy::Random}) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < sources.size(); ++i) {
        if (sources[i] != p) continue;
        sum += rep.returns[i];
        ++count;
      }
      if (count) rep.policy_means.emplace_back(p, sum / static_cast<double>(count));
    }
  }
  return rep;
}

}  // namespace slimdt::envs
