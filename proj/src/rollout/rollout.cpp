#include "rollout/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "errors.hpp"

namespace slimdt::rollout {

RolloutState::RolloutState(double target_rtg, std::size_t state_dim, std::size_t action_dim)
    : ds_(state_dim), da_(action_dim), initial_(target_rtg), rtg_hat_(target_rtg) {
  if (!std::isfinite(target_rtg)) throw ContractError("target rtg must be finite");
}

void RolloutState::observe(std::span<const double> state) {
  if (state.size() != ds_) throw DimensionError("rollout: state dimension mismatch");
  if (states_.size() != rewards_.size() * ds_) {
    throw ContractError("rollout: observe called twice without commit");
  }
  states_.insert(states_.end(), state.begin(), state.end());
  rtg_history_.push_back(rtg_hat_);
}

void RolloutState::commit(std::span<const double> action, double reward) {
  if (action.size() != da_) throw DimensionError("rollout: action dimension mismatch");
  if (states_.size() != (rewards_.size() + 1) * ds_) {
    throw ContractError("rollout: commit without a pending observation");
  }
  actions_.insert(actions_.end(), action.begin(), action.end());
  rewards_.push_back(reward);
  reward_sum_ += reward;
  rtg_hat_ = initial_ - reward_sum_;
}

data::Window RolloutState::window(std::size_t k, double rtg_scale) const {
  const std::size_t n_steps = states_.size() / ds_;
  if (k == 0) throw ContractError("rollout: context length must be >= 1");
  if (n_steps == 0 || n_steps != rewards_.size() + 1) {
    throw ContractError("rollout: window requested without a pending observation");
  }
  data::Window w;
  w.k = k;
  w.rtg.assign(k, 0.0);
  w.states.assign(k * ds_, 0.0);
  w.actions.assign(k * da_, 0.0);
  w.timesteps.assign(k, 0);
  w.valid.assign(k, 0);
  w.action_known.assign(k, 0);
  const std::size_t n_valid = std::min(k, n_steps);
  const std::size_t first = n_steps - n_valid;
  const std::size_t offset = k - n_valid;
  for (std::size_t i = 0; i < n_valid; ++i) {
    const std::size_t t = first + i, pos = offset + i;
    w.rtg[pos] = rtg_history_[t] / rtg_scale;
    std::copy_n(states_.data() + t * ds_, ds_, w.states.data() + pos * ds_);
    w.timesteps[pos] = static_cast<std::int64_t>(t);
    w.valid[pos] = 1;
    if (t + 1 < n_steps) {
      std::copy_n(actions_.data() + t * da_, da_, w.actions.data() + pos * da_);
      w.action_known[pos] = 1;
    }
  }
  return w;
}

namespace {

std::string trace_dump(const std::vector<TraceStep>& trace) {
  std::ostringstream os;
  for (const auto& s : trace) {
    os << "\n  t=" << s.t << " rtg_hat=" << s.rtg_hat << " reward=" << s.reward << " action=";
    for (double a : s.action) os << a << ' ';
  }
  return os.str();
}

}  // namespace

EpisodeResult run_episode(const model::DecisionModel& model, envs::Env& env, double target_rtg,
                          const data::DatasetStats& stats, std::uint64_t seed) {
  const auto& cfg = model.config();
  if (env.state_dim() != cfg.state_dim || env.action_dim() != cfg.action_dim) {
    throw DimensionError("rollout: environment and model dimensions disagree");
  }
  const std::size_t k = cfg.context_k;
  const std::size_t da = cfg.action_dim;
  RolloutState st(target_rtg, env.state_dim(), da);
  EpisodeResult result;
  std::vector<double> obs = env.reset(seed);
  for (std::size_t t = 0; t < env.max_steps(); ++t) {
    st.observe(obs);
    if (st.rtg_hat() != st.initial_rtg() - st.reward_sum()) {
      throw ContractError("rollout: rtg bookkeeping drifted");
    }
    const data::Window w = st.window(k, stats.rtg_scale);
    const data::WindowBatch batch =
        data::normalize_states(data::collate(std::span(&w, 1), env.state_dim(), da), stats);
    const nn::Tensor pred = model.forward(batch);
    std::vector<double> action(pred.data().end() - static_cast<std::ptrdiff_t>(da),
                               pred.data().end());
    TraceStep step{t, obs, action, 0.0, st.rtg_hat()};
    if (!std::all_of(action.begin(), action.end(), [](double a) { return std::isfinite(a); })) {
      result.trace.push_back(step);
      throw NumericalError("rollout: non-finite action at step " + std::to_string(t) +
                           trace_dump(result.trace));
    }
    const envs::StepResult r = env.step(action);
    step.reward = r.reward;
    st.commit(action, r.reward);
    result.trace.push_back(std::move(step));
    obs = r.state;
    if (r.done) break;
  }
  result.episode_return = st.reward_sum();
  result.length = st.step();
  return result;
}

void write_trace_csv(const std::filesystem::path& path, const EpisodeResult& episode) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "t,reward,rtg_hat";
  const std::size_t da = episode.trace.empty() ? 0 : episode.trace[0].action.size();
  for (std::size_t j = 0; j < da; ++j) out << ",action_" << j;
  out << '\n';
  for (const auto& s : episode.trace) {
    out << s.t << ',' << s.reward << ',' << s.rtg_hat;
    for (double a : s.action) out << ',' << a;
    out << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

ReturnStats summarize_returns(std::vector<double> returns) {
  ReturnStats s;
  s.n = returns.size();
  s.returns = std::move(returns);
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double r : s.returns) sum += r;
  const double mean = sum / static_cast<double>(s.n);
  s.mean = mean;
  if (s.n >= 2) {
    double ss = 0.0;
    for (double r : s.returns) ss += (r - mean) * (r - mean);
    const double sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    s.std = sd;
    s.stderr_ = sd / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

std::uint64_t episode_seed(std::uint64_t seed, std::size_t episode) {
  return nn::splitmix64(nn::splitmix64(seed + 0xE9) ^ static_cast<std::uint64_t>(episode));
}

ReturnStats batch_evaluate(const model::DecisionModel& model, const envs::EnvFactory& factory,
                           std::size_t n_episodes, double target_rtg,
                           std::span<const std::uint64_t> seeds,
                           const data::DatasetStats& stats) {
  std::vector<double> returns;
  for (std::uint64_t seed : seeds) {
    for (std::size_t e = 0; e < n_episodes; ++e) {
      auto env = factory();
      returns.push_back(
          run_episode(model, *env, target_rtg, stats, episode_seed(seed, e)).episode_return);
    }
  }
  return summarize_returns(std::move(returns));
}

}  // namespace slimdt::rollout
