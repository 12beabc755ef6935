#include "train/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "errors.hpp"

namespace slimdt::train {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("must be > 0", "train.batch_size");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("must be finite and >= 0", "train.lr");
  if (!(weight_decay >= 0.0)) throw ConfigError("must be >= 0", "train.weight_decay");
  if (!(grad_clip > 0.0)) throw ConfigError("must be > 0", "train.grad_clip");
  if (warmup_steps == 0) throw ConfigError("must be > 0", "train.warmup_steps");
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  const double frac = static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  return cfg.lr * std::min(1.0, frac);
}

AdamW::AdamW(const model::ParamStore& params) {
  for (const auto& p : params.entries()) {
    m_.emplace_back(p.value.numel(), 0.0);
    v_.emplace_back(p.value.numel(), 0.0);
  }
}

void AdamW::step(model::ParamStore& params, double lr, double weight_decay) {
  auto& entries = params.entries();
  if (entries.size() != m_.size()) throw ContractError("AdamW: parameter set changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    nn::Tensor& w = entries[i].value;
    auto data = w.mutable_data();
    const auto grad = w.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + kEps);
      data[j] -= lr * (update + weight_decay * data[j]);
    }
  }
}

BatchSampler::BatchSampler(const data::Dataset& dataset, const data::DatasetStats& stats,
                           std::size_t k, std::uint64_t seed)
    : dataset_(dataset), stats_(stats), k_(k), rng_(seed) {
  if (dataset.empty()) throw ContractError("BatchSampler: empty dataset");
  std::size_t acc = 0;
  for (const auto& traj : dataset.trajectories) {
    acc += traj.length();
    offsets_.push_back(acc);
  }
}

data::WindowBatch BatchSampler::next(std::size_t batch_size) {
  std::uniform_int_distribution<std::size_t> pick(0, offsets_.back() - 1);
  std::vector<data::Window> windows;
  windows.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t flat = pick(rng_);
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat);
    const auto traj_idx = static_cast<std::size_t>(it - offsets_.begin());
    const std::size_t start = traj_idx == 0 ? 0 : offsets_[traj_idx - 1];
    windows.push_back(
        data::make_window(dataset_.trajectories[traj_idx], flat - start, k_, stats_.rtg_scale));
  }
  return data::normalize_states(
      data::collate(windows, dataset_.state_dim, dataset_.action_dim), stats_);
}

double global_grad_norm(const model::ParamStore& params) {
  double ss = 0.0;
  for (const auto& p : params.entries()) {
    for (double g : p.value.grad()) ss += g * g;
  }
  return std::sqrt(ss);
}

namespace {

std::string batch_diagnostics(const data::WindowBatch& batch) {
  auto describe = [](const char* name, const nn::Tensor& t) {
    double lo = INFINITY, hi = -INFINITY, sum = 0.0;
    std::size_t non_finite = 0;
    for (double x : t.data()) {
      if (!std::isfinite(x)) {
        ++non_finite;
        continue;
      }
      lo = std::min(lo, x);
      hi = std::max(hi, x);
      sum += x;
    }
    std::ostringstream os;
    os << "\n  " << name << nn::shape_str(t.shape()) << " min=" << lo << " max=" << hi
       << " mean=" << sum / static_cast<double>(std::max<std::size_t>(1, t.numel()))
       << " non_finite=" << non_finite;
    return os.str();
  };
  std::size_t valid = 0;
  for (auto m : batch.pad_mask) valid += m != 0;
  std::ostringstream os;
  os << describe("rtg", batch.rtg) << describe("states", batch.states)
     << describe("actions", batch.target_actions) << "\n  valid positions=" << valid << "/"
     << batch.pad_mask.size();
  return os.str();
}

}  // namespace

StepResult train_step(model::DecisionModel& model, const data::WindowBatch& batch, AdamW& opt,
                      const TrainConfig& cfg, std::size_t step, nn::DropoutRng& rng) {
  StepResult out;
  out.lr = learning_rate(cfg, step);
  nn::Tape tape;
  nn::Tensor loss;
  {
    nn::Tape::Scope scope(tape);
    const nn::Tensor pred = model.forward(batch, true, rng);
    loss = nn::masked_mse(pred, batch.target_actions, batch.pad_mask);
  }
  out.loss = loss.item();
  if (!std::isfinite(out.loss)) {
    throw NumericalError("non-finite training loss at step " + std::to_string(step) +
                         batch_diagnostics(batch));
  }
  model.params().zero_grad();
  tape.backward(loss);
  out.grad_norm = global_grad_norm(model.params());
  if (!std::isfinite(out.grad_norm)) {
    throw NumericalError("non-finite gradient norm at step " + std::to_string(step) +
                         batch_diagnostics(batch));
  }
  if (out.grad_norm > cfg.grad_clip) {
    const double factor = cfg.grad_clip / out.grad_norm;
    for (auto& p : model.params().entries()) {
      for (double& g : p.value.mutable_grad()) g *= factor;
    }
  }
  out.grad_norm_clipped = global_grad_norm(model.params());
  opt.step(model.params(), out.lr, cfg.weight_decay);
  return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "step,loss,grad_norm,grad_norm_clipped,lr,eval_return_mean,eval_return_stderr\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.loss << ',' << r.grad_norm << ',' << r.grad_norm_clipped << ','
        << r.lr << ',';
    if (r.eval_return_mean) out << *r.eval_return_mean;
    out << ',';
    if (r.eval_return_stderr) out << *r.eval_return_stderr;
    out << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

TrainLog train(model::DecisionModel& model, const data::Dataset& dataset,
               const data::DatasetStats& stats, const TrainConfig& cfg, const EvalHook& eval) {
  cfg.validate();
  BatchSampler sampler(dataset, stats, model.config().context_k, cfg.seed);
  nn::DropoutRng rng(nn::splitmix64(cfg.seed ^ 0xD20));
  AdamW opt(model.params());
  TrainLog log;
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    const data::WindowBatch batch = sampler.next(cfg.batch_size);
    const StepResult r = train_step(model, batch, opt, cfg, step, rng);
    LogRow row{step, r.loss, r.grad_norm, r.grad_norm_clipped, r.lr, {}, {}};
    const bool last = step + 1 == cfg.total_steps;
    if (eval && (last || (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0))) {
      const EvalPoint p = eval(model, step);
      row.eval_return_mean = p.mean;
      row.eval_return_stderr = p.stderr_;
    }
    log.rows.push_back(row);
  }
  return log;
}

}  // namespace slimdt::train
