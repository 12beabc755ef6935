#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "data/trajectory.hpp"
#include "model/model.hpp"

namespace testing {

using namespace slimdt;

inline int name_code(const std::string& name) {
  long c = 0;
  for (std::size_t i = 0; i < name.size(); ++i) {
    c += static_cast<long>(i + 1) * static_cast<unsigned char>(name[i]);
  }
  return static_cast<int>(c % 1000);
}

// Same closed form as tests/oracles/forward_oracle.py.
inline void formula_fill(model::DecisionModel& m) {
  for (auto& p : m.params().entries()) {
    const double c = name_code(p.name);
    auto d = p.value.mutable_data();
    for (std::size_t j = 0; j < d.size(); ++j) {
      d[j] = 0.3 * std::sin(0.7 * static_cast<double>(j) + 0.013 * c + 0.5);
    }
  }
}

inline model::ModelConfig oracle_config(model::Variant v, model::InjectorConfig inj) {
  model::ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context_k = 3;
  c.embed_dim = 8;
  c.dropout = 0.0;
  c.state_dim = 2;
  c.action_dim = 1;
  c.max_timestep = 8;
  c.variant = v;
  c.injector = inj;
  return c;
}

// B = 2, k = 3. Batch 1 has a padded first step and an unknown last action.
inline data::WindowBatch oracle_batch() {
  const std::size_t b = 2, k = 3, ds = 2;
  std::vector<double> rtg(b * k, 0.0), st(b * k * ds, 0.0), act(b * k, 0.0);
  data::WindowBatch wb;
  wb.batch = b;
  wb.k = k;
  wb.timesteps.assign(b * k, 0);
  wb.pad_mask.assign(b * k, 1);
  wb.action_mask.assign(b * k, 1);
  wb.pad_mask[1 * k + 0] = 0;
  wb.action_mask[1 * k + 0] = 0;
  wb.action_mask[1 * k + k - 1] = 0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t at = i * k + t;
      if (!wb.pad_mask[at]) continue;
      const double td = static_cast<double>(t), bd = static_cast<double>(i);
      rtg[at] = 1.5 * std::cos(1.1 * td + 0.7 * bd) - 0.2;
      for (std::size_t j = 0; j < ds; ++j) {
        st[at * ds + j] = std::sin(0.9 * td + 0.4 * static_cast<double>(j) + 0.3 * bd);
      }
      if (wb.action_mask[at]) act[at] = 0.3 * std::cos(0.5 * td + bd);
      wb.timesteps[at] = static_cast<std::int64_t>(t + 2 * i);
    }
  }
  wb.rtg = nn::Tensor::from({b, k, 1}, rtg);
  wb.states = nn::Tensor::from({b, k, ds}, st);
  wb.actions = nn::Tensor::from({b, k, 1}, act);
  wb.target_actions = nn::Tensor::from({b, k, 1}, std::vector<double>(b * k, 0.1));
  return wb;
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// Random trajectory with given length and dims.
inline data::Trajectory random_trajectory(std::mt19937_64& rng, std::size_t len,
                                          std::size_t ds = 2, std::size_t da = 1) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> s(len * ds), a(len * da), r(len);
  for (double& v : s) v = n(rng);
  for (double& v : a) v = n(rng);
  for (double& v : r) v = n(rng);
  return data::Trajectory::make(ds, da, s, a, r);
}

// Fresh directory under the build tree, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("slimdt_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testing
