// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gazenet/nn/parameters.hpp"

namespace gazenet::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Tensors outside the trainable mask are never
/// touched, including their moment estimates.
class Adam {
 public:
  Adam(const ParameterSet<float>& layout, AdamConfig config);

  void set_trainable(const std::function<bool(const std::string&)>& predicate);
  bool trainable(std::size_t tensor) const { return trainable_[tensor]; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return step_; }

  void step(ParameterSet<float>& params, const ParameterSet<float>& grads);

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  AdamConfig config_;
  ParameterSet<float> m_, v_;
  std::vector<bool> trainable_;
  std::int64_t step_ = 0;
};

}  // namespace gazenet::nn
