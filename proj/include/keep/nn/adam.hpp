#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "keep/nn/param.hpp"

namespace keep::nn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Row-sparse params get lazy updates: only rows
// that received gradient this step have their moments and values advanced.
class Adam {
 public:
  struct Moments {
    Matrix m;
    Matrix v;
  };

  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::uint64_t step_count() const { return step_; }

  // Throws NumericError naming the offending param if any gradient is not
  // finite; in that case nothing is updated.
  void step(const std::vector<Param<float>*>& params);

  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::uint64_t step, std::map<std::string, Moments> moments);

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace keep::nn
