#include "keep/nn/adam.hpp"

#include <cmath>

namespace keep::nn {

namespace {

bool finite_rows(const Param<float>& p) {
  if (!p.row_sparse) return p.grad.all_finite();
  for (auto r : p.touched_rows) {
    for (float g : p.grad.row(r)) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

}  // namespace

void Adam::step(const std::vector<Param<float>*>& params) {
  for (const auto* p : params) {
    if (!finite_rows(*p)) {
      throw NumericError("non-finite gradient in parameter " + p->name);
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = config_.lr, eps = config_.eps;

  auto update_row = [&](float* w, const float* g, float* m, float* v,
                        std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double m_hat = mk / c1;
      const double v_hat = vk / c2;
      w[k] = static_cast<float>(w[k] - lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  };

  for (auto* p : params) {
    auto [it, inserted] = moments_.try_emplace(p->name);
    auto& mom = it->second;
    if (inserted) {
      mom.m = Matrix(p->value.rows(), p->value.cols());
      mom.v = Matrix(p->value.rows(), p->value.cols());
    } else if (mom.m.rows() != p->value.rows() ||
               mom.m.cols() != p->value.cols()) {
      throw ShapeError("adam state for " + p->name + " has shape " +
                       shape_str(mom.m.rows(), mom.m.cols()));
    }
    if (p->row_sparse) {
      const std::size_t cols = p->value.cols();
      for (auto r : p->touched_rows) {
        update_row(p->value.row(r).data(), p->grad.row(r).data(),
                   mom.m.row(r).data(), mom.v.row(r).data(), cols);
      }
    } else {
      update_row(p->value.ptr(), p->grad.ptr(), mom.m.ptr(), mom.v.ptr(),
                 p->value.size());
    }
  }
}

void Adam::restore(std::uint64_t step, std::map<std::string, Moments> moments) {
  step_ = step;
  moments_ = std::move(moments);
}

}  // namespace keep::nn
