#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "keep/nn/matrix.hpp"

namespace keep::nn {

using Rng = std::mt19937_64;

// A named trainable tensor with its gradient buffer. Row-sparse params
// (embedding tables) track which rows received gradient so that zeroing and
// optimizer updates only touch those rows.
template <class T>
struct Param {
  std::string name;
  BasicMatrix<T> value;
  BasicMatrix<T> grad;
  bool row_sparse = false;
  std::vector<std::uint32_t> touched_rows;
  std::vector<std::uint8_t> touched_flag;

  Param() = default;
  Param(std::string n, std::size_t rows, std::size_t cols, bool sparse = false)
      : name(std::move(n)),
        value(rows, cols),
        grad(rows, cols),
        row_sparse(sparse),
        touched_flag(sparse ? rows : 0, 0) {}

  void touch(std::size_t r) {
    if (!touched_flag[r]) {
      touched_flag[r] = 1;
      touched_rows.push_back(static_cast<std::uint32_t>(r));
    }
  }

  void zero_grad() {
    if (!row_sparse) {
      grad.fill(T{0});
      return;
    }
    for (auto r : touched_rows) {
      auto g = grad.row(r);
      std::fill(g.begin(), g.end(), T{0});
      touched_flag[r] = 0;
    }
    touched_rows.clear();
  }
};

template <class T>
using ParamVisitor = std::function<void(Param<T>&)>;

// Glorot-uniform in [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
template <class T>
void init_glorot(BasicMatrix<T>& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : m.data()) v = static_cast<T>(dist(rng));
}

template <class T>
void init_uniform(BasicMatrix<T>& m, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : m.data()) v = static_cast<T>(dist(rng));
}

// Copies values between two models of possibly different scalar types,
// visiting params in the same order.
template <class Dst, class Src>
void copy_param_values(std::vector<Param<Dst>*> dst,
                       std::vector<Param<Src>*> src) {
  if (dst.size() != src.size()) {
    throw ShapeError("copy_param_values: param count mismatch");
  }
  for (std::size_t p = 0; p < dst.size(); ++p) {
    if (dst[p]->value.size() != src[p]->value.size()) {
      throw ShapeError("copy_param_values: size mismatch for " + src[p]->name);
    }
    auto d = dst[p]->value.data();
    auto s = src[p]->value.data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<Dst>(s[k]);
  }
}

}  // namespace keep::nn
