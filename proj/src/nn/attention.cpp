#include "keep/nn/attention.hpp"

#include <algorithm>
#include <cmath>

namespace keep::nn {

template <class T>
AttentionPooler<T>::AttentionPooler(const std::string& name,
                                    std::size_t emb_dim, std::size_t hidden_dim)
    : mlp(name + ".att", 3 * emb_dim, {hidden_dim, 1}), dim_(emb_dim) {}

namespace {

template <class T>
void check_inputs(const BasicMatrix<T>& behaviors,
                  std::span<const std::size_t> offsets,
                  const BasicMatrix<T>& targets, std::size_t dim) {
  if (offsets.size() != targets.rows() + 1 || offsets.front() != 0 ||
      offsets.back() != behaviors.rows()) {
    throw ShapeError("attention: offsets do not partition the behavior rows");
  }
  if ((behaviors.rows() > 0 && behaviors.cols() != dim) ||
      targets.cols() != dim) {
    throw ShapeError("attention: embedding widths differ from pooler dim " +
                     std::to_string(dim));
  }
}

}  // namespace

template <class T>
BasicMatrix<T> AttentionPooler<T>::forward(const BasicMatrix<T>& behaviors,
                                           std::span<const std::size_t> offsets,
                                           const BasicMatrix<T>& targets,
                                           Cache& cache) const {
  check_inputs(behaviors, offsets, targets, dim_);
  const std::size_t n = targets.rows();
  const std::size_t total = behaviors.rows();
  BasicMatrix<T> pooled(n, dim_);
  cache.weights.assign(total, T{0});
  if (total == 0) {
    cache.att_in.reset(0, 3 * dim_);
    cache.trace = {};
    return pooled;
  }

  cache.att_in.reset(total, 3 * dim_);
  for (std::size_t r = 0; r < n; ++r) {
    auto tgt = targets.row(r);
    for (std::size_t t = offsets[r]; t < offsets[r + 1]; ++t) {
      auto b = behaviors.row(t);
      auto in = cache.att_in.row(t);
      for (std::size_t k = 0; k < dim_; ++k) {
        in[k] = b[k];
        in[dim_ + k] = tgt[k];
        in[2 * dim_ + k] = b[k] * tgt[k];
      }
    }
  }
  cache.trace = mlp.forward(cache.att_in);
  const auto& scores = cache.trace.logits();

  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t lo = offsets[r], hi = offsets[r + 1];
    if (lo == hi) continue;
    T max_s = scores(lo, 0);
    for (std::size_t t = lo + 1; t < hi; ++t) max_s = std::max(max_s, scores(t, 0));
    T denom{0};
    for (std::size_t t = lo; t < hi; ++t) {
      cache.weights[t] = std::exp(scores(t, 0) - max_s);
      denom += cache.weights[t];
    }
    auto out = pooled.row(r);
    for (std::size_t t = lo; t < hi; ++t) {
      cache.weights[t] /= denom;
      auto b = behaviors.row(t);
      for (std::size_t k = 0; k < dim_; ++k) out[k] += cache.weights[t] * b[k];
    }
  }
  return pooled;
}

template <class T>
void AttentionPooler<T>::backward(const Cache& cache,
                                  const BasicMatrix<T>& behaviors,
                                  std::span<const std::size_t> offsets,
                                  const BasicMatrix<T>& targets,
                                  const BasicMatrix<T>& dpooled,
                                  BasicMatrix<T>& dbehaviors,
                                  BasicMatrix<T>& dtargets) {
  check_inputs(behaviors, offsets, targets, dim_);
  const std::size_t n = targets.rows();
  const std::size_t total = behaviors.rows();
  dbehaviors.reset(total, dim_);
  dtargets.reset(n, dim_);
  if (total == 0) return;
  if (cache.trace.empty() || cache.weights.size() != total) {
    throw StateError("attention backward without a matching forward");
  }

  // Softmax backward: ds_t = a_t * (g.b_t - sum_k a_k g.b_k).
  BasicMatrix<T> dscores(total, 1);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t lo = offsets[r], hi = offsets[r + 1];
    if (lo == hi) continue;
    auto g = dpooled.row(r);
    T weighted{0};
    for (std::size_t t = lo; t < hi; ++t) {
      auto b = behaviors.row(t);
      T gb{0};
      for (std::size_t k = 0; k < dim_; ++k) gb += g[k] * b[k];
      dscores(t, 0) = gb;
      weighted += cache.weights[t] * gb;
      auto db = dbehaviors.row(t);
      for (std::size_t k = 0; k < dim_; ++k) db[k] = cache.weights[t] * g[k];
    }
    for (std::size_t t = lo; t < hi; ++t) {
      dscores(t, 0) = cache.weights[t] * (dscores(t, 0) - weighted);
    }
  }

  BasicMatrix<T> din = mlp.backward(cache.trace, dscores);
  for (std::size_t r = 0; r < n; ++r) {
    auto tgt = targets.row(r);
    auto dt = dtargets.row(r);
    for (std::size_t t = offsets[r]; t < offsets[r + 1]; ++t) {
      auto b = behaviors.row(t);
      auto db = dbehaviors.row(t);
      auto d = din.row(t);
      for (std::size_t k = 0; k < dim_; ++k) {
        db[k] += d[k] + d[2 * dim_ + k] * tgt[k];
        dt[k] += d[dim_ + k] + d[2 * dim_ + k] * b[k];
      }
    }
  }
}

template class AttentionPooler<float>;
template class AttentionPooler<double>;

}  // namespace keep::nn
