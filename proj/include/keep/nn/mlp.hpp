#pragma once

#include <optional>
#include <string>
#include <vector>

#include "keep/nn/matrix.hpp"
#include "keep/nn/param.hpp"

namespace keep::nn {

enum class Activation { kRelu, kNone };

template <class T>
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in_dim, std::size_t out_dim,
             Activation activation);

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }

  void forward(const BasicMatrix<T>& x, BasicMatrix<T>& y) const;

  // `y` is this layer's forward output, `dy` the gradient w.r.t. it.
  // Accumulates into weight.grad / bias.grad; writes dx when non-null.
  void backward(const BasicMatrix<T>& x, const BasicMatrix<T>& y,
                const BasicMatrix<T>& dy, BasicMatrix<T>* dx);

  Param<T> weight;  // in_dim x out_dim
  Param<T> bias;    // 1 x out_dim
  Activation activation = Activation::kRelu;
};

// Per-layer record of a forward pass. inputs[l] is what layer l consumed
// (after any injection), outputs[l] is h_{l+1} as produced by layer l.
template <class T>
struct MlpTrace {
  std::vector<BasicMatrix<T>> inputs;
  std::vector<BasicMatrix<T>> outputs;
  std::optional<std::size_t> inject_after;

  bool empty() const { return outputs.empty(); }
  const BasicMatrix<T>& logits() const { return outputs.back(); }
  // h_i with 1-based i, matching the usual layer numbering.
  const BasicMatrix<T>& h(std::size_t i) const { return outputs.at(i - 1); }
};

template <class T>
class MlpStack {
 public:
  MlpStack() = default;
  // Hidden layers use ReLU; the final layer is linear (it produces logits).
  MlpStack(const std::string& name, std::size_t in_dim,
           const std::vector<std::size_t>& layer_dims);

  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }
  std::size_t depth() const { return layers_.size(); }
  std::vector<std::size_t> layer_dims() const;

  DenseLayer<T>& layer(std::size_t l) { return layers_.at(l); }
  const DenseLayer<T>& layer(std::size_t l) const { return layers_.at(l); }

  void init(Rng& rng);
  void zero_params();

  MlpTrace<T> forward(const BasicMatrix<T>& x) const;

  // Forward with h'_m = h_m + addend substituted as the input of layer m+1
  // (m is 1-based, 1 <= m < depth).
  MlpTrace<T> forward(const BasicMatrix<T>& x, std::size_t inject_after,
                      const BasicMatrix<T>& addend) const;

  // Accumulates parameter gradients and returns d(loss)/d(x). When the trace
  // carries an injection, the gradient w.r.t. the addend is written to
  // `addend_grad` (required in that case).
  BasicMatrix<T> backward(const MlpTrace<T>& trace,
                          const BasicMatrix<T>& upstream,
                          BasicMatrix<T>* addend_grad = nullptr);

  void collect_params(std::vector<Param<T>*>& out);

 private:
  std::vector<DenseLayer<T>> layers_;
};

}  // namespace keep::nn
