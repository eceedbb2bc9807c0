#include "keep/nn/mlp.hpp"

namespace keep::nn {

template <class T>
DenseLayer<T>::DenseLayer(const std::string& name, std::size_t in_dim,
                          std::size_t out_dim, Activation act)
    : weight(name + ".w", in_dim, out_dim),
      bias(name + ".b", 1, out_dim),
      activation(act) {
  if (in_dim == 0 || out_dim == 0) {
    throw ShapeError("dense layer " + name + " has a zero dimension");
  }
}

template <class T>
void DenseLayer<T>::forward(const BasicMatrix<T>& x, BasicMatrix<T>& y) const {
  if (x.cols() != in_dim()) {
    throw ShapeError(weight.name + ": input " + shape_str(x.rows(), x.cols()) +
                     ", expected " + std::to_string(in_dim()) + " columns");
  }
  matmul(x, weight.value, y);
  const T* b = bias.value.ptr();
  const std::size_t m = out_dim();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    T* o = y.ptr() + r * m;
    for (std::size_t j = 0; j < m; ++j) o[j] += b[j];
    if (activation == Activation::kRelu) {
      for (std::size_t j = 0; j < m; ++j) o[j] = o[j] > T{0} ? o[j] : T{0};
    }
  }
}

template <class T>
void DenseLayer<T>::backward(const BasicMatrix<T>& x, const BasicMatrix<T>& y,
                             const BasicMatrix<T>& dy, BasicMatrix<T>* dx) {
  if (dy.rows() != x.rows() || dy.cols() != out_dim() || y.size() != dy.size()) {
    throw ShapeError(weight.name + ": upstream gradient " +
                     shape_str(dy.rows(), dy.cols()));
  }
  const BasicMatrix<T>* dz = &dy;
  BasicMatrix<T> masked;
  if (activation == Activation::kRelu) {
    masked = dy;
    auto md = masked.data();
    auto yd = y.data();
    for (std::size_t k = 0; k < md.size(); ++k) {
      if (!(yd[k] > T{0})) md[k] = T{0};
    }
    dz = &masked;
  }
  matmul_at_b_acc(x, *dz, weight.grad);
  T* gb = bias.grad.ptr();
  const std::size_t m = out_dim();
  for (std::size_t r = 0; r < dz->rows(); ++r) {
    const T* g = dz->ptr() + r * m;
    for (std::size_t j = 0; j < m; ++j) gb[j] += g[j];
  }
  if (dx != nullptr) matmul_a_bt(*dz, weight.value, *dx);
}

template <class T>
MlpStack<T>::MlpStack(const std::string& name, std::size_t in_dim,
                      const std::vector<std::size_t>& layer_dims) {
  if (layer_dims.empty()) throw ShapeError("mlp " + name + " has no layers");
  std::size_t prev = in_dim;
  for (std::size_t l = 0; l < layer_dims.size(); ++l) {
    const bool last = l + 1 == layer_dims.size();
    layers_.emplace_back(name + ".l" + std::to_string(l + 1), prev,
                         layer_dims[l],
                         last ? Activation::kNone : Activation::kRelu);
    prev = layer_dims[l];
  }
}

template <class T>
std::vector<std::size_t> MlpStack<T>::layer_dims() const {
  std::vector<std::size_t> dims;
  for (const auto& l : layers_) dims.push_back(l.out_dim());
  return dims;
}

template <class T>
void MlpStack<T>::init(Rng& rng) {
  for (auto& l : layers_) {
    init_glorot(l.weight.value, rng);
    l.bias.value.fill(T{0});
  }
}

template <class T>
void MlpStack<T>::zero_params() {
  for (auto& l : layers_) {
    l.weight.value.fill(T{0});
    l.bias.value.fill(T{0});
  }
}

template <class T>
MlpTrace<T> MlpStack<T>::forward(const BasicMatrix<T>& x) const {
  MlpTrace<T> trace;
  trace.inputs.resize(layers_.size());
  trace.outputs.resize(layers_.size());
  trace.inputs[0] = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].forward(trace.inputs[l], trace.outputs[l]);
    if (l + 1 < layers_.size()) trace.inputs[l + 1] = trace.outputs[l];
  }
  return trace;
}

template <class T>
MlpTrace<T> MlpStack<T>::forward(const BasicMatrix<T>& x,
                                 std::size_t inject_after,
                                 const BasicMatrix<T>& addend) const {
  if (inject_after == 0 || inject_after >= layers_.size()) {
    throw ShapeError("injection layer " + std::to_string(inject_after) +
                     " outside [1, " + std::to_string(layers_.size() - 1) + "]");
  }
  const auto& hm = layers_[inject_after - 1];
  if (addend.cols() != hm.out_dim() || addend.rows() != x.rows()) {
    throw ShapeError("injected vector " + shape_str(addend.rows(), addend.cols()) +
                     " does not match h_" + std::to_string(inject_after) +
                     " width " + std::to_string(hm.out_dim()));
  }
  MlpTrace<T> trace;
  trace.inject_after = inject_after;
  trace.inputs.resize(layers_.size());
  trace.outputs.resize(layers_.size());
  trace.inputs[0] = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].forward(trace.inputs[l], trace.outputs[l]);
    if (l + 1 < layers_.size()) {
      trace.inputs[l + 1] = trace.outputs[l];
      if (l + 1 == inject_after) {
        auto dst = trace.inputs[l + 1].data();
        auto add = addend.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += add[k];
      }
    }
  }
  return trace;
}

template <class T>
BasicMatrix<T> MlpStack<T>::backward(const MlpTrace<T>& trace,
                                     const BasicMatrix<T>& upstream,
                                     BasicMatrix<T>* addend_grad) {
  if (trace.outputs.size() != layers_.size() ||
      trace.inputs.size() != layers_.size()) {
    throw StateError("mlp backward called without a matching forward trace");
  }
  if (trace.inject_after && addend_grad == nullptr) {
    throw StateError("mlp backward: injected trace needs an addend gradient");
  }
  BasicMatrix<T> grad = upstream;
  BasicMatrix<T> next;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    layers_[l].backward(trace.inputs[l], trace.outputs[l], grad, &next);
    // `next` is d(loss)/d(inputs[l]); when layer l consumes h'_m this is
    // also the gradient of the injected addend.
    if (trace.inject_after && l == *trace.inject_after) *addend_grad = next;
    std::swap(grad, next);
  }
  return grad;
}

template <class T>
void MlpStack<T>::collect_params(std::vector<Param<T>*>& out) {
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

template class DenseLayer<float>;
template class DenseLayer<double>;
template class MlpStack<float>;
template class MlpStack<double>;

}  // namespace keep::nn
