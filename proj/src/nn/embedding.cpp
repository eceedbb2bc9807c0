#include "keep/nn/embedding.hpp"

#include <algorithm>

namespace keep::nn {

template <class T>
EmbeddingTable<T>::EmbeddingTable(const std::string& name,
                                  std::size_t vocab_size, std::size_t dim,
                                  HashMode mode)
    : table(name, vocab_size, dim, /*sparse=*/true), mode_(mode) {
  if (dim == 0 || vocab_size == 0) {
    throw ShapeError("embedding " + name + " needs positive vocab and dim");
  }
}

template <class T>
void EmbeddingTable<T>::init(Rng& rng) {
  init_uniform(table.value, 0.01, rng);
}

template <class T>
std::size_t EmbeddingTable<T>::row_of(std::uint64_t id) const {
  const std::size_t vocab = vocab_size();
  if (mode_ == HashMode::kModulo) return static_cast<std::size_t>(id % vocab);
  if (id >= vocab) {
    throw InvalidArgument("embedding " + table.name + ": id " +
                          std::to_string(id) + " >= vocab " +
                          std::to_string(vocab) + " under identity hashing");
  }
  return static_cast<std::size_t>(id);
}

template <class T>
void EmbeddingTable<T>::lookup_into(std::uint64_t id, std::span<T> dst) const {
  auto src = lookup(id);
  std::copy(src.begin(), src.end(), dst.begin());
}

template <class T>
void EmbeddingTable<T>::scatter_grad(std::uint64_t id, std::span<const T> g) {
  const std::size_t r = row_of(id);
  table.touch(r);
  auto dst = table.grad.row(r);
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
}

template class EmbeddingTable<float>;
template class EmbeddingTable<double>;

}  // namespace keep::nn
