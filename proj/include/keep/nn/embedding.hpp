#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "keep/nn/matrix.hpp"
#include "keep/nn/param.hpp"

namespace keep::nn {

enum class HashMode { kIdentity, kModulo };

template <class T>
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(const std::string& name, std::size_t vocab_size,
                 std::size_t dim, HashMode mode = HashMode::kModulo);

  const std::string& name() const { return table.name; }
  std::size_t vocab_size() const { return table.value.rows(); }
  std::size_t dim() const { return table.value.cols(); }
  HashMode hash_mode() const { return mode_; }

  // Uniform in [-0.01, 0.01].
  void init(Rng& rng);

  std::size_t row_of(std::uint64_t id) const;
  std::span<const T> lookup(std::uint64_t id) const {
    return table.value.row(row_of(id));
  }
  void lookup_into(std::uint64_t id, std::span<T> dst) const;
  void scatter_grad(std::uint64_t id, std::span<const T> g);

  Param<T> table;

 private:
  HashMode mode_ = HashMode::kModulo;
};

}  // namespace keep::nn
