#pragma once

#include <span>
#include <string>
#include <vector>

#include "keep/nn/mlp.hpp"

namespace keep::nn {

// DIN-style target attention. Each behavior embedding e_t is scored by an MLP
// over [e_t ; e_target ; e_t * e_target]; scores are softmax-normalized within
// a record and the pooled vector is the weighted sum of behaviors.
template <class T>
class AttentionPooler {
 public:
  struct Cache {
    BasicMatrix<T> att_in;
    MlpTrace<T> trace;
    std::vector<T> weights;
  };

  AttentionPooler() = default;
  AttentionPooler(const std::string& name, std::size_t emb_dim,
                  std::size_t hidden_dim);

  std::size_t dim() const { return dim_; }
  void init(Rng& rng) { mlp.init(rng); }

  // `behaviors` stacks every record's sequence; record r owns rows
  // [offsets[r], offsets[r+1]). Returns one pooled row per record; an empty
  // sequence pools to zero.
  BasicMatrix<T> forward(const BasicMatrix<T>& behaviors,
                         std::span<const std::size_t> offsets,
                         const BasicMatrix<T>& targets, Cache& cache) const;

  // Accumulates MLP gradients; writes gradients w.r.t. behaviors and targets
  // (both sized like the forward inputs).
  void backward(const Cache& cache, const BasicMatrix<T>& behaviors,
                std::span<const std::size_t> offsets,
                const BasicMatrix<T>& targets, const BasicMatrix<T>& dpooled,
                BasicMatrix<T>& dbehaviors, BasicMatrix<T>& dtargets);

  void collect_params(std::vector<Param<T>*>& out) { mlp.collect_params(out); }

  MlpStack<T> mlp;

 private:
  std::size_t dim_ = 0;
};

}  // namespace keep::nn
