#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "keep/extractor/model.hpp"
#include "keep/nn/adam.hpp"
#include "keep/nn/attention.hpp"
#include "keep/nn/checkpoint.hpp"
#include "keep/nn/embedding.hpp"
#include "keep/nn/mlp.hpp"

namespace keep::plug {

using extractor::Example;

// Sub-domain CTR model. Features are item, shop, category and the attention-
// pooled behavior sequence; user_id is deliberately absent, so user-level
// signal only arrives through plugged knowledge.
struct DownstreamConfig {
  std::size_t n_items = 2000;
  std::size_t n_shops = 400;
  std::size_t n_categories = 50;
  std::size_t feature_dim = 16;
  std::size_t attention_hidden = 8;
  std::vector<std::size_t> mlp_dims = {64, 32, 16, 1};
  // 1-based hidden layer that receives the plug; 0 picks depth - 1.
  std::size_t plug_layer = 0;
  nn::HashMode hash_mode = nn::HashMode::kModulo;
  std::uint64_t seed = 1;

  std::size_t resolved_plug_layer() const;
  std::string to_text() const;
  static DownstreamConfig from_text(std::string_view text);
};

// Shallow projection K -> h^k with dim(h^k) = dim(h_m). The final layer
// starts at zero so attaching a plug leaves predictions unchanged.
template <class T>
class PlugInNetwork {
 public:
  PlugInNetwork() = default;
  PlugInNetwork(std::size_t knowledge_dim, std::size_t target_dim,
                std::size_t plug_layer, std::uint64_t seed);

  std::size_t knowledge_dim() const { return proj.in_dim(); }
  std::size_t output_dim() const { return proj.out_dim(); }
  std::size_t plug_layer() const { return plug_layer_; }

  void zero_final_layer();
  void collect_params(std::vector<nn::Param<T>*>& out) { proj.collect_params(out); }

  nn::MlpStack<T> proj;

 private:
  std::size_t plug_layer_ = 1;
};

template <class T>
class DownstreamModel {
 public:
  struct Forward {
    std::size_t n = 0;
    std::vector<std::uint64_t> item_ids, shop_ids, category_ids, behavior_ids;
    nn::BasicMatrix<T> item, shop, category, behaviors;
    std::vector<std::size_t> offsets;
    typename nn::AttentionPooler<T>::Cache pool_cache;
    nn::BasicMatrix<T> input;
    nn::MlpTrace<T> trace;
    bool plugged = false;
    nn::BasicMatrix<T> knowledge;
    nn::MlpTrace<T> plug_trace;
  };

  explicit DownstreamModel(const DownstreamConfig& config);

  const DownstreamConfig& config() const { return config_; }
  std::size_t input_dim() const { return 4 * config_.feature_dim; }
  // Width of h_m for the configured plug layer.
  std::size_t plug_target_dim() const;

  // `knowledge` holds one row per example; pass null (or a null plug) for
  // the unplugged model. Throws ShapeError when dims disagree.
  Forward forward(std::span<const Example* const> batch,
                  const nn::BasicMatrix<T>* knowledge,
                  const PlugInNetwork<T>* plug) const;
  std::vector<T> logits(const Forward& f) const;
  std::vector<T> predict(std::span<const Example* const> batch,
                         const nn::BasicMatrix<T>* knowledge,
                         const PlugInNetwork<T>* plug) const;

  // Accumulates gradients into this model and, when f was plugged, `plug`.
  void backward(const Forward& f, std::span<const T> dlogits, PlugInNetwork<T>* plug);

  void collect_params(std::vector<nn::Param<T>*>& out);
  std::vector<nn::Param<T>*> params();

  nn::EmbeddingTable<T> item_emb;
  nn::EmbeddingTable<T> shop_emb;
  nn::EmbeddingTable<T> cat_emb;
  nn::AttentionPooler<T> pooler;
  nn::MlpStack<T> mlp;

 private:
  DownstreamConfig config_;
};

// Main model + optional plug + one Adam over both.
class Trainer {
 public:
  Trainer(const DownstreamConfig& config, std::size_t knowledge_dim,
          nn::AdamConfig adam = {});

  DownstreamModel<float>& model() { return model_; }
  const DownstreamModel<float>& model() const { return model_; }
  PlugInNetwork<float>* plug() { return has_plug_ ? &plug_ : nullptr; }
  const PlugInNetwork<float>* plug() const { return has_plug_ ? &plug_ : nullptr; }
  nn::Adam& adam() { return adam_; }
  std::size_t knowledge_dim() const { return has_plug_ ? plug_.knowledge_dim() : 0; }

  // Sum of pointwise click cross-entropy over the batch, then one Adam step.
  double train_step(std::span<const Example* const> batch, const nn::Matrix* knowledge);
  std::vector<float> predict(std::span<const Example* const> batch,
                             const nn::Matrix* knowledge) const;

  std::vector<nn::Param<float>*> params();

  // kind "downstream"; config carries DownstreamConfig and knowledge dim.
  nn::Checkpoint checkpoint(std::int64_t cursor_day, std::uint32_t knowledge_version,
                            const std::string& version_tag = "");
  // Restores main params and Adam state. Plug tensors may be absent from
  // the checkpoint (a freshly attached plug keeps its initialization);
  // anything else missing or extra raises ManifestError.
  void warm_start(const nn::Checkpoint& ckpt);

 private:
  DownstreamModel<float> model_;
  PlugInNetwork<float> plug_;
  bool has_plug_ = false;
  nn::Adam adam_;
};

}  // namespace keep::plug
