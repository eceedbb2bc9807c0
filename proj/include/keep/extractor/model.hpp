#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "keep/data/record.hpp"
#include "keep/nn/adam.hpp"
#include "keep/nn/attention.hpp"
#include "keep/nn/checkpoint.hpp"
#include "keep/nn/embedding.hpp"
#include "keep/nn/mlp.hpp"

namespace keep::extractor {

enum class Task : std::size_t { kClick = 0, kConversion = 1, kCart = 2 };
inline constexpr std::size_t kNumTasks = 3;
inline constexpr std::array<Task, kNumTasks> kAllTasks = {
    Task::kClick, Task::kConversion, Task::kCart};

std::string_view task_name(Task t);
// Accepts "click", "conversion"/"cv", "cart"; throws InvalidArgument.
Task parse_task(std::string_view name);

// kFull sees user, item, shop, category and the item behavior sequence.
// kDegenerated drops every item-side feature: the target is the category and
// the behavior sequence holds categories, so its output depends on (u, c).
enum class Variant { kFull, kDegenerated };

struct ExtractorConfig {
  Variant variant = Variant::kFull;
  std::size_t n_users = 10000;
  std::size_t n_items = 2000;
  std::size_t n_shops = 400;
  std::size_t n_categories = 50;
  std::size_t user_dim = 48;
  std::size_t feature_dim = 16;
  std::size_t attention_hidden = 8;
  std::vector<std::size_t> head_dims = {64, 32, 16, 8, 2};
  nn::HashMode hash_mode = nn::HashMode::kModulo;
  std::uint64_t seed = 1;

  // Head widths used in production: [512, 256, 128, 64, 2].
  static ExtractorConfig production();

  std::string to_text() const;
  static ExtractorConfig from_text(std::string_view text);
};

// Model input for one impression. For the degenerated variant `behaviors`
// holds category ids (see to_example).
struct Example {
  std::uint64_t user = 0;
  std::uint64_t item = 0;
  std::uint64_t shop = 0;
  std::uint32_t category = 0;
  std::uint64_t session = 0;
  std::vector<std::uint64_t> behaviors;
  std::array<std::uint8_t, kNumTasks> labels{};  // click, conversion, cart

  std::uint8_t label(Task t) const { return labels[static_cast<std::size_t>(t)]; }
};

Example to_example(const data::ImpressionRecord& r, Variant v,
                   const data::Catalog* catalog = nullptr);

// Row selection per task head for one forward pass.
using TaskRows = std::array<std::vector<std::size_t>, kNumTasks>;

// Extracted knowledge in concatenation order [k_u ; k_i ; k_ui_clk ; k_ui_cv ;
// k_ui_cart]. For the degenerated variant k_i is empty.
struct KnowledgeVector {
  std::vector<float> k_u;
  std::vector<float> k_i;
  std::array<std::vector<float>, kNumTasks> k_ui;

  std::vector<float> concatenated() const;
};

template <class T>
class ExtractorModel {
 public:
  struct Forward {
    std::size_t n = 0;
    std::vector<std::uint64_t> user_ids, item_ids, shop_ids, category_ids;
    std::vector<std::uint64_t> behavior_ids;  // flattened, see offsets
    nn::BasicMatrix<T> user, item, shop, category;  // looked-up rows
    nn::BasicMatrix<T> behaviors;
    std::vector<std::size_t> offsets;
    typename nn::AttentionPooler<T>::Cache pool_cache;
    nn::BasicMatrix<T> head_input;
    TaskRows rows;
    std::array<nn::MlpTrace<T>, kNumTasks> traces;
  };

  explicit ExtractorModel(const ExtractorConfig& config);

  const ExtractorConfig& config() const { return config_; }
  Variant variant() const { return config_.variant; }
  std::size_t head_input_dim() const;
  // Width of the second-to-last head layer (k_ui per task).
  std::size_t interaction_dim() const;
  std::size_t item_knowledge_dim() const;
  std::size_t knowledge_dim() const;

  Forward forward(std::span<const Example* const> batch,
                  const TaskRows& rows) const;
  Forward forward_all(std::span<const Example* const> batch) const;

  // s = o[1] - o[0] per row of rows[task], in that order.
  std::vector<T> logits(const Forward& f, Task task) const;

  // dlogits[t][k] is d(loss)/d(logit) for row rows[t][k].
  void backward(const Forward& f,
                const std::array<std::vector<T>, kNumTasks>& dlogits);

  T score(const Example& e, Task task) const;

  // One row per example: [k_u ; k_i ; k_ui_clk ; k_ui_cv ; k_ui_cart].
  nn::BasicMatrix<T> extract(std::span<const Example* const> batch) const;
  KnowledgeVector extract_one(const Example& e) const;

  void collect_params(std::vector<nn::Param<T>*>& out);
  std::vector<nn::Param<T>*> params();
  void zero_grad();

  nn::EmbeddingTable<T> user_emb;
  nn::EmbeddingTable<T> item_emb;  // full variant only
  nn::EmbeddingTable<T> shop_emb;  // full variant only
  nn::EmbeddingTable<T> cat_emb;
  nn::AttentionPooler<T> pooler;
  std::array<nn::MlpStack<T>, kNumTasks> heads;

 private:
  nn::EmbeddingTable<T>& behavior_table() {
    return config_.variant == Variant::kFull ? item_emb : cat_emb;
  }
  const nn::EmbeddingTable<T>& behavior_table() const {
    return config_.variant == Variant::kFull ? item_emb : cat_emb;
  }

  ExtractorConfig config_;
};

// kind "extractor"; the config text travels with the weights.
nn::Checkpoint extractor_checkpoint(ExtractorModel<float>& model, const nn::Adam* adam,
                                    std::int64_t cursor_day);
// Rebuilds the model from a checkpoint; restores Adam state when given.
ExtractorModel<float> load_extractor(const nn::Checkpoint& ckpt, nn::Adam* adam = nullptr);

}  // namespace keep::extractor
