#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "keep/data/record.hpp"
#include "keep/data/training_order.hpp"
#include "keep/extractor/model.hpp"
#include "keep/nn/adam.hpp"
#include "keep/nn/checkpoint.hpp"
#include "keep/nn/embedding.hpp"
#include "keep/nn/mlp.hpp"

namespace keep::serving {

using extractor::Example;

struct TwoTowerConfig {
  std::size_t n_users = 10000;
  std::size_t n_items = 2000;
  std::size_t n_shops = 400;
  std::size_t n_categories = 50;
  std::size_t user_dim = 48;
  std::size_t feature_dim = 16;
  std::size_t hidden = 32;
  std::size_t tower_dim = 16;  // d
  nn::HashMode hash_mode = nn::HashMode::kModulo;
  std::uint64_t seed = 1;

  std::string to_text() const;
  static TwoTowerConfig from_text(std::string_view text);
};

// Decomposed extractor: the user tower sees [user ; mean of behaviors], the
// item tower sees [item ; shop ; category], and the click logit is the dot
// product of the two outputs. Both outputs can be cached independently.
template <class T>
class TwoTower {
 public:
  struct Forward {
    std::size_t n = 0;
    std::vector<std::uint64_t> user_ids, item_ids, shop_ids, category_ids, behavior_ids;
    std::vector<std::size_t> offsets;
    nn::BasicMatrix<T> user_in, item_in;
    nn::MlpTrace<T> user_trace, item_trace;
  };

  explicit TwoTower(const TwoTowerConfig& config);

  const TwoTowerConfig& config() const { return config_; }
  std::size_t dim() const { return config_.tower_dim; }

  Forward forward(std::span<const Example* const> batch) const;
  std::vector<T> logits(const Forward& f) const;
  void backward(const Forward& f, std::span<const T> dlogits);

  // K̂_u for a user with the given behavior history; K̂_i for an item.
  nn::BasicMatrix<T> user_knowledge(std::span<const std::uint64_t> users,
                                    std::span<const std::vector<std::uint64_t>> behaviors) const;
  nn::BasicMatrix<T> item_knowledge(std::span<const std::uint64_t> items,
                                    std::span<const std::uint64_t> shops,
                                    std::span<const std::uint32_t> categories) const;

  void collect_params(std::vector<nn::Param<T>*>& out);
  std::vector<nn::Param<T>*> params();
  void zero_grad();

  nn::EmbeddingTable<T> user_emb, item_emb, shop_emb, cat_emb;
  nn::MlpStack<T> user_tower, item_tower;

 private:
  TwoTowerConfig config_;
};

// ⟨a_r, b_r⟩ for every row, summed in column order.
template <class T>
std::vector<T> row_dots(const nn::BasicMatrix<T>& a, const nn::BasicMatrix<T>& b);

struct TwoTowerProgress {
  std::size_t steps = 0;
  std::size_t impressions = 0;
  double first_mean_loss = 0.0;
  double last_mean_loss = 0.0;
};

// Pointwise click training, one epoch over `days` in iterate_training_order.
TwoTowerProgress train_two_tower(TwoTower<float>& model, nn::Adam& adam,
                                 std::span<const data::ImpressionRecord> log,
                                 data::DayRange days, std::size_t batch_size,
                                 std::uint64_t seed);

// kind "two_tower".
nn::Checkpoint two_tower_checkpoint(TwoTower<float>& model, const nn::Adam* adam,
                                    std::int64_t cursor_day);
TwoTower<float> load_two_tower(const nn::Checkpoint& ckpt, nn::Adam* adam = nullptr);

}  // namespace keep::serving
