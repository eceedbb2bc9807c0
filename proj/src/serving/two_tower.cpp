#include "keep/serving/two_tower.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "keep/error.hpp"
#include "keep/extractor/losses.hpp"
#include "keep/kv.hpp"

namespace keep::serving {

std::string TwoTowerConfig::to_text() const {
  std::ostringstream out;
  out << "n_users = " << n_users << '\n'
      << "n_items = " << n_items << '\n'
      << "n_shops = " << n_shops << '\n'
      << "n_categories = " << n_categories << '\n'
      << "user_dim = " << user_dim << '\n'
      << "feature_dim = " << feature_dim << '\n'
      << "hidden = " << hidden << '\n'
      << "tower_dim = " << tower_dim << '\n'
      << "hash_mode = " << (hash_mode == nn::HashMode::kModulo ? "modulo" : "identity") << '\n'
      << "seed = " << seed << '\n';
  return out.str();
}

TwoTowerConfig TwoTowerConfig::from_text(std::string_view text) {
  const auto kv = KeyValues::parse(text);
  TwoTowerConfig c;
  c.n_users = kv.get_uint("n_users", c.n_users);
  c.n_items = kv.get_uint("n_items", c.n_items);
  c.n_shops = kv.get_uint("n_shops", c.n_shops);
  c.n_categories = kv.get_uint("n_categories", c.n_categories);
  c.user_dim = kv.get_uint("user_dim", c.user_dim);
  c.feature_dim = kv.get_uint("feature_dim", c.feature_dim);
  c.hidden = kv.get_uint("hidden", c.hidden);
  c.tower_dim = kv.get_uint("tower_dim", c.tower_dim);
  c.hash_mode = kv.get_string("hash_mode", "modulo") == "identity" ? nn::HashMode::kIdentity
                                                                   : nn::HashMode::kModulo;
  c.seed = kv.get_uint("seed", c.seed);
  return c;
}

template <class T>
TwoTower<T>::TwoTower(const TwoTowerConfig& config) : config_(config) {
  const auto mode = config.hash_mode;
  const auto fd = config.feature_dim;
  user_emb = nn::EmbeddingTable<T>("tt.user_id", config.n_users, config.user_dim, mode);
  item_emb = nn::EmbeddingTable<T>("tt.item_id", config.n_items, fd, mode);
  shop_emb = nn::EmbeddingTable<T>("tt.shop_id", config.n_shops, fd, mode);
  cat_emb = nn::EmbeddingTable<T>("tt.category_id", config.n_categories, fd, mode);
  user_tower = nn::MlpStack<T>("tt.user_tower", config.user_dim + fd,
                               {config.hidden, config.tower_dim});
  item_tower = nn::MlpStack<T>("tt.item_tower", 3 * fd, {config.hidden, config.tower_dim});
  nn::Rng rng(config.seed);
  user_emb.init(rng);
  item_emb.init(rng);
  shop_emb.init(rng);
  cat_emb.init(rng);
  user_tower.init(rng);
  item_tower.init(rng);
}

template <class T>
typename TwoTower<T>::Forward TwoTower<T>::forward(std::span<const Example* const> batch) const {
  Forward f;
  f.n = batch.size();
  const std::size_t ud = config_.user_dim, fd = config_.feature_dim;
  f.user_in.reset(f.n, ud + fd);
  f.item_in.reset(f.n, 3 * fd);
  f.offsets.assign(f.n + 1, 0);
  for (std::size_t r = 0; r < f.n; ++r) {
    const Example& e = *batch[r];
    f.user_ids.push_back(e.user);
    f.item_ids.push_back(e.item);
    f.shop_ids.push_back(e.shop);
    f.category_ids.push_back(e.category);
    f.behavior_ids.insert(f.behavior_ids.end(), e.behaviors.begin(), e.behaviors.end());
    f.offsets[r + 1] = f.behavior_ids.size();

    auto urow = f.user_in.row(r);
    user_emb.lookup_into(e.user, urow.subspan(0, ud));
    if (!e.behaviors.empty()) {
      auto mean = urow.subspan(ud, fd);
      for (auto b : e.behaviors) {
        const auto v = item_emb.lookup(b);
        for (std::size_t k = 0; k < fd; ++k) mean[k] += v[k];
      }
      const T inv = T{1} / static_cast<T>(e.behaviors.size());
      for (auto& x : mean) x *= inv;
    }
    auto irow = f.item_in.row(r);
    item_emb.lookup_into(e.item, irow.subspan(0, fd));
    shop_emb.lookup_into(e.shop, irow.subspan(fd, fd));
    cat_emb.lookup_into(e.category, irow.subspan(2 * fd, fd));
  }
  f.user_trace = user_tower.forward(f.user_in);
  f.item_trace = item_tower.forward(f.item_in);
  return f;
}

template <class T>
std::vector<T> row_dots(const nn::BasicMatrix<T>& a, const nn::BasicMatrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("row_dots: " + nn::shape_str(a.rows(), a.cols()) + " vs " + nn::shape_str(b.rows(), b.cols()));
  }
  std::vector<T> out(a.rows(), T{0});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    T s{0};
    for (std::size_t k = 0; k < a.cols(); ++k) s += a(r, k) * b(r, k);
    out[r] = s;
  }
  return out;
}

template <class T>
std::vector<T> TwoTower<T>::logits(const Forward& f) const {
  return row_dots(f.user_trace.logits(), f.item_trace.logits());
}

template <class T>
void TwoTower<T>::backward(const Forward& f, std::span<const T> dlogits) {
  if (dlogits.size() != f.n) throw ShapeError("two-tower backward: gradient count mismatch");
  const auto& U = f.user_trace.logits();
  const auto& I = f.item_trace.logits();
  nn::BasicMatrix<T> dU(U.rows(), U.cols()), dI(I.rows(), I.cols());
  for (std::size_t r = 0; r < f.n; ++r) {
    for (std::size_t k = 0; k < U.cols(); ++k) {
      dU(r, k) = dlogits[r] * I(r, k);
      dI(r, k) = dlogits[r] * U(r, k);
    }
  }
  const auto dxu = user_tower.backward(f.user_trace, dU);
  const auto dxi = item_tower.backward(f.item_trace, dI);
  const std::size_t ud = config_.user_dim, fd = config_.feature_dim;
  for (std::size_t r = 0; r < f.n; ++r) {
    auto gu = dxu.row(r);
    user_emb.scatter_grad(f.user_ids[r], gu.subspan(0, ud));
    const std::size_t len = f.offsets[r + 1] - f.offsets[r];
    if (len > 0) {
      std::vector<T> g(gu.begin() + ud, gu.end());
      const T inv = T{1} / static_cast<T>(len);
      for (auto& x : g) x *= inv;
      for (std::size_t t = f.offsets[r]; t < f.offsets[r + 1]; ++t) {
        item_emb.scatter_grad(f.behavior_ids[t], g);
      }
    }
    auto gi = dxi.row(r);
    item_emb.scatter_grad(f.item_ids[r], gi.subspan(0, fd));
    shop_emb.scatter_grad(f.shop_ids[r], gi.subspan(fd, fd));
    cat_emb.scatter_grad(f.category_ids[r], gi.subspan(2 * fd, fd));
  }
}

template <class T>
nn::BasicMatrix<T> TwoTower<T>::user_knowledge(
    std::span<const std::uint64_t> users,
    std::span<const std::vector<std::uint64_t>> behaviors) const {
  if (users.size() != behaviors.size()) throw ShapeError("user_knowledge: length mismatch");
  std::vector<Example> ex(users.size());
  std::vector<const Example*> ptrs;
  for (std::size_t k = 0; k < users.size(); ++k) {
    ex[k].user = users[k];
    ex[k].behaviors = behaviors[k];
    ptrs.push_back(&ex[k]);
  }
  return forward(ptrs).user_trace.logits();
}

template <class T>
nn::BasicMatrix<T> TwoTower<T>::item_knowledge(std::span<const std::uint64_t> items,
                                               std::span<const std::uint64_t> shops,
                                               std::span<const std::uint32_t> categories) const {
  if (items.size() != shops.size() || items.size() != categories.size()) {
    throw ShapeError("item_knowledge: length mismatch");
  }
  std::vector<Example> ex(items.size());
  std::vector<const Example*> ptrs;
  for (std::size_t k = 0; k < items.size(); ++k) {
    ex[k].item = items[k];
    ex[k].shop = shops[k];
    ex[k].category = categories[k];
    ptrs.push_back(&ex[k]);
  }
  return forward(ptrs).item_trace.logits();
}

template <class T>
void TwoTower<T>::collect_params(std::vector<nn::Param<T>*>& out) {
  out.push_back(&user_emb.table);
  out.push_back(&item_emb.table);
  out.push_back(&shop_emb.table);
  out.push_back(&cat_emb.table);
  user_tower.collect_params(out);
  item_tower.collect_params(out);
}

template <class T>
std::vector<nn::Param<T>*> TwoTower<T>::params() {
  std::vector<nn::Param<T>*> out;
  collect_params(out);
  return out;
}

template <class T>
void TwoTower<T>::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

template class TwoTower<float>;
template class TwoTower<double>;
template std::vector<float> row_dots(const nn::Matrix&, const nn::Matrix&);
template std::vector<double> row_dots(const nn::BasicMatrix<double>&,
                                      const nn::BasicMatrix<double>&);

TwoTowerProgress train_two_tower(TwoTower<float>& model, nn::Adam& adam,
                                 std::span<const data::ImpressionRecord> log,
                                 data::DayRange days, std::size_t batch_size,
                                 std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be > 0");
  const auto order = data::flatten(data::iterate_training_order(log, days, seed));
  TwoTowerProgress progress;
  std::vector<double> means;
  std::vector<Example> ex;
  std::vector<const Example*> ptrs;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    ex.clear();
    ptrs.clear();
    for (std::size_t k = start; k < end; ++k) {
      ex.push_back(extractor::to_example(log[order[k]], extractor::Variant::kFull));
    }
    for (const auto& e : ex) ptrs.push_back(&e);
    const auto f = model.forward(ptrs);
    const auto s = model.logits(f);
    std::vector<double> logit(s.begin(), s.end()), label(ex.size());
    std::vector<float> d(ex.size());
    for (std::size_t k = 0; k < ex.size(); ++k) {
      label[k] = ex[k].label(extractor::Task::kClick);
      d[k] = static_cast<float>(extractor::pointwise_grad(logit[k], label[k]));
    }
    const double loss = extractor::pointwise_loss(logit, label);
    model.zero_grad();
    model.backward(f, d);
    adam.step(model.params());
    means.push_back(loss / static_cast<double>(ex.size()));
    progress.impressions += ex.size();
    ++progress.steps;
  }
  if (!means.empty()) {
    const std::size_t tenth = std::max<std::size_t>(1, means.size() / 10);
    progress.first_mean_loss =
        std::accumulate(means.begin(), means.begin() + tenth, 0.0) / tenth;
    progress.last_mean_loss = std::accumulate(means.end() - tenth, means.end(), 0.0) / tenth;
  }
  return progress;
}

nn::Checkpoint two_tower_checkpoint(TwoTower<float>& model, const nn::Adam* adam,
                                    std::int64_t cursor_day) {
  nn::Checkpoint c;
  c.kind = "two_tower";
  c.config = model.config().to_text();
  c.cursor_day = cursor_day;
  c.adam_step = adam ? adam->step_count() : 0;
  nn::store_params(c, model.params(), adam);
  return c;
}

TwoTower<float> load_two_tower(const nn::Checkpoint& ckpt, nn::Adam* adam) {
  if (ckpt.kind != "two_tower") {
    throw ManifestError("checkpoint kind '" + ckpt.kind + "' is not a two-tower model");
  }
  TwoTower<float> m(TwoTowerConfig::from_text(ckpt.config));
  nn::restore_params(ckpt, m.params(), adam);
  return m;
}

}  // namespace keep::serving
