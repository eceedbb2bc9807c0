#include "keep/extractor/model.hpp"

#include <sstream>

#include "keep/kv.hpp"

namespace keep::extractor {

std::string_view task_name(Task t) {
  switch (t) {
    case Task::kClick: return "click";
    case Task::kConversion: return "conversion";
    case Task::kCart: return "cart";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (name == "click" || name == "clk") return Task::kClick;
  if (name == "conversion" || name == "cv") return Task::kConversion;
  if (name == "cart") return Task::kCart;
  throw InvalidArgument("unknown task '" + std::string(name) + "'");
}

ExtractorConfig ExtractorConfig::production() {
  ExtractorConfig c;
  c.head_dims = {512, 256, 128, 64, 2};
  return c;
}

std::string ExtractorConfig::to_text() const {
  std::ostringstream out;
  out << "variant = " << (variant == Variant::kFull ? "full" : "degenerated") << '\n'
      << "n_users = " << n_users << '\n'
      << "n_items = " << n_items << '\n'
      << "n_shops = " << n_shops << '\n'
      << "n_categories = " << n_categories << '\n'
      << "user_dim = " << user_dim << '\n'
      << "feature_dim = " << feature_dim << '\n'
      << "attention_hidden = " << attention_hidden << '\n'
      << "head_dims = ";
  for (std::size_t k = 0; k < head_dims.size(); ++k) {
    out << (k ? "," : "") << head_dims[k];
  }
  out << '\n'
      << "hash_mode = " << (hash_mode == nn::HashMode::kModulo ? "modulo" : "identity")
      << '\n'
      << "seed = " << seed << '\n';
  return out.str();
}

ExtractorConfig ExtractorConfig::from_text(std::string_view text) {
  const auto kv = KeyValues::parse(text);
  ExtractorConfig c;
  const auto variant = kv.get_string("variant", "full");
  if (variant == "full") {
    c.variant = Variant::kFull;
  } else if (variant == "degenerated") {
    c.variant = Variant::kDegenerated;
  } else {
    throw ConfigError("unknown extractor variant '" + variant + "'");
  }
  c.n_users = kv.get_uint("n_users", c.n_users);
  c.n_items = kv.get_uint("n_items", c.n_items);
  c.n_shops = kv.get_uint("n_shops", c.n_shops);
  c.n_categories = kv.get_uint("n_categories", c.n_categories);
  c.user_dim = kv.get_uint("user_dim", c.user_dim);
  c.feature_dim = kv.get_uint("feature_dim", c.feature_dim);
  c.attention_hidden = kv.get_uint("attention_hidden", c.attention_hidden);
  c.head_dims = kv.get_sizes("head_dims", c.head_dims);
  c.hash_mode = kv.get_string("hash_mode", "modulo") == "identity"
                    ? nn::HashMode::kIdentity
                    : nn::HashMode::kModulo;
  c.seed = kv.get_uint("seed", c.seed);
  return c;
}

Example to_example(const data::ImpressionRecord& r, Variant v,
                   const data::Catalog* catalog) {
  Example e;
  e.user = r.user_id;
  e.item = r.item_id;
  e.shop = r.shop_id;
  e.category = r.category_id;
  e.session = r.session_id;
  e.labels = {r.click, r.conversion, r.cart};
  if (v == Variant::kFull) {
    e.behaviors = r.behavior_seq;
  } else {
    if (catalog == nullptr) {
      throw InvalidArgument("degenerated examples need a catalog for behavior categories");
    }
    e.behaviors.reserve(r.behavior_seq.size());
    for (auto item : r.behavior_seq) e.behaviors.push_back(catalog->category_of(item));
  }
  return e;
}

std::vector<float> KnowledgeVector::concatenated() const {
  std::vector<float> out(k_u);
  out.insert(out.end(), k_i.begin(), k_i.end());
  for (const auto& k : k_ui) out.insert(out.end(), k.begin(), k.end());
  return out;
}

template <class T>
ExtractorModel<T>::ExtractorModel(const ExtractorConfig& config) : config_(config) {
  if (config.head_dims.size() < 2) {
    throw ShapeError("extractor heads need at least two layers");
  }
  if (config.head_dims.back() != 2) {
    throw ShapeError("extractor head must end in a 2-wide layer");
  }
  const auto mode = config.hash_mode;
  user_emb = nn::EmbeddingTable<T>("user_id", config.n_users, config.user_dim, mode);
  cat_emb = nn::EmbeddingTable<T>("category_id", config.n_categories,
                                  config.feature_dim, mode);
  if (config.variant == Variant::kFull) {
    item_emb = nn::EmbeddingTable<T>("item_id", config.n_items, config.feature_dim, mode);
    shop_emb = nn::EmbeddingTable<T>("shop_id", config.n_shops, config.feature_dim, mode);
  }
  pooler = nn::AttentionPooler<T>("behavior", config.feature_dim,
                                  config.attention_hidden);
  for (auto t : kAllTasks) {
    heads[static_cast<std::size_t>(t)] = nn::MlpStack<T>(
        "head." + std::string(task_name(t)), head_input_dim(), config.head_dims);
  }

  nn::Rng rng(config.seed);
  user_emb.init(rng);
  cat_emb.init(rng);
  if (config.variant == Variant::kFull) {
    item_emb.init(rng);
    shop_emb.init(rng);
  }
  pooler.init(rng);
  for (auto& h : heads) h.init(rng);
}

template <class T>
std::size_t ExtractorModel<T>::head_input_dim() const {
  const std::size_t f = config_.feature_dim;
  // [u ; i ; s ; c ; pooled] or [u ; c ; pooled]
  return config_.user_dim + (config_.variant == Variant::kFull ? 4 * f : 2 * f);
}

template <class T>
std::size_t ExtractorModel<T>::interaction_dim() const {
  return config_.head_dims[config_.head_dims.size() - 2];
}

template <class T>
std::size_t ExtractorModel<T>::item_knowledge_dim() const {
  return config_.variant == Variant::kFull ? 3 * config_.feature_dim : 0;
}

template <class T>
std::size_t ExtractorModel<T>::knowledge_dim() const {
  return config_.user_dim + item_knowledge_dim() + kNumTasks * interaction_dim();
}

template <class T>
typename ExtractorModel<T>::Forward ExtractorModel<T>::forward(
    std::span<const Example* const> batch, const TaskRows& rows) const {
  Forward f;
  f.n = batch.size();
  const std::size_t fd = config_.feature_dim;
  const bool full = config_.variant == Variant::kFull;

  f.user.reset(f.n, config_.user_dim);
  f.category.reset(f.n, fd);
  if (full) {
    f.item.reset(f.n, fd);
    f.shop.reset(f.n, fd);
  }
  f.offsets.assign(f.n + 1, 0);
  for (std::size_t r = 0; r < f.n; ++r) {
    f.offsets[r + 1] = f.offsets[r] + batch[r]->behaviors.size();
  }
  f.behaviors.reset(f.offsets.back(), fd);
  const auto& btable = behavior_table();
  for (std::size_t r = 0; r < f.n; ++r) {
    const Example& e = *batch[r];
    f.user_ids.push_back(e.user);
    f.item_ids.push_back(e.item);
    f.shop_ids.push_back(e.shop);
    f.category_ids.push_back(e.category);
    f.behavior_ids.insert(f.behavior_ids.end(), e.behaviors.begin(), e.behaviors.end());
    user_emb.lookup_into(e.user, f.user.row(r));
    cat_emb.lookup_into(e.category, f.category.row(r));
    if (full) {
      item_emb.lookup_into(e.item, f.item.row(r));
      shop_emb.lookup_into(e.shop, f.shop.row(r));
    }
    for (std::size_t t = 0; t < e.behaviors.size(); ++t) {
      btable.lookup_into(e.behaviors[t], f.behaviors.row(f.offsets[r] + t));
    }
  }

  const auto& target = full ? f.item : f.category;
  nn::BasicMatrix<T> pooled = pooler.forward(f.behaviors, f.offsets, target, f.pool_cache);

  f.head_input.reset(f.n, head_input_dim());
  std::size_t col = 0;
  nn::set_columns(f.head_input, col, f.user);
  col += config_.user_dim;
  if (full) {
    nn::set_columns(f.head_input, col, f.item);
    col += fd;
    nn::set_columns(f.head_input, col, f.shop);
    col += fd;
  }
  nn::set_columns(f.head_input, col, f.category);
  col += fd;
  nn::set_columns(f.head_input, col, pooled);

  f.rows = rows;
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    if (rows[t].empty()) continue;
    nn::BasicMatrix<T> x(rows[t].size(), f.head_input.cols());
    for (std::size_t k = 0; k < rows[t].size(); ++k) {
      const std::size_t r = rows[t][k];
      if (r >= f.n) throw ShapeError("task row index out of range");
      std::copy(f.head_input.row(r).begin(), f.head_input.row(r).end(), x.row(k).begin());
    }
    f.traces[t] = heads[t].forward(x);
  }
  return f;
}

template <class T>
typename ExtractorModel<T>::Forward ExtractorModel<T>::forward_all(
    std::span<const Example* const> batch) const {
  TaskRows rows;
  for (auto& r : rows) {
    r.resize(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) r[k] = k;
  }
  return forward(batch, rows);
}

template <class T>
std::vector<T> ExtractorModel<T>::logits(const Forward& f, Task task) const {
  const auto t = static_cast<std::size_t>(task);
  if (t >= kNumTasks) throw InvalidArgument("unknown task index");
  std::vector<T> out;
  if (f.rows[t].empty()) return out;
  const auto& o = f.traces[t].logits();
  out.resize(o.rows());
  for (std::size_t k = 0; k < o.rows(); ++k) out[k] = o(k, 1) - o(k, 0);
  return out;
}

template <class T>
void ExtractorModel<T>::backward(const Forward& f,
                                 const std::array<std::vector<T>, kNumTasks>& dlogits) {
  const std::size_t fd = config_.feature_dim;
  const bool full = config_.variant == Variant::kFull;
  nn::BasicMatrix<T> dx(f.n, head_input_dim());
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    if (f.rows[t].empty()) continue;
    if (dlogits[t].size() != f.rows[t].size()) {
      throw ShapeError("extractor backward: gradient count mismatch for task " +
                       std::string(task_name(static_cast<Task>(t))));
    }
    nn::BasicMatrix<T> dout(f.rows[t].size(), 2);
    for (std::size_t k = 0; k < dlogits[t].size(); ++k) {
      dout(k, 0) = -dlogits[t][k];
      dout(k, 1) = dlogits[t][k];
    }
    const auto dxt = heads[t].backward(f.traces[t], dout);
    for (std::size_t k = 0; k < f.rows[t].size(); ++k) {
      auto dst = dx.row(f.rows[t][k]);
      auto src = dxt.row(k);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }

  std::size_t col = 0;
  const auto du = nn::get_columns(dx, col, config_.user_dim);
  col += config_.user_dim;
  nn::BasicMatrix<T> di, ds;
  if (full) {
    di = nn::get_columns(dx, col, fd);
    col += fd;
    ds = nn::get_columns(dx, col, fd);
    col += fd;
  }
  const auto dc = nn::get_columns(dx, col, fd);
  col += fd;
  const auto dpooled = nn::get_columns(dx, col, fd);

  const auto& target = full ? f.item : f.category;
  nn::BasicMatrix<T> dbeh, dtarget;
  pooler.backward(f.pool_cache, f.behaviors, f.offsets, target, dpooled, dbeh, dtarget);

  auto& btable = behavior_table();
  for (std::size_t r = 0; r < f.n; ++r) {
    user_emb.scatter_grad(f.user_ids[r], du.row(r));
    auto gc = dc.row(r);
    if (full) {
      item_emb.scatter_grad(f.item_ids[r], di.row(r));
      shop_emb.scatter_grad(f.shop_ids[r], ds.row(r));
      // The target of attention is the item embedding.
      auto gi = dtarget.row(r);
      item_emb.scatter_grad(f.item_ids[r], gi);
    } else {
      // The target of attention is the category embedding.
      std::vector<T> sum(gc.begin(), gc.end());
      auto gt = dtarget.row(r);
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += gt[k];
      cat_emb.scatter_grad(f.category_ids[r], sum);
      continue;
    }
    cat_emb.scatter_grad(f.category_ids[r], gc);
  }
  for (std::size_t t = 0; t < f.behavior_ids.size(); ++t) {
    btable.scatter_grad(f.behavior_ids[t], dbeh.row(t));
  }
}

template <class T>
T ExtractorModel<T>::score(const Example& e, Task task) const {
  const Example* one[] = {&e};
  TaskRows rows;
  rows[static_cast<std::size_t>(task)] = {0};
  const auto f = forward(one, rows);
  return logits(f, task).at(0);
}

template <class T>
nn::BasicMatrix<T> ExtractorModel<T>::extract(std::span<const Example* const> batch) const {
  const auto f = forward_all(batch);
  nn::BasicMatrix<T> out(batch.size(), knowledge_dim());
  std::size_t col = 0;
  nn::set_columns(out, col, f.user);
  col += config_.user_dim;
  if (config_.variant == Variant::kFull) {
    nn::set_columns(out, col, f.item);
    col += config_.feature_dim;
    nn::set_columns(out, col, f.shop);
    col += config_.feature_dim;
    nn::set_columns(out, col, f.category);
    col += config_.feature_dim;
  }
  const std::size_t second_last = config_.head_dims.size() - 1;
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    nn::set_columns(out, col, f.traces[t].h(second_last));
    col += interaction_dim();
  }
  return out;
}

template <class T>
KnowledgeVector ExtractorModel<T>::extract_one(const Example& e) const {
  const Example* one[] = {&e};
  const auto m = extract(one);
  auto row = m.row(0);
  KnowledgeVector k;
  std::size_t col = 0;
  auto take = [&](std::size_t n) {
    std::vector<float> v(n);
    for (std::size_t j = 0; j < n; ++j) v[j] = static_cast<float>(row[col + j]);
    col += n;
    return v;
  };
  k.k_u = take(config_.user_dim);
  k.k_i = take(item_knowledge_dim());
  for (auto& ui : k.k_ui) ui = take(interaction_dim());
  return k;
}

template <class T>
void ExtractorModel<T>::collect_params(std::vector<nn::Param<T>*>& out) {
  out.push_back(&user_emb.table);
  if (config_.variant == Variant::kFull) {
    out.push_back(&item_emb.table);
    out.push_back(&shop_emb.table);
  }
  out.push_back(&cat_emb.table);
  pooler.collect_params(out);
  for (auto& h : heads) h.collect_params(out);
}

template <class T>
std::vector<nn::Param<T>*> ExtractorModel<T>::params() {
  std::vector<nn::Param<T>*> out;
  collect_params(out);
  return out;
}

template <class T>
void ExtractorModel<T>::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

template class ExtractorModel<float>;
template class ExtractorModel<double>;

nn::Checkpoint extractor_checkpoint(ExtractorModel<float>& model, const nn::Adam* adam,
                                    std::int64_t cursor_day) {
  nn::Checkpoint c;
  c.kind = "extractor";
  c.config = model.config().to_text();
  c.cursor_day = cursor_day;
  c.adam_step = adam ? adam->step_count() : 0;
  nn::store_params(c, model.params(), adam);
  return c;
}

ExtractorModel<float> load_extractor(const nn::Checkpoint& ckpt, nn::Adam* adam) {
  if (ckpt.kind != "extractor") {
    throw ManifestError("checkpoint kind '" + ckpt.kind + "' is not an extractor");
  }
  ExtractorModel<float> m(ExtractorConfig::from_text(ckpt.config));
  nn::restore_params(ckpt, m.params(), adam);
  return m;
}

}  // namespace keep::extractor
