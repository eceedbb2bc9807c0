#include "keep/plug/downstream.hpp"

#include <cmath>
#include <sstream>

#include "keep/error.hpp"
#include "keep/extractor/losses.hpp"
#include "keep/kv.hpp"

namespace keep::plug {

std::size_t DownstreamConfig::resolved_plug_layer() const {
  if (mlp_dims.size() < 2) throw ShapeError("downstream MLP needs at least two layers");
  const std::size_t m = plug_layer == 0 ? mlp_dims.size() - 1 : plug_layer;
  if (m >= mlp_dims.size()) {
    throw ShapeError("plug layer " + std::to_string(m) + " is not a hidden layer of a " +
                     std::to_string(mlp_dims.size()) + "-layer MLP");
  }
  return m;
}

std::string DownstreamConfig::to_text() const {
  std::ostringstream out;
  out << "n_items = " << n_items << '\n'
      << "n_shops = " << n_shops << '\n'
      << "n_categories = " << n_categories << '\n'
      << "feature_dim = " << feature_dim << '\n'
      << "attention_hidden = " << attention_hidden << '\n'
      << "mlp_dims = ";
  for (std::size_t k = 0; k < mlp_dims.size(); ++k) out << (k ? "," : "") << mlp_dims[k];
  out << '\n'
      << "plug_layer = " << plug_layer << '\n'
      << "hash_mode = " << (hash_mode == nn::HashMode::kModulo ? "modulo" : "identity")
      << '\n'
      << "seed = " << seed << '\n';
  return out.str();
}

DownstreamConfig DownstreamConfig::from_text(std::string_view text) {
  const auto kv = KeyValues::parse(text);
  DownstreamConfig c;
  c.n_items = kv.get_uint("n_items", c.n_items);
  c.n_shops = kv.get_uint("n_shops", c.n_shops);
  c.n_categories = kv.get_uint("n_categories", c.n_categories);
  c.feature_dim = kv.get_uint("feature_dim", c.feature_dim);
  c.attention_hidden = kv.get_uint("attention_hidden", c.attention_hidden);
  c.mlp_dims = kv.get_sizes("mlp_dims", c.mlp_dims);
  c.plug_layer = kv.get_uint("plug_layer", c.plug_layer);
  c.hash_mode = kv.get_string("hash_mode", "modulo") == "identity"
                    ? nn::HashMode::kIdentity
                    : nn::HashMode::kModulo;
  c.seed = kv.get_uint("seed", c.seed);
  return c;
}

template <class T>
PlugInNetwork<T>::PlugInNetwork(std::size_t knowledge_dim, std::size_t target_dim,
                                std::size_t plug_layer, std::uint64_t seed)
    : proj("plug.proj", knowledge_dim, {target_dim, target_dim}), plug_layer_(plug_layer) {
  if (knowledge_dim == 0) throw ShapeError("plug-in network needs a non-empty knowledge vector");
  nn::Rng rng(seed ^ 0x5A17A5E5ULL);
  proj.init(rng);
  zero_final_layer();
}

template <class T>
void PlugInNetwork<T>::zero_final_layer() {
  auto& last = proj.layer(proj.depth() - 1);
  last.weight.value.fill(T{0});
  last.bias.value.fill(T{0});
}

template <class T>
DownstreamModel<T>::DownstreamModel(const DownstreamConfig& config) : config_(config) {
  if (config.mlp_dims.empty() || config.mlp_dims.back() != 1) {
    throw ShapeError("downstream MLP must end in a single logit");
  }
  config.resolved_plug_layer();
  const auto mode = config.hash_mode;
  const auto fd = config.feature_dim;
  item_emb = nn::EmbeddingTable<T>("ds.item_id", config.n_items, fd, mode);
  shop_emb = nn::EmbeddingTable<T>("ds.shop_id", config.n_shops, fd, mode);
  cat_emb = nn::EmbeddingTable<T>("ds.category_id", config.n_categories, fd, mode);
  pooler = nn::AttentionPooler<T>("ds.behavior", fd, config.attention_hidden);
  mlp = nn::MlpStack<T>("ds.mlp", input_dim(), config.mlp_dims);

  nn::Rng rng(config.seed);
  item_emb.init(rng);
  shop_emb.init(rng);
  cat_emb.init(rng);
  pooler.init(rng);
  mlp.init(rng);
}

template <class T>
std::size_t DownstreamModel<T>::plug_target_dim() const {
  return config_.mlp_dims[config_.resolved_plug_layer() - 1];
}

template <class T>
typename DownstreamModel<T>::Forward DownstreamModel<T>::forward(
    std::span<const Example* const> batch, const nn::BasicMatrix<T>* knowledge,
    const PlugInNetwork<T>* plug) const {
  Forward f;
  f.n = batch.size();
  const std::size_t fd = config_.feature_dim;
  f.item.reset(f.n, fd);
  f.shop.reset(f.n, fd);
  f.category.reset(f.n, fd);
  f.offsets.assign(f.n + 1, 0);
  for (std::size_t r = 0; r < f.n; ++r) {
    f.offsets[r + 1] = f.offsets[r] + batch[r]->behaviors.size();
  }
  f.behaviors.reset(f.offsets.back(), fd);
  for (std::size_t r = 0; r < f.n; ++r) {
    const Example& e = *batch[r];
    f.item_ids.push_back(e.item);
    f.shop_ids.push_back(e.shop);
    f.category_ids.push_back(e.category);
    f.behavior_ids.insert(f.behavior_ids.end(), e.behaviors.begin(), e.behaviors.end());
    item_emb.lookup_into(e.item, f.item.row(r));
    shop_emb.lookup_into(e.shop, f.shop.row(r));
    cat_emb.lookup_into(e.category, f.category.row(r));
    for (std::size_t t = 0; t < e.behaviors.size(); ++t) {
      item_emb.lookup_into(e.behaviors[t], f.behaviors.row(f.offsets[r] + t));
    }
  }
  const auto pooled = pooler.forward(f.behaviors, f.offsets, f.item, f.pool_cache);
  f.input.reset(f.n, input_dim());
  nn::set_columns(f.input, 0, f.item);
  nn::set_columns(f.input, fd, f.shop);
  nn::set_columns(f.input, 2 * fd, f.category);
  nn::set_columns(f.input, 3 * fd, pooled);

  if (knowledge != nullptr && plug != nullptr) {
    if (knowledge->rows() != f.n || knowledge->cols() != plug->knowledge_dim()) {
      throw ShapeError("knowledge is " + nn::shape_str(knowledge->rows(), knowledge->cols()) + ", expected " +
                       std::to_string(f.n) + "x" + std::to_string(plug->knowledge_dim()));
    }
    const std::size_t m = plug->plug_layer();
    if (m == 0 || m >= mlp.depth() || plug->output_dim() != config_.mlp_dims[m - 1]) {
      throw ShapeError("plug output width " + std::to_string(plug->output_dim()) +
                       " does not match h_" + std::to_string(m));
    }
    f.plugged = true;
    f.knowledge = *knowledge;
    f.plug_trace = plug->proj.forward(f.knowledge);
    f.trace = mlp.forward(f.input, m, f.plug_trace.logits());
  } else {
    f.trace = mlp.forward(f.input);
  }
  return f;
}

template <class T>
std::vector<T> DownstreamModel<T>::logits(const Forward& f) const {
  const auto& o = f.trace.logits();
  return std::vector<T>(o.data().begin(), o.data().end());
}

template <class T>
std::vector<T> DownstreamModel<T>::predict(std::span<const Example* const> batch,
                                           const nn::BasicMatrix<T>* knowledge,
                                           const PlugInNetwork<T>* plug) const {
  auto s = logits(forward(batch, knowledge, plug));
  for (auto& v : s) v = static_cast<T>(extractor::sigmoid(static_cast<double>(v)));
  return s;
}

template <class T>
void DownstreamModel<T>::backward(const Forward& f, std::span<const T> dlogits,
                                  PlugInNetwork<T>* plug) {
  if (dlogits.size() != f.n) throw ShapeError("downstream backward: gradient count mismatch");
  nn::BasicMatrix<T> up(f.n, 1);
  std::copy(dlogits.begin(), dlogits.end(), up.data().begin());
  nn::BasicMatrix<T> dx;
  if (f.plugged) {
    if (plug == nullptr) throw StateError("plugged forward needs the plug for backward");
    nn::BasicMatrix<T> dadd;
    dx = mlp.backward(f.trace, up, &dadd);
    // The knowledge itself is frozen; only the projection learns.
    plug->proj.backward(f.plug_trace, dadd);
  } else {
    dx = mlp.backward(f.trace, up);
  }
  const std::size_t fd = config_.feature_dim;
  const auto di = nn::get_columns(dx, 0, fd);
  const auto ds = nn::get_columns(dx, fd, fd);
  const auto dc = nn::get_columns(dx, 2 * fd, fd);
  const auto dpooled = nn::get_columns(dx, 3 * fd, fd);
  nn::BasicMatrix<T> dbeh, dtarget;
  pooler.backward(f.pool_cache, f.behaviors, f.offsets, f.item, dpooled, dbeh, dtarget);
  for (std::size_t r = 0; r < f.n; ++r) {
    item_emb.scatter_grad(f.item_ids[r], di.row(r));
    item_emb.scatter_grad(f.item_ids[r], dtarget.row(r));
    shop_emb.scatter_grad(f.shop_ids[r], ds.row(r));
    cat_emb.scatter_grad(f.category_ids[r], dc.row(r));
  }
  for (std::size_t t = 0; t < f.behavior_ids.size(); ++t) {
    item_emb.scatter_grad(f.behavior_ids[t], dbeh.row(t));
  }
}

template <class T>
void DownstreamModel<T>::collect_params(std::vector<nn::Param<T>*>& out) {
  out.push_back(&item_emb.table);
  out.push_back(&shop_emb.table);
  out.push_back(&cat_emb.table);
  pooler.collect_params(out);
  mlp.collect_params(out);
}

template <class T>
std::vector<nn::Param<T>*> DownstreamModel<T>::params() {
  std::vector<nn::Param<T>*> out;
  collect_params(out);
  return out;
}

template class PlugInNetwork<float>;
template class PlugInNetwork<double>;
template class DownstreamModel<float>;
template class DownstreamModel<double>;

Trainer::Trainer(const DownstreamConfig& config, std::size_t knowledge_dim,
                 nn::AdamConfig adam)
    : model_(config), adam_(adam) {
  if (knowledge_dim > 0) {
    plug_ = PlugInNetwork<float>(knowledge_dim, model_.plug_target_dim(),
                                 config.resolved_plug_layer(), config.seed);
    has_plug_ = true;
  }
}

double Trainer::train_step(std::span<const Example* const> batch,
                           const nn::Matrix* knowledge) {
  if (has_plug_ && knowledge == nullptr) {
    throw InvalidArgument("plugged trainer needs knowledge rows");
  }
  auto f = model_.forward(batch, has_plug_ ? knowledge : nullptr, plug());
  const auto s = model_.logits(f);
  std::vector<double> logit(s.begin(), s.end()), label(batch.size());
  std::vector<float> d(s.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    label[k] = batch[k]->label(extractor::Task::kClick);
    d[k] = static_cast<float>(extractor::pointwise_grad(logit[k], label[k]));
  }
  const double loss = extractor::pointwise_loss(logit, label);
  auto ps = params();
  for (auto* p : ps) p->zero_grad();
  model_.backward(f, d, plug());
  adam_.step(ps);
  return loss;
}

std::vector<float> Trainer::predict(std::span<const Example* const> batch,
                                    const nn::Matrix* knowledge) const {
  return model_.predict(batch, has_plug_ ? knowledge : nullptr, plug());
}

std::vector<nn::Param<float>*> Trainer::params() {
  auto out = model_.params();
  if (has_plug_) plug_.collect_params(out);
  return out;
}

nn::Checkpoint Trainer::checkpoint(std::int64_t cursor_day, std::uint32_t knowledge_version,
                                   const std::string& version_tag) {
  nn::Checkpoint c;
  c.kind = "downstream";
  c.config = model_.config().to_text() + "knowledge_dim = " +
             std::to_string(knowledge_dim()) + '\n';
  c.version_tag = version_tag;
  c.cursor_day = cursor_day;
  c.knowledge_version = knowledge_version;
  c.adam_step = adam_.step_count();
  nn::store_params(c, params(), &adam_);
  return c;
}

void Trainer::warm_start(const nn::Checkpoint& ckpt) {
  if (ckpt.kind != "downstream") {
    throw ManifestError("checkpoint kind '" + ckpt.kind + "' is not a downstream model");
  }
  nn::restore_params(ckpt, params(), &adam_, {"plug."});
}

}  // namespace keep::plug
