// One PASS/FAIL line per acceptance criterion. Arguments select criteria
// (e.g. `acceptance 1 2 7`); with none, all nine run. Exit code is the
// number of failed criteria.
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "keep/data/generator.hpp"
#include "keep/extractor/losses.hpp"
#include "keep/extractor/model.hpp"
#include "keep/extractor/pretrain.hpp"
#include "keep/gkc/net.hpp"
#include "keep/gkc/protocol.hpp"
#include "keep/gkc/store.hpp"
#include "keep/harness/experiment.hpp"
#include "keep/harness/gauc.hpp"
#include "keep/harness/online.hpp"
#include "keep/nn/checkpoint.hpp"
#include "keep/plug/downstream.hpp"
#include "keep/serving/snapshot.hpp"
#include "keep/serving/two_tower.hpp"
#include "support.hpp"

namespace {

using namespace keep;
using testing::Rng;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// ---------------------------------------------------------------- 1
constexpr double kDelta = 1e-3;
constexpr double kGradTol = 1e-3;
// Gradients below this magnitude are compared absolutely (see fd_check).
constexpr double kGradFloor = 1e-4;

using testing::Probe;

std::vector<Probe> probes_of(std::vector<nn::Param<double>*> params) {
  return testing::probes_from(params);
}

double bce_sum(const std::vector<double>& logits, const std::vector<double>& labels) {
  return extractor::pointwise_loss(logits, labels);
}

std::vector<double> bce_grad(const std::vector<double>& logits,
                             const std::vector<double>& labels) {
  std::vector<double> g(logits.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = extractor::pointwise_grad(logits[k], labels[k]);
  return g;
}

std::vector<double> random_labels(Rng& rng, std::size_t n) {
  std::vector<double> y(n);
  for (auto& v : y) v = testing::uniform(rng, 0, 1) < 0.4 ? 1.0 : 0.0;
  return y;
}

struct GradModel {
  std::string name;
  std::size_t params = 0;
  testing::GradReport report;
};

GradModel grad_dense(std::uint64_t seed) {
  Rng rng(seed);
  nn::DenseLayer<double> layer("dense", 6, 5, nn::Activation::kRelu);
  nn::Rng init(seed);
  nn::init_glorot(layer.weight.value, init);
  layer.bias.value = testing::random_matrix<double>(rng, 1, 5, 0.1);
  auto x = testing::random_matrix<double>(rng, 7, 6);
  const auto w = testing::random_matrix<double>(rng, 7, 5);
  auto loss = [&] {
    nn::BasicMatrix<double> y;
    layer.forward(x, y);
    double s = 0;
    for (std::size_t k = 0; k < y.size(); ++k) s += y.data()[k] * w.data()[k];
    return s;
  };
  nn::BasicMatrix<double> y, dx;
  layer.forward(x, y);
  layer.weight.zero_grad();
  layer.bias.zero_grad();
  layer.backward(x, y, w, &dx);
  std::vector<Probe> probes = {{"weight", &layer.weight.value, layer.weight.grad},
                               {"bias", &layer.bias.value, layer.bias.grad},
                               {"x", &x, dx}};
  return {"dense relu layer", 35, testing::fd_check(probes, loss, kDelta, kGradTol, kGradFloor)};
}

// An extractor task head on its own: differenced logit, pointwise loss.
GradModel grad_head(std::uint64_t seed) {
  Rng rng(seed);
  nn::MlpStack<double> head("head", 12, {16, 8, 4, 2});
  nn::Rng init(seed);
  head.init(init);
  {
    std::vector<nn::Param<double>*> ps;
    head.collect_params(ps);
    testing::spread_params(ps, rng);
  }
  auto x = testing::random_matrix<double>(rng, 9, 12);
  const auto y = random_labels(rng, 9);
  auto logits_of = [&](const nn::MlpTrace<double>& t) {
    std::vector<double> s(9);
    for (std::size_t r = 0; r < 9; ++r) s[r] = t.logits()(r, 1) - t.logits()(r, 0);
    return s;
  };
  auto loss = [&] { return bce_sum(logits_of(head.forward(x)), y); };
  std::vector<nn::Param<double>*> params;
  head.collect_params(params);
  for (auto* p : params) p->zero_grad();
  const auto trace = head.forward(x);
  const auto g = bce_grad(logits_of(trace), y);
  nn::BasicMatrix<double> up(9, 2);
  for (std::size_t r = 0; r < 9; ++r) {
    up(r, 0) = -g[r];
    up(r, 1) = g[r];
  }
  const auto dx = head.backward(trace, up);
  auto probes = probes_of(params);
  probes.push_back({"x", &x, dx});
  std::size_t n = 0;
  for (auto* p : params) n += p->value.size();
  return {"extractor head mlp", n, testing::fd_check(probes, loss, kDelta, kGradTol, kGradFloor)};
}

GradModel grad_injection(std::uint64_t seed) {
  Rng rng(seed);
  nn::MlpStack<double> mlp("mlp", 10, {12, 8, 6, 1});
  nn::Rng init(seed);
  mlp.init(init);
  {
    std::vector<nn::Param<double>*> ps;
    mlp.collect_params(ps);
    testing::spread_params(ps, rng);
  }
  const auto x = testing::random_matrix<double>(rng, 8, 10);
  auto addend = testing::random_matrix<double>(rng, 8, 8, 0.5);
  const auto y = random_labels(rng, 8);
  auto logits_of = [](const nn::MlpTrace<double>& t) {
    return std::vector<double>(t.logits().data().begin(), t.logits().data().end());
  };
  auto loss = [&] { return bce_sum(logits_of(mlp.forward(x, 2, addend)), y); };
  std::vector<nn::Param<double>*> params;
  mlp.collect_params(params);
  for (auto* p : params) p->zero_grad();
  const auto trace = mlp.forward(x, 2, addend);
  const auto g = bce_grad(logits_of(trace), y);
  nn::BasicMatrix<double> up(8, 1);
  std::copy(g.begin(), g.end(), up.data().begin());
  nn::BasicMatrix<double> dadd;
  mlp.backward(trace, up, &dadd);
  auto probes = probes_of(params);
  probes.push_back({"addend", &addend, dadd});
  std::size_t n = 0;
  for (auto* p : params) n += p->value.size();
  return {"mlp with injected addend", n,
          testing::fd_check(probes, loss, kDelta, kGradTol, kGradFloor)};
}

GradModel grad_pooler(std::uint64_t seed) {
  Rng rng(seed);
  nn::AttentionPooler<double> pooler("att", 5, 7);
  nn::Rng init(seed);
  pooler.init(init);
  {
    std::vector<nn::Param<double>*> ps;
    pooler.collect_params(ps);
    testing::spread_params(ps, rng);
  }
  const std::vector<std::size_t> offsets = {0, 3, 3, 7, 8};  // record 1 is empty
  auto behaviors = testing::random_matrix<double>(rng, 8, 5);
  auto targets = testing::random_matrix<double>(rng, 4, 5);
  const auto w = testing::random_matrix<double>(rng, 4, 5);
  auto loss = [&] {
    typename nn::AttentionPooler<double>::Cache c;
    const auto p = pooler.forward(behaviors, offsets, targets, c);
    double s = 0;
    for (std::size_t k = 0; k < p.size(); ++k) s += p.data()[k] * w.data()[k];
    return s;
  };
  std::vector<nn::Param<double>*> params;
  pooler.collect_params(params);
  for (auto* p : params) p->zero_grad();
  typename nn::AttentionPooler<double>::Cache cache;
  pooler.forward(behaviors, offsets, targets, cache);
  nn::BasicMatrix<double> db, dt;
  pooler.backward(cache, behaviors, offsets, targets, w, db, dt);
  auto probes = probes_of(params);
  probes.push_back({"behaviors", &behaviors, db});
  probes.push_back({"targets", &targets, dt});
  std::size_t n = 0;
  for (auto* p : params) n += p->value.size();
  return {"attention pooler", n, testing::fd_check(probes, loss, kDelta, kGradTol, kGradFloor)};
}

extractor::ExtractorConfig small_extractor(extractor::Variant v, std::uint64_t seed) {
  extractor::ExtractorConfig c;
  c.variant = v;
  c.n_users = 15;
  c.n_items = 25;
  c.n_shops = 7;
  c.n_categories = 5;
  c.user_dim = 6;
  c.feature_dim = 4;
  c.attention_hidden = 5;
  c.head_dims = {12, 8, 4, 2};
  c.seed = seed;
  return c;
}

// Full joint loss (pointwise + alpha * pairwise over all enabled tasks).
GradModel grad_extractor(const std::string& name, extractor::Variant v, std::uint64_t seed,
                         std::array<bool, 3> tasks, double alpha) {
  Rng rng(seed);
  extractor::ExtractorModel<double> model(small_extractor(v, seed));
  testing::spread_params(model.params(), rng);
  testing::Vocab vocab{15, 25, 7, 5};
  auto examples = testing::random_examples(rng, 14, vocab, 4, 3, 0.5);
  if (v == extractor::Variant::kDegenerated) {
    for (auto& e : examples) {
      for (auto& b : e.behaviors) b %= vocab.categories;
    }
  }
  extractor::SessionIndex sessions;
  for (const auto& e : examples) sessions.add(&e);
  extractor::PretrainConfig pc;
  pc.alpha = alpha;
  pc.tasks = tasks;
  pc.triplet_cap = 2;
  pc.seed = seed;
  const auto ptrs = testing::pointers(examples);
  const auto batch = extractor::assemble_joint_batch(ptrs, &sessions, pc);
  auto loss = [&] { return extractor::joint_loss(model, batch, alpha, false).joint; };
  model.zero_grad();
  extractor::joint_loss(model, batch, alpha, true);
  auto params = model.params();
  auto probes = probes_of(params);
  std::size_t n = 0;
  for (auto* p : params) n += p->value.size();
  auto pattern = [&] {
    const auto f = model.forward(batch.examples, batch.rows);
    std::vector<bool> out;
    for (const auto& t : f.traces) testing::relu_pattern(t, out);
    testing::relu_pattern(f.pool_cache.trace, out);
    return out;
  };
  return {name, n, testing::fd_check(probes, loss, kDelta, kGradTol, kGradFloor, pattern)};
}

plug::DownstreamConfig small_downstream(std::vector<std::size_t> dims, std::size_t plug_layer,
                                        std::uint64_t seed) {
  plug::DownstreamConfig c;
  c.n_items = 25;
  c.n_shops = 7;
  c.n_categories = 5;
  c.feature_dim = 4;
  c.attention_hidden = 5;
  c.mlp_dims = std::move(dims);
  c.plug_layer = plug_layer;
  c.seed = seed;
  return c;
}

// Downstream click model, optionally with a plug whose final layer is
// randomized so every plug weight carries gradient.
GradModel grad_downstream(const std::string& name, std::vector<std::size_t> dims,
                          std::size_t plug_layer, std::size_t k_dim, std::uint64_t seed) {
  Rng rng(seed);
  const auto cfg = small_downstream(dims, plug_layer, seed);
  plug::DownstreamModel<double> model(cfg);
  testing::spread_params(model.params(), rng);
  std::optional<plug::PlugInNetwork<double>> plug;
  nn::BasicMatrix<double> knowledge;
  const auto examples = testing::random_examples(rng, 10, testing::Vocab{15, 25, 7, 5});
  const auto ptrs = testing::pointers(examples);
  if (k_dim > 0) {
    plug.emplace(k_dim, model.plug_target_dim(), cfg.resolved_plug_layer(), seed);
    auto& last = plug->proj.layer(plug->proj.depth() - 1);
    nn::Rng init(seed + 1);
    nn::init_glorot(last.weight.value, init);
    last.bias.value = testing::random_matrix<double>(rng, 1, last.bias.value.cols(), 0.1);
    knowledge = testing::random_matrix<double>(rng, 10, k_dim);
  }
  const auto* kp = plug ? &knowledge : nullptr;
  const auto* pp = plug ? &*plug : nullptr;
  const auto y = random_labels(rng, 10);
  auto loss = [&] { return bce_sum(model.logits(model.forward(ptrs, kp, pp)), y); };
  auto params = model.params();
  if (plug) plug->collect_params(params);
  for (auto* p : params) p->zero_grad();
  const auto f = model.forward(ptrs, kp, pp);
  const auto g = bce_grad(model.logits(f), y);
  model.backward(f, g, plug ? &*plug : nullptr);
  auto probes = probes_of(params);
  std::size_t n = 0;
  for (auto* p : params) n += p->value.size();
  auto pattern = [&] {
    const auto f = model.forward(ptrs, kp, pp);
    std::vector<bool> out;
    testing::relu_pattern(f.trace, out);
    testing::relu_pattern(f.plug_trace, out);
    testing::relu_pattern(f.pool_cache.trace, out);
    return out;
  };
  return {name, n, testing::fd_check(probes, loss, kDelta, kGradTol, kGradFloor, pattern)};
}

GradModel grad_two_tower(std::uint64_t seed) {
  Rng rng(seed);
  serving::TwoTowerConfig c;
  c.n_users = 15;
  c.n_items = 25;
  c.n_shops = 7;
  c.n_categories = 5;
  c.user_dim = 6;
  c.feature_dim = 4;
  c.hidden = 8;
  c.tower_dim = 5;
  c.seed = seed;
  serving::TwoTower<double> model(c);
  testing::spread_params(model.params(), rng);
  const auto examples = testing::random_examples(rng, 10, testing::Vocab{15, 25, 7, 5});
  const auto ptrs = testing::pointers(examples);
  const auto y = random_labels(rng, 10);
  auto loss = [&] { return bce_sum(model.logits(model.forward(ptrs)), y); };
  model.zero_grad();
  const auto f = model.forward(ptrs);
  model.backward(f, bce_grad(model.logits(f), y));
  auto params = model.params();
  auto probes = probes_of(params);
  std::size_t n = 0;
  for (auto* p : params) n += p->value.size();
  return {"two-tower", n, testing::fd_check(probes, loss, kDelta, kGradTol, kGradFloor)};
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::vector<GradModel> models;
  models.push_back(grad_dense(101));
  models.push_back(grad_head(102));
  models.push_back(grad_injection(103));
  models.push_back(grad_pooler(104));
  models.push_back(grad_extractor("extractor full, all tasks", extractor::Variant::kFull, 105,
                                  {true, true, true}, 0.25));
  models.push_back(grad_extractor("extractor full, click only, alpha 1",
                                  extractor::Variant::kFull, 106, {true, false, false}, 1.0));
  models.push_back(grad_extractor("extractor degenerated", extractor::Variant::kDegenerated, 107,
                                  {true, true, true}, 0.5));
  models.push_back(grad_downstream("downstream unplugged", {12, 8, 1}, 0, 0, 108));
  models.push_back(grad_downstream("downstream plugged at h_1", {12, 8, 6, 1}, 1, 9, 109));
  models.push_back(grad_downstream("downstream plugged at h_2", {10, 8, 6, 1}, 2, 5, 110));
  models.push_back(grad_downstream("downstream plugged at h_3", {10, 8, 6, 1}, 3, 13, 111));
  models.push_back(grad_two_tower(112));
  const double secs = seconds_since(t0);

  bool ok = secs < 60.0;
  std::size_t entries = 0, too_big = 0, kinks = 0;
  double worst = 0;
  std::string worst_where;
  for (const auto& m : models) {
    std::cout << "  grad " << std::left << std::setw(36) << m.name << " params " << std::setw(5)
              << m.params << " max rel err " << fmt(m.report.max_rel, 3)
              << (m.report.kinks ? "  kinks " + std::to_string(m.report.kinks) : "")
              << (m.report.failures ? "  FAIL at " + m.report.worst : "") << "\n";
    ok = ok && m.report.failures == 0 && m.params <= 10000;
    too_big += m.params > 10000;
    entries += m.report.entries;
    kinks += m.report.kinks;
    if (m.report.max_rel > worst) {
      worst = m.report.max_rel;
      worst_where = m.name + ": " + m.report.worst;
    }
  }
  return {ok, std::to_string(models.size()) + " models, " + std::to_string(entries) +
                  " entries (" + std::to_string(kinks) + " at ReLU kinks, rechecked at 1e-6), max rel err " + fmt(worst, 3) + " (" + worst_where + "), " +
                  (too_big ? std::to_string(too_big) + " over 1e4 params, " : "") + fmt(secs, 3) +
                  "s"};
}

// ---------------------------------------------------------------- 2
Outcome criterion2() {
  using namespace extractor;
  bool ok = true;
  std::ostringstream d;
  for (double s : {-3.0, 0.0, 0.7, 12.0}) {
    const LogitPair p{s, s};
    const double v = pairwise_loss(std::span<const LogitPair>(&p, 1));
    ok = ok && std::abs(v - std::log(2.0)) <= 1e-6;
  }
  const LogitPair far{10.0, 0.0};
  const double v10 = pairwise_loss(std::span<const LogitPair>(&far, 1));
  ok = ok && std::abs(v10 - 4.5399e-5) <= 1e-8;
  d << "pairwise(10,0)=" << fmt(v10, 8);

  Rng rng(2);
  std::size_t hybrid_bad = 0;
  for (int k = 0; k < 1000; ++k) {
    const double p = testing::uniform(rng, 0, 10), q = testing::uniform(rng, 0, 10),
                 a = testing::uniform(rng, 0, 2);
    if (hybrid_loss(p, q, a) != p + a * q) ++hybrid_bad;
  }
  ok = ok && hybrid_bad == 0;

  const double z = 0.0, one = 1.0;
  const double pw = pointwise_loss(std::span<const double>(&z, 1), std::span<const double>(&one, 1));
  ok = ok && std::abs(pw - std::log(2.0)) <= 1e-6;
  d << ", pointwise(0,1)=" << fmt(pw, 8) << ", hybrid mismatches " << hybrid_bad << "/1000";
  return {ok, d.str()};
}

// ---------------------------------------------------------------- 3
Outcome criterion3() {
  Rng rng(3);
  double worst = 0;
  std::size_t instances = 0, nan_mismatch = 0;
  for (int it = 0; it < 100; ++it) {
    std::vector<harness::ScoredImpression> rows;
    const auto users = testing::pick(rng, 1, 10);
    for (std::size_t u = 0; u < users; ++u) {
      const auto n = testing::pick(rng, 1, 20);
      const double pos_rate = testing::uniform(rng, 0.1, 0.9);
      for (std::size_t k = 0; k < n; ++k) {
        // Coarse scores so ties are common.
        const double s = static_cast<double>(testing::pick(rng, 0, 6)) / 6.0;
        rows.push_back({u * 7 + 3, s, static_cast<std::uint8_t>(testing::uniform(rng, 0, 1) < pos_rate)});
      }
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    bool any = false;
    const double want = testing::gauc_oracle(rows, &any);
    const auto got = harness::gauc(rows);
    ++instances;
    if (any == got.empty) {
      ++nan_mismatch;
      continue;
    }
    if (any) worst = std::max(worst, std::abs(want - got.gauc));
  }
  // User A: 2 impressions ranked perfectly. User B: 6 impressions, all tied.
  std::vector<harness::ScoredImpression> ex = {
      {1, 0.9, 1}, {1, 0.1, 0}, {2, 0.5, 1}, {2, 0.5, 0},
      {2, 0.5, 1}, {2, 0.5, 0}, {2, 0.5, 1}, {2, 0.5, 0},
  };
  const double worked = harness::gauc(ex).gauc;
  const bool ok = worst <= 1e-9 && nan_mismatch == 0 && worked == 0.625;
  return {ok, std::to_string(instances) + " instances, max |diff| " + fmt(worst, 3) +
                  ", worked example " + fmt(worked, 17)};
}

// ---------------------------------------------------------------- 4
// Reference: unplugged trace up to h_m, then layer m+1 as one dense layer
// over [h_m ; z] with block weights [W ; W_p W] and bias b + b_p W, where z
// is the plug's hidden activation. Everything in double with plain loops.
std::vector<double> concat_model_logits(const plug::DownstreamModel<float>& model,
                                        const plug::PlugInNetwork<float>& plug,
                                        const nn::MlpTrace<float>& base,
                                        const nn::Matrix& knowledge) {
  const std::size_t m = plug.plug_layer();
  const std::size_t n = knowledge.rows();
  const auto& hidden = plug.proj.layer(0);
  const auto& out = plug.proj.layer(1);
  const auto& next = model.mlp.layer(m);
  const std::size_t hm = next.in_dim(), zd = hidden.out_dim(), od = next.out_dim();

  // Block weight (hm + zd) x od and folded bias.
  std::vector<double> wcat((hm + zd) * od, 0.0), bcat(od, 0.0);
  for (std::size_t r = 0; r < hm; ++r) {
    for (std::size_t c = 0; c < od; ++c) wcat[r * od + c] = next.weight.value(r, c);
  }
  for (std::size_t r = 0; r < zd; ++r) {
    for (std::size_t c = 0; c < od; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < hm; ++j) s += double(out.weight.value(r, j)) * next.weight.value(j, c);
      wcat[(hm + r) * od + c] = s;
    }
  }
  for (std::size_t c = 0; c < od; ++c) {
    double s = next.bias.value(0, c);
    for (std::size_t j = 0; j < hm; ++j) s += double(out.bias.value(0, j)) * next.weight.value(j, c);
    bcat[c] = s;
  }

  std::vector<double> logits(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> in(hm + zd);
    for (std::size_t j = 0; j < hm; ++j) in[j] = base.h(m)(r, j);
    for (std::size_t j = 0; j < zd; ++j) {
      double s = hidden.bias.value(0, j);
      for (std::size_t k = 0; k < knowledge.cols(); ++k) s += double(knowledge(r, k)) * hidden.weight.value(k, j);
      in[hm + j] = std::max(0.0, s);
    }
    std::vector<double> h(od);
    for (std::size_t c = 0; c < od; ++c) {
      double s = bcat[c];
      for (std::size_t j = 0; j < in.size(); ++j) s += in[j] * wcat[j * od + c];
      h[c] = next.activation == nn::Activation::kRelu ? std::max(0.0, s) : s;
    }
    for (std::size_t l = m + 1; l < model.mlp.depth(); ++l) {
      const auto& layer = model.mlp.layer(l);
      std::vector<double> o(layer.out_dim());
      for (std::size_t c = 0; c < o.size(); ++c) {
        double s = layer.bias.value(0, c);
        for (std::size_t j = 0; j < h.size(); ++j) s += h[j] * layer.weight.value(j, c);
        o[c] = layer.activation == nn::Activation::kRelu ? std::max(0.0, s) : s;
      }
      h = std::move(o);
    }
    logits[r] = h[0];
  }
  return logits;
}

Outcome criterion4() {
  Rng rng(4);
  double worst = 0;
  std::size_t bitwise_bad = 0;
  for (int it = 0; it < 20; ++it) {
    const std::size_t depth = testing::pick(rng, 2, 4);
    std::vector<std::size_t> dims;
    for (std::size_t l = 0; l + 1 < depth; ++l) dims.push_back(testing::pick(rng, 4, 24));
    dims.push_back(1);
    const std::size_t m = testing::pick(rng, 1, depth - 1);
    const std::size_t kd = testing::pick(rng, 2, 30);
    auto cfg = small_downstream(dims, m, 1000 + it);
    cfg.feature_dim = testing::pick(rng, 3, 8);
    plug::DownstreamModel<float> model(cfg);
    plug::PlugInNetwork<float> plug(kd, model.plug_target_dim(), m, 2000 + it);

    const auto examples = testing::random_examples(rng, 100, testing::Vocab{15, 25, 7, 5}, 6);
    const auto ptrs = testing::pointers(examples);
    const auto knowledge = testing::random_matrix<float>(rng, 100, kd, 2.0);

    // Fresh plug: final layer is zero, so outputs must not move at all.
    const auto plain = model.logits(model.forward(ptrs, nullptr, nullptr));
    const auto fresh = model.logits(model.forward(ptrs, &knowledge, &plug));
    if (std::memcmp(plain.data(), fresh.data(), plain.size() * sizeof(float)) != 0) ++bitwise_bad;

    auto& last = plug.proj.layer(1);
    nn::Rng init(3000 + it);
    nn::init_glorot(last.weight.value, init);
    last.bias.value = testing::random_matrix<float>(rng, 1, last.bias.value.cols(), 0.2);

    const auto base = model.forward(ptrs, nullptr, nullptr);
    const auto got = model.logits(model.forward(ptrs, &knowledge, &plug));
    const auto want = concat_model_logits(model, plug, base.trace, knowledge);
    for (std::size_t r = 0; r < want.size(); ++r) {
      worst = std::max(worst, std::abs(double(got[r]) - want[r]));
    }
  }
  return {worst <= 1e-5 && bitwise_bad == 0,
          "20 models x 100 inputs, max |plugged - concat| " + fmt(worst, 3) +
              ", zero-final-layer bitwise mismatches " + std::to_string(bitwise_bad)};
}

// ---------------------------------------------------------------- 5
data::GeneratorConfig small_world() {
  data::GeneratorConfig g;
  g.n_users = 300;
  g.n_items = 400;
  g.n_categories = 10;
  g.n_shops = 40;
  g.n_days = 8;
  g.seed = 55;
  return g;
}

Outcome criterion5() {
  const auto logs = data::generate(small_world());
  std::vector<std::string> failures;

  // Downstream online loop, plugged, days 5-6 in one session vs. two.
  {
    Rng rng(5);
    harness::OnlineConfig oc;
    oc.model = small_downstream({16, 8, 1}, 1, 5);
    oc.model.n_items = 400;
    oc.model.n_shops = 40;
    oc.model.n_categories = 10;
    oc.knowledge_dim = 6;
    oc.batch_size = 32;
    oc.seed = 9;
    const auto knowledge = testing::random_matrix<float>(rng, logs.sub_log.size(), 6);
    const harness::DayKnowledge k = [&](std::int32_t) { return &knowledge; };

    oc.train_days = {5, 6};
    const auto whole = harness::run_online_loop(oc, logs.sub_log, k);
    oc.train_days = {5, 5};
    const auto first = harness::run_online_loop(oc, logs.sub_log, k);
    oc.train_days = {6, 6};
    const auto second = harness::run_online_loop(oc, logs.sub_log, k, &first.checkpoint);
    if (whole.checkpoint != second.checkpoint) failures.push_back("downstream");
  }

  // Extractor pre-training, days 0-1 vs. day 0, checkpoint file round trip, day 1.
  {
    data::Catalog catalog;
    catalog.add_all(logs.super_log);
    auto ec = small_extractor(extractor::Variant::kFull, 5);
    ec.n_users = 300;
    ec.n_items = 400;
    ec.n_shops = 40;
    ec.n_categories = 10;
    extractor::PretrainConfig pc;
    pc.batch_size = 128;
    pc.seed = 7;

    extractor::ExtractorModel<float> a(ec);
    nn::Adam adam_a;
    extractor::pretrain(a, adam_a, logs.super_log, {0, 1}, pc, &catalog);

    extractor::ExtractorModel<float> b(ec);
    nn::Adam adam_b;
    extractor::pretrain(b, adam_b, logs.super_log, {0, 0}, pc, &catalog);
    const auto path = std::filesystem::temp_directory_path() / "keep_acceptance_split.ckpt";
    nn::save_checkpoint(path.string(), extractor::extractor_checkpoint(b, &adam_b, 0));
    nn::Adam adam_c;
    auto c = extractor::load_extractor(nn::load_checkpoint(path.string()), &adam_c);
    std::filesystem::remove(path);
    extractor::pretrain(c, adam_c, logs.super_log, {1, 1}, pc, &catalog);

    const auto ea = nn::encode_checkpoint(extractor::extractor_checkpoint(a, &adam_a, 1));
    const auto ecb = nn::encode_checkpoint(extractor::extractor_checkpoint(c, &adam_c, 1));
    if (ea != ecb) failures.push_back("extractor");
  }

  std::string d = "downstream online loop and extractor pre-training";
  if (!failures.empty()) {
    d += "; differs:";
    for (const auto& f : failures) d += " " + f;
  } else {
    d += " bit-identical";
  }
  return {failures.empty(), d};
}

// ---------------------------------------------------------------- 6 and 9
struct Grid {
  bool ran = false;
  std::string error;
  harness::ExperimentConfig config;
  harness::ExperimentResult result;
  double seconds = 0;
};

Grid& grid() {
  static Grid g = [] {
    Grid out;
    out.config.report_dir = "acceptance_report";
    const auto t0 = Clock::now();
    try {
      out.result = harness::run_experiment(out.config, &std::cerr);
      out.ran = true;
      const auto text = harness::render_report(out.config, out.result);
      std::cout << text;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    out.seconds = seconds_since(t0);
    return out;
  }();
  return g;
}

double arm_mean(const Grid& g, const std::string& name) {
  const auto* a = g.result.find(name);
  return a ? a->mean() : std::nan("");
}

Outcome criterion6() {
  const auto& g = grid();
  if (!g.ran) return {false, "grid failed: " + g.error};
  const double base = arm_mean(g, "base"), keep = arm_mean(g, "keep"),
               merge = arm_mean(g, "sample_merging"), ku = arm_mean(g, "keep[u]"),
               kui = arm_mean(g, "keep[u+i]");
  const bool gain = keep - base >= 0.005;
  const bool beats = keep > merge;
  const bool order = keep >= kui && kui >= ku && ku >= base;
  const bool fast = g.seconds < 900.0;
  std::ostringstream d;
  d << std::fixed << std::setprecision(4) << "5-seed means: base " << base << ", keep " << keep
    << " (gain " << std::showpos << keep - base << std::noshowpos << "), sample merging "
    << merge << ", K_u " << ku << ", K_u+K_i " << kui << "; grid " << std::setprecision(0)
    << g.seconds << "s";
  if (!gain) d << "; gain below 0.005";
  if (!beats) d << "; keep does not beat sample merging";
  if (!order) d << "; ablation order broken";
  if (!fast) d << "; over 15 min";
  return {gain && beats && order && fast, d.str()};
}

Outcome criterion9() {
  const auto& g = grid();
  if (!g.ran) return {false, "grid failed: " + g.error};
  const auto text = harness::render_report(g.config, g.result);
  const bool table = text.find("Serving strategies") != std::string::npos &&
                     text.find("Decomposition+Degeneration") != std::string::npos;
  const double both = arm_mean(g, "keep_decomp_degen"), decomp = arm_mean(g, "keep_decomposed");
  std::ostringstream d;
  d << std::fixed << std::setprecision(4) << "decomposed+degenerated " << both
    << " vs decomposed " << decomp << (table ? ", table emitted" : ", table missing");
  return {table && both >= decomp, d.str()};
}

// ---------------------------------------------------------------- 7
Outcome criterion7() {
  const auto c = serving::count_cache_entries(1000, 500, 3000);
  return {c.pairwise == 500000 && c.decomposed == 4500,
          "(" + std::to_string(c.pairwise) + ", " + std::to_string(c.decomposed) + ")"};
}

// ---------------------------------------------------------------- 8
// Every value of version v is a pure function of (v, key, slot), so a reader
// can check any row against the one snapshot it claims to come from.
float tag(std::uint32_t v, std::uint64_t key, std::uint64_t slot) {
  std::uint64_t h = (std::uint64_t{v} << 48) ^ (key * 0x9E3779B97F4A7C15ULL) ^ (slot * 0xBF58476D1CE4E5B9ULL);
  h ^= h >> 31;
  h *= 0x94D049BB133111EBULL;
  h ^= h >> 29;
  return static_cast<float>(static_cast<double>(h >> 40) / double(1 << 24) - 0.5) + float(v);
}

serving::KnowledgeSnapshot tagged_snapshot(std::uint32_t v, std::uint32_t d, std::uint32_t d_uc,
                                           std::size_t users, std::size_t items,
                                           std::size_t cats) {
  serving::KnowledgeSnapshot s;
  s.version = v;
  s.d = d;
  s.d_uc = d_uc;
  for (std::uint64_t u = 0; u < users; ++u) {
    s.user_keys.push_back(u);
    for (std::uint32_t k = 0; k < d; ++k) s.user_values.push_back(tag(v, u, k));
  }
  for (std::uint64_t i = 0; i < items; ++i) {
    s.item_keys.push_back(i);
    for (std::uint32_t k = 0; k < d; ++k) s.item_values.push_back(tag(v, 1000000 + i, k));
  }
  for (std::uint64_t u = 0; u < users; ++u) {
    for (std::uint32_t c = 0; c < cats; ++c) {
      if ((u + c) % 3 == 0) continue;  // leave some pairs missing
      s.uc_keys.push_back({u, c});
      for (std::uint32_t k = 0; k < d_uc; ++k) s.uc_values.push_back(tag(v, 2000000 + u * 64 + c, k));
    }
  }
  s.finalize();
  return s;
}

std::vector<float> offline_compose(const serving::KnowledgeSnapshot& s, const gkc::Quadruple& q,
                                   std::uint8_t* mask) {
  const std::vector<float> zd(s.d, 0.0f), zuc(s.d_uc, 0.0f);
  auto ku = s.user(q.user), ki = s.item(q.item), kuc = s.uc(q.user, q.category);
  *mask = (ku.empty() ? 0 : gkc::kFoundUser) | (ki.empty() ? 0 : gkc::kFoundItem) |
          (kuc.empty() ? 0 : gkc::kFoundUc);
  return serving::compose_serving_knowledge(ku.empty() ? zd : ku, ki.empty() ? zd : ki,
                                            kuc.empty() ? zuc : kuc);
}

std::string check_retention(const std::filesystem::path& dir) {
  gkc::VersionStore store(5);
  gkc::Server server(store, dir.string(), 0);
  server.start();
  gkc::Client client("127.0.0.1", server.port());
  for (std::uint32_t v = 1; v <= 6; ++v) {
    serving::save_snapshot((dir / ("r" + std::to_string(v) + ".bin")).string(),
                           tagged_snapshot(v, 4, 3, 5, 5, 2));
    client.publish(v, "r" + std::to_string(v) + ".bin");
  }
  std::string err;
  const auto versions = store.versions();
  if (versions != std::vector<std::uint32_t>{2, 3, 4, 5, 6}) err += "retained versions wrong; ";
  for (std::uint32_t v = 1; v <= 6; ++v) {
    const gkc::Quadruple q{1, 1, 1, v};
    const auto r = client.lookup(std::span<const gkc::Quadruple>(&q, 1));
    const bool gone = r.status[0] == gkc::EntryStatus::kVersionGone;
    if (gone != (v == 1)) err += "v" + std::to_string(v) + (gone ? " gone; " : " served; ");
  }
  server.stop();
  return err;
}

std::size_t check_served_equals_offline(const std::filesystem::path& dir, Rng& rng) {
  const auto snap = tagged_snapshot(3, 8, 6, 200, 300, 12);
  serving::save_snapshot((dir / "s3.bin").string(), snap);
  gkc::VersionStore store(5);
  store.publish(serving::load_snapshot((dir / "s3.bin").string()));
  gkc::Server server(store, dir.string(), 0);
  server.start();
  gkc::Client client("127.0.0.1", server.port());
  std::size_t bad = 0;
  for (int b = 0; b < 100; ++b) {
    std::vector<gkc::Quadruple> batch(100);
    for (auto& q : batch) {
      q = {testing::pick(rng, 0, 230), testing::pick(rng, 0, 330),
           static_cast<std::uint32_t>(testing::pick(rng, 0, 13)), 3};
    }
    const auto r = client.lookup(batch);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      std::uint8_t mask = 0;
      const auto want = offline_compose(snap, batch[k], &mask);
      const auto got = r.row(k);
      if (r.status[k] != gkc::EntryStatus::kOk || r.found_mask[k] != mask ||
          got.size() != want.size() ||
          std::memcmp(got.data(), want.data(), want.size() * sizeof(float)) != 0) {
        ++bad;
      }
    }
  }
  server.stop();
  return bad;
}

struct ConcurrencyStats {
  std::size_t lookups = 0;
  std::size_t violations = 0;
  std::size_t gone = 0;
};

ConcurrencyStats check_concurrent_readers(const std::filesystem::path& dir) {
  constexpr std::uint32_t kFirst = 1, kLast = 40;
  constexpr std::size_t kReaders = 8, kPerReader = 12500, kBatch = 50;
  std::vector<serving::KnowledgeSnapshot> snaps;
  for (std::uint32_t v = kFirst; v <= kLast; ++v) {
    snaps.push_back(tagged_snapshot(v, 6, 4, 40, 40, 6));
    serving::save_snapshot((dir / ("c" + std::to_string(v) + ".bin")).string(), snaps.back());
  }
  gkc::VersionStore store(5);
  store.publish(snaps[0]);
  gkc::Server server(store, dir.string(), 0);
  server.start();

  std::atomic<std::uint32_t> newest{kFirst};
  std::atomic<bool> publishing{true};
  std::atomic<std::size_t> violations{0}, gone{0};
  std::vector<std::thread> readers;
  for (std::size_t t = 0; t < kReaders; ++t) {
    readers.emplace_back([&, t] {
      Rng rng(800 + t);
      gkc::Client client("127.0.0.1", server.port());
      for (std::size_t done = 0; done < kPerReader; done += kBatch) {
        const std::uint32_t top = newest.load();
        std::vector<gkc::Quadruple> batch(kBatch);
        for (auto& q : batch) {
          const auto lo = top > 6 ? top - 6 : kFirst;
          q = {testing::pick(rng, 0, 45), testing::pick(rng, 0, 45),
               static_cast<std::uint32_t>(testing::pick(rng, 0, 6)),
               static_cast<std::uint32_t>(testing::pick(rng, lo, top))};
        }
        const auto r = client.lookup(batch);
        // One pinned version list means the served versions form a window:
        // no gone version may sit between two served ones.
        std::uint32_t min_ok = UINT32_MAX, max_ok = 0;
        for (std::size_t k = 0; k < kBatch; ++k) {
          if (r.status[k] == gkc::EntryStatus::kOk) {
            min_ok = std::min(min_ok, batch[k].version);
            max_ok = std::max(max_ok, batch[k].version);
          }
        }
        for (std::size_t k = 0; k < kBatch; ++k) {
          const auto& q = batch[k];
          if (r.status[k] == gkc::EntryStatus::kVersionGone) {
            gone.fetch_add(1);
            bool zero = true;
            for (float x : r.row(k)) zero = zero && x == 0.0f;
            if (!zero || (q.version > min_ok && q.version < max_ok)) violations.fetch_add(1);
            continue;
          }
          std::uint8_t mask = 0;
          const auto want = offline_compose(snaps[q.version - kFirst], q, &mask);
          const auto got = r.row(k);
          if (r.found_mask[k] != mask || got.size() != want.size() ||
              std::memcmp(got.data(), want.data(), want.size() * sizeof(float)) != 0) {
            violations.fetch_add(1);
          }
        }
      }
    });
  }
  std::thread publisher([&] {
    gkc::Client client("127.0.0.1", server.port());
    for (std::uint32_t v = kFirst + 1; v <= kLast; ++v) {
      client.publish(v, "c" + std::to_string(v) + ".bin");
      newest.store(v);
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    publishing = false;
  });
  publisher.join();
  for (auto& t : readers) t.join();
  server.stop();
  return {kReaders * kPerReader, violations.load(), gone.load()};
}

std::string random_bytes(Rng& rng, std::size_t n) {
  std::string s(n, '\0');
  for (auto& c : s) c = static_cast<char>(testing::pick(rng, 0, 255));
  return s;
}

std::size_t check_codec(Rng& rng) {
  std::size_t bad = 0;
  for (int it = 0; it < 10000; ++it) {
    gkc::Frame f;
    switch (it % 4) {
      case 0: {
        std::vector<gkc::Quadruple> q(testing::pick(rng, 0, 20));
        for (auto& x : q) {
          x = {rng(), rng(), static_cast<std::uint32_t>(rng()), static_cast<std::uint32_t>(rng())};
        }
        f = {gkc::FrameType::kLookupRequest, gkc::encode_lookup_request(q)};
        if (gkc::decode_lookup_request(f.payload) != q) ++bad;
        break;
      }
      case 1: {
        gkc::LookupResponse r;
        const auto n = testing::pick(rng, 0, 10);
        r.dim_total = static_cast<std::uint32_t>(testing::pick(rng, 0, 12));
        for (std::size_t k = 0; k < n; ++k) {
          r.status.push_back(static_cast<gkc::EntryStatus>(testing::pick(rng, 0, 1)));
          r.found_mask.push_back(static_cast<std::uint8_t>(testing::pick(rng, 0, 7)));
          for (std::uint32_t d = 0; d < r.dim_total; ++d) {
            r.values.push_back(static_cast<float>(testing::uniform(rng, -1e3, 1e3)));
          }
        }
        f = {gkc::FrameType::kLookupResponse, gkc::encode_lookup_response(r)};
        if (gkc::decode_lookup_response(f.payload) != r) ++bad;
        break;
      }
      case 2: {
        const gkc::PublishNotice p{static_cast<std::uint32_t>(rng()),
                                   random_bytes(rng, testing::pick(rng, 0, 40))};
        f = {gkc::FrameType::kPublishNotice, gkc::encode_publish(p)};
        if (gkc::decode_publish(f.payload) != p) ++bad;
        break;
      }
      default: {
        const gkc::ErrorPayload e{static_cast<gkc::ErrorCode>(testing::pick(rng, 1, 4)),
                                  random_bytes(rng, testing::pick(rng, 0, 60))};
        f = {gkc::FrameType::kError, gkc::encode_error(e)};
        if (gkc::decode_error(f.payload) != e) ++bad;
      }
    }
    const auto bytes = gkc::encode_frame(f);
    const auto back = gkc::decode_frame(bytes);
    if (!(back == f) || gkc::encode_frame(back) != bytes) ++bad;
  }
  return bad;
}

Outcome criterion8() {
  const auto dir = std::filesystem::temp_directory_path() / "keep_acceptance_gkc";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  Rng rng(8);
  const auto retention = check_retention(dir);
  const auto offline_bad = check_served_equals_offline(dir, rng);
  const auto conc = check_concurrent_readers(dir);
  const auto codec_bad = check_codec(rng);
  std::filesystem::remove_all(dir);
  const bool ok = retention.empty() && offline_bad == 0 && conc.violations == 0 && codec_bad == 0;
  return {ok, "(a) " + (retention.empty() ? std::string("v2-6 retained, v1 gone") : retention) +
                  "; (b) 10000 quadruples, " + std::to_string(offline_bad) +
                  " mismatches; (c) " + std::to_string(conc.lookups) + " lookups by 8 readers, " +
                  std::to_string(conc.gone) + " gone, " + std::to_string(conc.violations) +
                  " violations; (d) 10000 frames, " + std::to_string(codec_bad) +
                  " round-trip failures"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int k = 1; k < argc; ++k) wanted.insert(std::atoi(argv[k]));
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", criterion1}, {"loss closed forms", criterion2},
      {"gauc oracle", criterion3},          {"plug-in equivalence", criterion4},
      {"warm-start determinism", criterion5}, {"directional keep effect", criterion6},
      {"cache arithmetic", criterion7},     {"gkc service", criterion8},
      {"serving strategies", criterion9},
  };
  int failed = 0;
  std::vector<std::string> lines;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::ostringstream line;
    line << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[k].first
         << ": " << o.detail;
    std::cout << line.str() << std::endl;
    lines.push_back(line.str());
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l.substr(0, l.find(':')) << "\n";
  return failed;
}
