#include <doctest.h>

#include <cmath>
#include <set>

#include "keep/data/generator.hpp"
#include "keep/error.hpp"
#include "keep/extractor/losses.hpp"
#include "keep/extractor/model.hpp"
#include "keep/extractor/pretrain.hpp"
#include "support.hpp"

using namespace keep;
using namespace keep::extractor;
using keep::testing::Rng;

namespace {

ExtractorConfig small(Variant v = Variant::kFull) {
  ExtractorConfig c;
  c.variant = v;
  c.n_users = 15;
  c.n_items = 25;
  c.n_shops = 7;
  c.n_categories = 5;
  c.user_dim = 6;
  c.feature_dim = 4;
  c.attention_hidden = 5;
  c.head_dims = {12, 8, 4, 2};
  c.seed = 3;
  return c;
}

std::vector<Example> one_session(std::size_t n, std::uint64_t user = 1, std::uint64_t id = 9) {
  Rng rng(n + user);
  auto ex = testing::random_examples(rng, n, testing::Vocab{15, 25, 7, 5});
  for (auto& e : ex) {
    e.user = user;
    e.session = id;
  }
  return ex;
}

}  // namespace

TEST_CASE("loss closed forms and stability") {
  CHECK(softplus(1000.0) == doctest::Approx(1000.0));
  CHECK(softplus(-1000.0) >= 0.0);
  CHECK(softplus(-1000.0) < 1e-300);
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) == 1.0);

  // The clamp keeps a confidently wrong prediction finite.
  const double hi = 100.0, zero = 0.0;
  const double wrong = pointwise_loss({&hi, 1}, {&zero, 1});
  CHECK(wrong == doctest::Approx(-std::log(kProbClamp)).epsilon(1e-6));

  const std::vector<LogitPair> pairs = {{1.0, 0.0}, {0.0, 1.0}};
  CHECK(pairwise_loss(pairs) == doctest::Approx(softplus(-1.0) + softplus(1.0)));
  CHECK(pairwise_grad_pos({3.0, 3.0}) == doctest::Approx(-0.5));
  CHECK(pointwise_grad(0.0, 1.0) == doctest::Approx(-0.5));

  const double bad_label = 0.5;
  CHECK_THROWS(pointwise_loss({&zero, 1}, {&bad_label, 1}));
}

TEST_CASE("loss gradients match finite differences of the closed forms") {
  Rng rng(21);
  for (int k = 0; k < 200; ++k) {
    const double s = testing::uniform(rng, -8, 8), t = testing::uniform(rng, -8, 8);
    const double y = k % 2;
    const double h = 1e-6;
    const double sp = s + h, sm = s - h;
    const double num_point =
        (pointwise_loss({&sp, 1}, {&y, 1}) - pointwise_loss({&sm, 1}, {&y, 1})) / (2 * h);
    CHECK(pointwise_grad(s, y) == doctest::Approx(num_point).epsilon(1e-5));
    const LogitPair up{s + h, t}, down{s - h, t};
    const double num_pair = (pairwise_loss({&up, 1}) - pairwise_loss({&down, 1})) / (2 * h);
    CHECK(pairwise_grad_pos({s, t}) == doctest::Approx(num_pair).epsilon(1e-5));
  }
}

TEST_CASE("task names") {
  CHECK(parse_task("click") == Task::kClick);
  CHECK(parse_task("cv") == Task::kConversion);
  CHECK(parse_task("conversion") == Task::kConversion);
  CHECK(parse_task("cart") == Task::kCart);
  CHECK(task_name(Task::kCart) == "cart");
  CHECK_THROWS_AS(parse_task("buy"), InvalidArgument);
}

TEST_CASE("extractor config text round-trips") {
  auto c = small(Variant::kDegenerated);
  c.hash_mode = nn::HashMode::kIdentity;
  const auto back = ExtractorConfig::from_text(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.variant == Variant::kDegenerated);
  CHECK(back.head_dims == c.head_dims);
  CHECK(ExtractorConfig::production().head_dims ==
        std::vector<std::size_t>{512, 256, 128, 64, 2});
}

TEST_CASE("triplets pair positives with sampled negatives of the same session") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto ex = one_session(10, 2, seed);
    const auto ptrs = testing::pointers(ex);
    for (auto task : kAllTasks) {
      const auto triplets = build_triplets(ptrs, task, 3, seed);
      std::map<std::size_t, std::set<std::size_t>> per_pos;
      for (const auto& t : triplets) {
        CHECK(ex[t.pos].label(task) == 1);
        CHECK(ex[t.neg].label(task) == 0);
        if (task != Task::kClick) CHECK(ex[t.neg].label(Task::kClick) == 1);
        CHECK(per_pos[t.pos].insert(t.neg).second);  // without replacement
      }
      for (const auto& [p, negs] : per_pos) CHECK(negs.size() <= 3);
      CHECK(build_triplets(ptrs, task, 3, seed).size() == triplets.size());
    }
  }
}

TEST_CASE("negatives for one positive do not depend on the other labels") {
  auto ex = one_session(12);
  ex[0].labels = {1, 0, 0};
  const auto before = sample_negatives(testing::pointers(ex), 0, Task::kClick, 2, 5);
  // Relabel another positive: the negative pool is unchanged, so is the sample.
  for (std::size_t k = 1; k < ex.size(); ++k) {
    if (ex[k].labels[0] == 1) {
      ex[k].labels[1] = 1 - ex[k].labels[1];
      break;
    }
  }
  CHECK(sample_negatives(testing::pointers(ex), 0, Task::kClick, 2, 5) == before);
  CHECK(sample_negatives(testing::pointers(ex), 0, Task::kClick, 0, 5).empty());
}

TEST_CASE("build_triplets refuses mixed sessions") {
  auto ex = one_session(4);
  ex[2].session = 77;
  CHECK_THROWS_AS(build_triplets(testing::pointers(ex), Task::kClick, 3, 1), InvalidArgument);
}

TEST_CASE("joint batch rows: click sees all, conversion and cart see clicks") {
  Rng rng(8);
  const auto ex = testing::random_examples(rng, 30, testing::Vocab{15, 25, 7, 5});
  SessionIndex sessions;
  for (const auto& e : ex) sessions.add(&e);
  PretrainConfig pc;
  const auto ptrs = testing::pointers(ex);
  const auto b = assemble_joint_batch(ptrs, &sessions, pc);
  CHECK(b.pointwise_count[0] == ex.size());
  std::size_t clicks = 0;
  for (const auto& e : ex) clicks += e.labels[0];
  CHECK(b.pointwise_count[1] == clicks);
  CHECK(b.pointwise_count[2] == clicks);
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    for (const auto& [p, n] : b.pairs[t]) {
      CHECK(p < b.pointwise_count[t]);
      CHECK(n >= b.pointwise_count[t]);
      const auto* pos = b.examples[b.rows[t][p]];
      const auto* neg = b.examples[b.rows[t][n]];
      CHECK(pos->session == neg->session);
      CHECK(pos->labels[t] == 1);
      CHECK(neg->labels[t] == 0);
    }
  }
  pc.alpha = 0.0;
  const auto pointwise_only = assemble_joint_batch(ptrs, &sessions, pc);
  for (const auto& pairs : pointwise_only.pairs) CHECK(pairs.empty());
  pc.tasks = {true, false, false};
  CHECK(assemble_joint_batch(ptrs, &sessions, pc).rows[1].empty());
}

TEST_CASE("joint loss is the sum of per-task hybrid losses") {
  Rng rng(9);
  ExtractorModel<double> model(small());
  testing::spread_params(model.params(), rng);
  const auto ex = testing::random_examples(rng, 20, testing::Vocab{15, 25, 7, 5});
  SessionIndex sessions;
  for (const auto& e : ex) sessions.add(&e);
  PretrainConfig pc;
  pc.alpha = 0.4;
  const auto b = assemble_joint_batch(testing::pointers(ex), &sessions, pc);
  const auto l = joint_loss(model, b, pc.alpha, false);
  double sum = 0;
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    CHECK(l.total[t] == doctest::Approx(hybrid_loss(l.pointwise[t], l.pairwise[t], 0.4)));
    CHECK(l.triplets[t] == b.pairs[t].size());
    sum += l.total[t];
  }
  CHECK(l.joint == doctest::Approx(sum));

  // Replay the click pointwise term through the public scoring path.
  double point = 0;
  for (const auto& e : ex) {
    const double s = model.score(e, Task::kClick);
    const double y = e.labels[0];
    point += pointwise_loss({&s, 1}, {&y, 1});
  }
  CHECK(l.pointwise[0] == doctest::Approx(point).epsilon(1e-9));
}

TEST_CASE("degenerated extractor ignores every item-side feature") {
  Rng rng(10);
  ExtractorModel<double> model(small(Variant::kDegenerated));
  testing::spread_params(model.params(), rng);
  auto ex = testing::random_examples(rng, 12, testing::Vocab{15, 25, 7, 5});
  for (auto& e : ex) {
    for (auto& b : e.behaviors) b %= 5;
  }
  for (auto e : ex) {
    const auto base = model.extract_one(e).concatenated();
    CHECK(model.extract_one(e).k_i.empty());
    e.item += 11;
    e.shop += 3;
    CHECK(model.extract_one(e).concatenated() == base);
    e.category = (e.category + 1) % 5;
    CHECK(model.extract_one(e).concatenated() != base);
  }
}

TEST_CASE("knowledge layout and batch extraction agree") {
  Rng rng(12);
  for (auto v : {Variant::kFull, Variant::kDegenerated}) {
    ExtractorModel<float> model(small(v));
    testing::spread_params(model.params(), rng);
    const auto ex = testing::random_examples(rng, 7, testing::Vocab{15, 25, 5, 5});
    const auto batch = model.extract(testing::pointers(ex));
    REQUIRE(batch.rows() == ex.size());
    REQUIRE(batch.cols() == model.knowledge_dim());
    CHECK(model.knowledge_dim() ==
          6 + model.item_knowledge_dim() + kNumTasks * model.interaction_dim());
    CHECK(model.interaction_dim() == 4);
    for (std::size_t r = 0; r < ex.size(); ++r) {
      const auto one = model.extract_one(ex[r]);
      CHECK(one.k_u.size() == 6);
      const auto flat = one.concatenated();
      // Eigen picks kernels by batch size, so only float rounding may differ.
      for (std::size_t k = 0; k < flat.size(); ++k) CHECK(flat[k] == doctest::Approx(batch(r, k)).epsilon(1e-5));
    }
  }
}

TEST_CASE("pre-training lowers the loss on a small synthetic log") {
  data::GeneratorConfig g;
  g.n_users = 150;
  g.n_items = 120;
  g.n_categories = 6;
  g.n_shops = 15;
  const auto logs = data::generate(g);
  auto cfg = small();
  cfg.n_users = 150;
  cfg.n_items = 120;
  cfg.n_shops = 15;
  cfg.n_categories = 6;
  ExtractorModel<float> model(cfg);
  nn::Adam adam(nn::AdamConfig{0.005});
  PretrainConfig pc;
  pc.batch_size = 64;
  const auto progress = pretrain(model, adam, logs.super_log, {0, 4}, pc);
  CHECK(progress.steps > 20);
  CHECK(progress.last_mean_loss < progress.first_mean_loss);
  CHECK(adam.step_count() == progress.steps);
  for (auto* p : model.params()) CHECK(p->value.all_finite());
}

TEST_CASE("degenerated pre-training needs a catalog") {
  data::GeneratorConfig g;
  g.n_users = 20;
  g.n_items = 30;
  g.n_categories = 5;
  g.n_shops = 7;
  g.n_days = 1;
  const auto logs = data::generate(g);
  ExtractorModel<float> model(small(Variant::kDegenerated));
  nn::Adam adam;
  CHECK_THROWS_AS(pretrain(model, adam, logs.super_log, {0, 0}, PretrainConfig{}),
                  InvalidArgument);
}
