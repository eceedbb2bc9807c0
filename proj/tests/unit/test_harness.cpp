#include <doctest.h>

#include <cmath>

#include "keep/data/generator.hpp"
#include "keep/error.hpp"
#include "keep/harness/experiment.hpp"
#include "keep/harness/gauc.hpp"
#include "keep/harness/online.hpp"
#include "keep/kv.hpp"
#include "support.hpp"

using namespace keep;
using namespace keep::harness;
using keep::testing::Rng;

namespace {

data::SyntheticLogs tiny_logs() {
  data::GeneratorConfig g;
  g.n_users = 80;
  g.n_items = 60;
  g.n_categories = 5;
  g.n_shops = 9;
  g.n_days = 4;
  g.sub_impressions_per_user_day = 4.0;
  return data::generate(g);
}

OnlineConfig tiny_online(std::size_t knowledge_dim = 0) {
  OnlineConfig c;
  c.model.n_items = 60;
  c.model.n_shops = 9;
  c.model.n_categories = 5;
  c.model.feature_dim = 4;
  c.model.attention_hidden = 4;
  c.model.mlp_dims = {8, 4, 1};
  c.model.plug_layer = 1;
  c.knowledge_dim = knowledge_dim;
  c.batch_size = 16;
  c.train_days = {1, 2};
  return c;
}

}  // namespace

TEST_CASE("plain auc counts pairs with half credit for ties") {
  const std::vector<double> s = {0.9, 0.5, 0.5, 0.1};
  const std::vector<std::uint8_t> y = {1, 1, 0, 0};
  CHECK(auc(s, y) == doctest::Approx((1 + 1 + 0.5 + 1) / 4.0));
  const std::vector<std::uint8_t> ones = {1, 1, 1, 1};
  CHECK(std::isnan(auc(s, ones)));
}

TEST_CASE("activity groups") {
  CHECK(group_of(0) == 0);
  CHECK(group_of(49) == 0);
  CHECK(group_of(50) == 1);
  CHECK(group_of(299) == 2);
  CHECK(group_of(300) == 3);
  CHECK(group_label(0) == "[0,50)");
  CHECK(group_label(3) == "300+");
}

TEST_CASE("gauc weights users by impressions and skips one-class users") {
  const std::vector<ScoredImpression> rows = {
      {1, 0.9, 1}, {1, 0.1, 0},                            // auc 1, weight 2
      {2, 0.2, 1}, {2, 0.8, 0}, {2, 0.9, 0}, {2, 0.85, 1}, // auc 0.25, weight 4
      {3, 0.5, 1}, {3, 0.7, 1},                            // all positive
  };
  const auto r = gauc(rows, [](std::uint64_t u) { return u == 1 ? 10u : 400u; });
  CHECK(!r.empty);
  CHECK(r.gauc == doctest::Approx((2 * 1.0 + 4 * 0.25) / 6));
  CHECK(r.users == 2);
  CHECK(r.excluded_users == 1);
  CHECK(r.impressions == 6);
  CHECK(r.total_impressions == 8);
  CHECK(r.groups[0].gauc == doctest::Approx(1.0));
  CHECK(r.groups[3].gauc == doctest::Approx(0.25));
  CHECK(r.groups[1].empty);
  CHECK(gauc({}).empty);
}

TEST_CASE("gauc agrees with the brute-force oracle") {
  Rng rng(51);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ScoredImpression> rows;
    const auto n = testing::pick(rng, 1, 60);
    for (std::size_t k = 0; k < n; ++k) {
      rows.push_back({testing::pick(rng, 0, 6), std::round(testing::uniform(rng, 0, 4)),
                      static_cast<std::uint8_t>(testing::pick(rng, 0, 1))});
    }
    bool any = false;
    const double oracle = testing::gauc_oracle(rows, &any);
    const auto r = gauc(rows);
    CHECK(r.empty == !any);
    if (any) CHECK(std::abs(r.gauc - oracle) <= 1e-12);
  }
}

TEST_CASE("online loop is deterministic and resumable") {
  const auto logs = tiny_logs();
  const auto cfg = tiny_online();
  const auto a = run_online_loop(cfg, logs.sub_log, {});
  const auto b = run_online_loop(cfg, logs.sub_log, {});
  CHECK(a.checkpoint == b.checkpoint);
  REQUIRE(a.days.size() == 2);
  CHECK(a.days[0].day == 1);
  CHECK(a.days[1].impressions > 0);

  auto first = cfg;
  first.train_days = {1, 1};
  auto second = cfg;
  second.train_days = {2, 2};
  const auto part = run_online_loop(first, logs.sub_log, {});
  const auto rest = run_online_loop(second, logs.sub_log, {}, &part.checkpoint);
  CHECK(rest.checkpoint == a.checkpoint);

  auto gap = cfg;
  gap.train_days = {3, 3};
  CHECK_THROWS_AS(run_online_loop(gap, logs.sub_log, {}, &part.checkpoint), StateError);

  auto other_seed = cfg;
  other_seed.seed = 2;
  CHECK(run_online_loop(other_seed, logs.sub_log, {}).checkpoint != a.checkpoint);
}

TEST_CASE("plugged online training needs knowledge for every day") {
  const auto logs = tiny_logs();
  const auto cfg = tiny_online(3);
  CHECK_THROWS_AS(run_online_loop(cfg, logs.sub_log, {}), StateError);
  CHECK_THROWS_AS(run_online_loop(cfg, logs.sub_log, [](std::int32_t) { return nullptr; }),
                  StateError);

  Rng rng(52);
  const auto k = testing::random_matrix<float>(rng, logs.sub_log.size(), 3);
  const auto res = run_online_loop(cfg, logs.sub_log, [&](std::int32_t) { return &k; });
  std::vector<const data::ImpressionRecord*> test;
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < logs.sub_log.size(); ++r) {
    if (logs.sub_log[r].day == 3) {
      test.push_back(&logs.sub_log[r]);
      rows.push_back(r);
    }
  }
  nn::Matrix kt(test.size(), 3);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < 3; ++c) kt(r, c) = k(rows[r], c);
  }
  const auto scores = score_records(cfg, res.checkpoint, test, &kt);
  REQUIRE(scores.size() == test.size());
  const auto scored = to_scored(test, scores);
  CHECK(scored[0].user == test[0]->user_id);
  CHECK(scored[0].label == test[0]->click);
  CHECK(scores == score_records(cfg, res.checkpoint, test, &kt));
}

TEST_CASE("key-value configs") {
  const auto kv = KeyValues::parse(
      "# comment\n"
      "  a = 1   # trailing\n"
      "list = x, y ,z\n"
      "sizes = 4,2\n"
      "flag = yes\n"
      "unused = 0\n");
  CHECK(kv.get_int("a", 0) == 1);
  CHECK(kv.get_list("list", {}) == std::vector<std::string>{"x", "y", "z"});
  CHECK(kv.get_sizes("sizes", {}) == std::vector<std::size_t>{4, 2});
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_double("missing", 2.5) == 2.5);
  CHECK(kv.unused_keys() == std::vector<std::string>{"unused"});
  CHECK(KeyValues::parse(kv.to_text()).values() == kv.values());

  const auto bad = KeyValues::parse("n = 1x\nb = maybe\nneg = -3\n");
  CHECK_THROWS_AS(bad.get_int("n", 0), ConfigError);
  CHECK_THROWS_AS(bad.get_bool("b", false), ConfigError);
  CHECK_THROWS_AS(bad.get_uint("neg", 0), ConfigError);
  CHECK_THROWS_AS(KeyValues::parse("novalue\n"), ConfigError);
  CHECK_THROWS_AS(KeyValues::parse("= 3\n"), ConfigError);
}

TEST_CASE("experiment configs") {
  const auto defaults = ExperimentConfig::from_kv(KeyValues::parse(""));
  CHECK(defaults.seeds.size() == 5);
  CHECK(defaults.arms() == std::vector<std::string>{
                               "base", "sample_merging", "keep_c", "keep", "keep[u]",
                               "keep[u+i]", "keep{click}", "keep{click+conversion}",
                               "keep_decomposed", "keep_degenerated", "keep_decomp_degen"});

  const auto c = ExperimentConfig::from_kv(KeyValues::parse(
      "seeds = 3,4\nmodes = base,keep\nknowledge_ablations = u\ntask_ablations =\n"
      "gen.n_users = 50\ndownstream.plug_layer = 2\nchecks = false\n"));
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(c.arms() == std::vector<std::string>{"base", "keep", "keep[u]"});
  CHECK(c.generator.n_users == 50);
  CHECK(c.downstream.plug_layer == 2);
  CHECK(!c.checks);

  CHECK_THROWS_AS(ExperimentConfig::from_kv(KeyValues::parse("typo_key = 1\n")), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_kv(KeyValues::parse("test_day = 6\n")), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_kv(KeyValues::parse("modes = base,bogus\n")),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_kv(KeyValues::parse("knowledge_ablations = u+q\n")),
                  ConfigError);
}
