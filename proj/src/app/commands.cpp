#include "keep/app/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>

#include <json.hpp>

#include "keep/binary.hpp"
#include "keep/data/generator.hpp"
#include "keep/data/record.hpp"
#include "keep/data/training_order.hpp"
#include "keep/error.hpp"
#include "keep/extractor/pretrain.hpp"
#include "keep/gkc/net.hpp"
#include "keep/gkc/store.hpp"
#include "keep/harness/experiment.hpp"
#include "keep/harness/gauc.hpp"
#include "keep/harness/online.hpp"
#include "keep/nn/checkpoint.hpp"
#include "keep/plug/knowledge.hpp"
#include "keep/serving/snapshot.hpp"
#include "keep/serving/two_tower.hpp"

namespace keep::app {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::ordered_json;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

void say(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

void reject_unused(const KeyValues& kv, const char* command) {
  const auto unused = kv.unused_keys();
  if (unused.empty()) return;
  std::string keys;
  for (const auto& k : unused) keys += (keys.empty() ? "" : ", ") + k;
  throw ConfigError(std::string(command) + ": unknown keys: " + keys);
}

std::string require(const KeyValues& kv, const std::string& key, const char* command) {
  auto v = kv.get_string(key, "");
  if (v.empty()) throw ConfigError(std::string(command) + " needs '" + key + "'");
  return v;
}

struct Vocab {
  std::size_t users = 0, items = 0, shops = 0, categories = 0;
};

void widen(Vocab& v, const std::vector<data::ImpressionRecord>& log) {
  for (const auto& r : log) {
    v.users = std::max<std::size_t>(v.users, r.user_id + 1);
    v.items = std::max<std::size_t>(v.items, r.item_id + 1);
    v.shops = std::max<std::size_t>(v.shops, r.shop_id + 1);
    v.categories = std::max<std::size_t>(v.categories, r.category_id + 1);
    for (auto b : r.behavior_seq) v.items = std::max<std::size_t>(v.items, b + 1);
  }
}

Vocab read_vocab(const KeyValues& kv, Vocab v) {
  v.users = kv.get_uint("n_users", v.users);
  v.items = kv.get_uint("n_items", v.items);
  v.shops = kv.get_uint("n_shops", v.shops);
  v.categories = kv.get_uint("n_categories", v.categories);
  return v;
}

std::array<bool, extractor::kNumTasks> parse_tasks(const std::vector<std::string>& names) {
  std::array<bool, extractor::kNumTasks> t{};
  for (const auto& n : names) t[static_cast<std::size_t>(extractor::parse_task(n))] = true;
  if (!t[0]) throw ConfigError("tasks must include click");
  return t;
}

std::vector<const data::ImpressionRecord*> records_in(const std::vector<data::ImpressionRecord>& log,
                                                      const std::function<bool(std::int32_t)>& day_ok) {
  std::vector<const data::ImpressionRecord*> out;
  for (const auto& r : log) {
    if (day_ok(r.day)) out.push_back(&r);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string generate(const KeyValues& kv, const LogFn& log) {
  const auto super_path = require(kv, "super_log", "gen");
  const auto sub_path = require(kv, "sub_log", "gen");
  const auto config = harness::parse_generator(kv, "gen.");
  reject_unused(kv, "gen");
  const auto t0 = Clock::now();
  const auto logs = data::generate(config);
  data::write_log_file(super_path, logs.super_log);
  data::write_log_file(sub_path, logs.sub_log);

  auto click_rate = [](const std::vector<data::ImpressionRecord>& l) {
    double c = 0;
    for (const auto& r : l) c += r.click;
    return l.empty() ? 0.0 : c / static_cast<double>(l.size());
  };
  const double user_days = static_cast<double>(config.n_users) * config.n_days;
  const double super_rate = static_cast<double>(logs.super_log.size()) / user_days;
  const double sub_rate = static_cast<double>(logs.sub_log.size()) / user_days;
  say(log, "wrote " + std::to_string(logs.super_log.size()) + " super and " +
               std::to_string(logs.sub_log.size()) + " sub records");
  ordered_json j;
  j["super_records"] = logs.super_log.size();
  j["sub_records"] = logs.sub_log.size();
  j["super_per_user_day"] = super_rate;
  j["sub_per_user_day"] = sub_rate;
  j["ratio"] = sub_rate > 0 ? super_rate / sub_rate : 0.0;
  j["super_click_rate"] = click_rate(logs.super_log);
  j["sub_click_rate"] = click_rate(logs.sub_log);
  j["seconds"] = seconds_since(t0);
  return j.dump();
}

// ---------------------------------------------------------------------------

std::string pretrain(const KeyValues& kv, const LogFn& log) {
  const auto super_path = require(kv, "super_log", "pretrain");
  const auto out_path = require(kv, "out", "pretrain");
  const auto days = data::DayRange::parse(kv.get_string("days", "0-4"));
  const auto model_kind = kv.get_string("model", "full");
  const auto resume = kv.get_string("resume", "");
  const auto batch = kv.get_uint("batch", 256);
  const auto seed = kv.get_uint("seed", 1);
  const auto lr = kv.get_double("lr", 0.001);

  extractor::PretrainConfig pc;
  pc.alpha = kv.get_double("alpha", pc.alpha);
  pc.triplet_cap = kv.get_uint("triplet_cap", pc.triplet_cap);
  pc.tasks = parse_tasks(kv.get_list("tasks", {"click", "conversion", "cart"}));
  pc.batch_size = batch;
  pc.lr = lr;
  pc.seed = seed;

  extractor::ExtractorConfig ec;
  ec.user_dim = kv.get_uint("user_dim", ec.user_dim);
  ec.feature_dim = kv.get_uint("feature_dim", ec.feature_dim);
  ec.head_dims = kv.get_sizes("head_dims", ec.head_dims);
  const auto tower_hidden = kv.get_uint("tower_hidden", 32);
  const auto tower_dim = kv.get_uint("tower_dim", 16);

  const auto super_log = data::read_log_file(super_path);
  Vocab v;
  widen(v, super_log);
  v = read_vocab(kv, v);
  reject_unused(kv, "pretrain");
  if (batch == 0) throw ConfigError("pretrain: batch must be > 0");

  std::optional<nn::Checkpoint> prev;
  if (!resume.empty()) {
    prev = nn::load_checkpoint(resume);
    if (prev->cursor_day != days.first - 1) {
      throw StateError("checkpoint gap: " + resume + " ends at day " +
                       std::to_string(prev->cursor_day) + ", training starts at day " +
                       std::to_string(days.first));
    }
  }

  const auto t0 = Clock::now();
  nn::Adam adam({lr});
  ordered_json j;
  j["model"] = model_kind;
  if (model_kind == "two_tower") {
    serving::TwoTowerConfig tc;
    tc.n_users = v.users;
    tc.n_items = v.items;
    tc.n_shops = v.shops;
    tc.n_categories = v.categories;
    tc.user_dim = ec.user_dim;
    tc.feature_dim = ec.feature_dim;
    tc.hidden = tower_hidden;
    tc.tower_dim = tower_dim;
    tc.seed = seed;
    auto m = prev ? serving::load_two_tower(*prev, &adam) : serving::TwoTower<float>(tc);
    const auto p = serving::train_two_tower(m, adam, super_log, days, batch, seed);
    nn::save_checkpoint(out_path, serving::two_tower_checkpoint(m, &adam, days.last));
    j["steps"] = p.steps;
    j["impressions"] = p.impressions;
    j["first_loss"] = p.first_mean_loss;
    j["last_loss"] = p.last_mean_loss;
  } else {
    if (model_kind == "full") {
      ec.variant = extractor::Variant::kFull;
    } else if (model_kind == "degenerated") {
      ec.variant = extractor::Variant::kDegenerated;
    } else {
      throw ConfigError("pretrain: unknown model '" + model_kind + "'");
    }
    ec.n_users = v.users;
    ec.n_items = v.items;
    ec.n_shops = v.shops;
    ec.n_categories = v.categories;
    ec.seed = seed;
    data::Catalog catalog;
    catalog.add_all(super_log);
    auto m = prev ? extractor::load_extractor(*prev, &adam) : extractor::ExtractorModel<float>(ec);
    const auto p = extractor::pretrain(m, adam, super_log, days, pc, &catalog);
    nn::save_checkpoint(out_path, extractor::extractor_checkpoint(m, &adam, days.last));
    j["steps"] = p.steps;
    j["impressions"] = p.impressions;
    j["first_loss"] = p.first_mean_loss;
    j["last_loss"] = p.last_mean_loss;
  }
  j["cursor_day"] = days.last;
  j["seconds"] = seconds_since(t0);
  say(log, "pretrain " + model_kind + " days " + std::to_string(days.first) + "-" +
               std::to_string(days.last) + " -> " + out_path);
  return j.dump();
}

// ---------------------------------------------------------------------------

std::string train(const KeyValues& kv, const LogFn& log) {
  const auto sub_path = require(kv, "sub_log", "train");
  const auto super_path = kv.get_string("super_log", "");
  const auto mode = kv.get_string("mode", "keep");
  const auto days = data::DayRange::parse(kv.get_string("days", "5-6"));
  const bool explicit_test_day = kv.has("test_day");
  auto test_day = static_cast<std::int32_t>(kv.get_int("test_day", -1));
  const auto knowledge = kv.get_string("knowledge", "");
  const auto version = static_cast<std::uint32_t>(kv.get_uint("version", 0));
  const auto serving_dim = kv.get_uint("serving_dim", 16);
  const auto serving_uc_dim = kv.get_uint("serving_uc_dim", 24);
  const auto parts = plug::KnowledgeMask::parse(kv.get_string("knowledge_parts", "u+i+ui"));
  const auto resume = kv.get_string("resume", "");
  const auto out_path = kv.get_string("out", "");
  const auto extractor_out = kv.get_string("extractor_out", "");
  const auto max_behaviors = kv.get_uint("max_behaviors", 20);
  const auto pretrain_batch = kv.get_uint("pretrain_batch", 256);

  harness::OnlineConfig oc;
  oc.model.plug_layer = kv.get_uint("plug_layer", oc.model.plug_layer);
  oc.model.mlp_dims = kv.get_sizes("mlp_dims", oc.model.mlp_dims);
  oc.model.seed = kv.get_uint("seed", 1);
  oc.seed = oc.model.seed;
  oc.batch_size = kv.get_uint("batch", oc.batch_size);
  oc.adam.lr = kv.get_double("lr", oc.adam.lr);
  oc.train_days = days;
  oc.knowledge_version = version;

  const bool needs_super = mode == "merge" || mode == "keep" || mode == "keep-c";
  if (mode != "base" && !needs_super) {
    throw ConfigError("train: mode must be base, merge, keep or keep-c (got '" + mode + "')");
  }
  if (needs_super && super_path.empty()) throw ConfigError("train --mode " + mode + " needs super_log");
  if ((mode == "keep" || mode == "keep-c") && knowledge.empty()) {
    throw ConfigError("train --mode " + mode + " needs knowledge");
  }
  if (test_day >= 0 && test_day <= days.last) {
    throw ConfigError("train: test_day must come after the train window");
  }

  auto sub_log = data::read_log_file(sub_path);
  // Without an explicit test_day, evaluate on the day after the window if
  // the log has it; a negative test_day turns evaluation off.
  if (!explicit_test_day &&
      std::any_of(sub_log.begin(), sub_log.end(), [&](const auto& r) { return r.day == days.last + 1; })) {
    test_day = days.last + 1;
  }
  std::vector<data::ImpressionRecord> super_log;
  if (!super_path.empty()) super_log = data::read_log_file(super_path);
  Vocab v;
  widen(v, sub_log);
  widen(v, super_log);
  v = read_vocab(kv, v);
  reject_unused(kv, "train");
  oc.model.n_items = v.items;
  oc.model.n_shops = v.shops;
  oc.model.n_categories = v.categories;

  data::Catalog catalog;
  catalog.add_all(super_log);
  catalog.add_all(sub_log);
  const plug::UserProfiles profiles(super_log, max_behaviors);

  auto in_scope = [&](std::int32_t d) { return days.contains(d) || (test_day >= 0 && d == test_day); };
  std::vector<std::size_t> rows;
  std::vector<const data::ImpressionRecord*> recs;
  for (std::size_t k = 0; k < sub_log.size(); ++k) {
    if (in_scope(sub_log[k].day)) {
      rows.push_back(k);
      recs.push_back(&sub_log[k]);
    }
  }
  // Knowledge rows aligned with sub_log; only in-scope rows are filled.
  nn::Matrix kmat;
  auto scatter = [&](const nn::Matrix& compact, const std::vector<std::size_t>& at) {
    if (kmat.rows() == 0) kmat.reset(sub_log.size(), compact.cols());
    for (std::size_t j = 0; j < at.size(); ++j) {
      auto s = compact.row(j);
      std::copy(s.begin(), s.end(), kmat.row(at[j]).begin());
    }
  };

  const auto t0 = Clock::now();
  std::string knowledge_source = "none";
  if (mode == "keep" && knowledge.rfind("gkc:", 0) == 0) {
    const auto [host, port] = gkc::parse_endpoint(knowledge);
    gkc::Client client(host, port);
    gkc::ServingSlots slots{parts.user, parts.item, parts.user && parts.item, parts.interaction};
    gkc::ServiceKnowledge src(client, version, serving_dim, serving_uc_dim, slots);
    nn::Matrix k;
    const auto misses = src.fill(recs, k);
    scatter(k, rows);
    knowledge_source = knowledge + " v" + std::to_string(version);
    say(log, "looked up " + std::to_string(recs.size()) + " quadruples, " +
                 std::to_string(misses) + " with misses");
  } else if (mode == "keep") {
    const auto model = extractor::load_extractor(nn::load_checkpoint(knowledge));
    plug::ExtractorKnowledge src(model, profiles, parts, &catalog);
    nn::Matrix k;
    src.fill(recs, k);
    scatter(k, rows);
    knowledge_source = knowledge;
  } else if (mode == "keep-c") {
    nn::Adam eadam({oc.adam.lr});
    std::unique_ptr<extractor::ExtractorModel<float>> model;
    if (knowledge == "fresh") {
      extractor::ExtractorConfig ec;
      ec.n_users = v.users;
      ec.n_items = v.items;
      ec.n_shops = v.shops;
      ec.n_categories = v.categories;
      ec.seed = oc.model.seed;
      model = std::make_unique<extractor::ExtractorModel<float>>(ec);
    } else {
      model = std::make_unique<extractor::ExtractorModel<float>>(
          extractor::load_extractor(nn::load_checkpoint(knowledge), &eadam));
    }
    extractor::PretrainConfig pc;
    pc.batch_size = pretrain_batch;
    pc.seed = oc.model.seed;
    auto fill_day = [&](std::int32_t day) {
      std::vector<std::size_t> at;
      std::vector<const data::ImpressionRecord*> rs;
      for (std::size_t j = 0; j < recs.size(); ++j) {
        if (recs[j]->day == day) {
          at.push_back(rows[j]);
          rs.push_back(recs[j]);
        }
      }
      plug::ExtractorKnowledge src(*model, profiles, parts, &catalog);
      nn::Matrix k;
      src.fill(rs, k);
      scatter(k, at);
    };
    for (auto day = days.first; day <= days.last; ++day) {
      extractor::pretrain(*model, eadam, super_log, {day, day}, pc, &catalog);
      fill_day(day);
    }
    if (test_day >= 0) fill_day(test_day);
    if (!extractor_out.empty()) {
      nn::save_checkpoint(extractor_out, extractor::extractor_checkpoint(*model, &eadam, days.last));
    }
    knowledge_source = knowledge + " (co-trained)";
  }
  oc.knowledge_dim = kmat.cols();

  std::optional<std::string> resume_bytes;
  if (!resume.empty()) resume_bytes = read_file(resume);

  harness::OnlineResult res;
  if (mode == "merge") {
    std::vector<data::ImpressionRecord> merged = sub_log;
    for (const auto& r : super_log) {
      if (days.contains(r.day)) merged.push_back(r);
    }
    res = harness::run_online_loop(oc, merged, {}, resume_bytes ? &*resume_bytes : nullptr);
  } else {
    const nn::Matrix* kp = oc.knowledge_dim > 0 ? &kmat : nullptr;
    res = harness::run_online_loop(oc, sub_log, [kp](std::int32_t) { return kp; },
                                   resume_bytes ? &*resume_bytes : nullptr);
  }
  if (!out_path.empty()) write_file(out_path, res.checkpoint);

  ordered_json j;
  j["mode"] = mode;
  j["knowledge"] = knowledge_source;
  j["knowledge_dim"] = oc.knowledge_dim;
  j["days"] = ordered_json::array();
  for (const auto& d : res.days) {
    j["days"].push_back({{"day", d.day}, {"steps", d.steps}, {"impressions", d.impressions},
                         {"mean_loss", d.mean_loss}});
    say(log, "day " + std::to_string(d.day) + ": " + std::to_string(d.impressions) +
                 " impressions, mean loss " + std::to_string(d.mean_loss));
  }
  if (test_day >= 0) {
    std::vector<const data::ImpressionRecord*> test;
    std::vector<std::size_t> at;
    for (std::size_t k = 0; k < sub_log.size(); ++k) {
      if (sub_log[k].day == test_day) {
        test.push_back(&sub_log[k]);
        at.push_back(k);
      }
    }
    nn::Matrix kt;
    if (oc.knowledge_dim > 0) {
      kt.reset(test.size(), oc.knowledge_dim);
      for (std::size_t r = 0; r < at.size(); ++r) {
        auto s = kmat.row(at[r]);
        std::copy(s.begin(), s.end(), kt.row(r).begin());
      }
    }
    const auto scores =
        harness::score_records(oc, res.checkpoint, test, oc.knowledge_dim > 0 ? &kt : nullptr);
    const auto rep = harness::gauc(harness::to_scored(test, scores));
    j["test_day"] = test_day;
    j["gauc"] = rep.empty ? ordered_json(nullptr) : ordered_json(rep.gauc);
    j["eligible_users"] = rep.users;
    j["excluded_users"] = rep.excluded_users;
    j["test_impressions"] = rep.total_impressions;
  }
  j["out"] = out_path;
  j["seconds"] = seconds_since(t0);
  return j.dump();
}

// ---------------------------------------------------------------------------

std::string build_snapshot(const KeyValues& kv, const LogFn& log) {
  const auto super_path = require(kv, "super_log", "snapshot");
  const auto sub_path = require(kv, "sub_log", "snapshot");
  const auto tt_path = require(kv, "two_tower", "snapshot");
  const auto out_path = require(kv, "out", "snapshot");
  const auto degen_path = kv.get_string("degenerated", "");
  const auto day = static_cast<std::int32_t>(kv.get_int("day", 5));
  const auto version = static_cast<std::uint32_t>(kv.get_uint("version", 1));
  const auto max_behaviors = kv.get_uint("max_behaviors", 20);
  reject_unused(kv, "snapshot");

  const auto t0 = Clock::now();
  const auto super_log = data::read_log_file(super_path);
  const auto sub_log = data::read_log_file(sub_path);
  data::Catalog catalog;
  catalog.add_all(super_log);
  catalog.add_all(sub_log);
  const plug::UserProfiles profiles(super_log, max_behaviors);
  const auto tt = serving::load_two_tower(nn::load_checkpoint(tt_path));
  std::optional<extractor::ExtractorModel<float>> degen;
  if (!degen_path.empty()) degen.emplace(extractor::load_extractor(nn::load_checkpoint(degen_path)));

  serving::SnapshotInputs in;
  std::set<std::uint64_t> users, items;
  std::set<serving::UcKey> ucs;
  for (const auto* r : records_in(sub_log, [day](std::int32_t d) { return d == day; })) {
    users.insert(r->user_id);
    items.insert(r->item_id);
    ucs.insert({r->user_id, r->category_id});
  }
  for (auto u : users) {
    in.users.push_back(u);
    in.user_behaviors.push_back(profiles.before(u, day));
  }
  for (auto i : items) {
    const auto* info = catalog.find(i);
    in.items.push_back(i);
    in.item_shops.push_back(info->shop_id);
    in.item_categories.push_back(info->category_id);
  }
  in.uc_pairs.assign(ucs.begin(), ucs.end());
  const auto snap = serving::build_snapshot(tt, degen ? &*degen : nullptr, &catalog, in, version,
                                            static_cast<std::uint64_t>(day));
  serving::save_snapshot(out_path, snap);
  say(log, "snapshot v" + std::to_string(version) + " for day " + std::to_string(day) + " -> " +
               out_path);
  ordered_json j;
  j["version"] = snap.version;
  j["day"] = day;
  j["users"] = snap.user_keys.size();
  j["items"] = snap.item_keys.size();
  j["user_category_pairs"] = snap.uc_keys.size();
  j["d"] = snap.d;
  j["d_uc"] = snap.d_uc;
  j["composed_dim"] = snap.composed_dim();
  j["bytes"] = std::filesystem::file_size(out_path);
  j["seconds"] = seconds_since(t0);
  return j.dump();
}

}  // namespace keep::app
