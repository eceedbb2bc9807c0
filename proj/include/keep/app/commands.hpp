#pragma once

#include <functional>
#include <string>

#include "keep/kv.hpp"

// Whole-pipeline operations driven by flat key-value parameters. These back
// the C interface and the command-line tool. Each returns a one-line JSON
// summary; unknown keys raise ConfigError.
namespace keep::app {

using LogFn = std::function<void(const std::string&)>;

// Keys: super_log, sub_log (output paths), gen.* generator fields.
std::string generate(const KeyValues& kv, const LogFn& log = {});

// Keys: super_log, days, model {full|degenerated|two_tower}, tasks, batch,
// alpha, triplet_cap, lr, seed, user_dim, feature_dim, head_dims,
// tower_hidden, tower_dim, n_users/n_items/n_shops/n_categories, resume, out.
std::string pretrain(const KeyValues& kv, const LogFn& log = {});

// Keys: sub_log, super_log, mode {base|merge|keep|keep-c}, days, test_day,
// plug_layer, mlp_dims, knowledge (extractor checkpoint, "fresh" for keep-c,
// or gkc:host:port), version, serving_dim, serving_uc_dim, knowledge_parts,
// batch, lr, seed, resume, out, extractor_out, max_behaviors, n_items,
// n_shops, n_categories.
std::string train(const KeyValues& kv, const LogFn& log = {});

// Keys: super_log, sub_log, day, two_tower, degenerated, version, out,
// max_behaviors.
std::string build_snapshot(const KeyValues& kv, const LogFn& log = {});

}  // namespace keep::app
