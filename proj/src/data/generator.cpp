#include "keep/data/generator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>

#include "keep/error.hpp"

namespace keep::data {

void GeneratorConfig::validate() const {
  if (n_users == 0 || n_items == 0) {
    throw ConfigError("generator needs at least one user and one item");
  }
  if (n_categories == 0 || n_shops == 0 || n_days <= 0 || latent_dim == 0) {
    throw ConfigError("generator needs positive categories, shops, days and latent_dim");
  }
  if (!(sub_impressions_per_user_day < super_impressions_per_user_day)) {
    throw ConfigError("sub-domain impression rate must be below the super-domain rate");
  }
  if (sub_impressions_per_user_day <= 0.0) {
    throw ConfigError("sub-domain impression rate must be positive");
  }
  if (!(base_click_rate > 0.0 && base_click_rate < 1.0)) {
    throw ConfigError("base_click_rate must lie in (0, 1)");
  }
  auto unit = [](double p) { return p >= 0.0 && p < 1.0; };
  if (!unit(conversion_given_click) || !unit(cart_given_click)) {
    throw ConfigError("conversion/cart probabilities must lie in [0, 1)");
  }
  if (!(sub_item_fraction > 0.0 && sub_item_fraction <= 1.0)) {
    throw ConfigError("sub_item_fraction must lie in (0, 1]");
  }
  if (activity_sigma < 0.0) throw ConfigError("activity_sigma must be >= 0");
  if (drift_rate < 0.0 || sub_domain_shift < 0.0 || item_noise < 0.0) {
    throw ConfigError("drift_rate, sub_domain_shift and item_noise must be >= 0");
  }
  if (max_session_length == 0) throw ConfigError("max_session_length must be > 0");
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct World {
  std::size_t d = 0;
  std::vector<double> user_z;      // n_users x d, drifts daily
  std::vector<double> user_shift;  // n_users x d, fixed sub-domain taste
  std::vector<double> item_q;      // n_items x d
  std::vector<std::uint32_t> item_category;
  std::vector<std::uint64_t> item_shop;
  std::vector<double> category_bias;
  std::vector<std::uint64_t> sub_items;
  std::vector<double> activity;
  double offset = 0.0;

  double preference(const GeneratorConfig& c, std::uint64_t u,
                    std::uint64_t i, bool sub) const {
    const double* z = &user_z[u * d];
    const double* q = &item_q[i * d];
    double dot = 0.0;
    if (sub && c.sub_domain_shift > 0.0) {
      const double* w = &user_shift[u * d];
      const double norm = std::sqrt(1.0 + c.sub_domain_shift * c.sub_domain_shift);
      for (std::size_t k = 0; k < d; ++k) {
        dot += (z[k] + c.sub_domain_shift * w[k]) / norm * q[k];
      }
    } else {
      for (std::size_t k = 0; k < d; ++k) dot += z[k] * q[k];
    }
    return c.preference_scale * dot / std::sqrt(static_cast<double>(d));
  }
};

// Solves for the logit offset that makes the population click rate equal
// base_click_rate, using a fixed Monte-Carlo sample of (z, q, b_c).
double calibrate_offset(const GeneratorConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr int kSamples = 20000;
  std::vector<double> pref(kSamples);
  for (auto& p : pref) {
    double dot = 0.0;
    for (std::size_t k = 0; k < c.latent_dim; ++k) dot += normal(rng) * normal(rng);
    p = c.preference_scale * dot / std::sqrt(static_cast<double>(c.latent_dim)) +
        c.category_bias_std * normal(rng);
  }
  double lo = -30.0, hi = 30.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (double p : pref) mean += sigmoid(p + mid);
    mean /= kSamples;
    (mean < c.base_click_rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

World build_world(const GeneratorConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  World w;
  w.d = c.latent_dim;
  const std::size_t d = w.d;

  std::vector<double> centres(c.n_categories * d);
  for (auto& v : centres) v = normal(rng);
  w.category_bias.resize(c.n_categories);
  for (auto& b : w.category_bias) b = c.category_bias_std * normal(rng);

  const std::uint64_t shops_per_cat =
      std::max<std::uint64_t>(1, c.n_shops / c.n_categories);
  std::uniform_int_distribution<std::uint64_t> pick_cat(0, c.n_categories - 1);
  std::uniform_int_distribution<std::uint64_t> pick_shop_slot(0, shops_per_cat - 1);
  std::uniform_int_distribution<std::uint64_t> pick_any_shop(0, c.n_shops - 1);
  w.item_q.resize(c.n_items * d);
  w.item_category.resize(c.n_items);
  w.item_shop.resize(c.n_items);
  const double norm = std::sqrt(1.0 + c.item_noise * c.item_noise);
  for (std::uint64_t i = 0; i < c.n_items; ++i) {
    const auto cat = pick_cat(rng);
    w.item_category[i] = static_cast<std::uint32_t>(cat);
    // Shops sell within one home category when there are enough of them.
    w.item_shop[i] = c.n_shops >= c.n_categories
                         ? (cat + c.n_categories * pick_shop_slot(rng)) % c.n_shops
                         : pick_any_shop(rng);
    for (std::size_t k = 0; k < d; ++k) {
      w.item_q[i * d + k] = (centres[cat * d + k] + c.item_noise * normal(rng)) / norm;
    }
  }

  w.user_z.resize(c.n_users * d);
  w.user_shift.resize(c.n_users * d);
  for (auto& v : w.user_z) v = normal(rng);
  for (auto& v : w.user_shift) v = normal(rng);

  std::vector<std::uint64_t> all(c.n_items);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  const auto n_sub = std::max<std::uint64_t>(
      1, static_cast<std::uint64_t>(std::ceil(c.sub_item_fraction * c.n_items)));
  w.sub_items.assign(all.begin(), all.begin() + std::min(n_sub, c.n_items));
  std::sort(w.sub_items.begin(), w.sub_items.end());

  w.activity.resize(c.n_users);
  for (auto& a : w.activity) {
    a = std::exp(c.activity_sigma * normal(rng) - 0.5 * c.activity_sigma * c.activity_sigma);
  }

  w.offset = calibrate_offset(c, rng);
  return w;
}

void push_bounded(std::deque<std::uint64_t>& q, std::uint64_t v, std::size_t cap) {
  if (cap == 0) return;
  q.push_back(v);
  while (q.size() > cap) q.pop_front();
}

}  // namespace

SyntheticLogs generate(const GeneratorConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  World w = build_world(c, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::uint64_t> pick_item(0, c.n_items - 1);
  std::uniform_int_distribution<std::size_t> pick_sub(0, w.sub_items.size() - 1);

  std::vector<std::deque<std::uint64_t>> platform_clicks(c.n_users);
  std::vector<std::deque<std::uint64_t>> sub_clicks(c.n_users);
  std::uint64_t next_session = 0;
  const double drift_norm = std::sqrt(1.0 + c.drift_rate * c.drift_rate);

  SyntheticLogs logs;
  for (std::int32_t day = 0; day < c.n_days; ++day) {
    if (day > 0 && c.drift_rate > 0.0) {
      for (auto& z : w.user_z) z = (z + c.drift_rate * normal(rng)) / drift_norm;
    }
    for (std::uint64_t u = 0; u < c.n_users; ++u) {
      const double a = w.activity[u];
      const int n_super =
          std::poisson_distribution<int>(c.super_impressions_per_user_day * a)(rng);
      const int n_sub = std::poisson_distribution<int>(c.sub_impressions_per_user_day * a)(rng);
      std::vector<std::uint8_t> timeline(n_super, 0);
      timeline.insert(timeline.end(), n_sub, 1);
      std::shuffle(timeline.begin(), timeline.end(), rng);

      std::size_t seen[2] = {0, 0};
      std::uint64_t session[2] = {0, 0};
      for (auto is_sub : timeline) {
        const bool sub = is_sub != 0;
        if (seen[is_sub]++ % c.max_session_length == 0) session[is_sub] = next_session++;

        ImpressionRecord r;
        r.domain = sub ? Domain::kSub : Domain::kSuper;
        r.day = day;
        r.session_id = session[is_sub];
        r.user_id = u;
        r.item_id = sub ? w.sub_items[pick_sub(rng)] : pick_item(rng);
        r.shop_id = w.item_shop[r.item_id];
        r.category_id = w.item_category[r.item_id];
        const auto& history = sub ? sub_clicks[u] : platform_clicks[u];
        r.behavior_seq.assign(history.begin(), history.end());

        const double pref = w.preference(c, u, r.item_id, sub);
        const double p_click = sigmoid(pref + w.category_bias[r.category_id] + w.offset);
        r.click = unit(rng) < p_click ? 1 : 0;
        // Post-click outcomes share the user's affinity for the item.
        const double affinity = 2.0 * sigmoid(pref);
        const double u_cv = unit(rng), u_cart = unit(rng);
        if (r.click) {
          r.conversion = u_cv < std::min(1.0, c.conversion_given_click * affinity) ? 1 : 0;
          r.cart = u_cart < std::min(1.0, c.cart_given_click * affinity) ? 1 : 0;
          push_bounded(platform_clicks[u], r.item_id, c.max_behaviors);
          if (sub) push_bounded(sub_clicks[u], r.item_id, c.max_behaviors);
        }
        (sub ? logs.sub_log : logs.super_log).push_back(std::move(r));
      }
    }
  }
  return logs;
}

void generate_files(const GeneratorConfig& config, const std::string& super_path,
                    const std::string& sub_path) {
  const auto logs = generate(config);
  write_log_file(super_path, logs.super_log);
  write_log_file(sub_path, logs.sub_log);
}

}  // namespace keep::data
