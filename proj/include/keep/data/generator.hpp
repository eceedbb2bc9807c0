#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "keep/data/record.hpp"

namespace keep::data {

// Latent-factor impression simulator. Users carry a preference vector z_u
// that drifts a little every day; items carry q_i scattered around their
// category centre. P(click) = sigmoid(<z_u, q_i> + b_c + offset), with the
// offset solved so the population click rate matches base_click_rate.
struct GeneratorConfig {
  std::uint64_t n_users = 10000;
  std::uint64_t n_items = 2000;
  std::uint64_t n_categories = 50;
  std::uint64_t n_shops = 400;
  std::int32_t n_days = 8;
  double super_impressions_per_user_day = 25.0;
  double sub_impressions_per_user_day = 1.0;
  // Per-user activity multiplier ~ lognormal with mean 1 and this log-std;
  // scales both domains' rates, so the super:sub ratio is unchanged.
  double activity_sigma = 1.0;
  std::size_t latent_dim = 8;
  double preference_scale = 2.0;  // std of <z_u, q_i> in logit units
  double item_noise = 0.6;        // item spread around its category centre
  double category_bias_std = 0.3;
  double drift_rate = 0.05;
  // Fraction of each user's sub-domain taste that is sub-specific.
  double sub_domain_shift = 0.3;
  double sub_item_fraction = 0.5;
  double base_click_rate = 0.15;
  double conversion_given_click = 0.1;
  double cart_given_click = 0.15;
  std::size_t max_behaviors = 20;
  std::size_t max_session_length = 10;
  std::uint64_t seed = 20211213;

  // Throws ConfigError.
  void validate() const;
};

struct SyntheticLogs {
  std::vector<ImpressionRecord> super_log;
  std::vector<ImpressionRecord> sub_log;
};

SyntheticLogs generate(const GeneratorConfig& config);

void generate_files(const GeneratorConfig& config, const std::string& super_path,
                    const std::string& sub_path);

}  // namespace keep::data
