#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace keep::harness {

struct ScoredImpression {
  std::uint64_t user = 0;
  double score = 0.0;
  std::uint8_t label = 0;
};

// Plain AUC by pair counting; ties earn 0.5. Returns NaN when one class is
// missing.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

inline constexpr std::array<std::uint64_t, 3> kGroupBounds = {50, 150, 300};
inline constexpr std::size_t kNumGroups = 4;
std::string group_label(std::size_t g);  // "[0,50)", ..., "300+"
std::size_t group_of(std::uint64_t clicks);

struct GroupStat {
  double gauc = 0.0;
  bool empty = true;
  std::size_t users = 0;        // eligible users
  std::size_t impressions = 0;  // impressions of eligible users
};

struct GaucReport {
  bool empty = true;  // no eligible user
  double gauc = 0.0;
  std::size_t users = 0;
  std::size_t excluded_users = 0;  // all-positive or all-negative
  std::size_t impressions = 0;     // weight denominator
  std::size_t total_impressions = 0;
  std::array<GroupStat, kNumGroups> groups{};
};

// Impression-weighted mean of per-user AUC over users with both labels.
// `user_clicks` (optional) assigns users to activity groups.
GaucReport gauc(std::span<const ScoredImpression> rows,
                const std::function<std::uint64_t(std::uint64_t)>& user_clicks = {});

}  // namespace keep::harness
