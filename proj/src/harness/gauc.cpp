#include "keep/harness/gauc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "keep/error.hpp"

namespace keep::harness {

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Walk tie blocks in ascending score: each positive beats every negative
  // below its block and ties half of the negatives inside it.
  double wins = 0.0;
  std::size_t neg_below = 0, pos = 0, neg = 0;
  for (std::size_t k = 0; k < order.size();) {
    std::size_t end = k;
    std::size_t block_pos = 0, block_neg = 0;
    while (end < order.size() && scores[order[end]] == scores[order[k]]) {
      const auto l = labels[order[end]];
      if (l > 1) throw InvalidArgument("auc: labels must be 0 or 1");
      (l ? block_pos : block_neg) += 1;
      ++end;
    }
    wins += static_cast<double>(block_pos) *
            (static_cast<double>(neg_below) + 0.5 * static_cast<double>(block_neg));
    neg_below += block_neg;
    pos += block_pos;
    neg += block_neg;
    k = end;
  }
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::string group_label(std::size_t g) {
  switch (g) {
    case 0: return "[0,50)";
    case 1: return "[50,150)";
    case 2: return "[150,300)";
    case 3: return "300+";
  }
  throw InvalidArgument("no such user group");
}

std::size_t group_of(std::uint64_t clicks) {
  std::size_t g = 0;
  while (g < kGroupBounds.size() && clicks >= kGroupBounds[g]) ++g;
  return g;
}

GaucReport gauc(std::span<const ScoredImpression> rows,
                const std::function<std::uint64_t(std::uint64_t)>& user_clicks) {
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> by_user;
  std::vector<std::uint64_t> users;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].label > 1) throw InvalidArgument("gauc: labels must be 0 or 1");
    auto [it, fresh] = by_user.try_emplace(rows[k].user);
    if (fresh) users.push_back(rows[k].user);
    it->second.push_back(k);
  }
  // Summing in first-appearance order keeps the result independent of hash
  // iteration order.
  GaucReport rep;
  rep.total_impressions = rows.size();
  double num = 0.0;
  std::array<double, kNumGroups> gnum{};
  std::vector<double> s;
  std::vector<std::uint8_t> l;
  for (auto u : users) {
    const auto& idx = by_user[u];
    s.clear();
    l.clear();
    for (auto k : idx) {
      s.push_back(rows[k].score);
      l.push_back(rows[k].label);
    }
    const double a = auc(s, l);
    if (std::isnan(a)) {
      ++rep.excluded_users;
      continue;
    }
    const double w = static_cast<double>(idx.size());
    num += w * a;
    ++rep.users;
    rep.impressions += idx.size();
    if (user_clicks) {
      const auto g = group_of(user_clicks(u));
      gnum[g] += w * a;
      rep.groups[g].users += 1;
      rep.groups[g].impressions += idx.size();
    }
  }
  if (rep.users > 0) {
    rep.empty = false;
    rep.gauc = num / static_cast<double>(rep.impressions);
  }
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    if (rep.groups[g].impressions > 0) {
      rep.groups[g].empty = false;
      rep.groups[g].gauc = gnum[g] / static_cast<double>(rep.groups[g].impressions);
    }
  }
  return rep;
}

}  // namespace keep::harness
