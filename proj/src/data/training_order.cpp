#include "keep/data/training_order.hpp"

#include <algorithm>
#include <iostream>
#include <random>

#include "keep/error.hpp"

namespace keep::data {

DayRange DayRange::parse(const std::string& text) {
  DayRange r;
  try {
    const auto dash = text.find('-');
    if (dash == std::string::npos) {
      r.first = r.last = std::stoi(text);
    } else {
      r.first = std::stoi(text.substr(0, dash));
      r.last = std::stoi(text.substr(dash + 1));
    }
  } catch (const std::exception&) {
    throw ConfigError("bad day range '" + text + "'");
  }
  if (r.last < r.first) throw ConfigError("empty day range '" + text + "'");
  return r;
}

std::vector<DaySegment> iterate_training_order(
    std::span<const ImpressionRecord> log, DayRange range, std::uint64_t seed,
    std::vector<std::string>* warnings) {
  if (range.last < range.first) throw ConfigError("empty day range");
  std::vector<DaySegment> segments;
  for (std::int32_t d = range.first; d <= range.last; ++d) {
    segments.push_back({d, {}});
  }
  for (std::size_t k = 0; k < log.size(); ++k) {
    if (range.contains(log[k].day)) {
      segments[log[k].day - range.first].order.push_back(k);
    }
  }
  for (auto& seg : segments) {
    if (seg.order.empty()) {
      const std::string msg =
          "no records for day " + std::to_string(seg.day) + "; segment is empty";
      if (warnings) {
        warnings->push_back(msg);
      } else {
        std::cerr << "warning: " << msg << '\n';
      }
      continue;
    }
    // Per-day stream so a day's order does not depend on earlier days.
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (seg.day + 1)));
    std::shuffle(seg.order.begin(), seg.order.end(), rng);
  }
  return segments;
}

std::vector<std::size_t> flatten(const std::vector<DaySegment>& segments) {
  std::vector<std::size_t> out;
  for (const auto& s : segments) out.insert(out.end(), s.order.begin(), s.order.end());
  return out;
}

}  // namespace keep::data
