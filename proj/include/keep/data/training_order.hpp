#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "keep/data/record.hpp"

namespace keep::data {

struct DayRange {
  std::int32_t first = 0;
  std::int32_t last = 0;  // inclusive

  bool contains(std::int32_t d) const { return d >= first && d <= last; }
  // Parses "5", "5-6".
  static DayRange parse(const std::string& text);
};

struct DaySegment {
  std::int32_t day = 0;
  std::vector<std::size_t> order;  // indices into the log
};

// Single-epoch order: days ascending, a seeded uniform shuffle inside each
// day. A day with no records yields an empty segment and a warning.
std::vector<DaySegment> iterate_training_order(
    std::span<const ImpressionRecord> log, DayRange range, std::uint64_t seed,
    std::vector<std::string>* warnings = nullptr);

// Concatenated index stream across all segments.
std::vector<std::size_t> flatten(const std::vector<DaySegment>& segments);

}  // namespace keep::data
