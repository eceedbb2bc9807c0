#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace keep::data {

enum class Domain : std::uint8_t { kSuper, kSub };

std::string_view domain_name(Domain d);

struct ImpressionRecord {
  Domain domain = Domain::kSuper;
  std::int32_t day = 0;
  std::uint64_t session_id = 0;
  std::uint64_t user_id = 0;
  std::uint64_t item_id = 0;
  std::uint64_t shop_id = 0;
  std::uint32_t category_id = 0;
  std::vector<std::uint64_t> behavior_seq;  // oldest first
  std::uint8_t click = 0;
  std::uint8_t conversion = 0;
  std::uint8_t cart = 0;

  bool operator==(const ImpressionRecord&) const = default;
};

// Throws InvalidArgument when conversion or cart is set without a click.
void validate(const ImpressionRecord& r);

// One JSON object per line, fields in declaration order.
std::string to_log_line(const ImpressionRecord& r);
ImpressionRecord parse_log_line(std::string_view line);

void write_log(std::ostream& out, const std::vector<ImpressionRecord>& records);
void write_log_file(const std::string& path,
                    const std::vector<ImpressionRecord>& records);
std::vector<ImpressionRecord> read_log(std::istream& in);
std::vector<ImpressionRecord> read_log_file(const std::string& path);

struct ItemInfo {
  std::uint64_t shop_id = 0;
  std::uint32_t category_id = 0;
};

// item -> (shop, category), consistent across every log the catalog saw.
class Catalog {
 public:
  void add(const ImpressionRecord& r);
  void add_all(const std::vector<ImpressionRecord>& records) {
    for (const auto& r : records) add(r);
  }
  const ItemInfo* find(std::uint64_t item) const;
  std::uint32_t category_of(std::uint64_t item) const;
  const std::unordered_map<std::uint64_t, ItemInfo>& items() const {
    return items_;
  }

 private:
  std::unordered_map<std::uint64_t, ItemInfo> items_;
};

}  // namespace keep::data
