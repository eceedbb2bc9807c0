#include "keep/data/record.hpp"

#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>

#include "keep/error.hpp"

namespace keep::data {

using json = nlohmann::ordered_json;

std::string_view domain_name(Domain d) {
  return d == Domain::kSuper ? "super" : "sub";
}

void validate(const ImpressionRecord& r) {
  if (r.click > 1 || r.conversion > 1 || r.cart > 1) {
    throw InvalidArgument("labels must be binary");
  }
  if ((r.conversion || r.cart) && !r.click) {
    throw InvalidArgument("conversion/cart without click in session " +
                          std::to_string(r.session_id));
  }
}

std::string to_log_line(const ImpressionRecord& r) {
  json j;
  j["domain"] = domain_name(r.domain);
  j["day"] = r.day;
  j["session_id"] = r.session_id;
  j["user_id"] = r.user_id;
  j["item_id"] = r.item_id;
  j["shop_id"] = r.shop_id;
  j["category_id"] = r.category_id;
  j["behavior_seq"] = r.behavior_seq;
  j["click"] = r.click;
  j["conversion"] = r.conversion;
  j["cart"] = r.cart;
  return j.dump();
}

ImpressionRecord parse_log_line(std::string_view line) {
  ImpressionRecord r;
  try {
    const json j = json::parse(line);
    const auto dom = j.at("domain").get<std::string>();
    if (dom == "super") {
      r.domain = Domain::kSuper;
    } else if (dom == "sub") {
      r.domain = Domain::kSub;
    } else {
      throw InvalidArgument("unknown domain '" + dom + "'");
    }
    r.day = j.at("day").get<std::int32_t>();
    r.session_id = j.at("session_id").get<std::uint64_t>();
    r.user_id = j.at("user_id").get<std::uint64_t>();
    r.item_id = j.at("item_id").get<std::uint64_t>();
    r.shop_id = j.at("shop_id").get<std::uint64_t>();
    r.category_id = j.at("category_id").get<std::uint32_t>();
    r.behavior_seq = j.at("behavior_seq").get<std::vector<std::uint64_t>>();
    r.click = j.at("click").get<std::uint8_t>();
    r.conversion = j.at("conversion").get<std::uint8_t>();
    r.cart = j.at("cart").get<std::uint8_t>();
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed log line: ") + e.what());
  }
  validate(r);
  return r;
}

void write_log(std::ostream& out, const std::vector<ImpressionRecord>& records) {
  for (const auto& r : records) out << to_log_line(r) << '\n';
}

void write_log_file(const std::string& path,
                    const std::vector<ImpressionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_log(out, records);
  if (!out) throw IoError("write failed for " + path);
}

std::vector<ImpressionRecord> read_log(std::istream& in) {
  std::vector<ImpressionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_log_line(line));
  }
  return out;
}

std::vector<ImpressionRecord> read_log_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_log(in);
}

void Catalog::add(const ImpressionRecord& r) {
  auto [it, inserted] =
      items_.try_emplace(r.item_id, ItemInfo{r.shop_id, r.category_id});
  if (!inserted && (it->second.category_id != r.category_id || it->second.shop_id != r.shop_id)) {
    throw InvalidArgument("item " + std::to_string(r.item_id) + " seen as (shop " +
                          std::to_string(it->second.shop_id) + ", category " +
                          std::to_string(it->second.category_id) + ") and (shop " +
                          std::to_string(r.shop_id) + ", category " +
                          std::to_string(r.category_id) + ")");
  }
}

const ItemInfo* Catalog::find(std::uint64_t item) const {
  auto it = items_.find(item);
  return it == items_.end() ? nullptr : &it->second;
}

std::uint32_t Catalog::category_of(std::uint64_t item) const {
  const auto* info = find(item);
  if (info == nullptr) {
    throw InvalidArgument("item " + std::to_string(item) + " not in catalog");
  }
  return info->category_id;
}

}  // namespace keep::data
