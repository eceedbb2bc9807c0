#include "keep/gkc/store.hpp"

#include <algorithm>
#include <filesystem>

#include "keep/error.hpp"

namespace keep::gkc {

VersionStore::VersionStore(std::size_t capacity)
    : capacity_(capacity), list_(std::make_shared<const List>()) {
  if (capacity == 0) throw ConfigError("version store capacity must be > 0");
}

std::shared_ptr<const VersionStore::List> VersionStore::current() const {
  std::lock_guard lock(mu_);
  return list_;
}

std::uint32_t VersionStore::publish(std::shared_ptr<const KnowledgeSnapshot> snapshot) {
  if (!snapshot) throw InvalidArgument("publish: null snapshot");
  std::lock_guard lock(mu_);
  if (any_published_ && snapshot->version <= high_water_) {
    throw VersionError("version " + std::to_string(snapshot->version) +
                       " is not newer than " + std::to_string(high_water_));
  }
  auto next = std::make_shared<List>(*list_);
  next->push_back(std::move(snapshot));
  if (next->size() > capacity_) next->erase(next->begin(), next->end() - capacity_);
  high_water_ = next->back()->version;
  any_published_ = true;
  list_ = std::move(next);
  return high_water_;
}

std::vector<std::uint32_t> VersionStore::versions() const {
  std::vector<std::uint32_t> out;
  for (const auto& s : *current()) out.push_back(s->version);
  return out;
}

std::shared_ptr<const KnowledgeSnapshot> VersionStore::get(std::uint32_t version) const {
  for (const auto& s : *current()) {
    if (s->version == version) return s;
  }
  return nullptr;
}

LookupResponse VersionStore::lookup(std::span<const Quadruple> batch) {
  const auto list = current();
  auto find = [&](std::uint32_t v) -> const KnowledgeSnapshot* {
    for (const auto& s : *list) {
      if (s->version == v) return s.get();
    }
    return nullptr;
  };

  std::vector<const KnowledgeSnapshot*> resolved(batch.size());
  const KnowledgeSnapshot* shape = nullptr;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    resolved[k] = find(batch[k].version);
    if (resolved[k] == nullptr) continue;
    if (shape == nullptr) {
      shape = resolved[k];
    } else if (resolved[k]->d != shape->d || resolved[k]->d_uc != shape->d_uc) {
      throw VersionError("versions " + std::to_string(shape->version) + " and " +
                         std::to_string(resolved[k]->version) +
                         " have different dims; split the batch");
    }
  }

  LookupResponse out;
  out.dim_total = shape ? static_cast<std::uint32_t>(shape->composed_dim()) : 0;
  out.status.assign(batch.size(), EntryStatus::kOk);
  out.found_mask.assign(batch.size(), 0);
  out.values.assign(batch.size() * out.dim_total, 0.0f);
  if (shape == nullptr) {
    std::fill(out.status.begin(), out.status.end(), EntryStatus::kVersionGone);
    return out;
  }
  const std::size_t d = shape->d;
  const std::vector<float> zeros(std::max<std::size_t>(d, shape->d_uc), 0.0f);
  const std::span<const float> zd(zeros.data(), d), zuc(zeros.data(), shape->d_uc);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto* s = resolved[k];
    if (s == nullptr) {
      out.status[k] = EntryStatus::kVersionGone;
      continue;
    }
    const auto& q = batch[k];
    auto ku = s->user(q.user);
    auto ki = s->item(q.item);
    auto kuc = s->d_uc ? s->uc(q.user, q.category) : std::span<const float>{};
    std::uint8_t mask = 0;
    if (!ku.empty()) mask |= kFoundUser;
    if (!ki.empty()) mask |= kFoundItem;
    if (!kuc.empty()) mask |= kFoundUc;
    out.found_mask[k] = mask;
    serving::compose_into(ku.empty() ? zd : ku, ki.empty() ? zd : ki,
                          kuc.empty() ? zuc : kuc,
                          std::span<float>(out.values).subspan(k * out.dim_total, out.dim_total));
  }
  return out;
}

std::size_t load_snapshot_dir(VersionStore& store, const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("snapshot directory '" + dir + "' does not exist");
  std::vector<std::shared_ptr<const KnowledgeSnapshot>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".ksnp") continue;
    found.push_back(std::make_shared<const KnowledgeSnapshot>(
        serving::load_snapshot(entry.path().string())));
  }
  std::sort(found.begin(), found.end(),
            [](const auto& a, const auto& b) { return a->version < b->version; });
  for (auto& s : found) store.publish(s);
  return found.size();
}

ServiceKnowledge::ServiceKnowledge(KnowledgeService& service, std::uint32_t version,
                                   std::size_t d, std::size_t d_uc, ServingSlots slots)
    : service_(service), version_(version), composed_dim_(3 * d + d_uc) {
  want_ = kFoundUser | kFoundItem | (d_uc > 0 ? kFoundUc : 0);
  auto take = [&](bool keep, std::size_t from, std::size_t n) {
    for (std::size_t k = 0; keep && k < n; ++k) columns_.push_back(from + k);
  };
  take(slots.user, 0, d);
  take(slots.item, d, d);
  take(slots.product, 2 * d, d);
  take(slots.uc, 3 * d, d_uc);
  if (columns_.empty()) throw ConfigError("serving slot selection is empty");
}

std::size_t ServiceKnowledge::fill(std::span<const data::ImpressionRecord* const> records,
                                   nn::Matrix& out) {
  std::vector<Quadruple> q(records.size());
  for (std::size_t k = 0; k < records.size(); ++k) {
    q[k] = {records[k]->user_id, records[k]->item_id, records[k]->category_id, version_};
  }
  const auto resp = service_.lookup(q);
  if (resp.size() != records.size()) throw ProtocolError("lookup answered the wrong count");
  out.reset(records.size(), columns_.size());
  std::size_t misses = 0;
  for (std::size_t k = 0; k < records.size(); ++k) {
    if (resp.status[k] == EntryStatus::kVersionGone) {
      throw VersionError("knowledge version " + std::to_string(version_) + " is gone");
    }
    if (resp.dim_total != composed_dim_) {
      throw ShapeError("service returned " + std::to_string(resp.dim_total) +
                       " dims, expected " + std::to_string(composed_dim_));
    }
    if ((resp.found_mask[k] & want_) != want_) ++misses;
    const auto row = resp.row(k);
    for (std::size_t c = 0; c < columns_.size(); ++c) out(k, c) = row[columns_[c]];
  }
  return misses;
}

}  // namespace keep::gkc
