#include "keep/serving/snapshot.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "keep/binary.hpp"
#include "keep/error.hpp"

namespace keep::serving {

void compose_into(std::span<const float> k_u, std::span<const float> k_i,
                  std::span<const float> k_uc, std::span<float> out) {
  if (k_u.size() != k_i.size()) {
    throw ShapeError("compose: user knowledge has " + std::to_string(k_u.size()) +
                     " dims, item knowledge " + std::to_string(k_i.size()));
  }
  const std::size_t d = k_u.size();
  if (out.size() != 3 * d + k_uc.size()) throw ShapeError("compose: output size mismatch");
  std::copy(k_u.begin(), k_u.end(), out.begin());
  std::copy(k_i.begin(), k_i.end(), out.begin() + d);
  for (std::size_t k = 0; k < d; ++k) out[2 * d + k] = k_u[k] * k_i[k];
  std::copy(k_uc.begin(), k_uc.end(), out.begin() + 3 * d);
}

std::vector<float> compose_serving_knowledge(std::span<const float> k_u,
                                             std::span<const float> k_i,
                                             std::span<const float> k_uc) {
  if (k_u.size() != k_i.size()) {
    throw ShapeError("compose: user knowledge has " + std::to_string(k_u.size()) +
                     " dims, item knowledge " + std::to_string(k_i.size()));
  }
  std::vector<float> out(3 * k_u.size() + k_uc.size());
  compose_into(k_u, k_i, k_uc, out);
  return out;
}

CacheEntryCounts count_cache_entries(std::uint64_t n_users, std::uint64_t n_items,
                                     std::uint64_t n_user_category_pairs) {
  using wide = unsigned __int128;
  constexpr wide limit = wide{1} << 63;
  const wide pairwise = wide{n_users} * n_items;
  const wide decomposed = wide{n_users} + n_items + n_user_category_pairs;
  if (pairwise > limit || decomposed > limit) {
    throw InvalidArgument("cache entry count exceeds 2^63");
  }
  return {static_cast<std::uint64_t>(pairwise), static_cast<std::uint64_t>(decomposed)};
}

namespace {

template <class Key>
std::span<const float> find_row(const std::vector<Key>& keys, const std::vector<float>& values,
                                std::size_t width, const Key& key) {
  auto it = std::lower_bound(keys.begin(), keys.end(), key);
  if (it == keys.end() || *it != key) return {};
  const auto r = static_cast<std::size_t>(it - keys.begin());
  return std::span<const float>(values).subspan(r * width, width);
}

template <class Key>
void sort_run(std::vector<Key>& keys, std::vector<float>& values, std::size_t width,
              const char* what) {
  if (values.size() != keys.size() * width) {
    throw ShapeError(std::string("snapshot ") + what + " values do not match key count");
  }
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return keys[a] < keys[b]; });
  std::vector<Key> k2;
  std::vector<float> v2;
  k2.reserve(keys.size());
  v2.reserve(values.size());
  for (auto o : order) {
    if (!k2.empty() && k2.back() == keys[o]) {
      throw InvalidArgument(std::string("snapshot has a duplicate ") + what + " key");
    }
    k2.push_back(keys[o]);
    v2.insert(v2.end(), values.begin() + o * width, values.begin() + (o + 1) * width);
  }
  keys = std::move(k2);
  values = std::move(v2);
}

}  // namespace

std::span<const float> KnowledgeSnapshot::user(std::uint64_t u) const {
  return find_row(user_keys, user_values, d, u);
}

std::span<const float> KnowledgeSnapshot::item(std::uint64_t i) const {
  return find_row(item_keys, item_values, d, i);
}

std::span<const float> KnowledgeSnapshot::uc(std::uint64_t u, std::uint32_t c) const {
  return find_row(uc_keys, uc_values, d_uc, UcKey{u, c});
}

void KnowledgeSnapshot::finalize() {
  sort_run(user_keys, user_values, d, "user");
  sort_run(item_keys, item_values, d, "item");
  sort_run(uc_keys, uc_values, d_uc, "user-category");
}

std::string encode_snapshot(const KnowledgeSnapshot& s) {
  ByteWriter w;
  w.bytes("KSNP");
  w.u32(kSnapshotFormatVersion);
  w.u32(s.version);
  w.u32(s.d);
  w.u32(s.d_uc);
  w.u64(s.timestamp);
  w.u64(s.user_keys.size());
  w.u64(s.item_keys.size());
  w.u64(s.uc_keys.size());
  for (std::size_t r = 0; r < s.user_keys.size(); ++r) {
    w.u64(s.user_keys[r]);
    w.f32s(std::span<const float>(s.user_values).subspan(r * s.d, s.d));
  }
  for (std::size_t r = 0; r < s.item_keys.size(); ++r) {
    w.u64(s.item_keys[r]);
    w.f32s(std::span<const float>(s.item_values).subspan(r * s.d, s.d));
  }
  for (std::size_t r = 0; r < s.uc_keys.size(); ++r) {
    w.u64(s.uc_keys[r].user);
    w.u32(s.uc_keys[r].category);
    w.f32s(std::span<const float>(s.uc_values).subspan(r * s.d_uc, s.d_uc));
  }
  return w.take();
}

KnowledgeSnapshot decode_snapshot(std::string_view bytes) {
  ByteReader<IoError> r(bytes);
  if (r.bytes(4) != "KSNP") throw IoError("not a knowledge snapshot (bad magic)");
  const auto format = r.u32();
  if (format != kSnapshotFormatVersion) {
    throw VersionError("snapshot format " + std::to_string(format) + ", expected " +
                       std::to_string(kSnapshotFormatVersion));
  }
  KnowledgeSnapshot s;
  s.version = r.u32();
  s.d = r.u32();
  s.d_uc = r.u32();
  s.timestamp = r.u64();
  const auto nu = r.u64(), ni = r.u64(), nuc = r.u64();
  const std::size_t row = 8 + 4 * static_cast<std::size_t>(s.d);
  const std::size_t uc_row = 12 + 4 * static_cast<std::size_t>(s.d_uc);
  if (nu > r.remaining() / row || ni > r.remaining() / row || nuc > r.remaining() / uc_row) {
    throw IoError("snapshot map sizes exceed the file");
  }
  auto read_f32s = [&](std::vector<float>& dst, std::size_t n) {
    const std::size_t at = dst.size();
    dst.resize(at + n);
    r.f32s(std::span<float>(dst).subspan(at, n));
  };
  for (std::uint64_t k = 0; k < nu; ++k) {
    s.user_keys.push_back(r.u64());
    read_f32s(s.user_values, s.d);
  }
  for (std::uint64_t k = 0; k < ni; ++k) {
    s.item_keys.push_back(r.u64());
    read_f32s(s.item_values, s.d);
  }
  for (std::uint64_t k = 0; k < nuc; ++k) {
    UcKey key;
    key.user = r.u64();
    key.category = r.u32();
    s.uc_keys.push_back(key);
    read_f32s(s.uc_values, s.d_uc);
  }
  if (r.remaining() != 0) throw IoError("trailing bytes after snapshot");
  auto sorted = [](const auto& keys) { return std::is_sorted(keys.begin(), keys.end()); };
  if (!sorted(s.user_keys) || !sorted(s.item_keys) || !sorted(s.uc_keys)) {
    throw IoError("snapshot keys are not sorted");
  }
  return s;
}

void save_snapshot(const std::string& path, const KnowledgeSnapshot& s) {
  write_file(path, encode_snapshot(s));
}

KnowledgeSnapshot load_snapshot(const std::string& path) {
  return decode_snapshot(read_file(path));
}

KnowledgeSnapshot build_snapshot(const TwoTower<float>& decomposed,
                                 const extractor::ExtractorModel<float>* degenerated,
                                 const data::Catalog* catalog, const SnapshotInputs& in,
                                 std::uint32_t version, std::uint64_t timestamp) {
  if (in.users.size() != in.user_behaviors.size()) {
    throw ShapeError("snapshot inputs: users and behaviors differ in length");
  }
  KnowledgeSnapshot s;
  s.version = version;
  s.timestamp = timestamp;
  s.d = static_cast<std::uint32_t>(decomposed.dim());

  s.user_keys = in.users;
  if (!in.users.empty()) {
    const auto ku = decomposed.user_knowledge(in.users, in.user_behaviors);
    s.user_values.assign(ku.data().begin(), ku.data().end());
  }
  s.item_keys = in.items;
  if (!in.items.empty()) {
    const auto ki = decomposed.item_knowledge(in.items, in.item_shops, in.item_categories);
    s.item_values.assign(ki.data().begin(), ki.data().end());
  }

  if (degenerated != nullptr) {
    if (degenerated->variant() != extractor::Variant::kDegenerated) {
      throw InvalidArgument("build_snapshot expects a degenerated extractor");
    }
    const std::size_t ud = degenerated->config().user_dim;
    s.d_uc = static_cast<std::uint32_t>(degenerated->knowledge_dim() - ud);
    std::unordered_map<std::uint64_t, std::size_t> user_row;
    for (std::size_t k = 0; k < in.users.size(); ++k) user_row.emplace(in.users[k], k);
    std::vector<extractor::Example> ex(in.uc_pairs.size());
    std::vector<const extractor::Example*> ptrs;
    for (std::size_t k = 0; k < in.uc_pairs.size(); ++k) {
      data::ImpressionRecord probe;
      probe.user_id = in.uc_pairs[k].user;
      probe.category_id = in.uc_pairs[k].category;
      if (auto it = user_row.find(probe.user_id); it != user_row.end()) {
        probe.behavior_seq = in.user_behaviors[it->second];
      }
      ex[k] = extractor::to_example(probe, extractor::Variant::kDegenerated, catalog);
      ptrs.push_back(&ex[k]);
    }
    s.uc_keys = in.uc_pairs;
    if (!ptrs.empty()) {
      const auto full = degenerated->extract(ptrs);
      s.uc_values.reserve(ptrs.size() * s.d_uc);
      for (std::size_t r = 0; r < full.rows(); ++r) {
        auto row = full.row(r);
        s.uc_values.insert(s.uc_values.end(), row.begin() + ud, row.end());
      }
    }
  }
  s.finalize();
  return s;
}

}  // namespace keep::serving
