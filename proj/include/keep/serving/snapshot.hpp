#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "keep/data/record.hpp"
#include "keep/extractor/model.hpp"
#include "keep/serving/two_tower.hpp"

namespace keep::serving {

// [k_u ; k_i ; k_u * k_i ; k_uc]. Throws ShapeError when dim(k_u) != dim(k_i).
std::vector<float> compose_serving_knowledge(std::span<const float> k_u,
                                             std::span<const float> k_i,
                                             std::span<const float> k_uc);
// Writes the composition into `out` (size 3d + d_uc).
void compose_into(std::span<const float> k_u, std::span<const float> k_i,
                  std::span<const float> k_uc, std::span<float> out);

struct CacheEntryCounts {
  std::uint64_t pairwise = 0;    // N_u * N_i
  std::uint64_t decomposed = 0;  // N_u + N_i + N_uc
};

// Exact counts; throws InvalidArgument when either exceeds 2^63.
CacheEntryCounts count_cache_entries(std::uint64_t n_users, std::uint64_t n_items,
                                     std::uint64_t n_user_category_pairs);

struct UcKey {
  std::uint64_t user = 0;
  std::uint32_t category = 0;
  auto operator<=>(const UcKey&) const = default;
};

// Immutable once published. Keys are kept sorted; values are row-major
// float runs of width d (users, items) or d_uc (user-category pairs).
struct KnowledgeSnapshot {
  std::uint32_t version = 0;
  std::uint64_t timestamp = 0;
  std::uint32_t d = 0;
  std::uint32_t d_uc = 0;
  std::vector<std::uint64_t> user_keys;
  std::vector<float> user_values;
  std::vector<std::uint64_t> item_keys;
  std::vector<float> item_values;
  std::vector<UcKey> uc_keys;
  std::vector<float> uc_values;

  std::size_t entry_count() const {
    return user_keys.size() + item_keys.size() + uc_keys.size();
  }
  std::size_t composed_dim() const { return 3 * static_cast<std::size_t>(d) + d_uc; }
  // Empty span when the key is absent.
  std::span<const float> user(std::uint64_t u) const;
  std::span<const float> item(std::uint64_t i) const;
  std::span<const float> uc(std::uint64_t u, std::uint32_t c) const;

  // Sorts keys (carrying values along) and rejects duplicates / bad sizes.
  void finalize();
};

inline constexpr std::uint32_t kSnapshotFormatVersion = 1;

// "KSNP" | u32 format | u32 version | u32 d | u32 d_uc | u64 timestamp |
// u64 n_users | u64 n_items | u64 n_uc | n_users x (u64, d f32) |
// n_items x (u64, d f32) | n_uc x (u64 user, u32 cat, d_uc f32); little-endian.
std::string encode_snapshot(const KnowledgeSnapshot& s);
KnowledgeSnapshot decode_snapshot(std::string_view bytes);
void save_snapshot(const std::string& path, const KnowledgeSnapshot& s);
KnowledgeSnapshot load_snapshot(const std::string& path);

struct SnapshotInputs {
  std::vector<std::uint64_t> users;
  std::vector<std::vector<std::uint64_t>> user_behaviors;  // item ids, per user
  std::vector<std::uint64_t> items;
  std::vector<std::uint64_t> item_shops;
  std::vector<std::uint32_t> item_categories;
  std::vector<UcKey> uc_pairs;
};

// K̂_u and K̂_i from the two towers; K̂_uc (all task heads' interaction
// layers, concatenated) from the degenerated extractor when given. The
// catalog maps behavior items to categories for the degenerated model.
KnowledgeSnapshot build_snapshot(const TwoTower<float>& decomposed,
                                 const extractor::ExtractorModel<float>* degenerated,
                                 const data::Catalog* catalog, const SnapshotInputs& inputs,
                                 std::uint32_t version, std::uint64_t timestamp = 0);

}  // namespace keep::serving
