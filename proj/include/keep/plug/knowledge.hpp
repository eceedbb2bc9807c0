#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "keep/data/record.hpp"
#include "keep/extractor/model.hpp"
#include "keep/nn/matrix.hpp"

namespace keep::plug {

// Produces one knowledge row per sub-domain record.
class KnowledgeSource {
 public:
  virtual ~KnowledgeSource() = default;
  virtual std::size_t dim() const = 0;
  // Resizes `out` to records.size() x dim(). Rows with missing pieces are
  // zero-filled in those slots; returns how many records had a miss.
  virtual std::size_t fill(std::span<const data::ImpressionRecord* const> records,
                           nn::Matrix& out) = 0;
};

// A user's super-domain click history as of the end of each day, used to
// build extractor inputs for records of the following day.
class UserProfiles {
 public:
  UserProfiles() = default;
  UserProfiles(std::span<const data::ImpressionRecord> super_log, std::size_t max_behaviors);

  // Clicks up to the end of day - 1, oldest first, at most max_behaviors.
  std::vector<std::uint64_t> before(std::uint64_t user, std::int32_t day) const;

 private:
  struct Entry {
    std::int32_t day;
    std::vector<std::uint64_t> seq;
  };
  std::unordered_map<std::uint64_t, std::vector<Entry>> by_user_;
};

// Which parts of [k_u ; k_i ; k_ui_clk ; k_ui_cv ; k_ui_cart] are plugged.
struct KnowledgeMask {
  bool user = true;
  bool item = true;
  bool interaction = true;
  std::array<bool, extractor::kNumTasks> tasks = {true, true, true};

  // Column indices kept from the full extractor knowledge vector.
  std::vector<std::size_t> columns(std::size_t user_dim, std::size_t item_dim,
                                   std::size_t interaction_dim) const;
  bool empty() const;

  // '+'-joined subset of {u, i, ui}, e.g. "u+i"; throws ConfigError.
  static KnowledgeMask parse(const std::string& text);
};

// Knowledge computed by a frozen extractor. The extractor sees the record's
// user, item, shop and category plus the user's super-domain profile.
class ExtractorKnowledge : public KnowledgeSource {
 public:
  ExtractorKnowledge(const extractor::ExtractorModel<float>& model,
                     const UserProfiles& profiles, KnowledgeMask mask = {},
                     const data::Catalog* catalog = nullptr);

  std::size_t dim() const override { return columns_.size(); }
  std::size_t fill(std::span<const data::ImpressionRecord* const> records,
                   nn::Matrix& out) override;

 private:
  const extractor::ExtractorModel<float>& model_;
  const UserProfiles& profiles_;
  const data::Catalog* catalog_;
  std::vector<std::size_t> columns_;
};

// Rows `cols` of every row of `full`.
nn::Matrix select_columns(const nn::Matrix& full, std::span<const std::size_t> cols);

}  // namespace keep::plug
