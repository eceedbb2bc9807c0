#include "keep/plug/knowledge.hpp"

#include <algorithm>

#include "keep/error.hpp"
#include "keep/kv.hpp"

namespace keep::plug {

UserProfiles::UserProfiles(std::span<const data::ImpressionRecord> super_log,
                           std::size_t max_behaviors) {
  // Records of one user are in time order within the log, so the history
  // after each record is its own behavior_seq plus itself when clicked.
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> current;
  for (const auto& r : super_log) {
    auto& seq = current[r.user_id];
    seq = r.behavior_seq;
    if (r.click) {
      seq.push_back(r.item_id);
      if (seq.size() > max_behaviors) seq.erase(seq.begin(), seq.end() - max_behaviors);
    }
    auto& entries = by_user_[r.user_id];
    if (!entries.empty() && entries.back().day > r.day) {
      throw InvalidArgument("super-domain log is not in day order for user " +
                            std::to_string(r.user_id));
    }
    if (entries.empty() || entries.back().day != r.day) {
      entries.push_back({r.day, seq});
    } else {
      entries.back().seq = seq;
    }
  }
}

std::vector<std::uint64_t> UserProfiles::before(std::uint64_t user, std::int32_t day) const {
  auto it = by_user_.find(user);
  if (it == by_user_.end()) return {};
  const auto& entries = it->second;
  auto pos = std::lower_bound(entries.begin(), entries.end(), day,
                              [](const Entry& e, std::int32_t d) { return e.day < d; });
  if (pos == entries.begin()) return {};
  return std::prev(pos)->seq;
}

std::vector<std::size_t> KnowledgeMask::columns(std::size_t user_dim, std::size_t item_dim,
                                                std::size_t interaction_dim) const {
  std::vector<std::size_t> cols;
  std::size_t at = 0;
  auto take = [&](bool keep, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      if (keep) cols.push_back(at + k);
    }
    at += n;
  };
  take(user, user_dim);
  take(item, item_dim);
  for (std::size_t t = 0; t < extractor::kNumTasks; ++t) {
    take(interaction && tasks[t], interaction_dim);
  }
  return cols;
}

KnowledgeMask KnowledgeMask::parse(const std::string& text) {
  KnowledgeMask m;
  m.user = m.item = m.interaction = false;
  for (const auto& part : split(text, '+')) {
    if (part == "u") {
      m.user = true;
    } else if (part == "i") {
      m.item = true;
    } else if (part == "ui") {
      m.interaction = true;
    } else {
      throw ConfigError("knowledge parts '" + text + "': unknown part '" + part + "'");
    }
  }
  if (m.empty()) throw ConfigError("knowledge parts '" + text + "' select nothing");
  return m;
}

bool KnowledgeMask::empty() const {
  const bool any_task = std::any_of(tasks.begin(), tasks.end(), [](bool b) { return b; });
  return !user && !item && !(interaction && any_task);
}

nn::Matrix select_columns(const nn::Matrix& full, std::span<const std::size_t> cols) {
  nn::Matrix out(full.rows(), cols.size());
  for (std::size_t r = 0; r < full.rows(); ++r) {
    for (std::size_t k = 0; k < cols.size(); ++k) out(r, k) = full(r, cols[k]);
  }
  return out;
}

ExtractorKnowledge::ExtractorKnowledge(const extractor::ExtractorModel<float>& model,
                                       const UserProfiles& profiles, KnowledgeMask mask,
                                       const data::Catalog* catalog)
    : model_(model), profiles_(profiles), catalog_(catalog) {
  columns_ = mask.columns(model.config().user_dim, model.item_knowledge_dim(),
                          model.interaction_dim());
  if (columns_.empty()) throw ConfigError("knowledge mask selects nothing");
}

std::size_t ExtractorKnowledge::fill(std::span<const data::ImpressionRecord* const> records,
                                     nn::Matrix& out) {
  std::vector<extractor::Example> examples;
  examples.reserve(records.size());
  for (const auto* r : records) {
    data::ImpressionRecord probe = *r;
    probe.behavior_seq = profiles_.before(r->user_id, r->day);
    examples.push_back(extractor::to_example(probe, model_.variant(), catalog_));
  }
  std::vector<const extractor::Example*> ptrs;
  ptrs.reserve(examples.size());
  for (const auto& e : examples) ptrs.push_back(&e);
  const auto full = model_.extract(ptrs);
  out = select_columns(full, columns_);
  return 0;
}

}  // namespace keep::plug
