#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "keep/gkc/protocol.hpp"
#include "keep/plug/knowledge.hpp"
#include "keep/serving/snapshot.hpp"

namespace keep::gkc {

using serving::KnowledgeSnapshot;

// Anything that answers batched quadruple lookups: the in-process store or
// a network client.
class KnowledgeService {
 public:
  virtual ~KnowledgeService() = default;
  virtual LookupResponse lookup(std::span<const Quadruple> batch) = 0;
};

// Retains the newest `capacity` snapshots. Publishing swaps in a new
// immutable version list; a lookup batch pins one list for its duration, so
// each response is served from a consistent set of snapshots.
class VersionStore : public KnowledgeService {
 public:
  explicit VersionStore(std::size_t capacity = 5);

  std::size_t capacity() const { return capacity_; }
  // Throws VersionError unless snapshot->version exceeds every version ever
  // published; evicts the oldest when over capacity.
  std::uint32_t publish(std::shared_ptr<const KnowledgeSnapshot> snapshot);
  std::uint32_t publish(KnowledgeSnapshot snapshot) {
    return publish(std::make_shared<const KnowledgeSnapshot>(std::move(snapshot)));
  }

  std::vector<std::uint32_t> versions() const;
  std::shared_ptr<const KnowledgeSnapshot> get(std::uint32_t version) const;

  // Entries whose version is not retained get VERSION_GONE and zeros. All
  // retained snapshots referenced by one batch must share dims.
  LookupResponse lookup(std::span<const Quadruple> batch) override;

 private:
  using List = std::vector<std::shared_ptr<const KnowledgeSnapshot>>;
  std::shared_ptr<const List> current() const;

  std::size_t capacity_;
  mutable std::mutex mu_;
  std::shared_ptr<const List> list_;
  std::uint32_t high_water_ = 0;
  bool any_published_ = false;
};

// Publishes every "*.ksnp" file in `dir` in version order; returns how many.
std::size_t load_snapshot_dir(VersionStore& store, const std::string& dir);

// Which composed slots a ServiceKnowledge source keeps.
struct ServingSlots {
  bool user = true;
  bool item = true;
  bool product = true;
  bool uc = true;
};

// Knowledge rows fetched from a service at a fixed version: for each record
// the quadruple (user, item, category, version) is looked up and the
// selected slots of the composed [k_u ; k_i ; k_u * k_i ; k_uc] row are copied out.
class ServiceKnowledge : public plug::KnowledgeSource {
 public:
  ServiceKnowledge(KnowledgeService& service, std::uint32_t version, std::size_t d,
                   std::size_t d_uc, ServingSlots slots = {});

  void set_version(std::uint32_t v) { version_ = v; }
  std::uint32_t version() const { return version_; }
  std::size_t dim() const override { return columns_.size(); }
  // Missing keys count as misses (zero rows in that slot); a VERSION_GONE
  // entry throws VersionError.
  std::size_t fill(std::span<const data::ImpressionRecord* const> records,
                   nn::Matrix& out) override;

 private:
  KnowledgeService& service_;
  std::uint32_t version_;
  std::size_t composed_dim_;
  std::uint8_t want_ = 0;
  std::vector<std::size_t> columns_;
};

}  // namespace keep::gkc
