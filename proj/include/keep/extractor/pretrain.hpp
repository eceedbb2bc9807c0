#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "keep/data/record.hpp"
#include "keep/data/training_order.hpp"
#include "keep/extractor/losses.hpp"
#include "keep/extractor/model.hpp"
#include "keep/nn/adam.hpp"

namespace keep::extractor {

struct PretrainConfig {
  double alpha = 0.25;
  std::size_t batch_size = 2000;
  double lr = 0.001;
  std::size_t triplet_cap = 3;
  std::array<bool, kNumTasks> tasks = {true, true, true};
  std::uint64_t seed = 1;
};

// (pos, neg) index pair into the session the triplet was built from.
struct Triplet {
  std::size_t pos = 0;
  std::size_t neg = 0;
};
using TripletBatch = std::vector<Triplet>;

// Pairs each positive of `task` in one user-session with up to `cap`
// negatives drawn without replacement. For conversion/cart only clicked
// records take part. Sampling is seeded per (seed, session, positive), so the
// result does not depend on which other positives are present.
TripletBatch build_triplets(std::span<const Example* const> session, Task task,
                            std::size_t cap, std::uint64_t seed);

// Negatives paired with one positive (session[pos]).
std::vector<std::size_t> sample_negatives(std::span<const Example* const> session,
                                          std::size_t pos, Task task,
                                          std::size_t cap, std::uint64_t seed);

// All examples of one day grouped by session id.
class SessionIndex {
 public:
  void add(const Example* e) { sessions_[e->session].push_back(e); }
  std::span<const Example* const> session(std::uint64_t id) const;

 private:
  std::unordered_map<std::uint64_t, std::vector<const Example*>> sessions_;
};

// Everything one joint-loss evaluation needs. rows[t] are the examples fed
// through head t; the first pointwise_count[t] of them carry the pointwise
// term, and pairs[t] holds (pos, neg) positions into rows[t].
struct JointBatch {
  std::vector<const Example*> examples;
  TaskRows rows;
  std::array<std::size_t, kNumTasks> pointwise_count{};
  std::array<std::vector<std::pair<std::size_t, std::size_t>>, kNumTasks> pairs;
};

// Click rows are all impressions; conversion/cart rows are the clicked
// impressions. With a session index, pairwise partners are appended as extra
// rows that take part only in the pairwise term.
JointBatch assemble_joint_batch(std::span<const Example* const> impressions,
                                const SessionIndex* sessions,
                                const PretrainConfig& config);

struct TaskLosses {
  std::array<double, kNumTasks> pointwise{};
  std::array<double, kNumTasks> pairwise{};
  std::array<double, kNumTasks> total{};  // per-task hybrid loss
  std::array<std::size_t, kNumTasks> examples{};
  std::array<std::size_t, kNumTasks> triplets{};
  double joint = 0.0;
};

// Joint loss sum_t (L_point_t + alpha * L_pair_t). When `accumulate` is set
// the gradient is added into the model's param grads.
template <class T>
TaskLosses joint_loss(ExtractorModel<T>& model, const JointBatch& batch,
                      double alpha, bool accumulate);

// zero_grad, joint loss + gradient, one Adam step.
TaskLosses pretrain_step(ExtractorModel<float>& model, nn::Adam& adam,
                         std::span<const Example* const> impressions,
                         const SessionIndex* sessions, const PretrainConfig& config);

struct PretrainProgress {
  std::size_t steps = 0;
  std::size_t impressions = 0;
  double first_mean_loss = 0.0;  // per-impression joint loss, first 10% of steps
  double last_mean_loss = 0.0;   // last 10% of steps
};

// One epoch over `log` restricted to `days`, in iterate_training_order order.
// A catalog is required for the degenerated variant.
PretrainProgress pretrain(ExtractorModel<float>& model, nn::Adam& adam,
                          std::span<const data::ImpressionRecord> log,
                          data::DayRange days, const PretrainConfig& config,
                          const data::Catalog* catalog = nullptr);

}  // namespace keep::extractor
