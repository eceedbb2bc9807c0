#include "keep/extractor/pretrain.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace keep::extractor {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

bool in_task_set(const Example& e, Task t) {
  return t == Task::kClick || e.label(Task::kClick) == 1;
}

bool is_positive(const Example& e, Task t) {
  return in_task_set(e, t) && e.label(t) == 1;
}

bool is_negative(const Example& e, Task t) {
  return in_task_set(e, t) && e.label(t) == 0;
}

}  // namespace

std::vector<std::size_t> sample_negatives(std::span<const Example* const> session,
                                          std::size_t pos, Task task,
                                          std::size_t cap, std::uint64_t seed) {
  std::vector<std::size_t> negatives;
  for (std::size_t k = 0; k < session.size(); ++k) {
    if (is_negative(*session[k], task)) negatives.push_back(k);
  }
  if (negatives.empty() || cap == 0) return {};
  const std::size_t take = std::min(cap, negatives.size());
  std::mt19937_64 rng(mix(seed ^ mix(session[pos]->session) ^
                          mix(pos * 3 + static_cast<std::size_t>(task))));
  // Partial Fisher-Yates: the first `take` slots are a uniform sample.
  for (std::size_t k = 0; k < take; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, negatives.size() - 1);
    std::swap(negatives[k], negatives[pick(rng)]);
  }
  negatives.resize(take);
  return negatives;
}

TripletBatch build_triplets(std::span<const Example* const> session, Task task,
                            std::size_t cap, std::uint64_t seed) {
  for (const auto* e : session) {
    if (e->user != session.front()->user || e->session != session.front()->session) {
      throw InvalidArgument("build_triplets: records span several users or sessions");
    }
  }
  TripletBatch out;
  for (std::size_t p = 0; p < session.size(); ++p) {
    if (!is_positive(*session[p], task)) continue;
    for (auto n : sample_negatives(session, p, task, cap, seed)) out.push_back({p, n});
  }
  return out;
}

std::span<const Example* const> SessionIndex::session(std::uint64_t id) const {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return {};
  return it->second;
}

JointBatch assemble_joint_batch(std::span<const Example* const> impressions,
                                const SessionIndex* sessions,
                                const PretrainConfig& config) {
  JointBatch b;
  b.examples.assign(impressions.begin(), impressions.end());
  for (auto t : kAllTasks) {
    const auto ti = static_cast<std::size_t>(t);
    if (!config.tasks[ti]) continue;
    for (std::size_t r = 0; r < impressions.size(); ++r) {
      if (in_task_set(*impressions[r], t)) b.rows[ti].push_back(r);
    }
    b.pointwise_count[ti] = b.rows[ti].size();
    if (sessions == nullptr || config.alpha == 0.0) continue;
    for (std::size_t k = 0; k < b.pointwise_count[ti]; ++k) {
      const Example* e = impressions[b.rows[ti][k]];
      if (!is_positive(*e, t)) continue;
      auto session = sessions->session(e->session);
      auto at = std::find(session.begin(), session.end(), e);
      if (at == session.end()) continue;
      const auto pos = static_cast<std::size_t>(at - session.begin());
      for (auto n : sample_negatives(session, pos, t, config.triplet_cap, config.seed)) {
        b.examples.push_back(session[n]);
        b.rows[ti].push_back(b.examples.size() - 1);
        b.pairs[ti].emplace_back(k, b.rows[ti].size() - 1);
      }
    }
  }
  return b;
}

template <class T>
TaskLosses joint_loss(ExtractorModel<T>& model, const JointBatch& batch,
                      double alpha, bool accumulate) {
  if (alpha < 0.0) throw InvalidArgument("alpha must be >= 0");
  TaskLosses out;
  const auto f = model.forward(batch.examples, batch.rows);
  std::array<std::vector<T>, kNumTasks> dlogits;
  for (auto t : kAllTasks) {
    const auto ti = static_cast<std::size_t>(t);
    if (batch.rows[ti].empty()) continue;
    const auto s = model.logits(f, t);
    auto& d = dlogits[ti];
    d.assign(s.size(), T{0});

    std::vector<double> logit(batch.pointwise_count[ti]), label(batch.pointwise_count[ti]);
    for (std::size_t k = 0; k < logit.size(); ++k) {
      logit[k] = static_cast<double>(s[k]);
      label[k] = batch.examples[batch.rows[ti][k]]->label(t);
      d[k] = static_cast<T>(pointwise_grad(logit[k], label[k]));
    }
    out.pointwise[ti] = pointwise_loss(logit, label);

    std::vector<LogitPair> pairs;
    pairs.reserve(batch.pairs[ti].size());
    for (const auto& [p, n] : batch.pairs[ti]) {
      LogitPair lp{static_cast<double>(s[p]), static_cast<double>(s[n])};
      pairs.push_back(lp);
      const double g = alpha * pairwise_grad_pos(lp);
      d[p] += static_cast<T>(g);
      d[n] -= static_cast<T>(g);
    }
    out.pairwise[ti] = pairwise_loss(pairs);
    out.total[ti] = hybrid_loss(out.pointwise[ti], out.pairwise[ti], alpha);
    out.examples[ti] = batch.pointwise_count[ti];
    out.triplets[ti] = pairs.size();
    out.joint += out.total[ti];
  }
  if (accumulate) model.backward(f, dlogits);
  return out;
}

template TaskLosses joint_loss<float>(ExtractorModel<float>&, const JointBatch&,
                                      double, bool);
template TaskLosses joint_loss<double>(ExtractorModel<double>&, const JointBatch&,
                                       double, bool);

TaskLosses pretrain_step(ExtractorModel<float>& model, nn::Adam& adam,
                         std::span<const Example* const> impressions,
                         const SessionIndex* sessions, const PretrainConfig& config) {
  const auto batch = assemble_joint_batch(impressions, sessions, config);
  model.zero_grad();
  auto losses = joint_loss(model, batch, config.alpha, /*accumulate=*/true);
  adam.step(model.params());
  return losses;
}

PretrainProgress pretrain(ExtractorModel<float>& model, nn::Adam& adam,
                          std::span<const data::ImpressionRecord> log,
                          data::DayRange days, const PretrainConfig& config,
                          const data::Catalog* catalog) {
  if (config.batch_size == 0) throw ConfigError("batch_size must be > 0");
  const auto segments = data::iterate_training_order(log, days, config.seed);
  PretrainProgress progress;
  std::vector<double> step_means;

  for (const auto& seg : segments) {
    if (seg.order.empty()) continue;
    // Examples and the session index are built in log order so that triplet
    // sampling does not depend on the shuffle.
    std::vector<std::size_t> in_log_order = seg.order;
    std::sort(in_log_order.begin(), in_log_order.end());
    std::vector<Example> examples;
    examples.reserve(in_log_order.size());
    std::unordered_map<std::size_t, std::size_t> slot;
    slot.reserve(in_log_order.size());
    for (auto idx : in_log_order) {
      slot[idx] = examples.size();
      examples.push_back(to_example(log[idx], model.variant(), catalog));
    }
    SessionIndex sessions;
    for (const auto& e : examples) sessions.add(&e);

    std::vector<const Example*> batch;
    for (std::size_t start = 0; start < seg.order.size(); start += config.batch_size) {
      const std::size_t end = std::min(seg.order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(&examples[slot[seg.order[k]]]);
      const auto losses = pretrain_step(model, adam, batch, &sessions, config);
      step_means.push_back(losses.joint / static_cast<double>(batch.size()));
      progress.impressions += batch.size();
      ++progress.steps;
    }
  }
  if (!step_means.empty()) {
    const std::size_t tenth = std::max<std::size_t>(1, step_means.size() / 10);
    progress.first_mean_loss =
        std::accumulate(step_means.begin(), step_means.begin() + tenth, 0.0) / tenth;
    progress.last_mean_loss =
        std::accumulate(step_means.end() - tenth, step_means.end(), 0.0) / tenth;
  }
  return progress;
}

}  // namespace keep::extractor
