#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "keep/data/record.hpp"
#include "keep/data/training_order.hpp"
#include "keep/harness/gauc.hpp"
#include "keep/nn/matrix.hpp"
#include "keep/plug/downstream.hpp"

namespace keep::harness {

struct OnlineConfig {
  plug::DownstreamConfig model;
  std::size_t knowledge_dim = 0;  // 0 trains the unplugged model
  nn::AdamConfig adam;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  data::DayRange train_days{5, 6};
  std::uint32_t knowledge_version = 0;
};

// Called once per training day before it is consumed. Returns a matrix whose
// row k is the knowledge for log[k] (only rows of that day are read), or
// null for the unplugged model.
using DayKnowledge = std::function<const nn::Matrix*(std::int32_t day)>;

struct DayLog {
  std::int32_t day = 0;
  std::size_t steps = 0;
  std::size_t impressions = 0;
  double mean_loss = 0.0;
};

struct OnlineResult {
  std::string checkpoint;  // encoded checkpoint after the last day
  std::vector<DayLog> days;
};

// Day-by-day training: each day starts a fresh trainer warm-started from the
// previous day's checkpoint (or `resume`, when given), consumes the day once
// in iterate_training_order order and checkpoints. A resume checkpoint must
// sit exactly one day before train_days.first.
OnlineResult run_online_loop(const OnlineConfig& config,
                             std::span<const data::ImpressionRecord> log,
                             const DayKnowledge& knowledge,
                             const std::string* resume = nullptr);

// Click logits for `records` from the model in `checkpoint`. knowledge rows align with
// records (null for the unplugged model).
std::vector<float> score_records(const OnlineConfig& config, const std::string& checkpoint,
                                 std::span<const data::ImpressionRecord* const> records,
                                 const nn::Matrix* knowledge);

std::vector<ScoredImpression> to_scored(std::span<const data::ImpressionRecord* const> records,
                                        std::span<const float> scores);

}  // namespace keep::harness
