#include "keep/harness/online.hpp"

#include "keep/error.hpp"
#include "keep/nn/checkpoint.hpp"

namespace keep::harness {

namespace {

void gather_rows(const nn::Matrix& all, std::span<const std::size_t> idx, nn::Matrix& out) {
  out.reset(idx.size(), all.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= all.rows()) throw ShapeError("knowledge matrix is shorter than the log");
    auto src = all.row(idx[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
}

}  // namespace

OnlineResult run_online_loop(const OnlineConfig& config,
                             std::span<const data::ImpressionRecord> log,
                             const DayKnowledge& knowledge, const std::string* resume) {
  if (config.batch_size == 0) throw ConfigError("batch_size must be > 0");
  OnlineResult result;
  std::optional<std::string> previous;
  std::int64_t previous_day = config.train_days.first - 1;
  if (resume != nullptr) {
    const auto ck = nn::decode_checkpoint(*resume);
    if (ck.cursor_day != previous_day) {
      throw StateError("checkpoint gap: resume checkpoint ends at day " +
                       std::to_string(ck.cursor_day) + ", training starts at day " +
                       std::to_string(config.train_days.first));
    }
    previous = *resume;
  }

  for (std::int32_t day = config.train_days.first; day <= config.train_days.last; ++day) {
    plug::Trainer trainer(config.model, config.knowledge_dim, config.adam);
    if (previous) {
      const auto ck = nn::decode_checkpoint(*previous);
      if (ck.cursor_day != day - 1) {
        throw StateError("checkpoint gap before day " + std::to_string(day));
      }
      trainer.warm_start(ck);
    }
    const nn::Matrix* k_all = knowledge ? knowledge(day) : nullptr;
    if (config.knowledge_dim > 0 && k_all == nullptr) {
      throw StateError("plugged training needs knowledge for day " + std::to_string(day));
    }
    const auto segments = data::iterate_training_order(log, {day, day}, config.seed);
    DayLog dl;
    dl.day = day;
    double loss_sum = 0.0;
    std::vector<extractor::Example> ex;
    std::vector<const extractor::Example*> ptrs;
    nn::Matrix kb;
    for (const auto& seg : segments) {
      for (std::size_t start = 0; start < seg.order.size(); start += config.batch_size) {
        const std::size_t end = std::min(seg.order.size(), start + config.batch_size);
        const std::span<const std::size_t> idx(seg.order.data() + start, end - start);
        ex.clear();
        ptrs.clear();
        for (auto i : idx) ex.push_back(extractor::to_example(log[i], extractor::Variant::kFull));
        for (const auto& e : ex) ptrs.push_back(&e);
        if (k_all != nullptr && config.knowledge_dim > 0) gather_rows(*k_all, idx, kb);
        loss_sum += trainer.train_step(ptrs, config.knowledge_dim > 0 ? &kb : nullptr);
        dl.impressions += idx.size();
        ++dl.steps;
      }
    }
    dl.mean_loss = dl.impressions ? loss_sum / static_cast<double>(dl.impressions) : 0.0;
    result.days.push_back(dl);
    previous = nn::encode_checkpoint(trainer.checkpoint(day, config.knowledge_version));
    previous_day = day;
  }
  if (!previous) throw ConfigError("empty training window");
  result.checkpoint = *previous;
  return result;
}

std::vector<float> score_records(const OnlineConfig& config, const std::string& checkpoint,
                                 std::span<const data::ImpressionRecord* const> records,
                                 const nn::Matrix* knowledge) {
  plug::Trainer trainer(config.model, config.knowledge_dim, config.adam);
  trainer.warm_start(nn::decode_checkpoint(checkpoint));
  std::vector<float> out;
  out.reserve(records.size());
  constexpr std::size_t kChunk = 4096;
  std::vector<extractor::Example> ex;
  std::vector<const extractor::Example*> ptrs;
  nn::Matrix kb;
  for (std::size_t start = 0; start < records.size(); start += kChunk) {
    const std::size_t end = std::min(records.size(), start + kChunk);
    ex.clear();
    ptrs.clear();
    for (std::size_t k = start; k < end; ++k) {
      ex.push_back(extractor::to_example(*records[k], extractor::Variant::kFull));
    }
    for (const auto& e : ex) ptrs.push_back(&e);
    const nn::Matrix* kp = nullptr;
    if (config.knowledge_dim > 0) {
      if (knowledge == nullptr || knowledge->rows() != records.size()) {
        throw ShapeError("scoring needs one knowledge row per record");
      }
      std::vector<std::size_t> idx(end - start);
      for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = start + k;
      gather_rows(*knowledge, idx, kb);
      kp = &kb;
    }
    // Logits rather than probabilities: same ranking, no saturation ties.
    const auto& m = trainer.model();
    const auto s = m.logits(m.forward(ptrs, kp, trainer.plug()));
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

std::vector<ScoredImpression> to_scored(std::span<const data::ImpressionRecord* const> records,
                                        std::span<const float> scores) {
  if (records.size() != scores.size()) throw ShapeError("to_scored: length mismatch");
  std::vector<ScoredImpression> out(records.size());
  for (std::size_t k = 0; k < records.size(); ++k) {
    out[k] = {records[k]->user_id, static_cast<double>(scores[k]), records[k]->click};
  }
  return out;
}

}  // namespace keep::harness
