#include "keep/extractor/losses.hpp"

#include <algorithm>
#include <cmath>

#include "keep/error.hpp"

namespace keep::extractor {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double pointwise_loss(std::span<const double> logits,
                      std::span<const double> labels) {
  if (logits.size() != labels.size()) {
    throw ShapeError("pointwise_loss: " + std::to_string(logits.size()) +
                     " logits vs " + std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double c = labels[k];
    if (c != 0.0 && c != 1.0) {
      throw InvalidArgument("pointwise_loss: label " + std::to_string(c) +
                            " is not binary");
    }
    const double p = std::clamp(sigmoid(logits[k]), kProbClamp, 1.0 - kProbClamp);
    total += c == 1.0 ? -std::log(p) : -std::log1p(-p);
  }
  return total;
}

double pairwise_loss(std::span<const LogitPair> pairs) {
  double total = 0.0;
  for (const auto& p : pairs) total += softplus(-(p.pos - p.neg));
  return total;
}

double hybrid_loss(double pointwise, double pairwise, double alpha) {
  if (alpha < 0.0) throw InvalidArgument("hybrid_loss: alpha must be >= 0");
  return pointwise + alpha * pairwise;
}

}  // namespace keep::extractor
