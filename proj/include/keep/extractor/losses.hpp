#pragma once

#include <span>

namespace keep::extractor {

inline constexpr double kProbClamp = 1e-7;

struct LogitPair {
  double pos = 0.0;  // s_ui, the positively labelled item
  double neg = 0.0;  // s_uj
};

double sigmoid(double x);

// log(1 + exp(x)) without overflow.
double softplus(double x);

// Sum of binary cross-entropy over sigmoid(logits); probabilities clamped to
// [1e-7, 1 - 1e-7]. Labels must be exactly 0 or 1.
double pointwise_loss(std::span<const double> logits,
                      std::span<const double> labels);

// Sum of log(1 + exp(-(s_ui - s_uj))).
double pairwise_loss(std::span<const LogitPair> pairs);

double hybrid_loss(double pointwise, double pairwise, double alpha);

// d/ds of the pointwise term for one example.
inline double pointwise_grad(double logit, double label) {
  return sigmoid(logit) - label;
}

// d/ds_ui of one pairwise term; d/ds_uj is its negation.
inline double pairwise_grad_pos(const LogitPair& p) {
  return -sigmoid(-(p.pos - p.neg));
}

}  // namespace keep::extractor
