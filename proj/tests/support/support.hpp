#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "keep/extractor/model.hpp"
#include "keep/harness/gauc.hpp"
#include "keep/nn/matrix.hpp"
#include "keep/nn/mlp.hpp"
#include "keep/nn/param.hpp"

namespace keep::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {  // inclusive
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

template <class T>
nn::BasicMatrix<T> random_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                                 double limit = 1.0) {
  nn::BasicMatrix<T> m(rows, cols);
  for (auto& v : m.data()) v = static_cast<T>(uniform(rng, -limit, limit));
  return m;
}

struct Vocab {
  std::size_t users = 15, items = 25, shops = 7, categories = 5;
};

// Random impressions grouped into a few sessions; conversion and cart only
// on clicked rows.
inline std::vector<extractor::Example> random_examples(Rng& rng, std::size_t n,
                                                       const Vocab& v,
                                                       std::size_t max_behaviors = 5,
                                                       std::size_t sessions = 3,
                                                       double click_rate = 0.4) {
  std::vector<extractor::Example> out(n);
  for (auto& e : out) {
    e.user = pick(rng, 0, v.users - 1);
    e.item = pick(rng, 0, v.items - 1);
    e.shop = pick(rng, 0, v.shops - 1);
    e.category = static_cast<std::uint32_t>(pick(rng, 0, v.categories - 1));
    e.session = pick(rng, 0, sessions - 1);
    const auto nb = pick(rng, 0, max_behaviors);
    for (std::size_t b = 0; b < nb; ++b) e.behaviors.push_back(pick(rng, 0, v.items - 1));
    const bool click = uniform(rng, 0, 1) < click_rate;
    e.labels[0] = click;
    e.labels[1] = click && uniform(rng, 0, 1) < 0.5;
    e.labels[2] = click && uniform(rng, 0, 1) < 0.5;
  }
  return out;
}

template <class E>
std::vector<const E*> pointers(const std::vector<E>& v) {
  std::vector<const E*> out;
  for (const auto& e : v) out.push_back(&e);
  return out;
}

// Moves a freshly initialized model to O(1) activations: embedding rows
// uniform in [-1, 1], biases in [-0.2, 0.2], weights untouched. At the
// default +-0.01 embedding init a 1e-3 step is a tenth of the signal.
template <class T>
void spread_params(const std::vector<nn::Param<T>*>& params, Rng& rng) {
  for (auto* p : params) {
    const double limit = p->row_sparse ? 1.0 : (p->value.rows() == 1 ? 0.2 : 0.0);
    if (limit == 0.0) continue;
    for (auto& v : p->value.data()) v = static_cast<T>(uniform(rng, -limit, limit));
  }
}

// One tensor under finite-difference test: `value` is perturbed in place,
// `grad` holds the analytic gradient computed beforehand.
struct Probe {
  std::string name;
  nn::BasicMatrix<double>* value = nullptr;
  nn::BasicMatrix<double> grad;
};

inline std::vector<Probe> probes_from(const std::vector<nn::Param<double>*>& params) {
  std::vector<Probe> out;
  for (auto* p : params) out.push_back({p->name, &p->value, p->grad});
  return out;
}

struct GradReport {
  std::size_t entries = 0;
  std::size_t failures = 0;
  std::size_t kinks = 0;  // entries whose +-delta probes straddle a ReLU kink
  double max_rel = 0.0;
  std::string worst;
};

// |a - n| / max(|a|, |n|, floor). The floor turns the test into an absolute
// one for gradients that are numerically zero.
inline double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// On/off state of every hidden ReLU unit in a trace (the last layer is linear).
template <class T>
void relu_pattern(const nn::MlpTrace<T>& trace, std::vector<bool>& out) {
  for (std::size_t l = 0; l + 1 < trace.outputs.size(); ++l) {
    for (const T v : trace.outputs[l].data()) out.push_back(v > T(0));
  }
}

using PatternFn = std::function<std::vector<bool>()>;

// Central differences over every entry of every probe. With `pattern`, an
// entry where either probe switches some ReLU unit is a kink:
// the difference quotient is not a derivative there, so the entry is checked
// again with `kink_delta`, small enough to stay on one side.
inline GradReport fd_check(std::vector<Probe>& probes, const std::function<double()>& loss,
                           double delta, double tol, double floor,
                           const PatternFn& pattern = {}, double kink_delta = 1e-6) {
  GradReport r;
  const auto central = [&](double* x, double d, bool* switched) {
    const double saved = *x;
    std::vector<bool> base;
    if (switched) base = pattern();
    *x = saved + d;
    const double up = loss();
    if (switched) *switched = pattern() != base;
    *x = saved - d;
    const double down = loss();
    if (switched) *switched = *switched || pattern() != base;
    *x = saved;
    return (up - down) / (2 * d);
  };
  for (auto& p : probes) {
    double* data = p.value->ptr();
    for (std::size_t k = 0; k < p.value->size(); ++k) {
      const double analytic = p.grad.data()[k];
      double numeric = central(data + k, delta, nullptr);
      double e = rel_error(analytic, numeric, floor);
      if (e > tol && pattern) {
        bool switched = false;
        central(data + k, delta, &switched);
        if (switched) {
          ++r.kinks;
          bool again = false;
          numeric = central(data + k, kink_delta, &again);
          e = again ? std::max(e, 1.0) : rel_error(analytic, numeric, floor);
        }
      }
      ++r.entries;
      if (e > tol) ++r.failures;
      if (e > r.max_rel) {
        r.max_rel = e;
        r.worst = p.name + "[" + std::to_string(k) + "] analytic " + std::to_string(analytic) +
                  " numeric " + std::to_string(numeric);
      }
    }
  }
  return r;
}

// Brute force over all (positive, negative) pairs of each user.
inline double gauc_oracle(const std::vector<harness::ScoredImpression>& rows, bool* any = nullptr) {
  std::map<std::uint64_t, std::vector<const harness::ScoredImpression*>> by_user;
  for (const auto& r : rows) by_user[r.user].push_back(&r);
  double num = 0.0, den = 0.0;
  for (const auto& [u, imps] : by_user) {
    double wins = 0.0, pairs = 0.0;
    for (const auto* a : imps) {
      for (const auto* b : imps) {
        if (a->label != 1 || b->label != 0) continue;
        pairs += 1.0;
        if (a->score > b->score) wins += 1.0;
        else if (a->score == b->score) wins += 0.5;
      }
    }
    if (pairs == 0.0) continue;
    num += static_cast<double>(imps.size()) * (wins / pairs);
    den += static_cast<double>(imps.size());
  }
  if (any) *any = den > 0.0;
  return den > 0.0 ? num / den : std::nan("");
}

}  // namespace keep::testing
