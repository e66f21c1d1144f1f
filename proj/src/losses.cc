// src/losses.cc

// Copyright 2026  The TasNet-CPP Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "tasnet/losses.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace tasnet {

void validate(const LossConfig& cfg) {
  if (cfg.beta < 0) {
    throw std::invalid_argument("LossConfig: beta must be >= 0, got " +
                                std::to_string(cfg.beta));
  }
  if (!(cfg.alpha > 0) || cfg.alpha > 1) {
    throw std::invalid_argument("LossConfig: alpha must be in (0, 1], got " +
                                std::to_string(cfg.alpha));
  }
  if (!(cfg.eps > 0)) {
    throw std::invalid_argument("LossConfig: eps must be > 0");
  }
  validate(cfg.stft);
}

template <typename T>
TensorT<T> si_snr(const TensorT<T>& est, const TensorT<T>& ref, T eps) {
  if (est.shape() != ref.shape()) {
    throw std::invalid_argument("si_snr: shape mismatch " +
                                shape_str(est.shape()) + " vs " +
                                shape_str(ref.shape()));
  }
  double ref_energy = 0;
  for (T v : ref.values()) ref_energy += static_cast<double>(v) * v;
  if (ref_energy == 0) {
    throw std::invalid_argument("si_snr: reference signal is identically zero");
  }

  auto est0 = sub(est, mean(est));
  auto ref0 = sub(ref, mean(ref));
  double ref0_energy = 0;
  for (T v : ref0.values()) ref0_energy += static_cast<double>(v) * v;

  auto coef = scalar_mul(dot(est0, ref0),
                         static_cast<T>(1.0 / (ref0_energy + eps)));
  auto s_target = mul(ref0, coef);
  auto err = sub(est0, s_target);
  auto ratio = sub(log(add_scalar(l2_norm_sq(s_target), eps)),
                   log(add_scalar(l2_norm_sq(err), eps)));
  return scalar_mul(ratio, static_cast<T>(10.0 / std::log(10.0)));
}

template <typename T>
PitResult<T> pit_si_snr(const std::vector<TensorT<T>>& ests,
                        const std::vector<TensorT<T>>& refs, T eps) {
  const size_t c = ests.size();
  if (c < 2) {
    throw std::invalid_argument("pit_si_snr: need at least 2 sources, got " +
                                std::to_string(c));
  }
  if (refs.size() != c) {
    throw std::invalid_argument("pit_si_snr: " + std::to_string(c) +
                                " estimates vs " + std::to_string(refs.size()) +
                                " references");
  }

  std::vector<std::vector<TensorT<T>>> pair(c, std::vector<TensorT<T>>(c));
  for (size_t i = 0; i < c; ++i)
    for (size_t j = 0; j < c; ++j) pair[i][j] = si_snr(ests[i], refs[j], eps);

  std::vector<int> perm(c), best(c);
  std::iota(perm.begin(), perm.end(), 0);
  double best_score = -std::numeric_limits<double>::infinity();
  // next_permutation enumerates in lexicographic order, so on ties the
  // first (smallest) permutation sticks.
  do {
    double score = 0;
    for (size_t i = 0; i < c; ++i) score += pair[i][perm[i]].item();
    if (score > best_score) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  TensorT<T> acc = pair[0][best[0]];
  for (size_t i = 1; i < c; ++i) acc = add(acc, pair[i][best[i]]);
  return PitResult<T>{scalar_mul(acc, static_cast<T>(-1.0 / c)), best};
}

template <typename T>
TensorT<T> p_law(const TensorT<T>& est, const TensorT<T>& ref,
                 const LossConfig& cfg) {
  validate(cfg);
  auto est_mag = stft_magnitude(est, cfg.stft);
  auto ref_mag = stft_magnitude(ref, cfg.stft);
  // The eps offset keeps the fractional power differentiable at zero bins.
  const T eps = static_cast<T>(cfg.eps);
  const T alpha = static_cast<T>(cfg.alpha);
  auto est_c = pow(add_scalar(est_mag, eps), alpha);
  auto ref_c = pow(add_scalar(ref_mag, eps), alpha);
  return mean(abs(sub(est_c, ref_c)));
}

template <typename T>
PitResult<T> combined_loss(const std::vector<TensorT<T>>& ests,
                           const std::vector<TensorT<T>>& refs,
                           const LossConfig& cfg) {
  validate(cfg);
  auto pit = pit_si_snr(ests, refs, static_cast<T>(cfg.eps));
  if (cfg.beta == 0) return pit;
  TensorT<T> plaw_acc;
  for (size_t i = 0; i < ests.size(); ++i) {
    auto term = p_law(ests[i], refs[pit.permutation[i]], cfg);
    plaw_acc = plaw_acc.defined() ? add(plaw_acc, term) : term;
  }
  auto total = add(pit.loss, scalar_mul(plaw_acc, static_cast<T>(
                                                      cfg.beta / ests.size())));
  return PitResult<T>{total, pit.permutation};
}

#define TASNET_LOSSES_INSTANTIATE(T)                                        \
  template TensorT<T> si_snr<T>(const TensorT<T>&, const TensorT<T>&, T);   \
  template PitResult<T> pit_si_snr<T>(const std::vector<TensorT<T>>&,       \
                                      const std::vector<TensorT<T>>&, T);   \
  template TensorT<T> p_law<T>(const TensorT<T>&, const TensorT<T>&,        \
                               const LossConfig&);                          \
  template PitResult<T> combined_loss<T>(const std::vector<TensorT<T>>&,    \
                                         const std::vector<TensorT<T>>&,    \
                                         const LossConfig&);

TASNET_LOSSES_INSTANTIATE(float)
TASNET_LOSSES_INSTANTIATE(double)

#undef TASNET_LOSSES_INSTANTIATE

}  // namespace tasnet
