// tasnet/losses.h

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

#ifndef TASNET_LOSSES_H_
#define TASNET_LOSSES_H_

#include <vector>

#include "tasnet/dsp.h"
#include "tasnet/tensor.h"

namespace tasnet {

struct LossConfig {
  double beta = 0.01;   // weight of the spectral power-law term
  double alpha = 0.5;   // compression exponent
  double eps = 1e-8;    // numerical floor in ratios and magnitudes
  StftConfig stft;
};

void validate(const LossConfig& cfg);

// Scale-invariant SNR in dB, differentiable with respect to est; ref is
// treated as a constant. Both signals are zero-meaned before the
// projection. The eps floor caps the value near 80 dB for unit-energy
// signals.
template <typename T>
TensorT<T> si_snr(const TensorT<T>& est, const TensorT<T>& ref, T eps);

template <typename T>
struct PitResult {
  TensorT<T> loss;               // min over permutations of mean_c -si_snr
  std::vector<int> permutation;  // refs index assigned to each estimate
};

// Permutation-invariant loss; ties resolve to the lexicographically
// smallest permutation.
template <typename T>
PitResult<T> pit_si_snr(const std::vector<TensorT<T>>& ests,
                        const std::vector<TensorT<T>>& refs, T eps);

// Mean absolute difference of alpha-compressed STFT magnitudes. The
// L1-norm is realized as a mean over bins so beta does not depend on the
// utterance length or STFT size.
template <typename T>
TensorT<T> p_law(const TensorT<T>& est, const TensorT<T>& ref,
                 const LossConfig& cfg);

// PIT SI-SNR loss plus beta times the mean P-law term, with the P-law
// pairs aligned by the permutation the SI-SNR term chose.
template <typename T>
PitResult<T> combined_loss(const std::vector<TensorT<T>>& ests,
                           const std::vector<TensorT<T>>& refs,
                           const LossConfig& cfg);

}  // namespace tasnet

#endif  // TASNET_LOSSES_H_
