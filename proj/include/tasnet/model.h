// tasnet/model.h

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

#ifndef TASNET_MODEL_H_
#define TASNET_MODEL_H_

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tasnet/dsp.h"
#include "tasnet/tensor.h"

namespace tasnet {

inline constexpr double kGlnEps = 1e-8;

enum class EncoderVariant { kLinear, kPrelu, kDilated, kGlu };

std::string variant_name(EncoderVariant v);
EncoderVariant variant_from_name(const std::string& name);

// Architecture hyperparameters. The separation network is a learned
// analysis filterbank (optionally deepened with nonlinear layers), a TCN
// mask estimator operating in the latent space, and a mirrored synthesis
// filterbank.
struct ModelConfig {
  int num_filters = 512;  // N, latent channels
  int frame_len = 16;     // L, samples per analysis frame
  int stride = 8;         // S, frame stride in samples
  int num_sources = 2;    // C
  int depth = 1;          // I; 1 = plain linear encoder/decoder
  EncoderVariant variant = EncoderVariant::kLinear;
  std::vector<int> enc_dilations;  // per deep layer; dilated variant only

  // separator (TCN)
  int bottleneck = 128;     // B
  int hidden = 512;         // H
  int skip = 128;           // Sc
  int sep_kernel = 3;       // P, depthwise kernel size (odd)
  int blocks_per_stack = 8; // X, dilation doubles per block
  int num_stacks = 3;       // R

  static ModelConfig paper_preset(EncoderVariant v);
  static ModelConfig desk_preset(EncoderVariant v);
};

void validate(const ModelConfig& cfg);

// Dilations of the deep encoder layers in application order (all ones
// except for the dilated variant). The decoder mirrors this in reverse.
std::vector<int> deep_dilations(const ModelConfig& cfg);

// Exact number of scalar parameters; a pure function of the config.
int64_t param_count(const ModelConfig& cfg);

template <typename T>
struct ConvLayer {
  TensorT<T> weight;  // conv [Co x Ci/g x P]; transposed [Ci x Co/g x P]
  std::optional<TensorT<T>> bias;
  ConvSpec spec;
  bool transposed = false;
};

template <typename T>
struct PreluLayer {
  TensorT<T> slopes;  // per channel
};

template <typename T>
struct NormLayer {
  TensorT<T> gain, bias;  // per channel, applied after gLN whitening
};

template <typename T>
struct GluGate {
  ConvLayer<T> conv;   // gate branch
  NormLayer<T> norm;   // gLN before the sigmoid
};

// One deep encoder/decoder layer: kernel-3 length-preserving conv with
// either a PReLU or a GLU gate on top.
template <typename T>
struct CodecLayer {
  ConvLayer<T> conv;
  std::optional<PreluLayer<T>> act;
  std::optional<GluGate<T>> gate;
};

template <typename T>
struct TcnBlock {
  ConvLayer<T> conv_in;    // 1x1 B->H
  PreluLayer<T> act1;
  NormLayer<T> norm1;
  ConvLayer<T> dconv;      // depthwise, dilated
  PreluLayer<T> act2;
  NormLayer<T> norm2;
  ConvLayer<T> conv_res;   // 1x1 H->B, added to the block input
  ConvLayer<T> conv_skip;  // 1x1 H->Sc, summed into the mask head
};

template <typename T>
struct SeparationModelT {
  ModelConfig config;

  ConvLayer<T> enc_first;               // 1->N, kernel L, stride S, no bias
  std::vector<CodecLayer<T>> enc_deep;  // I-1 layers
  NormLayer<T> sep_norm;
  ConvLayer<T> sep_bottleneck;          // 1x1 N->B
  std::vector<TcnBlock<T>> blocks;      // R stacks of X blocks
  PreluLayer<T> head_act;
  ConvLayer<T> head_conv;               // 1x1 Sc->C*N
  std::vector<CodecLayer<T>> dec_deep;  // I-1 layers, mirrored dilations
  ConvLayer<T> dec_final;               // N->1, kernel L, stride S, no bias

  // Parameters as (name, handle) pairs in the fixed checkpoint order.
  // Handles share storage with the model, so writes through them stick.
  std::vector<std::pair<std::string, TensorT<T>>> named_params() const;
};

using SeparationModel = SeparationModelT<float>;

// Deterministic initialization: weights centered uniform at 1/sqrt(fan-in),
// biases and norm offsets zero, norm gains one, PReLU slopes 0.25.
template <typename T>
SeparationModelT<T> build_model(const ModelConfig& cfg, uint64_t seed);

// Per-layer gate activation statistics collected during a forward pass of
// a GLU model (time-averaged sigmoid output per channel, plus extremes).
struct GateLayerStats {
  std::string layer;
  std::vector<double> channel_mean, channel_min, channel_max;
};
struct GateProbe {
  std::vector<GateLayerStats> layers;
};

// out = conv(x) .* sigmoid(gLN(gate_conv(x))); gate values lie in (0,1).
template <typename T>
TensorT<T> glu_layer(const TensorT<T>& input, const CodecLayer<T>& layer,
                     GateProbe* probe = nullptr, const std::string& tag = "");

// Waveform [T] -> latent [N x K]. The input is zero-padded at the end to
// the frame grid, so K = (T_padded - L)/S + 1.
template <typename T>
TensorT<T> encode(const SeparationModelT<T>& model, const TensorT<T>& x,
                  GateProbe* probe = nullptr);
Tensor encode(const SeparationModel& model, const AudioBuffer& x);

// Latent [N x K] -> C masks in (0,1), each [N x K].
template <typename T>
std::vector<TensorT<T>> separate_latent(const SeparationModelT<T>& model,
                                        const TensorT<T>& latent);

// Masked latent [N x K] -> waveform [out_len].
template <typename T>
TensorT<T> decode(const SeparationModelT<T>& model, const TensorT<T>& masked,
                  int64_t out_len, GateProbe* probe = nullptr,
                  const std::string& tag = "");

// End to end: encode, mask, decode each source. Output length equals the
// input length exactly.
template <typename T>
std::vector<TensorT<T>> separate(const SeparationModelT<T>& model,
                                 const TensorT<T>& x,
                                 GateProbe* probe = nullptr);
std::vector<AudioBuffer> separate(const SeparationModel& model,
                                  const AudioBuffer& x);

// -----------------------------------------------------------------------
// Checkpoints: versioned little-endian container with the config, the
// named parameter arrays in named_params() order, and optional optimizer
// state. Default precision stores 32-bit values; a double model writes
// 64-bit values so training can resume bit-exactly.
// -----------------------------------------------------------------------

template <typename T>
struct OptState {
  int64_t step = 0;
  double lr = 0;
  double best_val_loss = 0;
  bool has_best = false;
  int epochs_since_improvement = 0;
  int epoch = 0;
  uint64_t seed = 0;
  std::vector<std::vector<T>> m, v;  // Adam moments, named_params() order
};

template <typename T>
void save_checkpoint(const std::string& path, const SeparationModelT<T>& model,
                     const OptState<T>* opt = nullptr);

// Rejects mismatched magic/version and any config/parameter disagreement.
// Values convert if the file precision differs from T.
template <typename T>
SeparationModelT<T> load_checkpoint(const std::string& path,
                                    OptState<T>* opt_out = nullptr);

ModelConfig peek_checkpoint_config(const std::string& path);

}  // namespace tasnet

#endif  // TASNET_MODEL_H_
