// tasnet/dsp.h

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

#ifndef TASNET_DSP_H_
#define TASNET_DSP_H_

#include <stdexcept>
#include <string>
#include <vector>

#include "tasnet/tensor.h"

namespace tasnet {

// Mono waveform. Samples are nominally in [-1, 1] and must be finite.
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = 8000;

  int64_t length() const { return static_cast<int64_t>(samples.size()); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// File and data-format failures (WAV, manifests, checkpoints).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class StftWindow { kHann, kRect };

struct StftConfig {
  int window_length = 256;  // 32 ms at 8 kHz
  int hop = 128;
  StftWindow window = StftWindow::kHann;  // kRect is a debug mode
};

void validate(const StftConfig& cfg);

// Segments x into K overlapping rows of length frame_len at the given
// stride; x is zero-padded at the end so every sample is covered.
// K = (T_padded - frame_len)/stride + 1.
template <typename T>
TensorT<T> frame(std::span<const T> x, int frame_len, int stride);
Tensor frame(const AudioBuffer& x, int frame_len, int stride);

// Plain summation of stride-shifted rows, truncated to out_len. Exact
// adjoint of frame().
template <typename T>
std::vector<T> overlap_add(const TensorT<T>& frames, int stride,
                           int64_t out_len);
AudioBuffer overlap_add_audio(const Tensor& frames, int stride, int64_t out_len,
                              int sample_rate);

// One-sided magnitude spectrogram [F x M], F = window_length/2 + 1.
// Frames are taken at the hop with end-only zero padding (no centering).
// Differentiable with respect to x; built from conv1d against fixed
// cosine/sine kernels plus complex_abs.
template <typename T>
TensorT<T> stft_magnitude(const TensorT<T>& x, const StftConfig& cfg);
TensorD stft_magnitude(const AudioBuffer& x, const StftConfig& cfg);

// RIFF/WAVE, mono, PCM16 or IEEE float32. PCM16 samples map to [-1, 1)
// through 1/32768.
AudioBuffer wav_read(const std::string& path);
enum class WavFormat { kFloat32, kPcm16 };
void wav_write(const std::string& path, const AudioBuffer& audio,
               WavFormat format = WavFormat::kFloat32);

}  // namespace tasnet

#endif  // TASNET_DSP_H_
