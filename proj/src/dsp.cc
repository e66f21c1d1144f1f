// src/dsp.cc

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

#include "tasnet/dsp.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>

namespace tasnet {

namespace {

int64_t num_frames(int64_t t, int frame_len, int stride) {
  const int64_t over = std::max<int64_t>(t - frame_len, 0);
  return (over + stride - 1) / stride + 1;
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void validate(const StftConfig& cfg) {
  if (!is_power_of_two(cfg.window_length)) {
    throw std::invalid_argument("stft: window_length " +
                                std::to_string(cfg.window_length) +
                                " is not a power of two");
  }
  if (cfg.hop < 1 || cfg.hop > cfg.window_length) {
    throw std::invalid_argument("stft: hop " + std::to_string(cfg.hop) +
                                " must be in [1, window_length]");
  }
}

template <typename T>
TensorT<T> frame(std::span<const T> x, int frame_len, int stride) {
  if (x.empty()) throw std::invalid_argument("frame: empty input");
  if (frame_len < 1 || stride < 1 || stride > frame_len) {
    throw std::invalid_argument("frame: need 0 < stride <= frame_len, got L=" +
                                std::to_string(frame_len) +
                                " S=" + std::to_string(stride));
  }
  const int64_t t = static_cast<int64_t>(x.size());
  const int64_t k = num_frames(t, frame_len, stride);
  std::vector<T> rows(k * frame_len, T(0));
  for (int64_t r = 0; r < k; ++r) {
    const int64_t begin = r * stride;
    const int64_t n = std::min<int64_t>(frame_len, t - begin);
    for (int64_t i = 0; i < n; ++i) rows[r * frame_len + i] = x[begin + i];
  }
  return TensorT<T>::from_data({k, frame_len}, std::move(rows));
}

Tensor frame(const AudioBuffer& x, int frame_len, int stride) {
  return frame<float>(std::span<const float>(x.samples), frame_len, stride);
}

template <typename T>
std::vector<T> overlap_add(const TensorT<T>& frames, int stride,
                           int64_t out_len) {
  if (frames.ndim() != 2) {
    throw std::invalid_argument("overlap_add: frames must be 2-D, got " +
                                shape_str(frames.shape()));
  }
  const int64_t k = frames.dim(0), l = frames.dim(1);
  if (num_frames(out_len, static_cast<int>(l), stride) != k) {
    throw std::invalid_argument(
        "overlap_add: length " + std::to_string(out_len) +
        " inconsistent with K=" + std::to_string(k) + " L=" +
        std::to_string(l) + " S=" + std::to_string(stride));
  }
  std::vector<T> y(out_len, T(0));
  const T* rows = frames.values().data();
  for (int64_t r = 0; r < k; ++r) {
    const int64_t begin = r * stride;
    const int64_t n = std::min<int64_t>(l, out_len - begin);
    for (int64_t i = 0; i < n; ++i) y[begin + i] += rows[r * l + i];
  }
  return y;
}

AudioBuffer overlap_add_audio(const Tensor& frames, int stride, int64_t out_len,
                              int sample_rate) {
  return AudioBuffer{overlap_add<float>(frames, stride, out_len), sample_rate};
}

// ---------------------------------------------------------------------------
// STFT magnitude
// ---------------------------------------------------------------------------

namespace {

// Windowed one-sided DFT basis, laid out as conv1d kernels [F x 1 x W].
template <typename T>
struct DftTables {
  std::vector<T> cos_k, sin_k;
};

template <typename T>
const DftTables<T>& dft_tables(int w, StftWindow window) {
  static thread_local std::map<std::pair<int, int>, DftTables<T>> cache;
  auto key = std::make_pair(w, static_cast<int>(window));
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  const int f_bins = w / 2 + 1;
  DftTables<T> tables;
  tables.cos_k.resize(static_cast<size_t>(f_bins) * w);
  tables.sin_k.resize(static_cast<size_t>(f_bins) * w);
  for (int n = 0; n < w; ++n) {
    // periodic Hann
    const double win =
        window == StftWindow::kHann
            ? 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / w)
            : 1.0;
    for (int f = 0; f < f_bins; ++f) {
      const double phase = 2.0 * std::numbers::pi * f * n / w;
      tables.cos_k[static_cast<size_t>(f) * w + n] =
          static_cast<T>(win * std::cos(phase));
      tables.sin_k[static_cast<size_t>(f) * w + n] =
          static_cast<T>(-win * std::sin(phase));
    }
  }
  return cache.emplace(key, std::move(tables)).first->second;
}

}  // namespace

template <typename T>
TensorT<T> stft_magnitude(const TensorT<T>& x, const StftConfig& cfg) {
  validate(cfg);
  if (x.ndim() != 1) {
    throw std::invalid_argument("stft_magnitude: input must be 1-D, got " +
                                shape_str(x.shape()));
  }
  const int w = cfg.window_length;
  const int f_bins = w / 2 + 1;

  TensorT<T> xp = x;
  int64_t t = x.numel();
  int64_t padded = std::max<int64_t>(t, w);
  const int64_t rem = (padded - w) % cfg.hop;
  if (rem != 0) padded += cfg.hop - rem;
  if (padded != t) xp = pad_end(xp, padded - t);

  const auto& tables = dft_tables<T>(w, cfg.window);
  auto cos_k = TensorT<T>::from_data({f_bins, 1, w}, tables.cos_k);
  auto sin_k = TensorT<T>::from_data({f_bins, 1, w}, tables.sin_k);
  ConvSpec spec;
  spec.stride = cfg.hop;
  auto frames_2d = reshape(xp, {1, padded});
  auto re = conv1d<T>(frames_2d, cos_k, {}, spec);
  auto im = conv1d<T>(frames_2d, sin_k, {}, spec);
  return complex_abs(re, im);
}

TensorD stft_magnitude(const AudioBuffer& x, const StftConfig& cfg) {
  std::vector<double> samples(x.samples.begin(), x.samples.end());
  auto xt = TensorD::from_data({x.length()}, std::move(samples));
  return stft_magnitude<double>(xt, cfg);
}

// ---------------------------------------------------------------------------
// WAV I/O
// ---------------------------------------------------------------------------

namespace {

uint32_t read_u32(const uint8_t* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

uint16_t read_u16(const uint8_t* p) {
  uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

void append_u32(std::vector<uint8_t>& buf, uint32_t v) {
  const size_t at = buf.size();
  buf.resize(at + 4);
  std::memcpy(buf.data() + at, &v, 4);
}

void append_u16(std::vector<uint8_t>& buf, uint16_t v) {
  const size_t at = buf.size();
  buf.resize(at + 2);
  std::memcpy(buf.data() + at, &v, 2);
}

void append_tag(std::vector<uint8_t>& buf, const char* tag) {
  buf.insert(buf.end(), tag, tag + 4);
}

}  // namespace

AudioBuffer wav_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("wav_read: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IoError("wav_read: " + path + " is not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
    const uint32_t chunk_size = read_u32(bytes.data() + pos + 4);
    const size_t body = pos + 8;
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (body + 16 > bytes.size()) {
        throw IoError("wav_read: " + path + " truncated inside fmt chunk");
      }
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) {
        throw IoError("wav_read: " + path + " has data before fmt chunk");
      }
      if (channels != 1) {
        throw IoError("wav_read: " + path + " has " +
                      std::to_string(channels) + " channels, expected mono");
      }
      if (body + chunk_size > bytes.size()) {
        throw IoError("wav_read: " + path + " truncated: data chunk claims " +
                      std::to_string(chunk_size) + " bytes, " +
                      std::to_string(bytes.size() - body) + " available");
      }
      AudioBuffer audio;
      audio.sample_rate = static_cast<int>(rate);
      const uint8_t* d = bytes.data() + body;
      if (format == 1 && bits == 16) {
        const size_t n = chunk_size / 2;
        audio.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
          int16_t v;
          std::memcpy(&v, d + 2 * i, 2);
          audio.samples[i] = static_cast<float>(v) / 32768.0f;
        }
      } else if (format == 3 && bits == 32) {
        const size_t n = chunk_size / 4;
        audio.samples.resize(n);
        std::memcpy(audio.samples.data(), d, n * 4);
        for (float v : audio.samples) {
          if (!std::isfinite(v)) {
            throw IoError("wav_read: " + path + " contains non-finite samples");
          }
        }
      } else {
        throw IoError("wav_read: " + path + " has unsupported codec (format " +
                      std::to_string(format) + ", " + std::to_string(bits) +
                      " bits); expected PCM16 or IEEE float32");
      }
      return audio;
    }
    pos = body + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  throw IoError("wav_read: " + path +
                (have_fmt ? " has no data chunk" : " has no fmt chunk"));
}

void wav_write(const std::string& path, const AudioBuffer& audio,
               WavFormat format) {
  for (float v : audio.samples) {
    if (!std::isfinite(v)) {
      throw IoError("wav_write: refusing to write non-finite sample to " +
                    path);
    }
  }
  const uint32_t n = static_cast<uint32_t>(audio.samples.size());
  const bool f32 = format == WavFormat::kFloat32;
  const uint16_t bytes_per = f32 ? 4 : 2;

  std::vector<uint8_t> buf;
  append_tag(buf, "RIFF");
  append_u32(buf, 0);  // patched below
  append_tag(buf, "WAVE");
  append_tag(buf, "fmt ");
  append_u32(buf, 16);
  append_u16(buf, f32 ? 3 : 1);  // IEEE float / PCM
  append_u16(buf, 1);            // mono
  append_u32(buf, static_cast<uint32_t>(audio.sample_rate));
  append_u32(buf, static_cast<uint32_t>(audio.sample_rate) * bytes_per);
  append_u16(buf, bytes_per);
  append_u16(buf, bytes_per * 8);
  if (f32) {
    append_tag(buf, "fact");
    append_u32(buf, 4);
    append_u32(buf, n);
  }
  append_tag(buf, "data");
  append_u32(buf, n * bytes_per);
  if (f32) {
    const size_t at = buf.size();
    buf.resize(at + 4 * n);
    std::memcpy(buf.data() + at, audio.samples.data(), 4 * n);
  } else {
    for (float v : audio.samples) {
      const long r = std::lround(static_cast<double>(v) * 32768.0);
      append_u16(buf, static_cast<uint16_t>(static_cast<int16_t>(
                          std::clamp<long>(r, -32768, 32767))));
    }
  }
  const uint32_t riff_size = static_cast<uint32_t>(buf.size()) - 8;
  std::memcpy(buf.data() + 4, &riff_size, 4);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("wav_write: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("wav_write: short write to " + path);
}

template TensorT<float> frame<float>(std::span<const float>, int, int);
template TensorT<double> frame<double>(std::span<const double>, int, int);
template std::vector<float> overlap_add<float>(const TensorT<float>&, int,
                                               int64_t);
template std::vector<double> overlap_add<double>(const TensorT<double>&, int,
                                                 int64_t);
template TensorT<float> stft_magnitude<float>(const TensorT<float>&,
                                              const StftConfig&);
template TensorT<double> stft_magnitude<double>(const TensorT<double>&,
                                                const StftConfig&);

}  // namespace tasnet
