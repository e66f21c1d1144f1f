// src/model.cc

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

#include "tasnet/model.h"

#include <cmath>
#include <cstring>
#include <fstream>

namespace tasnet {

std::string variant_name(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::kLinear: return "linear";
    case EncoderVariant::kPrelu: return "prelu";
    case EncoderVariant::kDilated: return "dilated";
    case EncoderVariant::kGlu: return "glu";
  }
  return "unknown";
}

EncoderVariant variant_from_name(const std::string& name) {
  if (name == "linear") return EncoderVariant::kLinear;
  if (name == "prelu") return EncoderVariant::kPrelu;
  if (name == "dilated") return EncoderVariant::kDilated;
  if (name == "glu") return EncoderVariant::kGlu;
  throw std::invalid_argument("unknown encoder variant '" + name +
                              "' (expected linear|prelu|dilated|glu)");
}

namespace {

void set_variant_depth(ModelConfig& cfg, EncoderVariant v) {
  cfg.variant = v;
  switch (v) {
    case EncoderVariant::kLinear:
      cfg.depth = 1;
      break;
    case EncoderVariant::kPrelu:
    case EncoderVariant::kGlu:
      cfg.depth = 4;
      break;
    case EncoderVariant::kDilated:
      cfg.depth = 5;
      cfg.enc_dilations = {1, 2, 4, 8};
      break;
  }
}

}  // namespace

ModelConfig ModelConfig::paper_preset(EncoderVariant v) {
  ModelConfig cfg;
  set_variant_depth(cfg, v);
  return cfg;
}

ModelConfig ModelConfig::desk_preset(EncoderVariant v) {
  ModelConfig cfg;
  cfg.num_filters = 64;
  cfg.bottleneck = 32;
  cfg.hidden = 64;
  cfg.skip = 32;
  cfg.blocks_per_stack = 4;
  cfg.num_stacks = 2;
  set_variant_depth(cfg, v);
  return cfg;
}

void validate(const ModelConfig& cfg) {
  auto positive = [](int v, const char* name) {
    if (v < 1) {
      throw std::invalid_argument(std::string("ModelConfig: ") + name +
                                  " must be >= 1, got " + std::to_string(v));
    }
  };
  positive(cfg.num_filters, "num_filters");
  positive(cfg.frame_len, "frame_len");
  positive(cfg.stride, "stride");
  positive(cfg.num_sources, "num_sources");
  positive(cfg.depth, "depth");
  positive(cfg.bottleneck, "bottleneck");
  positive(cfg.hidden, "hidden");
  positive(cfg.skip, "skip");
  positive(cfg.sep_kernel, "sep_kernel");
  positive(cfg.blocks_per_stack, "blocks_per_stack");
  positive(cfg.num_stacks, "num_stacks");
  if (cfg.stride > cfg.frame_len) {
    throw std::invalid_argument("ModelConfig: stride " +
                                std::to_string(cfg.stride) +
                                " exceeds frame_len " +
                                std::to_string(cfg.frame_len));
  }
  if (cfg.sep_kernel % 2 == 0) {
    throw std::invalid_argument(
        "ModelConfig: sep_kernel must be odd for symmetric padding, got " +
        std::to_string(cfg.sep_kernel));
  }
  if (cfg.variant == EncoderVariant::kLinear && cfg.depth != 1) {
    throw std::invalid_argument("ModelConfig: linear variant requires depth 1");
  }
  if (cfg.variant == EncoderVariant::kDilated) {
    if (cfg.enc_dilations.size() != static_cast<size_t>(cfg.depth - 1)) {
      throw std::invalid_argument(
          "ModelConfig: dilated variant needs " + std::to_string(cfg.depth - 1) +
          " dilations, got " + std::to_string(cfg.enc_dilations.size()));
    }
    for (int d : cfg.enc_dilations) positive(d, "enc_dilations entry");
  } else if (!cfg.enc_dilations.empty()) {
    throw std::invalid_argument(
        "ModelConfig: enc_dilations only apply to the dilated variant");
  }
}

std::vector<int> deep_dilations(const ModelConfig& cfg) {
  if (cfg.variant == EncoderVariant::kDilated) return cfg.enc_dilations;
  return std::vector<int>(cfg.depth - 1, 1);
}

int64_t param_count(const ModelConfig& cfg) {
  validate(cfg);
  const int64_t n = cfg.num_filters, b = cfg.bottleneck, h = cfg.hidden;
  const int64_t sc = cfg.skip, p = cfg.sep_kernel, c = cfg.num_sources;
  int64_t deep_layer = n * n * 3 + n;  // kernel-3 conv + bias
  switch (cfg.variant) {
    case EncoderVariant::kLinear:
      break;
    case EncoderVariant::kPrelu:
    case EncoderVariant::kDilated:
      deep_layer += n;  // slopes
      break;
    case EncoderVariant::kGlu:
      deep_layer += n * n * 3 + n + 2 * n;  // gate conv + its gLN
      break;
  }
  const int64_t codec = 2 * (n * cfg.frame_len + (cfg.depth - 1) * deep_layer);
  const int64_t block = (b * h + h) + h + 2 * h +    // 1x1 in, PReLU, gLN
                        (h * p + h) + h + 2 * h +    // depthwise, PReLU, gLN
                        (h * b + b) + (h * sc + sc); // residual + skip heads
  const int64_t separator = 2 * n + (n * b + b) +
                            cfg.num_stacks * cfg.blocks_per_stack * block +
                            sc + (sc * c * n + c * n);
  return codec + separator;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

template <typename T>
ConvLayer<T> make_conv(int out_ch, int in_ch, int kernel, ConvSpec spec,
                       bool transposed, bool with_bias, std::mt19937_64& rng) {
  ConvLayer<T> layer;
  layer.spec = spec;
  layer.transposed = transposed;
  const T scale = T(1) / std::sqrt(static_cast<T>(in_ch / spec.groups) *
                                   static_cast<T>(kernel));
  std::vector<int64_t> shape =
      transposed
          ? std::vector<int64_t>{in_ch, out_ch / spec.groups, kernel}
          : std::vector<int64_t>{out_ch, in_ch / spec.groups, kernel};
  layer.weight = TensorT<T>::uniform(std::move(shape), scale, rng, true);
  if (with_bias) layer.bias = TensorT<T>::zeros({out_ch}, true);
  return layer;
}

template <typename T>
PreluLayer<T> make_prelu(int channels) {
  PreluLayer<T> layer{TensorT<T>::full({channels}, T(0.25))};
  layer.slopes.set_requires_grad(true);
  return layer;
}

template <typename T>
NormLayer<T> make_norm(int channels) {
  NormLayer<T> norm;
  norm.gain = TensorT<T>::full({channels}, T(1));
  norm.bias = TensorT<T>::zeros({channels}, true);
  norm.gain.set_requires_grad(true);
  return norm;
}

template <typename T>
CodecLayer<T> make_codec_layer(const ModelConfig& cfg, int dilation,
                               bool transposed, std::mt19937_64& rng) {
  const int n = cfg.num_filters;
  ConvSpec spec;
  spec.dilation = dilation;
  spec.padding = dilation;  // kernel 3, length preserving
  CodecLayer<T> layer;
  layer.conv = make_conv<T>(n, n, 3, spec, transposed, true, rng);
  if (cfg.variant == EncoderVariant::kGlu) {
    GluGate<T> gate;
    gate.conv = make_conv<T>(n, n, 3, spec, transposed, true, rng);
    gate.norm = make_norm<T>(n);
    layer.gate = std::move(gate);
  } else {
    layer.act = make_prelu<T>(n);
  }
  return layer;
}

}  // namespace

template <typename T>
SeparationModelT<T> build_model(const ModelConfig& cfg, uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  SeparationModelT<T> model;
  model.config = cfg;
  const int n = cfg.num_filters;

  ConvSpec first_spec;
  first_spec.stride = cfg.stride;
  model.enc_first =
      make_conv<T>(n, 1, cfg.frame_len, first_spec, false, false, rng);

  const auto dilations = deep_dilations(cfg);
  for (int d : dilations) {
    model.enc_deep.push_back(make_codec_layer<T>(cfg, d, false, rng));
  }

  model.sep_norm = make_norm<T>(n);
  model.sep_bottleneck =
      make_conv<T>(cfg.bottleneck, n, 1, ConvSpec{}, false, true, rng);
  for (int r = 0; r < cfg.num_stacks; ++r) {
    for (int x = 0; x < cfg.blocks_per_stack; ++x) {
      const int d = 1 << x;
      TcnBlock<T> block;
      block.conv_in = make_conv<T>(cfg.hidden, cfg.bottleneck, 1, ConvSpec{},
                                   false, true, rng);
      block.act1 = make_prelu<T>(cfg.hidden);
      block.norm1 = make_norm<T>(cfg.hidden);
      ConvSpec dspec;
      dspec.dilation = d;
      dspec.padding = d * (cfg.sep_kernel - 1) / 2;
      dspec.groups = cfg.hidden;
      block.dconv = make_conv<T>(cfg.hidden, cfg.hidden, cfg.sep_kernel, dspec,
                                 false, true, rng);
      block.act2 = make_prelu<T>(cfg.hidden);
      block.norm2 = make_norm<T>(cfg.hidden);
      block.conv_res = make_conv<T>(cfg.bottleneck, cfg.hidden, 1, ConvSpec{},
                                    false, true, rng);
      block.conv_skip =
          make_conv<T>(cfg.skip, cfg.hidden, 1, ConvSpec{}, false, true, rng);
      model.blocks.push_back(std::move(block));
    }
  }
  model.head_act = make_prelu<T>(cfg.skip);
  model.head_conv = make_conv<T>(cfg.num_sources * n, cfg.skip, 1, ConvSpec{},
                                 false, true, rng);

  for (auto it = dilations.rbegin(); it != dilations.rend(); ++it) {
    model.dec_deep.push_back(make_codec_layer<T>(cfg, *it, true, rng));
  }
  ConvSpec last_spec;
  last_spec.stride = cfg.stride;
  model.dec_final =
      make_conv<T>(1, n, cfg.frame_len, last_spec, true, false, rng);
  return model;
}

// ---------------------------------------------------------------------------
// Parameter enumeration (fixed checkpoint order)
// ---------------------------------------------------------------------------

namespace {

template <typename T, typename Out>
void visit_conv(const std::string& prefix, const ConvLayer<T>& layer,
                Out& out) {
  out.emplace_back(prefix + ".weight", layer.weight);
  if (layer.bias) out.emplace_back(prefix + ".bias", *layer.bias);
}

template <typename T, typename Out>
void visit_norm(const std::string& prefix, const NormLayer<T>& layer,
                Out& out) {
  out.emplace_back(prefix + ".gain", layer.gain);
  out.emplace_back(prefix + ".bias", layer.bias);
}

template <typename T, typename Out>
void visit_codec(const std::string& prefix, const CodecLayer<T>& layer,
                 Out& out) {
  visit_conv(prefix + ".conv", layer.conv, out);
  if (layer.act) out.emplace_back(prefix + ".prelu.slopes", layer.act->slopes);
  if (layer.gate) {
    visit_conv(prefix + ".gate.conv", layer.gate->conv, out);
    visit_norm(prefix + ".gate.norm", layer.gate->norm, out);
  }
}

}  // namespace

template <typename T>
std::vector<std::pair<std::string, TensorT<T>>>
SeparationModelT<T>::named_params() const {
  std::vector<std::pair<std::string, TensorT<T>>> out;
  visit_conv("encoder.0", enc_first, out);
  for (size_t i = 0; i < enc_deep.size(); ++i) {
    visit_codec("encoder." + std::to_string(i + 1), enc_deep[i], out);
  }
  visit_norm("separator.norm", sep_norm, out);
  visit_conv("separator.bottleneck", sep_bottleneck, out);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "separator.block" + std::to_string(i);
    visit_conv(p + ".conv_in", blocks[i].conv_in, out);
    out.emplace_back(p + ".act1.slopes", blocks[i].act1.slopes);
    visit_norm(p + ".norm1", blocks[i].norm1, out);
    visit_conv(p + ".dconv", blocks[i].dconv, out);
    out.emplace_back(p + ".act2.slopes", blocks[i].act2.slopes);
    visit_norm(p + ".norm2", blocks[i].norm2, out);
    visit_conv(p + ".res", blocks[i].conv_res, out);
    visit_conv(p + ".skip", blocks[i].conv_skip, out);
  }
  out.emplace_back("separator.head.prelu.slopes", head_act.slopes);
  visit_conv("separator.head.conv", head_conv, out);
  for (size_t i = 0; i < dec_deep.size(); ++i) {
    visit_codec("decoder." + std::to_string(i), dec_deep[i], out);
  }
  visit_conv("decoder.final", dec_final, out);
  return out;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

template <typename T>
TensorT<T> apply_conv(const ConvLayer<T>& layer, const TensorT<T>& x) {
  return layer.transposed ? conv1d_transposed(x, layer.weight, layer.bias,
                                              layer.spec)
                          : conv1d(x, layer.weight, layer.bias, layer.spec);
}

template <typename T>
TensorT<T> apply_norm(const NormLayer<T>& layer, const TensorT<T>& x) {
  return global_layer_norm(x, layer.gain, layer.bias, T(kGlnEps));
}

template <typename T>
void probe_gate_values(GateProbe* probe, const std::string& tag,
                       const TensorT<T>& gate) {
  if (!probe) return;
  GateLayerStats stats;
  stats.layer = tag;
  const int64_t c = gate.dim(0), k = gate.dim(1);
  stats.channel_mean.resize(c);
  stats.channel_min.resize(c);
  stats.channel_max.resize(c);
  const T* g = gate.values().data();
  for (int64_t ch = 0; ch < c; ++ch) {
    double acc = 0, lo = 1, hi = 0;
    for (int64_t t = 0; t < k; ++t) {
      const double v = g[ch * k + t];
      acc += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    stats.channel_mean[ch] = acc / static_cast<double>(k);
    stats.channel_min[ch] = lo;
    stats.channel_max[ch] = hi;
  }
  probe->layers.push_back(std::move(stats));
}

int64_t aligned_length(int64_t t, int frame_len, int stride) {
  const int64_t over = std::max<int64_t>(t - frame_len, 0);
  const int64_t steps = (over + stride - 1) / stride;
  return frame_len + steps * stride;
}

}  // namespace

template <typename T>
TensorT<T> glu_layer(const TensorT<T>& input, const CodecLayer<T>& layer,
                     GateProbe* probe, const std::string& tag) {
  if (!layer.gate) {
    throw std::invalid_argument("glu_layer: layer has no gate branch");
  }
  auto value = apply_conv(layer.conv, input);
  auto gate =
      sigmoid(apply_norm(layer.gate->norm, apply_conv(layer.gate->conv, input)));
  probe_gate_values(probe, tag, gate);
  return mul(value, gate);
}

namespace {

template <typename T>
TensorT<T> apply_codec_layer(const CodecLayer<T>& layer, const TensorT<T>& x,
                             GateProbe* probe, const std::string& tag) {
  if (layer.gate) return glu_layer(x, layer, probe, tag);
  return prelu(apply_conv(layer.conv, x), layer.act->slopes);
}

}  // namespace

template <typename T>
TensorT<T> encode(const SeparationModelT<T>& model, const TensorT<T>& x,
                  GateProbe* probe) {
  if (x.ndim() != 1) {
    throw std::invalid_argument("encode: input must be 1-D, got " +
                                shape_str(x.shape()));
  }
  const ModelConfig& cfg = model.config;
  if (x.numel() < cfg.frame_len) {
    throw std::invalid_argument(
        "encode: input length " + std::to_string(x.numel()) +
        " shorter than frame length " + std::to_string(cfg.frame_len));
  }
  const int64_t padded = aligned_length(x.numel(), cfg.frame_len, cfg.stride);
  TensorT<T> h = x;
  if (padded != x.numel()) h = pad_end(h, padded - x.numel());
  h = apply_conv(model.enc_first, reshape(h, {1, padded}));
  for (size_t i = 0; i < model.enc_deep.size(); ++i) {
    h = apply_codec_layer(model.enc_deep[i], h, probe,
                          "encoder." + std::to_string(i + 1));
  }
  return h;
}

Tensor encode(const SeparationModel& model, const AudioBuffer& x) {
  auto xt = Tensor::from_data({x.length()},
                              std::vector<float>(x.samples.begin(),
                                                 x.samples.end()));
  return encode<float>(model, xt);
}

template <typename T>
std::vector<TensorT<T>> separate_latent(const SeparationModelT<T>& model,
                                        const TensorT<T>& latent) {
  const ModelConfig& cfg = model.config;
  if (latent.ndim() != 2 || latent.dim(0) != cfg.num_filters) {
    throw std::invalid_argument("separate_latent: expected [" +
                                std::to_string(cfg.num_filters) +
                                " x K] latent, got " +
                                shape_str(latent.shape()));
  }
  auto h = apply_conv(model.sep_bottleneck, apply_norm(model.sep_norm, latent));
  TensorT<T> skip_sum;
  for (const auto& block : model.blocks) {
    auto y = apply_conv(block.conv_in, h);
    y = apply_norm(block.norm1, prelu(y, block.act1.slopes));
    y = apply_conv(block.dconv, y);
    y = apply_norm(block.norm2, prelu(y, block.act2.slopes));
    auto res = apply_conv(block.conv_res, y);
    auto skip = apply_conv(block.conv_skip, y);
    h = add(h, res);
    skip_sum = skip_sum.defined() ? add(skip_sum, skip) : skip;
  }
  auto logits =
      apply_conv(model.head_conv, prelu(skip_sum, model.head_act.slopes));
  auto masks_all = sigmoid(logits);  // [C*N x K]
  std::vector<TensorT<T>> masks;
  masks.reserve(cfg.num_sources);
  for (int c = 0; c < cfg.num_sources; ++c) {
    masks.push_back(narrow(masks_all, 0, static_cast<int64_t>(c) *
                                             cfg.num_filters,
                           cfg.num_filters));
  }
  return masks;
}

template <typename T>
TensorT<T> decode(const SeparationModelT<T>& model, const TensorT<T>& masked,
                  int64_t out_len, GateProbe* probe, const std::string& tag) {
  TensorT<T> h = masked;
  for (size_t i = 0; i < model.dec_deep.size(); ++i) {
    std::string label = "decoder." + std::to_string(i);
    if (!tag.empty()) label += "." + tag;
    h = apply_codec_layer(model.dec_deep[i], h, probe, label);
  }
  auto y = apply_conv(model.dec_final, h);  // [1 x T_padded]
  const int64_t padded = y.dim(1);
  if (out_len > padded) {
    throw std::invalid_argument("decode: requested length " +
                                std::to_string(out_len) +
                                " exceeds decoded length " +
                                std::to_string(padded));
  }
  y = reshape(y, {padded});
  return out_len == padded ? y : narrow(y, 0, 0, out_len);
}

template <typename T>
std::vector<TensorT<T>> separate(const SeparationModelT<T>& model,
                                 const TensorT<T>& x, GateProbe* probe) {
  const int64_t t = x.numel();
  auto latent = encode(model, x, probe);
  auto masks = separate_latent(model, latent);
  std::vector<TensorT<T>> sources;
  sources.reserve(masks.size());
  for (size_t c = 0; c < masks.size(); ++c) {
    auto masked = mul(masks[c], latent);
    sources.push_back(
        decode(model, masked, t, probe, "src" + std::to_string(c)));
  }
  return sources;
}

std::vector<AudioBuffer> separate(const SeparationModel& model,
                                  const AudioBuffer& x) {
  NoGradGuard no_grad;
  auto xt = Tensor::from_data({x.length()},
                              std::vector<float>(x.samples.begin(),
                                                 x.samples.end()));
  auto outs = separate<float>(model, xt);
  std::vector<AudioBuffer> buffers;
  buffers.reserve(outs.size());
  for (auto& o : outs) {
    buffers.push_back(AudioBuffer{
        std::vector<float>(o.values().begin(), o.values().end()),
        x.sample_rate});
  }
  return buffers;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'S', 'N', 'C', 'K', 'P', 'T', '1'};

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path)
      : out(path, std::ios::binary | std::ios::trunc) {
    if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  }
  void raw(const void* p, size_t n) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  template <typename V>
  void pod(V v) { raw(&v, sizeof(V)); }
  void str(const std::string& s) {
    pod<uint16_t>(static_cast<uint16_t>(s.size()));
    raw(s.data(), s.size());
  }
};

struct Reader {
  std::ifstream in;
  std::string path;
  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw IoError("checkpoint: cannot open " + p);
  }
  void raw(void* p, size_t n) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) {
      throw IoError("checkpoint: " + path + " truncated");
    }
  }
  template <typename V>
  V pod() {
    V v;
    raw(&v, sizeof(V));
    return v;
  }
  std::string str() {
    const uint16_t n = pod<uint16_t>();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
};

void write_config(Writer& w, const ModelConfig& cfg) {
  auto i32 = [&w](int v) { w.pod<int32_t>(static_cast<int32_t>(v)); };
  i32(cfg.num_filters);
  i32(cfg.frame_len);
  i32(cfg.stride);
  i32(cfg.num_sources);
  i32(cfg.depth);
  i32(static_cast<int>(cfg.variant));
  i32(cfg.bottleneck);
  i32(cfg.hidden);
  i32(cfg.skip);
  i32(cfg.sep_kernel);
  i32(cfg.blocks_per_stack);
  i32(cfg.num_stacks);
  i32(static_cast<int>(cfg.enc_dilations.size()));
  for (int d : cfg.enc_dilations) i32(d);
}

ModelConfig read_config(Reader& r) {
  ModelConfig cfg;
  auto i32 = [&r]() { return static_cast<int>(r.pod<int32_t>()); };
  cfg.num_filters = i32();
  cfg.frame_len = i32();
  cfg.stride = i32();
  cfg.num_sources = i32();
  cfg.depth = i32();
  cfg.variant = static_cast<EncoderVariant>(i32());
  cfg.bottleneck = i32();
  cfg.hidden = i32();
  cfg.skip = i32();
  cfg.sep_kernel = i32();
  cfg.blocks_per_stack = i32();
  cfg.num_stacks = i32();
  const int ndil = i32();
  cfg.enc_dilations.resize(ndil);
  for (int& d : cfg.enc_dilations) d = i32();
  return cfg;
}

template <typename T>
void write_array(Writer& w, std::span<const T> vals) {
  w.raw(vals.data(), vals.size() * sizeof(T));
}

template <typename T>
void read_array(Reader& r, uint32_t file_dtype, std::span<T> dst) {
  if (file_dtype == sizeof(T)) {
    r.raw(dst.data(), dst.size() * sizeof(T));
  } else if (file_dtype == 4) {
    std::vector<float> buf(dst.size());
    r.raw(buf.data(), buf.size() * 4);
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(buf[i]);
  } else if (file_dtype == 8) {
    std::vector<double> buf(dst.size());
    r.raw(buf.data(), buf.size() * 8);
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(buf[i]);
  } else {
    throw IoError("checkpoint: " + r.path + " has unsupported value width " +
                  std::to_string(file_dtype));
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const SeparationModelT<T>& model,
                     const OptState<T>* opt) {
  Writer w(path);
  w.raw(kMagic, sizeof(kMagic));
  w.pod<uint32_t>(sizeof(T));
  write_config(w, model.config);
  auto params = model.named_params();
  w.pod<uint32_t>(static_cast<uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    w.str(name);
    w.pod<uint8_t>(static_cast<uint8_t>(tensor.ndim()));
    for (int64_t d : tensor.shape()) w.pod<int64_t>(d);
    write_array<T>(w, tensor.values());
  }
  w.pod<uint8_t>(opt ? 1 : 0);
  if (opt) {
    if (opt->m.size() != params.size() || opt->v.size() != params.size()) {
      throw std::invalid_argument(
          "save_checkpoint: optimizer moment count mismatch");
    }
    w.pod<int64_t>(opt->step);
    w.pod<double>(opt->lr);
    w.pod<double>(opt->best_val_loss);
    w.pod<uint8_t>(opt->has_best ? 1 : 0);
    w.pod<int32_t>(opt->epochs_since_improvement);
    w.pod<int32_t>(opt->epoch);
    w.pod<uint64_t>(opt->seed);
    for (const auto& m : opt->m) write_array<T>(w, std::span<const T>(m));
    for (const auto& v : opt->v) write_array<T>(w, std::span<const T>(v));
  }
  if (!w.out) throw IoError("checkpoint: short write to " + path);
}

template <typename T>
SeparationModelT<T> load_checkpoint(const std::string& path,
                                    OptState<T>* opt_out) {
  Reader r(path);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("checkpoint: " + path + " has wrong magic/version");
  }
  const uint32_t dtype = r.pod<uint32_t>();
  ModelConfig cfg = read_config(r);
  validate(cfg);
  auto model = build_model<T>(cfg, 0);
  auto params = model.named_params();
  const uint32_t n_params = r.pod<uint32_t>();
  if (n_params != params.size()) {
    throw IoError("checkpoint: " + path + " holds " + std::to_string(n_params) +
                  " parameters, config implies " +
                  std::to_string(params.size()));
  }
  for (auto& [name, tensor] : params) {
    const std::string file_name = r.str();
    if (file_name != name) {
      throw IoError("checkpoint: " + path + " parameter order mismatch: got '" +
                    file_name + "', expected '" + name + "'");
    }
    const int ndim = r.pod<uint8_t>();
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = r.pod<int64_t>();
    if (dims != tensor.shape()) {
      throw IoError("checkpoint: " + path + " parameter '" + name +
                    "' has shape " + shape_str(dims) + ", expected " +
                    shape_str(tensor.shape()));
    }
    TensorT<T> t = tensor;
    read_array<T>(r, dtype, t.values());
  }
  const bool has_opt = r.pod<uint8_t>() != 0;
  if (opt_out) {
    if (!has_opt) {
      throw IoError("checkpoint: " + path + " carries no optimizer state");
    }
    opt_out->step = r.pod<int64_t>();
    opt_out->lr = r.pod<double>();
    opt_out->best_val_loss = r.pod<double>();
    opt_out->has_best = r.pod<uint8_t>() != 0;
    opt_out->epochs_since_improvement = r.pod<int32_t>();
    opt_out->epoch = r.pod<int32_t>();
    opt_out->seed = r.pod<uint64_t>();
    opt_out->m.clear();
    opt_out->v.clear();
    for (const auto& [name, tensor] : params) {
      std::vector<T> m(tensor.numel());
      read_array<T>(r, dtype, std::span<T>(m));
      opt_out->m.push_back(std::move(m));
    }
    for (const auto& [name, tensor] : params) {
      std::vector<T> v(tensor.numel());
      read_array<T>(r, dtype, std::span<T>(v));
      opt_out->v.push_back(std::move(v));
    }
  }
  return model;
}

ModelConfig peek_checkpoint_config(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("checkpoint: " + path + " has wrong magic/version");
  }
  r.pod<uint32_t>();  // dtype
  return read_config(r);
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

#define TASNET_MODEL_INSTANTIATE(T)                                          \
  template struct SeparationModelT<T>;                                       \
  template SeparationModelT<T> build_model<T>(const ModelConfig&, uint64_t); \
  template TensorT<T> glu_layer<T>(const TensorT<T>&, const CodecLayer<T>&,  \
                                   GateProbe*, const std::string&);          \
  template TensorT<T> encode<T>(const SeparationModelT<T>&,                  \
                                const TensorT<T>&, GateProbe*);              \
  template std::vector<TensorT<T>> separate_latent<T>(                       \
      const SeparationModelT<T>&, const TensorT<T>&);                        \
  template TensorT<T> decode<T>(const SeparationModelT<T>&,                  \
                                const TensorT<T>&, int64_t, GateProbe*,      \
                                const std::string&);                         \
  template std::vector<TensorT<T>> separate<T>(const SeparationModelT<T>&,   \
                                               const TensorT<T>&,            \
                                               GateProbe*);                  \
  template void save_checkpoint<T>(const std::string&,                       \
                                   const SeparationModelT<T>&,               \
                                   const OptState<T>*);                      \
  template SeparationModelT<T> load_checkpoint<T>(const std::string&,        \
                                                  OptState<T>*);

TASNET_MODEL_INSTANTIATE(float)
TASNET_MODEL_INSTANTIATE(double)

#undef TASNET_MODEL_INSTANTIATE

}  // namespace tasnet
