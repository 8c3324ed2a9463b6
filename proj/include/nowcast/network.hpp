#pragma once

#include "nowcast/batchnorm.hpp"
#include "nowcast/cells.hpp"
#include "nowcast/conv.hpp"
#include "nowcast/gridio.hpp"

namespace nowcast {

inline constexpr int kSeqLen = 3;
inline constexpr int kTimeFeatureCount = 36;

struct NetworkConfig {
  std::vector<int> layer_channels{128, 128, 64};
  int kernel = 5;
  CellType cell_type = CellType::convlstm;
  Activation activation = Activation::relu;
  std::array<int, 3> head_kernel{3, 3, 3};
  int input_channels = 1 + kTimeFeatureCount;
  int horizon = 1;
  int rows = 0, cols = 0;

  void validate() const {
    if (layer_channels.empty()) throw std::invalid_argument("NetworkConfig: empty layer list");
    if (horizon < 1 || horizon > 3) throw std::invalid_argument("NetworkConfig: horizon must be 1..3");
    if (kernel % 2 == 0) throw std::invalid_argument("NetworkConfig: even cell kernel");
    for (int k : head_kernel)
      if (k % 2 == 0) throw std::invalid_argument("NetworkConfig: even head kernel");
    if (input_channels != 1 && input_channels != 1 + kTimeFeatureCount)
      throw std::invalid_argument("NetworkConfig: input_channels must be 1 or 37");
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("NetworkConfig: rows/cols unset");
  }

  bool operator==(const NetworkConfig&) const = default;
};

enum class RunMode { train, infer };

/// Layer stack, all parameters, normalization constants and horizon index.
template <class S>
struct NowcastModel {
  NetworkConfig config;
  std::vector<CellWeights<S>> layers;
  std::vector<BatchNormParams<S>> norms;  // one between each pair of cell layers
  ConvKernel<S> head;                     // Conv3D, 1 output channel, sigmoid applied after
  NormalizationSpec normalization;
  std::uint64_t seed = 0;
  std::uint32_t epochs_trained = 0;
  std::vector<float> train_loss_history, val_loss_history;
};

template <class S>
NowcastModel<S> make_model(const NetworkConfig& cfg, std::uint64_t seed,
                           NormalizationSpec norm = {}) {
  cfg.validate();
  NowcastModel<S> m;
  m.config = cfg;
  m.normalization = norm;
  m.seed = seed;
  std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
  int in_ch = cfg.input_channels;
  for (size_t l = 0; l < cfg.layer_channels.size(); ++l) {
    auto w = make_cell_weights<S>(cfg.cell_type, in_ch, cfg.layer_channels[l], cfg.kernel);
    init_cell_weights(w, rng);
    m.layers.push_back(std::move(w));
    if (l + 1 < cfg.layer_channels.size())
      m.norms.push_back(BatchNormParams<S>::init(cfg.layer_channels[l]));
    in_ch = cfg.layer_channels[l];
  }
  m.head = ConvKernel<S>{
      Tensor<S>({1, cfg.layer_channels.back(), cfg.head_kernel[0], cfg.head_kernel[1],
                 cfg.head_kernel[2]}),
      Tensor<S>({1})};
  glorot_fill(m.head.weights, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Parameter registry (declared order; drives optimizer and checkpoints)
// ---------------------------------------------------------------------------

template <class S>
struct ParamRef {
  std::string name;
  Tensor<S>* tensor;
};

/// Trainable parameters in declared order: per layer all gate kernels and
/// biases (plus peepholes), then batch-norm gamma/beta, then the head.
template <class S>
std::vector<ParamRef<S>> model_parameters(NowcastModel<S>& m) {
  std::vector<ParamRef<S>> out;
  const char* lstm_gates = "ifco";
  const char* gru_gates = "zrh";
  for (size_t l = 0; l < m.layers.size(); ++l) {
    auto& layer = m.layers[l];
    const char* names = layer.type == CellType::convgru ? gru_gates : lstm_gates;
    for (size_t g = 0; g < layer.gates.size(); ++g) {
      const std::string base = "layer" + std::to_string(l) + "." + names[g];
      out.push_back({base + ".Wx", &layer.gates[g].Wx});
      out.push_back({base + ".Wh", &layer.gates[g].Wh});
      out.push_back({base + ".b", &layer.gates[g].b});
    }
    if (layer.has_peephole()) {
      const std::string base = "layer" + std::to_string(l);
      out.push_back({base + ".Wci", &layer.peephole[0]});
      out.push_back({base + ".Wcf", &layer.peephole[1]});
      out.push_back({base + ".Wco", &layer.peephole[2]});
    }
  }
  for (size_t n = 0; n < m.norms.size(); ++n) {
    const std::string base = "norm" + std::to_string(n);
    out.push_back({base + ".gamma", &m.norms[n].gamma});
    out.push_back({base + ".beta", &m.norms[n].beta});
  }
  out.push_back({"head.weights", &m.head.weights});
  out.push_back({"head.bias", &m.head.bias});
  return out;
}

/// Everything serialized in a checkpoint: trainable parameters plus batch-norm
/// running statistics.
template <class S>
std::vector<ParamRef<S>> model_state_tensors(NowcastModel<S>& m) {
  auto out = model_parameters(m);
  for (size_t n = 0; n < m.norms.size(); ++n) {
    const std::string base = "norm" + std::to_string(n);
    out.push_back({base + ".running_mean", &m.norms[n].running_mean});
    out.push_back({base + ".running_var", &m.norms[n].running_var});
  }
  return out;
}

namespace detail {

// index bookkeeping for the flat gradient vector (same order as
// model_parameters)
template <class S>
struct ParamLayout {
  std::vector<size_t> layer_start;
  size_t norm_start = 0, head_start = 0, total = 0;

  explicit ParamLayout(const NowcastModel<S>& m) {
    size_t cursor = 0;
    for (const auto& layer : m.layers) {
      layer_start.push_back(cursor);
      cursor += layer.gates.size() * 3 + (layer.has_peephole() ? 3 : 0);
    }
    norm_start = cursor;
    cursor += m.norms.size() * 2;
    head_start = cursor;
    total = cursor + 2;
  }
};

template <class S>
Tensor<S> slice_bt(const Tensor<S>& x, Eigen::Index b, Eigen::Index t) {
  // (B,T,C,H,W) -> (C,H,W)
  const Eigen::Index C = x.dim(2), H = x.dim(3), W = x.dim(4);
  const Eigen::Index n = C * H * W;
  Tensor<S> out({C, H, W});
  std::memcpy(out.data(), x.data() + (b * x.dim(1) + t) * n, sizeof(S) * size_t(n));
  return out;
}

template <class S>
void set_bt(Tensor<S>& x, Eigen::Index b, Eigen::Index t, const Tensor<S>& v) {
  const Eigen::Index n = x.dim(2) * x.dim(3) * x.dim(4);
  std::memcpy(x.data() + (b * x.dim(1) + t) * n, v.data(), sizeof(S) * size_t(n));
}

template <class S>
void add_bt(Tensor<S>& x, Eigen::Index b, Eigen::Index t, const Tensor<S>& v) {
  const Eigen::Index n = x.dim(2) * x.dim(3) * x.dim(4);
  Eigen::Map<ArrayX<S>>(x.data() + (b * x.dim(1) + t) * n, n) +=
      Eigen::Map<const ArrayX<S>>(v.data(), n);
}

// (B,T,C,H,W) batch element -> (C,T,H,W)
template <class S>
Tensor<S> gather_ct(const Tensor<S>& x, Eigen::Index b) {
  const Eigen::Index T = x.dim(1), C = x.dim(2), plane = x.dim(3) * x.dim(4);
  Tensor<S> out({C, T, x.dim(3), x.dim(4)});
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index c = 0; c < C; ++c)
      std::memcpy(out.data() + (c * T + t) * plane, x.data() + ((b * T + t) * C + c) * plane,
                  sizeof(S) * size_t(plane));
  return out;
}

// (C,T,H,W) -> batch element of (B,T,C,H,W)
template <class S>
void scatter_ct(Tensor<S>& x, Eigen::Index b, const Tensor<S>& v) {
  const Eigen::Index T = x.dim(1), C = x.dim(2), plane = x.dim(3) * x.dim(4);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index c = 0; c < C; ++c)
      std::memcpy(x.data() + ((b * T + t) * C + c) * plane, v.data() + (c * T + t) * plane,
                  sizeof(S) * size_t(plane));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Input assembly
// ---------------------------------------------------------------------------

/// (T=3, C, rows, cols): channel 0 is normalized DSR, channels 1..36 the
/// window's one-hot time features broadcast as constant planes.
template <class S>
Tensor<S> assemble_input(const SampleWindow& window, const NormalizationSpec& spec,
                         int input_channels = 1 + kTimeFeatureCount) {
  if (input_channels != 1 && input_channels != 1 + kTimeFeatureCount)
    throw std::invalid_argument("assemble_input: input_channels must be 1 or 37");
  const GridFrame& first = window.input(0);
  const Eigen::Index rows = first.rows, cols = first.cols, plane = rows * cols;
  Tensor<S> out({kSeqLen, input_channels, rows, cols});
  for (int t = 0; t < kSeqLen; ++t) {
    auto dsr = normalize<S>(window.input(t), spec);
    std::memcpy(out.data() + Eigen::Index(t) * input_channels * plane, dsr.data(),
                sizeof(S) * size_t(plane));
    for (int f = 1; f < input_channels; ++f)
      Eigen::Map<ArrayX<S>>(out.data() + (Eigen::Index(t) * input_channels + f) * plane, plane)
          .setConstant(S(window.time_features[size_t(f - 1)]));
  }
  return out;
}

/// Stacks per-window inputs into a batch tensor (B,3,C,rows,cols).
template <class S>
Tensor<S> assemble_batch(const std::vector<SampleWindow>& windows, const NormalizationSpec& spec,
                         int input_channels) {
  if (windows.empty()) throw std::invalid_argument("assemble_batch: no windows");
  auto first = assemble_input<S>(windows[0], spec, input_channels);
  Tensor<S> out({Eigen::Index(windows.size()), first.dim(0), first.dim(1), first.dim(2), first.dim(3)});
  std::memcpy(out.data(), first.data(), sizeof(S) * size_t(first.size()));
  for (size_t b = 1; b < windows.size(); ++b) {
    auto x = assemble_input<S>(windows[b], spec, input_channels);
    std::memcpy(out.data() + Eigen::Index(b) * first.size(), x.data(), sizeof(S) * size_t(x.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <class S>
struct ForwardCache {
  std::vector<PackedCell<S>> packed;                   // per layer
  std::vector<std::vector<CellCache<S>>> cell_caches;  // [layer][b*T + t]
  std::vector<BatchNormCache<S>> bn_caches;
  std::vector<Tensor<S>> head_inputs;  // per batch element, (C,T,H,W)
  Tensor<S> output;                    // post-sigmoid
};

/// Unrolls every cell layer over the 3 input steps (batch norm between
/// layers), then the Conv3D head and a sigmoid. Train mode uses batch
/// statistics in the norms and records a cache for backward.
template <class S>
Tensor<S> forward(const NowcastModel<S>& model, const Tensor<S>& input, RunMode mode,
                  ForwardCache<S>* cache = nullptr) {
  model.config.validate();
  if (input.rank() != 5 || input.dim(1) != kSeqLen ||
      input.dim(2) != model.config.input_channels || input.dim(3) != model.config.rows ||
      input.dim(4) != model.config.cols)
    throw std::invalid_argument("forward: input shape " + shape_str(input.shape()) +
                                " does not match configured (B,3," +
                                std::to_string(model.config.input_channels) + "," +
                                std::to_string(model.config.rows) + "," +
                                std::to_string(model.config.cols) + ")");
  const Eigen::Index B = input.dim(0), rows = input.dim(3), cols = input.dim(4);
  const size_t L = model.layers.size();
  if (cache) {
    cache->packed.clear();
    cache->cell_caches.assign(L, {});
    cache->bn_caches.assign(model.norms.size(), {});
    cache->head_inputs.assign(size_t(B), {});
  }

  Tensor<S> cur = input;
  for (size_t l = 0; l < L; ++l) {
    auto packed = pack_cell(model.layers[l]);
    const int hid = model.layers[l].hidden_channels;
    Tensor<S> seq({B, kSeqLen, hid, rows, cols});
    if (cache) cache->cell_caches[l].resize(size_t(B) * kSeqLen);
    for (Eigen::Index b = 0; b < B; ++b) {
      auto st = zero_state<S>(model.layers[l].type, hid, rows, cols);
      for (int t = 0; t < kSeqLen; ++t) {
        auto x = detail::slice_bt(cur, b, t);
        CellCache<S>* cc = cache ? &cache->cell_caches[l][size_t(b) * kSeqLen + size_t(t)] : nullptr;
        st = cell_step(x, st, packed, model.config.activation, cc);
        detail::set_bt(seq, b, t, st.H);
      }
    }
    if (!seq.all_finite())
      throw std::runtime_error("forward: non-finite activations in cell layer " + std::to_string(l));
    if (l + 1 < L) {
      auto& params = const_cast<NowcastModel<S>&>(model).norms[l];
      seq = batchnorm_forward(seq, params, mode == RunMode::train,
                              cache ? &cache->bn_caches[l] : nullptr);
      if (!seq.all_finite())
        throw std::runtime_error("forward: non-finite activations in batch norm " + std::to_string(l));
    }
    if (cache) cache->packed.push_back(std::move(packed));
    cur = std::move(seq);
  }

  Tensor<S> out({B, kSeqLen, 1, rows, cols});
  for (Eigen::Index b = 0; b < B; ++b) {
    auto hin = detail::gather_ct(cur, b);
    auto z = conv3d_same(hin, model.head);  // (1,T,H,W) == (T,1,H,W) in memory
    std::memcpy(out.data() + b * z.size(), z.data(), sizeof(S) * size_t(z.size()));
    if (cache) cache->head_inputs[size_t(b)] = std::move(hin);
  }
  if (!out.all_finite()) throw std::runtime_error("forward: non-finite activations in head");
  Tensor<S> y = apply_activation(out, Activation::sigmoid);
  if (cache) cache->output = y;
  return y;
}

/// Exact gradients for every trainable parameter, in model_parameters order.
/// When `grad_input` is non-null it receives the gradient w.r.t. the input.
template <class S>
std::vector<Tensor<S>> backward(NowcastModel<S>& model, const ForwardCache<S>& cache,
                                const Tensor<S>& grad_out, Tensor<S>* grad_input = nullptr) {
  if (cache.output.size() == 0) throw std::invalid_argument("backward: missing forward cache");
  check_same_shape(grad_out, cache.output, "backward");
  const Eigen::Index B = grad_out.dim(0), rows = grad_out.dim(3), cols = grad_out.dim(4);
  const size_t L = model.layers.size();
  detail::ParamLayout<S> layout(model);
  auto refs = model_parameters(model);
  std::vector<Tensor<S>> grads;
  grads.reserve(refs.size());
  for (auto& r : refs) grads.emplace_back(r.tensor->shape());

  // sigmoid head activation
  Tensor<S> dz(grad_out.shape());
  dz.array() = grad_out.array() * cache.output.array() * (S(1) - cache.output.array());

  // Conv3D head
  const int last_ch = model.config.layer_channels.back();
  Tensor<S> dseq({B, kSeqLen, last_ch, rows, cols});
  for (Eigen::Index b = 0; b < B; ++b) {
    Tensor<S> dz_b({1, kSeqLen, rows, cols});
    std::memcpy(dz_b.data(), dz.data() + b * dz_b.size(), sizeof(S) * size_t(dz_b.size()));
    auto g3 = conv3d_same_backward(dz_b, cache.head_inputs[size_t(b)], model.head);
    grads[layout.head_start].array() += g3.grad_weights.array();
    grads[layout.head_start + 1].array() += g3.grad_bias.array();
    detail::scatter_ct(dseq, b, g3.grad_input);
  }

  for (size_t li = L; li-- > 0;) {
    const auto& layer = model.layers[li];
    const auto& packed = cache.packed[li];
    const int in_ch = layer.input_channels;
    Tensor<S> dprev_seq({B, kSeqLen, in_ch, rows, cols});
    for (Eigen::Index b = 0; b < B; ++b) {
      Tensor<S> dH_rec, dC_rec;
      for (int t = kSeqLen - 1; t >= 0; --t) {
        auto dH = detail::slice_bt(dseq, b, t);
        if (dH_rec.size()) dH.array() += dH_rec.array();
        auto g = cell_backward(dH, dC_rec, cache.cell_caches[li][size_t(b) * kSeqLen + size_t(t)],
                               packed, model.config.activation);
        const size_t base = layout.layer_start[li];
        for (size_t gi = 0; gi < layer.gates.size(); ++gi) {
          grads[base + gi * 3 + 0].array() += g.dgates[gi].Wx.array();
          grads[base + gi * 3 + 1].array() += g.dgates[gi].Wh.array();
          grads[base + gi * 3 + 2].array() += g.dgates[gi].b.array();
        }
        if (layer.has_peephole()) {
          const size_t pbase = base + layer.gates.size() * 3;
          for (size_t pi = 0; pi < 3; ++pi) grads[pbase + pi].array() += g.dpeephole[pi].array();
        }
        dH_rec = std::move(g.dprev.H);
        dC_rec = std::move(g.dprev.C);
        detail::set_bt(dprev_seq, b, t, g.dx);
      }
    }
    if (li > 0) {
      auto bg = batchnorm_backward(dprev_seq, cache.bn_caches[li - 1], model.norms[li - 1]);
      grads[layout.norm_start + (li - 1) * 2].array() += bg.dgamma.array();
      grads[layout.norm_start + (li - 1) * 2 + 1].array() += bg.dbeta.array();
      dseq = std::move(bg.dx);
    } else if (grad_input) {
      *grad_input = std::move(dprev_seq);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Runs each per-horizon model in infer mode and denormalizes its last output
/// frame into a GridFrame at t+h.
template <class S>
std::array<GridFrame, 3> predict_window(const std::vector<const NowcastModel<S>*>& models,
                                        const SampleWindow& window) {
  std::array<const NowcastModel<S>*, 3> by_horizon{nullptr, nullptr, nullptr};
  for (const auto* m : models) {
    if (!m) continue;
    by_horizon[size_t(m->config.horizon - 1)] = m;
  }
  for (int h = 1; h <= 3; ++h)
    if (!by_horizon[size_t(h - 1)])
      throw std::invalid_argument("predict_window: missing model for horizon " + std::to_string(h));
  const auto& cfg0 = by_horizon[0]->config;
  for (int h = 2; h <= 3; ++h) {
    const auto& c = by_horizon[size_t(h - 1)]->config;
    if (c.rows != cfg0.rows || c.cols != cfg0.cols)
      throw std::invalid_argument("predict_window: grid shape mismatch across horizon models");
  }

  const GridFrame& base = window.input(2);
  std::array<GridFrame, 3> out;
  for (int h = 1; h <= 3; ++h) {
    const auto* m = by_horizon[size_t(h - 1)];
    auto input = assemble_input<S>(window, m->normalization, m->config.input_channels);
    Tensor<S> batch({1, input.dim(0), input.dim(1), input.dim(2), input.dim(3)}, input.array());
    auto y = forward(*m, batch, RunMode::infer);
    GridFrame f;
    f.timestamp = base.timestamp + std::int64_t(h) * 3600;
    f.rows = base.rows;
    f.cols = base.cols;
    f.extent = base.extent;
    f.values.resize(Eigen::Index(f.rows) * f.cols);
    const Eigen::Index plane = Eigen::Index(f.rows) * f.cols;
    const S* last = y.data() + (Eigen::Index(kSeqLen) - 1) * plane;  // B=1, last frame
    for (Eigen::Index i = 0; i < plane; ++i)
      f.values[i] = float(denormalize_value(last[i], m->normalization));
    out[size_t(h - 1)] = std::move(f);
  }
  return out;
}

}  // namespace nowcast
