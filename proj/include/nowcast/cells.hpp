#pragma once

#include <array>
#include <random>

#include "nowcast/conv.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

enum class CellType { convlstm, convlstm_peephole, convgru };

inline const char* cell_type_name(CellType t) {
  switch (t) {
    case CellType::convlstm: return "convlstm";
    case CellType::convlstm_peephole: return "peephole";
    case CellType::convgru: return "convgru";
  }
  return "?";
}

/// Hidden state H and (for LSTM variants) cell state C.
template <class S>
struct CellState {
  Tensor<S> H;
  Tensor<S> C;
};

template <class S>
CellState<S> zero_state(CellType type, int hidden, Eigen::Index rows, Eigen::Index cols) {
  CellState<S> st;
  st.H = Tensor<S>({hidden, rows, cols});
  if (type != CellType::convgru) st.C = Tensor<S>({hidden, rows, cols});
  return st;
}

/// One gate: input kernel, hidden kernel, shared bias.
template <class S>
struct GateWeights {
  Tensor<S> Wx;  // (hidden, input, k, k)
  Tensor<S> Wh;  // (hidden, hidden, k, k)
  Tensor<S> b;   // (hidden)
};

/// Gate order: i, f, c, o for LSTM variants; z, r, h for ConvGRU.
template <class S>
struct CellWeights {
  CellType type = CellType::convlstm;
  int input_channels = 0;
  int hidden_channels = 0;
  int ksize = 5;
  std::vector<GateWeights<S>> gates;
  std::array<Tensor<S>, 3> peephole;  // W_ci, W_cf, W_co, each (hidden, hidden, k, k)

  int gate_count() const { return type == CellType::convgru ? 3 : 4; }
  bool has_peephole() const { return type == CellType::convlstm_peephole; }
};

template <class S>
CellWeights<S> make_cell_weights(CellType type, int input_ch, int hidden_ch, int k = 5) {
  if (k % 2 == 0) throw std::invalid_argument("cell kernel size must be odd");
  CellWeights<S> w;
  w.type = type;
  w.input_channels = input_ch;
  w.hidden_channels = hidden_ch;
  w.ksize = k;
  const int gates = type == CellType::convgru ? 3 : 4;
  for (int g = 0; g < gates; ++g)
    w.gates.push_back({Tensor<S>({hidden_ch, input_ch, k, k}), Tensor<S>({hidden_ch, hidden_ch, k, k}),
                       Tensor<S>({hidden_ch})});
  if (type == CellType::convlstm_peephole)
    for (auto& p : w.peephole) p = Tensor<S>({hidden_ch, hidden_ch, k, k});
  return w;
}

template <class S>
void glorot_fill(Tensor<S>& w, std::mt19937& rng) {
  // fan_in/fan_out per kernel: (in_ch, out_ch) x receptive field
  Eigen::Index rf = 1;
  for (int d = 2; d < w.rank(); ++d) rf *= w.dim(d);
  const double fan_in = double(w.dim(1) * rf), fan_out = double(w.dim(0) * rf);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = static_cast<S>(dist(rng));
}

/// Glorot-uniform kernels, zero biases, forget-gate bias +1.
template <class S>
void init_cell_weights(CellWeights<S>& w, std::mt19937& rng) {
  for (auto& g : w.gates) {
    glorot_fill(g.Wx, rng);
    glorot_fill(g.Wh, rng);
    g.b.array().setZero();
  }
  if (w.type != CellType::convgru) w.gates[1].b.array().setConstant(S(1));
  if (w.has_peephole())
    for (auto& p : w.peephole) glorot_fill(p, rng);
}

// ---------------------------------------------------------------------------
// Packed fast path: all main-path gates share one im2col over [x ; H_prev],
// computed as a single convolution with stacked output channels.
// ---------------------------------------------------------------------------

template <class S>
struct PackedCell {
  CellType type;
  int input_channels, hidden_channels, ksize;
  ConvKernel<S> main;  // LSTM: 4*hid outputs over in+hid; GRU: z,r (2*hid outputs)
  ConvKernel<S> cand;  // GRU only: candidate over [x ; r.H_prev]
  bool has_peephole = false;
  std::array<ConvKernel<S>, 3> peep;  // bias-free hid->hid kernels
};

namespace detail {

template <class S>
Tensor<S> stack_channels(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::memcpy(out.data(), a.data(), sizeof(S) * static_cast<size_t>(a.size()));
  std::memcpy(out.data() + a.size(), b.data(), sizeof(S) * static_cast<size_t>(b.size()));
  return out;
}

template <class S>
Tensor<S> channel_slice(const Tensor<S>& t, Eigen::Index c0, Eigen::Index count) {
  const Eigen::Index plane = t.size() / t.dim(0);
  Tensor<S> out({count, t.dim(1), t.dim(2)});
  std::memcpy(out.data(), t.data() + c0 * plane, sizeof(S) * static_cast<size_t>(count * plane));
  return out;
}

template <class S>
ConvKernel<S> zero_bias_kernel(const Tensor<S>& weights) {
  return {weights, Tensor<S>({weights.dim(0)})};
}

}  // namespace detail

template <class S>
PackedCell<S> pack_cell(const CellWeights<S>& w) {
  PackedCell<S> p;
  p.type = w.type;
  p.input_channels = w.input_channels;
  p.hidden_channels = w.hidden_channels;
  p.ksize = w.ksize;
  const Eigen::Index hid = w.hidden_channels, in = w.input_channels, k = w.ksize;
  const Eigen::Index kk = k * k, block_x = in * kk, block_h = hid * kk;
  const int main_gates = w.type == CellType::convgru ? 2 : 4;
  p.main.weights = Tensor<S>({main_gates * hid, in + hid, k, k});
  p.main.bias = Tensor<S>({main_gates * hid});
  S* dst = p.main.weights.data();
  for (int g = 0; g < main_gates; ++g) {
    for (Eigen::Index o = 0; o < hid; ++o) {
      std::memcpy(dst, w.gates[g].Wx.data() + o * block_x, sizeof(S) * size_t(block_x));
      dst += block_x;
      std::memcpy(dst, w.gates[g].Wh.data() + o * block_h, sizeof(S) * size_t(block_h));
      dst += block_h;
    }
    std::memcpy(p.main.bias.data() + g * hid, w.gates[g].b.data(), sizeof(S) * size_t(hid));
  }
  if (w.type == CellType::convgru) {
    p.cand.weights = Tensor<S>({hid, in + hid, k, k});
    p.cand.bias = w.gates[2].b;
    S* cd = p.cand.weights.data();
    for (Eigen::Index o = 0; o < hid; ++o) {
      std::memcpy(cd, w.gates[2].Wx.data() + o * block_x, sizeof(S) * size_t(block_x));
      cd += block_x;
      std::memcpy(cd, w.gates[2].Wh.data() + o * block_h, sizeof(S) * size_t(block_h));
      cd += block_h;
    }
  }
  if (w.has_peephole()) {
    p.has_peephole = true;
    for (int i = 0; i < 3; ++i) p.peep[i] = detail::zero_bias_kernel(w.peephole[i]);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward step + cache
// ---------------------------------------------------------------------------

/// Forward intermediates needed by the analytic backward pass.
template <class S>
struct CellCache {
  Tensor<S> xh;  // [x ; H_prev]
  Tensor<S> C_prev;
  Tensor<S> gate_i, gate_f, gate_o;  // sigmoid outputs
  Tensor<S> cand_pre, cand;          // candidate preactivation and activation
  Tensor<S> C, actC;
  // GRU
  Tensor<S> gate_z, gate_r, xq;
};

template <class S>
void check_step_shapes(const Tensor<S>& x, const PackedCell<S>& p) {
  if (x.rank() != 3 || x.dim(0) != p.input_channels)
    throw std::invalid_argument(std::string("cell step: input must be (") +
                                std::to_string(p.input_channels) + ",rows,cols), got " +
                                shape_str(x.shape()));
}

template <class S>
CellState<S> cell_step(const Tensor<S>& x, const CellState<S>& prev, const PackedCell<S>& p,
                       Activation act, CellCache<S>* cache = nullptr) {
  check_step_shapes(x, p);
  const Eigen::Index hid = p.hidden_channels, H = x.dim(1), W = x.dim(2);
  if (p.type == CellType::convgru) {
    if (prev.H.size() == 0) throw std::invalid_argument("cell step: uninitialized state");
    Tensor<S> xh = detail::stack_channels(x, prev.H);
    Tensor<S> zr_pre = conv2d_same(xh, p.main);
    Tensor<S> zr = apply_activation(zr_pre, Activation::sigmoid);
    Tensor<S> z = detail::channel_slice(zr, 0, hid);
    Tensor<S> r = detail::channel_slice(zr, hid, hid);
    Tensor<S> q(prev.H.shape());
    q.array() = r.array() * prev.H.array();
    Tensor<S> xq = detail::stack_channels(x, q);
    Tensor<S> cand_pre = conv2d_same(xq, p.cand);
    Tensor<S> cand = apply_activation(cand_pre, act);
    CellState<S> next;
    next.H = Tensor<S>({hid, H, W});
    next.H.array() =
        (S(1) - z.array()) * prev.H.array() + z.array() * cand.array();
    if (cache) {
      cache->xh = std::move(xh);
      cache->gate_z = std::move(z);
      cache->gate_r = std::move(r);
      cache->xq = std::move(xq);
      cache->cand_pre = std::move(cand_pre);
      cache->cand = std::move(cand);
    }
    return next;
  }

  if (prev.H.size() == 0 || prev.C.size() == 0)
    throw std::invalid_argument("cell step: uninitialized state");
  Tensor<S> xh = detail::stack_channels(x, prev.H);
  Tensor<S> pre = conv2d_same(xh, p.main);  // [a_i ; a_f ; a_c ; a_o]
  Tensor<S> a_i = detail::channel_slice(pre, 0, hid);
  Tensor<S> a_f = detail::channel_slice(pre, hid, hid);
  Tensor<S> a_c = detail::channel_slice(pre, 2 * hid, hid);
  Tensor<S> a_o = detail::channel_slice(pre, 3 * hid, hid);
  if (p.has_peephole) {
    a_i.array() += conv2d_same(prev.C, p.peep[0]).array();
    a_f.array() += conv2d_same(prev.C, p.peep[1]).array();
  }
  Tensor<S> i = apply_activation(a_i, Activation::sigmoid);
  Tensor<S> f = apply_activation(a_f, Activation::sigmoid);
  Tensor<S> g = apply_activation(a_c, act);
  Tensor<S> C(prev.C.shape());
  C.array() = f.array() * prev.C.array() + i.array() * g.array();
  if (p.has_peephole) a_o.array() += conv2d_same(C, p.peep[2]).array();
  Tensor<S> o = apply_activation(a_o, Activation::sigmoid);
  Tensor<S> actC = apply_activation(C, act);
  CellState<S> next;
  next.H = Tensor<S>({hid, H, W});
  next.H.array() = o.array() * actC.array();
  next.C = C;
  if (cache) {
    cache->xh = std::move(xh);
    cache->C_prev = prev.C;
    cache->gate_i = std::move(i);
    cache->gate_f = std::move(f);
    cache->gate_o = std::move(o);
    cache->cand_pre = std::move(a_c);
    cache->cand = std::move(g);
    cache->C = C;
    cache->actC = std::move(actC);
  }
  return next;
}

/// i = s(Wxi*x + Whi*H + b_i), f = s(...), C = f.C_prev + i.act(a_c),
/// o = s(...), H = o.act(C).
template <class S>
CellState<S> convlstm_step(const Tensor<S>& x, const CellState<S>& prev, const CellWeights<S>& w,
                           Activation act, CellCache<S>* cache = nullptr) {
  if (w.type != CellType::convlstm)
    throw std::invalid_argument("convlstm_step: wrong cell type");
  return cell_step(x, prev, pack_cell(w), act, cache);
}

/// ConvLSTM plus convolutional peephole terms: i and f inspect C_prev, o
/// inspects the updated C.
template <class S>
CellState<S> convlstm_peephole_step(const Tensor<S>& x, const CellState<S>& prev,
                                    const CellWeights<S>& w, Activation act,
                                    CellCache<S>* cache = nullptr) {
  if (w.type != CellType::convlstm_peephole)
    throw std::invalid_argument("convlstm_peephole_step: wrong cell type");
  return cell_step(x, prev, pack_cell(w), act, cache);
}

/// z = s(..), r = s(..), Ht = act(Wxh*x + Whh*(r.H_prev) + b_h),
/// H = (1-z).H_prev + z.Ht.
template <class S>
Tensor<S> convgru_step(const Tensor<S>& x, const Tensor<S>& prev_H, const CellWeights<S>& w,
                       Activation act, CellCache<S>* cache = nullptr) {
  if (w.type != CellType::convgru) throw std::invalid_argument("convgru_step: wrong cell type");
  CellState<S> prev{prev_H, Tensor<S>()};
  return cell_step(x, prev, pack_cell(w), act, cache).H;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

template <class S>
struct CellGrads {
  Tensor<S> dx;
  CellState<S> dprev;                   // dH_prev, dC_prev
  std::vector<GateWeights<S>> dgates;   // same layout as CellWeights::gates
  std::array<Tensor<S>, 3> dpeephole;
};

namespace detail {

template <class S>
Tensor<S> act_deriv(const Tensor<S>& pre, const Tensor<S>& out, Activation kind) {
  Tensor<S> d(out.shape());
  switch (kind) {
    case Activation::sigmoid: d.array() = out.array() * (S(1) - out.array()); break;
    case Activation::tanh: d.array() = S(1) - out.array().square(); break;
    case Activation::relu: d.array() = (pre.array() > S(0)).template cast<S>(); break;
  }
  return d;
}

template <class S>
Tensor<S> stack4(const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& c, const Tensor<S>& d) {
  Tensor<S> out({4 * a.dim(0), a.dim(1), a.dim(2)});
  const size_t n = static_cast<size_t>(a.size());
  std::memcpy(out.data(), a.data(), sizeof(S) * n);
  std::memcpy(out.data() + a.size(), b.data(), sizeof(S) * n);
  std::memcpy(out.data() + 2 * a.size(), c.data(), sizeof(S) * n);
  std::memcpy(out.data() + 3 * a.size(), d.data(), sizeof(S) * n);
  return out;
}

}  // namespace detail

/// Exact gradients of one step. `dH` is the upstream gradient on the new H;
/// `dC_next` (may be empty) the upstream gradient on the new C from the
/// following step. Requires the cache written by the forward step.
template <class S>
CellGrads<S> cell_backward(const Tensor<S>& dH, const Tensor<S>& dC_next, const CellCache<S>& cache,
                           const PackedCell<S>& p, Activation act) {
  if (cache.xh.size() == 0) throw std::invalid_argument("cell_backward: missing forward cache");
  const Eigen::Index hid = p.hidden_channels, in = p.input_channels;
  CellGrads<S> g;
  g.dgates.resize(static_cast<size_t>(p.type == CellType::convgru ? 3 : 4));
  for (auto& gw : g.dgates)
    gw = {Tensor<S>({hid, in, p.ksize, p.ksize}), Tensor<S>({hid, hid, p.ksize, p.ksize}),
          Tensor<S>({hid})};

  if (p.type == CellType::convgru) {
    const Tensor<S>& z = cache.gate_z;
    const Tensor<S>& r = cache.gate_r;
    const Tensor<S>& ht = cache.cand;
    Tensor<S> H_prev = detail::channel_slice(cache.xh, in, hid);
    Tensor<S> dz(z.shape()), dht(z.shape()), dHprev(z.shape());
    dz.array() = dH.array() * (ht.array() - H_prev.array());
    dht.array() = dH.array() * z.array();
    dHprev.array() = dH.array() * (S(1) - z.array());
    Tensor<S> da_h(z.shape());
    da_h.array() = dht.array() * detail::act_deriv(cache.cand_pre, ht, act).array();
    auto cand_grads = conv2d_same_backward(da_h, cache.xq, p.cand);
    Tensor<S> dq = detail::channel_slice(cand_grads.grad_input, in, hid);
    Tensor<S> dr(z.shape());
    dr.array() = dq.array() * H_prev.array();
    dHprev.array() += dq.array() * r.array();
    Tensor<S> da_z(z.shape()), da_r(z.shape());
    da_z.array() = dz.array() * z.array() * (S(1) - z.array());
    da_r.array() = dr.array() * r.array() * (S(1) - r.array());
    Tensor<S> da_zr = detail::stack_channels(da_z, da_r);
    auto main_grads = conv2d_same_backward(da_zr, cache.xh, p.main);
    dHprev.array() += detail::channel_slice(main_grads.grad_input, in, hid).array();
    g.dx = detail::channel_slice(main_grads.grad_input, 0, in);
    g.dx.array() += detail::channel_slice(cand_grads.grad_input, 0, in).array();
    g.dprev.H = std::move(dHprev);
    // unpack: z, r from packed main, h from cand
    const Eigen::Index kk = Eigen::Index(p.ksize) * p.ksize, bx = in * kk, bh = hid * kk;
    const S* src = main_grads.grad_weights.data();
    for (int gate = 0; gate < 2; ++gate)
      for (Eigen::Index o = 0; o < hid; ++o) {
        auto& gw = g.dgates[static_cast<size_t>(gate)];
        std::memcpy(gw.Wx.data() + o * bx, src, sizeof(S) * size_t(bx));
        src += bx;
        std::memcpy(gw.Wh.data() + o * bh, src, sizeof(S) * size_t(bh));
        src += bh;
      }
    for (int gate = 0; gate < 2; ++gate)
      std::memcpy(g.dgates[size_t(gate)].b.data(), main_grads.grad_bias.data() + gate * hid,
                  sizeof(S) * size_t(hid));
    const S* csrc = cand_grads.grad_weights.data();
    for (Eigen::Index o = 0; o < hid; ++o) {
      std::memcpy(g.dgates[2].Wx.data() + o * bx, csrc, sizeof(S) * size_t(bx));
      csrc += bx;
      std::memcpy(g.dgates[2].Wh.data() + o * bh, csrc, sizeof(S) * size_t(bh));
      csrc += bh;
    }
    g.dgates[2].b = cand_grads.grad_bias;
    return g;
  }

  // LSTM variants
  const Tensor<S>& i = cache.gate_i;
  const Tensor<S>& f = cache.gate_f;
  const Tensor<S>& o = cache.gate_o;
  const Tensor<S>& gc = cache.cand;
  Tensor<S> do_(o.shape());
  do_.array() = dH.array() * cache.actC.array();
  Tensor<S> da_o(o.shape());
  da_o.array() = do_.array() * o.array() * (S(1) - o.array());
  Tensor<S> dC(o.shape());
  dC.array() = dH.array() * o.array() * detail::act_deriv(cache.C, cache.actC, act).array();
  if (dC_next.size()) dC.array() += dC_next.array();
  if (p.has_peephole) {
    auto po = conv2d_same_backward(da_o, cache.C, p.peep[2]);
    dC.array() += po.grad_input.array();
    g.dpeephole[2] = std::move(po.grad_weights);
  }
  Tensor<S> di(o.shape()), df(o.shape()), dg(o.shape()), dCprev(o.shape());
  di.array() = dC.array() * gc.array();
  df.array() = dC.array() * cache.C_prev.array();
  dg.array() = dC.array() * i.array();
  dCprev.array() = dC.array() * f.array();
  Tensor<S> da_i(o.shape()), da_f(o.shape()), da_c(o.shape());
  da_i.array() = di.array() * i.array() * (S(1) - i.array());
  da_f.array() = df.array() * f.array() * (S(1) - f.array());
  da_c.array() = dg.array() * detail::act_deriv(cache.cand_pre, gc, act).array();
  if (p.has_peephole) {
    auto pi = conv2d_same_backward(da_i, cache.C_prev, p.peep[0]);
    auto pf = conv2d_same_backward(da_f, cache.C_prev, p.peep[1]);
    dCprev.array() += pi.grad_input.array() + pf.grad_input.array();
    g.dpeephole[0] = std::move(pi.grad_weights);
    g.dpeephole[1] = std::move(pf.grad_weights);
  }
  Tensor<S> da = detail::stack4(da_i, da_f, da_c, da_o);
  auto main_grads = conv2d_same_backward(da, cache.xh, p.main);
  g.dx = detail::channel_slice(main_grads.grad_input, 0, in);
  g.dprev.H = detail::channel_slice(main_grads.grad_input, in, hid);
  g.dprev.C = std::move(dCprev);
  const Eigen::Index kk = Eigen::Index(p.ksize) * p.ksize, bx = in * kk, bh = hid * kk;
  const S* src = main_grads.grad_weights.data();
  for (int gate = 0; gate < 4; ++gate)
    for (Eigen::Index oc = 0; oc < hid; ++oc) {
      auto& gw = g.dgates[static_cast<size_t>(gate)];
      std::memcpy(gw.Wx.data() + oc * bx, src, sizeof(S) * size_t(bx));
      src += bx;
      std::memcpy(gw.Wh.data() + oc * bh, src, sizeof(S) * size_t(bh));
      src += bh;
    }
  for (int gate = 0; gate < 4; ++gate)
    std::memcpy(g.dgates[size_t(gate)].b.data(), main_grads.grad_bias.data() + gate * hid,
                sizeof(S) * size_t(hid));
  return g;
}

}  // namespace nowcast
