#include "dehaze/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dehaze {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

namespace {

template <typename T>
Var<T> unary(const Var<T>& x, auto f, auto df) {
  const Tensor<T>& in = x.value();
  Tensor<T> out(in.shape());
  const std::size_t n = in.numel();
  for (std::size_t i = 0; i < n; ++i) out.raw()[i] = f(in.raw()[i]);
  Tensor<T> saved_out = out;
  return make_result<T>(std::move(out), {x},
                        [saved_out = std::move(saved_out), df](Node<T>& self) {
                          Node<T>& a = *self.inputs[0];
                          Tensor<T>& ga = a.grad_buffer();
                          const T* g = self.grad.raw();
                          const T* xv = a.value.raw();
                          const T* yv = saved_out.raw();
                          const std::size_t n = ga.numel();
                          for (std::size_t i = 0; i < n; ++i) {
                            ga.raw()[i] += g[i] * df(xv[i], yv[i]);
                          }
                        });
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto dim = [&](int x, int y, const char* name) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(op) + ": cannot broadcast " + a.str() +
                     " with " + b.str() + " along " + name);
  };
  return Shape{dim(a.n, b.n, "N"), dim(a.c, b.c, "C"), dim(a.h, b.h, "H"),
               dim(a.w, b.w, "W")};
}

struct Strides {
  std::size_t n, c, h, w;
};

Strides broadcast_strides(const Shape& s, const Shape& out) {
  const std::size_t sw = 1, sh = s.w, sc = s.plane(),
                    sn = static_cast<std::size_t>(s.c) * s.plane();
  return Strides{s.n == out.n ? sn : 0, s.c == out.c ? sc : 0,
                 s.h == out.h ? sh : 0, s.w == out.w ? sw : 0};
}

template <typename T>
void for_each_broadcast(const Shape& out, const Strides& sa, const Strides& sb,
                        auto fn) {
  std::size_t o = 0;
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c)
      for (int h = 0; h < out.h; ++h) {
        const std::size_t ba = n * sa.n + c * sa.c + h * sa.h;
        const std::size_t bb = n * sb.n + c * sb.c + h * sb.h;
        for (int w = 0; w < out.w; ++w, ++o) fn(o, ba + w * sa.w, bb + w * sb.w);
      }
}

// f(a, b) with partials da(a, b), db(a, b).
template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, const char* name, auto f,
              auto da, auto db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const Strides sa = broadcast_strides(a.shape(), out_shape);
  const Strides sb = broadcast_strides(b.shape(), out_shape);
  Tensor<T> out(out_shape);
  const T* av = a.value().raw();
  const T* bv = b.value().raw();
  T* ov = out.raw();
  for_each_broadcast<T>(out_shape, sa, sb, [&](std::size_t o, std::size_t ia,
                                               std::size_t ib) {
    ov[o] = f(av[ia], bv[ib]);
  });
  return make_result<T>(
      std::move(out), {a, b}, [out_shape, sa, sb, da, db](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        Node<T>& nb = *self.inputs[1];
        const T* g = self.grad.raw();
        const T* av = na.value.raw();
        const T* bv = nb.value.raw();
        T* ga = na.requires_grad ? na.grad_buffer().raw() : nullptr;
        T* gb = nb.requires_grad ? nb.grad_buffer().raw() : nullptr;
        for_each_broadcast<T>(out_shape, sa, sb,
                              [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                if (ga) ga[ia] += g[o] * da(av[ia], bv[ib]);
                                if (gb) gb[ib] += g[o] * db(av[ia], bv[ib]);
                              });
      });
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  Shape xs, ws;
  int groups, stride, pad, oh, ow;

  int cin_g() const { return xs.c / groups; }
  bool is_pointwise() const { return ws.h == 1 && ws.w == 1 && stride == 1 && pad == 0; }
};

// col[(ic, ky, kx), (oh, ow)] for one group of one batch item. Padding taps
// are stored as zeros.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const int kh = g.ws.h, kw = g.ws.w;
  const std::size_t P = static_cast<std::size_t>(g.oh) * g.ow;
  const std::size_t plane = g.xs.plane();
  for (int ic = 0; ic < g.cin_g(); ++ic)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + ((static_cast<std::size_t>(ic) * kh + ky) * kw + kx) * P;
        const T* xin = x + ic * plane;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          T* dst = row + static_cast<std::size_t>(oy) * g.ow;
          if (iy < 0 || iy >= g.xs.h) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = xin + static_cast<std::size_t>(iy) * g.xs.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            dst[ox] = (ix >= 0 && ix < g.xs.w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_accumulate(const ConvGeometry& g, const T* col, T* gx) {
  const int kh = g.ws.h, kw = g.ws.w;
  const std::size_t P = static_cast<std::size_t>(g.oh) * g.ow;
  const std::size_t plane = g.xs.plane();
  for (int ic = 0; ic < g.cin_g(); ++ic)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(ic) * kh + ky) * kw + kx) * P;
        T* gin = gx + ic * plane;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.xs.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.ow;
          T* dst = gin + static_cast<std::size_t>(iy) * g.xs.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.xs.w) dst[ix] += src[ox];
          }
        }
      }
}

// out[m, p] += sum_k a[m, k] b[k, p], accumulating k in ascending order for
// every output element (the order the Haar analysis reproduces).
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* out, int M, std::size_t K, std::size_t P) {
  int m = 0;
  for (; m + 4 <= M; m += 4) {
    T* o0 = out + m * P;
    T* o1 = o0 + P;
    T* o2 = o1 + P;
    T* o3 = o2 + P;
    const T* a0 = a + m * K;
    const T* a1 = a0 + K;
    const T* a2 = a1 + K;
    const T* a3 = a2 + K;
    for (std::size_t k = 0; k < K; ++k) {
      const T w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
      const T* bk = b + k * P;
      for (std::size_t p = 0; p < P; ++p) {
        const T v = bk[p];
        o0[p] += w0 * v;
        o1[p] += w1 * v;
        o2[p] += w2 * v;
        o3[p] += w3 * v;
      }
    }
  }
  for (; m < M; ++m) {
    T* o = out + m * P;
    const T* am = a + m * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T w = am[k];
      const T* bk = b + k * P;
      for (std::size_t p = 0; p < P; ++p) o[p] += w * bk[p];
    }
  }
}

// out[m, k] += sum_p a[m, p] b[k, p]
template <typename T>
void gemm_nt_accumulate(const T* a, const T* b, T* out, int M, std::size_t K, std::size_t P) {
  for (int m = 0; m < M; ++m) {
    const T* am = a + m * P;
    for (std::size_t k = 0; k < K; ++k) {
      const T* bk = b + k * P;
      // Independent partial sums let the compiler keep several lanes busy.
      T s[8] = {};
      std::size_t p = 0;
      for (; p + 8 <= P; p += 8)
        for (int j = 0; j < 8; ++j) s[j] += am[p + j] * bk[p + j];
      T acc = ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
      for (; p < P; ++p) acc += am[p] * bk[p];
      out[m * K + k] += acc;
    }
  }
}

// out[k, p] += sum_m a[m, k] b[m, p]
template <typename T>
void gemm_tn_accumulate(const T* a, const T* b, T* out, int M, std::size_t K, std::size_t P) {
  for (std::size_t k = 0; k < K; ++k) {
    T* o = out + k * P;
    int m = 0;
    for (; m + 4 <= M; m += 4) {
      const T w0 = a[m * K + k], w1 = a[(m + 1) * K + k], w2 = a[(m + 2) * K + k],
              w3 = a[(m + 3) * K + k];
      const T* b0 = b + m * P;
      const T* b1 = b0 + P;
      const T* b2 = b1 + P;
      const T* b3 = b2 + P;
      for (std::size_t p = 0; p < P; ++p) o[p] += w0 * b0[p] + w1 * b1[p] + w2 * b2[p] + w3 * b3[p];
    }
    for (; m < M; ++m) {
      const T w = a[m * K + k];
      const T* bm = b + m * P;
      for (std::size_t p = 0; p < P; ++p) o[p] += w * bm[p];
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
              ConvSpec spec) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  const int groups = spec.groups;
  const int stride = spec.stride;
  const int pad = spec.padding;
  if (groups < 1 || stride < 1 || pad < 0) {
    throw ShapeError("conv2d: invalid stride/padding/groups");
  }
  if (xs.c % groups != 0) {
    throw ShapeError("conv2d: input channels " + std::to_string(xs.c) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (ws.n % groups != 0) {
    throw ShapeError("conv2d: output channels " + std::to_string(ws.n) +
                     " not divisible by groups " + std::to_string(groups));
  }
  const int cin_g = xs.c / groups;
  const int cout_g = ws.n / groups;
  if (ws.c != cin_g) {
    throw ShapeError("conv2d: weight in-channels (dim 1) is " +
                     std::to_string(ws.c) + ", expected " +
                     std::to_string(cin_g) + " for input " + xs.str());
  }
  const int kh = ws.h, kw = ws.w;
  if (xs.h + 2 * pad < kh) {
    throw ShapeError("conv2d: padded height " + std::to_string(xs.h + 2 * pad) +
                     " smaller than kernel height " + std::to_string(kh));
  }
  if (xs.w + 2 * pad < kw) {
    throw ShapeError("conv2d: padded width " + std::to_string(xs.w + 2 * pad) +
                     " smaller than kernel width " + std::to_string(kw));
  }
  if (bias.defined() && bias.value().numel() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.value().numel()) +
                     " elements, expected " + std::to_string(ws.n));
  }
  const int oh_n = (xs.h + 2 * pad - kh) / stride + 1;
  const int ow_n = (xs.w + 2 * pad - kw) / stride + 1;
  const Shape os{xs.n, ws.n, oh_n, ow_n};
  Tensor<T> out(os);

  const ConvGeometry geo{xs, ws, groups, stride, pad, oh_n, ow_n};
  const std::size_t P = static_cast<std::size_t>(oh_n) * ow_n;
  const std::size_t K = static_cast<std::size_t>(cin_g) * kh * kw;
  const bool direct = geo.is_pointwise();
  std::vector<T> col(direct ? 0 : K * P);
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  for (int n = 0; n < xs.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      const T* xin = x.plane(n, g * cin_g);
      const T* cols = xin;
      if (!direct) {
        im2col(geo, xin, col.data());
        cols = col.data();
      }
      T* o = out.plane(n, g * cout_g);
      if (bias.defined()) {
        for (int oc = 0; oc < cout_g; ++oc)
          std::fill(o + oc * P, o + (oc + 1) * P, bias.value().raw()[g * cout_g + oc]);
      }
      gemm_accumulate(w.raw() + static_cast<std::size_t>(g) * cout_g * K, cols, o, cout_g, K, P);
    }
  }

  std::vector<Var<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
    Node<T>& nx = *self.inputs[0];
    Node<T>& nw = *self.inputs[1];
    Node<T>* nb = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    const Tensor<T>& gout = self.grad;
    const Tensor<T>& x = nx.value;
    const Tensor<T>& w = nw.value;
    T* gx = nx.requires_grad ? nx.grad_buffer().raw() : nullptr;
    T* gw = nw.requires_grad ? nw.grad_buffer().raw() : nullptr;
    if (nb && nb->requires_grad) {
      T* gb = nb->grad_buffer().raw();
      for (int n = 0; n < xs.n; ++n)
        for (int oc = 0; oc < ws.n; ++oc) {
          const T* g = gout.plane(n, oc);
          T s = 0;
          for (std::size_t i = 0; i < P; ++i) s += g[i];
          gb[oc] += s;
        }
    }
    if (!gx && !gw) return;
    std::vector<T> col(direct ? 0 : K * P);
    std::vector<T> gcol(gx ? K * P : 0);
    for (int n = 0; n < xs.n; ++n) {
      for (int g = 0; g < groups; ++g) {
        const std::size_t in_off = x.index(n, g * cin_g, 0, 0);
        const T* go = gout.plane(n, g * cout_g);
        const T* wg = w.raw() + static_cast<std::size_t>(g) * cout_g * K;
        if (gw) {
          const T* cols = x.raw() + in_off;
          if (!direct) {
            im2col(geo, cols, col.data());
            cols = col.data();
          }
          // gW[oc, k] += sum_p gout[oc, p] * col[k, p]
          gemm_nt_accumulate(go, cols, gw + static_cast<std::size_t>(g) * cout_g * K, cout_g, K, P);
        }
        if (gx) {
          if (direct) {
            gemm_tn_accumulate(wg, go, gx + in_off, cout_g, K, P);
          } else {
            std::fill(gcol.begin(), gcol.end(), T(0));
            gemm_tn_accumulate(wg, go, gcol.data(), cout_g, K, P);
            col2im_accumulate(geo, gcol.data(), gx + in_off);
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pixel shuffle

namespace {
template <typename T>
Var<T> shuffle_impl(const Var<T>& input, int r, bool forward) {
  const Shape s = input.shape();
  if (r < 1) throw ShapeError("pixel_shuffle: factor must be >= 1");
  Shape os;
  if (forward) {
    if (s.c % (r * r) != 0) {
      throw ShapeError("pixel_shuffle: channels " + std::to_string(s.c) +
                       " not divisible by r^2 = " + std::to_string(r * r));
    }
    os = Shape{s.n, s.c / (r * r), s.h * r, s.w * r};
  } else {
    if (s.h % r != 0 || s.w % r != 0) {
      throw ShapeError("pixel_unshuffle: spatial dims " + s.str() +
                       " not divisible by " + std::to_string(r));
    }
    os = Shape{s.n, s.c * r * r, s.h / r, s.w / r};
  }
  // Index map from the shuffled (large) layout to the packed layout.
  const Shape big = forward ? os : s;
  const Shape packed = forward ? s : os;
  std::vector<std::size_t> map(big.numel());
  std::size_t o = 0;
  for (int n = 0; n < big.n; ++n)
    for (int c = 0; c < big.c; ++c)
      for (int y = 0; y < big.h; ++y)
        for (int x = 0; x < big.w; ++x, ++o) {
          const int pc = c * r * r + (y % r) * r + (x % r);
          map[o] = ((static_cast<std::size_t>(n) * packed.c + pc) * packed.h + y / r) *
                       packed.w + x / r;
        }
  Tensor<T> out(os);
  const T* in = input.value().raw();
  if (forward) {
    for (std::size_t i = 0; i < map.size(); ++i) out.raw()[i] = in[map[i]];
  } else {
    for (std::size_t i = 0; i < map.size(); ++i) out.raw()[map[i]] = in[i];
  }
  return make_result<T>(std::move(out), {input},
                        [map = std::move(map), forward](Node<T>& self) {
                          T* g = self.inputs[0]->grad_buffer().raw();
                          const T* go = self.grad.raw();
                          if (forward) {
                            for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += go[i];
                          } else {
                            for (std::size_t i = 0; i < map.size(); ++i) g[i] += go[map[i]];
                          }
                        });
}
}  // namespace

template <typename T>
Var<T> pixel_shuffle(const Var<T>& input, int r) {
  return shuffle_impl(input, r, true);
}

template <typename T>
Var<T> pixel_unshuffle(const Var<T>& input, int r) {
  return shuffle_impl(input, r, false);
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

template <typename T>
void check_affine(const Var<T>& gain, const Var<T>& bias, int channels) {
  if (!gain.defined() || !bias.defined()) {
    throw ShapeError("normalize: gain and bias are required");
  }
  if (gain.value().numel() != static_cast<std::size_t>(channels) ||
      bias.value().numel() != static_cast<std::size_t>(channels)) {
    throw ShapeError("normalize: gain/bias must have " + std::to_string(channels) +
                     " elements (one per channel)");
  }
}

template <typename T>
Var<T> batch_norm(const Var<T>& input, const Var<T>& gain, const Var<T>& bias,
                  T eps, NormState<T>& state) {
  const Shape s = input.shape();
  const Tensor<T>& x = input.value();
  const T* gv = gain.value().raw();
  const T* bv = bias.value().raw();
  Tensor<T> out(s);
  if (!state.training) {
    std::vector<T> inv(s.c);
    for (int c = 0; c < s.c; ++c) inv[c] = T(1) / std::sqrt(state.running_var.raw()[c] + eps);
    const std::vector<T> mean(state.running_mean.raw(), state.running_mean.raw() + s.c);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* xi = x.plane(n, c);
        T* o = out.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i)
          o[i] = gv[c] * (xi[i] - mean[c]) * inv[c] + bv[c];
      }
    return make_result<T>(std::move(out), {input, gain, bias},
                          [s, inv, mean](Node<T>& self) {
                            Node<T>& nx = *self.inputs[0];
                            Node<T>& ng = *self.inputs[1];
                            Node<T>& nb = *self.inputs[2];
                            const T* g = self.grad.raw();
                            for (int n = 0; n < s.n; ++n)
                              for (int c = 0; c < s.c; ++c) {
                                const std::size_t off = nx.value.index(n, c, 0, 0);
                                T sg = 0, sgx = 0;
                                for (std::size_t i = 0; i < s.plane(); ++i) {
                                  const T xh = (nx.value.raw()[off + i] - mean[c]) * inv[c];
                                  sg += g[off + i];
                                  sgx += g[off + i] * xh;
                                }
                                if (nx.requires_grad) {
                                  T* gx = nx.grad_buffer().raw() + off;
                                  const T k = ng.value.raw()[c] * inv[c];
                                  for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += k * g[off + i];
                                }
                                if (ng.requires_grad) ng.grad_buffer().raw()[c] += sgx;
                                if (nb.requires_grad) nb.grad_buffer().raw()[c] += sg;
                              }
                          });
  }

  const std::size_t count = static_cast<std::size_t>(s.n) * s.plane();
  std::vector<T> inv(s.c);
  Tensor<T> xhat(s);
  for (int c = 0; c < s.c; ++c) {
    double m = 0;
    for (int n = 0; n < s.n; ++n) {
      const T* xi = x.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) m += xi[i];
    }
    m /= static_cast<double>(count);
    double v = 0;
    for (int n = 0; n < s.n; ++n) {
      const T* xi = x.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double d = xi[i] - m;
        v += d * d;
      }
    }
    v /= static_cast<double>(count);
    inv[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
    for (int n = 0; n < s.n; ++n) {
      const T* xi = x.plane(n, c);
      T* xh = xhat.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        xh[i] = static_cast<T>((xi[i] - m)) * inv[c];
        o[i] = gv[c] * xh[i] + bv[c];
      }
    }
    const T mom = state.momentum;
    const double unbiased = count > 1 ? v * count / (count - 1) : v;
    state.running_mean.raw()[c] = (T(1) - mom) * state.running_mean.raw()[c] + mom * static_cast<T>(m);
    state.running_var.raw()[c] = (T(1) - mom) * state.running_var.raw()[c] + mom * static_cast<T>(unbiased);
  }
  return make_result<T>(
      std::move(out), {input, gain, bias},
      [s, count, inv, xhat = std::move(xhat)](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& ng = *self.inputs[1];
        Node<T>& nb = *self.inputs[2];
        const T* g = self.grad.raw();
        for (int c = 0; c < s.c; ++c) {
          T sg = 0, sgx = 0;
          for (int n = 0; n < s.n; ++n) {
            const std::size_t off = xhat.index(n, c, 0, 0);
            for (std::size_t i = 0; i < s.plane(); ++i) {
              sg += g[off + i];
              sgx += g[off + i] * xhat.raw()[off + i];
            }
          }
          if (nx.requires_grad) {
            const T k = ng.value.raw()[c] * inv[c];
            const T mg = sg / static_cast<T>(count);
            const T mgx = sgx / static_cast<T>(count);
            for (int n = 0; n < s.n; ++n) {
              const std::size_t off = xhat.index(n, c, 0, 0);
              T* gx = nx.grad_buffer().raw() + off;
              for (std::size_t i = 0; i < s.plane(); ++i)
                gx[i] += k * (g[off + i] - mg - xhat.raw()[off + i] * mgx);
            }
          }
          if (ng.requires_grad) ng.grad_buffer().raw()[c] += sgx;
          if (nb.requires_grad) nb.grad_buffer().raw()[c] += sg;
        }
      });
}

template <typename T>
Var<T> layer_norm(const Var<T>& input, const Var<T>& gain, const Var<T>& bias,
                  T eps) {
  const Shape s = input.shape();
  const Tensor<T>& x = input.value();
  const T* gv = gain.value().raw();
  const T* bv = bias.value().raw();
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  Tensor<T> xhat(s);
  Tensor<T> inv(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      T m = 0;
      for (int c = 0; c < s.c; ++c) m += x.plane(n, c)[p];
      m /= static_cast<T>(s.c);
      T v = 0;
      for (int c = 0; c < s.c; ++c) {
        const T d = x.plane(n, c)[p] - m;
        v += d * d;
      }
      v /= static_cast<T>(s.c);
      const T k = T(1) / std::sqrt(v + eps);
      inv.plane(n, 0)[p] = k;
      for (int c = 0; c < s.c; ++c) {
        const T xh = (x.plane(n, c)[p] - m) * k;
        xhat.plane(n, c)[p] = xh;
        out.plane(n, c)[p] = gv[c] * xh + bv[c];
      }
    }
  }
  return make_result<T>(
      std::move(out), {input, gain, bias},
      [s, plane, xhat = std::move(xhat), inv = std::move(inv)](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& ng = *self.inputs[1];
        Node<T>& nb = *self.inputs[2];
        const Tensor<T>& g = self.grad;
        const T* gain = ng.value.raw();
        T* gg = ng.requires_grad ? ng.grad_buffer().raw() : nullptr;
        T* gb = nb.requires_grad ? nb.grad_buffer().raw() : nullptr;
        T* gx = nx.requires_grad ? nx.grad_buffer().raw() : nullptr;
        for (int n = 0; n < s.n; ++n) {
          for (std::size_t p = 0; p < plane; ++p) {
            T sd = 0, sdx = 0;
            for (int c = 0; c < s.c; ++c) {
              const std::size_t i = g.index(n, c, 0, 0) + p;
              const T gi = g.raw()[i];
              const T xh = xhat.raw()[i];
              if (gg) gg[c] += gi * xh;
              if (gb) gb[c] += gi;
              const T d = gi * gain[c];
              sd += d;
              sdx += d * xh;
            }
            if (!gx) continue;
            const T k = inv.raw()[static_cast<std::size_t>(n) * plane + p];
            const T md = sd / static_cast<T>(s.c);
            const T mdx = sdx / static_cast<T>(s.c);
            for (int c = 0; c < s.c; ++c) {
              const std::size_t i = g.index(n, c, 0, 0) + p;
              gx[i] += k * (g.raw()[i] * gain[c] - md - xhat.raw()[i] * mdx);
            }
          }
        }
      });
}

}  // namespace

template <typename T>
Var<T> normalize(const Var<T>& input, NormKind kind, const Var<T>& gain,
                 const Var<T>& bias, T eps, NormState<T>* state) {
  if (!(eps > T(0))) throw ShapeError("normalize: eps must be > 0");
  check_affine(gain, bias, input.shape().c);
  if (kind == NormKind::layer) return layer_norm(input, gain, bias, eps);
  if (state == nullptr) throw ShapeError("normalize: batch kind needs a NormState");
  if (state->running_mean.numel() != static_cast<std::size_t>(input.shape().c)) {
    throw ShapeError("normalize: running statistics sized for " +
                     std::to_string(state->running_mean.numel()) +
                     " channels, input has " + std::to_string(input.shape().c));
  }
  return batch_norm(input, gain, bias, eps, *state);
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> activation(const Var<T>& input, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return unary(input, [](T x) { return x > T(0) ? x : T(0); },
                   [](T x, T) { return x > T(0) ? T(1) : T(0); });
    case Activation::gelu: {
      constexpr double inv_sqrt2 = 0.70710678118654752440;
      constexpr double inv_sqrt_2pi = 0.39894228040143267794;
      return unary(
          input,
          [](T x) {
            const double xd = x;
            return static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * inv_sqrt2)));
          },
          [](T x, T) {
            const double xd = x;
            const double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xd * xd);
            return static_cast<T>(cdf + xd * pdf);
          });
    }
    case Activation::sigmoid:
      return unary(
          input,
          [](T x) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
          },
          [](T, T y) { return y * (T(1) - y); });
    case Activation::tanh:
      return unary(input, [](T x) { return std::tanh(x); },
                   [](T, T y) { return T(1) - y * y; });
    case Activation::identity:
      return unary(input, [](T x) { return x; }, [](T, T) { return T(1); });
  }
  throw ShapeError("activation: unknown kind");
}

template <typename T>
Var<T> leaky_relu(const Var<T>& input, T slope) {
  return unary(input, [slope](T x) { return x > T(0) ? x : slope * x; },
               [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> scale(const Var<T>& input, T s) {
  return unary(input, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& input, T s) {
  return unary(input, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> square(const Var<T>& input) {
  return unary(input, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> log(const Var<T>& input) {
  return unary(input, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> pow_positive(const Var<T>& input, T e) {
  return unary(
      input, [e](T x) { return x > T(0) ? std::pow(x, e) : T(0); },
      [e](T x, T) { return x > T(0) ? e * std::pow(x, e - T(1)) : T(0); });
}

template <typename T>
Var<T> clamp(const Var<T>& input, T lo, T hi) {
  return unary(input, [lo, hi](T x) { return std::clamp(x, lo, hi); },
               [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, "add", [](T x, T y) { return x + y; },
                [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, "sub", [](T x, T y) { return x - y; },
                [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, "mul", [](T x, T y) { return x * y; },
                [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, "div", [](T x, T y) { return x / y; },
                [](T, T y) { return T(1) / y; },
                [](T x, T y) { return -x / (y * y); });
}

// ---------------------------------------------------------------------------
// Reductions, pooling, layout

template <typename T>
Var<T> sum(const Var<T>& input) {
  T s = 0;
  for (T v : input.value().data()) s += v;
  return make_result<T>(Tensor<T>(Shape{}, s), {input}, [](Node<T>& self) {
    const T g = self.grad.raw()[0];
    for (T& v : self.inputs[0]->grad_buffer().data()) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& input) {
  const T n = static_cast<T>(input.value().numel());
  T s = 0;
  for (T v : input.value().data()) s += v;
  return make_result<T>(Tensor<T>(Shape{}, s / n), {input}, [n](Node<T>& self) {
    const T g = self.grad.raw()[0] / n;
    for (T& v : self.inputs[0]->grad_buffer().data()) v += g;
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& input) {
  const Shape s = input.shape();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const T count = static_cast<T>(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = input.value().plane(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      out.at(n, c, 0, 0) = acc / count;
    }
  return make_result<T>(std::move(out), {input}, [s, count](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T v = self.grad.at(n, c, 0, 0) / count;
        T* p = g.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) p[i] += v;
      }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: spatial/batch mismatch " + first.str() +
                       " vs " + s.str());
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  Tensor<T> out(os);
  const std::size_t plane = first.plane();
  for (int n = 0; n < os.n; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
      std::copy_n(p.value().plane(n, 0), len, out.plane(n, c0));
      c0 += p.shape().c;
    }
  }
  return make_result<T>(std::move(out), parts, [os, plane](Node<T>& self) {
    for (int n = 0; n < os.n; ++n) {
      int c0 = 0;
      for (auto& in : self.inputs) {
        const int c = in->value.shape().c;
        if (in->requires_grad) {
          const std::size_t len = static_cast<std::size_t>(c) * plane;
          T* dst = in->grad_buffer().plane(n, 0);
          const T* src = self.grad.plane(n, c0);
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
        c0 += c;
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  return concat_channels<T>(std::vector<Var<T>>{a, b});
}

template <typename T>
Var<T> slice_channels(const Var<T>& input, int begin, int end) {
  const Shape s = input.shape();
  if (begin < 0 || end > s.c || begin >= end) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for " + s.str());
  }
  const Shape os{s.n, end - begin, s.h, s.w};
  Tensor<T> out(os);
  const std::size_t len = os.numel() / os.n;
  for (int n = 0; n < s.n; ++n) std::copy_n(input.value().plane(n, begin), len, out.plane(n, 0));
  return make_result<T>(std::move(out), {input}, [s, begin, len](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      T* dst = g.plane(n, begin);
      const T* src = self.grad.raw() + static_cast<std::size_t>(n) * len;
      for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& input) {
  const Shape s = input.shape();
  if (s.h < 2 || s.w < 2) throw ShapeError("avg_pool2: input too small " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x) {
          const Tensor<T>& v = input.value();
          out.at(n, c, y, x) = (v.at(n, c, 2 * y, 2 * x) + v.at(n, c, 2 * y, 2 * x + 1) +
                                v.at(n, c, 2 * y + 1, 2 * x) + v.at(n, c, 2 * y + 1, 2 * x + 1)) *
                               T(0.25);
        }
  return make_result<T>(std::move(out), {input}, [os](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < os.n; ++n)
      for (int c = 0; c < os.c; ++c)
        for (int y = 0; y < os.h; ++y)
          for (int x = 0; x < os.w; ++x) {
            const T v = self.grad.at(n, c, y, x) * T(0.25);
            g.at(n, c, 2 * y, 2 * x) += v;
            g.at(n, c, 2 * y, 2 * x + 1) += v;
            g.at(n, c, 2 * y + 1, 2 * x) += v;
            g.at(n, c, 2 * y + 1, 2 * x + 1) += v;
          }
  });
}

template <typename T>
Var<T> max_pool2(const Var<T>& input) {
  const Shape s = input.shape();
  if (s.h < 2 || s.w < 2) throw ShapeError("max_pool2: input too small " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> out(os);
  std::vector<std::size_t> arg(os.numel());
  const Tensor<T>& v = input.value();
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x, ++o) {
          std::size_t best = v.index(n, c, 2 * y, 2 * x);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t i = v.index(n, c, 2 * y + dy, 2 * x + dx);
              if (v.raw()[i] > v.raw()[best]) best = i;
            }
          arg[o] = best;
          out.raw()[o] = v.raw()[best];
        }
  return make_result<T>(std::move(out), {input}, [arg = std::move(arg)](Node<T>& self) {
    T* g = self.inputs[0]->grad_buffer().raw();
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad.raw()[i];
  });
}

template <typename T>
Var<T> reflect_pad(const Var<T>& input, int top, int bottom, int left, int right) {
  const Shape s = input.shape();
  if (top < 0 || bottom < 0 || left < 0 || right < 0) {
    throw ShapeError("reflect_pad: negative padding");
  }
  if (std::max(top, bottom) >= s.h || std::max(left, right) >= s.w) {
    throw ShapeError("reflect_pad: padding must be smaller than the input dims " + s.str());
  }
  const Shape os{s.n, s.c, s.h + top + bottom, s.w + left + right};
  auto reflect = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  std::vector<std::size_t> map(os.plane());
  for (int y = 0; y < os.h; ++y)
    for (int x = 0; x < os.w; ++x)
      map[static_cast<std::size_t>(y) * os.w + x] =
          static_cast<std::size_t>(reflect(y - top, s.h)) * s.w + reflect(x - left, s.w);
  Tensor<T> out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* src = input.value().plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < map.size(); ++i) dst[i] = src[map[i]];
    }
  return make_result<T>(std::move(out), {input}, [s, map = std::move(map)](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        T* dst = g.plane(n, c);
        const T* src = self.grad.plane(n, c);
        for (std::size_t i = 0; i < map.size(); ++i) dst[map[i]] += src[i];
      }
  });
}

template <typename T>
Var<T> crop(const Var<T>& input, int top, int left, int height, int width) {
  const Shape s = input.shape();
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > s.h ||
      left + width > s.w) {
    throw ShapeError("crop: window exceeds input " + s.str());
  }
  const Shape os{s.n, s.c, height, width};
  Tensor<T> out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < height; ++y)
        std::copy_n(input.value().plane(n, c) + static_cast<std::size_t>(top + y) * s.w + left,
                    width, out.plane(n, c) + static_cast<std::size_t>(y) * width);
  return make_result<T>(std::move(out), {input}, [=](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < height; ++y) {
          T* dst = g.plane(n, c) + static_cast<std::size_t>(top + y) * s.w + left;
          const T* src = self.grad.plane(n, c) + static_cast<std::size_t>(y) * width;
          for (int x = 0; x < width; ++x) dst[x] += src[x];
        }
  });
}

#define DEHAZE_INSTANTIATE_OPS(T)                                                   \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvSpec);    \
  template Var<T> pixel_shuffle(const Var<T>&, int);                                \
  template Var<T> pixel_unshuffle(const Var<T>&, int);                              \
  template Var<T> normalize(const Var<T>&, NormKind, const Var<T>&, const Var<T>&,  \
                            T, NormState<T>*);                                      \
  template Var<T> activation(const Var<T>&, Activation);                            \
  template Var<T> leaky_relu(const Var<T>&, T);                                     \
  template Var<T> global_avg_pool(const Var<T>&);                                   \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                    \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                      \
  template Var<T> slice_channels(const Var<T>&, int, int);                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                \
  template Var<T> div(const Var<T>&, const Var<T>&);                                \
  template Var<T> scale(const Var<T>&, T);                                          \
  template Var<T> add_scalar(const Var<T>&, T);                                     \
  template Var<T> square(const Var<T>&);                                            \
  template Var<T> log(const Var<T>&);                                               \
  template Var<T> pow_positive(const Var<T>&, T);                                   \
  template Var<T> clamp(const Var<T>&, T, T);                                       \
  template Var<T> sum(const Var<T>&);                                               \
  template Var<T> mean(const Var<T>&);                                              \
  template Var<T> avg_pool2(const Var<T>&);                                         \
  template Var<T> max_pool2(const Var<T>&);                                         \
  template Var<T> reflect_pad(const Var<T>&, int, int, int, int);                   \
  template Var<T> crop(const Var<T>&, int, int, int, int);

DEHAZE_INSTANTIATE_OPS(float)
DEHAZE_INSTANTIATE_OPS(double)

}  // namespace dehaze
