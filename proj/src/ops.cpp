#include "segkit/ops.hpp"

#include <algorithm>
#include <cmath>

namespace segkit {

namespace {

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.raw().data();
  const T* s = src.raw().data();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace

template <typename T>
ConvKernel<T> ConvKernel<T>::zeros(int k_h, int k_w, int in, int out, bool trainable) {
  if (k_h <= 0 || k_w <= 0 || in <= 0 || out <= 0)
    throw ShapeError("kernel dimensions must be positive");
  ConvKernel<T> k;
  k.k_h = k_h;
  k.k_w = k_w;
  k.in_channels = in;
  k.out_channels = out;
  k.weights = Var<T>(Tensor<T>(Shape{1, k_h, k_w, in * out}), trainable);
  k.bias = Var<T>(Tensor<T>(Shape{1, 1, 1, out}), trainable);
  return k;
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const ConvKernel<T>& kernel) {
  const Shape s = input.shape();
  if (s.c != kernel.in_channels)
    throw ShapeError("conv2d: input has " + std::to_string(s.c) + " channels, kernel expects " +
                     std::to_string(kernel.in_channels));
  if (kernel.k_h % 2 == 0 || kernel.k_w % 2 == 0)
    throw ShapeError("conv2d: same padding needs odd kernel extents");
  const int kh = kernel.k_h, kw = kernel.k_w, cin = kernel.in_channels, cout = kernel.out_channels;
  const int ph = kh / 2, pw = kw / 2;
  Tensor<T> out(Shape{s.n, s.h, s.w, cout});
  const T* x = input.value().raw().data();
  const T* w = kernel.weights.value().raw().data();
  const T* b = kernel.bias.value().raw().data();
  T* o = out.raw().data();

  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx) {
        T* op = o + out.index(n, y, xx, 0);
        for (int co = 0; co < cout; ++co) op[co] = b[co];
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = y + ky - ph;
          if (iy < 0 || iy >= s.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = xx + kx - pw;
            if (ix < 0 || ix >= s.w) continue;
            const T* ip = x + input.value().index(n, iy, ix, 0);
            const T* wp = w + static_cast<std::size_t>(ky * kw + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const T v = ip[ci];
              const T* wr = wp + static_cast<std::size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) op[co] += v * wr[co];
            }
          }
        }
      }

  return Var<T>::from_op(
      std::move(out), {input, kernel.weights, kernel.bias},
      [kh, kw, cin, cout, ph, pw](Node<T>& self) {
        auto& in_node = *self.parents[0];
        auto& w_node = *self.parents[1];
        auto& b_node = *self.parents[2];
        const Tensor<T>& g = self.grad;
        const Tensor<T>& xin = in_node.value;
        const Shape s = xin.shape();
        const T* wv = w_node.value.raw().data();
        T* gx = in_node.requires_grad ? in_node.ensure_grad().raw().data() : nullptr;
        T* gw = w_node.requires_grad ? w_node.ensure_grad().raw().data() : nullptr;
        T* gb = b_node.requires_grad ? b_node.ensure_grad().raw().data() : nullptr;
        for (int n = 0; n < s.n; ++n)
          for (int y = 0; y < s.h; ++y)
            for (int xx = 0; xx < s.w; ++xx) {
              const T* gp = g.raw().data() + g.index(n, y, xx, 0);
              if (gb)
                for (int co = 0; co < cout; ++co) gb[co] += gp[co];
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = y + ky - ph;
                if (iy < 0 || iy >= s.h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = xx + kx - pw;
                  if (ix < 0 || ix >= s.w) continue;
                  const std::size_t ioff = xin.index(n, iy, ix, 0);
                  const std::size_t woff = static_cast<std::size_t>(ky * kw + kx) * cin * cout;
                  const T* ip = xin.raw().data() + ioff;
                  for (int ci = 0; ci < cin; ++ci) {
                    const T* wr = wv + woff + static_cast<std::size_t>(ci) * cout;
                    if (gx) {
                      T acc = 0;
                      for (int co = 0; co < cout; ++co) acc += gp[co] * wr[co];
                      gx[ioff + ci] += acc;
                    }
                    if (gw) {
                      T* gwr = gw + woff + static_cast<std::size_t>(ci) * cout;
                      const T v = ip[ci];
                      for (int co = 0; co < cout; ++co) gwr[co] += v * gp[co];
                    }
                  }
                }
              }
            }
      });
}

template <typename T>
Var<T> transposed_conv2d(const Var<T>& input, const ConvKernel<T>& kernel) {
  const Shape s = input.shape();
  if (s.c != kernel.in_channels)
    throw ShapeError("transposed_conv2d: input has " + std::to_string(s.c) +
                     " channels, kernel expects " + std::to_string(kernel.in_channels));
  if (kernel.k_h != 2 || kernel.k_w != 2)
    throw ShapeError("transposed_conv2d: kernel must be 2x2");
  const int cin = kernel.in_channels, cout = kernel.out_channels;
  Tensor<T> out(Shape{s.n, 2 * s.h, 2 * s.w, cout});
  const T* w = kernel.weights.value().raw().data();
  const T* b = kernel.bias.value().raw().data();
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const T* ip = input.value().raw().data() + input.value().index(n, y, x, 0);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            T* op = out.raw().data() + out.index(n, 2 * y + dy, 2 * x + dx, 0);
            for (int co = 0; co < cout; ++co) op[co] = b[co];
            const T* wp = w + static_cast<std::size_t>(dy * 2 + dx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const T v = ip[ci];
              const T* wr = wp + static_cast<std::size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) op[co] += v * wr[co];
            }
          }
      }
  return Var<T>::from_op(
      std::move(out), {input, kernel.weights, kernel.bias}, [cin, cout](Node<T>& self) {
        auto& in_node = *self.parents[0];
        auto& w_node = *self.parents[1];
        auto& b_node = *self.parents[2];
        const Tensor<T>& g = self.grad;
        const Tensor<T>& xin = in_node.value;
        const Shape s = xin.shape();
        const T* wv = w_node.value.raw().data();
        T* gx = in_node.requires_grad ? in_node.ensure_grad().raw().data() : nullptr;
        T* gw = w_node.requires_grad ? w_node.ensure_grad().raw().data() : nullptr;
        T* gb = b_node.requires_grad ? b_node.ensure_grad().raw().data() : nullptr;
        for (int n = 0; n < s.n; ++n)
          for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
              const std::size_t ioff = xin.index(n, y, x, 0);
              const T* ip = xin.raw().data() + ioff;
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  const T* gp = g.raw().data() + g.index(n, 2 * y + dy, 2 * x + dx, 0);
                  if (gb)
                    for (int co = 0; co < cout; ++co) gb[co] += gp[co];
                  const std::size_t woff = static_cast<std::size_t>(dy * 2 + dx) * cin * cout;
                  for (int ci = 0; ci < cin; ++ci) {
                    const T* wr = wv + woff + static_cast<std::size_t>(ci) * cout;
                    if (gx) {
                      T acc = 0;
                      for (int co = 0; co < cout; ++co) acc += gp[co] * wr[co];
                      gx[ioff + ci] += acc;
                    }
                    if (gw) {
                      T* gwr = gw + woff + static_cast<std::size_t>(ci) * cout;
                      for (int co = 0; co < cout; ++co) gwr[co] += ip[ci] * gp[co];
                    }
                  }
                }
            }
      });
}

template <typename T>
Var<T> maxpool2x2(const Var<T>& input) {
  const Shape s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError("maxpool2x2: odd spatial dimension in " + s.str());
  Shape os{s.n, s.h / 2, s.w / 2, s.c};
  Tensor<T> out(os);
  // Flat input index of each selected maximum, for routing gradients.
  std::vector<std::size_t> argmax(os.numel());
  const Tensor<T>& xin = input.value();
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < os.h; ++y)
      for (int x = 0; x < os.w; ++x)
        for (int c = 0; c < s.c; ++c) {
          std::size_t best = xin.index(n, 2 * y, 2 * x, c);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t i = xin.index(n, 2 * y + dy, 2 * x + dx, c);
              if (xin[i] > xin[best]) best = i;
            }
          const std::size_t oi = out.index(n, y, x, c);
          out[oi] = xin[best];
          argmax[oi] = best;
        }
  return Var<T>::from_op(std::move(out), {input}, [argmax = std::move(argmax)](Node<T>& self) {
    auto& in_node = *self.parents[0];
    if (!in_node.requires_grad) return;
    Tensor<T>& gx = in_node.ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[i];
  });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& input) {
  const Shape s = input.shape();
  Tensor<T> out(Shape{s.n, 2 * s.h, 2 * s.w, s.c});
  const Tensor<T>& xin = input.value();
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < 2 * s.h; ++y)
      for (int x = 0; x < 2 * s.w; ++x) {
        const T* ip = xin.raw().data() + xin.index(n, y / 2, x / 2, 0);
        T* op = out.raw().data() + out.index(n, y, x, 0);
        std::copy(ip, ip + s.c, op);
      }
  return Var<T>::from_op(std::move(out), {input}, [](Node<T>& self) {
    auto& in_node = *self.parents[0];
    if (!in_node.requires_grad) return;
    Tensor<T>& gx = in_node.ensure_grad();
    const Shape s = gx.shape();
    for (int n = 0; n < s.n; ++n)
      for (int y = 0; y < 2 * s.h; ++y)
        for (int x = 0; x < 2 * s.w; ++x) {
          const T* gp = self.grad.raw().data() + self.grad.index(n, y, x, 0);
          T* gxp = gx.raw().data() + gx.index(n, y / 2, x / 2, 0);
          for (int c = 0; c < s.c; ++c) gxp[c] += gp[c];
        }
  });
}

template <typename T>
Var<T> relu(const Var<T>& input) {
  Tensor<T> out = input.value();
  for (auto& v : out.raw()) v = v > T(0) ? v : T(0);
  return Var<T>::from_op(std::move(out), {input}, [](Node<T>& self) {
    auto& in_node = *self.parents[0];
    if (!in_node.requires_grad) return;
    Tensor<T>& gx = in_node.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (in_node.value[i] > T(0)) gx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> prelu(const Var<T>& input, const Var<T>& slope) {
  const int c = input.shape().c;
  if (static_cast<int>(slope.value().size()) != c)
    throw ShapeError("prelu: slope count must equal channel count");
  Tensor<T> out = input.value();
  const T* a = slope.value().raw().data();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] < T(0)) out[i] *= a[i % c];
  return Var<T>::from_op(std::move(out), {input, slope}, [c](Node<T>& self) {
    auto& in_node = *self.parents[0];
    auto& a_node = *self.parents[1];
    const Tensor<T>& xin = in_node.value;
    T* gx = in_node.requires_grad ? in_node.ensure_grad().raw().data() : nullptr;
    T* ga = a_node.requires_grad ? a_node.ensure_grad().raw().data() : nullptr;
    const T* a = a_node.value.raw().data();
    for (std::size_t i = 0; i < xin.size(); ++i) {
      const T g = self.grad[i];
      if (xin[i] > T(0)) {
        if (gx) gx[i] += g;
      } else {
        if (gx) gx[i] += g * a[i % c];
        if (ga) ga[i % c] += g * xin[i];
      }
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& input) {
  Tensor<T> out = input.value();
  for (auto& v : out.raw()) {
    if (v >= T(0)) {
      v = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  return Var<T>::from_op(std::move(out), {input}, [](Node<T>& self) {
    auto& in_node = *self.parents[0];
    if (!in_node.requires_grad) return;
    Tensor<T>& gx = in_node.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T y = self.value[i];
      gx[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& input) {
  const int c = input.shape().c;
  Tensor<T> out = input.value();
  for (std::size_t p = 0; p < out.size(); p += c) {
    T* v = out.raw().data() + p;
    const T mx = *std::max_element(v, v + c);
    T total = 0;
    for (int k = 0; k < c; ++k) {
      v[k] = std::exp(v[k] - mx);
      total += v[k];
    }
    for (int k = 0; k < c; ++k) v[k] /= total;
  }
  return Var<T>::from_op(std::move(out), {input}, [c](Node<T>& self) {
    auto& in_node = *self.parents[0];
    if (!in_node.requires_grad) return;
    Tensor<T>& gx = in_node.ensure_grad();
    for (std::size_t p = 0; p < gx.size(); p += c) {
      const T* y = self.value.raw().data() + p;
      const T* g = self.grad.raw().data() + p;
      T dot = 0;
      for (int k = 0; k < c; ++k) dot += g[k] * y[k];
      for (int k = 0; k < c; ++k) gx[p + k] += y[k] * (g[k] - dot);
    }
  });
}

template <typename T>
Var<T> batchnorm(const Var<T>& input, const Var<T>& scale_v, const Var<T>& shift_v,
                 BatchNormState<T>& state, bool train) {
  const Shape s = input.shape();
  const int c = s.c;
  if (static_cast<int>(scale_v.value().size()) != c || static_cast<int>(shift_v.value().size()) != c)
    throw ShapeError("batchnorm: parameter channel count mismatch");
  if (state.running_mean.empty()) {
    state.running_mean.assign(c, T(0));
    state.running_var.assign(c, T(1));
  }
  if (static_cast<int>(state.running_mean.size()) != c)
    throw ShapeError("batchnorm: running statistics channel count mismatch");

  const std::size_t count = s.pixels();
  std::vector<T> mean(c, T(0)), inv_std(c, T(0));
  const Tensor<T>& x = input.value();
  if (train) {
    // Two-pass statistics accumulated in double.
    std::vector<double> acc(c, 0.0), acc2(c, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) acc[i % c] += x[i];
    for (int k = 0; k < c; ++k) acc[k] /= static_cast<double>(count);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - acc[i % c];
      acc2[i % c] += d * d;
    }
    for (int k = 0; k < c; ++k) {
      const double var = acc2[k] / static_cast<double>(count);
      mean[k] = static_cast<T>(acc[k]);
      inv_std[k] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.epsilon)));
      state.running_mean[k] =
          state.momentum * state.running_mean[k] + (T(1) - state.momentum) * static_cast<T>(acc[k]);
      state.running_var[k] =
          state.momentum * state.running_var[k] + (T(1) - state.momentum) * static_cast<T>(var);
    }
  } else {
    for (int k = 0; k < c; ++k) {
      mean[k] = state.running_mean[k];
      inv_std[k] = T(1) / std::sqrt(state.running_var[k] + state.epsilon);
    }
  }

  Tensor<T> xhat(s);
  Tensor<T> out(s);
  const T* gamma = scale_v.value().raw().data();
  const T* beta = shift_v.value().raw().data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const int k = static_cast<int>(i % c);
    xhat[i] = (x[i] - mean[k]) * inv_std[k];
    out[i] = gamma[k] * xhat[i] + beta[k];
  }

  return Var<T>::from_op(
      std::move(out), {input, scale_v, shift_v},
      [c, count, train, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node<T>& self) {
        auto& in_node = *self.parents[0];
        auto& g_node = *self.parents[1];
        auto& b_node = *self.parents[2];
        const Tensor<T>& g = self.grad;
        const T* gamma = g_node.value.raw().data();
        std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
        for (std::size_t i = 0; i < g.size(); ++i) {
          sum_g[i % c] += g[i];
          sum_gx[i % c] += g[i] * xhat[i];
        }
        if (g_node.requires_grad) {
          Tensor<T>& gg = g_node.ensure_grad();
          for (int k = 0; k < c; ++k) gg[k] += sum_gx[k];
        }
        if (b_node.requires_grad) {
          Tensor<T>& gb = b_node.ensure_grad();
          for (int k = 0; k < c; ++k) gb[k] += sum_g[k];
        }
        if (!in_node.requires_grad) return;
        Tensor<T>& gx = in_node.ensure_grad();
        const T m = static_cast<T>(count);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const int k = static_cast<int>(i % c);
          if (train) {
            gx[i] += gamma[k] * inv_std[k] / m * (m * g[i] - sum_g[k] - xhat[i] * sum_gx[k]);
          } else {
            gx[i] += gamma[k] * inv_std[k] * g[i];
          }
        }
      });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  Shape s = inputs.front().shape();
  int total = 0;
  std::vector<int> widths;
  for (const auto& v : inputs) {
    const Shape t = v.shape();
    if (t.n != s.n || t.h != s.h || t.w != s.w)
      throw ShapeError("concat_channels: spatial mismatch " + s.str() + " vs " + t.str());
    widths.push_back(t.c);
    total += t.c;
  }
  Tensor<T> out(Shape{s.n, s.h, s.w, total});
  const std::size_t pixels = s.pixels();
  int offset = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const int w = widths[k];
    const T* src = inputs[k].value().raw().data();
    for (std::size_t p = 0; p < pixels; ++p)
      std::copy(src + p * w, src + (p + 1) * w, out.raw().data() + p * total + offset);
    offset += w;
  }
  return Var<T>::from_op(std::move(out), inputs, [widths, total, pixels](Node<T>& self) {
    int offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& in_node = *self.parents[k];
      const int w = widths[k];
      if (in_node.requires_grad) {
        T* gx = in_node.ensure_grad().raw().data();
        const T* g = self.grad.raw().data();
        for (std::size_t p = 0; p < pixels; ++p)
          for (int j = 0; j < w; ++j) gx[p * w + j] += g[p * total + offset + j];
      }
      offset += w;
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  add_into(out, b.value());
  return Var<T>::from_op(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) add_into(p->ensure_grad(), self.grad);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return Var<T>::from_op(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor<T>& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor<T>& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.raw()) v *= factor;
  return Var<T>::from_op(std::move(out), {a}, [factor](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> mul_channel_mask(const Var<T>& input, const Var<T>& mask) {
  const Shape s = input.shape();
  const Shape ms = mask.shape();
  if (ms.c != 1 || ms.n != s.n || ms.h != s.h || ms.w != s.w)
    throw ShapeError("mul_channel_mask: mask " + ms.str() + " does not match " + s.str());
  const int c = s.c;
  Tensor<T> out = input.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask.value()[i / c];
  return Var<T>::from_op(std::move(out), {input, mask}, [c](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pm = *self.parents[1];
    if (px.requires_grad) {
      Tensor<T>& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pm.value[i / c];
    }
    if (pm.requires_grad) {
      Tensor<T>& g = pm.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i / c] += self.grad[i] * px.value[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& input) {
  T total = 0;
  for (T v : input.value().raw()) total += v;
  return Var<T>::from_op(Tensor<T>(Shape{1, 1, 1, 1}, total), {input}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& g = p.ensure_grad();
    const T gs = self.grad[0];
    for (auto& v : g.raw()) v += gs;
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& weights) {
  require_same(input.shape(), weights.shape(), "weighted_sum");
  T total = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += input.value()[i] * weights[i];
  return Var<T>::from_op(Tensor<T>(Shape{1, 1, 1, 1}, total), {input},
                         [weights](Node<T>& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           Tensor<T>& g = p.ensure_grad();
                           const T gs = self.grad[0];
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs * weights[i];
                         });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& scores, const Tensor<T>& truth) {
  require_same(scores.shape(), truth.shape(), "cross_entropy");
  constexpr T floor = T(1e-12);
  const std::size_t pixels = scores.shape().pixels();
  double total = 0.0;
  const Tensor<T>& s = scores.value();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (truth[i] != T(0)) total -= static_cast<double>(truth[i]) * std::log(std::max(s[i], floor));
  const T loss = static_cast<T>(total / static_cast<double>(pixels));
  return Var<T>::from_op(Tensor<T>(Shape{1, 1, 1, 1}, loss), {scores},
                         [truth, pixels](Node<T>& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           Tensor<T>& g = p.ensure_grad();
                           const T gs = self.grad[0] / static_cast<T>(pixels);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (truth[i] != T(0) && p.value[i] > floor)
                               g[i] -= gs * truth[i] / p.value[i];
                         });
}

#define SEGKIT_INSTANTIATE_OPS(T)                                                           \
  template struct ConvKernel<T>;                                                            \
  template Var<T> conv2d(const Var<T>&, const ConvKernel<T>&);                              \
  template Var<T> transposed_conv2d(const Var<T>&, const ConvKernel<T>&);                   \
  template Var<T> maxpool2x2(const Var<T>&);                                                \
  template Var<T> upsample_nearest2x(const Var<T>&);                                        \
  template Var<T> relu(const Var<T>&);                                                      \
  template Var<T> prelu(const Var<T>&, const Var<T>&);                                      \
  template Var<T> sigmoid(const Var<T>&);                                                   \
  template Var<T> softmax_channels(const Var<T>&);                                          \
  template Var<T> batchnorm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormState<T>&, \
                            bool);                                                          \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                        \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                        \
  template Var<T> scale(const Var<T>&, T);                                                  \
  template Var<T> mul_channel_mask(const Var<T>&, const Var<T>&);                           \
  template Var<T> sum(const Var<T>&);                                                       \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);                            \
  template Var<T> cross_entropy(const Var<T>&, const Tensor<T>&);

SEGKIT_INSTANTIATE_OPS(float)
SEGKIT_INSTANTIATE_OPS(double)

}  // namespace segkit
