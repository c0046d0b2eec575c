#include "rfnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "rfnet/error.hpp"

namespace rfnet {

namespace {

struct Planes {
  std::size_t n = 1, c = 0, h = 0, w = 0;
  bool batched = false;

  std::size_t plane() const { return h * w; }
  std::size_t sample() const { return c * h * w; }
  Shape dims_with(std::size_t cc, std::size_t hh, std::size_t ww) const {
    return batched ? Shape{n, cc, hh, ww} : Shape{cc, hh, ww};
  }
};

Planes planes_of(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined input");
  const auto& d = t.dims();
  if (d.size() == 3) return Planes{1, d[0], d[1], d[2], false};
  if (d.size() == 4) return Planes{d[0], d[1], d[2], d[3], true};
  throw ShapeError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " +
                   shape_to_string(d));
}

inline void axpy(double* y, double a, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t cols = g.cols();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t cols = g.cols();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": dims " + shape_to_string(a.dims()) + " vs " +
                     shape_to_string(b.dims()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  const Planes p = planes_of(input, "conv2d");
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " +
                     shape_to_string(weight.dims()));
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride >= 1 and padding >= 0 required");
  if (weight.dim(1) != p.c) {
    throw ShapeError("conv2d: input channels " + std::to_string(p.c) + " vs weight " +
                     shape_to_string(weight.dims()));
  }
  ConvGeometry g{p.c, p.h, p.w, weight.dim(0), weight.dim(2),
                 static_cast<std::size_t>(stride), static_cast<std::size_t>(padding), 0, 0};
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias must be [Cout], got " + shape_to_string(bias.dims()));
  }
  if (p.h + 2 * g.pad < g.k || p.w + 2 * g.pad < g.k) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.ho = (p.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (p.w + 2 * g.pad - g.k) / g.stride + 1;

  Tensor out(p.dims_with(g.cout, g.ho, g.wo));
  const std::size_t R = g.rows(), P = g.cols();
  const double* wd = weight.data().data();
  std::vector<double> col(g.pointwise() ? 0 : R * P);
  for (std::size_t n = 0; n < p.n; ++n) {
    const double* x = input.data().data() + n * p.sample();
    double* y = out.data().data() + n * g.cout * P;
    if (bias.defined()) {
      for (std::size_t co = 0; co < g.cout; ++co) std::fill(y + co * P, y + (co + 1) * P, bias[co]);
    }
    const double* cd = x;
    if (!g.pointwise()) {
      im2col(x, g, col.data());
      cd = col.data();
    }
    for (std::size_t r = 0; r < R; ++r) {
      const double* crow = cd + r * P;
      for (std::size_t co = 0; co < g.cout; ++co) axpy(y + co * P, wd[co * R + r], crow, P);
    }
  }
  check_finite(out, "conv2d");

  if (detail::should_record({&input, &weight, &bias})) {
    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    detail::maybe_record(std::move(inputs), out, [input, weight, bias, out, g, p]() mutable {
      const std::size_t R = g.rows(), P = g.cols();
      const double* wd = weight.data().data();
      const double* gy_all = out.grad().data();
      std::vector<double> col(g.pointwise() ? 0 : R * P);
      std::vector<double> dcol(g.pointwise() ? 0 : R * P);
      const bool need_dx = input.requires_grad();
      const bool need_dw = weight.requires_grad();
      const bool need_db = bias.defined() && bias.requires_grad();
      for (std::size_t n = 0; n < p.n; ++n) {
        const double* gy = gy_all + n * g.cout * P;
        if (need_db) {
          auto db = bias.grad_mut();
          for (std::size_t co = 0; co < g.cout; ++co) {
            const double* row = gy + co * P;
            double s = 0.0;
            for (std::size_t i = 0; i < P; ++i) s += row[i];
            db[co] += s;
          }
        }
        const double* x = input.data().data() + n * p.sample();
        if (need_dw) {
          const double* cd = x;
          if (!g.pointwise()) {
            im2col(x, g, col.data());
            cd = col.data();
          }
          double* dw = weight.grad_mut().data();
          for (std::size_t co = 0; co < g.cout; ++co) {
            for (std::size_t r = 0; r < R; ++r) dw[co * R + r] += dot(gy + co * P, cd + r * P, P);
          }
        }
        if (need_dx) {
          double* dx = input.grad_mut().data() + n * p.sample();
          if (g.pointwise()) {
            for (std::size_t r = 0; r < R; ++r) {
              for (std::size_t co = 0; co < g.cout; ++co) axpy(dx + r * P, wd[co * R + r], gy + co * P, P);
            }
          } else {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            for (std::size_t r = 0; r < R; ++r) {
              double* drow = dcol.data() + r * P;
              for (std::size_t co = 0; co < g.cout; ++co) axpy(drow, wd[co * R + r], gy + co * P, P);
            }
            col2im_add(dcol.data(), g, dx);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch_norm

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode) {
  if (input.rank() != 4) {
    throw ShapeError("batch_norm: expected [N,C,H,W], got " + shape_to_string(input.dims()));
  }
  const Planes p = planes_of(input, "batch_norm");
  if (gamma.dims() != Shape{p.c} || beta.dims() != Shape{p.c}) {
    throw ShapeError("batch_norm: gamma/beta must be [" + std::to_string(p.c) + "]");
  }
  if (state.running_mean.dims() != Shape{p.c} || state.running_var.dims() != Shape{p.c}) {
    throw ShapeError("batch_norm: running stats do not match channel count");
  }
  const std::size_t plane = p.plane();
  const std::size_t count = p.n * plane;
  Tensor out(input.dims());
  const double* x = input.data().data();
  double* y = out.data().data();
  auto xhat = std::make_shared<std::vector<double>>(input.numel());
  auto inv_std = std::make_shared<std::vector<double>>(p.c);

  if (mode == Mode::kTrain) {
    if (count < 2) throw ShapeError("batch_norm: train mode needs N*H*W >= 2");
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t c = 0; c < p.c; ++c) {
      double mean = 0.0;
      for (std::size_t n = 0; n < p.n; ++n) {
        const double* src = x + (n * p.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean += src[i];
      }
      mean /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t n = 0; n < p.n; ++n) {
        const double* src = x + (n * p.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = src[i] - mean;
          var += d * d;
        }
      }
      const double unbiased = var / static_cast<double>(count - 1);
      var /= static_cast<double>(count);
      const double is = 1.0 / std::sqrt(var + state.eps);
      (*inv_std)[c] = is;
      for (std::size_t n = 0; n < p.n; ++n) {
        const std::size_t off = (n * p.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xh = (x[off + i] - mean) * is;
          (*xhat)[off + i] = xh;
          y[off + i] = gamma[c] * xh + beta[c];
        }
      }
      rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * mean;
      rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * unbiased;
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::size_t c = 0; c < p.c; ++c) {
      const double is = 1.0 / std::sqrt(rv[c] + state.eps);
      (*inv_std)[c] = is;
      for (std::size_t n = 0; n < p.n; ++n) {
        const std::size_t off = (n * p.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xh = (x[off + i] - rm[c]) * is;
          (*xhat)[off + i] = xh;
          y[off + i] = gamma[c] * xh + beta[c];
        }
      }
    }
  }
  check_finite(out, "batch_norm");

  if (detail::should_record({&input, &gamma, &beta})) {
    detail::maybe_record({input, gamma, beta}, out,
                         [input, gamma, beta, out, xhat, inv_std, p, mode]() mutable {
      const std::size_t plane = p.plane();
      const double m = static_cast<double>(p.n * plane);
      const double* gy = out.grad().data();
      for (std::size_t c = 0; c < p.c; ++c) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::size_t n = 0; n < p.n; ++n) {
          const std::size_t off = (n * p.c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_gy += gy[off + i];
            sum_gy_xhat += gy[off + i] * (*xhat)[off + i];
          }
        }
        if (gamma.requires_grad()) gamma.grad_mut()[c] += sum_gy_xhat;
        if (beta.requires_grad()) beta.grad_mut()[c] += sum_gy;
        if (!input.requires_grad()) continue;
        double* dx = input.grad_mut().data();
        const double gscale = gamma[c] * (*inv_std)[c];
        for (std::size_t n = 0; n < p.n; ++n) {
          const std::size_t off = (n * p.c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            if (mode == Mode::kTrain) {
              dx[off + i] += gscale * (gy[off + i] - sum_gy / m - (*xhat)[off + i] * sum_gy_xhat / m);
            } else {
              dx[off + i] += gscale * gy[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pointwise

Tensor relu(const Tensor& x) {
  Tensor out(x.dims());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  detail::maybe_record({x}, out, [x, out]() mutable {
    auto gx = x.grad_mut();
    auto gy = out.grad();
    auto v = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (v[i] > 0.0) gx[i] += gy[i];
    }
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.dims());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = 1.0 / (1.0 + std::exp(-src[i]));
  detail::maybe_record({x}, out, [x, out]() mutable {
    auto gx = x.grad_mut();
    auto gy = out.grad();
    auto s = out.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * s[i] * (1.0 - s[i]);
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "add");
  Tensor out(a.dims());
  auto x = a.data();
  auto y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  check_finite(out, "add");
  detail::maybe_record({a, b}, out, [a, b, out]() mutable {
    auto gy = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "mul");
  Tensor out(a.dims());
  auto x = a.data();
  auto y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  check_finite(out, "mul");
  detail::maybe_record({a, b}, out, [a, b, out]() mutable {
    auto gy = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      auto y = b.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      auto x = a.data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * x[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out(x.dims());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * factor;
  check_finite(out, "scale");
  detail::maybe_record({x}, out, [x, out, factor]() mutable {
    auto gx = x.grad_mut();
    auto gy = out.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * factor;
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  detail::maybe_record({x}, out, [x, out]() mutable {
    const double g = out.grad()[0];
    for (double& v : x.grad_mut()) v += g;
  });
  return out;
}

Tensor channel_scale(const Tensor& features, const Tensor& weights) {
  const Planes p = planes_of(features, "channel_scale");
  const Shape expected = p.batched ? Shape{p.n, p.c} : Shape{p.c};
  if (weights.dims() != expected) {
    throw ShapeError("channel_scale: weights " + shape_to_string(weights.dims()) +
                     " do not match features " + shape_to_string(features.dims()));
  }
  Tensor out(features.dims());
  const std::size_t plane = p.plane();
  const double* x = features.data().data();
  double* y = out.data().data();
  for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
    const double wv = weights[nc];
    for (std::size_t i = 0; i < plane; ++i) y[nc * plane + i] = x[nc * plane + i] * wv;
  }
  check_finite(out, "channel_scale");
  detail::maybe_record({features, weights}, out, [features, weights, out, p]() mutable {
    const std::size_t plane = p.plane();
    const double* gy = out.grad().data();
    if (features.requires_grad()) {
      double* gx = features.grad_mut().data();
      for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
        const double wv = weights[nc];
        for (std::size_t i = 0; i < plane; ++i) gx[nc * plane + i] += gy[nc * plane + i] * wv;
      }
    }
    if (weights.requires_grad()) {
      auto gw = weights.grad_mut();
      const double* x = features.data().data();
      for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
        gw[nc] += dot(gy + nc * plane, x + nc * plane, plane);
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// pooling

Tensor max_pool2d(const Tensor& input, int kernel, int stride, int padding) {
  const Planes p = planes_of(input, "max_pool2d");
  if (kernel < 1 || stride < 1 || padding < 0) throw ShapeError("max_pool2d: bad window");
  const auto k = static_cast<std::size_t>(kernel);
  const auto s = static_cast<std::size_t>(stride);
  const auto pad = static_cast<std::size_t>(padding);
  if (k > p.h + 2 * pad || k > p.w + 2 * pad) throw ShapeError("max_pool2d: window larger than plane");
  if (2 * pad > k) throw ShapeError("max_pool2d: padding exceeds half the window");
  const std::size_t ho = (p.h + 2 * pad - k) / s + 1;
  const std::size_t wo = (p.w + 2 * pad - k) / s + 1;
  Tensor out(p.dims_with(p.c, ho, wo));
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const double* x = input.data().data();
  double* y = out.data().data();
  for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
    const std::size_t base = nc * p.plane();
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = std::numeric_limits<std::size_t>::max();
        for (std::size_t ki = 0; ki < k; ++ki) {
          const long iy = static_cast<long>(oy * s + ki) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(p.h)) continue;
          for (std::size_t kj = 0; kj < k; ++kj) {
            const long ix = static_cast<long>(ox * s + kj) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(p.w)) continue;
            const std::size_t idx = base + static_cast<std::size_t>(iy) * p.w + static_cast<std::size_t>(ix);
            // Strict comparison in row-major scan: ties keep the first index.
            if (best_idx == std::numeric_limits<std::size_t>::max() || x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (nc * ho + oy) * wo + ox;
        y[o] = best;
        (*argmax)[o] = best_idx;
      }
    }
  }
  detail::maybe_record({input}, out, [input, out, argmax]() mutable {
    auto gx = input.grad_mut();
    auto gy = out.grad();
    for (std::size_t o = 0; o < gy.size(); ++o) gx[(*argmax)[o]] += gy[o];
  });
  return out;
}

Tensor avg_pool2d(const Tensor& input, int kernel, int stride) {
  const Planes p = planes_of(input, "avg_pool2d");
  if (kernel < 1 || stride < 1) throw ShapeError("avg_pool2d: bad window");
  const auto k = static_cast<std::size_t>(kernel);
  const auto s = static_cast<std::size_t>(stride);
  if (k > p.h || k > p.w) throw ShapeError("avg_pool2d: window larger than plane");
  const std::size_t ho = (p.h - k) / s + 1;
  const std::size_t wo = (p.w - k) / s + 1;
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor out(p.dims_with(p.c, ho, wo));
  const double* x = input.data().data();
  double* y = out.data().data();
  for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
    const double* src = x + nc * p.plane();
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (std::size_t ki = 0; ki < k; ++ki) {
          for (std::size_t kj = 0; kj < k; ++kj) acc += src[(oy * s + ki) * p.w + ox * s + kj];
        }
        y[(nc * ho + oy) * wo + ox] = acc * inv;
      }
    }
  }
  detail::maybe_record({input}, out, [input, out, p, k, s, ho, wo, inv]() mutable {
    double* gx = input.grad_mut().data();
    const double* gy = out.grad().data();
    for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
      double* dst = gx + nc * p.plane();
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double g = gy[(nc * ho + oy) * wo + ox] * inv;
          for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) dst[(oy * s + ki) * p.w + ox * s + kj] += g;
          }
        }
      }
    }
  });
  return out;
}

Tensor global_avg_pool(const Tensor& input) {
  const Planes p = planes_of(input, "global_avg_pool");
  Tensor out(p.batched ? Shape{p.n, p.c} : Shape{p.c});
  const std::size_t plane = p.plane();
  const double inv = 1.0 / static_cast<double>(plane);
  const double* x = input.data().data();
  for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += x[nc * plane + i];
    out.data()[nc] = acc * inv;
  }
  detail::maybe_record({input}, out, [input, out, p, inv]() mutable {
    const std::size_t plane = p.plane();
    double* gx = input.grad_mut().data();
    for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
      const double g = out.grad()[nc] * inv;
      for (std::size_t i = 0; i < plane; ++i) gx[nc * plane + i] += g;
    }
  });
  return out;
}

Tensor adaptive_avg_pool2d(const Tensor& input, int out_h, int out_w) {
  const Planes p = planes_of(input, "adaptive_avg_pool2d");
  if (out_h < 1 || out_w < 1) throw ShapeError("adaptive_avg_pool2d: output must be >= 1");
  const auto gh = static_cast<std::size_t>(out_h);
  const auto gw = static_cast<std::size_t>(out_w);
  if (gh > p.h || gw > p.w) {
    throw ShapeError("adaptive_avg_pool2d: grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                     " exceeds plane " + std::to_string(p.h) + "x" + std::to_string(p.w));
  }
  struct Bin {
    std::size_t begin, end;
  };
  auto bins = [](std::size_t size, std::size_t count) {
    std::vector<Bin> out(count);
    for (std::size_t i = 0; i < count; ++i) {
      out[i].begin = (i * size) / count;
      out[i].end = ((i + 1) * size + count - 1) / count;
    }
    return out;
  };
  const auto rows = bins(p.h, gh);
  const auto cols = bins(p.w, gw);
  Tensor out(p.dims_with(p.c, gh, gw));
  const double* x = input.data().data();
  double* y = out.data().data();
  for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
    const double* src = x + nc * p.plane();
    for (std::size_t i = 0; i < gh; ++i) {
      for (std::size_t j = 0; j < gw; ++j) {
        double acc = 0.0;
        for (std::size_t r = rows[i].begin; r < rows[i].end; ++r) {
          for (std::size_t c = cols[j].begin; c < cols[j].end; ++c) acc += src[r * p.w + c];
        }
        const double area = static_cast<double>((rows[i].end - rows[i].begin) * (cols[j].end - cols[j].begin));
        y[(nc * gh + i) * gw + j] = acc / area;
      }
    }
  }
  detail::maybe_record({input}, out, [input, out, p, rows, cols, gh, gw]() mutable {
    double* gx = input.grad_mut().data();
    const double* gy = out.grad().data();
    for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
      double* dst = gx + nc * p.plane();
      for (std::size_t i = 0; i < gh; ++i) {
        for (std::size_t j = 0; j < gw; ++j) {
          const double area = static_cast<double>((rows[i].end - rows[i].begin) * (cols[j].end - cols[j].begin));
          const double g = gy[(nc * gh + i) * gw + j] / area;
          for (std::size_t r = rows[i].begin; r < rows[i].end; ++r) {
            for (std::size_t c = cols[j].begin; c < cols[j].end; ++c) dst[r * p.w + c] += g;
          }
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// bilinear_resize

namespace {

struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

Taps half_pixel_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
  const Planes p = planes_of(input, "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output dims must be >= 1");
  const auto oh = static_cast<std::size_t>(out_h);
  const auto ow = static_cast<std::size_t>(out_w);
  const Taps ty = half_pixel_taps(p.h, oh);
  const Taps tx = half_pixel_taps(p.w, ow);
  Tensor out(p.dims_with(p.c, oh, ow));
  const double* x = input.data().data();
  double* y = out.data().data();
  for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
    const double* src = x + nc * p.plane();
    double* dst = y + nc * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      const double* r0 = src + ty.lo[i] * p.w;
      const double* r1 = src + ty.hi[i] * p.w;
      const double fy = ty.frac[i];
      for (std::size_t j = 0; j < ow; ++j) {
        const double fx = tx.frac[j];
        const double top = (1.0 - fx) * r0[tx.lo[j]] + fx * r0[tx.hi[j]];
        const double bot = (1.0 - fx) * r1[tx.lo[j]] + fx * r1[tx.hi[j]];
        dst[i * ow + j] = (1.0 - fy) * top + fy * bot;
      }
    }
  }
  detail::maybe_record({input}, out, [input, out, p, ty, tx, oh, ow]() mutable {
    double* gx = input.grad_mut().data();
    const double* gy = out.grad().data();
    for (std::size_t nc = 0; nc < p.n * p.c; ++nc) {
      double* dst = gx + nc * p.plane();
      const double* g = gy + nc * oh * ow;
      for (std::size_t i = 0; i < oh; ++i) {
        const double fy = ty.frac[i];
        double* r0 = dst + ty.lo[i] * p.w;
        double* r1 = dst + ty.hi[i] * p.w;
        for (std::size_t j = 0; j < ow; ++j) {
          const double fx = tx.frac[j];
          const double v = g[i * ow + j];
          r0[tx.lo[j]] += (1.0 - fy) * (1.0 - fx) * v;
          r0[tx.hi[j]] += (1.0 - fy) * fx * v;
          r1[tx.lo[j]] += fy * (1.0 - fx) * v;
          r1[tx.hi[j]] += fy * fx * v;
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// structural

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Planes first = planes_of(parts.front(), "concat_channels");
  std::size_t total_c = 0;
  for (const auto& t : parts) {
    const Planes q = planes_of(t, "concat_channels");
    if (q.batched != first.batched || q.n != first.n || q.h != first.h || q.w != first.w) {
      throw ShapeError("concat_channels: incompatible dims " + shape_to_string(t.dims()) + " vs " +
                       shape_to_string(parts.front().dims()));
    }
    total_c += q.c;
  }
  Tensor out(first.dims_with(total_c, first.h, first.w));
  const std::size_t plane = first.plane();
  double* y = out.data().data();
  std::size_t offset = 0;
  for (const auto& t : parts) {
    const std::size_t c = t.rank() == 4 ? t.dim(1) : t.dim(0);
    for (std::size_t n = 0; n < first.n; ++n) {
      const double* src = t.data().data() + n * c * plane;
      std::copy(src, src + c * plane, y + (n * total_c + offset) * plane);
    }
    offset += c;
  }
  detail::maybe_record(parts, out, [parts, out, first, total_c]() mutable {
    const std::size_t plane = first.plane();
    const double* gy = out.grad().data();
    std::size_t offset = 0;
    for (auto& t : parts) {
      const std::size_t c = t.rank() == 4 ? t.dim(1) : t.dim(0);
      if (t.requires_grad()) {
        double* gx = t.grad_mut().data();
        for (std::size_t n = 0; n < first.n; ++n) {
          const double* src = gy + (n * total_c + offset) * plane;
          double* dst = gx + n * c * plane;
          for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
      }
      offset += c;
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape dims) {
  if (shape_numel(dims) != x.numel()) {
    throw ShapeError("reshape: " + shape_to_string(x.dims()) + " -> " + shape_to_string(dims));
  }
  Tensor out(std::move(dims), std::vector<double>(x.data().begin(), x.data().end()));
  detail::maybe_record({x}, out, [x, out]() mutable {
    auto gx = x.grad_mut();
    auto gy = out.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
  return out;
}

Tensor select_batch(const Tensor& x, std::size_t n) {
  if (x.rank() < 2 || n >= x.dim(0)) {
    throw ShapeError("select_batch: index " + std::to_string(n) + " for " + shape_to_string(x.dims()));
  }
  Shape inner(x.dims().begin() + 1, x.dims().end());
  const std::size_t stride = shape_numel(inner);
  const double* src = x.data().data() + n * stride;
  Tensor out(std::move(inner), std::vector<double>(src, src + stride));
  detail::maybe_record({x}, out, [x, out, n, stride]() mutable {
    double* gx = x.grad_mut().data() + n * stride;
    auto gy = out.grad();
    for (std::size_t i = 0; i < stride; ++i) gx[i] += gy[i];
  });
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw ShapeError("stack_batch: no inputs");
  Shape dims{items.size()};
  dims.insert(dims.end(), items.front().dims().begin(), items.front().dims().end());
  const std::size_t stride = items.front().numel();
  std::vector<double> values;
  values.reserve(stride * items.size());
  for (const auto& t : items) {
    require_same_dims(t, items.front(), "stack_batch");
    values.insert(values.end(), t.data().begin(), t.data().end());
  }
  Tensor out(std::move(dims), std::move(values));
  detail::maybe_record(items, out, [items, out, stride]() mutable {
    const double* gy = out.grad().data();
    for (std::size_t n = 0; n < items.size(); ++n) {
      if (!items[n].requires_grad()) continue;
      auto gx = items[n].grad_mut();
      for (std::size_t i = 0; i < stride; ++i) gx[i] += gy[n * stride + i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// loss

Tensor masked_softmax_cross_entropy(const Tensor& logits, const LabelMap& labels,
                                    const Tensor& pixel_weights, int ignore_id) {
  if (logits.rank() != 3) {
    throw ShapeError("masked_softmax_cross_entropy: logits must be [K,H,W], got " +
                     shape_to_string(logits.dims()));
  }
  const std::size_t k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  if (labels.height != h || labels.width != w) {
    throw ShapeError("masked_softmax_cross_entropy: label map does not match logits");
  }
  if (pixel_weights.dims() != Shape{h, w}) {
    throw ShapeError("masked_softmax_cross_entropy: weights must be [H,W], got " +
                     shape_to_string(pixel_weights.dims()));
  }
  const std::size_t plane = h * w;
  const double* z = logits.data().data();
  auto wts = pixel_weights.data();
  auto probs = std::make_shared<std::vector<double>>(k * plane, 0.0);
  double total = 0.0, weight_sum = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    const double wi = wts[i];
    const int label = labels.data[i];
    if (!(wi >= 0.0)) throw DataError("masked_softmax_cross_entropy: negative pixel weight");
    if (wi == 0.0) continue;
    if (label == ignore_id) {
      throw DataError("masked_softmax_cross_entropy: ignore-id pixel carries nonzero weight");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw DataError("masked_softmax_cross_entropy: label " + std::to_string(label) +
                      " out of range [0," + std::to_string(k) + ")");
    }
    double mx = z[i];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, z[c * plane + i]);
    double se = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double e = std::exp(z[c * plane + i] - mx);
      (*probs)[c * plane + i] = e;
      se += e;
    }
    for (std::size_t c = 0; c < k; ++c) (*probs)[c * plane + i] /= se;
    const double nll = mx + std::log(se) - z[static_cast<std::size_t>(label) * plane + i];
    total += wi * nll;
    weight_sum += wi;
  }
  Tensor out = Tensor::scalar(weight_sum > 0.0 ? total / weight_sum : 0.0);
  check_finite(out, "masked_softmax_cross_entropy");
  detail::maybe_record({logits}, out,
                       [logits, out, labels, pixel_weights, probs, weight_sum, k, plane]() mutable {
    auto gz = logits.grad_mut();
    if (weight_sum == 0.0) return;
    const double g = out.grad()[0] / weight_sum;
    auto wts = pixel_weights.data();
    for (std::size_t i = 0; i < plane; ++i) {
      const double wi = wts[i];
      if (wi == 0.0) continue;
      const auto label = static_cast<std::size_t>(labels.data[i]);
      for (std::size_t c = 0; c < k; ++c) {
        const double target = c == label ? 1.0 : 0.0;
        gz[c * plane + i] += g * wi * ((*probs)[c * plane + i] - target);
      }
    }
  });
  return out;
}

LabelMap argmax_channels(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("argmax_channels: expected [K,H,W]");
  const std::size_t k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  const std::size_t plane = h * w;
  LabelMap out(h, w);
  const double* z = logits.data().data();
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (z[c * plane + i] > z[best * plane + i]) best = c;
    }
    out.data[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

}  // namespace rfnet
