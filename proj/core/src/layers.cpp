// SPDX-License-Identifier: Apache-2.0
#include "csa/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "csa/error.hpp"
#include "csa/ops.hpp"

namespace csa {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t out_ch, cg, og, kh, kw;
  std::size_t sh, sw, ph, pw;
  std::size_t ho, wo;
  std::size_t groups;

  std::size_t k() const { return cg * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

void im2col(const double* x, const ConvGeometry& g, std::size_t n, std::size_t group, double* cols) {
  const std::size_t p = g.p();
  for (std::size_t ci = 0; ci < g.cg; ++ci) {
    const double* plane = x + ((n * g.c) + group * g.cg + ci) * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((ci * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.sh + ki) - static_cast<long>(g.ph);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.sw + kj) - static_cast<long>(g.pw);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, std::size_t n, std::size_t group, double* dx) {
  const std::size_t p = g.p();
  for (std::size_t ci = 0; ci < g.cg; ++ci) {
    double* plane = dx + ((n * g.c) + group * g.cg + ci) * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((ci * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.sh + ki) - static_cast<long>(g.ph);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.sw + kj) - static_cast<long>(g.pw);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw Error(ErrorKind::Shape, std::string(op) + " expects [N,C,H,W], got " + shape_to_string(x.shape()));
  }
}

double uniform(Rng& rng, double bound) { return std::uniform_real_distribution<double>(-bound, bound)(rng); }

}  // namespace

// ---------------------------------------------------------------------------

void ParamCollector::param(const std::string& name, const Tensor& t, ParamRole role) {
  if (t.defined()) params_.push_back({name, t, role});
}

void ParamCollector::buffer(const std::string& name, std::vector<double>& values) {
  buffers_.push_back({name, &values});
}

std::size_t ParamCollector::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& options) {
  require_rank4(x, "conv2d");
  if (weight.rank() != 4) throw Error(ErrorKind::Shape, "conv2d weight must be [out, in/groups, kH, kW]");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.groups = options.groups;
  g.out_ch = weight.dim(0);
  g.cg = weight.dim(1);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.sh = options.stride.first;
  g.sw = options.stride.second;
  g.ph = options.padding.first;
  g.pw = options.padding.second;
  if (g.groups == 0 || g.c % g.groups != 0 || g.out_ch % g.groups != 0) {
    throw Error(ErrorKind::Shape, "conv2d channels " + std::to_string(g.c) + "->" + std::to_string(g.out_ch) +
                                      " not divisible by groups " + std::to_string(g.groups));
  }
  if (g.c / g.groups != g.cg) {
    throw Error(ErrorKind::Shape, "conv2d input has " + std::to_string(g.c) + " channels, weight expects " +
                                      std::to_string(g.cg * g.groups));
  }
  if (g.sh == 0 || g.sw == 0) throw Error(ErrorKind::Geometry, "conv2d stride must be positive");
  if (g.h + 2 * g.ph < g.kh || g.w + 2 * g.pw < g.kw) {
    throw Error(ErrorKind::Geometry, "conv2d input " + shape_to_string(x.shape()) + " smaller than kernel " +
                                         std::to_string(g.kh) + "x" + std::to_string(g.kw));
  }
  g.og = g.out_ch / g.groups;
  g.ho = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.wo = (g.w + 2 * g.pw - g.kw) / g.sw + 1;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_ch)) {
    throw Error(ErrorKind::Shape, "conv2d bias must be [" + std::to_string(g.out_ch) + "]");
  }

  const std::size_t k = g.k(), p = g.p();
  std::vector<double> out(g.n * g.out_ch * p);
  std::vector<double> cols(k * p);
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t gr = 0; gr < g.groups; ++gr) {
      im2col(xd, g, n, gr, cols.data());
      Map(out.data() + (n * g.out_ch + gr * g.og) * p, g.og, p).noalias() =
          ConstMap(wd + gr * g.og * k, g.og, k) * ConstMap(cols.data(), k, p);
    }
  }
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t o = 0; o < g.out_ch; ++o) {
        double* plane = out.data() + (n * g.out_ch + o) * p;
        for (std::size_t i = 0; i < p; ++i) plane[i] += bd[o];
      }
    }
  }

  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return detail::make_result(
      "conv2d", {g.n, g.out_ch, g.ho, g.wo}, std::move(out), {x, weight, bias}, [xi, wi, bi, g](std::span<const double> grad) {
        const std::size_t k = g.k(), p = g.p();
        std::vector<double> cols(k * p);
        std::vector<double> dcols(k * p);
        for (std::size_t n = 0; n < g.n; ++n) {
          for (std::size_t gr = 0; gr < g.groups; ++gr) {
            ConstMap gm(grad.data() + (n * g.out_ch + gr * g.og) * p, g.og, p);
            if (wi->requires_grad) {
              im2col(xi->data.data(), g, n, gr, cols.data());
              Map(wi->grad_buffer().data() + gr * g.og * k, g.og, k).noalias() +=
                  gm * ConstMap(cols.data(), k, p).transpose();
            }
            if (xi->requires_grad) {
              Map(dcols.data(), k, p).noalias() = ConstMap(wi->data.data() + gr * g.og * k, g.og, k).transpose() * gm;
              col2im(dcols.data(), g, n, gr, xi->grad_buffer().data());
            }
          }
        }
        if (bi && bi->requires_grad) {
          auto gb = bi->grad_buffer();
          for (std::size_t n = 0; n < g.n; ++n) {
            for (std::size_t o = 0; o < g.out_ch; ++o) {
              const double* plane = grad.data() + (n * g.out_ch + o) * p;
              double s = 0.0;
              for (std::size_t i = 0; i < p; ++i) s += plane[i];
              gb[o] += s;
            }
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training,
                  double momentum, double epsilon) {
  if (x.rank() < 2) throw Error(ErrorKind::Shape, "batch_norm expects a channel axis at 1");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t inner = x.numel() / (n * c);
  if (gamma.numel() != c || beta.numel() != c) {
    throw Error(ErrorKind::Shape, "batch_norm affine parameters do not match " + std::to_string(c) + " channels");
  }
  if (!(epsilon > 0)) throw Error(ErrorKind::Config, "batch_norm epsilon must be positive");
  if (stats.running_mean.size() != c) stats.running_mean.assign(c, 0.0);
  if (stats.running_var.size() != c) stats.running_var.assign(c, 1.0);
  const std::size_t count = n * inner;
  if (training && count == 1) {
    throw Error(ErrorKind::Geometry, "degenerate batch: training-mode batch_norm needs more than one value per channel");
  }

  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  std::vector<double> mu(c), inv_std(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* v = xd.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += v[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* v = xd.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) ss += (v[i] - m) * (v[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + epsilon);
      const double unbiased = ss / static_cast<double>(count - 1);
      stats.running_mean[ch] = (1.0 - momentum) * stats.running_mean[ch] + momentum * m;
      stats.running_var[ch] = (1.0 - momentum) * stats.running_var[ch] + momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = stats.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.running_var[ch] + epsilon);
    }
  }

  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double h = (xd[base + i] - mu[ch]) * inv_std[ch];
        xhat[base + i] = h;
        out[base + i] = gd[ch] * h + bd[ch];
      }
    }
  }

  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  return detail::make_result(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, inner, training](std::span<const double> g) {
        const double m = static_cast<double>(n * inner);
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_g[ch] += g[base + i];
              sum_gx[ch] += g[base + i] * xhat[base + i];
            }
          }
        }
        if (gi->requires_grad) {
          auto gg = gi->grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
        }
        if (bi->requires_grad) {
          auto gb = bi->grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
        }
        if (!xi->requires_grad) return;
        auto gx = xi->grad_buffer();
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * inner;
            const double scale = gi->data[ch] * inv_std[ch];
            for (std::size_t i = 0; i < inner; ++i) {
              if (training) {
                gx[base + i] += scale * (g[base + i] - sum_g[ch] / m - xhat[base + i] * sum_gx[ch] / m);
              } else {
                gx[base + i] += scale * g[base + i];
              }
            }
          }
        }
      });
}

Tensor pool2d(const Tensor& x, PoolMode mode, std::pair<std::size_t, std::size_t> window,
              std::pair<std::size_t, std::size_t> stride) {
  require_rank4(x, "pool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto [kh, kw] = window;
  const auto [sh, sw] = stride;
  if (kh == 0 || kw == 0 || sh == 0 || sw == 0) throw Error(ErrorKind::Geometry, "pool2d window and stride must be positive");
  if (h < kh || w < kw) {
    throw Error(ErrorKind::Geometry, "pool2d input " + shape_to_string(x.shape()) + " smaller than window " +
                                         std::to_string(kh) + "x" + std::to_string(kw));
  }
  const std::size_t ho = (h - kh) / sh + 1, wo = (w - kw) / sw + 1;
  const auto xd = x.data();
  std::vector<double> out(n * c * ho * wo);
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::Max) argmax.resize(out.size());
  const double area = static_cast<double>(kh * kw);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t in_base = plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t o = (plane * ho + oy) * wo + ox;
        if (mode == PoolMode::Max) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_i = 0;
          for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
              const std::size_t idx = in_base + (oy * sh + i) * w + ox * sw + j;
              if (xd[idx] > best) {
                best = xd[idx];
                best_i = idx;
              }
            }
          }
          out[o] = best;
          argmax[o] = best_i;
        } else {
          double s = 0.0;
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) s += xd[in_base + (oy * sh + i) * w + ox * sw + j];
          out[o] = s / area;
        }
      }
    }
  }
  auto xi = x.impl();
  return detail::make_result(
      "pool2d", {n, c, ho, wo}, std::move(out), {x},
      [xi, argmax = std::move(argmax), mode, n, c, h, w, ho, wo, kh, kw, sh, sw, area](std::span<const double> g) {
        auto gx = xi->grad_buffer();
        if (mode == PoolMode::Max) {
          for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
          return;
        }
        for (std::size_t plane = 0; plane < n * c; ++plane) {
          for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const double v = g[(plane * ho + oy) * wo + ox] / area;
              for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) gx[plane * h * w + (oy * sh + i) * w + ox * sw + j] += v;
            }
          }
        }
      });
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;
};

std::vector<Tap> half_pixel_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t height, std::size_t width) {
  require_rank4(x, "bilinear_upsample");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (height < h || width < w) {
    throw Error(ErrorKind::Geometry, "bilinear_upsample target " + std::to_string(height) + "x" + std::to_string(width) +
                                         " smaller than source " + std::to_string(h) + "x" + std::to_string(w));
  }
  const auto ty = half_pixel_taps(h, height);
  const auto tx = half_pixel_taps(w, width);
  const auto xd = x.data();
  std::vector<double> out(n * c * height * width);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = xd.data() + plane * h * w;
    double* dst = out.data() + plane * height * width;
    for (std::size_t oy = 0; oy < height; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < width; ++ox) {
        const auto& b = tx[ox];
        const double top = src[a.i0 * w + b.i0] * (1 - b.frac) + src[a.i0 * w + b.i1] * b.frac;
        const double bottom = src[a.i1 * w + b.i0] * (1 - b.frac) + src[a.i1 * w + b.i1] * b.frac;
        dst[oy * width + ox] = top * (1 - a.frac) + bottom * a.frac;
      }
    }
  }
  auto xi = x.impl();
  return detail::make_result("bilinear_upsample", {n, c, height, width}, std::move(out), {x},
                             [xi, ty, tx, n, c, h, w, height, width](std::span<const double> g) {
                               auto gx = xi->grad_buffer();
                               for (std::size_t plane = 0; plane < n * c; ++plane) {
                                 double* dst = gx.data() + plane * h * w;
                                 const double* src = g.data() + plane * height * width;
                                 for (std::size_t oy = 0; oy < height; ++oy) {
                                   const auto& a = ty[oy];
                                   for (std::size_t ox = 0; ox < width; ++ox) {
                                     const auto& b = tx[ox];
                                     const double v = src[oy * width + ox];
                                     dst[a.i0 * w + b.i0] += v * (1 - a.frac) * (1 - b.frac);
                                     dst[a.i0 * w + b.i1] += v * (1 - a.frac) * b.frac;
                                     dst[a.i1 * w + b.i0] += v * a.frac * (1 - b.frac);
                                     dst[a.i1 * w + b.i1] += v * a.frac * b.frac;
                                   }
                                 }
                               }
                             });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw Error(ErrorKind::Index, "softmax axis out of range for " + shape_to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= s[k];
  for (std::size_t k = axis + 1; k < s.size(); ++k) inner *= s[k];
  const std::size_t extent = s[axis];
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * extent * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < extent; ++e) mx = std::max(mx, xd[base + e * inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < extent; ++e) {
        const double v = std::exp(xd[base + e * inner] - mx);
        out[base + e * inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] /= z;
    }
  }
  auto xi = x.impl();
  std::vector<double> y = out;
  return detail::make_result("softmax", s, std::move(out), {x},
                             [xi, y = std::move(y), outer, inner, extent](std::span<const double> g) {
                               auto gx = xi->grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t i = 0; i < inner; ++i) {
                                   const std::size_t base = o * extent * inner + i;
                                   double dot = 0.0;
                                   for (std::size_t e = 0; e < extent; ++e) dot += g[base + e * inner] * y[base + e * inner];
                                   for (std::size_t e = 0; e < extent; ++e) {
                                     const std::size_t idx = base + e * inner;
                                     gx[idx] += y[idx] * (g[idx] - dot);
                                   }
                                 }
                               }
                             });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw Error(ErrorKind::Shape, "linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                                      shape_to_string(weight.shape()));
  }
  return add(matmul(x, transpose(weight)), bias);
}

// ---------------------------------------------------------------------------

GruParams GruParams::create(std::size_t input_size, std::size_t hidden_size) {
  GruParams p;
  p.input_size = input_size;
  p.hidden_size = hidden_size;
  p.w_input = Tensor::zeros({3 * hidden_size, input_size}, true);
  p.w_hidden = Tensor::zeros({3 * hidden_size, hidden_size}, true);
  p.bias = Tensor::zeros({3 * hidden_size}, true);
  return p;
}

void GruParams::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  for (auto& v : w_input.mutable_data()) v = uniform(rng, bound);
  for (auto& v : w_hidden.mutable_data()) v = uniform(rng, bound);
  for (auto& v : bias.mutable_data()) v = 0.0;
}

void GruParams::collect(ParamCollector& out, const std::string& prefix) const {
  out.param(prefix + ".w_input", w_input, ParamRole::Weight);
  out.param(prefix + ".w_hidden", w_hidden, ParamRole::Weight);
  out.param(prefix + ".bias", bias, ParamRole::Bias);
}

namespace {

// Hidden-to-hidden weights split once per sequence and pre-transposed.
struct PreparedGru {
  std::size_t hidden;
  Tensor u_gates_t;      // [H, 2H]
  Tensor u_candidate_t;  // [H, H]

  explicit PreparedGru(const GruParams& p)
      : hidden(p.hidden_size),
        u_gates_t(transpose(slice(p.w_hidden, 0, 0, 2 * p.hidden_size))),
        u_candidate_t(transpose(slice(p.w_hidden, 0, 2 * p.hidden_size, p.hidden_size))) {}

  // gx already holds W x + b, [N, 3H].
  Tensor step(const Tensor& gx, const Tensor& h) const {
    const Tensor gh = matmul(h, u_gates_t);
    const Tensor z = sigmoid(add(slice(gx, 1, 0, hidden), slice(gh, 1, 0, hidden)));
    const Tensor r = sigmoid(add(slice(gx, 1, hidden, hidden), slice(gh, 1, hidden, hidden)));
    const Tensor n = tanh(add(slice(gx, 1, 2 * hidden, hidden), matmul(mul(r, h), u_candidate_t)));
    return add(h, mul(z, sub(n, h)));
  }
};

void check_gru(const GruParams& p, std::size_t input_size) {
  if (p.input_size != input_size || p.w_input.dim(0) != 3 * p.hidden_size || p.w_input.dim(1) != input_size ||
      p.w_hidden.dim(0) != 3 * p.hidden_size || p.w_hidden.dim(1) != p.hidden_size || p.bias.numel() != 3 * p.hidden_size) {
    throw Error(ErrorKind::Shape, "GRU parameters inconsistent with input size " + std::to_string(input_size));
  }
}

}  // namespace

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p) {
  if (x.rank() != 2 || h_prev.rank() != 2 || x.dim(0) != h_prev.dim(0) || h_prev.dim(1) != p.hidden_size) {
    throw Error(ErrorKind::Shape, "gru_cell: x " + shape_to_string(x.shape()) + ", h " + shape_to_string(h_prev.shape()));
  }
  check_gru(p, x.dim(1));
  return PreparedGru(p).step(linear(x, p.w_input, p.bias), h_prev);
}

Tensor bgru_layer(const Tensor& z, const GruParams& forward, const GruParams& backward,
                  const std::vector<std::size_t>& lengths) {
  if (z.rank() != 3) throw Error(ErrorKind::Shape, "bgru_layer expects [N, D, T], got " + shape_to_string(z.shape()));
  const std::size_t n = z.dim(0), d = z.dim(1), t_len = z.dim(2);
  check_gru(forward, d);
  check_gru(backward, d);
  if (!lengths.empty() && lengths.size() != n) throw Error(ErrorKind::Shape, "bgru_layer: one length per clip required");

  bool masked = false;
  std::vector<Tensor> masks;
  if (!lengths.empty()) {
    for (std::size_t t = 0; t < t_len; ++t) {
      std::vector<double> m(n);
      for (std::size_t b = 0; b < n; ++b) {
        m[b] = t < lengths[b] ? 1.0 : 0.0;
        masked = masked || m[b] == 0.0;
      }
      masks.push_back(Tensor::from({n, 1}, std::move(m)));
    }
  }

  const Tensor x = reshape(permute(z, {2, 0, 1}), {t_len * n, d});  // time-major rows
  auto run = [&](const GruParams& p, bool reverse) {
    const PreparedGru cell(p);
    const Tensor gx_all = linear(x, p.w_input, p.bias);
    std::vector<Tensor> states(t_len);
    Tensor h = Tensor::zeros({n, p.hidden_size});
    for (std::size_t s = 0; s < t_len; ++s) {
      const std::size_t t = reverse ? t_len - 1 - s : s;
      Tensor next = cell.step(slice(gx_all, 0, t * n, n), h);
      if (masked) next = add(h, mul(masks[t], sub(next, h)));
      h = next;
      states[t] = h;
    }
    return states;
  };
  const auto fwd = run(forward, false);
  const auto bwd = run(backward, true);
  std::vector<Tensor> steps;
  steps.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) steps.push_back(concat({fwd[t], bwd[t]}, 1));
  const std::size_t width = forward.hidden_size + backward.hidden_size;
  return permute(reshape(concat(steps, 0), {t_len, n, width}), {1, 2, 0});
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dOptions opts, bool with_bias)
    : options(opts) {
  if (opts.groups == 0 || in_ch % opts.groups || out_ch % opts.groups) {
    throw Error(ErrorKind::Config, "conv channels not divisible by groups");
  }
  weight = Tensor::zeros({out_ch, in_ch / opts.groups, kernel, kernel}, true);
  if (with_bias) bias = Tensor::zeros({out_ch}, true);
}

void Conv2d::init(Rng& rng) {
  const auto& s = weight.shape();
  const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : weight.mutable_data()) v = uniform(rng, bound);
  if (bias.defined()) {
    for (auto& v : bias.mutable_data()) v = 0.0;
  }
}

void Conv2d::collect(ParamCollector& out, const std::string& prefix) const {
  out.param(prefix + ".weight", weight, ParamRole::Weight);
  out.param(prefix + ".bias", bias, ParamRole::Bias);
}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)), beta(Tensor::zeros({channels}, true)) {
  stats.running_mean.assign(channels, 0.0);
  stats.running_var.assign(channels, 1.0);
}

void BatchNorm2d::collect(ParamCollector& out, const std::string& prefix) {
  out.param(prefix + ".gamma", gamma, ParamRole::Norm);
  out.param(prefix + ".beta", beta, ParamRole::Norm);
  out.buffer(prefix + ".running_mean", stats.running_mean);
  out.buffer(prefix + ".running_var", stats.running_var);
}

Linear::Linear(std::size_t in_features, std::size_t out_features)
    : weight(Tensor::zeros({out_features, in_features}, true)), bias(Tensor::zeros({out_features}, true)) {}

void Linear::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight.dim(1)));
  for (auto& v : weight.mutable_data()) v = uniform(rng, bound);
  for (auto& v : bias.mutable_data()) v = 0.0;
}

void Linear::collect(ParamCollector& out, const std::string& prefix) const {
  out.param(prefix + ".weight", weight, ParamRole::Weight);
  out.param(prefix + ".bias", bias, ParamRole::Bias);
}

}  // namespace csa
