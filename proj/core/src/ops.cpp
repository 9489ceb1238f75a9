// SPDX-License-Identifier: Apache-2.0
#include "csa/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "csa/error.hpp"

namespace csa {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

// Flat input index for every element of `out`, with broadcast axes pinned to 0.
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    in_stride[k + offset] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = flat;
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      flat += in_stride[k];
      if (idx[k] < out[k]) break;
      flat -= in_stride[k] * idx[k];
      idx[k] = 0;
    }
  }
  return map;
}

template <typename Forward, typename DA, typename DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Forward f, DA da, DB db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(n);
  const bool same = a.shape() == b.shape();
  std::vector<std::size_t> amap, bmap;
  if (same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i]);
  } else {
    amap = broadcast_map(a.shape(), out_shape);
    bmap = broadcast_map(b.shape(), out_shape);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[amap[i]], bd[bmap[i]]);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result(
      name, out_shape, std::move(out), {a, b},
      [ai, bi, amap = std::move(amap), bmap = std::move(bmap), same, da, db](std::span<const double> g) {
        const auto& av = ai->data;
        const auto& bv = bi->data;
        if (ai->requires_grad) {
          auto ga = ai->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t ia = same ? i : amap[i];
            const std::size_t ib = same ? i : bmap[i];
            ga[ia] += g[i] * da(av[ia], bv[ib]);
          }
        }
        if (bi->requires_grad) {
          auto gb = bi->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t ia = same ? i : amap[i];
            const std::size_t ib = same ? i : bmap[i];
            gb[ib] += g[i] * db(av[ia], bv[ib]);
          }
        }
      });
}

// `df` receives the input value and the output value.
template <typename Forward, typename Deriv>
Tensor unary_op(const char* name, const Tensor& a, Forward f, Deriv df) {
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  if (!(grad_mode_enabled() && a.requires_grad())) return detail::make_result(name, a.shape(), std::move(out), {a}, {});
  auto ai = a.impl();
  std::vector<double> y = out;
  return detail::make_result(name, a.shape(), std::move(out), {a},
                             [ai, df, y = std::move(y)](std::span<const double> g) {
                               auto ga = ai->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(ai->data[i], y[i]);
                             });
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t k = shape.size(); k-- > 1;) strides[k - 1] = strides[k] * shape[k];
  return strides;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t ea = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t eb = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw Error(ErrorKind::Shape, "cannot broadcast shapes " + shape_to_string(a) + " and " + shape_to_string(b));
    }
    out[k] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      "scale", a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(
      "add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
  return unary_op(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

// exp overflows to +inf for inputs above ~709.
Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw Error(ErrorKind::Domain, "log of non-positive value " + std::to_string(v));
  }
  return unary_op(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary_op(
      "clamp_min", a, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b, double constant) {
  auto need_b = [&] {
    if (!b.defined()) throw Error(ErrorKind::Shape, "binary elementwise op needs a second operand");
  };
  switch (kind) {
    case ElementwiseKind::Add: need_b(); return add(a, b);
    case ElementwiseKind::Sub: need_b(); return sub(a, b);
    case ElementwiseKind::Mul: need_b(); return mul(a, b);
    case ElementwiseKind::Sigmoid: return sigmoid(a);
    case ElementwiseKind::Relu: return relu(a);
    case ElementwiseKind::Tanh: return tanh(a);
    case ElementwiseKind::Log: return log(a);
    case ElementwiseKind::Exp: return exp(a);
    case ElementwiseKind::Scale: return scale(a, constant);
  }
  throw Error(ErrorKind::Config, "unknown elementwise kind");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw Error(ErrorKind::Shape, "matmul needs rank-2 operands, got " + shape_to_string(a.shape()) + " and " +
                                      shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw Error(ErrorKind::Shape, "matmul inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                                      shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](std::span<const double> g) {
    ConstMap gm(g.data(), m, n);
    if (ai->requires_grad) {
      Map(ai->grad_buffer().data(), m, k).noalias() += gm * ConstMap(bi->data.data(), k, n).transpose();
    }
    if (bi->requires_grad) {
      Map(bi->grad_buffer().data(), k, n).noalias() += ConstMap(ai->data.data(), m, k).transpose() * gm;
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw Error(ErrorKind::Shape, "transpose needs rank 2, got " + shape_to_string(a.shape()));
  return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& in = a.shape();
  const std::size_t rank = in.size();
  if (axes.size() != rank) throw Error(ErrorKind::Index, "permute axis count does not match rank");
  std::vector<bool> used(rank, false);
  Shape out_shape(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    if (axes[k] >= rank || used[axes[k]]) throw Error(ErrorKind::Index, "permute axes must be a permutation");
    used[axes[k]] = true;
    out_shape[k] = in[axes[k]];
  }
  const auto in_strides = row_major_strides(in);
  std::vector<std::size_t> stride(rank);
  for (std::size_t k = 0; k < rank; ++k) stride[k] = in_strides[axes[k]];
  const std::size_t n = a.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = flat;
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      flat += stride[k];
      if (idx[k] < out_shape[k]) break;
      flat -= stride[k] * idx[k];
      idx[k] = 0;
    }
  }
  const auto ad = a.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[map[i]];
  auto ai = a.impl();
  return detail::make_result("permute", out_shape, std::move(out), {a}, [ai, map = std::move(map)](std::span<const double> g) {
    auto ga = ai->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[map[i]] += g[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw Error(ErrorKind::Shape, "cannot reshape " + shape_to_string(a.shape()) + " to " + shape_to_string(shape));
  }
  auto ai = a.impl();
  return detail::make_result("reshape", std::move(shape), a.to_vector(), {a},
                             [ai](std::span<const double> g) { ai->accumulate_grad(g); });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& in = a.shape();
  if (axis >= in.size()) throw Error(ErrorKind::Index, "slice axis out of range");
  if (length == 0 || start + length > in[axis]) {
    throw Error(ErrorKind::Index, "slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                      ") out of range for extent " + std::to_string(in[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= in[k];
  for (std::size_t k = axis + 1; k < in.size(); ++k) inner *= in[k];
  Shape out_shape = in;
  out_shape[axis] = length;
  const std::size_t extent = in[axis];
  const auto ad = a.data();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(ad.begin() + (o * extent + start) * inner, length * inner, out.begin() + o * length * inner);
  }
  auto ai = a.impl();
  return detail::make_result("slice", out_shape, std::move(out), {a},
                             [ai, outer, inner, extent, start, length](std::span<const double> g) {
                               auto ga = ai->grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 const double* src = g.data() + o * length * inner;
                                 double* dst = ga.data() + (o * extent + start) * inner;
                                 for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
                               }
                             });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorKind::Shape, "concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw Error(ErrorKind::Index, "concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t k = 0; ok && k < s.size(); ++k) ok = k == axis || s[k] == first[k];
    if (!ok) throw Error(ErrorKind::Shape, "concat shape mismatch: " + shape_to_string(first) + " vs " + shape_to_string(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= first[k];
  for (std::size_t k = axis + 1; k < first.size(); ++k) inner *= first[k];
  const std::size_t total = out_shape[axis];
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t e = p.shape()[axis];
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.begin() + o * e * inner, e * inner, out.begin() + (o * total + offset) * inner);
    }
    offset += e;
  }
  std::vector<detail::ImplPtr> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return detail::make_result("concat", out_shape, std::move(out), parts,
                             [impls, offsets, outer, inner, total, axis](std::span<const double> g) {
                               for (std::size_t p = 0; p < impls.size(); ++p) {
                                 if (!impls[p]->requires_grad) continue;
                                 const std::size_t e = impls[p]->shape[axis];
                                 auto gp = impls[p]->grad_buffer();
                                 for (std::size_t o = 0; o < outer; ++o) {
                                   const double* src = g.data() + (o * total + offsets[p]) * inner;
                                   double* dst = gp.data() + o * e * inner;
                                   for (std::size_t i = 0; i < e * inner; ++i) dst[i] += src[i];
                                 }
                               }
                             });
}

Tensor reduce(const Tensor& a, const std::vector<std::size_t>& axes, ReduceMode mode) {
  const Shape& in = a.shape();
  std::vector<bool> reduced(in.size(), false);
  for (auto ax : axes) {
    if (ax >= in.size()) {
      throw Error(ErrorKind::Index, "reduce axis " + std::to_string(ax) + " out of range for shape " + shape_to_string(in));
    }
    if (reduced[ax]) throw Error(ErrorKind::Index, "reduce axes must be distinct");
    reduced[ax] = true;
  }
  Shape out_shape = in;
  std::size_t count = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    if (reduced[k]) {
      count *= in[k];
      out_shape[k] = 1;
    }
  }
  // Output index of every input element.
  const auto map = broadcast_map(out_shape, in);
  const auto ad = a.data();
  const std::size_t n_out = shape_numel(out_shape);
  std::vector<double> out(n_out, mode == ReduceMode::Max ? -std::numeric_limits<double>::infinity() : 0.0);
  std::vector<std::size_t> argmax;
  if (mode == ReduceMode::Max) {
    argmax.assign(n_out, 0);
    for (std::size_t i = 0; i < ad.size(); ++i) {
      if (ad[i] > out[map[i]]) {
        out[map[i]] = ad[i];
        argmax[map[i]] = i;
      }
    }
  } else {
    for (std::size_t i = 0; i < ad.size(); ++i) out[map[i]] += ad[i];
    if (mode == ReduceMode::Mean) {
      for (auto& v : out) v /= static_cast<double>(count);
    }
  }
  auto ai = a.impl();
  return detail::make_result("reduce", out_shape, std::move(out), {a},
                             [ai, map, argmax = std::move(argmax), mode, count](std::span<const double> g) {
                               auto ga = ai->grad_buffer();
                               if (mode == ReduceMode::Max) {
                                 for (std::size_t o = 0; o < g.size(); ++o) ga[argmax[o]] += g[o];
                                 return;
                               }
                               const double f = mode == ReduceMode::Mean ? 1.0 / static_cast<double>(count) : 1.0;
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[map[i]] * f;
                             });
}

Tensor sum(const Tensor& a) {
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reshape(reduce(a, axes, ReduceMode::Sum), {1});
}

Tensor mean(const Tensor& a) {
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reshape(reduce(a, axes, ReduceMode::Mean), {1});
}

}  // namespace csa
