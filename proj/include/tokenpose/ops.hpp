#ifndef TOKENPOSE_OPS_HPP
#define TOKENPOSE_OPS_HPP

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <limits>
#include <memory>
#include <vector>

#include "tokenpose/tensor.hpp"

// The kernel set the architecture needs, each with its reverse-mode rule.
// Reductions (softmax denominators, layer-norm moments, sums) accumulate in
// double regardless of the element type so 32-bit mode keeps its invariants.

namespace tokenpose {

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Right-aligned broadcast of the leading (batch) dimensions of two shapes.
struct BatchPlan {
  std::size_t count = 1;           // number of output matrix blocks
  Shape out_batch;                 // broadcast batch dims
  std::vector<std::size_t> a_block, b_block;  // block index per output block
};

inline BatchPlan plan_batch(const Shape& a, const Shape& b, const char* op) {
  auto ra = a.size(), rb = b.size();
  std::size_t na = ra - 2, nb = rb - 2;
  std::size_t n = std::max(na, nb);
  Shape out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t da = i < n - na ? 1 : a[i - (n - na)];
    std::size_t db = i < n - nb ? 1 : b[i - (n - nb)];
    if (da != db && da != 1 && db != 1)
      throw ShapeMismatch(std::string(op) + " batch dims incompatible: " + shape_str(a) + " x " +
                          shape_str(b));
    out[i] = std::max(da, db);
  }
  BatchPlan plan;
  plan.out_batch = out;
  for (auto d : out) plan.count *= d;
  plan.a_block.resize(plan.count);
  plan.b_block.resize(plan.count);
  for (std::size_t flat = 0; flat < plan.count; ++flat) {
    std::size_t rem = flat, ia = 0, ib = 0;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = n; i-- > 0;) {
      idx[i] = rem % out[i];
      rem /= out[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= n - na) {
        std::size_t da = a[i - (n - na)];
        ia = ia * da + (da == 1 ? 0 : idx[i]);
      }
      if (i >= n - nb) {
        std::size_t db = b[i - (n - nb)];
        ib = ib * db + (db == 1 ? 0 : idx[i]);
      }
    }
    plan.a_block[flat] = ia;
    plan.b_block[flat] = ib;
  }
  return plan;
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2])
    throw ShapeMismatch("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1], n = sb[sb.size() - 1];
  auto plan = detail::plan_batch(sa, sb, "matmul");
  Shape out_shape = plan.out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<T> out(plan.count * m * n);
  for (std::size_t i = 0; i < plan.count; ++i) {
    detail::ConstMatMap<T> ma(a.values().data() + plan.a_block[i] * m * k, m, k);
    detail::ConstMatMap<T> mb(b.values().data() + plan.b_block[i] * k * n, k, n);
    detail::MatMap<T> mo(out.data() + i * m * n, m, n);
    mo.noalias() = ma * mb;
  }

  auto backward = [a, b, plan, m, k, n](const std::vector<T>& gout,
                                        const std::vector<std::vector<T>*>& pgrads) {
    for (std::size_t i = 0; i < plan.count; ++i) {
      detail::ConstMatMap<T> mg(gout.data() + i * m * n, m, n);
      if (pgrads[0]) {
        detail::ConstMatMap<T> mb(b.values().data() + plan.b_block[i] * k * n, k, n);
        detail::MatMap<T> da(pgrads[0]->data() + plan.a_block[i] * m * k, m, k);
        da.noalias() += mg * mb.transpose();
      }
      if (pgrads[1]) {
        detail::ConstMatMap<T> ma(a.values().data() + plan.a_block[i] * m * k, m, k);
        detail::MatMap<T> db(pgrads[1]->data() + plan.b_block[i] * k * n, k, n);
        db.noalias() += ma.transpose() * mg;
      }
    }
  };
  return Tensor<T>::make_op_output(std::move(out_shape), std::move(out), {a, b}, backward);
}

// 2D matmul whose forward accumulates in double regardless of T. Used where
// a reduction runs over the token axis and must be insensitive to token
// order beyond elementwise rounding (the attention-weighted value sum).
template <typename T>
Tensor<T> matmul_stable(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw ShapeMismatch("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  std::size_t m = sa[0], k = sa[1], n = sb[1];
  using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  MatD da = detail::ConstMatMap<T>(a.values().data(), m, k).template cast<double>();
  MatD db = detail::ConstMatMap<T>(b.values().data(), k, n).template cast<double>();
  MatD dc = da * db;
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(dc.data()[i]);

  auto backward = [a, b, m, k, n](const std::vector<T>& gout,
                                  const std::vector<std::vector<T>*>& pgrads) {
    detail::ConstMatMap<T> mg(gout.data(), m, n);
    if (pgrads[0]) {
      detail::ConstMatMap<T> mb(b.values().data(), k, n);
      detail::MatMap<T> dpa(pgrads[0]->data(), m, k);
      dpa.noalias() += mg * mb.transpose();
    }
    if (pgrads[1]) {
      detail::ConstMatMap<T> ma(a.values().data(), m, k);
      detail::MatMap<T> dpb(pgrads[1]->data(), k, n);
      dpb.noalias() += ma.transpose() * mg;
    }
  };
  return Tensor<T>::make_op_output({m, n}, std::move(out), {a, b}, backward);
}

// Swap the last two dimensions.
template <typename T>
Tensor<T> transpose_last(const Tensor<T>& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeMismatch("transpose needs rank >= 2, got " + shape_str(s));
  std::size_t m = s[s.size() - 2], n = s[s.size() - 1];
  std::size_t blocks = a.numel() / (m * n);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  std::vector<T> out(a.numel());
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const T* src = a.values().data() + blk * m * n;
    T* dst = out.data() + blk * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  auto backward = [m, n, blocks](const std::vector<T>& gout,
                                 const std::vector<std::vector<T>*>& pgrads) {
    if (!pgrads[0]) return;
    for (std::size_t blk = 0; blk < blocks; ++blk) {
      const T* g = gout.data() + blk * m * n;
      T* d = pgrads[0]->data() + blk * m * n;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < m; ++i) d[i * n + j] += g[j * m + i];
    }
  };
  return Tensor<T>::make_op_output(std::move(out_shape), std::move(out), {a}, backward);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatch("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto backward = [](const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    for (int p = 0; p < 2; ++p)
      if (pgrads[p])
        for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[p])[i] += gout[i];
  };
  return Tensor<T>::make_op_output(a.shape(), std::move(out), {a, b}, backward);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatch("sub shape mismatch: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto backward = [](const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    if (pgrads[0])
      for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[0])[i] += gout[i];
    if (pgrads[1])
      for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[1])[i] -= gout[i];
  };
  return Tensor<T>::make_op_output(a.shape(), std::move(out), {a, b}, backward);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatch("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto backward = [a, b](const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    if (pgrads[0])
      for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[0])[i] += gout[i] * b.values()[i];
    if (pgrads[1])
      for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[1])[i] += gout[i] * a.values()[i];
  };
  return Tensor<T>::make_op_output(a.shape(), std::move(out), {a, b}, backward);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  auto backward = [factor](const std::vector<T>& gout,
                           const std::vector<std::vector<T>*>& pgrads) {
    if (pgrads[0])
      for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[0])[i] += gout[i] * factor;
  };
  return Tensor<T>::make_op_output(a.shape(), std::move(out), {a}, backward);
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
  auto backward = [](const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    if (pgrads[0])
      for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[0])[i] += gout[i];
  };
  return Tensor<T>::make_op_output(a.shape(), std::move(out), {a}, backward);
}

// x[.., n] + bias[n], broadcast over leading dims.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  std::size_t n = x.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != n)
    throw ShapeMismatch("add_bias shape mismatch: " + shape_str(x.shape()) + " vs " +
                        shape_str(bias.shape()));
  std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x.values()[r * n + j] + bias.values()[j];
  auto backward = [rows, n](const std::vector<T>& gout,
                            const std::vector<std::vector<T>*>& pgrads) {
    if (pgrads[0])
      for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[0])[i] += gout[i];
    if (pgrads[1])
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) (*pgrads[1])[j] += gout[r * n + j];
  };
  return Tensor<T>::make_op_output(x.shape(), std::move(out), {x, bias}, backward);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0.0;
  for (const T& v : a.values()) acc += static_cast<double>(v);
  auto backward = [](const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    if (pgrads[0])
      for (auto& g : *pgrads[0]) g += gout[0];
  };
  return Tensor<T>::make_op_output({1}, {static_cast<T>(acc)}, {a}, backward);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  double acc = 0.0;
  for (const T& v : a.values()) acc += static_cast<double>(v);
  std::size_t n = a.numel();
  acc /= static_cast<double>(n);
  auto backward = [n](const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    if (pgrads[0]) {
      T g = gout[0] / static_cast<T>(n);
      for (auto& v : *pgrads[0]) v += g;
    }
  };
  return Tensor<T>::make_op_output({1}, {static_cast<T>(acc)}, {a}, backward);
}

// Numerically stable softmax over the last dimension; max subtraction and a
// double-precision denominator.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  std::size_t n = x.shape().back();
  std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.values().data() + r * n;
    T* dst = out.data() + r * n;
    double m = static_cast<double>(src[0]);
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, static_cast<double>(src[j]));
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(static_cast<double>(src[j]) - m);
    for (std::size_t j = 0; j < n; ++j)
      dst[j] = static_cast<T>(std::exp(static_cast<double>(src[j]) - m) / denom);
  }
  auto y = std::make_shared<std::vector<T>>(out);
  auto backward = [y, rows, n](const std::vector<T>& gout,
                               const std::vector<std::vector<T>*>& pgrads) {
    if (!pgrads[0]) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yv = y->data() + r * n;
      const T* g = gout.data() + r * n;
      T* d = pgrads[0]->data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[j]) * yv[j];
      for (std::size_t j = 0; j < n; ++j)
        d[j] += static_cast<T>(static_cast<double>(yv[j]) * (static_cast<double>(g[j]) - dot));
    }
  };
  return Tensor<T>::make_op_output(x.shape(), std::move(out), {x}, backward);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-6) {
  std::size_t d = x.shape().back();
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
    throw ShapeMismatch("layer_norm shape mismatch: x " + shape_str(x.shape()) + ", gamma " +
                        shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  if (eps <= 0.0) throw InvalidArgument("layer_norm eps must be > 0");
  std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.values().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += static_cast<double>(src[j]);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = static_cast<double>(src[j]) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = iv;
    for (std::size_t j = 0; j < d; ++j) {
      T xh = static_cast<T>((static_cast<double>(src[j]) - mu) * iv);
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = xh * gamma.values()[j] + beta.values()[j];
    }
  }
  auto backward = [gamma, xhat, inv, rows, d](const std::vector<T>& gout,
                                              const std::vector<std::vector<T>*>& pgrads) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = gout.data() + r * d;
      const T* xh = xhat->data() + r * d;
      if (pgrads[0]) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          double gg = static_cast<double>(g[j]) * gamma.values()[j];
          m1 += gg;
          m2 += gg * static_cast<double>(xh[j]);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        T* dx = pgrads[0]->data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          double gg = static_cast<double>(g[j]) * gamma.values()[j];
          dx[j] += static_cast<T>((*inv)[r] * (gg - m1 - static_cast<double>(xh[j]) * m2));
        }
      }
      if (pgrads[1])
        for (std::size_t j = 0; j < d; ++j) (*pgrads[1])[j] += g[j] * xh[j];
      if (pgrads[2])
        for (std::size_t j = 0; j < d; ++j) (*pgrads[2])[j] += g[j];
    }
  };
  return Tensor<T>::make_op_output(x.shape(), std::move(out), {x, gamma, beta}, backward);
}

// Exact GELU: x * Phi(x) with the Gaussian CDF via erf.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(x.values()[i]);
    out[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2)));
  }
  auto backward = [x](const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    if (!pgrads[0]) return;
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < gout.size(); ++i) {
      double v = static_cast<double>(x.values()[i]);
      double phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*pgrads[0])[i] += gout[i] * static_cast<T>(phi + v * pdf);
    }
  };
  return Tensor<T>::make_op_output(x.shape(), std::move(out), {x}, backward);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > T(0) ? x.values()[i] : T(0);
  auto backward = [x](const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    if (!pgrads[0]) return;
    for (std::size_t i = 0; i < gout.size(); ++i)
      if (x.values()[i] > T(0)) (*pgrads[0])[i] += gout[i];
  };
  return Tensor<T>::make_op_output(x.shape(), std::move(out), {x}, backward);
}

// Cross-correlation, NCHW x OCkhkw -> NOH'W'.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride,
                 std::size_t padding) {
  if (stride < 1) throw InvalidStride("conv2d stride must be >= 1");
  if (x.rank() != 4 || kernel.rank() != 4 || x.dim(1) != kernel.dim(1))
    throw ShapeMismatch("conv2d shape mismatch: x " + shape_str(x.shape()) + ", kernel " +
                        shape_str(kernel.shape()));
  std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::size_t o = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw ShapeMismatch("conv2d kernel larger than padded input: x " + shape_str(x.shape()) +
                        ", kernel " + shape_str(kernel.shape()));
  std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  std::size_t ow = (w + 2 * padding - kw) / stride + 1;

  std::vector<T> out(b * o * oh * ow);
  const T* xv = x.values().data();
  const T* kv = kernel.values().data();
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t oi = 0; oi < o; ++oi)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t r = 0; r < kh; ++r) {
              std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(y * stride + r) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t s = 0; s < kw; ++s) {
                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(z * stride + s) -
                                    static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += static_cast<double>(xv[((bi * c + ci) * h + iy) * w + ix]) *
                       kv[((oi * c + ci) * kh + r) * kw + s];
              }
            }
          out[((bi * o + oi) * oh + y) * ow + z] = static_cast<T>(acc);
        }

  auto backward = [x, kernel, stride, padding, b, c, h, w, o, kh, kw, oh, ow](
                      const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    const T* xv = x.values().data();
    const T* kv = kernel.values().data();
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t oi = 0; oi < o; ++oi)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t z = 0; z < ow; ++z) {
            T g = gout[((bi * o + oi) * oh + y) * ow + z];
            if (g == T(0)) continue;
            for (std::size_t ci = 0; ci < c; ++ci)
              for (std::size_t r = 0; r < kh; ++r) {
                std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + r) -
                                    static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t s = 0; s < kw; ++s) {
                  std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(z * stride + s) -
                                      static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  std::size_t xi = ((bi * c + ci) * h + iy) * w + ix;
                  std::size_t ki = ((oi * c + ci) * kh + r) * kw + s;
                  if (pgrads[0]) (*pgrads[0])[xi] += g * kv[ki];
                  if (pgrads[1]) (*pgrads[1])[ki] += g * xv[xi];
                }
              }
          }
  };
  return Tensor<T>::make_op_output({b, o, oh, ow}, std::move(out), {x, kernel}, backward);
}

// x[b,c,h,w] + bias[c], broadcast over batch and spatial dims.
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() != 4 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw ShapeMismatch("add_channel_bias shape mismatch: " + shape_str(x.shape()) + " vs " +
                        shape_str(bias.shape()));
  std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(x.numel());
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ci = 0; ci < c; ++ci) {
      std::size_t base = (bi * c + ci) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = x.values()[base + i] + bias.values()[ci];
    }
  auto backward = [b, c, hw](const std::vector<T>& gout,
                             const std::vector<std::vector<T>*>& pgrads) {
    if (pgrads[0])
      for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[0])[i] += gout[i];
    if (pgrads[1])
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci) {
          std::size_t base = (bi * c + ci) * hw;
          double acc = 0.0;
          for (std::size_t i = 0; i < hw; ++i) acc += static_cast<double>(gout[base + i]);
          (*pgrads[1])[ci] += static_cast<T>(acc);
        }
  };
  return Tensor<T>::make_op_output(x.shape(), std::move(out), {x, bias}, backward);
}

// Rows [begin, end) along axis 0.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.dim(0))
    throw InvalidArgument("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) +
                          ") out of range for shape " + shape_str(x.shape()));
  std::size_t rowsz = x.numel() / x.dim(0);
  Shape out_shape = x.shape();
  out_shape[0] = end - begin;
  std::vector<T> out(x.values().begin() + begin * rowsz, x.values().begin() + end * rowsz);
  auto backward = [begin, rowsz](const std::vector<T>& gout,
                                 const std::vector<std::vector<T>*>& pgrads) {
    if (!pgrads[0]) return;
    for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[0])[begin * rowsz + i] += gout[i];
  };
  return Tensor<T>::make_op_output(std::move(out_shape), std::move(out), {x}, backward);
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows of zero tensors");
  Shape tail = parts[0].shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    Shape t = tail;
    s[0] = t[0] = 0;
    if (s != t)
      throw ShapeMismatch("concat_rows shape mismatch: " + shape_str(parts[0].shape()) + " vs " +
                          shape_str(p.shape()));
    rows += p.dim(0);
  }
  Shape out_shape = tail;
  out_shape[0] = rows;
  std::vector<T> out;
  out.reserve(shape_numel(out_shape));
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    sizes.push_back(p.numel());
  }
  auto backward = [sizes](const std::vector<T>& gout,
                          const std::vector<std::vector<T>*>& pgrads) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < sizes.size(); ++p) {
      if (pgrads[p])
        for (std::size_t i = 0; i < sizes[p]; ++i) (*pgrads[p])[i] += gout[off + i];
      off += sizes[p];
    }
  };
  return Tensor<T>::make_op_output(std::move(out_shape), std::move(out), parts, backward);
}

// 2D column concatenation.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols of zero tensors");
  std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows)
      throw ShapeMismatch("concat_cols shape mismatch: " + shape_str(parts[0].shape()) + " vs " +
                          shape_str(p.shape()));
    cols += p.dim(1);
  }
  std::vector<T> out(rows * cols);
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      std::memcpy(out.data() + r * cols + off, p.values().data() + r * w, w * sizeof(T));
    widths.push_back(w);
    off += w;
  }
  auto backward = [rows, cols, widths](const std::vector<T>& gout,
                                       const std::vector<std::vector<T>*>& pgrads) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (pgrads[p])
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[p]; ++j)
            (*pgrads[p])[r * widths[p] + j] += gout[r * cols + off + j];
      off += widths[p];
    }
  };
  return Tensor<T>::make_op_output({rows, cols}, std::move(out), parts, backward);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeMismatch("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                        " changes element count");
  std::vector<T> out = x.values();
  auto backward = [](const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    if (pgrads[0])
      for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[0])[i] += gout[i];
  };
  return Tensor<T>::make_op_output(std::move(new_shape), std::move(out), {x}, backward);
}

// Inverted dropout; identity when p == 0 or not training.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw InvalidArgument("dropout probability must be in [0,1)");
  if (!training || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  T keep = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? T(0) : keep;
    out[i] = x.values()[i] * (*mask)[i];
  }
  auto backward = [mask](const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads) {
    if (!pgrads[0]) return;
    for (std::size_t i = 0; i < gout.size(); ++i) (*pgrads[0])[i] += gout[i] * (*mask)[i];
  };
  return Tensor<T>::make_op_output(x.shape(), std::move(out), {x}, backward);
}

template <typename T>
void backward_checked(const Tensor<T>& loss, const std::vector<Tensor<T>>& expected_leaves) {
  auto graph = Graph<T>::build(loss);
  graph.backward(loss);
  for (const auto& leaf : expected_leaves) {
    if (!leaf.requires_grad()) continue;
    bool reached = false;
    for (auto* n : graph.nodes())
      if (n == leaf.node()) {
        reached = true;
        break;
      }
    if (!reached) {
      std::cerr << "[tokenpose] warning: leaf " << shape_str(leaf.shape())
                << " is not reachable from the loss; grad left at zero\n";
      const_cast<Tensor<T>&>(leaf).zero_grad();
    }
  }
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a.values()[i]) - b.values()[i]));
  return m;
}

}  // namespace tokenpose

#endif
