#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "crseg/numerics/tape.hpp"
#include "crseg/numerics/tensor.hpp"

// Differentiable operations over rank-2 tensors (rows x channels).
//
// Every op validates shapes eagerly, records its result on the operands'
// tape and, when any operand needs a gradient, a backward rule that adds
// into the operands' gradient buffers.

namespace crseg::numerics {

namespace detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMajor<T>> view(const BasicTensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Eigen::Map<RowMajor<T>> view(std::vector<T>& g, std::size_t rows, std::size_t cols) {
  return {g.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <typename T>
BasicTape<T>& same_tape(BasicVar<T> a, BasicVar<T> b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
  return *a.tape;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

inline void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(s));
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename T, typename F, typename D>
BasicVar<T> unary(BasicVar<T> a, const char* name, F f, D dfdx) {
  auto& tape = *a.tape;
  const auto& x = a.value();
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id;
  return tape.record(std::move(out), name, a.requires_grad(), [ia, dfdx](BasicTape<T>& t, std::size_t self) {
    const auto& xv = t.value(ia);
    const auto& yv = t.value(self);
    const auto& go = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace detail

// --- linear algebra -------------------------------------------------------

/// [m x k] * [k x n] -> [m x n]
template <typename T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b) {
  auto& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank2(av.shape(), "matmul");
  detail::require_rank2(bv.shape(), "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + to_string(av.shape()) + " * " +
                     to_string(bv.shape()));
  }
  BasicTensor<T> out = BasicTensor<T>::matrix(av.rows(), bv.cols());
  detail::view(out.storage(), av.rows(), bv.cols()).noalias() = detail::view(av) * detail::view(bv);
  const std::size_t ia = a.id, ib = b.id;
  const bool need = a.requires_grad() || b.requires_grad();
  return tape.record(std::move(out), "matmul", need, [ia, ib](BasicTape<T>& t, std::size_t self) {
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    const auto& C = t.value(self);
    auto go = detail::view(t.grad(self), C.rows(), C.cols());
    if (t.requires_grad(ia)) detail::view(t.grad(ia), A.rows(), A.cols()).noalias() += go * detail::view(B).transpose();
    if (t.requires_grad(ib)) detail::view(t.grad(ib), B.rows(), B.cols()).noalias() += detail::view(A).transpose() * go;
  });
}

/// [m x k] * [n x k]^T -> [m x n]
template <typename T>
BasicVar<T> matmul_nt(BasicVar<T> a, BasicVar<T> b) {
  auto& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank2(av.shape(), "matmul_nt");
  detail::require_rank2(bv.shape(), "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_nt: inner dimensions disagree, " + to_string(av.shape()) + " * " +
                     to_string(bv.shape()) + "^T");
  }
  BasicTensor<T> out = BasicTensor<T>::matrix(av.rows(), bv.rows());
  detail::view(out.storage(), av.rows(), bv.rows()).noalias() = detail::view(av) * detail::view(bv).transpose();
  const std::size_t ia = a.id, ib = b.id;
  const bool need = a.requires_grad() || b.requires_grad();
  return tape.record(std::move(out), "matmul_nt", need, [ia, ib](BasicTape<T>& t, std::size_t self) {
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    const auto& C = t.value(self);
    auto go = detail::view(t.grad(self), C.rows(), C.cols());
    if (t.requires_grad(ia)) detail::view(t.grad(ia), A.rows(), A.cols()).noalias() += go * detail::view(B);
    if (t.requires_grad(ib)) detail::view(t.grad(ib), B.rows(), B.cols()).noalias() += go.transpose() * detail::view(A);
  });
}

template <typename T>
BasicVar<T> transpose(BasicVar<T> a) {
  const auto& av = a.value();
  detail::require_rank2(av.shape(), "transpose");
  BasicTensor<T> out = BasicTensor<T>::matrix(av.cols(), av.rows());
  detail::view(out.storage(), av.cols(), av.rows()) = detail::view(av).transpose();
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), "transpose", a.requires_grad(), [ia](BasicTape<T>& t, std::size_t self) {
    const auto& A = t.value(ia);
    detail::view(t.grad(ia), A.rows(), A.cols()) += detail::view(t.grad(self), A.cols(), A.rows()).transpose();
  });
}

// --- elementwise binary ---------------------------------------------------

template <typename T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
  auto& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), "add", a.requires_grad() || b.requires_grad(),
                     [ia, ib](BasicTape<T>& t, std::size_t self) {
                       const auto& go = t.grad(self);
                       for (std::size_t in : {ia, ib}) {
                         if (!t.requires_grad(in)) continue;
                         auto& g = t.grad(in);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
                       }
                     });
}

template <typename T>
BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b) {
  auto& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), "sub", a.requires_grad() || b.requires_grad(),
                     [ia, ib](BasicTape<T>& t, std::size_t self) {
                       const auto& go = t.grad(self);
                       if (t.requires_grad(ia)) {
                         auto& g = t.grad(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
                       }
                       if (t.requires_grad(ib)) {
                         auto& g = t.grad(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go[i];
                       }
                     });
}

/// Hadamard product.
template <typename T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
  auto& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), "mul", a.requires_grad() || b.requires_grad(),
                     [ia, ib](BasicTape<T>& t, std::size_t self) {
                       const auto& go = t.grad(self);
                       const auto& av = t.value(ia);
                       const auto& bv = t.value(ib);
                       if (t.requires_grad(ia)) {
                         auto& g = t.grad(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bv[i];
                       }
                       if (t.requires_grad(ib)) {
                         auto& g = t.grad(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * av[i];
                       }
                     });
}

template <typename T>
BasicVar<T> div(BasicVar<T> a, BasicVar<T> b) {
  auto& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "div");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), "div", a.requires_grad() || b.requires_grad(),
                     [ia, ib](BasicTape<T>& t, std::size_t self) {
                       const auto& go = t.grad(self);
                       const auto& bv = t.value(ib);
                       const auto& yv = t.value(self);
                       if (t.requires_grad(ia)) {
                         auto& g = t.grad(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] / bv[i];
                       }
                       if (t.requires_grad(ib)) {
                         auto& g = t.grad(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go[i] * yv[i] / bv[i];
                       }
                     });
}

// --- row / column broadcasting --------------------------------------------

/// a[m x n] + b[1 x n] broadcast over rows (bias add).
template <typename T>
BasicVar<T> add_row(BasicVar<T> a, BasicVar<T> b) {
  auto& tape = detail::same_tape(a, b);
  detail::require_rank2(a.shape(), "add_row");
  if (b.shape() != Shape{1, a.cols()}) {
    throw ShapeError("add_row: expected row vector [1 x " + std::to_string(a.cols()) + "], got " +
                     to_string(b.shape()));
  }
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) += bv[c];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), "add_row", a.requires_grad() || b.requires_grad(),
                     [ia, ib, m, n](BasicTape<T>& t, std::size_t self) {
                       const auto& go = t.grad(self);
                       if (t.requires_grad(ia)) {
                         auto& g = t.grad(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
                       }
                       if (t.requires_grad(ib)) {
                         auto& g = t.grad(ib);
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) g[c] += go[r * n + c];
                       }
                     });
}

/// a[m x n] * g[1 x n] broadcast over rows (per-channel scaling).
template <typename T>
BasicVar<T> mul_row(BasicVar<T> a, BasicVar<T> b) {
  auto& tape = detail::same_tape(a, b);
  detail::require_rank2(a.shape(), "mul_row");
  if (b.shape() != Shape{1, a.cols()}) {
    throw ShapeError("mul_row: expected row vector [1 x " + std::to_string(a.cols()) + "], got " +
                     to_string(b.shape()));
  }
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) *= bv[c];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), "mul_row", a.requires_grad() || b.requires_grad(),
                     [ia, ib, m, n](BasicTape<T>& t, std::size_t self) {
                       const auto& go = t.grad(self);
                       const auto& av = t.value(ia);
                       const auto& bv = t.value(ib);
                       if (t.requires_grad(ia)) {
                         auto& g = t.grad(ia);
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) g[r * n + c] += go[r * n + c] * bv[c];
                       }
                       if (t.requires_grad(ib)) {
                         auto& g = t.grad(ib);
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) g[c] += go[r * n + c] * av[r * n + c];
                       }
                     });
}

/// a[m x n] * s[m x 1] broadcast over columns (per-row masking).
template <typename T>
BasicVar<T> mul_col(BasicVar<T> a, BasicVar<T> b) {
  auto& tape = detail::same_tape(a, b);
  detail::require_rank2(a.shape(), "mul_col");
  if (b.shape() != Shape{a.rows(), 1}) {
    throw ShapeError("mul_col: expected column vector [" + std::to_string(a.rows()) + " x 1], got " +
                     to_string(b.shape()));
  }
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) *= bv[r];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), "mul_col", a.requires_grad() || b.requires_grad(),
                     [ia, ib, m, n](BasicTape<T>& t, std::size_t self) {
                       const auto& go = t.grad(self);
                       const auto& av = t.value(ia);
                       const auto& bv = t.value(ib);
                       if (t.requires_grad(ia)) {
                         auto& g = t.grad(ia);
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) g[r * n + c] += go[r * n + c] * bv[r];
                       }
                       if (t.requires_grad(ib)) {
                         auto& g = t.grad(ib);
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) g[r] += go[r * n + c] * av[r * n + c];
                       }
                     });
}

// --- scalar and elementwise unary -----------------------------------------

template <typename T>
BasicVar<T> scale(BasicVar<T> a, T s) {
  return detail::unary(a, "scale", [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
BasicVar<T> add_scalar(BasicVar<T> a, T s) {
  return detail::unary(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
BasicVar<T> relu(BasicVar<T> a) {
  return detail::unary(a, "relu", [](T x) { return x > T(0) ? x : T(0); },
                       [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicVar<T> sigmoid(BasicVar<T> a) {
  return detail::unary(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicVar<T> log(BasicVar<T> a) {
  return detail::unary(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

/// x^p for a fixed exponent p >= 0 (used with non-negative bases).
template <typename T>
BasicVar<T> pow_scalar(BasicVar<T> a, T p) {
  return detail::unary(
      a, "pow_scalar", [p](T x) { return p == T(0) ? T(1) : std::pow(x, p); },
      [p](T x, T) {
        if (p == T(0)) return T(0);
        if (x == T(0)) return p == T(1) ? T(1) : T(0);
        return p * std::pow(x, p - T(1));
      });
}

/// max(x, lo); the gradient is blocked where the floor is active.
template <typename T>
BasicVar<T> clamp_min(BasicVar<T> a, T lo) {
  return detail::unary(a, "clamp_min", [lo](T x) { return x < lo ? lo : x; },
                       [lo](T x, T) { return x < lo ? T(0) : T(1); });
}

/// Restricts values to [0, 1]. Not differentiated: the result is a constant.
template <typename T>
BasicVar<T> clamp01(BasicVar<T> a) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.data()) v = std::clamp(v, T(0), T(1));
  return a.tape->constant(std::move(out));
}

// --- reductions -----------------------------------------------------------

template <typename T>
BasicVar<T> sum(BasicVar<T> a) {
  const auto& x = a.value();
  T s = T(0);
  for (T v : x.data()) s += v;
  const std::size_t ia = a.id;
  return a.tape->record(BasicTensor<T>::scalar(s), "sum", a.requires_grad(), [ia](BasicTape<T>& t, std::size_t self) {
    const T go = t.grad(self)[0];
    for (auto& g : t.grad(ia)) g += go;
  });
}

template <typename T>
BasicVar<T> mean(BasicVar<T> a) {
  const auto n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

/// Column sums: [m x n] -> [1 x n].
template <typename T>
BasicVar<T> sum_rows(BasicVar<T> a) {
  const auto& x = a.value();
  detail::require_rank2(x.shape(), "sum_rows");
  const std::size_t m = x.rows(), n = x.cols();
  BasicTensor<T> out = BasicTensor<T>::matrix(1, n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += x(r, c);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), "sum_rows", a.requires_grad(), [ia, m, n](BasicTape<T>& t, std::size_t self) {
    const auto& go = t.grad(self);
    auto& g = t.grad(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += go[c];
  });
}

// --- softmax ---------------------------------------------------------------

/// Row-wise softmax with max subtraction.
template <typename T>
BasicVar<T> softmax_rows(BasicVar<T> a) {
  const auto& x = a.value();
  detail::require_rank2(x.shape(), "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  BasicTensor<T> out = BasicTensor<T>::matrix(m, n);
  for (std::size_t r = 0; r < m; ++r) {
    const T* in = x.data().data() + r * n;
    T* o = out.data().data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T s = T(0);
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] - mx);
      s += o[c];
    }
    const T inv = T(1) / s;
    for (std::size_t c = 0; c < n; ++c) o[c] *= inv;
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), "softmax_rows", a.requires_grad(),
                        [ia, m, n](BasicTape<T>& t, std::size_t self) {
                          const auto& y = t.value(self);
                          const auto& go = t.grad(self);
                          auto& g = t.grad(ia);
                          for (std::size_t r = 0; r < m; ++r) {
                            const T* yr = y.data().data() + r * n;
                            const T* gr = go.data() + r * n;
                            T dot = T(0);
                            for (std::size_t c = 0; c < n; ++c) dot += yr[c] * gr[c];
                            for (std::size_t c = 0; c < n; ++c) g[r * n + c] += yr[c] * (gr[c] - dot);
                          }
                        });
}

// --- structural -------------------------------------------------------------

/// Concatenation along the last axis: [m x n1], [m x n2], ... -> [m x sum n].
template <typename T>
BasicVar<T> concat_cols(const std::vector<BasicVar<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  auto& tape = *parts.front().tape;
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  bool need = false;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    detail::require_rank2(p.shape(), "concat_cols");
    if (p.rows() != m) {
      throw ShapeError("concat_cols: row count mismatch " + to_string(parts.front().shape()) + " vs " +
                       to_string(p.shape()));
    }
    widths.push_back(p.cols());
    ids.push_back(p.id);
    total += p.cols();
    need = need || p.requires_grad();
  }
  BasicTensor<T> out = BasicTensor<T>::matrix(m, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(v.data().data() + r * widths[k], widths[k], out.data().data() + r * total + offset);
    offset += widths[k];
  }
  return tape.record(std::move(out), "concat_cols", need,
                     [ids, widths, m, total](BasicTape<T>& t, std::size_t self) {
                       const auto& go = t.grad(self);
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (t.requires_grad(ids[k])) {
                           auto& g = t.grad(ids[k]);
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += go[r * total + off + c];
                         }
                         off += widths[k];
                       }
                     });
}

/// Gathers rows by index; the backward rule scatter-adds.
template <typename T>
BasicVar<T> take_rows(BasicVar<T> a, std::vector<std::size_t> rows) {
  const auto& x = a.value();
  detail::require_rank2(x.shape(), "take_rows");
  const std::size_t n = x.cols();
  BasicTensor<T> out = BasicTensor<T>::matrix(rows.size(), n);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= x.rows()) {
      throw ShapeError("take_rows: row " + std::to_string(rows[k]) + " out of range for " + to_string(x.shape()));
    }
    std::copy_n(x.data().data() + rows[k] * n, n, out.data().data() + k * n);
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), "take_rows", a.requires_grad(),
                        [ia, rows = std::move(rows), n](BasicTape<T>& t, std::size_t self) {
                          const auto& go = t.grad(self);
                          auto& g = t.grad(ia);
                          for (std::size_t k = 0; k < rows.size(); ++k)
                            for (std::size_t c = 0; c < n; ++c) g[rows[k] * n + c] += go[k * n + c];
                        });
}

/// Inverse of take_rows: row k of `a` lands in row rows[k] of a zero matrix with `total` rows.
template <typename T>
BasicVar<T> scatter_rows(BasicVar<T> a, std::vector<std::size_t> rows, std::size_t total) {
  const auto& x = a.value();
  detail::require_rank2(x.shape(), "scatter_rows");
  if (rows.size() != x.rows()) {
    throw ShapeError("scatter_rows: " + std::to_string(rows.size()) + " indices for " + to_string(x.shape()));
  }
  const std::size_t n = x.cols();
  BasicTensor<T> out = BasicTensor<T>::matrix(total, n);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= total) throw ShapeError("scatter_rows: row " + std::to_string(rows[k]) + " out of range");
    std::copy_n(x.data().data() + k * n, n, out.data().data() + rows[k] * n);
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), "scatter_rows", a.requires_grad(),
                        [ia, rows = std::move(rows), n](BasicTape<T>& t, std::size_t self) {
                          const auto& go = t.grad(self);
                          auto& g = t.grad(ia);
                          for (std::size_t k = 0; k < rows.size(); ++k)
                            for (std::size_t c = 0; c < n; ++c) g[k * n + c] += go[rows[k] * n + c];
                        });
}

/// Gathers whole columns: out[:, k] = a[:, cols[k]].
template <typename T>
BasicVar<T> take_cols(BasicVar<T> a, std::vector<std::size_t> cols) {
  const auto& x = a.value();
  detail::require_rank2(x.shape(), "take_cols");
  const std::size_t m = x.rows(), n = x.cols(), k = cols.size();
  for (auto c : cols)
    if (c >= n) throw ShapeError("take_cols: column " + std::to_string(c) + " out of range for " + to_string(x.shape()));
  BasicTensor<T> out = BasicTensor<T>::matrix(m, k);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x[r * n + cols[j]];
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), "take_cols", a.requires_grad(),
                        [ia, cols = std::move(cols), m, n](BasicTape<T>& t, std::size_t self) {
                          const auto& go = t.grad(self);
                          auto& g = t.grad(ia);
                          const std::size_t k = cols.size();
                          for (std::size_t r = 0; r < m; ++r)
                            for (std::size_t j = 0; j < k; ++j) g[r * n + cols[j]] += go[r * k + j];
                        });
}

/// Picks one column per row: out[r] = a[r, cols[r]], shape [m x 1].
template <typename T>
BasicVar<T> pick_cols(BasicVar<T> a, std::vector<std::size_t> cols) {
  const auto& x = a.value();
  detail::require_rank2(x.shape(), "pick_cols");
  if (cols.size() != x.rows()) {
    throw ShapeError("pick_cols: " + std::to_string(cols.size()) + " indices for " + to_string(x.shape()));
  }
  const std::size_t n = x.cols();
  BasicTensor<T> out = BasicTensor<T>::matrix(x.rows(), 1);
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= n) throw ShapeError("pick_cols: column " + std::to_string(cols[r]) + " out of range");
    out[r] = x(r, cols[r]);
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), "pick_cols", a.requires_grad(),
                        [ia, cols = std::move(cols), n](BasicTape<T>& t, std::size_t self) {
                          const auto& go = t.grad(self);
                          auto& g = t.grad(ia);
                          for (std::size_t r = 0; r < cols.size(); ++r) g[r * n + cols[r]] += go[r];
                        });
}

/**
 * Folds each 2x2 spatial block into channels.
 *
 * Input rows are pixels of an h x w grid in row-major order. Output row
 * (y, x) of the (h/2) x (w/2) grid holds the four source pixels ordered
 * (0,0), (0,1), (1,0), (1,1), each contributing c consecutive channels.
 */
template <typename T>
BasicVar<T> space_to_depth(BasicVar<T> a, std::size_t h, std::size_t w) {
  const auto& x = a.value();
  detail::require_rank2(x.shape(), "space_to_depth");
  if (x.rows() != h * w || h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("space_to_depth: " + to_string(x.shape()) + " is not an even " + std::to_string(h) + "x" +
                     std::to_string(w) + " grid");
  }
  const std::size_t c = x.cols(), oh = h / 2, ow = w / 2, oc = 4 * c;
  BasicTensor<T> out = BasicTensor<T>::matrix(oh * ow, oc);
  auto source_row = [w](std::size_t oy, std::size_t ox, std::size_t k) {
    return (2 * oy + k / 2) * w + 2 * ox + k % 2;
  };
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t k = 0; k < 4; ++k)
        std::copy_n(x.data().data() + source_row(oy, ox, k) * c, c,
                    out.data().data() + (oy * ow + ox) * oc + k * c);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), "space_to_depth", a.requires_grad(),
                        [ia, oh, ow, c, oc, source_row](BasicTape<T>& t, std::size_t self) {
                          const auto& go = t.grad(self);
                          auto& g = t.grad(ia);
                          for (std::size_t oy = 0; oy < oh; ++oy)
                            for (std::size_t ox = 0; ox < ow; ++ox)
                              for (std::size_t k = 0; k < 4; ++k) {
                                const std::size_t src = source_row(oy, ox, k) * c;
                                const std::size_t dst = (oy * ow + ox) * oc + k * c;
                                for (std::size_t j = 0; j < c; ++j) g[src + j] += go[dst + j];
                              }
                        });
}

namespace detail {

// Half-pixel-centred linear interpolation taps along one axis.
struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_hi;
};

inline Taps linear_taps(std::size_t in, std::size_t out) {
  Taps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.w_hi.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps.lo[i] = lo;
    taps.hi[i] = hi;
    taps.w_hi[i] = hi == lo ? 0.0 : src - static_cast<double>(lo);
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize of an h x w grid of feature rows to oh x ow.
/// Each output is a convex combination of inputs, so row sums of
/// probability maps are preserved.
template <typename T>
BasicVar<T> upsample_bilinear(BasicVar<T> a, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) {
  const auto& x = a.value();
  detail::require_rank2(x.shape(), "upsample_bilinear");
  if (x.rows() != h * w || h == 0 || w == 0) {
    throw ShapeError("upsample_bilinear: " + to_string(x.shape()) + " is not a " + std::to_string(h) + "x" +
                     std::to_string(w) + " grid");
  }
  const std::size_t c = x.cols();
  auto ty = detail::linear_taps(h, oh);
  auto tx = detail::linear_taps(w, ow);
  BasicTensor<T> out = BasicTensor<T>::matrix(oh * ow, c);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const T wy = static_cast<T>(ty.w_hi[oy]);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const T wx = static_cast<T>(tx.w_hi[ox]);
      const T* p00 = x.data().data() + (ty.lo[oy] * w + tx.lo[ox]) * c;
      const T* p01 = x.data().data() + (ty.lo[oy] * w + tx.hi[ox]) * c;
      const T* p10 = x.data().data() + (ty.hi[oy] * w + tx.lo[ox]) * c;
      const T* p11 = x.data().data() + (ty.hi[oy] * w + tx.hi[ox]) * c;
      T* o = out.data().data() + (oy * ow + ox) * c;
      const T w00 = (T(1) - wy) * (T(1) - wx), w01 = (T(1) - wy) * wx, w10 = wy * (T(1) - wx), w11 = wy * wx;
      for (std::size_t j = 0; j < c; ++j) o[j] = w00 * p00[j] + w01 * p01[j] + w10 * p10[j] + w11 * p11[j];
    }
  }
  const std::size_t ia = a.id;
  return a.tape->record(
      std::move(out), "upsample_bilinear", a.requires_grad(),
      [ia, w, oh, ow, c, ty = std::move(ty), tx = std::move(tx)](BasicTape<T>& t, std::size_t self) {
        const auto& go = t.grad(self);
        auto& g = t.grad(ia);
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const T wy = static_cast<T>(ty.w_hi[oy]);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const T wx = static_cast<T>(tx.w_hi[ox]);
            const T w00 = (T(1) - wy) * (T(1) - wx), w01 = (T(1) - wy) * wx, w10 = wy * (T(1) - wx), w11 = wy * wx;
            const T* gr = go.data() + (oy * ow + ox) * c;
            T* g00 = g.data() + (ty.lo[oy] * w + tx.lo[ox]) * c;
            T* g01 = g.data() + (ty.lo[oy] * w + tx.hi[ox]) * c;
            T* g10 = g.data() + (ty.hi[oy] * w + tx.lo[ox]) * c;
            T* g11 = g.data() + (ty.hi[oy] * w + tx.hi[ox]) * c;
            for (std::size_t j = 0; j < c; ++j) {
              g00[j] += w00 * gr[j];
              g01[j] += w01 * gr[j];
              g10[j] += w10 * gr[j];
              g11[j] += w11 * gr[j];
            }
          }
        }
      });
}

}  // namespace crseg::numerics
