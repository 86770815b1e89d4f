#pragma once

// Dense row-major matrices and a reverse-mode gradient tape.
//
// Every primitive records its output value on a Tape together with a closure
// that maps the output gradient onto its parents. Nodes that cannot reach a
// parameter carry no closure, so an inference-only tape costs the forward
// arithmetic and nothing more. All code is templated on the scalar so the
// same graph runs in float (training) and double (gradient checks).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scdnet/errors.hpp"

namespace scdnet {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
std::string shape_string(const Matrix<T>& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  return m.allFinite();
}

struct Var {
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  Var constant(Mat value) { return push(std::move(value), false, nullptr); }
  Var parameter(Mat value) { return push(std::move(value), true, nullptr); }

  // Records an op output. The closure is dropped when no parent needs a gradient.
  Var record(Mat value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }
  Var record(Mat value, std::span<const Var> parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Mat& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient from the most recent backward(); zeros if v did not feed the loss.
  Mat grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.has_grad) return n.grad;
    return Mat::Zero(n.value.rows(), n.value.cols());
  }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = delta;
      n.has_grad = true;
    } else {
      n.grad += delta;
    }
  }

  void backward(Var loss) {
    const Mat& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ShapeError("backward: loss must be scalar (1x1), got " + shape_string(lv));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad.resize(0, 0);
    }
    accumulate(loss, Mat::Ones(1, 1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Var push(Mat value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, false, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace ops {

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

template <typename T>
void require_row_vector(const char* op, const Matrix<T>& x, const Matrix<T>& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw ShapeError(std::string(op) + ": expected (1x" + std::to_string(x.cols()) +
                     ") row, got " + shape_string(row) + " for input " + shape_string(x));
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(av) + " vs " +
                     shape_string(bv));
  }
  Matrix<T> out = av * bv;
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  detail::require_same_shape("add", tape.value(a), tape.value(b));
  Matrix<T> out = tape.value(a) + tape.value(b);
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  detail::require_same_shape("sub", tape.value(a), tape.value(b));
  Matrix<T> out = tape.value(a) - tape.value(b);
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

// x + row, with the 1xC row broadcast over every row of x.
template <typename T>
Var add_row(Tape<T>& tape, Var x, Var row) {
  const auto& xv = tape.value(x);
  const auto& rv = tape.value(row);
  detail::require_row_vector("add_row", xv, rv);
  Matrix<T> out = xv.rowwise() + rv.row(0);
  return tape.record(std::move(out), {x, row}, [x, row](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  detail::require_same_shape("mul", tape.value(a), tape.value(b));
  Matrix<T> out = tape.value(a).cwiseProduct(tape.value(b));
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

// scale * x + shift
template <typename T>
Var affine(Tape<T>& tape, Var x, T scale, T shift = T(0)) {
  Matrix<T> out = (tape.value(x).array() * scale + shift).matrix();
  return tape.record(std::move(out), {x}, [x, scale](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, g * scale);
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T s) {
  return affine(tape, x, s, T(0));
}

// Logistic sigmoid, clamped to [eps, 1 - eps] so the result is strictly inside (0, 1)
// at the storage precision.
template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  constexpr T eps = std::numeric_limits<T>::epsilon();
  Matrix<T> out = tape.value(x).unaryExpr([eps](T v) {
    return std::clamp(detail::stable_sigmoid(v), eps, T(1) - eps);
  });
  const Var y{tape.size()};
  return tape.record(std::move(out), {x}, [x, y](Tape<T>& t, const Matrix<T>& g) {
    const auto& s = t.value(y).array();
    t.accumulate(x, (g.array() * s * (T(1) - s)).matrix());
  });
}

template <typename T>
Var tanh(Tape<T>& tape, Var x) {
  Matrix<T> out = tape.value(x).array().tanh().matrix();
  const Var y{tape.size()};
  return tape.record(std::move(out), {x}, [x, y](Tape<T>& t, const Matrix<T>& g) {
    const auto& s = t.value(y).array();
    t.accumulate(x, (g.array() * (T(1) - s * s)).matrix());
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Matrix<T> out = tape.value(x).cwiseMax(T(0));
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, (g.array() * (t.value(x).array() > T(0)).template cast<T>()).matrix());
  });
}

// x * sigmoid(x)
template <typename T>
Var swish(Tape<T>& tape, Var x) {
  Matrix<T> out = tape.value(x).unaryExpr([](T v) { return v * detail::stable_sigmoid(v); });
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> d = t.value(x).unaryExpr([](T v) {
      const T s = detail::stable_sigmoid(v);
      return s + v * s * (T(1) - s);
    });
    t.accumulate(x, g.cwiseProduct(d));
  });
}

// Natural log; inputs must be positive.
template <typename T>
Var log(Tape<T>& tape, Var x) {
  Matrix<T> out = tape.value(x).array().log().matrix();
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, g.cwiseQuotient(t.value(x)));
  });
}

template <typename T>
Var abs(Tape<T>& tape, Var x) {
  Matrix<T> out = tape.value(x).cwiseAbs();
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> sign = t.value(x).unaryExpr([](T v) { return T((v > T(0)) - (v < T(0))); });
    t.accumulate(x, g.cwiseProduct(sign));
  });
}

template <typename T>
Var square(Tape<T>& tape, Var x) {
  Matrix<T> out = tape.value(x).array().square().matrix();
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, (g.array() * t.value(x).array() * T(2)).matrix());
  });
}

// Elementwise clamp to [lo, hi]; the gradient is zero on and beyond the bounds.
template <typename T>
Var clamp(Tape<T>& tape, Var x, T lo, T hi) {
  Matrix<T> out = tape.value(x).cwiseMax(lo).cwiseMin(hi);
  return tape.record(std::move(out), {x}, [x, lo, hi](Tape<T>& t, const Matrix<T>& g) {
    const auto& xv = t.value(x).array();
    t.accumulate(x, (g.array() * ((xv > lo) && (xv < hi)).template cast<T>()).matrix());
  });
}

template <typename T>
Var softmax_rows(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  Matrix<T> out(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const T m = xv.row(r).maxCoeff();
    auto e = (xv.row(r).array() - m).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  const Var y{tape.size()};
  return tape.record(std::move(out), {x}, [x, y](Tape<T>& t, const Matrix<T>& g) {
    const auto& s = t.value(y);
    Eigen::Matrix<T, Eigen::Dynamic, 1> dot = g.cwiseProduct(s).rowwise().sum();
    Matrix<T> dx = s.cwiseProduct(g.colwise() - dot);
    t.accumulate(x, dx);
  });
}

// Row-wise layer normalization with learnable 1xC gain and bias.
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, T eps = T(1e-5)) {
  const auto& xv = tape.value(x);
  detail::require_row_vector("layer_norm", xv, tape.value(gain));
  detail::require_row_vector("layer_norm", xv, tape.value(bias));
  const Eigen::Index rows = xv.rows();
  const Eigen::Index cols = xv.cols();
  auto xhat = std::make_shared<Matrix<T>>(rows, cols);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = xv.row(r).template cast<double>();
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*inv_std)[static_cast<std::size_t>(r)] = static_cast<T>(is);
    xhat->row(r) = ((row.array() - mean) * is).matrix().template cast<T>();
  }
  Matrix<T> out =
      (xhat->array().rowwise() * tape.value(gain).row(0).array()).rowwise() +
      tape.value(bias).row(0).array();
  return tape.record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, cols](Tape<T>& t, const Matrix<T>& g) {
        if (t.requires_grad(gain)) t.accumulate(gain, g.cwiseProduct(*xhat).colwise().sum());
        if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
        if (!t.requires_grad(x)) return;
        Matrix<T> dxhat = g.array().rowwise() * t.value(gain).row(0).array();
        Matrix<T> dx(dxhat.rows(), cols);
        for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
          const T m1 = dxhat.row(r).mean();
          const T m2 = dxhat.row(r).cwiseProduct(xhat->row(r)).mean();
          dx.row(r) = ((dxhat.row(r).array() - m1 - xhat->row(r).array() * m2) *
                       (*inv_std)[static_cast<std::size_t>(r)])
                          .matrix();
        }
        t.accumulate(x, dx);
      });
}

// Depthwise 1-D convolution along rows (time) with same zero padding.
// x: TxC, kernel: KxC (K odd), bias: 1xC.
template <typename T>
Var depthwise_conv1d(Tape<T>& tape, Var x, Var kernel, Var bias) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(kernel);
  if (wv.cols() != xv.cols() || wv.rows() % 2 == 0) {
    throw ShapeError("depthwise_conv1d: kernel " + shape_string(wv) +
                     " must be odd-height with input width, input " + shape_string(xv));
  }
  detail::require_row_vector("depthwise_conv1d", xv, tape.value(bias));
  const Eigen::Index steps = xv.rows();
  const Eigen::Index k = wv.rows();
  const Eigen::Index pad = k / 2;
  // Output rows [t0, t0 + n) read input rows shifted by (tap - pad).
  auto window = [steps, pad](Eigen::Index tap, Eigen::Index& t0, Eigen::Index& n) {
    const Eigen::Index shift = tap - pad;
    t0 = std::max<Eigen::Index>(0, -shift);
    const Eigen::Index t1 = std::min<Eigen::Index>(steps, steps - shift);
    n = std::max<Eigen::Index>(0, t1 - t0);
  };
  Matrix<T> out = Matrix<T>::Zero(steps, xv.cols());
  out.rowwise() += tape.value(bias).row(0);
  for (Eigen::Index tap = 0; tap < k; ++tap) {
    Eigen::Index t0, n;
    window(tap, t0, n);
    if (n == 0) continue;
    out.middleRows(t0, n).array() +=
        xv.middleRows(t0 + tap - pad, n).array().rowwise() * wv.row(tap).array();
  }
  return tape.record(
      std::move(out), {x, kernel, bias},
      [x, kernel, bias, k, pad, window](Tape<T>& t, const Matrix<T>& g) {
        const auto& xv = t.value(x);
        const auto& wv = t.value(kernel);
        if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
        const bool need_x = t.requires_grad(x);
        const bool need_w = t.requires_grad(kernel);
        Matrix<T> dx;
        if (need_x) dx = Matrix<T>::Zero(xv.rows(), xv.cols());
        Matrix<T> dw;
        if (need_w) dw = Matrix<T>::Zero(wv.rows(), wv.cols());
        for (Eigen::Index tap = 0; tap < k; ++tap) {
          Eigen::Index t0, n;
          window(tap, t0, n);
          if (n == 0) continue;
          const Eigen::Index src = t0 + tap - pad;
          if (need_x) {
            dx.middleRows(src, n).array() +=
                g.middleRows(t0, n).array().rowwise() * wv.row(tap).array();
          }
          if (need_w) {
            dw.row(tap) =
                g.middleRows(t0, n).cwiseProduct(xv.middleRows(src, n)).colwise().sum();
          }
        }
        if (need_x) t.accumulate(x, dx);
        if (need_w) t.accumulate(kernel, dw);
      });
}

// Multi-head scaled dot-product self-attention over rows of q, k, v (all TxC).
// Heads split the columns evenly.
template <typename T>
Var attention(Tape<T>& tape, Var q, Var k, Var v, int heads = 1) {
  const auto& qv = tape.value(q);
  const auto& kv = tape.value(k);
  const auto& vv = tape.value(v);
  detail::require_same_shape("attention", qv, kv);
  detail::require_same_shape("attention", qv, vv);
  if (heads < 1 || qv.cols() % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(qv.cols()) +
                     " not divisible by heads=" + std::to_string(heads));
  }
  const Eigen::Index dh = qv.cols() / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<Matrix<T>>>(static_cast<std::size_t>(heads));
  Matrix<T> out(qv.rows(), qv.cols());
  for (int h = 0; h < heads; ++h) {
    Matrix<T> s = (qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose()) * scale;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const T m = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - m).exp().matrix();
      s.row(r) /= s.row(r).sum();
    }
    out.middleCols(h * dh, dh) = s * vv.middleCols(h * dh, dh);
    (*probs)[static_cast<std::size_t>(h)] = std::move(s);
  }
  return tape.record(
      std::move(out), {q, k, v}, [q, k, v, heads, dh, scale, probs](Tape<T>& t, const Matrix<T>& g) {
        const auto& qv = t.value(q);
        const auto& kv = t.value(k);
        const auto& vv = t.value(v);
        Matrix<T> dq = Matrix<T>::Zero(qv.rows(), qv.cols());
        Matrix<T> dk = Matrix<T>::Zero(kv.rows(), kv.cols());
        Matrix<T> dv = Matrix<T>::Zero(vv.rows(), vv.cols());
        for (int h = 0; h < heads; ++h) {
          const Matrix<T>& p = (*probs)[static_cast<std::size_t>(h)];
          const auto go = g.middleCols(h * dh, dh);
          dv.middleCols(h * dh, dh) = p.transpose() * go;
          Matrix<T> dp = go * vv.middleCols(h * dh, dh).transpose();
          Eigen::Matrix<T, Eigen::Dynamic, 1> dot = dp.cwiseProduct(p).rowwise().sum();
          Matrix<T> ds = p.cwiseProduct(dp.colwise() - dot) * scale;
          dq.middleCols(h * dh, dh) = ds * kv.middleCols(h * dh, dh);
          dk.middleCols(h * dh, dh) = ds.transpose() * qv.middleCols(h * dh, dh);
        }
        t.accumulate(q, dq);
        t.accumulate(k, dk);
        t.accumulate(v, dv);
      });
}

}  // namespace ops

inline constexpr double kCosineNormFloor = 1e-8;

namespace ops {

// Row-wise cosine similarity of two RxC matrices, returned as Rx1. Norms are
// floored at 1e-8 so zero rows give similarity 0.
template <typename T>
Var cosine_rows(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require_same_shape("cosine_rows", av, bv);
  const Eigen::Index rows = av.rows();
  auto norms = std::make_shared<std::vector<std::pair<double, double>>>(
      static_cast<std::size_t>(rows));
  Matrix<T> out(rows, 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto ar = av.row(r).template cast<double>();
    const auto br = bv.row(r).template cast<double>();
    const double na = std::max(ar.norm(), kCosineNormFloor);
    const double nb = std::max(br.norm(), kCosineNormFloor);
    (*norms)[static_cast<std::size_t>(r)] = {na, nb};
    out(r, 0) = static_cast<T>(ar.dot(br) / (na * nb));
  }
  const Var y{tape.size()};
  return tape.record(std::move(out), {a, b}, [a, b, y, norms](Tape<T>& t, const Matrix<T>& g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    const auto& c = t.value(y);
    Matrix<T> da(av.rows(), av.cols());
    Matrix<T> db(bv.rows(), bv.cols());
    for (Eigen::Index r = 0; r < av.rows(); ++r) {
      const auto [na, nb] = (*norms)[static_cast<std::size_t>(r)];
      const T gr = g(r, 0);
      const T cr = c(r, 0);
      // Inside the floor the norm is a constant and only the dot term remains.
      const T ka = na > kCosineNormFloor ? cr / static_cast<T>(na * na) : T(0);
      const T kb = nb > kCosineNormFloor ? cr / static_cast<T>(nb * nb) : T(0);
      const T inv = static_cast<T>(1.0 / (na * nb));
      da.row(r) = gr * (bv.row(r) * inv - av.row(r) * ka);
      db.row(r) = gr * (av.row(r) * inv - bv.row(r) * kb);
    }
    if (t.requires_grad(a)) t.accumulate(a, da);
    if (t.requires_grad(b)) t.accumulate(b, db);
  });
}

template <typename T>
Var gather_rows(Tape<T>& tape, Var x, std::vector<Eigen::Index> index) {
  const auto& xv = tape.value(x);
  Matrix<T> out(static_cast<Eigen::Index>(index.size()), xv.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= xv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(index[r]) + " outside " +
                       shape_string(xv));
    }
    out.row(static_cast<Eigen::Index>(r)) = xv.row(index[r]);
  }
  auto idx = std::make_shared<std::vector<Eigen::Index>>(std::move(index));
  return tape.record(std::move(out), {x}, [x, idx](Tape<T>& t, const Matrix<T>& g) {
    const auto& xv = t.value(x);
    Matrix<T> dx = Matrix<T>::Zero(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < idx->size(); ++r) {
      dx.row((*idx)[r]) += g.row(static_cast<Eigen::Index>(r));
    }
    t.accumulate(x, dx);
  });
}

// Stacks a on top of b.
template <typename T>
Var vconcat(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.cols() != bv.cols()) {
    throw ShapeError("vconcat: column counts differ " + shape_string(av) + " vs " +
                     shape_string(bv));
  }
  Matrix<T> out(av.rows() + bv.rows(), av.cols());
  out.topRows(av.rows()) = av;
  out.bottomRows(bv.rows()) = bv;
  const Eigen::Index split = av.rows();
  return tape.record(std::move(out), {a, b}, [a, b, split](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g.topRows(split));
    t.accumulate(b, g.bottomRows(g.rows() - split));
  });
}

template <typename T>
Var slice_cols(Tape<T>& tape, Var x, Eigen::Index first, Eigen::Index count) {
  const auto& xv = tape.value(x);
  if (first < 0 || count < 1 || first + count > xv.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") outside " + shape_string(xv));
  }
  Matrix<T> out = xv.middleCols(first, count);
  return tape.record(std::move(out), {x}, [x, first, count](Tape<T>& t, const Matrix<T>& g) {
    const auto& xv = t.value(x);
    Matrix<T> dx = Matrix<T>::Zero(xv.rows(), xv.cols());
    dx.middleCols(first, count) = g;
    t.accumulate(x, dx);
  });
}

// Sum of all entries as a 1x1, accumulated in double.
template <typename T>
Var sum(Tape<T>& tape, Var x) {
  Matrix<T> out(1, 1);
  out(0, 0) = static_cast<T>(tape.value(x).template cast<double>().sum());
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Matrix<T>& g) {
    const auto& xv = t.value(x);
    t.accumulate(x, Matrix<T>::Constant(xv.rows(), xv.cols(), g(0, 0)));
  });
}

template <typename T>
Var mean(Tape<T>& tape, Var x) {
  const auto n = static_cast<T>(tape.value(x).size());
  return scale(tape, sum(tape, x), T(1) / n);
}

// sum_l weights(0, l) * layers[l]; weights is 1xL.
template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> layers, Var weights) {
  const auto& wv = tape.value(weights);
  if (layers.empty() || wv.rows() != 1 || wv.cols() != static_cast<Eigen::Index>(layers.size())) {
    throw ShapeError("weighted_sum: weights " + shape_string(wv) + " for " +
                     std::to_string(layers.size()) + " layers");
  }
  const auto& first = tape.value(layers[0]);
  Matrix<T> out = Matrix<T>::Zero(first.rows(), first.cols());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& xl = tape.value(layers[l]);
    detail::require_same_shape("weighted_sum", first, xl);
    out += wv(0, static_cast<Eigen::Index>(l)) * xl;
  }
  std::vector<Var> parents(layers.begin(), layers.end());
  parents.push_back(weights);
  auto ids = std::make_shared<std::vector<Var>>(layers.begin(), layers.end());
  return tape.record(std::move(out), std::span<const Var>(parents),
                     [ids, weights](Tape<T>& t, const Matrix<T>& g) {
                       const auto& wv = t.value(weights);
                       Matrix<T> dw(1, wv.cols());
                       for (std::size_t l = 0; l < ids->size(); ++l) {
                         const Var xl = (*ids)[l];
                         const auto li = static_cast<Eigen::Index>(l);
                         dw(0, li) = static_cast<T>(
                             g.cwiseProduct(t.value(xl)).template cast<double>().sum());
                         if (t.requires_grad(xl)) t.accumulate(xl, g * wv(0, li));
                       }
                       t.accumulate(weights, dw);
                     });
}

}  // namespace ops
}  // namespace scdnet
