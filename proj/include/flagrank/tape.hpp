#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <utility>
#include <vector>

#include "flagrank/error.hpp"
#include "flagrank/numkernel.hpp"

namespace flagrank {

// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
};

// Reverse-mode differentiation over the fixed operation set the models need.
// Nodes are appended in evaluation order, so a reverse sweep is a valid
// topological order. Gradients are only propagated into nodes that depend on
// a parameter.
class Tape {
 public:
  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }
  Var parameter(Matrix value) { return push(std::move(value), true, nullptr); }

  const Matrix& value(Var v) const { return node(v).value; }

  const Matrix& grad(Var v) const {
    require(swept_, ErrorKind::state, "tape: gradients requested before backward()");
    return node(v).grad;
  }

  bool tracked(Var v) const { return node(v).tracked; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // x W^T + b
  Var affine(Var x, Var W, Var b) {
    Matrix y = flagrank::affine(value(x), value(W), value(b));
    return push(std::move(y), any_tracked({x, W, b}), [x, W, b](Tape& t, std::size_t self) {
      const Matrix& dy = t.nodes_[self].grad;
      const Matrix& X = t.value(x);
      const Matrix& Wm = t.value(W);
      const std::size_t n = X.rows(), in = Wm.cols(), out = Wm.rows();
      if (t.tracked(x)) {
        Matrix& dx = t.nodes_[x.id].grad;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out; ++o) {
            const double g = dy(i, o);
            if (g == 0.0) continue;
            const double* w = Wm.row(o).data();
            double* d = dx.row(i).data();
            for (std::size_t k = 0; k < in; ++k) d[k] += g * w[k];
          }
      }
      if (t.tracked(W)) {
        Matrix& dW = t.nodes_[W.id].grad;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out; ++o) {
            const double g = dy(i, o);
            if (g == 0.0) continue;
            const double* xr = X.row(i).data();
            double* d = dW.row(o).data();
            for (std::size_t k = 0; k < in; ++k) d[k] += g * xr[k];
          }
      }
      if (t.tracked(b)) {
        Matrix& db = t.nodes_[b.id].grad;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out; ++o) db(0, o) += dy(i, o);
      }
    });
  }

  Var sigmoid(Var x) {
    Matrix y = flagrank::sigmoid(value(x));
    return push(std::move(y), tracked(x), [x](Tape& t, std::size_t self) {
      if (!t.tracked(x)) return;
      const auto& dy = t.nodes_[self].grad.values();
      const auto& y = t.nodes_[self].value.values();
      auto& dx = t.nodes_[x.id].grad.values();
      for (std::size_t j = 0; j < y.size(); ++j) dx[j] += dy[j] * y[j] * (1.0 - y[j]);
    });
  }

  // scale * softmax(x) per row.
  Var scaled_softmax(Var x, double scale) {
    Matrix y = scaled_softmax_rows(value(x), scale);
    return push(std::move(y), tracked(x), [x, scale](Tape& t, std::size_t self) {
      if (!t.tracked(x)) return;
      const Matrix& dy = t.nodes_[self].grad;
      const Matrix& y = t.nodes_[self].value;
      Matrix& dx = t.nodes_[x.id].grad;
      // y = scale * s, dy/dx_k = scale * s_j (delta_jk - s_k) = y_j (delta_jk - y_k / scale)
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) dot += dy(i, j) * y(i, j);
        for (std::size_t k = 0; k < y.cols(); ++k) dx(i, k) += y(i, k) * (dy(i, k) - dot / scale);
      }
    });
  }

  // Elementwise product.
  Var mul(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    require(A.same_shape(B), ErrorKind::invalid_shape, "tape.mul: " + shape_str(A) + " vs " + shape_str(B));
    Matrix y = A;
    for (std::size_t j = 0; j < y.size(); ++j) y.values()[j] *= B.values()[j];
    return push(std::move(y), any_tracked({a, b}), [a, b](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad.values();
      if (t.tracked(a)) {
        auto& da = t.nodes_[a.id].grad.values();
        const auto& bv = t.value(b).values();
        for (std::size_t j = 0; j < dy.size(); ++j) da[j] += dy[j] * bv[j];
      }
      if (t.tracked(b)) {
        auto& db = t.nodes_[b.id].grad.values();
        const auto& av = t.value(a).values();
        for (std::size_t j = 0; j < dy.size(); ++j) db[j] += dy[j] * av[j];
      }
    });
  }

  // mean over rows of ||x_i - xhat_i||^2, as a 1x1 value.
  Var sq_error_mean(Var x, Var xhat) {
    const Matrix& X = value(x);
    const Matrix& H = value(xhat);
    require(X.same_shape(H), ErrorKind::invalid_shape, "sq_error_mean: " + shape_str(X) + " vs " + shape_str(H));
    require(X.rows() > 0, ErrorKind::invalid_shape, "sq_error_mean: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < X.rows(); ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < X.cols(); ++j) {
        const double d = X(i, j) - H(i, j);
        row += d * d;
      }
      total += row;
    }
    const double n = static_cast<double>(X.rows());
    return push(Matrix(1, 1, total / n), any_tracked({x, xhat}), [x, xhat, n](Tape& t, std::size_t self) {
      const double g = t.nodes_[self].grad(0, 0) * 2.0 / n;
      const auto& xv = t.value(x).values();
      const auto& hv = t.value(xhat).values();
      if (t.tracked(x)) {
        auto& dx = t.nodes_[x.id].grad.values();
        for (std::size_t j = 0; j < xv.size(); ++j) dx[j] += g * (xv[j] - hv[j]);
      }
      if (t.tracked(xhat)) {
        auto& dh = t.nodes_[xhat.id].grad.values();
        for (std::size_t j = 0; j < xv.size(); ++j) dh[j] -= g * (xv[j] - hv[j]);
      }
    });
  }

  // mean of log(p) (or log(1 - p) when `complement`) over all entries of p,
  // with p clamped to [clamp, 1 - clamp]. Clamped entries pass no gradient.
  Var mean_log(Var p, bool complement, double clamp = 1e-7) {
    const auto& pv = value(p).values();
    require(!pv.empty(), ErrorKind::invalid_shape, "mean_log: empty input");
    double total = 0.0;
    for (double v : pv) {
      require(std::isfinite(v), ErrorKind::numeric, "mean_log: non-finite activation");
      const double c = std::clamp(v, clamp, 1.0 - clamp);
      total += complement ? std::log(1.0 - c) : std::log(c);
    }
    const double n = static_cast<double>(pv.size());
    return push(Matrix(1, 1, total / n), tracked(p), [p, complement, clamp, n](Tape& t, std::size_t self) {
      if (!t.tracked(p)) return;
      const double g = t.nodes_[self].grad(0, 0) / n;
      const auto& v = t.value(p).values();
      auto& dp = t.nodes_[p.id].grad.values();
      for (std::size_t j = 0; j < v.size(); ++j) {
        if (v[j] < clamp || v[j] > 1.0 - clamp) continue;
        dp[j] += complement ? -g / (1.0 - v[j]) : g / v[j];
      }
    });
  }

  // Linear combination of 1x1 values.
  Var lincomb(std::initializer_list<std::pair<Var, double>> terms) {
    std::vector<std::pair<Var, double>> ts(terms);
    double total = 0.0;
    bool any = false;
    for (const auto& [v, c] : ts) {
      const Matrix& m = value(v);
      require(m.rows() == 1 && m.cols() == 1, ErrorKind::invalid_shape, "lincomb: operands must be scalars");
      total += c * m(0, 0);
      any = any || tracked(v);
    }
    return push(Matrix(1, 1, total), any, [ts](Tape& t, std::size_t self) {
      const double g = t.nodes_[self].grad(0, 0);
      for (const auto& [v, c] : ts)
        if (t.tracked(v)) t.nodes_[v.id].grad(0, 0) += c * g;
    });
  }

  // Propagates seed_gradient * d(loss)/d(node) into every tracked node.
  void backward(Var loss, double seed_gradient = 1.0) {
    require(!nodes_.empty() && loss.id < nodes_.size(), ErrorKind::state, "backward: loss is not recorded on this tape");
    const Matrix& lv = nodes_[loss.id].value;
    require(lv.rows() == 1 && lv.cols() == 1, ErrorKind::state, "backward: loss must be a scalar");
    for (auto& n : nodes_) n.grad = Matrix(n.value.rows(), n.value.cols(), 0.0);
    swept_ = true;
    if (!nodes_[loss.id].tracked) return;
    nodes_[loss.id].grad(0, 0) = seed_gradient;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.tracked && n.back) n.back(*this, i);
    }
  }

 private:
  using Backprop = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool tracked = false;
    Backprop back;
  };

  Var push(Matrix value, bool tracked, Backprop back) {
    nodes_.push_back(Node{std::move(value), Matrix(), tracked, std::move(back)});
    swept_ = false;
    return Var{nodes_.size() - 1};
  }

  const Node& node(Var v) const {
    require(v.id < nodes_.size(), ErrorKind::state, "tape: unknown variable");
    return nodes_[v.id];
  }

  bool any_tracked(std::initializer_list<Var> vs) const {
    for (Var v : vs)
      if (tracked(v)) return true;
    return false;
  }

  std::vector<Node> nodes_;
  bool swept_ = false;
};

// A layer stack recorded on a tape: (W, b) per layer.
struct TapeStack {
  std::vector<std::pair<Var, Var>> layers;
};

inline TapeStack record(Tape& tape, const LayerStack& stack, bool trainable) {
  TapeStack out;
  for (const auto& layer : stack) {
    if (trainable)
      out.layers.emplace_back(tape.parameter(layer.W), tape.parameter(layer.b));
    else
      out.layers.emplace_back(tape.constant(layer.W), tape.constant(layer.b));
  }
  return out;
}

inline Var apply(Tape& tape, const TapeStack& stack, Var x) {
  for (const auto& [W, b] : stack.layers) x = tape.sigmoid(tape.affine(x, W, b));
  return x;
}

// Appends the gradients of a recorded stack in (W, b) order.
inline void collect_grads(const Tape& tape, const TapeStack& stack, std::vector<Matrix>& out) {
  for (const auto& [W, b] : stack.layers) {
    out.push_back(tape.grad(W));
    out.push_back(tape.grad(b));
  }
}

}  // namespace flagrank
