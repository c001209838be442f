#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "flagrank/error.hpp"
#include "flagrank/rng.hpp"

namespace flagrank {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::invalid_shape,
            "matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) + "x" +
                std::to_string(cols_));
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      require(row.size() == c, ErrorKind::invalid_shape, "ragged initializer");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  // Rows picked by index, in the given order.
  Matrix gather_rows(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols_);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] < rows_, ErrorKind::invalid_shape, "row index out of range");
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(idx[i] * cols_), cols_, out.row(i).begin());
    }
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Stacks rows of several matrices with equal column counts.
inline Matrix vstack(std::span<const Matrix* const> parts, std::size_t cols) {
  std::size_t rows = 0;
  for (const Matrix* p : parts) {
    require(p->rows() == 0 || p->cols() == cols, ErrorKind::invalid_shape, "vstack column mismatch");
    rows += p->rows();
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const Matrix* p : parts) {
    for (std::size_t i = 0; i < p->rows(); ++i, ++r) std::copy(p->row(i).begin(), p->row(i).end(), out.row(r).begin());
  }
  return out;
}

// One affine layer. W is out x in, b is 1 x out.
struct LayerParams {
  Matrix W;
  Matrix b;

  std::size_t in_dim() const noexcept { return W.cols(); }
  std::size_t out_dim() const noexcept { return W.rows(); }

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

using LayerStack = std::vector<LayerParams>;

// Xavier-uniform weights, zero biases.
inline LayerParams init_weights(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  require(fan_in >= 1 && fan_out >= 1, ErrorKind::invalid_shape,
          "layer dimensions must be >= 1 (got " + std::to_string(fan_in) + "->" + std::to_string(fan_out) + ")");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  LayerParams p{Matrix(fan_out, fan_in), Matrix(1, fan_out, 0.0)};
  for (double& w : p.W.values()) w = rng.uniform(-bound, bound);
  return p;
}

// Builds a stack through the given widths; layer i gets seed derived from (seed, i).
inline LayerStack init_stack(std::span<const std::size_t> widths, std::uint64_t seed) {
  LayerStack stack;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    stack.push_back(init_weights(widths[i], widths[i + 1], derive_seed(seed, "layer", i)));
  return stack;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// X W^T + b, row-wise.
inline Matrix affine(const Matrix& X, const Matrix& W, const Matrix& b) {
  require(X.cols() == W.cols(), ErrorKind::invalid_shape,
          "affine: input " + shape_str(X) + " vs weights " + shape_str(W));
  require(b.rows() == 1 && b.cols() == W.rows(), ErrorKind::invalid_shape, "affine: bias shape " + shape_str(b));
  const std::size_t n = X.rows();
  const std::size_t in = W.cols();
  const std::size_t out = W.rows();
  Matrix Y(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = X.row(i).data();
    double* y = Y.row(i).data();
    for (std::size_t o = 0; o < out; ++o) {
      const double* w = W.row(o).data();
      double acc = b(0, o);
      for (std::size_t k = 0; k < in; ++k) acc += w[k] * x[k];
      y[o] = acc;
    }
  }
  return Y;
}

inline Matrix sigmoid(Matrix M) {
  for (double& v : M.values()) v = sigmoid(v);
  return M;
}

inline Matrix affine_sigmoid(const LayerParams& params, const Matrix& X) {
  return sigmoid(affine(X, params.W, params.b));
}

// Applies each layer of the stack with a sigmoid after every layer.
inline Matrix forward_stack(const LayerStack& stack, Matrix X) {
  for (const auto& layer : stack) X = affine_sigmoid(layer, X);
  return X;
}

// Row-wise softmax multiplied by `scale`, computed as e_i * (scale / sum e).
// Equal logits with scale = cols give exactly 1 per entry.
inline Matrix scaled_softmax_rows(const Matrix& logits, double scale) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const double k = scale / sum;
    for (double& v : o) v *= k;
  }
  return out;
}

inline Matrix softmax_rows(const Matrix& logits) { return scaled_softmax_rows(logits, 1.0); }

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t t = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// In-place Adam update. The step is rejected before touching anything if a
// gradient is non-finite.
inline void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  require(lr > 0.0, ErrorKind::precondition, "adam: learning rate must be > 0");
  require(params.size() == grads.size(), ErrorKind::invalid_shape, "adam: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->same_shape(grads[i]), ErrorKind::invalid_shape, "adam: gradient shape mismatch");
    require(grads[i].all_finite(), ErrorKind::numeric, "adam: non-finite gradient in tensor " + std::to_string(i));
  }
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows(), p->cols(), 0.0);
      state.v.emplace_back(p->rows(), p->cols(), 0.0);
    }
  }
  require(state.m.size() == params.size(), ErrorKind::state, "adam: state does not match parameter set");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->values();
    const auto& g = grads[i].values();
    auto& m = state.m[i].values();
    auto& v = state.v[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// Collects pointers to every W and b in the given stacks, in order.
inline std::vector<Matrix*> param_refs(std::initializer_list<LayerStack*> stacks) {
  std::vector<Matrix*> out;
  for (LayerStack* s : stacks)
    for (auto& layer : *s) {
      out.push_back(&layer.W);
      out.push_back(&layer.b);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient verification

// A loss evaluated at the current parameter values. When `grads` is non-null
// it must be filled with one analytic gradient per parameter tensor.
using LossWithGrad = std::function<double(std::vector<Matrix>* grads)>;

// Central-difference check of every parameter entry. Returns the worst
// relative error, with denominator max(|analytic|, |numeric|, 1e-6). The floor
// sits well above the difference quotient's roundoff (about 1e-11 for O(1)
// losses at epsilon 1e-5), so vanishing entries are judged on absolute error.
inline double finite_diff_check(const LossWithGrad& loss_fn, std::span<Matrix* const> params, double epsilon) {
  require(epsilon > 0.0, ErrorKind::precondition, "finite_diff_check: epsilon must be > 0");
  std::vector<Matrix> analytic;
  const double base = loss_fn(&analytic);
  require(std::isfinite(base), ErrorKind::numeric, "finite_diff_check: non-finite loss");
  require(analytic.size() == params.size(), ErrorKind::invalid_shape, "finite_diff_check: gradient count mismatch");

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& vals = params[p]->values();
    require(analytic[p].size() == vals.size(), ErrorKind::invalid_shape, "finite_diff_check: gradient shape mismatch");
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double saved = vals[j];
      vals[j] = saved + epsilon;
      const double fp = loss_fn(nullptr);
      vals[j] = saved - epsilon;
      const double fm = loss_fn(nullptr);
      vals[j] = saved;
      require(std::isfinite(fp) && std::isfinite(fm), ErrorKind::numeric, "finite_diff_check: non-finite loss");
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double a = analytic[p].values()[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace flagrank
