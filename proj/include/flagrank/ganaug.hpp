#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flagrank/error.hpp"
#include "flagrank/numkernel.hpp"
#include "flagrank/rng.hpp"
#include "flagrank/tape.hpp"

// Minimax GAN over Boolean rows, used to synthesize extra normal samples.
namespace flagrank::ganaug {

inline constexpr double kClamp = 1e-7;

struct Config {
  std::size_t noise_dim = 32;
  std::size_t hidden = 0;  // 0 = min(128, max(16, d))
  double lr = 1e-2;
  std::size_t batch = 64;
  std::size_t epochs = 200;
  double beta1 = 0.5;
  std::uint64_t seed = 0;

  friend bool operator==(const Config&, const Config&) = default;
};

struct Model {
  Config config;
  std::size_t dim = 0;
  LayerStack gen;   // noise -> hidden -> d
  LayerStack disc;  // d -> hidden -> 1

  friend bool operator==(const Model&, const Model&) = default;
};

inline Model init(std::size_t dim, const Config& cfg) {
  require(dim >= 1, ErrorKind::precondition, "gan: dimension must be >= 1");
  require(cfg.noise_dim >= 1, ErrorKind::precondition, "gan: noise_dim must be >= 1");
  Model m;
  m.config = cfg;
  if (m.config.hidden == 0) m.config.hidden = std::min<std::size_t>(128, std::max<std::size_t>(16, dim));
  m.dim = dim;
  const std::size_t gw[] = {m.config.noise_dim, m.config.hidden, dim};
  const std::size_t dw[] = {dim, m.config.hidden, 1};
  m.gen = init_stack(gw, derive_seed(cfg.seed, "gan.gen"));
  m.disc = init_stack(dw, derive_seed(cfg.seed, "gan.disc"));
  return m;
}

inline Matrix sample_noise(std::size_t n, std::size_t noise_dim, Rng& rng) {
  Matrix z(n, noise_dim);
  for (double& v : z.values()) v = rng.normal();
  return z;
}

// -mean log D(x) - mean log(1 - D(G(z))), gradients w.r.t. the discriminator.
inline double disc_objective(const Model& m, const Matrix& real, const Matrix& noise, std::vector<Matrix>* grads) {
  const Matrix fake = forward_stack(m.gen, noise);
  Tape t;
  const TapeStack disc = record(t, m.disc, true);
  const Var dr = apply(t, disc, t.constant(real));
  const Var df = apply(t, disc, t.constant(fake));
  const Var loss = t.lincomb({{t.mean_log(dr, false, kClamp), -1.0}, {t.mean_log(df, true, kClamp), -1.0}});
  const double v = t.value(loss)(0, 0);
  require(std::isfinite(v), ErrorKind::numeric, "gan discriminator loss is not finite");
  if (grads) {
    t.backward(loss);
    grads->clear();
    collect_grads(t, disc, *grads);
  }
  return v;
}

// -mean log D(G(z)), gradients w.r.t. the generator.
inline double gen_objective(const Model& m, const Matrix& noise, std::vector<Matrix>* grads) {
  Tape t;
  const TapeStack gen = record(t, m.gen, true);
  const TapeStack disc = record(t, m.disc, false);
  const Var df = apply(t, disc, apply(t, gen, t.constant(noise)));
  const Var loss = t.lincomb({{t.mean_log(df, false, kClamp), -1.0}});
  const double v = t.value(loss)(0, 0);
  require(std::isfinite(v), ErrorKind::numeric, "gan generator loss is not finite");
  if (grads) {
    t.backward(loss);
    grads->clear();
    collect_grads(t, gen, *grads);
  }
  return v;
}

// Alternating discriminator/generator Adam steps per minibatch of real rows.
inline Model train_gan(const Matrix& real, const Config& cfg) {
  require(real.rows() >= 2, ErrorKind::precondition,
          "gan: need at least 2 real rows to train (got " + std::to_string(real.rows()) + ")");
  Model m = init(real.cols(), cfg);
  AdamState opt_d, opt_g;
  Rng rng(derive_seed(cfg.seed, "gan.train"));
  std::vector<std::size_t> order(real.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Matrix> grads;
  const AdamConfig adam{cfg.beta1, 0.999, 1e-8};
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const Matrix batch = real.gather_rows(std::span(order).subspan(start, end - start));
      const Matrix z_d = sample_noise(batch.rows(), cfg.noise_dim, rng);
      disc_objective(m, batch, z_d, &grads);
      adam_step(param_refs({&m.disc}), grads, opt_d, cfg.lr, adam);
      const Matrix z_g = sample_noise(batch.rows(), cfg.noise_dim, rng);
      gen_objective(m, z_g, &grads);
      adam_step(param_refs({&m.gen}), grads, opt_g, cfg.lr, adam);
    }
  }
  return m;
}

// n Boolean rows: generator outputs thresholded at 0.5.
inline Matrix generate(const Model& m, std::size_t n, std::uint64_t seed) {
  if (n == 0) return Matrix(0, m.dim);
  Rng rng(derive_seed(seed, "gan.generate"));
  Matrix out = forward_stack(m.gen, sample_noise(n, m.config.noise_dim, rng));
  for (double& v : out.values()) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

inline std::vector<double> column_frequencies(const Matrix& X) {
  std::vector<double> f(X.cols(), 0.0);
  if (X.rows() == 0) return f;
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < X.cols(); ++j) f[j] += X(i, j);
  for (double& v : f) v /= static_cast<double>(X.rows());
  return f;
}

// Mean absolute difference of per-attribute activation frequencies.
inline double marginal_divergence(const Matrix& real, const Matrix& synth) {
  require(real.cols() == synth.cols(), ErrorKind::invalid_shape,
          "marginal_divergence: " + std::to_string(real.cols()) + " vs " + std::to_string(synth.cols()) + " columns");
  if (real.cols() == 0) return 0.0;
  const auto a = column_frequencies(real);
  const auto b = column_frequencies(synth);
  double total = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) total += std::abs(a[j] - b[j]);
  return total / static_cast<double>(a.size());
}

}  // namespace flagrank::ganaug
