#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flagrank/dataio.hpp"
#include "flagrank/error.hpp"
#include "flagrank/json_io.hpp"
#include "flagrank/numkernel.hpp"
#include "flagrank/rng.hpp"
#include "flagrank/tape.hpp"

// Attention adversarial dual autoencoder: two autoencoders reconstruct the
// input, the first through a softmax attention gate on its latent code, and a
// separate discriminator tells inputs from both reconstructions.
namespace flagrank::adaen {

inline constexpr double kDiscClamp = 1e-7;

struct Config {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;  // 0 = min(128, d)
  std::size_t latent = 0;  // 0 = min(32, max(2, d / 4))
  double alpha = 0.5;
  double lambda = 0.1;
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t epochs_per_iteration = 20;
  std::uint64_t seed = 0;

  // Defaults filled in and invariants checked.
  Config resolved() const {
    Config c = *this;
    require(c.input_dim >= 1, ErrorKind::precondition, "adaen: input_dim must be >= 1");
    if (c.hidden == 0) c.hidden = std::min<std::size_t>(128, c.input_dim);
    if (c.latent == 0) c.latent = std::min<std::size_t>(32, std::max<std::size_t>(2, c.input_dim / 4));
    require(c.alpha >= 0.0 && c.alpha <= 1.0, ErrorKind::precondition,
            "adaen: alpha must lie in [0,1] (got " + std::to_string(c.alpha) + ")");
    require(c.lambda >= 0.0, ErrorKind::precondition, "adaen: lambda must be >= 0");
    require(c.lr > 0.0, ErrorKind::precondition, "adaen: lr must be > 0");
    require(c.batch >= 1, ErrorKind::precondition, "adaen: batch must be >= 1");
    if (c.input_dim >= 2)
      require(c.latent <= c.hidden && c.hidden <= c.input_dim, ErrorKind::precondition,
              "adaen: widths must satisfy latent <= hidden <= input_dim");
    return c;
  }

  friend bool operator==(const Config&, const Config&) = default;
};

struct Model {
  Config config;
  LayerStack enc1, dec1, enc2, dec2;
  LayerParams att;
  LayerStack disc;
  // Optimizer state persists across retraining rounds (warm start).
  AdamState opt_ae, opt_disc;
  std::uint64_t epochs_done = 0;

  friend bool operator==(const Model&, const Model&) = default;
};

inline Model build(const Config& config) {
  Model m;
  m.config = config.resolved();
  const auto& c = m.config;
  const std::size_t enc_w[] = {c.input_dim, c.hidden, c.latent};
  const std::size_t dec_w[] = {c.latent, c.hidden, c.input_dim};
  const std::size_t disc_w[] = {c.input_dim, c.hidden, 1};
  m.enc1 = init_stack(enc_w, derive_seed(c.seed, "adaen.enc1"));
  m.dec1 = init_stack(dec_w, derive_seed(c.seed, "adaen.dec1"));
  m.enc2 = init_stack(enc_w, derive_seed(c.seed, "adaen.enc2"));
  m.dec2 = init_stack(dec_w, derive_seed(c.seed, "adaen.dec2"));
  m.att = init_weights(c.latent, c.latent, derive_seed(c.seed, "adaen.att"));
  m.disc = init_stack(disc_w, derive_seed(c.seed, "adaen.disc"));
  return m;
}

// Trainable autoencoder-side tensors in a fixed order:
// enc1, att, dec1, enc2, dec2 (W then b per layer).
inline std::vector<Matrix*> ae_params(Model& m) {
  std::vector<Matrix*> out;
  auto add = [&](LayerStack& s) {
    for (auto& l : s) {
      out.push_back(&l.W);
      out.push_back(&l.b);
    }
  };
  add(m.enc1);
  out.push_back(&m.att.W);
  out.push_back(&m.att.b);
  add(m.dec1);
  add(m.enc2);
  add(m.dec2);
  return out;
}

inline std::vector<Matrix*> disc_params(Model& m) { return param_refs({&m.disc}); }

struct Reconstruction {
  Matrix x1, x2;
  Matrix z1, z2;
  Matrix attention;  // softmax weights, rows sum to 1
};

inline Reconstruction reconstruct(const Model& m, const Matrix& X) {
  require(X.cols() == m.config.input_dim, ErrorKind::invalid_shape,
          "reconstruct: input has " + std::to_string(X.cols()) + " columns, model expects " +
              std::to_string(m.config.input_dim));
  Reconstruction r;
  r.z1 = forward_stack(m.enc1, X);
  const Matrix logits = affine(r.z1, m.att.W, m.att.b);
  Matrix gated = scaled_softmax_rows(logits, static_cast<double>(m.config.latent));
  for (std::size_t j = 0; j < gated.size(); ++j) gated.values()[j] *= r.z1.values()[j];
  r.x1 = forward_stack(m.dec1, std::move(gated));
  r.attention = softmax_rows(logits);
  r.z2 = forward_stack(m.enc2, X);
  r.x2 = forward_stack(m.dec2, r.z2);
  return r;
}

// AE1 without the attention gate; used to check attention neutrality.
inline Matrix reconstruct_unattended_ae1(const Model& m, const Matrix& X) {
  return forward_stack(m.dec1, forward_stack(m.enc1, X));
}

struct ReconLosses {
  double l1 = 0.0;
  double l2 = 0.0;
  double blend = 0.0;
};

namespace detail {
inline double mean_sq_row_error(const Matrix& x, const Matrix& xh) {
  require(x.same_shape(xh), ErrorKind::invalid_shape, "loss: " + shape_str(x) + " vs " + shape_str(xh));
  require(x.rows() > 0, ErrorKind::invalid_shape, "loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double d = x(i, j) - xh(i, j);
      row += d * d;
    }
    total += row;
  }
  return total / static_cast<double>(x.rows());
}

inline double mean_log_clamped(const Matrix& p, bool complement) {
  double total = 0.0;
  for (double v : p.values()) {
    require(std::isfinite(v), ErrorKind::numeric, "discriminator produced a non-finite activation");
    const double c = std::clamp(v, kDiscClamp, 1.0 - kDiscClamp);
    total += complement ? std::log(1.0 - c) : std::log(c);
  }
  return total / static_cast<double>(p.size());
}
}  // namespace detail

inline ReconLosses reconstruction_losses(const Matrix& x, const Matrix& x1, const Matrix& x2, double alpha) {
  ReconLosses r;
  r.l1 = detail::mean_sq_row_error(x, x1);
  r.l2 = detail::mean_sq_row_error(x, x2);
  r.blend = alpha * r.l1 + (1.0 - alpha) * r.l2;
  return r;
}

struct AdvLosses {
  double disc = 0.0;       // L_D
  double generator = 0.0;  // L_adv
};

// Discriminator outputs are clamped to [1e-7, 1 - 1e-7] before the logs.
inline AdvLosses adversarial_losses_from_outputs(const Matrix& d_real, const Matrix& d_x1, const Matrix& d_x2) {
  AdvLosses a;
  a.disc = -detail::mean_log_clamped(d_real, false) -
           (detail::mean_log_clamped(d_x1, true) + detail::mean_log_clamped(d_x2, true));
  a.generator = -(detail::mean_log_clamped(d_x1, false) + detail::mean_log_clamped(d_x2, false));
  require(std::isfinite(a.disc) && std::isfinite(a.generator), ErrorKind::numeric, "adversarial loss is not finite");
  return a;
}

inline AdvLosses adversarial_losses(const Model& m, const Matrix& x, const Matrix& x1, const Matrix& x2) {
  require(x.same_shape(x1) && x.same_shape(x2), ErrorKind::invalid_shape, "adversarial_losses: shape mismatch");
  return adversarial_losses_from_outputs(forward_stack(m.disc, x), forward_stack(m.disc, x1),
                                         forward_stack(m.disc, x2));
}

inline double combined_loss(double blend, double adv, double lambda) {
  require(lambda >= 0.0, ErrorKind::precondition, "combined_loss: lambda must be >= 0");
  require(std::isfinite(blend) && std::isfinite(adv), ErrorKind::numeric, "combined_loss: non-finite input");
  return blend + lambda * adv;
}

// ---------------------------------------------------------------------------
// Differentiable objectives

enum class AeObjective { blend, adversarial, combined };

struct AeGraph {
  TapeStack enc1, dec1, enc2, dec2, disc;
  Var att_W, att_b;
  Var x, x1, x2;
};

inline AeGraph record_autoencoders(Tape& t, const Model& m, const Matrix& X, bool ae_trainable) {
  AeGraph g;
  g.x = t.constant(X);
  g.enc1 = record(t, m.enc1, ae_trainable);
  g.att_W = ae_trainable ? t.parameter(m.att.W) : t.constant(m.att.W);
  g.att_b = ae_trainable ? t.parameter(m.att.b) : t.constant(m.att.b);
  g.dec1 = record(t, m.dec1, ae_trainable);
  g.enc2 = record(t, m.enc2, ae_trainable);
  g.dec2 = record(t, m.dec2, ae_trainable);

  const Var z1 = apply(t, g.enc1, g.x);
  const Var gate = t.scaled_softmax(t.affine(z1, g.att_W, g.att_b), static_cast<double>(m.config.latent));
  g.x1 = apply(t, g.dec1, t.mul(gate, z1));
  g.x2 = apply(t, g.dec2, apply(t, g.enc2, g.x));
  return g;
}

inline void collect_ae_grads(const Tape& t, const AeGraph& g, std::vector<Matrix>& out) {
  collect_grads(t, g.enc1, out);
  out.push_back(t.grad(g.att_W));
  out.push_back(t.grad(g.att_b));
  collect_grads(t, g.dec1, out);
  collect_grads(t, g.enc2, out);
  collect_grads(t, g.dec2, out);
}

struct AeLossParts {
  double blend = 0.0;
  double adv = 0.0;
  double total = 0.0;
};

// Autoencoder-side loss on a batch with the discriminator frozen. Fills
// gradients for ae_params() order when `grads` is non-null.
inline AeLossParts ae_objective(const Model& m, const Matrix& X, AeObjective which, std::vector<Matrix>* grads) {
  Tape t;
  AeGraph g = record_autoencoders(t, m, X, true);
  const double a = m.config.alpha;
  const Var l1 = t.sq_error_mean(g.x, g.x1);
  const Var l2 = t.sq_error_mean(g.x, g.x2);
  const Var blend = t.lincomb({{l1, a}, {l2, 1.0 - a}});
  g.disc = record(t, m.disc, false);
  const Var ladv = t.lincomb({{t.mean_log(apply(t, g.disc, g.x1), false, kDiscClamp), -1.0},
                              {t.mean_log(apply(t, g.disc, g.x2), false, kDiscClamp), -1.0}});
  const Var total = t.lincomb({{blend, 1.0}, {ladv, m.config.lambda}});
  const Var loss = which == AeObjective::blend ? blend : which == AeObjective::adversarial ? ladv : total;
  AeLossParts parts{t.value(blend)(0, 0), t.value(ladv)(0, 0), t.value(total)(0, 0)};
  require(std::isfinite(parts.total), ErrorKind::numeric, "autoencoder loss is not finite");
  if (grads) {
    t.backward(loss);
    grads->clear();
    collect_ae_grads(t, g, *grads);
  }
  return parts;
}

// L_D on a batch with the autoencoders frozen; gradients in disc_params() order.
inline double disc_objective(const Model& m, const Matrix& X, std::vector<Matrix>* grads) {
  const Reconstruction r = reconstruct(m, X);
  Tape t;
  const TapeStack disc = record(t, m.disc, true);
  const Var real = apply(t, disc, t.constant(X));
  const Var f1 = apply(t, disc, t.constant(r.x1));
  const Var f2 = apply(t, disc, t.constant(r.x2));
  const Var loss = t.lincomb({{t.mean_log(real, false, kDiscClamp), -1.0},
                              {t.mean_log(f1, true, kDiscClamp), -1.0},
                              {t.mean_log(f2, true, kDiscClamp), -1.0}});
  const double value = t.value(loss)(0, 0);
  require(std::isfinite(value), ErrorKind::numeric, "discriminator loss is not finite");
  if (grads) {
    t.backward(loss);
    grads->clear();
    collect_grads(t, disc, *grads);
  }
  return value;
}

// One Adam step on the discriminator; returns L_D before the step.
inline double disc_step(Model& m, const Matrix& X) {
  std::vector<Matrix> grads;
  const double loss = disc_objective(m, X, &grads);
  adam_step(disc_params(m), grads, m.opt_disc, m.config.lr);
  return loss;
}

// One Adam step on all autoencoder parameters; returns the losses before the step.
inline AeLossParts ae_step(Model& m, const Matrix& X) {
  std::vector<Matrix> grads;
  const AeLossParts parts = ae_objective(m, X, AeObjective::combined, &grads);
  adam_step(ae_params(m), grads, m.opt_ae, m.config.lr);
  return parts;
}

struct EpochLoss {
  double disc = 0.0;
  double blend = 0.0;
  double adv = 0.0;
  double total = 0.0;
};

using LossTrace = std::vector<EpochLoss>;

// Alternating minibatch training: per batch, one discriminator step then one
// autoencoder step. `epochs` defaults to the configured epochs_per_iteration.
inline LossTrace train(Model& m, const Matrix& X, std::optional<std::size_t> epochs = std::nullopt) {
  require(X.rows() > 0, ErrorKind::precondition, "train: empty training set");
  require(X.cols() == m.config.input_dim, ErrorKind::invalid_shape,
          "train: input has " + std::to_string(X.cols()) + " columns, model expects " +
              std::to_string(m.config.input_dim));
  const std::size_t n_epochs = epochs.value_or(m.config.epochs_per_iteration);
  LossTrace trace;
  std::vector<std::size_t> order(X.rows());
  for (std::size_t e = 0; e < n_epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(m.config.seed, "adaen.shuffle", m.epochs_done));
    rng.shuffle(order);
    EpochLoss acc;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += m.config.batch, ++batches) {
      const std::size_t end = std::min(order.size(), start + m.config.batch);
      const Matrix batch = X.gather_rows(std::span(order).subspan(start, end - start));
      try {
        acc.disc += disc_step(m, batch);
        const AeLossParts p = ae_step(m, batch);
        acc.blend += p.blend;
        acc.adv += p.adv;
        acc.total += p.total;
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::numeric) throw;
        throw Error(ErrorKind::numeric, "epoch " + std::to_string(e) + " batch " + std::to_string(batches) + ": " +
                                            err.what());
      }
    }
    const double nb = static_cast<double>(batches);
    trace.push_back(EpochLoss{acc.disc / nb, acc.blend / nb, acc.adv / nb, acc.total / nb});
    ++m.epochs_done;
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Scoring

// Per-row blended error alpha*||x - x1||^2 + (1 - alpha)*||x - x2||^2.
inline std::vector<double> row_errors(const Model& m, const Matrix& X) {
  const Reconstruction r = reconstruct(m, X);
  const double a = m.config.alpha;
  std::vector<double> out(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t j = 0; j < X.cols(); ++j) {
      const double d1 = X(i, j) - r.x1(i, j);
      const double d2 = X(i, j) - r.x2(i, j);
      e1 += d1 * d1;
      e2 += d2 * d2;
    }
    out[i] = a * e1 + (1.0 - a) * e2;
  }
  return out;
}

inline std::vector<ScoredProcess> anomaly_scores(const Model& m, const BooleanDataset& ds) {
  require(ds.num_attrs() == m.config.input_dim, ErrorKind::invalid_shape,
          "anomaly_scores: dataset has " + std::to_string(ds.num_attrs()) + " attributes, model expects " +
              std::to_string(m.config.input_dim));
  std::vector<ScoredProcess> out;
  out.reserve(ds.size());
  constexpr std::size_t kChunk = 512;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += kChunk) {
    const std::size_t end = std::min(ds.size(), start + kChunk);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const auto errs = row_errors(m, ds.dense(idx));
    for (std::size_t i = start; i < end; ++i) out.push_back(ScoredProcess{ds.row(i).id, errs[i - start]});
  }
  return out;
}

// Nearest-rank percentile: the ceil(p*n)-th smallest score.
inline double calibrate_threshold(std::span<const double> scores, double p) {
  require(!scores.empty(), ErrorKind::precondition, "calibrate_threshold: no scores");
  require(p > 0.0 && p < 1.0, ErrorKind::precondition, "calibrate_threshold: percentile must lie in (0,1)");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // 1e-9 absorbs representation error in p*n (e.g. 0.7*10 landing above 7).
  auto rank = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

inline std::size_t count_flagged(std::span<const double> scores, double tau) {
  return static_cast<std::size_t>(std::count_if(scores.begin(), scores.end(), [tau](double e) { return e > tau; }));
}

// ---------------------------------------------------------------------------
// Checkpoint

inline json config_to_json(const Config& c) {
  return json{{"input_dim", c.input_dim}, {"hidden", c.hidden}, {"latent", c.latent},
              {"alpha", c.alpha},         {"lambda", c.lambda}, {"lr", c.lr},
              {"batch", c.batch},         {"epochs_per_iteration", c.epochs_per_iteration},
              {"seed", c.seed}};
}

inline Config config_from_json(const json& j) {
  Config c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.latent = j.at("latent").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.lr = j.at("lr").get<double>();
  c.batch = j.at("batch").get<std::size_t>();
  c.epochs_per_iteration = j.at("epochs_per_iteration").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline json to_json(const Model& m) {
  return json{{"format", "flagrank-adaen"},
              {"version", 1},
              {"config", config_to_json(m.config)},
              {"enc1", stack_to_json(m.enc1)},
              {"dec1", stack_to_json(m.dec1)},
              {"enc2", stack_to_json(m.enc2)},
              {"dec2", stack_to_json(m.dec2)},
              {"att", stack_to_json(LayerStack{m.att})},
              {"disc", stack_to_json(m.disc)},
              {"opt_ae", adam_to_json(m.opt_ae)},
              {"opt_disc", adam_to_json(m.opt_disc)},
              {"epochs_done", m.epochs_done}};
}

inline Model from_json(const json& j) {
  require(j.value("format", "") == "flagrank-adaen" && j.value("version", 0) == 1, ErrorKind::format,
          "not a version-1 ADAEN checkpoint");
  try {
    Model m;
    m.config = config_from_json(j.at("config")).resolved();
    m.enc1 = stack_from_json(j.at("enc1"));
    m.dec1 = stack_from_json(j.at("dec1"));
    m.enc2 = stack_from_json(j.at("enc2"));
    m.dec2 = stack_from_json(j.at("dec2"));
    const LayerStack att = stack_from_json(j.at("att"));
    require(att.size() == 1, ErrorKind::format, "checkpoint: attention layer missing");
    m.att = att.front();
    m.disc = stack_from_json(j.at("disc"));
    m.opt_ae = adam_from_json(j.at("opt_ae"));
    m.opt_disc = adam_from_json(j.at("opt_disc"));
    m.epochs_done = j.at("epochs_done").get<std::uint64_t>();
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace flagrank::adaen
