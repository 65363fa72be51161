#pragma once

// Minibatch trainer (SGD or Adam with global gradient-norm clipping) around
// the regularized objective.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kc/csv.hpp"
#include "kc/error.hpp"
#include "kc/kcreg.hpp"
#include "kc/rng.hpp"
#include "kc/toynet.hpp"

namespace kc {

enum class Optimizer { SGD, Adam };

// Adam moments and clipping follow common fine-tuning defaults; the learning
// rate default suits toy-scale training.
struct OptimizerConfig {
  Optimizer kind = Optimizer::Adam;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
  std::size_t batch_size = 32;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::size_t layer = 0;
  double sigma_hat = 0.0;
  double objective = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the untrained network
  double loss = 0.0;      // mean cross-entropy over the training set
  double accuracy = 0.0;
  double mean_objective = 0.0;
  double mean_sigma_hat = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
};

struct TrainResult {
  ToyNet net;
  TrainHistory history;
};

inline double accuracy(const ToyNet& net, const LabeledData& data) {
  const auto pred = predict_labels(forward(net, data.X).logits());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == data.y[i];
  return data.size() == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(data.size());
}

inline double mean_cross_entropy(const ToyNet& net, const LabeledData& data) {
  return cross_entropy(forward(net, data.X).logits(), data.y).mean();
}

namespace detail {

class AdamState {
public:
  explicit AdamState(const ToyNet& net) {
    for (const auto& l : net.layers) {
      mW_.push_back(Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()));
      vW_.push_back(Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()));
      mb_.push_back(Eigen::VectorXd::Zero(l.b.size()));
      vb_.push_back(Eigen::VectorXd::Zero(l.b.size()));
    }
  }

  void step(ToyNet& net, const Gradients& g, const OptimizerConfig& c) {
    ++t_;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      update(net.layers[l].W, mW_[l], vW_[l], g.dW[l], c, bc1, bc2);
      update(net.layers[l].b, mb_[l], vb_[l], g.db[l], c, bc1, bc2);
    }
  }

private:
  template <typename M>
  static void update(M& p, M& m, M& v, const M& g, const OptimizerConfig& c, double bc1, double bc2) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
  }

  std::vector<Eigen::MatrixXd> mW_, vW_;
  std::vector<Eigen::VectorXd> mb_, vb_;
  std::uint64_t t_ = 0;
};

inline void clip(Gradients& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = std::sqrt(g.squared_norm());
  if (norm <= max_norm) return;
  const double s = max_norm / norm;
  for (auto& m : g.dW) m *= s;
  for (auto& v : g.db) v *= s;
}

}  // namespace detail

inline void validate(const OptimizerConfig& c) {
  if (!(c.learning_rate > 0.0)) throw ValidationError("optimizer", "learning rate must be > 0");
  if (c.batch_size < 2) throw ValidationError("optimizer", "batch size must be >= 2");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw ValidationError("optimizer", "Adam betas must lie in [0, 1)");
}

// Shuffling uses SplitMix64(derive_seed(seed, 1)); step s of the objective uses
// derive_seed(derive_seed(seed, 2), s). The two streams are independent, so the
// regularizer's draws never perturb batch order. Partial trailing batches are
// dropped.
inline TrainResult train(ToyNet net, const LabeledData& data, const OptimizerConfig& opt, const KCRegConfig& cfg,
                         std::size_t epochs, std::uint64_t seed) {
  validate(net);
  validate(opt);
  validate(cfg);
  if (opt.batch_size < cfg.M)
    throw ValidationError("kcreg", "batch size must be >= M (batch " + std::to_string(opt.batch_size) + ", M " +
                                       std::to_string(cfg.M) + ")");
  if (data.size() < opt.batch_size)
    throw ValidationError("train", "training set is smaller than one batch");

  const BetaTable table(cfg.beta_a, cfg.beta_b);
  SplitMix64 shuffle(derive_seed(seed, 1));
  const std::uint64_t step_root = derive_seed(seed, 2);
  detail::AdamState adam(net);

  TrainResult res;
  res.history.epochs.push_back({0, mean_cross_entropy(net, data), accuracy(net, data), 0.0, 0.0});
  const std::size_t batches = data.size() / opt.batch_size;
  std::size_t step = 0;
  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto order = permutation(shuffle, data.size());
    double obj_sum = 0.0, sigma_sum = 0.0;
    std::size_t sigma_count = 0;
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b * opt.batch_size),
                                   order.begin() + static_cast<std::ptrdiff_t>((b + 1) * opt.batch_size));
      const auto batch = select_rows(data, idx);
      auto r = kcreg_loss(net, batch, cfg, derive_seed(step_root, step), &table);
      detail::clip(r.grad, opt.max_grad_norm);
      if (opt.kind == Optimizer::Adam) {
        adam.step(net, r.grad, opt);
      } else {
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
          net.layers[l].W -= opt.learning_rate * r.grad.dW[l];
          net.layers[l].b -= opt.learning_rate * r.grad.db[l];
        }
      }
      obj_sum += r.objective;
      if (std::isfinite(r.sigma_hat)) {
        sigma_sum += r.sigma_hat;
        ++sigma_count;
      }
      res.history.steps.push_back({e, step, r.layer, r.sigma_hat, r.objective});
    }
    res.history.epochs.push_back({e, mean_cross_entropy(net, data), accuracy(net, data),
                                  obj_sum / static_cast<double>(batches),
                                  sigma_count ? sigma_sum / static_cast<double>(sigma_count) : 0.0});
  }
  res.net = std::move(net);
  return res;
}

inline std::string history_csv(const TrainHistory& h) {
  csv::Table t;
  t.header = {"epoch", "loss", "accuracy", "mean_objective", "mean_sigma_hat"};
  for (const auto& e : h.epochs)
    t.rows.push_back({std::to_string(e.epoch), csv::num(e.loss), csv::num(e.accuracy), csv::num(e.mean_objective),
                      csv::num(e.mean_sigma_hat)});
  return t.str();
}

inline std::string steps_csv(const TrainHistory& h) {
  csv::Table t;
  t.header = {"epoch", "step", "layer", "sigma_hat", "objective"};
  for (const auto& s : h.steps)
    t.rows.push_back({std::to_string(s.epoch), std::to_string(s.step), std::to_string(s.layer), csv::num(s.sigma_hat),
                      csv::num(s.objective)});
  return t.str();
}

}  // namespace kc
