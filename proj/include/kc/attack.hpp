#pragma once

// One-step gradient-sign attacks, robustness curves and empirical
// Lipschitz-style ratio diagnostics for ToyNet.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kc/analysis.hpp"
#include "kc/csv.hpp"
#include "kc/error.hpp"
#include "kc/toynet.hpp"

namespace kc {

enum class AttackNorm {
  Linf,         // x + eps * sign(grad)
  L2Projected,  // sign step projected onto the l2 ball of radius eps
};

// Gradient of the per-example cross-entropy wrt the inputs (one row per example).
inline Eigen::MatrixXd input_gradient(const ToyNet& net, const LabeledData& data) {
  const auto t = forward(net, data.X);
  Eigen::MatrixXd dlogits;
  cross_entropy(t.logits(), data.y, &dlogits);
  return backward(net, t, dlogits).dinput;
}

inline Eigen::MatrixXd attack_direction(const Eigen::MatrixXd& grad, AttackNorm norm) {
  Eigen::MatrixXd s = grad.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
  if (norm == AttackNorm::L2Projected) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double nrm = s.row(i).norm();
      if (nrm > 1.0) s.row(i) /= nrm;
    }
  }
  return s;
}

inline Eigen::MatrixXd fgsm(const ToyNet& net, const LabeledData& data, double eps, AttackNorm norm = AttackNorm::Linf) {
  if (!(eps >= 0.0)) throw ValidationError("attack", "attack radius must be >= 0");
  return data.X + eps * attack_direction(input_gradient(net, data), norm);
}

struct RobustnessPoint {
  double eps = 0.0;
  double success_rate = 0.0;
  std::size_t correct = 0;
  std::size_t flipped = 0;
};

// Attack success over the correctly classified examples at each radius. For
// the l2-projected variant the perturbations of one example lie on a single
// ray, and an example counts as broken at eps once any grid radius <= eps
// flips it, so the curve is monotone by construction.
inline std::vector<RobustnessPoint> evaluate_robustness(const ToyNet& net, const LabeledData& test,
                                                        const std::vector<double>& eps_grid,
                                                        AttackNorm norm = AttackNorm::Linf) {
  const auto clean = predict_labels(forward(net, test.X).logits());
  std::vector<bool> correct(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) correct[i] = clean[i] == test.y[i];
  const Eigen::MatrixXd dir = attack_direction(input_gradient(net, test), norm);

  std::vector<std::size_t> order(eps_grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return eps_grid[a] < eps_grid[b]; });

  std::vector<RobustnessPoint> out(eps_grid.size());
  std::vector<bool> broken(test.size(), false);
  for (std::size_t o : order) {
    const double eps = eps_grid[o];
    if (!(eps >= 0.0)) throw ValidationError("attack", "attack radius must be >= 0");
    const auto adv = predict_labels(forward(net, test.X + eps * dir).logits());
    std::vector<bool> flipped(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      const bool f = adv[i] != test.y[i];
      if (norm == AttackNorm::L2Projected) {
        broken[i] = broken[i] || f;
        flipped[i] = broken[i];
      } else {
        flipped[i] = f;
      }
    }
    auto& p = out[o];
    p.eps = eps;
    p.success_rate = attack_success_rate(correct, flipped);
    for (std::size_t i = 0; i < test.size(); ++i) {
      p.correct += correct[i];
      p.flipped += correct[i] && flipped[i];
    }
  }
  return out;
}

inline std::string to_csv(const std::vector<RobustnessPoint>& curve) {
  csv::Table t;
  t.header = {"eps", "success_rate", "correct", "flipped"};
  for (const auto& p : curve)
    t.rows.push_back({csv::num(p.eps), csv::num(p.success_rate), std::to_string(p.correct), std::to_string(p.flipped)});
  return t.str();
}

struct RatioStats {
  double max = 0.0;
  double mean = 0.0;
  std::size_t pairs = 0;
  bool all_finite = true;

  void add(double v) {
    all_finite = all_finite && std::isfinite(v);
    max = pairs == 0 ? v : std::max(max, v);
    mean += (v - mean) / static_cast<double>(++pairs);
  }
};

// Descriptive juxtaposition of input-, representation- and output-space
// distances over unordered pairs; no inequality between them is implied.
struct LipschitzReport {
  std::size_t layer = 1;
  RatioStats output_over_input;  // ||f(x) - f(x')|| / ||x - x'||
  RatioStats layer_over_input;   // d_k / ||x - x'||
  RatioStats loss_over_layer;    // |dL| / d_k
};

inline LipschitzReport empirical_lipschitz_ratios(const ToyNet& net, const LabeledData& data, std::size_t layer,
                                                  double zero_tol = 1e-12) {
  if (layer < 1 || layer > net.num_layers())
    throw ValidationError("layer-range", "layer " + std::to_string(layer) + " out of range; valid layers are 1.." +
                                             std::to_string(net.num_layers()));
  const auto t = forward(net, data.X);
  const Eigen::VectorXd loss = cross_entropy(t.logits(), data.y);
  const Eigen::MatrixXd& H = t.post[layer - 1];
  const Eigen::MatrixXd& Y = t.logits();
  LipschitzReport r;
  r.layer = layer;
  const auto n = data.X.rows();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dx = (data.X.row(i) - data.X.row(j)).norm();
      const double dk = (H.row(i) - H.row(j)).norm();
      if (dx >= zero_tol) {
        r.output_over_input.add((Y.row(i) - Y.row(j)).norm() / dx);
        r.layer_over_input.add(dk / dx);
      }
      if (dk >= zero_tol) r.loss_over_layer.add(std::abs(loss(i) - loss(j)) / dk);
    }
  return r;
}

inline std::string to_text(const LipschitzReport& r) {
  auto line = [](const char* name, const RatioStats& s) {
    return std::string("  ") + name + ": max=" + csv::num(s.max) + " mean=" + csv::num(s.mean) +
           " pairs=" + std::to_string(s.pairs) + "\n";
  };
  return "lipschitz_ratios (layer " + std::to_string(r.layer) + "):\n" + line("output_over_input", r.output_over_input) +
         line("layer_over_input", r.layer_over_input) + line("loss_over_layer", r.loss_over_layer);
}

}  // namespace kc
