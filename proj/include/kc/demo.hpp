#pragma once

// Control vs. regularized two-moons pipeline: train both nets from the same
// data and initialization, then profile, attack and certify each.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <tuple>
#include <vector>

#include "kc/attack.hpp"
#include "kc/certify.hpp"
#include "kc/dump.hpp"
#include "kc/toynet.hpp"
#include "kc/train.hpp"
#include "kc/volatility.hpp"

namespace kc {

struct DemoConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 500;
  std::size_t n_test = 500;
  double noise = 0.15;
  std::size_t hidden = 32;
  std::size_t epochs = 60;
  OptimizerConfig optimizer;
  KCRegConfig kcreg{2.0, 1.0, 1e-2, 32};
  bool control_only = false;
  std::size_t profile_M = 0;  // 0 means exact
  std::vector<double> attack_eps{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5};
  // Certification radii are multiples of the largest middle-layer diameter
  // over the trained variants, so every variant is certified at the same deltas.
  std::vector<double> delta_multiples{2.5, 3.0, 4.0};
  std::vector<double> etas{0.25, 0.5, 1.0};
  double confidence = 0.95;
  std::size_t k_boot = 100;
  std::string capture_date = "1970-01-01";
};

struct DemoVariant {
  std::string name;
  double lambda = 0.0;
  TrainResult trained;
  double test_accuracy = 0.0;
  ActivationDataset test_ce;        // cross-entropy losses
  ActivationDataset test_zero_one;  // 0-1 losses, used for certification
  LayerProfile profile;             // on test_ce
  std::vector<RobustnessPoint> robustness;
  std::vector<Certificate> certificates;
};

struct DemoResult {
  std::size_t middle_layer = 0;
  std::vector<double> deltas;
  std::vector<DemoVariant> variants;
};

inline void validate(const DemoConfig& c) {
  if (c.n_train < 2 || c.n_test < 2) throw ValidationError("demo", "n_train and n_test must be >= 2");
  if (c.hidden < 1) throw ValidationError("demo", "hidden width must be >= 1");
  if (c.epochs < 1) throw ValidationError("demo", "epochs must be >= 1");
  if (!(c.noise >= 0.0)) throw ValidationError("demo", "noise must be >= 0");
  if (c.delta_multiples.empty() || c.etas.empty()) throw ValidationError("demo", "delta and eta grids must be non-empty");
  for (double m : c.delta_multiples)
    if (!(m > 0.0)) throw ValidationError("demo", "delta multiples must be > 0");
  validate(c.optimizer);
  validate(c.kcreg);
  check_ucb_args(c.k_boot, c.confidence);
}

// Seeds: data derive_seed(seed, 0), init derive_seed(seed, 1), training
// derive_seed(seed, 2), profile derive_seed(seed, 3), bootstrap derive_seed(seed, 4).
inline DemoResult run_demo(const DemoConfig& c) {
  validate(c);
  const auto all = two_moons(c.n_train + c.n_test, c.noise, derive_seed(c.seed, 0));
  std::vector<std::size_t> tr(c.n_train), te(c.n_test);
  for (std::size_t i = 0; i < c.n_train; ++i) tr[i] = i;
  for (std::size_t i = 0; i < c.n_test; ++i) te[i] = c.n_train + i;
  const auto train_set = select_rows(all, tr);
  const auto test_set = select_rows(all, te);
  const auto init = make_net({2, c.hidden, c.hidden, 2}, Activation::ReLU, derive_seed(c.seed, 1));

  DemoResult res;
  res.middle_layer = (init.num_layers() + 1) / 2;
  std::vector<std::pair<std::string, double>> runs{{"control", 0.0}};
  if (!c.control_only) runs.emplace_back("kcreg", c.kcreg.lambda);

  double max_B = 0.0;
  for (const auto& [name, lambda] : runs) {
    DemoVariant v;
    v.name = name;
    v.lambda = lambda;
    KCRegConfig kc_cfg = c.kcreg;
    kc_cfg.lambda = lambda;
    v.trained = train(init, train_set, c.optimizer, kc_cfg, c.epochs, derive_seed(c.seed, 2));
    const auto& net = v.trained.net;
    v.test_accuracy = accuracy(net, test_set);
    ModelMeta meta;
    meta.model_id = "toynet-" + name;
    v.test_ce = export_activations(net, test_set, ExportLoss::CrossEntropy, meta);
    v.test_zero_one = export_activations(net, test_set, ExportLoss::ZeroOne, meta);
    v.profile = layer_profile(v.test_ce, c.profile_M, derive_seed(c.seed, 3), c.profile_M == 0);
    v.robustness = evaluate_robustness(net, test_set, c.attack_eps);
    max_B = std::max(max_B, pairwise(v.test_zero_one.layer(res.middle_layer)).max_entry());
    res.variants.push_back(std::move(v));
  }

  for (double m : c.delta_multiples) res.deltas.push_back(m * max_B);
  for (auto& v : res.variants) {
    CertifyRequest req{res.middle_layer, res.deltas, c.etas, c.confidence, c.k_boot, derive_seed(c.seed, 4)};
    v.certificates = certify_grid(v.test_zero_one, req);
  }
  return res;
}

inline double middle_volatility(const DemoResult& r, const DemoVariant& v) {
  return v.profile.entries.at(r.middle_layer - 1).estimate.value;
}

inline std::string demo_summary_csv(const DemoResult& r) {
  csv::Table t;
  t.header = {"variant", "lambda", "train_accuracy", "test_accuracy", "middle_layer", "middle_epsilon", "eps_upper"};
  for (const auto& v : r.variants)
    t.rows.push_back({v.name, csv::num(v.lambda), csv::num(v.trained.history.epochs.back().accuracy),
                      csv::num(v.test_accuracy), std::to_string(r.middle_layer), csv::num(middle_volatility(r, v)),
                      csv::num(v.certificates.front().eps_upper)});
  return t.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("io", "cannot open " + p.string() + " for writing");
  out << s;
  if (!out) throw RuntimeError("io", "write failed for " + p.string());
}

// Writes every artifact under dir as <variant>_<artifact>.
inline void write_demo(const DemoResult& r, const DemoConfig& c, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RuntimeError("io", "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& v : r.variants) {
    const auto base = dir / v.name;
    save_weights(v.trained.net, base.string() + "_weights.kcw");
    for (const auto& [suffix, ds, loss] : {std::tuple{"_test_ce.kcd", &v.test_ce, "cross_entropy"},
                                           std::tuple{"_test_01.kcd", &v.test_zero_one, "zero_one"}}) {
      const std::filesystem::path p = base.string() + suffix;
      write_dump(*ds, p);
      auto m = Manifest::provenance("toynet-" + v.name, c.capture_date, loss);
      m.entries["seed"] = std::to_string(c.seed);
      m.entries["lambda"] = csv::num(v.lambda);
      write_manifest(m, manifest_path(p));
    }
    write_text(base.string() + "_history.csv", history_csv(v.trained.history));
    write_text(base.string() + "_steps.csv", steps_csv(v.trained.history));
    write_text(base.string() + "_robustness.csv", to_csv(v.robustness));
    write_text(base.string() + "_profile.csv", to_csv(v.profile));
    write_text(base.string() + "_certificates.csv", to_csv(v.certificates));
  }
  write_text(dir / "summary.csv", demo_summary_csv(r));
}

}  // namespace kc
