#pragma once

// Vulnerability-score regression, permutation importance and per-depth
// correlation between layer volatility and attack success.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kc/csv.hpp"
#include "kc/datamodel.hpp"
#include "kc/error.hpp"
#include "kc/rng.hpp"
#include "kc/volatility.hpp"

namespace kc {

struct ModelRecord {
  ModelMeta meta;
  LayerProfile profile;
  double attack_success_rate = 0.0;
};

struct RegressionReport {
  std::vector<std::string> feature_names;
  std::vector<double> coefficients;  // in original feature units
  double intercept = 0.0;
  double r2 = 0.0;
  std::vector<double> permutation_delta_r2;
  std::size_t n_permutations = 0;
  std::uint64_t seed = 0;
};

inline double vulnerability_score(const LayerProfile& profile) {
  if (profile.entries.empty()) throw ValidationError("empty-profile", "profile has no layers");
  double s = 0.0;
  for (const auto& e : profile.entries) s += e.estimate.value;
  return s / static_cast<double>(profile.entries.size());
}

inline std::vector<std::string> regression_feature_names() {
  return {"encoder_only", "decoder_only", "encoder_decoder", "log_params", "vulnerability_score"};
}

// Design-matrix row: three family indicators, log parameter count, vulnerability score.
inline std::vector<double> encode_features(const ModelRecord& r) {
  const auto f = r.meta.family;
  return {f == ModelFamily::EncoderOnly ? 1.0 : 0.0, f == ModelFamily::DecoderOnly ? 1.0 : 0.0,
          f == ModelFamily::EncoderDecoder ? 1.0 : 0.0, std::log(static_cast<double>(r.meta.param_count)),
          vulnerability_score(r.profile)};
}

inline double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& pred) {
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot == 0.0) return 0.0;
  return 1.0 - (y - pred).squaredNorm() / ss_tot;
}

inline Eigen::VectorXd predict(const RegressionReport& rep, const Eigen::MatrixXd& X) {
  Eigen::VectorXd beta = Eigen::Map<const Eigen::VectorXd>(rep.coefficients.data(),
                                                           static_cast<Eigen::Index>(rep.coefficients.size()));
  return (X * beta).array() + rep.intercept;
}

// Ridge on standardized columns with an unpenalized intercept; coefficients are
// mapped back to the original units. Constant columns get coefficient 0.
inline RegressionReport ridge_regress(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha,
                                      std::vector<std::string> names = {}) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n < 1 || d < 1) throw ValidationError("regression-shape", "regression needs n >= 1 rows and d >= 1 features");
  if (y.size() != n) throw ValidationError("regression-shape", "target length does not match feature rows");
  if (!(alpha >= 0.0)) throw ValidationError("regression-alpha", "alpha must be >= 0");
  if (!X.allFinite() || !y.allFinite()) throw ValidationError("non-finite", "regression inputs must be finite");
  if (names.empty())
    for (Eigen::Index j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
  if (static_cast<Eigen::Index>(names.size()) != d)
    throw ValidationError("regression-shape", "feature name count does not match columns");

  const Eigen::RowVectorXd mean = X.colwise().mean();
  Eigen::RowVectorXd scale(d);
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var = (X.col(j).array() - mean(j)).square().mean();
    scale(j) = std::sqrt(var);
    if (scale(j) > 0.0) active.push_back(j);
  }

  RegressionReport rep;
  rep.feature_names = std::move(names);
  rep.coefficients.assign(static_cast<std::size_t>(d), 0.0);
  const double y_mean = y.mean();

  if (!active.empty()) {
    const auto a = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd Z(n, a);
    for (Eigen::Index c = 0; c < a; ++c) {
      const Eigen::Index j = active[static_cast<std::size_t>(c)];
      Z.col(c) = (X.col(j).array() - mean(j)) / scale(j);
    }
    Eigen::MatrixXd gram = Z.transpose() * Z;
    gram.diagonal().array() += alpha;
    if (alpha == 0.0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
      const double hi = es.eigenvalues().maxCoeff();
      if (!(es.eigenvalues().minCoeff() > 1e-12 * std::max(hi, 1.0)))
        throw RuntimeError("rank-deficient", "feature matrix is rank-deficient and alpha = 0");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) throw RuntimeError("rank-deficient", "normal equations are not positive definite");
    const Eigen::VectorXd beta = llt.solve(Z.transpose() * (y.array() - y_mean).matrix());
    for (Eigen::Index c = 0; c < a; ++c) {
      const Eigen::Index j = active[static_cast<std::size_t>(c)];
      rep.coefficients[static_cast<std::size_t>(j)] = beta(c) / scale(j);
    }
  }
  rep.intercept = y_mean;
  for (Eigen::Index j = 0; j < d; ++j) rep.intercept -= rep.coefficients[static_cast<std::size_t>(j)] * mean(j);
  rep.r2 = r_squared(y, predict(rep, X));
  return rep;
}

// Drop in training R^2 when one column is permuted, averaged over n_perm
// permutations of the fitted model's inputs (no refit). Permutation t of
// feature f uses SplitMix64(derive_seed(derive_seed(seed, f), t)).
inline std::vector<double> permutation_importance(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha,
                                                  std::size_t n_perm, std::uint64_t seed,
                                                  const RegressionReport* fitted = nullptr) {
  if (n_perm == 0) throw ValidationError("n-perm", "n_perm must be >= 1");
  RegressionReport local;
  if (!fitted) {
    local = ridge_regress(X, y, alpha);
    fitted = &local;
  }
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<double> delta(static_cast<std::size_t>(X.cols()), 0.0);
  for (Eigen::Index f = 0; f < X.cols(); ++f) {
    const std::uint64_t fseed = derive_seed(seed, static_cast<std::uint64_t>(f));
    double total = 0.0;
    Eigen::MatrixXd Xp = X;
    for (std::size_t t = 0; t < n_perm; ++t) {
      SplitMix64 rng(derive_seed(fseed, t));
      const auto perm = permutation(rng, n);
      for (std::size_t i = 0; i < n; ++i)
        Xp(static_cast<Eigen::Index>(i), f) = X(static_cast<Eigen::Index>(perm[i]), f);
      total += fitted->r2 - r_squared(y, predict(*fitted, Xp));
    }
    delta[static_cast<std::size_t>(f)] = total / static_cast<double>(n_perm);
  }
  return delta;
}

inline RegressionReport regress_with_importance(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha,
                                                std::size_t n_perm, std::uint64_t seed,
                                                std::vector<std::string> names = {}) {
  auto rep = ridge_regress(X, y, alpha, std::move(names));
  rep.permutation_delta_r2 = permutation_importance(X, y, alpha, n_perm, seed, &rep);
  rep.n_permutations = n_perm;
  rep.seed = seed;
  return rep;
}

inline std::string to_csv(const RegressionReport& rep) {
  csv::Table t;
  t.header = {"feature", "coefficient", "delta_r2"};
  for (std::size_t j = 0; j < rep.feature_names.size(); ++j)
    t.rows.push_back({rep.feature_names[j], csv::num(rep.coefficients[j]),
                      j < rep.permutation_delta_r2.size() ? csv::num(rep.permutation_delta_r2[j]) : ""});
  t.rows.push_back({"(intercept)", csv::num(rep.intercept), ""});
  t.rows.push_back({"(r2)", csv::num(rep.r2), ""});
  return t.str();
}

inline std::string to_text(const RegressionReport& rep) {
  std::string s = "regression:\n";
  s += "  r2: " + csv::num(rep.r2) + "\n";
  s += "  intercept: " + csv::num(rep.intercept) + "\n";
  s += "  n_permutations: " + std::to_string(rep.n_permutations) + "\n";
  s += "  seed: " + std::to_string(rep.seed) + "\n";
  for (std::size_t j = 0; j < rep.feature_names.size(); ++j) {
    s += "  " + rep.feature_names[j] + ": coefficient=" + csv::num(rep.coefficients[j]);
    if (j < rep.permutation_delta_r2.size()) s += " delta_r2=" + csv::num(rep.permutation_delta_r2[j]);
    s += "\n";
  }
  return s;
}

struct RegressionData {
  std::vector<std::string> names;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

// Header row: feature names plus the target column.
inline RegressionData regression_data_from_csv(const csv::Table& t, const std::string& target) {
  const auto it = std::find(t.header.begin(), t.header.end(), target);
  if (it == t.header.end()) throw ValidationError("missing-target", "target column '" + target + "' not found");
  const auto tcol = static_cast<std::size_t>(it - t.header.begin());
  RegressionData d;
  for (std::size_t c = 0; c < t.header.size(); ++c)
    if (c != tcol) d.names.push_back(t.header[c]);
  if (d.names.empty()) throw ValidationError("regression-shape", "no feature columns besides the target");
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  d.X.resize(n, static_cast<Eigen::Index>(d.names.size()));
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    Eigen::Index f = 0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double v = csv::parse_double(row[c], "row " + std::to_string(i + 1) + ", column " + t.header[c]);
      if (c == tcol)
        d.y(i) = v;
      else
        d.X(i, f++) = v;
    }
  }
  return d;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

// Average ranks (1-based), ties share their mean rank.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

enum class Correlation { Pearson, Spearman };

struct DepthBin {
  double lower = 0.0;  // relative-depth interval (lower, upper]
  double upper = 0.0;
  std::size_t models = 0;
  std::optional<double> correlation;  // undefined with < 3 models or zero variance
};

inline std::size_t depth_bin(double relative_depth, std::size_t bins) {
  const auto b = static_cast<std::size_t>(std::ceil(relative_depth * static_cast<double>(bins)));
  return std::clamp<std::size_t>(b, 1, bins) - 1;
}

inline std::vector<DepthBin> depth_correlation(const std::vector<ModelRecord>& records, std::size_t bins = 9,
                                               Correlation method = Correlation::Pearson) {
  if (records.size() < 3) throw ValidationError("too-few-records", "depth correlation needs at least 3 model records");
  if (bins < 1) throw ValidationError("bins", "bins must be >= 1");
  std::vector<std::vector<double>> xs(bins), ys(bins);
  for (const auto& rec : records) {
    if (rec.profile.entries.empty()) throw ValidationError("empty-profile", "model '" + rec.meta.model_id + "' has an empty profile");
    std::vector<double> sum(bins, 0.0);
    std::vector<std::size_t> cnt(bins, 0);
    for (const auto& e : rec.profile.entries) {
      const auto b = depth_bin(e.relative_depth, bins);
      sum[b] += e.estimate.value;
      ++cnt[b];
    }
    for (std::size_t b = 0; b < bins; ++b)
      if (cnt[b]) {
        xs[b].push_back(sum[b] / static_cast<double>(cnt[b]));
        ys[b].push_back(rec.attack_success_rate);
      }
  }
  std::vector<DepthBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    auto& bin = out[b];
    bin.lower = static_cast<double>(b) / static_cast<double>(bins);
    bin.upper = static_cast<double>(b + 1) / static_cast<double>(bins);
    bin.models = xs[b].size();
    if (bin.models < 3) continue;
    double r = 0.0;
    if (method == Correlation::Pearson) {
      r = pearson(xs[b], ys[b]);
    } else {
      const auto rx = ranks(xs[b]), ry = ranks(ys[b]);
      r = pearson(rx, ry);
    }
    if (!std::isnan(r)) bin.correlation = r;
  }
  return out;
}

inline std::string to_csv(const std::vector<DepthBin>& bins) {
  csv::Table t;
  t.header = {"bin", "depth_lower", "depth_upper", "models", "correlation"};
  for (std::size_t b = 0; b < bins.size(); ++b)
    t.rows.push_back({std::to_string(b + 1), csv::num(bins[b].lower), csv::num(bins[b].upper),
                      std::to_string(bins[b].models),
                      bins[b].correlation ? csv::num(*bins[b].correlation) : "undefined"});
  return t.str();
}

// |flipped and correct| / |correct|; 0 when nothing is correctly classified.
inline double attack_success_rate(const std::vector<bool>& correct, const std::vector<bool>& flipped) {
  if (correct.size() != flipped.size())
    throw ValidationError("mask-length", "correct and adversarial masks differ in length");
  std::size_t c = 0, f = 0;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    if (!correct[i]) continue;
    ++c;
    if (flipped[i]) ++f;
  }
  return c == 0 ? 0.0 : static_cast<double>(f) / static_cast<double>(c);
}

// Long-format ingestion: one row per (model, layer) with columns
// model_id, relative_depth, epsilon, attack_success_rate.
inline std::vector<ModelRecord> records_from_csv(const csv::Table& t) {
  auto col = [&](const std::string& name) {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw ValidationError("missing-column", "column '" + name + "' not found");
    return static_cast<std::size_t>(it - t.header.begin());
  };
  const auto cm = col("model_id"), cd = col("relative_depth"), ce = col("epsilon"), ca = col("attack_success_rate");
  std::vector<ModelRecord> out;
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string where = "row " + std::to_string(i + 1);
    const auto [it, inserted] = pos.emplace(row[cm], out.size());
    if (inserted) {
      out.emplace_back();
      out.back().meta.model_id = row[cm];
      out.back().attack_success_rate = csv::parse_double(row[ca], where);
    }
    LayerProfileEntry e;
    e.layer = out[it->second].profile.entries.size() + 1;
    e.relative_depth = csv::parse_double(row[cd], where);
    if (!(e.relative_depth > 0.0 && e.relative_depth <= 1.0))
      throw ValidationError("relative-depth", where + ": relative_depth must lie in (0, 1]");
    e.estimate.layer = e.layer;
    e.estimate.value = csv::parse_double(row[ce], where);
    out[it->second].profile.entries.push_back(e);
  }
  return out;
}

}  // namespace kc
