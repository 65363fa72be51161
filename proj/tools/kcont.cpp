// kcont: command-line front end for the kc library.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error. Errors are
// reported on stderr as a single line:
//   error class=<validation|runtime> code=<code> message=<text>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kc/kc.hpp"

namespace {

constexpr int kConfigVersion = 1;

// Flat key=value config: '#' starts a comment line, keys are long flag names.
// config_version must be 1 when present.
std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw kc::ValidationError("config", "cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw kc::ValidationError("config", path + ":" + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  if (const auto it = kv.find("config_version"); it != kv.end()) {
    if (it->second != std::to_string(kConfigVersion))
      throw kc::ValidationError("config-version", "unsupported config_version " + it->second + " (expected " +
                                                      std::to_string(kConfigVersion) + ")");
    kv.erase(it);
  }
  return kv;
}

// Splices config entries into argv as --key=value unless the flag was given
// on the command line, so flags override the file.
std::vector<std::string> apply_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  for (const auto& [key, value] : read_config(path)) {
    const std::string flag = "--" + key;
    bool given = false;
    for (const auto& a : args) given = given || a == flag || a.rfind(flag + "=", 0) == 0;
    if (!given) args.push_back(flag + "=" + value);
  }
  return args;
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
  } else {
    kc::write_text(out, text);
  }
}

void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning message=" << w << "\n";
}

kc::ActivationDataset open_dump(const std::string& path) { return kc::load_dump(path); }

int fail(const char* cls, const std::string& code, const std::string& msg, int status) {
  std::string m = msg;
  for (auto& ch : m)
    if (ch == '\n') ch = ' ';
  std::cerr << "error class=" << cls << " code=" << code << " message=" << m << "\n";
  return status;
}

const char* kEstimateColumns =
    "Output columns: layer,relative_depth,epsilon,mode,M,seed,included_pairs,skipped_pairs";
const char* kCertificateColumns =
    "Output columns: layer,delta,eta,confidence,k_boot,seed,B_hat,eps_upper,certified_prob,vacuous";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-continuity toolkit: volatility estimation, certification, regression, toy training."};
  app.require_subcommand(1);
  app.set_version_flag("--version", "kcont 1.0");
  app.footer(
      "Config files: --config FILE with key=value lines using long flag names; flags override the file.\n"
      "KC_THREADS caps the worker count; results do not depend on it.\n"
      "Exit codes: 0 success, 1 validation error, 2 runtime error.");

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file (flags override)");
  };

  // estimate
  struct {
    std::string dump, out;
    std::size_t layer = 0, M = 0;
    std::uint64_t seed = 0;
    bool exact = false;
  } est;
  auto* c_est = app.add_subcommand("estimate", "Estimate k-volatility of one layer or every layer");
  c_est->add_option("--dump", est.dump, "activation dump (KCD1)")->required();
  c_est->add_option("--layer", est.layer, "1-based layer index (default: all layers)");
  c_est->add_option("--M", est.M, "Monte Carlo subset size");
  c_est->add_option("--seed", est.seed, "Monte Carlo seed");
  c_est->add_flag("--exact", est.exact, "also compute the exact all-pairs value");
  c_est->add_option("--out", est.out, "output CSV (default stdout)");
  c_est->footer(kEstimateColumns);
  add_config(c_est);

  // profile
  struct {
    std::string dump, out;
    std::size_t M = 0;
    std::uint64_t seed = 0;
    bool exact = false;
  } prof;
  auto* c_prof = app.add_subcommand("profile", "Volatility at every layer against relative depth");
  c_prof->add_option("--dump", prof.dump, "activation dump (KCD1)")->required();
  c_prof->add_option("--M", prof.M, "Monte Carlo subset size");
  c_prof->add_option("--seed", prof.seed, "Monte Carlo seed");
  c_prof->add_flag("--exact", prof.exact, "use the exact all-pairs value");
  c_prof->add_option("--out", prof.out, "output CSV (default stdout)");
  c_prof->footer(kEstimateColumns);
  add_config(c_prof);

  // certify
  struct {
    std::string dump, out;
    kc::CertifyRequest req;
  } cert;
  auto* c_cert = app.add_subcommand("certify", "Certificate table over a (delta, eta) grid");
  c_cert->add_option("--dump", cert.dump, "activation dump with 0-1 losses (KCD1)")->required();
  c_cert->add_option("--layer", cert.req.layer, "1-based layer index")->required();
  c_cert->add_option("--deltas", cert.req.deltas, "comma-separated radii")->required()->delimiter(',');
  c_cert->add_option("--etas", cert.req.etas, "comma-separated loss thresholds")->required()->delimiter(',');
  c_cert->add_option("--confidence", cert.req.confidence, "one-sided bootstrap confidence")->capture_default_str();
  c_cert->add_option("--k-boot", cert.req.k_boot, "bootstrap resamples")->capture_default_str();
  c_cert->add_option("--seed", cert.req.seed, "bootstrap seed")->capture_default_str();
  c_cert->add_option("--out", cert.out, "output CSV (default stdout)");
  c_cert->footer(std::string(kCertificateColumns) + "\nRows are delta-major; vacuous=1 marks cells outside the valid regime.");
  add_config(c_cert);

  // regress
  struct {
    std::string csv, target, out;
    double alpha = 1.0;
    std::size_t n_perm = 100;
    std::uint64_t seed = 0;
  } reg;
  auto* c_reg = app.add_subcommand("regress", "Ridge regression with permutation importance");
  c_reg->add_option("--csv", reg.csv, "features CSV with a header row")->required();
  c_reg->add_option("--target", reg.target, "target column name")->required();
  c_reg->add_option("--alpha", reg.alpha, "ridge penalty")->capture_default_str();
  c_reg->add_option("--n-perm", reg.n_perm, "permutations per feature")->capture_default_str();
  c_reg->add_option("--seed", reg.seed, "permutation seed")->capture_default_str();
  c_reg->add_option("--out", reg.out, "output CSV (default stdout)");
  c_reg->footer("Output columns: feature,coefficient,delta_r2; trailing rows (intercept) and (r2).");
  add_config(c_reg);

  // pairwise
  struct {
    std::string dump, out;
    std::size_t layer = 1;
  } pw;
  auto* c_pw = app.add_subcommand("pairwise", "Export the pairwise distance matrix of one layer");
  c_pw->add_option("--dump", pw.dump, "activation dump (KCD1)")->required();
  c_pw->add_option("--layer", pw.layer, "1-based layer index")->required();
  c_pw->add_option("--out", pw.out, "output CSV (default stdout)");
  c_pw->footer("Output: header row of example indices, then one row per example (row-major).");
  add_config(c_pw);

  // depth-corr
  struct {
    std::string csv, method = "pearson", out;
    std::size_t bins = 9;
  } dc;
  auto* c_dc = app.add_subcommand("depth-corr", "Per-depth-bin correlation of volatility with attack success");
  c_dc->add_option("--csv", dc.csv, "long CSV: model_id,relative_depth,epsilon,attack_success_rate")->required();
  c_dc->add_option("--bins", dc.bins, "relative-depth bins")->capture_default_str();
  c_dc->add_option("--method", dc.method, "pearson or spearman")
      ->check(CLI::IsMember({"pearson", "spearman"}))
      ->capture_default_str();
  c_dc->add_option("--out", dc.out, "output CSV (default stdout)");
  c_dc->footer("Output columns: bin,depth_lower,depth_upper,models,correlation");
  add_config(c_dc);

  // train-demo
  kc::DemoConfig demo;
  std::string demo_dir, optimizer = "adam", normalization = "m2";
  auto* c_demo = app.add_subcommand("train-demo", "Train control and regularized two-moons nets, then compare");
  c_demo->add_option("--out-dir", demo_dir, "artifact directory")->required();
  c_demo->add_option("--seed", demo.seed, "top-level seed")->capture_default_str();
  c_demo->add_option("--n-train", demo.n_train, "training points")->capture_default_str();
  c_demo->add_option("--n-test", demo.n_test, "test points")->capture_default_str();
  c_demo->add_option("--noise", demo.noise, "two-moons noise")->capture_default_str();
  c_demo->add_option("--hidden", demo.hidden, "hidden width (2-h-h-2 ReLU)")->capture_default_str();
  c_demo->add_option("--epochs", demo.epochs, "training epochs")->capture_default_str();
  c_demo->add_option("--optimizer", optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  c_demo->add_option("--lr", demo.optimizer.learning_rate,
                     "learning rate (1e-2 suits toy scale; LLM fine-tuning rates are far smaller)")
      ->capture_default_str();
  c_demo->add_option("--batch-size", demo.optimizer.batch_size, "minibatch size")->capture_default_str();
  c_demo->add_option("--max-grad-norm", demo.optimizer.max_grad_norm, "gradient clipping (<= 0 disables)")
      ->capture_default_str();
  c_demo->add_option("--lambda", demo.kcreg.lambda, "regularization weight")->capture_default_str();
  c_demo->add_option("--beta-a", demo.kcreg.beta_a, "Beta alpha for layer sampling")->capture_default_str();
  c_demo->add_option("--beta-b", demo.kcreg.beta_b, "Beta beta for layer sampling")->capture_default_str();
  c_demo->add_option("--M", demo.kcreg.M, "regularizer subset size")->capture_default_str();
  c_demo->add_option("--normalization", normalization, "m2 (pair sum / M^2) or mean (mean over included pairs)")
      ->check(CLI::IsMember({"m2", "mean"}))
      ->capture_default_str();
  c_demo->add_flag("--stop-grad-denominator", demo.kcreg.stop_gradient_denominator,
                   "do not differentiate through distances");
  c_demo->add_flag("--control-only", demo.control_only, "train only the lambda=0 control");
  c_demo->add_option("--profile-M", demo.profile_M, "profile subset size (0 = exact)")->capture_default_str();
  c_demo->add_option("--attack-eps", demo.attack_eps, "comma-separated FGSM radii")->delimiter(',');
  c_demo->add_option("--delta-multiples", demo.delta_multiples,
                     "certification radii as multiples of the largest middle-layer diameter")
      ->delimiter(',');
  c_demo->add_option("--etas", demo.etas, "comma-separated loss thresholds")->delimiter(',');
  c_demo->add_option("--confidence", demo.confidence, "bootstrap confidence")->capture_default_str();
  c_demo->add_option("--k-boot", demo.k_boot, "bootstrap resamples")->capture_default_str();
  c_demo->add_option("--capture-date", demo.capture_date, "capture_date written to manifests")->capture_default_str();
  c_demo->footer(
      "Artifacts per variant (control, kcreg): _weights.kcw, _test_ce.kcd, _test_01.kcd (+ .manifest),\n"
      "_history.csv, _steps.csv, _robustness.csv, _profile.csv, _certificates.csv; plus summary.csv.\n"
      "summary.csv columns: variant,lambda,train_accuracy,test_accuracy,middle_layer,middle_epsilon,eps_upper");
  add_config(c_demo);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = apply_config(std::move(args));
    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
      app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      return fail("validation", "usage", e.what(), 1);
    }

    if (c_est->parsed()) {
      if (est.M == 0 && !est.exact) throw kc::ValidationError("usage", "estimate needs --M or --exact");
      const auto ds = open_dump(est.dump);
      std::vector<std::size_t> layers;
      if (est.layer != 0) {
        ds.layer(est.layer);
        layers.push_back(est.layer);
      } else {
        for (std::size_t k = 1; k <= ds.num_layers(); ++k) layers.push_back(k);
      }
      kc::csv::Table t;
      t.header = kc::estimate_header();
      const double L = static_cast<double>(ds.num_layers());
      for (auto k : layers) {
        if (est.exact)
          t.rows.push_back(kc::estimate_row(kc::expected_volatility_exact(ds, k), static_cast<double>(k) / L));
        if (est.M != 0)
          t.rows.push_back(kc::estimate_row(kc::est_k_vol(ds, k, est.M, est.seed), static_cast<double>(k) / L));
      }
      emit(est.out, t.str());
    } else if (c_prof->parsed()) {
      if (prof.M == 0 && !prof.exact) throw kc::ValidationError("usage", "profile needs --M or --exact");
      emit(prof.out, kc::to_csv(kc::layer_profile(open_dump(prof.dump), prof.M, prof.seed, prof.exact)));
    } else if (c_cert->parsed()) {
      const auto certs = kc::certify_grid(open_dump(cert.dump), cert.req);
      if (!certs.empty()) warn(certs.front().warnings);
      emit(cert.out, kc::to_csv(certs));
    } else if (c_reg->parsed()) {
      const auto data = kc::regression_data_from_csv(kc::csv::read(reg.csv), reg.target);
      emit(reg.out, kc::to_csv(kc::regress_with_importance(data.X, data.y, reg.alpha, reg.n_perm, reg.seed, data.names)));
    } else if (c_pw->parsed()) {
      emit(pw.out, kc::to_csv(kc::pairwise(open_dump(pw.dump).layer(pw.layer))));
    } else if (c_dc->parsed()) {
      const auto records = kc::records_from_csv(kc::csv::read(dc.csv));
      const auto method = dc.method == "spearman" ? kc::Correlation::Spearman : kc::Correlation::Pearson;
      emit(dc.out, kc::to_csv(kc::depth_correlation(records, dc.bins, method)));
    } else if (c_demo->parsed()) {
      demo.optimizer.kind = optimizer == "sgd" ? kc::Optimizer::SGD : kc::Optimizer::Adam;
      demo.kcreg.normalization = normalization == "mean" ? kc::PenaltyNormalization::MeanOverIncluded
                                                         : kc::PenaltyNormalization::PairSumOverMSquared;
      const auto res = kc::run_demo(demo);
      kc::write_demo(res, demo, demo_dir);
      std::cout << kc::demo_summary_csv(res);
    }
    std::cout.flush();
    return 0;
  } catch (const kc::Error& e) {
    const bool validation = e.error_class() == kc::ErrorClass::Validation;
    return fail(validation ? "validation" : "runtime", e.code(), e.what(), validation ? 1 : 2);
  } catch (const std::exception& e) {
    return fail("runtime", "internal", e.what(), 2);
  }
}
