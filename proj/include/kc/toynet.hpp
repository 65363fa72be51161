#pragma once

// A small fully-connected network whose post-activation vectors form its
// metric decomposition (each layer under l2, the output logits included).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kc/datamodel.hpp"
#include "kc/error.hpp"
#include "kc/rng.hpp"

namespace kc {

enum class Activation : std::uint8_t { ReLU = 0, Tanh = 1, Identity = 2 };

struct DenseLayer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;
  Activation act = Activation::Identity;
};

struct ToyNet {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> layers;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t num_classes() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().b.size()); }
  std::size_t param_count() const {
    std::size_t c = 0;
    for (const auto& l : layers) c += static_cast<std::size_t>(l.W.size() + l.b.size());
    return c;
  }
};

inline void validate(const ToyNet& net) {
  if (net.layers.empty()) throw ValidationError("net", "network has no layers");
  std::size_t in = net.input_dim;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& L = net.layers[l];
    if (static_cast<std::size_t>(L.W.cols()) != in || L.W.rows() != L.b.size() || L.W.rows() < 1)
      throw ValidationError("net", "layer " + std::to_string(l + 1) + " width is incompatible with its input");
    in = static_cast<std::size_t>(L.W.rows());
  }
  if (net.num_classes() < 2) throw ValidationError("net", "final layer must have at least 2 classes");
}

// widths = {input, hidden..., classes}; hidden layers use `hidden`, the last
// layer is Identity. Weights ~ N(0, gain / fan_in), biases 0.
inline ToyNet make_net(const std::vector<std::size_t>& widths, Activation hidden, std::uint64_t seed) {
  if (widths.size() < 2) throw ValidationError("net", "need at least input and output widths");
  SplitMix64 rng(seed);
  ToyNet net;
  net.input_dim = widths.front();
  for (std::size_t l = 1; l < widths.size(); ++l) {
    DenseLayer layer;
    const auto out = static_cast<Eigen::Index>(widths[l]), in = static_cast<Eigen::Index>(widths[l - 1]);
    layer.act = (l + 1 == widths.size()) ? Activation::Identity : hidden;
    const double gain = layer.act == Activation::ReLU ? 2.0 : 1.0;
    const double sd = std::sqrt(gain / static_cast<double>(in));
    layer.W.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) layer.W(r, c) = sd * rng.normal();
    layer.b = Eigen::VectorXd::Zero(out);
    net.layers.push_back(std::move(layer));
  }
  validate(net);
  return net;
}

inline Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::ReLU: return z.cwiseMax(0.0);
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Identity: return z;
  }
  return z;
}

// d post / d pre given pre and post.
inline Eigen::MatrixXd activation_derivative(Activation a, const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post) {
  switch (a) {
    case Activation::ReLU: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh: return (1.0 - post.array().square()).matrix();
    case Activation::Identity: return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
  }
  return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
}

// Batch trace: row i of post[l] is layer l+1's post-activation for example i.
struct ForwardTrace {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> post;

  const Eigen::MatrixXd& logits() const { return post.back(); }
};

inline ForwardTrace forward(const ToyNet& net, const Eigen::MatrixXd& X) {
  if (static_cast<std::size_t>(X.cols()) != net.input_dim)
    throw ValidationError("dimension-mismatch", "input width " + std::to_string(X.cols()) + " does not match network input " +
                                                    std::to_string(net.input_dim));
  ForwardTrace t;
  t.input = X;
  t.pre.reserve(net.layers.size());
  t.post.reserve(net.layers.size());
  const Eigen::MatrixXd* h = &t.input;
  for (const auto& L : net.layers) {
    Eigen::MatrixXd z = (*h) * L.W.transpose();
    z.rowwise() += L.b.transpose();
    t.post.push_back(apply_activation(L.act, z));
    t.pre.push_back(std::move(z));
    h = &t.post.back();
  }
  return t;
}

// Per-example softmax cross-entropy and its gradient wrt the logits.
inline Eigen::VectorXd cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& y,
                                     Eigen::MatrixXd* dlogits = nullptr) {
  const auto n = logits.rows();
  if (static_cast<std::size_t>(n) != y.size()) throw ValidationError("labels", "label count does not match batch");
  Eigen::VectorXd loss(n);
  if (dlogits) dlogits->resize(n, logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int yi = y[static_cast<std::size_t>(i)];
    if (yi < 0 || yi >= logits.cols()) throw ValidationError("labels", "label out of range");
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
    const double s = e.sum();
    loss(i) = std::log(s) + mx - logits(i, yi);
    if (dlogits) {
      dlogits->row(i) = e / s;
      (*dlogits)(i, yi) -= 1.0;
    }
  }
  return loss;
}

inline std::vector<int> predict_labels(const Eigen::MatrixXd& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

struct Gradients {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;
  Eigen::MatrixXd dinput;

  double squared_norm() const {
    double s = 0.0;
    for (const auto& m : dW) s += m.squaredNorm();
    for (const auto& v : db) s += v.squaredNorm();
    return s;
  }
};

// Backpropagates upstream gradients. `dpost_extra[l]`, when non-empty, is
// added to the gradient of layer l+1's post-activation; `dlogits` seeds the
// last layer.
inline Gradients backward(const ToyNet& net, const ForwardTrace& t, const Eigen::MatrixXd& dlogits,
                          const std::vector<Eigen::MatrixXd>& dpost_extra = {}) {
  const std::size_t L = net.layers.size();
  Gradients g;
  g.dW.resize(L);
  g.db.resize(L);
  Eigen::MatrixXd dpost = dlogits;
  for (std::size_t l = L; l-- > 0;) {
    if (l < dpost_extra.size() && dpost_extra[l].size() > 0) dpost += dpost_extra[l];
    const auto& layer = net.layers[l];
    const Eigen::MatrixXd dpre = dpost.cwiseProduct(activation_derivative(layer.act, t.pre[l], t.post[l]));
    const Eigen::MatrixXd& below = l == 0 ? t.input : t.post[l - 1];
    g.dW[l] = dpre.transpose() * below;
    g.db[l] = dpre.colwise().sum().transpose();
    dpost = dpre * layer.W;
  }
  g.dinput = std::move(dpost);
  return g;
}

// Row-major example matrix plus integer labels.
struct LabeledData {
  Eigen::MatrixXd X;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
};

inline LabeledData select_rows(const LabeledData& d, const std::vector<std::size_t>& idx) {
  LabeledData out;
  out.X.resize(static_cast<Eigen::Index>(idx.size()), d.X.cols());
  out.y.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) = d.X.row(static_cast<Eigen::Index>(idx[i]));
    out.y[i] = d.y[idx[i]];
  }
  return out;
}

// Interleaving half-circles in 2-D, class 0 outer and class 1 inner, with
// isotropic Gaussian noise; rows are shuffled.
inline LabeledData two_moons(std::size_t n, double noise, std::uint64_t seed) {
  SplitMix64 rng(seed);
  LabeledData d;
  d.X.resize(static_cast<Eigen::Index>(n), 2);
  d.y.resize(n);
  const std::size_t outer = (n + 1) / 2;
  constexpr double pi = 3.141592653589793;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = pi * rng.uniform();
    const bool inner = i >= outer;
    const double x0 = inner ? 1.0 - std::cos(t) : std::cos(t);
    const double x1 = inner ? 0.5 - std::sin(t) : std::sin(t);
    d.X(static_cast<Eigen::Index>(i), 0) = x0 + noise * rng.normal();
    d.X(static_cast<Eigen::Index>(i), 1) = x1 + noise * rng.normal();
    d.y[i] = inner ? 1 : 0;
  }
  return select_rows(d, permutation(rng, n));
}

// Isotropic Gaussian blobs around the given centres, labelled by centre.
inline LabeledData gaussian_blobs(std::size_t n, const std::vector<std::vector<double>>& centers, double stddev,
                                  std::uint64_t seed) {
  if (centers.empty()) throw ValidationError("blobs", "need at least one centre");
  SplitMix64 rng(seed);
  const auto dim = static_cast<Eigen::Index>(centers.front().size());
  LabeledData d;
  d.X.resize(static_cast<Eigen::Index>(n), dim);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % centers.size();
    for (Eigen::Index j = 0; j < dim; ++j)
      d.X(static_cast<Eigen::Index>(i), j) = centers[c][static_cast<std::size_t>(j)] + stddev * rng.normal();
    d.y[i] = static_cast<int>(c);
  }
  return select_rows(d, permutation(rng, n));
}

enum class ExportLoss { CrossEntropy, ZeroOne };

// Traces the network on `data` as an ActivationDataset: one l2 layer per
// post-activation, labels attached, values rounded to f32 so the dataset
// survives a dump round trip unchanged.
inline ActivationDataset export_activations(const ToyNet& net, const LabeledData& data, ExportLoss loss_kind,
                                            ModelMeta meta = {}) {
  const auto t = forward(net, data.X);
  const Eigen::VectorXd ce = cross_entropy(t.logits(), data.y);
  const auto pred = predict_labels(t.logits());
  const std::size_t n = data.size();
  ActivationDataset ds;
  ds.example_ids.resize(n);
  ds.losses.resize(n);
  ds.labels.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.example_ids[i] = i;
    const double l = loss_kind == ExportLoss::CrossEntropy ? ce(static_cast<Eigen::Index>(i))
                                                           : (pred[i] == data.y[i] ? 0.0 : 1.0);
    ds.losses[i] = static_cast<float>(l);
    (*ds.labels)[i] = static_cast<std::uint32_t>(data.y[i]);
  }
  for (std::size_t l = 0; l < t.post.size(); ++l) {
    LayerBlock b;
    b.index = static_cast<std::uint32_t>(l + 1);
    b.dim = static_cast<std::size_t>(t.post[l].cols());
    b.metric = MetricSpec::l2();
    b.values.resize(n * b.dim);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < b.dim; ++c)
        b.values[i * b.dim + c] = static_cast<float>(t.post[l](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
    ds.layers.push_back(std::move(b));
  }
  if (meta.model_id.empty()) meta.model_id = "toynet";
  meta.param_count = std::max<std::uint64_t>(net.param_count(), 1);
  ds.model_meta = std::move(meta);
  validate(ds);
  return ds;
}

// Weights file: "KCW1" | u32 version | u32 input_dim | u32 L |
// L x { u32 out | u8 activation | out*in f64 (row-major W) | out f64 (b) }.
inline constexpr std::uint32_t kWeightsVersion = 1;

inline void save_weights(const ToyNet& net, const std::filesystem::path& path) {
  validate(net);
  std::vector<std::uint8_t> buf;
  auto put = [&](auto v) {
    using U = decltype(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  for (char c : {'K', 'C', 'W', '1'}) buf.push_back(static_cast<std::uint8_t>(c));
  put(kWeightsVersion);
  put(static_cast<std::uint32_t>(net.input_dim));
  put(static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& L : net.layers) {
    put(static_cast<std::uint32_t>(L.W.rows()));
    buf.push_back(static_cast<std::uint8_t>(L.act));
    for (Eigen::Index r = 0; r < L.W.rows(); ++r)
      for (Eigen::Index c = 0; c < L.W.cols(); ++c) put(std::bit_cast<std::uint64_t>(L.W(r, c)));
    for (Eigen::Index r = 0; r < L.b.size(); ++r) put(std::bit_cast<std::uint64_t>(L.b(r)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("io", "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline ToyNet load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("io", "cannot open " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto get = [&](auto tag) {
    using U = decltype(tag);
    if (buf.size() - pos < sizeof(U)) throw ValidationError("weights", "truncated weights file at byte " + std::to_string(pos));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[pos + i]) << (8 * i);
    pos += sizeof(U);
    return v;
  };
  if (buf.size() < 4 || std::string(buf.begin(), buf.begin() + 4) != "KCW1")
    throw ValidationError("weights", "bad magic, expected \"KCW1\"");
  pos = 4;
  if (get(std::uint32_t{}) != kWeightsVersion) throw ValidationError("weights", "unsupported weights version");
  ToyNet net;
  net.input_dim = get(std::uint32_t{});
  const std::uint32_t L = get(std::uint32_t{});
  std::size_t in_dim = net.input_dim;
  for (std::uint32_t l = 0; l < L; ++l) {
    DenseLayer layer;
    const auto out = static_cast<Eigen::Index>(get(std::uint32_t{}));
    const auto act = get(std::uint8_t{});
    if (act > 2) throw ValidationError("weights", "unknown activation tag");
    layer.act = static_cast<Activation>(act);
    layer.W.resize(out, static_cast<Eigen::Index>(in_dim));
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < layer.W.cols(); ++c) layer.W(r, c) = std::bit_cast<double>(get(std::uint64_t{}));
    layer.b.resize(out);
    for (Eigen::Index r = 0; r < out; ++r) layer.b(r) = std::bit_cast<double>(get(std::uint64_t{}));
    in_dim = static_cast<std::size_t>(out);
    net.layers.push_back(std::move(layer));
  }
  if (pos != buf.size()) throw ValidationError("weights", "trailing bytes in weights file");
  validate(net);
  return net;
}

}  // namespace kc
