#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <iterator>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fedoc/dataset.hpp"

namespace fedoc {

enum class ModelKind { Logistic, Mlp };

// Flat parameter layout (all blocks column-major):
//   logistic: W [d x C], b [C]
//   mlp:      W1 [d x h], b1 [h], W2 [h x C], b2 [C]
enum class Activation { Tanh, Relu };

struct Architecture {
  ModelKind kind = ModelKind::Logistic;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  std::size_t classes = 0;
  Activation activation = Activation::Tanh;  // mlp hidden layer

  std::size_t param_count() const {
    if (kind == ModelKind::Logistic) return input_dim * classes + classes;
    return input_dim * hidden + hidden + hidden * classes + classes;
  }
  bool operator==(const Architecture&) const = default;
};

struct ModelParams {
  Architecture arch;
  std::vector<double> w;

  std::size_t size() const { return w.size(); }
  bool operator==(const ModelParams&) const = default;
};

inline ModelParams init_model(const Architecture& arch, std::uint64_t seed) {
  check(arch.input_dim > 0 && arch.classes >= 2, "model: bad architecture");
  check(arch.kind == ModelKind::Logistic || arch.hidden > 0, "model: mlp needs a hidden width");
  ModelParams m{arch, std::vector<double>(arch.param_count(), 0.0)};
  Rng rng(derive_seed(seed, 0x1717));
  auto glorot = [&](std::size_t offset, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) m.w[offset + i] = rng.uniform(-limit, limit);
  };
  if (arch.kind == ModelKind::Logistic) {
    for (std::size_t i = 0; i < arch.input_dim * arch.classes; ++i) m.w[i] = 0.01 * rng.normal();
  } else {
    glorot(0, arch.input_dim, arch.hidden);
    glorot(arch.input_dim * arch.hidden + arch.hidden, arch.hidden, arch.classes);
  }
  return m;
}

inline bool all_finite(const ModelParams& m) {
  for (double v : m.w)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------

struct LrSchedule {
  enum class Kind { Exponential, Theoretical } kind = Kind::Exponential;
  double initial = 0.01;
  double decay = 0.995;  // per round
  std::size_t epochs = 5;  // E in 1 / (r (E - 1))

  static LrSchedule exponential(double eta0, double decay) { return {Kind::Exponential, eta0, decay, 0}; }
  static LrSchedule theoretical(std::size_t epochs) { return {Kind::Theoretical, 0.0, 0.0, epochs}; }

  bool operator==(const LrSchedule&) const = default;

  double rate(std::size_t round, std::size_t /*step*/) const {
    if (kind == Kind::Exponential) return initial * std::pow(decay, static_cast<double>(round));
    check(round >= 1, "theoretical learning rate is undefined for round 0");
    check(epochs >= 2, "theoretical learning rate needs E >= 2");
    return 1.0 / (static_cast<double>(round) * static_cast<double>(epochs - 1));
  }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

namespace detail {

inline RowMatrix gather(const Dataset& ds, std::span<const std::size_t> idx) {
  RowMatrix x(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(ds.dims));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto r = ds.row(idx[i]);
    std::copy(r.begin(), r.end(), x.row(static_cast<Eigen::Index>(i)).data());
  }
  return x;
}

// Owned copy of a parameter block. Eigen peels vectorised reductions according
// to the operand address, so running directly on std::vector storage would make
// the summation order depend on where the allocator put the model.
inline Eigen::MatrixXd block(const ModelParams& m, Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) {
  return ConstMatMap(m.w.data() + offset, rows, cols);
}

// Logits for a gathered batch. `hidden` receives the hidden activations for mlp.
inline RowMatrix forward(const ModelParams& m, const RowMatrix& x, RowMatrix* hidden) {
  const auto& a = m.arch;
  const auto d = static_cast<Eigen::Index>(a.input_dim);
  const auto C = static_cast<Eigen::Index>(a.classes);
  if (a.kind == ModelKind::Logistic) {
    const Eigen::MatrixXd W = block(m, 0, d, C);
    const Eigen::VectorXd b = block(m, d * C, C, 1);
    RowMatrix z = x * W;
    z.rowwise() += b.transpose();
    return z;
  }
  const auto h = static_cast<Eigen::Index>(a.hidden);
  const Eigen::MatrixXd W1 = block(m, 0, d, h);
  const Eigen::VectorXd b1 = block(m, d * h, h, 1);
  const Eigen::MatrixXd W2 = block(m, d * h + h, h, C);
  const Eigen::VectorXd b2 = block(m, d * h + h + h * C, C, 1);
  RowMatrix act = x * W1;
  act.rowwise() += b1.transpose();
  if (a.activation == Activation::Tanh) act = act.array().tanh().matrix();
  else act = act.array().max(0.0).matrix();
  RowMatrix z = act * W2;
  z.rowwise() += b2.transpose();
  if (hidden) *hidden = std::move(act);
  return z;
}

// In-place row softmax; returns the summed negative log-likelihood of `labels`.
inline double softmax_nll(RowMatrix& z, std::span<const int> labels) {
  double nll = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    const double s = row.sum();
    row /= s;
    const auto y = labels[static_cast<std::size_t>(i)];
    nll -= std::log(std::max(row(y), 1e-300));
  }
  return nll;
}

}  // namespace detail

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Mean cross-entropy over the rows `idx` of `ds`, and its gradient.
inline LossGrad loss_and_grad(const ModelParams& m, const Dataset& ds, std::span<const std::size_t> idx) {
  check(!idx.empty(), "loss_and_grad: empty batch");
  check(ds.dims == m.arch.input_dim && ds.num_classes == m.arch.classes,
        "loss_and_grad: dimension mismatch between model and data");
  const auto& a = m.arch;
  const auto n = static_cast<Eigen::Index>(idx.size());
  const auto d = static_cast<Eigen::Index>(a.input_dim);
  const auto C = static_cast<Eigen::Index>(a.classes);
  const RowMatrix x = detail::gather(ds, idx);
  std::vector<int> labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = ds.labels[idx[i]];

  RowMatrix act;
  RowMatrix p = detail::forward(m, x, &act);
  LossGrad out;
  out.loss = detail::softmax_nll(p, labels) / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) p(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  p /= static_cast<double>(n);

  out.grad.assign(a.param_count(), 0.0);
  if (a.kind == ModelKind::Logistic) {
    const Eigen::MatrixXd gW = x.transpose() * p;
    MatMap(out.grad.data(), d, C) = gW;
    const Eigen::VectorXd gb = p.colwise().sum().transpose();
    VecMap(out.grad.data() + d * C, C) = gb;
    return out;
  }
  const auto h = static_cast<Eigen::Index>(a.hidden);
  const Eigen::MatrixXd W2 = detail::block(m, d * h + h, h, C);
  double* g = out.grad.data();
  const Eigen::MatrixXd gW2 = act.transpose() * p;
  MatMap(g + d * h + h, h, C) = gW2;
  const Eigen::VectorXd gb2 = p.colwise().sum().transpose();
  VecMap(g + d * h + h + h * C, C) = gb2;
  RowMatrix dact = p * W2.transpose();
  if (a.activation == Activation::Tanh) dact.array() *= (1.0 - act.array().square());
  else dact.array() *= (act.array() > 0.0).cast<double>();
  const Eigen::MatrixXd gW1 = x.transpose() * dact;
  MatMap(g, d, h) = gW1;
  const Eigen::VectorXd gb1 = dact.colwise().sum().transpose();
  VecMap(g + d * h, h) = gb1;
  return out;
}

inline LossGrad loss_and_grad(const ModelParams& m, const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return loss_and_grad(m, ds, all);
}

struct SgdSpec {
  std::size_t epochs = 5;
  std::size_t batch_size = 20;  // 0 or >= shard size: full batch
  LrSchedule schedule;
  // When set, `epochs` counts single mini-batch iterations instead of passes.
  bool iteration_mode = false;

  bool operator==(const SgdSpec&) const = default;
};

// E passes (or iterations) of mini-batch SGD from m0. The last short batch of
// each pass is kept. Shuffling is seeded per (seed, pass).
inline ModelParams local_sgd(const ModelParams& m0, const Dataset& ds, std::span<const std::size_t> shard,
                             const SgdSpec& spec, std::size_t round, std::uint64_t seed) {
  check(spec.epochs >= 1, "local_sgd: need at least one epoch");
  check(!shard.empty(), "local_sgd: empty shard");
  ModelParams m = m0;
  const std::size_t bs = (spec.batch_size == 0 || spec.batch_size > shard.size()) ? shard.size() : spec.batch_size;
  std::vector<std::size_t> order(shard.begin(), shard.end());
  auto step = [&](std::span<const std::size_t> batch, std::size_t e) {
    const double eta = spec.schedule.rate(round, e);
    if (eta == 0.0) return;
    const auto lg = loss_and_grad(m, ds, batch);
    VecMap(m.w.data(), static_cast<Eigen::Index>(m.w.size())) -=
        eta * ConstVecMap(lg.grad.data(), static_cast<Eigen::Index>(lg.grad.size()));
  };
  if (spec.iteration_mode) {
    std::size_t cursor = order.size();
    std::size_t pass = 0;
    for (std::size_t e = 0; e < spec.epochs; ++e) {
      if (cursor >= order.size()) {
        if (bs < order.size()) {
          Rng rng(derive_seed(seed, pass));
          rng.shuffle(order);
        }
        ++pass;
        cursor = 0;
      }
      const std::size_t len = std::min(bs, order.size() - cursor);
      step({order.data() + cursor, len}, e);
      cursor += len;
    }
    return m;
  }
  for (std::size_t e = 0; e < spec.epochs; ++e) {
    if (bs < order.size()) {
      Rng rng(derive_seed(seed, e));
      rng.shuffle(order);
    }
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      step({order.data() + start, len}, e);
    }
  }
  return m;
}

// Per-class mean gradients on a shard. Entry i is empty when class i is absent.
// sum_i hist[i] * grads[i] reproduces loss_and_grad on the whole shard.
struct ClassGradients {
  std::vector<double> histogram;
  std::vector<std::optional<std::vector<double>>> grads;
};

inline ClassGradients per_class_grad_decomposition(const ModelParams& m, const Dataset& ds,
                                                   std::span<const std::size_t> shard) {
  check(!shard.empty(), "per_class_grad_decomposition: empty shard");
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (auto i : shard) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  ClassGradients out;
  out.histogram.resize(ds.num_classes);
  out.grads.resize(ds.num_classes);
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    out.histogram[c] = static_cast<double>(by_class[c].size()) / static_cast<double>(shard.size());
    if (!by_class[c].empty()) out.grads[c] = loss_and_grad(m, ds, by_class[c]).grad;
  }
  return out;
}

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

// Argmax ties resolve to the lowest class index.
inline EvalResult evaluate(const ModelParams& m, const Dataset& test) {
  check(test.dims == m.arch.input_dim, "evaluate: dimension mismatch");
  constexpr std::size_t kChunk = 512;
  std::size_t correct = 0;
  double nll = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < test.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, test.size() - start);
    idx.resize(len);
    for (std::size_t i = 0; i < len; ++i) idx[i] = start + i;
    const RowMatrix x = detail::gather(test, idx);
    RowMatrix z = detail::forward(m, x, nullptr);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < z.cols(); ++c)
        if (z(i, c) > z(i, best)) best = c;
      if (best == test.labels[start + static_cast<std::size_t>(i)]) ++correct;
    }
    nll += detail::softmax_nll(z, {test.labels.data() + start, len});
  }
  return {static_cast<double>(correct) / static_cast<double>(test.size()),
          nll / static_cast<double>(test.size())};
}

// ---------------------------------------------------------------------------
// Checkpoints: raw little-endian float64 vector plus a JSON sidecar.

inline nlohmann::json describe(const Architecture& a) {
  return {{"kind", a.kind == ModelKind::Logistic ? "logistic" : "mlp"},
          {"input_dim", a.input_dim},
          {"hidden", a.hidden},
          {"classes", a.classes},
          {"activation", a.activation == Activation::Relu ? "relu" : "tanh"},
          {"param_count", a.param_count()}};
}

inline void save_checkpoint(const ModelParams& m, const std::string& path) {
  std::vector<unsigned char> bytes(m.w.size() * 8);
  for (std::size_t i = 0; i < m.w.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &m.w[i], 8);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
  std::ofstream(path + ".json") << describe(m.arch).dump(2) << "\n";
}

inline ModelParams load_checkpoint(const std::string& path) {
  nlohmann::json j;
  std::ifstream side(path + ".json");
  check(side.good(), "missing checkpoint sidecar " + path + ".json");
  side >> j;
  Architecture a;
  a.kind = j.at("kind") == "logistic" ? ModelKind::Logistic : ModelKind::Mlp;
  a.input_dim = j.at("input_dim");
  a.hidden = j.at("hidden");
  a.classes = j.at("classes");
  a.activation = j.value("activation", "tanh") == "relu" ? Activation::Relu : Activation::Tanh;
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  check(bytes.size() == a.param_count() * 8, "checkpoint size does not match its descriptor");
  ModelParams m{a, std::vector<double>(a.param_count())};
  for (std::size_t i = 0; i < m.w.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[i * 8 + static_cast<std::size_t>(b)]} << (8 * b);
    std::memcpy(&m.w[i], &bits, 8);
  }
  return m;
}

}  // namespace fedoc
