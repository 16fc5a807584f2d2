#include "mgrad/chain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mgrad {

// ---------------------------------------------------------------- activations

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Softplus: return "softplus";
    case Activation::Relu: return "relu";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity" || name == "linear") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  if (name == "softplus") return Activation::Softplus;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + name + "' (expected identity|tanh|softplus|relu)");
}

namespace {

double act_value(Activation a, double z) {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Softplus: return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    case Activation::Relu: return z > 0 ? z : 0.0;
  }
  return z;
}

// ReLU: derivative at the kink is taken to be 0.
double act_deriv(Activation a, double z) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::Softplus:
      return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    case Activation::Relu: return z > 0 ? 1.0 : 0.0;
  }
  return 1.0;
}

std::optional<LayerConstants> act_constants(Activation a) {
  switch (a) {
    case Activation::Identity: return LayerConstants{1.0, 0.0};
    // max |tanh''| = 4/(3√3) ≈ 0.76980, rounded up
    case Activation::Tanh: return LayerConstants{1.0, 0.7698};
    case Activation::Softplus: return LayerConstants{1.0, 0.25};
    case Activation::Relu: return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------- Layer

std::size_t Layer::batch(const Vec& x) const {
  const std::size_t d = in_dim();
  if (x.empty() || x.size() % d != 0)
    throw DimensionError(kind() + " layer input (multiple of in_dim)", d, x.size());
  return x.size() / d;
}

void Layer::check_args(const Vec& w, const Vec& x) const {
  require_dim(w, param_dim(), (kind() + " layer parameters").c_str());
  batch(x);
}

// ---------------------------------------------------------------- Dense

DenseLayer::DenseLayer(std::size_t in, std::size_t out) : in_(in), out_(out) {
  if (in == 0 || out == 0) throw ConfigError("dense layer dimensions must be positive");
}

Vec DenseLayer::pack(const Mat& W, const Vec& b) {
  if (b.size() != W.cols()) throw DimensionError("DenseLayer::pack bias", W.cols(), b.size());
  Vec w(W.rows() * W.cols() + b.size());
  std::copy(W.values().begin(), W.values().end(), w.begin());
  std::copy(b.begin(), b.end(), w.begin() + static_cast<std::ptrdiff_t>(W.values().size()));
  return w;
}

Mat DenseLayer::weights(const Vec& w) const {
  require_dim(w, param_dim(), "dense layer parameters");
  return Mat(in_, out_, std::vector<double>(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(in_ * out_)));
}

Vec DenseLayer::eval(const Vec& w, const Vec& x) const {
  check_args(w, x);
  const std::size_t m = x.size() / in_;
  const double* W = w.data();
  const double* b = w.data() + in_ * out_;
  Vec y(m * out_);
  for (std::size_t s = 0; s < m; ++s) {
    double* ys = y.data() + s * out_;
    const double* xs = x.data() + s * in_;
    for (std::size_t j = 0; j < out_; ++j) ys[j] = b[j];
    for (std::size_t i = 0; i < in_; ++i) {
      const double xi = xs[i];
      const double* Wi = W + i * out_;
      for (std::size_t j = 0; j < out_; ++j) ys[j] += Wi[j] * xi;
    }
  }
  return y;
}

Vec DenseLayer::jvp_x(const Vec& w, const Vec& x, const Vec& v) const {
  check_args(w, x);
  require_dim(v, x.size(), "dense jvp_x direction");
  const std::size_t m = x.size() / in_;
  Vec y(m * out_);
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t i = 0; i < in_; ++i) {
      const double vi = v[s * in_ + i];
      for (std::size_t j = 0; j < out_; ++j) y[s * out_ + j] += w[i * out_ + j] * vi;
    }
  return y;
}

Vec DenseLayer::jvp_w(const Vec& w, const Vec& x, const Vec& v) const {
  check_args(w, x);
  require_dim(v, param_dim(), "dense jvp_w direction");
  return eval(v, x);  // linear in the parameters
}

Vec DenseLayer::vjp_x(const Vec& w, const Vec& x, const Vec& lambda) const {
  check_args(w, x);
  const std::size_t m = x.size() / in_;
  require_dim(lambda, m * out_, "dense vjp_x cotangent");
  Vec g(x.size());
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t i = 0; i < in_; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < out_; ++j) acc += w[i * out_ + j] * lambda[s * out_ + j];
      g[s * in_ + i] = acc;
    }
  return g;
}

Vec DenseLayer::vjp_w(const Vec& w, const Vec& x, const Vec& lambda) const {
  check_args(w, x);
  const std::size_t m = x.size() / in_;
  require_dim(lambda, m * out_, "dense vjp_w cotangent");
  Vec g(param_dim());
  for (std::size_t s = 0; s < m; ++s) {
    const double* ls = lambda.data() + s * out_;
    for (std::size_t i = 0; i < in_; ++i) {
      const double xi = x[s * in_ + i];
      double* gi = g.data() + i * out_;
      for (std::size_t j = 0; j < out_; ++j) gi[j] += xi * ls[j];
    }
    double* gb = g.data() + in_ * out_;
    for (std::size_t j = 0; j < out_; ++j) gb[j] += ls[j];
  }
  return g;
}

std::optional<LayerConstants> DenseLayer::constants(const Vec& w) const {
  // Frobenius norm bounds the induced 2-norm of Wᵀ.
  return LayerConstants{weights(w).frobenius_norm(), 0.0};
}

Vec DenseLayer::init_params(Rng& rng) const {
  return rng.normal_vec(param_dim(), 1.0 / std::sqrt(static_cast<double>(in_)));
}

// ---------------------------------------------------------------- Activation

Vec ActivationLayer::eval(const Vec& w, const Vec& x) const {
  check_args(w, x);
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = act_value(act_, x[i]);
  return y;
}

Vec ActivationLayer::jvp_x(const Vec& w, const Vec& x, const Vec& v) const {
  check_args(w, x);
  require_dim(v, x.size(), "activation jvp_x direction");
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = act_deriv(act_, x[i]) * v[i];
  return y;
}

Vec ActivationLayer::jvp_w(const Vec& w, const Vec& x, const Vec& v) const {
  check_args(w, x);
  require_dim(v, 0, "activation jvp_w direction");
  return Vec(x.size());
}

Vec ActivationLayer::vjp_x(const Vec& w, const Vec& x, const Vec& lambda) const {
  check_args(w, x);
  require_dim(lambda, x.size(), "activation vjp_x cotangent");
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = act_deriv(act_, x[i]) * lambda[i];
  return g;
}

Vec ActivationLayer::vjp_w(const Vec& w, const Vec& x, const Vec& lambda) const {
  check_args(w, x);
  require_dim(lambda, x.size(), "activation vjp_w cotangent");
  return Vec();
}

std::optional<LayerConstants> ActivationLayer::constants(const Vec&) const {
  return act_constants(act_);
}

// ---------------------------------------------------------------- Dense + activation

DenseActivationLayer::DenseActivationLayer(std::size_t in, std::size_t out, Activation act)
    : dense_(in, out), act_layer_(out, act), act_(act) {}

Vec DenseActivationLayer::eval(const Vec& w, const Vec& x) const {
  return act_layer_.eval(Vec(), dense_.eval(w, x));
}

Vec DenseActivationLayer::jvp_x(const Vec& w, const Vec& x, const Vec& v) const {
  return act_layer_.jvp_x(Vec(), dense_.eval(w, x), dense_.jvp_x(w, x, v));
}

Vec DenseActivationLayer::jvp_w(const Vec& w, const Vec& x, const Vec& v) const {
  return act_layer_.jvp_x(Vec(), dense_.eval(w, x), dense_.jvp_w(w, x, v));
}

Vec DenseActivationLayer::vjp_x(const Vec& w, const Vec& x, const Vec& lambda) const {
  return dense_.vjp_x(w, x, act_layer_.vjp_x(Vec(), dense_.eval(w, x), lambda));
}

Vec DenseActivationLayer::vjp_w(const Vec& w, const Vec& x, const Vec& lambda) const {
  return dense_.vjp_w(w, x, act_layer_.vjp_x(Vec(), dense_.eval(w, x), lambda));
}

std::optional<LayerConstants> DenseActivationLayer::constants(const Vec& w) const {
  auto a = act_constants(act_);
  if (!a) return std::nullopt;
  const double nw = dense_.weights(w).frobenius_norm();
  return LayerConstants{a->ell * nw, a->L * nw * nw};
}

// ---------------------------------------------------------------- Pendulum

void PendulumParams::validate() const {
  if (!(dt > 0.0)) throw ConfigError("pendulum: dt must be positive");
  if (horizon < 1) throw ConfigError("pendulum: horizon must be at least 1");
  if (!(mass > 0.0) || !(length > 0.0)) throw ConfigError("pendulum: mass and length must be positive");
  if (friction < 0.0 || rho < 0.0) throw ConfigError("pendulum: friction and rho must be non-negative");
}

PendulumStepLayer::PendulumStepLayer(PendulumParams p) : p_(p) { p_.validate(); }

Vec PendulumStepLayer::eval(const Vec& w, const Vec& x) const {
  check_args(w, x);
  const double inertia = p_.mass * p_.length * p_.length;
  Vec y(x.size());
  for (std::size_t s = 0; s < x.size() / 2; ++s) {
    const double th = x[2 * s], om = x[2 * s + 1];
    y[2 * s] = th + p_.dt * om;
    y[2 * s + 1] = om + p_.dt * (-(p_.gravity / p_.length) * std::sin(th) -
                                 (p_.friction / inertia) * om + w[0] / inertia);
  }
  return y;
}

Vec PendulumStepLayer::jvp_x(const Vec& w, const Vec& x, const Vec& v) const {
  check_args(w, x);
  require_dim(v, x.size(), "pendulum jvp_x direction");
  const double damp = 1.0 - p_.dt * p_.friction / (p_.mass * p_.length * p_.length);
  Vec y(x.size());
  for (std::size_t s = 0; s < x.size() / 2; ++s) {
    const double c = p_.dt * (p_.gravity / p_.length) * std::cos(x[2 * s]);
    y[2 * s] = v[2 * s] + p_.dt * v[2 * s + 1];
    y[2 * s + 1] = -c * v[2 * s] + damp * v[2 * s + 1];
  }
  return y;
}

Vec PendulumStepLayer::jvp_w(const Vec& w, const Vec& x, const Vec& v) const {
  check_args(w, x);
  require_dim(v, 1, "pendulum jvp_w direction");
  Vec y(x.size());
  for (std::size_t s = 0; s < x.size() / 2; ++s)
    y[2 * s + 1] = p_.dt * v[0] / (p_.mass * p_.length * p_.length);
  return y;
}

Vec PendulumStepLayer::vjp_x(const Vec& w, const Vec& x, const Vec& lambda) const {
  check_args(w, x);
  require_dim(lambda, x.size(), "pendulum vjp_x cotangent");
  const double damp = 1.0 - p_.dt * p_.friction / (p_.mass * p_.length * p_.length);
  Vec g(x.size());
  for (std::size_t s = 0; s < x.size() / 2; ++s) {
    const double c = p_.dt * (p_.gravity / p_.length) * std::cos(x[2 * s]);
    g[2 * s] = lambda[2 * s] - c * lambda[2 * s + 1];
    g[2 * s + 1] = p_.dt * lambda[2 * s] + damp * lambda[2 * s + 1];
  }
  return g;
}

Vec PendulumStepLayer::vjp_w(const Vec& w, const Vec& x, const Vec& lambda) const {
  check_args(w, x);
  require_dim(lambda, x.size(), "pendulum vjp_w cotangent");
  Vec g(1);
  for (std::size_t s = 0; s < x.size() / 2; ++s)
    g[0] += p_.dt * lambda[2 * s + 1] / (p_.mass * p_.length * p_.length);
  return g;
}

std::optional<LayerConstants> PendulumStepLayer::constants(const Vec&) const {
  // Frobenius bound of the state Jacobian with |cos θ| ≤ 1.
  const double damp = 1.0 - p_.dt * p_.friction / (p_.mass * p_.length * p_.length);
  const double c = p_.dt * p_.gravity / p_.length;
  return LayerConstants{std::sqrt(1.0 + p_.dt * p_.dt + c * c + damp * damp), c};
}

// ---------------------------------------------------------------- Jacobians

LayerJacobians layer_jacobians(const Layer& layer, const Vec& w, const Vec& x) {
  layer.check_args(w, x);
  const std::size_t rows = layer.batch(x) * layer.out_dim();
  LayerJacobians J{Mat(rows, w.size()), Mat(rows, x.size())};
  for (std::size_t j = 0; j < w.size(); ++j) {
    Vec col = layer.jvp_w(w, x, Vec::basis(w.size(), j));
    for (std::size_t i = 0; i < rows; ++i) J.dw(i, j) = col[i];
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    Vec col = layer.jvp_x(w, x, Vec::basis(x.size(), j));
    for (std::size_t i = 0; i < rows; ++i) J.dx(i, j) = col[i];
  }
  return J;
}

// ---------------------------------------------------------------- BlockParams

void BlockParams::insert(std::size_t i, Vec v) {
  require_dim(v, blocks_.at(i).size(), "BlockParams::insert");
  blocks_[i] = std::move(v);
}

std::size_t BlockParams::total_dim() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.size();
  return n;
}

Vec BlockParams::flatten() const {
  Vec out(total_dim());
  std::size_t k = 0;
  for (const auto& b : blocks_)
    for (double v : b) out[k++] = v;
  return out;
}

BlockParams BlockParams::unflatten(const Vec& flat) const {
  require_dim(flat, total_dim(), "BlockParams::unflatten");
  std::vector<Vec> blocks;
  std::size_t k = 0;
  for (const auto& b : blocks_) {
    blocks.push_back(flat.slice(k, b.size()));
    k += b.size();
  }
  return BlockParams(std::move(blocks));
}

BlockParams& BlockParams::axpy(double s, const BlockParams& other) {
  if (other.size() != size()) throw DimensionError("BlockParams block count", size(), other.size());
  for (std::size_t i = 0; i < size(); ++i) blocks_[i].axpy(s, other.blocks_[i]);
  return *this;
}

double BlockParams::squared_norm() const {
  double acc = 0.0;
  for (const auto& b : blocks_) acc += b.squared_norm();
  return acc;
}

bool BlockParams::all_finite() const {
  return std::all_of(blocks_.begin(), blocks_.end(), [](const Vec& b) { return b.all_finite(); });
}

BlockParams operator-(const BlockParams& a, const BlockParams& b) {
  BlockParams out = a;
  out.axpy(-1.0, b);
  return out;
}

// ---------------------------------------------------------------- Chain

Chain::Chain(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("a chain needs at least one layer");
  for (std::size_t t = 1; t < layers_.size(); ++t) {
    if (layers_[t]->in_dim() != layers_[t - 1]->out_dim())
      throw DimensionError("chain layer " + std::to_string(t + 1) + " input",
                           layers_[t - 1]->out_dim(), layers_[t]->in_dim());
  }
}

bool Chain::smooth() const {
  return std::all_of(layers_.begin(), layers_.end(), [](const LayerPtr& l) { return l->smooth(); });
}

BlockParams Chain::init_params(Rng& rng) const {
  std::vector<Vec> blocks;
  for (const auto& l : layers_) blocks.push_back(l->init_params(rng));
  return BlockParams(std::move(blocks));
}

BlockParams Chain::zero_params() const {
  std::vector<Vec> blocks;
  for (const auto& l : layers_) blocks.emplace_back(l->param_dim());
  return BlockParams(std::move(blocks));
}

void Chain::check_params(const BlockParams& w) const {
  if (w.size() != tau()) throw DimensionError("parameter block count", tau(), w.size());
  for (std::size_t t = 0; t < tau(); ++t)
    require_dim(w[t], layers_[t]->param_dim(),
                ("parameter block " + std::to_string(t + 1)).c_str());
}

std::vector<Vec> Chain::forward(const BlockParams& w, const Vec& x0) const {
  check_params(w);
  std::vector<Vec> states;
  states.reserve(tau() + 1);
  states.push_back(x0);
  for (std::size_t t = 0; t < tau(); ++t) {
    Vec next = layers_[t]->eval(w[t], states.back());
    if (!next.all_finite()) throw NonFiniteError("forward: non-finite state at layer", t + 1);
    states.push_back(std::move(next));
  }
  return states;
}

std::optional<std::vector<LayerConstants>> Chain::constants(const BlockParams& w) const {
  check_params(w);
  std::vector<LayerConstants> out;
  for (std::size_t t = 0; t < tau(); ++t) {
    auto c = layers_[t]->constants(w[t]);
    if (!c) return std::nullopt;
    out.push_back(*c);
  }
  return out;
}

Chain pendulum_chain(const PendulumParams& p) {
  p.validate();
  auto step = std::make_shared<const PendulumStepLayer>(p);
  return Chain(std::vector<LayerPtr>(p.horizon, step));
}

Chain mlp_chain(const std::vector<std::size_t>& widths, Activation hidden, Activation head) {
  if (widths.size() < 2) throw ConfigError("mlp needs at least input and output widths");
  std::vector<LayerPtr> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers.push_back(
        std::make_shared<const DenseActivationLayer>(widths[i], widths[i + 1], last ? head : hidden));
  }
  return Chain(std::move(layers));
}

// ---------------------------------------------------------------- objectives

Objective Objective::squared_loss(Vec target, double weight) {
  return Objective(SquaredLoss{std::move(target), weight});
}
Objective Objective::quadratic(Mat Q, Vec b) {
  if (Q.rows() != Q.cols() || Q.rows() != b.size())
    throw DimensionError("quadratic objective", Q.rows(), b.size());
  return Objective(Quadratic{std::move(Q), std::move(b)});
}
Objective Objective::linear(Vec lambda) { return Objective(LinearForm{std::move(lambda)}); }
Objective Objective::l1(double scale) { return Objective(L1Norm{scale}); }
Objective Objective::logistic(std::vector<int> labels, std::size_t classes) {
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw Error("logistic: label out of range");
  return Objective(Logistic{std::move(labels), classes});
}
Objective Objective::pendulum_terminal(double rho) { return Objective(PendulumTerminal{rho}); }
Objective Objective::norm_affine(Mat A, Vec b) {
  if (A.rows() != b.size()) throw DimensionError("norm_affine offset", A.rows(), b.size());
  return Objective(NormAffine{std::move(A), std::move(b)});
}
Objective Objective::constant(double c) { return Objective(Constant{c}); }
Objective Objective::custom(ScalarFn value, GradientFn grad, std::size_t dim) {
  return Objective(CustomObjective{std::move(value), std::move(grad), dim});
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_logits(const Logistic& o, const Vec& x) {
  if (o.classes == 0 || x.size() != o.labels.size() * o.classes)
    throw DimensionError("logistic logits", o.labels.size() * o.classes, x.size());
}

}  // namespace

std::string Objective::kind() const {
  return std::visit(overloaded{
                        [](const SquaredLoss&) { return std::string("squared_loss"); },
                        [](const Quadratic&) { return std::string("quadratic"); },
                        [](const LinearForm&) { return std::string("linear"); },
                        [](const L1Norm&) { return std::string("l1"); },
                        [](const Logistic&) { return std::string("logistic"); },
                        [](const PendulumTerminal&) { return std::string("pendulum_terminal"); },
                        [](const NormAffine&) { return std::string("norm_affine"); },
                        [](const Constant&) { return std::string("constant"); },
                        [](const CustomObjective&) { return std::string("custom"); },
                    },
                    spec_);
}

double Objective::value(const Vec& x) const {
  return std::visit(
      overloaded{
          [&](const SquaredLoss& o) {
            require_dim(x, o.target.size(), "squared loss input");
            return 0.5 * o.weight * (x - o.target).squared_norm();
          },
          [&](const Quadratic& o) { return 0.5 * dot(x, matvec(o.Q, x)) + dot(o.b, x); },
          [&](const LinearForm& o) { return dot(o.lambda, x); },
          [&](const L1Norm& o) {
            double acc = 0.0;
            for (double v : x) acc += std::abs(v);
            return o.scale * acc;
          },
          [&](const Logistic& o) {
            check_logits(o, x);
            const std::size_t k = o.classes;
            double total = 0.0;
            for (std::size_t s = 0; s < o.labels.size(); ++s) {
              const double* z = x.data() + s * k;
              const double zmax = *std::max_element(z, z + k);
              double se = 0.0;
              for (std::size_t c = 0; c < k; ++c) se += std::exp(z[c] - zmax);
              total += zmax + std::log(se) - z[o.labels[s]];
            }
            return total / static_cast<double>(o.labels.size());
          },
          [&](const PendulumTerminal& o) {
            require_dim(x, 2, "pendulum terminal state");
            const double d = x[0] - std::numbers::pi;
            return d * d + o.rho * x[1] * x[1];
          },
          [&](const NormAffine& o) { return (matvec(o.A, x) - o.b).norm(); },
          [&](const Constant& o) { return o.value; },
          [&](const CustomObjective& o) { return o.value(x); },
      },
      spec_);
}

Vec Objective::grad(const Vec& x) const {
  return std::visit(
      overloaded{
          [&](const SquaredLoss& o) {
            require_dim(x, o.target.size(), "squared loss input");
            return o.weight * (x - o.target);
          },
          [&](const Quadratic& o) { return matvec(o.Q, x) + o.b; },
          [&](const LinearForm& o) {
            require_dim(x, o.lambda.size(), "linear form input");
            return o.lambda;
          },
          [&](const L1Norm& o) {
            Vec g(x.size());
            for (std::size_t i = 0; i < x.size(); ++i)
              g[i] = x[i] > 0 ? o.scale : (x[i] < 0 ? -o.scale : 0.0);
            return g;
          },
          [&](const Logistic& o) {
            check_logits(o, x);
            const std::size_t k = o.classes;
            const double inv_m = 1.0 / static_cast<double>(o.labels.size());
            Vec g(x.size());
            for (std::size_t s = 0; s < o.labels.size(); ++s) {
              const double* z = x.data() + s * k;
              const double zmax = *std::max_element(z, z + k);
              double se = 0.0;
              for (std::size_t c = 0; c < k; ++c) se += std::exp(z[c] - zmax);
              for (std::size_t c = 0; c < k; ++c) g[s * k + c] = std::exp(z[c] - zmax) / se * inv_m;
              g[s * k + o.labels[s]] -= inv_m;
            }
            return g;
          },
          [&](const PendulumTerminal& o) {
            require_dim(x, 2, "pendulum terminal state");
            return Vec{2.0 * (x[0] - std::numbers::pi), 2.0 * o.rho * x[1]};
          },
          [&](const NormAffine& o) {
            Vec r = matvec(o.A, x) - o.b;
            const double n = r.norm();
            if (n == 0.0) return Vec(x.size());
            return tmatvec(o.A, (1.0 / n) * r);
          },
          [&](const Constant&) { return Vec(x.size()); },
          [&](const CustomObjective& o) { return o.grad(x); },
      },
      spec_);
}

double classification_accuracy(const Vec& logits, const std::vector<int>& labels,
                               std::size_t classes) {
  if (labels.empty()) return 0.0;
  require_dim(logits, labels.size() * classes, "classification logits");
  std::size_t correct = 0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    const double* z = logits.data() + s * classes;
    const auto best = static_cast<int>(std::max_element(z, z + classes) - z);
    if (best == labels[s]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------- constants

LipschitzEstimates lipschitz_estimates(const std::vector<LayerConstants>& layers) {
  LipschitzEstimates est;
  est.ell.push_back(0.0);
  est.L.push_back(0.0);
  for (const auto& c : layers) {
    if (!(c.ell >= 0.0) || !(c.L >= 0.0) || !std::isfinite(c.ell) || !std::isfinite(c.L))
      throw Error("lipschitz_estimates: layer constants must be finite and non-negative");
    const double ell_prev = est.ell.back();
    const double L_prev = est.L.back();
    est.ell.push_back(c.ell + ell_prev * c.ell);
    est.L.push_back(L_prev * c.ell + c.L * (1.0 + ell_prev) * (1.0 + ell_prev));
  }
  return est;
}

StepsizeBounds theoretical_stepsizes(const std::vector<LayerConstants>& layers, double ell_h) {
  const std::size_t tau = layers.size();
  StepsizeBounds out;
  out.c.assign(tau, 0.0);
  double tail = 1.0;  // ∏_{s>t} ℓ_φs
  for (std::size_t t = tau; t-- > 0;) {
    out.c[t] = ell_h * layers[t].L * tail;
    tail *= layers[t].ell;
  }
  out.gamma_max.assign(tau, std::numeric_limits<double>::infinity());
  out.unbounded.assign(tau, true);
  for (std::size_t t = 0; t + 1 < tau; ++t) {
    if (out.c[t + 1] > 0.0) {
      out.gamma_max[t] = 1.0 / out.c[t + 1];
      out.unbounded[t] = false;
    }
  }
  return out;
}

Schedule make_schedule(double gamma, double alpha, std::size_t tau) {
  if (!(gamma > 0.0) || !(alpha > 0.0)) throw ConfigError("schedule: γ and α must be positive");
  if (tau < 1) throw ConfigError("schedule: τ must be at least 1");
  Schedule s;
  s.gamma.resize(tau);
  s.alpha.resize(tau);
  for (std::size_t t = 1; t <= tau; ++t) s.gamma[t - 1] = std::pow(gamma, static_cast<double>(tau - t + 1));
  for (std::size_t t = 1; t <= tau; ++t) s.alpha[t - 1] = alpha * (t < tau ? s.gamma[t] : 1.0);
  return s;
}

}  // namespace mgrad
