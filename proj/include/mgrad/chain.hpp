#pragma once

// Parameterized chains of computations x_t = φ_t(w_t, x_{t-1}), the layer
// catalog, terminal objectives h, and the Lipschitz/step-size bookkeeping.
//
// Layers act per sample: an input holding m stacked samples of size in_dim
// produces m stacked outputs of size out_dim, with the same parameters.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mgrad/numerics.hpp"

namespace mgrad {

enum class Activation { Identity, Tanh, Softplus, Relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Lipschitz constant ℓ and smoothness constant L of a layer in its input.
struct LayerConstants {
  double ell = 0.0;
  double L = 0.0;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t param_dim() const = 0;
  virtual std::size_t in_dim() const = 0;
  virtual std::size_t out_dim() const = 0;
  virtual bool smooth() const = 0;
  /// φ(·, x) is affine for every fixed x.
  virtual bool affine_in_w() const = 0;
  /// φ(w, ·) is affine for every fixed w.
  virtual bool affine_in_x() const = 0;

  virtual Vec eval(const Vec& w, const Vec& x) const = 0;
  /// ∂φ/∂x applied to a direction v of size x.size().
  virtual Vec jvp_x(const Vec& w, const Vec& x, const Vec& v) const = 0;
  virtual Vec jvp_w(const Vec& w, const Vec& x, const Vec& v) const = 0;
  /// (∂φ/∂x)ᵀ λ.
  virtual Vec vjp_x(const Vec& w, const Vec& x, const Vec& lambda) const = 0;
  virtual Vec vjp_w(const Vec& w, const Vec& x, const Vec& lambda) const = 0;

  /// Analytic constants at the given parameters, when available.
  virtual std::optional<LayerConstants> constants(const Vec& w) const = 0;
  virtual Vec init_params(Rng& rng) const = 0;

  /// Number of stacked samples in x; throws DimensionError if x is ragged.
  std::size_t batch(const Vec& x) const;
  void check_args(const Vec& w, const Vec& x) const;
};

using LayerPtr = std::shared_ptr<const Layer>;

/// out_j = Σ_i W[i,j] x_i + b_j. Parameters: W (in×out, row-major) then b.
class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in, std::size_t out);

  std::string kind() const override { return "dense"; }
  std::size_t param_dim() const override { return in_ * out_ + out_; }
  std::size_t in_dim() const override { return in_; }
  std::size_t out_dim() const override { return out_; }
  bool smooth() const override { return true; }
  bool affine_in_w() const override { return true; }
  bool affine_in_x() const override { return true; }

  Vec eval(const Vec& w, const Vec& x) const override;
  Vec jvp_x(const Vec& w, const Vec& x, const Vec& v) const override;
  Vec jvp_w(const Vec& w, const Vec& x, const Vec& v) const override;
  Vec vjp_x(const Vec& w, const Vec& x, const Vec& lambda) const override;
  Vec vjp_w(const Vec& w, const Vec& x, const Vec& lambda) const override;
  std::optional<LayerConstants> constants(const Vec& w) const override;
  Vec init_params(Rng& rng) const override;

  /// Packs (W, b) into the parameter layout.
  static Vec pack(const Mat& W, const Vec& b);
  Mat weights(const Vec& w) const;

 private:
  std::size_t in_, out_;
};

/// Elementwise activation without parameters.
class ActivationLayer final : public Layer {
 public:
  ActivationLayer(std::size_t dim, Activation act) : dim_(dim), act_(act) {}

  std::string kind() const override { return "activation"; }
  std::size_t param_dim() const override { return 0; }
  std::size_t in_dim() const override { return dim_; }
  std::size_t out_dim() const override { return dim_; }
  bool smooth() const override { return act_ != Activation::Relu; }
  bool affine_in_w() const override { return true; }
  bool affine_in_x() const override { return act_ == Activation::Identity; }
  Activation activation() const { return act_; }

  Vec eval(const Vec& w, const Vec& x) const override;
  Vec jvp_x(const Vec& w, const Vec& x, const Vec& v) const override;
  Vec jvp_w(const Vec& w, const Vec& x, const Vec& v) const override;
  Vec vjp_x(const Vec& w, const Vec& x, const Vec& lambda) const override;
  Vec vjp_w(const Vec& w, const Vec& x, const Vec& lambda) const override;
  std::optional<LayerConstants> constants(const Vec& w) const override;
  Vec init_params(Rng&) const override { return Vec(); }

 private:
  std::size_t dim_;
  Activation act_;
};

/// σ(Wᵀx + b) in one layer.
class DenseActivationLayer final : public Layer {
 public:
  DenseActivationLayer(std::size_t in, std::size_t out, Activation act);

  std::string kind() const override { return "dense_activation"; }
  std::size_t param_dim() const override { return dense_.param_dim(); }
  std::size_t in_dim() const override { return dense_.in_dim(); }
  std::size_t out_dim() const override { return dense_.out_dim(); }
  bool smooth() const override { return act_ != Activation::Relu; }
  bool affine_in_w() const override { return act_ == Activation::Identity; }
  bool affine_in_x() const override { return act_ == Activation::Identity; }
  Activation activation() const { return act_; }

  Vec eval(const Vec& w, const Vec& x) const override;
  Vec jvp_x(const Vec& w, const Vec& x, const Vec& v) const override;
  Vec jvp_w(const Vec& w, const Vec& x, const Vec& v) const override;
  Vec vjp_x(const Vec& w, const Vec& x, const Vec& lambda) const override;
  Vec vjp_w(const Vec& w, const Vec& x, const Vec& lambda) const override;
  std::optional<LayerConstants> constants(const Vec& w) const override;
  Vec init_params(Rng& rng) const override { return dense_.init_params(rng); }

 private:
  DenseLayer dense_;
  ActivationLayer act_layer_;
  Activation act_;
};

struct PendulumParams {
  double mass = 1.0;
  double length = 1.0;
  double friction = 0.01;
  double gravity = 9.81;
  double dt = 0.1;
  std::size_t horizon = 50;
  double rho = 0.1;
  double theta0 = 0.0;
  double omega0 = 0.0;

  void validate() const;
};

/// One explicit Euler step of the damped pendulum; state (θ, ω), control w ∈ ℝ.
class PendulumStepLayer final : public Layer {
 public:
  explicit PendulumStepLayer(PendulumParams p);

  std::string kind() const override { return "pendulum"; }
  std::size_t param_dim() const override { return 1; }
  std::size_t in_dim() const override { return 2; }
  std::size_t out_dim() const override { return 2; }
  bool smooth() const override { return true; }
  bool affine_in_w() const override { return true; }
  bool affine_in_x() const override { return false; }

  Vec eval(const Vec& w, const Vec& x) const override;
  Vec jvp_x(const Vec& w, const Vec& x, const Vec& v) const override;
  Vec jvp_w(const Vec& w, const Vec& x, const Vec& v) const override;
  Vec vjp_x(const Vec& w, const Vec& x, const Vec& lambda) const override;
  Vec vjp_w(const Vec& w, const Vec& x, const Vec& lambda) const override;
  std::optional<LayerConstants> constants(const Vec& w) const override;
  Vec init_params(Rng&) const override { return Vec(1); }

 private:
  PendulumParams p_;
};

/// Materialized (∂φ/∂w, ∂φ/∂x) at a point, shapes out×p and out×in.
struct LayerJacobians {
  Mat dw;
  Mat dx;
};
LayerJacobians layer_jacobians(const Layer& layer, const Vec& w, const Vec& x);

/// Block-structured parameters w = (w_1; …; w_τ). Block t lives at index t-1.
class BlockParams {
 public:
  BlockParams() = default;
  explicit BlockParams(std::vector<Vec> blocks) : blocks_(std::move(blocks)) {}

  std::size_t size() const { return blocks_.size(); }
  const Vec& operator[](std::size_t i) const { return blocks_[i]; }
  Vec& operator[](std::size_t i) { return blocks_[i]; }
  const Vec& extract(std::size_t i) const { return blocks_.at(i); }
  void insert(std::size_t i, Vec v);
  const std::vector<Vec>& blocks() const { return blocks_; }

  std::size_t total_dim() const;
  Vec flatten() const;
  /// Inverse of flatten using this object's block sizes as the layout.
  BlockParams unflatten(const Vec& flat) const;

  BlockParams& axpy(double s, const BlockParams& other);
  double squared_norm() const;
  double norm() const { return std::sqrt(squared_norm()); }
  bool all_finite() const;

 private:
  std::vector<Vec> blocks_;
};

BlockParams operator-(const BlockParams& a, const BlockParams& b);

class Chain {
 public:
  explicit Chain(std::vector<LayerPtr> layers);

  std::size_t tau() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  const std::vector<LayerPtr>& layers() const { return layers_; }
  std::size_t input_dim() const { return layers_.front()->in_dim(); }
  std::size_t output_dim() const { return layers_.back()->out_dim(); }
  bool smooth() const;

  /// Gaussian init with std 1/√fan-in for dense weights and biases; pendulum controls start at 0.
  BlockParams init_params(Rng& rng) const;
  BlockParams zero_params() const;
  void check_params(const BlockParams& w) const;

  /// States (x_0, …, x_τ). Throws NonFiniteError whose index is the offending layer (1-based).
  std::vector<Vec> forward(const BlockParams& w, const Vec& x0) const;
  Vec output(const BlockParams& w, const Vec& x0) const { return forward(w, x0).back(); }

  /// Per-layer analytic constants; nullopt if any layer lacks them.
  std::optional<std::vector<LayerConstants>> constants(const BlockParams& w) const;

 private:
  std::vector<LayerPtr> layers_;
};

/// Builds the τ-step pendulum chain.
Chain pendulum_chain(const PendulumParams& p);
/// Dense+activation stack with the given widths; the last layer uses `head`.
Chain mlp_chain(const std::vector<std::size_t>& widths, Activation hidden, Activation head);

// ------------------------------------------------------------ objectives

struct SquaredLoss {
  Vec target;
  double weight = 1.0;  // value = weight/2 · ‖x − target‖²
};
struct Quadratic {
  Mat Q;  // symmetric; value = ½xᵀQx + bᵀx
  Vec b;
};
struct LinearForm {
  Vec lambda;
};
struct L1Norm {
  double scale = 1.0;
};
/// Softmax cross-entropy over stacked logits, averaged over samples.
struct Logistic {
  std::vector<int> labels;
  std::size_t classes = 0;
};
struct PendulumTerminal {
  double rho = 0.1;
};
/// ‖Ax − b‖₂.
struct NormAffine {
  Mat A;
  Vec b;
};
struct Constant {
  double value = 0.0;
};
struct CustomObjective {
  ScalarFn value;
  GradientFn grad;
  std::size_t dim = 0;
};

class Objective {
 public:
  using Spec = std::variant<SquaredLoss, Quadratic, LinearForm, L1Norm, Logistic, PendulumTerminal,
                            NormAffine, Constant, CustomObjective>;

  explicit Objective(Spec spec) : spec_(std::move(spec)) {}

  static Objective squared_loss(Vec target, double weight = 1.0);
  static Objective quadratic(Mat Q, Vec b);
  static Objective linear(Vec lambda);
  static Objective l1(double scale = 1.0);
  static Objective logistic(std::vector<int> labels, std::size_t classes);
  static Objective pendulum_terminal(double rho);
  static Objective norm_affine(Mat A, Vec b);
  static Objective constant(double c);
  static Objective custom(ScalarFn value, GradientFn grad, std::size_t dim = 0);

  std::string kind() const;
  const Spec& spec() const { return spec_; }

  double value(const Vec& x) const;
  Vec grad(const Vec& x) const;

 private:
  Spec spec_;
};

/// Fraction of samples whose argmax logit equals the label.
double classification_accuracy(const Vec& logits, const std::vector<int>& labels,
                               std::size_t classes);

// ------------------------------------------------------------ constants

struct LipschitzEstimates {
  std::vector<double> ell;  // ell[0] = 0, ell[t] for prefix of length t
  std::vector<double> L;
  double ell_f() const { return ell.back(); }
  double L_f() const { return L.back(); }
};

/// ℓ_t = ℓ_φt + ℓ_{t-1}ℓ_φt, L_t = L_{t-1}ℓ_φt + L_φt(1+ℓ_{t-1})², from ℓ_0 = L_0 = 0.
LipschitzEstimates lipschitz_estimates(const std::vector<LayerConstants>& layers);

struct StepsizeBounds {
  std::vector<double> c;          // c_1 … c_τ
  std::vector<double> gamma_max;  // γ_t ≤ 1/c_{t+1}; γ_τ is unconstrained
  std::vector<bool> unbounded;    // true where the bound is +∞
};

/// c_t = ℓ_h L_φt ∏_{s>t} ℓ_φs.
StepsizeBounds theoretical_stepsizes(const std::vector<LayerConstants>& layers, double ell_h);

struct Schedule {
  std::vector<double> gamma;  // γ_t at index t-1
  std::vector<double> alpha;  // α_t at index t-1
};

/// γ_t = γ^{τ−t+1}, α_t = α·γ_{t+1} with γ_{τ+1} = 1.
Schedule make_schedule(double gamma, double alpha, std::size_t tau);

}  // namespace mgrad
