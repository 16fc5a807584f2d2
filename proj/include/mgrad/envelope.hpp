#pragma once

// Moreau envelopes and Moreau gradients.
//
//   ∇env(αf)(x) = −argmin_y { αf(x + y) + ½‖y‖² }
//
// computed in closed form where the structure allows it and by an inner
// iterative solver otherwise, plus the dual route for a composition f∘g.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgrad/chain.hpp"
#include "mgrad/numerics.hpp"

namespace mgrad {

enum class SolverMethod { GradientDescent, QuasiNewton2Step, ClosedFormIfAvailable };

std::string to_string(SolverMethod m);
SolverMethod solver_method_from_string(const std::string& name);

struct InnerSolverConfig {
  SolverMethod method = SolverMethod::ClosedFormIfAvailable;
  std::size_t max_iters = 20000;
  /// Absolute tolerance on the subproblem gradient norm, scaled by max(1, ‖x‖) of the anchor.
  double grad_tol = 1e-11;
  /// Goldstein constant c ∈ (0, 0.5).
  double goldstein_c = 0.25;
  double expand = 2.0;
  double backtrack = 0.5;
  double initial_step = 1.0;
  /// Quadratic subproblems recognized from the structure are solved exactly.
  bool detect_closed_form = true;

  /// Tolerance-driven gradient descent with closed forms where available.
  static InnerSolverConfig theory();
  /// Two-step quasi-Newton solver used for training.
  static InnerSolverConfig practice();
  /// Always iterative (closed forms disabled); used to cross-check fast paths.
  static InnerSolverConfig iterative_only();

  bool uses_closed_form() const {
    return detect_closed_form || method == SolverMethod::ClosedFormIfAvailable;
  }
  void validate() const;
};

/// Objective with gradient for the inner solvers.
struct SmoothFunction {
  ScalarFn value;
  GradientFn grad;
};

struct MinimizeResult {
  Vec y;
  double value = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

struct LineSearchResult {
  double step = 0.0;
  Vec y;
  double value = 0.0;
  Vec grad;
  bool ok = false;
};

/// Goldstein line search along −g from y: accepts s with
///   c·s‖g‖² ≤ F(y) − F(y − s g) ≤ (1 − c)·s‖g‖².
/// When the decrease is below round-off the upper test is replaced by a
/// test on the directional derivative at the trial point.
LineSearchResult goldstein_line_search(const SmoothFunction& F, const Vec& y, double fy,
                                       const Vec& g, double step, const InnerSolverConfig& cfg);

/// Minimizes F from y0 with the configured method (ClosedFormIfAvailable
/// falls back to gradient descent here since F is opaque).
/// `tol` overrides cfg.grad_tol when positive.
/// Throws DivergenceError with the last objective values if F becomes non-finite.
MinimizeResult minimize(const SmoothFunction& F, const Vec& y0, const InnerSolverConfig& cfg,
                        double tol = -1.0);

/// Exactly two steps: a Goldstein gradient step, then a Barzilai-Borwein
/// step with s = ⟨Δy,Δg⟩/⟨Δg,Δg⟩ clamped to [1e-8, 1e8]. If the line search
/// fails, y0 is returned with line_search_failed set.
MinimizeResult quasi_newton_2step(const SmoothFunction& F, const Vec& y0,
                                  const InnerSolverConfig& cfg = InnerSolverConfig::practice());

struct EnvelopeResult {
  Vec minimizer;        // y*
  Vec moreau_gradient;  // −y*
  /// env(αf)(x) = αf(x + y*) + ½‖y*‖² (the α-scaled envelope).
  double envelope_value = 0.0;
  std::size_t iterations = 0;
  double residual = 0.0;
  bool converged = true;
  bool closed_form = false;
};

bool has_closed_form_prox(const Objective& f);

/// Exact envelope for squared loss, quadratic, linear form, ℓ1, pendulum
/// terminal cost and constants. Throws Error for anything else (use moreau_grad).
EnvelopeResult closed_form_prox(const Objective& f, const Vec& x, double alpha);

/// ∇env(αf)(x); α = 0 gives the zero gradient.
EnvelopeResult moreau_grad(const Objective& f, const Vec& x, double alpha,
                           const InnerSolverConfig& cfg = InnerSolverConfig::theory());
/// Same for an opaque smooth f given by value and gradient.
EnvelopeResult moreau_grad(const SmoothFunction& f, const Vec& x, double alpha,
                           const InnerSolverConfig& cfg = InnerSolverConfig::theory());

/// env_α(f)(x) = env(αf)(x)/α.
double envelope_value_scaled(const EnvelopeResult& r, double alpha);

/// |f(x) − env_α(f)(x)|; α must be positive.
double envelope_gap_check(const Objective& f, const Vec& x, double alpha,
                          const InnerSolverConfig& cfg = InnerSolverConfig::theory());

/// Smooth map g: ℝⁿ → ℝᵏ with reverse-mode product.
struct SmoothMap {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::function<Vec(const Vec&)> value;
  /// (∂g(x))ᵀ u
  std::function<Vec(const Vec&, const Vec&)> vjp;
  bool affine = false;
};

/// g(x) = φ(w, x) for a fixed parameter block.
SmoothMap layer_map(LayerPtr layer, Vec w);
/// g(x) = Ax.
SmoothMap linear_map(Mat A);

struct DualProxResult {
  Vec mu;               // μ after the requested iterations
  Vec minimizer;        // y* = argmin μᵀg(x + y) + ½‖y‖²
  Vec moreau_gradient;  // −y*
  double dual_value = 0.0;    // c(μ) − (αf)*(μ)
  double primal_value = 0.0;  // αf(g(x + y*)) + ½‖y*‖²
  std::vector<double> dual_trace;
  std::size_t iterations = 0;
};

/// Proximal gradient ascent on μ ↦ c(μ) − (αf)*(μ), where
/// c(μ) = min_y μᵀg(x+y) + ½‖y‖², started at μ = 0. The conjugate is never
/// formed: μ⁺ = β∇env((α/β)f)(μ/β + ∇c(μ)). Throws DivergenceError if the
/// dual objective decreases on 10 consecutive iterations.
DualProxResult dual_prox_gradient(const Objective& f, const SmoothMap& g, const Vec& x,
                                  double alpha, double beta, std::size_t iters,
                                  const InnerSolverConfig& cfg = InnerSolverConfig::theory());

/// μ̂ = (β/α)∇env((α/β)f)(g(x)). One dual iteration from μ = 0 yields α·μ̂.
Vec one_step_dual(const Objective& f, const SmoothMap& g, const Vec& x, double alpha, double beta,
                  const InnerSolverConfig& cfg = InnerSolverConfig::theory());

/// ∇env(f∘A)(x) = Aᵀu with (AAᵀ + Q⁻¹)u = Ax, for f(u) = ½uᵀQu with Q ≻ 0.
Vec linear_composition_moreau_grad(const Mat& Q, const Mat& A, const Vec& x);

}  // namespace mgrad
