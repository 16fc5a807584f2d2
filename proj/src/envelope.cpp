#include "mgrad/envelope.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mgrad {

std::string to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::GradientDescent: return "gd";
    case SolverMethod::QuasiNewton2Step: return "qn2";
    case SolverMethod::ClosedFormIfAvailable: return "closed_form";
  }
  return "gd";
}

SolverMethod solver_method_from_string(const std::string& name) {
  if (name == "gd" || name == "gradient_descent") return SolverMethod::GradientDescent;
  if (name == "qn2" || name == "quasi_newton_2step") return SolverMethod::QuasiNewton2Step;
  if (name == "closed_form") return SolverMethod::ClosedFormIfAvailable;
  throw ConfigError("unknown inner solver '" + name + "' (expected gd|qn2|closed_form)");
}

InnerSolverConfig InnerSolverConfig::theory() { return InnerSolverConfig{}; }

InnerSolverConfig InnerSolverConfig::practice() {
  InnerSolverConfig c;
  c.method = SolverMethod::QuasiNewton2Step;
  c.max_iters = 2;
  c.grad_tol = 1e-9;
  return c;
}

InnerSolverConfig InnerSolverConfig::iterative_only() {
  InnerSolverConfig c;
  c.method = SolverMethod::GradientDescent;
  c.detect_closed_form = false;
  return c;
}

void InnerSolverConfig::validate() const {
  if (max_iters < 1) throw ConfigError("inner solver: max_iters must be at least 1");
  if (!(grad_tol > 0.0)) throw ConfigError("inner solver: grad_tol must be positive");
  if (!(goldstein_c > 0.0 && goldstein_c < 0.5))
    throw ConfigError("inner solver: Goldstein constant must lie in (0, 0.5)");
  if (!(expand > 1.0)) throw ConfigError("inner solver: expansion factor must exceed 1");
  if (!(backtrack > 0.0 && backtrack < 1.0))
    throw ConfigError("inner solver: backtrack factor must lie in (0, 1)");
  if (!(initial_step > 0.0)) throw ConfigError("inner solver: initial step must be positive");
}

// ---------------------------------------------------------------- line search

LineSearchResult goldstein_line_search(const SmoothFunction& F, const Vec& y, double fy,
                                       const Vec& g, double step, const InnerSolverConfig& cfg) {
  const double gg = g.squared_norm();
  const double c = cfg.goldstein_c;
  const double noise = 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(fy));
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double s = step;
  LineSearchResult best;
  auto shrink = [&] { s = lo > 0.0 ? 0.5 * (lo + hi) : s * cfg.backtrack; };

  for (int tries = 0; tries < 50; ++tries) {
    Vec yt = y;
    yt.axpy(-s, g);
    const double ft = F.value(yt);
    if (!std::isfinite(ft)) {
      hi = s;
      shrink();
      continue;
    }
    const double dec = fy - ft;
    const double pred = s * gg;
    if (c * pred <= noise) {
      // Function values cannot resolve the decrease; use the slope instead.
      Vec gt = F.grad(yt);
      if (-dot(gt, g) <= (1.0 - 2.0 * c) * gg) return {s, std::move(yt), ft, std::move(gt), true};
      hi = s;
      shrink();
      continue;
    }
    if (dec < c * pred) {
      hi = s;
      shrink();
    } else if (dec > (1.0 - c) * pred) {
      best = {s, yt, ft, Vec(), true};
      lo = s;
      s = std::isinf(hi) ? s * cfg.expand : 0.5 * (lo + hi);
    } else {
      Vec gt = F.grad(yt);
      return {s, std::move(yt), ft, std::move(gt), true};
    }
  }
  if (best.ok) best.grad = F.grad(best.y);
  return best;
}

namespace {

double bb_step(const Vec& dy, const Vec& dg) {
  const double num = dot(dy, dg);
  const double den = dg.squared_norm();
  if (den == 0.0) return 1.0;
  return std::clamp(num / den, 1e-8, 1e8);
}

void push_trace(std::vector<double>& trace, double v) {
  trace.push_back(v);
  if (trace.size() > 20) trace.erase(trace.begin());
}

}  // namespace

MinimizeResult quasi_newton_2step(const SmoothFunction& F, const Vec& y0,
                                  const InnerSolverConfig& cfg) {
  MinimizeResult out;
  const double f0 = F.value(y0);
  Vec g0 = F.grad(y0);
  if (!std::isfinite(f0) || !g0.all_finite())
    throw DivergenceError("quasi_newton_2step: non-finite objective at start", {f0});
  out.y = y0;
  out.value = f0;
  out.grad_norm = g0.norm();
  if (out.grad_norm == 0.0) {
    out.converged = true;
    return out;
  }
  LineSearchResult ls = goldstein_line_search(F, y0, f0, g0, cfg.initial_step, cfg);
  if (!ls.ok) {
    out.line_search_failed = true;
    return out;
  }
  const double s = bb_step(ls.y - y0, ls.grad - g0);
  Vec y2 = ls.y;
  y2.axpy(-s, ls.grad);
  const double f2 = F.value(y2);
  Vec g2 = F.grad(y2);
  if (!std::isfinite(f2) || !g2.all_finite())
    throw DivergenceError("quasi_newton_2step: non-finite objective after the BB step", {f0, ls.value, f2});
  out.y = std::move(y2);
  out.value = f2;
  out.grad_norm = g2.norm();
  out.iterations = 2;
  out.converged = out.grad_norm <= cfg.grad_tol;
  return out;
}

// Iterates beyond this size mean the subproblem is not bounded below.
constexpr double kUnbounded = 1e50;

MinimizeResult minimize(const SmoothFunction& F, const Vec& y0, const InnerSolverConfig& cfg,
                        double tol) {
  if (cfg.method == SolverMethod::QuasiNewton2Step) return quasi_newton_2step(F, y0, cfg);
  const double grad_tol = tol > 0.0 ? tol : cfg.grad_tol;

  MinimizeResult out;
  Vec y = y0;
  double fy = F.value(y);
  Vec g = F.grad(y);
  std::vector<double> trace{fy};
  if (!std::isfinite(fy) || !g.all_finite())
    throw DivergenceError("minimize: non-finite objective at start", trace);
  double step = cfg.initial_step;
  std::size_t k = 0;
  for (; k < cfg.max_iters; ++k) {
    if (g.norm() <= grad_tol) break;
    LineSearchResult ls = goldstein_line_search(F, y, fy, g, step, cfg);
    if (!ls.ok) {
      out.line_search_failed = true;
      break;
    }
    if (!ls.grad.all_finite()) throw DivergenceError("minimize: non-finite gradient", trace);
    const double s_next = dot(ls.y - y, ls.grad - g) > 0.0 ? bb_step(ls.y - y, ls.grad - g)
                                                           : ls.step;
    y = std::move(ls.y);
    g = std::move(ls.grad);
    fy = ls.value;
    push_trace(trace, fy);
    step = s_next;
    if (y.norm_inf() > kUnbounded) throw DivergenceError("minimize: iterates are unbounded", trace);
  }
  if (out.line_search_failed && y.norm_inf() > kUnbounded)
    throw DivergenceError("minimize: line search failed far from the start", trace);
  out.iterations = k;
  out.grad_norm = g.norm();
  out.converged = out.grad_norm <= grad_tol;
  out.value = fy;
  out.y = std::move(y);
  return out;
}

// ---------------------------------------------------------------- closed forms

bool has_closed_form_prox(const Objective& f) {
  const auto& s = f.spec();
  return std::holds_alternative<SquaredLoss>(s) || std::holds_alternative<Quadratic>(s) ||
         std::holds_alternative<LinearForm>(s) || std::holds_alternative<L1Norm>(s) ||
         std::holds_alternative<PendulumTerminal>(s) || std::holds_alternative<Constant>(s);
}

namespace {

EnvelopeResult finish(const Objective& f, const Vec& x, double alpha, Vec y) {
  EnvelopeResult r;
  const Vec z = x + y;
  r.envelope_value = alpha * f.value(z) + 0.5 * y.squared_norm();
  Vec res = y;
  // ℓ1 at a kink has no gradient; report zero residual for the exact closed form.
  if (!std::holds_alternative<L1Norm>(f.spec())) res.axpy(alpha, f.grad(z));
  else res = Vec(y.size());
  r.residual = res.norm();
  r.moreau_gradient = -y;
  r.minimizer = std::move(y);
  return r;
}

}  // namespace

EnvelopeResult closed_form_prox(const Objective& f, const Vec& x, double alpha) {
  if (alpha < 0.0) throw ConfigError("closed_form_prox: α must be non-negative");
  const auto& spec = f.spec();
  Vec y(x.size());
  if (const auto* o = std::get_if<SquaredLoss>(&spec)) {
    require_dim(x, o->target.size(), "squared loss prox");
    const double aw = alpha * o->weight;
    y = (-aw / (1.0 + aw)) * (x - o->target);
  } else if (const auto* o = std::get_if<Quadratic>(&spec)) {
    require_dim(x, o->b.size(), "quadratic prox");
    Mat M = Mat::identity(x.size()) + alpha * o->Q;
    y = solve(M, (-alpha) * (matvec(o->Q, x) + o->b));
  } else if (const auto* o = std::get_if<LinearForm>(&spec)) {
    require_dim(x, o->lambda.size(), "linear form prox");
    y = (-alpha) * o->lambda;
  } else if (const auto* o = std::get_if<L1Norm>(&spec)) {
    const double t = alpha * o->scale;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = std::copysign(std::max(std::abs(x[i]) - t, 0.0), x[i]);
      y[i] = z - x[i];
    }
  } else if (const auto* o = std::get_if<PendulumTerminal>(&spec)) {
    require_dim(x, 2, "pendulum terminal prox");
    y[0] = -2.0 * alpha * (x[0] - std::numbers::pi) / (1.0 + 2.0 * alpha);
    y[1] = -2.0 * alpha * o->rho * x[1] / (1.0 + 2.0 * alpha * o->rho);
  } else if (std::holds_alternative<Constant>(spec)) {
    // y = 0
  } else {
    throw Error("closed_form_prox: no closed form for objective kind '" + f.kind() +
                "'; use moreau_grad with an iterative solver");
  }
  EnvelopeResult r = finish(f, x, alpha, std::move(y));
  r.closed_form = true;
  return r;
}

EnvelopeResult moreau_grad(const SmoothFunction& f, const Vec& x, double alpha,
                           const InnerSolverConfig& cfg) {
  if (alpha < 0.0 || !std::isfinite(alpha)) throw ConfigError("moreau_grad: α must be finite and non-negative");
  EnvelopeResult r;
  if (alpha == 0.0) {
    r.minimizer = Vec(x.size());
    r.moreau_gradient = Vec(x.size());
    return r;
  }
  SmoothFunction F{
      [&](const Vec& y) { return alpha * f.value(x + y) + 0.5 * y.squared_norm(); },
      [&](const Vec& y) {
        Vec g = y;
        g.axpy(alpha, f.grad(x + y));
        return g;
      },
  };
  MinimizeResult m = minimize(F, Vec(x.size()), cfg, cfg.grad_tol * std::max(1.0, x.norm()));
  r.envelope_value = m.value;
  r.iterations = m.iterations;
  r.residual = m.grad_norm;
  r.converged = m.converged;
  r.moreau_gradient = -m.y;
  r.minimizer = std::move(m.y);
  return r;
}

EnvelopeResult moreau_grad(const Objective& f, const Vec& x, double alpha,
                           const InnerSolverConfig& cfg) {
  if (alpha < 0.0 || !std::isfinite(alpha)) throw ConfigError("moreau_grad: α must be finite and non-negative");
  if (alpha == 0.0) return moreau_grad(SmoothFunction{}, x, 0.0, cfg);
  if (cfg.uses_closed_form() && has_closed_form_prox(f)) return closed_form_prox(f, x, alpha);
  return moreau_grad(SmoothFunction{[&](const Vec& z) { return f.value(z); },
                                    [&](const Vec& z) { return f.grad(z); }},
                     x, alpha, cfg);
}

double envelope_value_scaled(const EnvelopeResult& r, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("envelope_value_scaled: α must be positive");
  return r.envelope_value / alpha;
}

double envelope_gap_check(const Objective& f, const Vec& x, double alpha,
                          const InnerSolverConfig& cfg) {
  const EnvelopeResult r = moreau_grad(f, x, alpha, cfg);
  return std::abs(f.value(x) - envelope_value_scaled(r, alpha));
}

// ---------------------------------------------------------------- compositions

SmoothMap layer_map(LayerPtr layer, Vec w) {
  SmoothMap g;
  g.in_dim = layer->in_dim();
  g.out_dim = layer->out_dim();
  g.affine = layer->affine_in_x();
  g.value = [layer, w](const Vec& x) { return layer->eval(w, x); };
  g.vjp = [layer, w](const Vec& x, const Vec& u) { return layer->vjp_x(w, x, u); };
  return g;
}

SmoothMap linear_map(Mat A) {
  SmoothMap g;
  g.in_dim = A.cols();
  g.out_dim = A.rows();
  g.affine = true;
  g.value = [A](const Vec& x) { return matvec(A, x); };
  g.vjp = [A](const Vec&, const Vec& u) { return tmatvec(A, u); };
  return g;
}

namespace {

/// argmin_y μᵀg(x+y) + ½‖y‖², warm-started at 0.
Vec inner_dual_minimizer(const SmoothMap& g, const Vec& x, const Vec& mu,
                         const InnerSolverConfig& cfg) {
  if (g.affine) return -g.vjp(x, mu);
  SmoothFunction F{
      [&](const Vec& y) { return dot(mu, g.value(x + y)) + 0.5 * y.squared_norm(); },
      [&](const Vec& y) { return y + g.vjp(x + y, mu); },
  };
  InnerSolverConfig c = cfg;
  if (c.method == SolverMethod::QuasiNewton2Step) c.method = SolverMethod::GradientDescent;
  return minimize(F, Vec(x.size()), c, c.grad_tol * std::max(1.0, x.norm())).y;
}

}  // namespace

DualProxResult dual_prox_gradient(const Objective& f, const SmoothMap& g, const Vec& x,
                                  double alpha, double beta, std::size_t iters,
                                  const InnerSolverConfig& cfg) {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("dual_prox_gradient: α and β must be positive");
  require_dim(x, g.in_dim, "dual_prox_gradient point");
  DualProxResult out;
  Vec mu(g.out_dim);
  std::optional<double> conj;  // (αf)*(μ), unknown at μ = 0
  std::optional<double> prev_dual;
  std::size_t decreases = 0;
  Vec y = inner_dual_minimizer(g, x, mu, cfg);
  for (std::size_t k = 0; k < iters; ++k) {
    const Vec gc = g.value(x + y);  // ∇c(μ)
    if (conj) {
      const double d = dot(mu, gc) + 0.5 * y.squared_norm() - *conj;
      out.dual_trace.push_back(d);
      decreases = (prev_dual && d < *prev_dual - 1e-12 * (1.0 + std::abs(d))) ? decreases + 1 : 0;
      prev_dual = d;
      if (decreases >= 10)
        throw DivergenceError("dual_prox_gradient: dual objective decreased on 10 consecutive steps; "
                              "check the α and β step-size bounds",
                              out.dual_trace);
    }
    Vec lam = mu;
    lam.axpy(beta, gc);
    const Vec v = (1.0 / beta) * lam;
    const EnvelopeResult e = moreau_grad(f, v, alpha / beta, cfg);
    mu = beta * e.moreau_gradient;
    // z = prox_{(α/β)f}(λ/β) realizes the conjugate value without forming it.
    const Vec z = v - e.moreau_gradient;
    conj = dot(mu, z) - alpha * f.value(z);
    y = inner_dual_minimizer(g, x, mu, cfg);
    out.iterations = k + 1;
  }
  out.dual_value = dot(mu, g.value(x + y)) + 0.5 * y.squared_norm() - conj.value_or(0.0);
  out.primal_value = alpha * f.value(g.value(x + y)) + 0.5 * y.squared_norm();
  out.moreau_gradient = -y;
  out.minimizer = std::move(y);
  out.mu = std::move(mu);
  return out;
}

Vec one_step_dual(const Objective& f, const SmoothMap& g, const Vec& x, double alpha, double beta,
                  const InnerSolverConfig& cfg) {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("one_step_dual: α and β must be positive");
  const EnvelopeResult e = moreau_grad(f, g.value(x), alpha / beta, cfg);
  return (beta / alpha) * e.moreau_gradient;
}

Vec linear_composition_moreau_grad(const Mat& Q, const Mat& A, const Vec& x) {
  const std::size_t k = Q.rows();
  Mat Qinv(k, k);
  for (std::size_t j = 0; j < k; ++j) {
    Vec col = solve(Q, Vec::basis(k, j));
    for (std::size_t i = 0; i < k; ++i) Qinv(i, j) = col[i];
  }
  const Mat M = A * A.transpose() + Qinv;
  return tmatvec(A, solve(M, matvec(A, x)));
}

}  // namespace mgrad
