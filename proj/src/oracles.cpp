#include "mgrad/oracles.hpp"

#include <algorithm>
#include <cmath>

namespace mgrad {

BlockParams apply_update(const BlockParams& w, const OracleOutput& out) {
  if (const auto* d = std::get_if<DeltaUpdate>(&out)) {
    BlockParams next = w;
    next.axpy(-1.0, d->g);
    return next;
  }
  const auto& r = std::get<Replacement>(out);
  if (r.w.size() != w.size()) throw DimensionError("replacement block count", w.size(), r.w.size());
  return r.w;
}

bool is_delta(const OracleOutput& out) { return std::holds_alternative<DeltaUpdate>(out); }

const BlockParams& output_blocks(const OracleOutput& out) {
  if (const auto* d = std::get_if<DeltaUpdate>(&out)) return d->g;
  return std::get<Replacement>(out).w;
}

// ---------------------------------------------------------------- local problems

namespace {

/// Conjugate gradients on a symmetric positive semidefinite operator, from 0.
/// On a consistent singular system this returns the minimum-norm solution.
Vec conjugate_gradient(const std::function<Vec(const Vec&)>& op, const Vec& b) {
  const std::size_t n = b.size();
  Vec u(n);
  Vec r = b;
  Vec p = r;
  double rr = r.squared_norm();
  const double stop = 1e-13 * std::max(b.norm(), 1e-300);
  for (std::size_t it = 0; it < 10 * n + 50 && std::sqrt(rr) > stop; ++it) {
    const Vec Ap = op(p);
    const double pAp = dot(p, Ap);
    if (!(pAp > 0.0)) break;
    const double a = rr / pAp;
    u.axpy(a, p);
    r.axpy(-a, Ap);
    const double rr_next = r.squared_norm();
    const double ratio = rr_next / rr;
    rr = rr_next;
    p = r + ratio * p;
  }
  return u;
}

}  // namespace

Vec solve_local(const Layer& layer, Block block, const Vec& w, const Vec& x,
                const LocalProblem& prob, const InnerSolverConfig& cfg, LocalSolveStats* stats) {
  const bool on_w = block == Block::W;
  const Vec& a = on_w ? w : x;
  const std::size_t n = a.size();
  if (n == 0) return Vec();
  if (prob.rho < 0.0 || prob.kappa < 0.0 || prob.nu < 0.0)
    throw ConfigError("solve_local: weights must be non-negative");

  auto phi = [&](const Vec& v) { return on_w ? layer.eval(v, x) : layer.eval(w, v); };
  auto vjp = [&](const Vec& v, const Vec& l) { return on_w ? layer.vjp_w(v, x, l) : layer.vjp_x(w, v, l); };
  auto jvp = [&](const Vec& v, const Vec& d) { return on_w ? layer.jvp_w(v, x, d) : layer.jvp_x(w, v, d); };
  const bool has_s = !prob.s.empty();
  const bool has_z = prob.kappa > 0.0;
  if (has_z && prob.z.empty()) throw Error("solve_local: κ > 0 requires a target z");

  LocalSolveStats local;
  local.solves = 1;
  const bool affine = on_w ? layer.affine_in_w() : layer.affine_in_x();
  Vec u;
  if (affine && cfg.uses_closed_form()) {
    // F is quadratic: ((ρ+ν)I + κJᵀJ)u = −Jᵀs − κJᵀ(φ(a) − z) − νa.
    local.closed_form = 1;
    const double diag = prob.rho + prob.nu;
    Vec cot(phi(a).size());
    if (has_s) cot += prob.s;
    if (has_z) cot.axpy(prob.kappa, phi(a) - prob.z);
    Vec rhs = -vjp(a, cot);
    rhs.axpy(-prob.nu, a);
    if (!has_z) {
      if (diag > 0.0) {
        u = (1.0 / diag) * rhs;
      } else if (rhs.norm() == 0.0) {
        u = Vec(n);
      } else {
        throw Error("solve_local: unbounded linear subproblem (no proximity, no penalty)");
      }
    } else {
      u = conjugate_gradient(
          [&](const Vec& d) {
            Vec out = prob.kappa * vjp(a, jvp(a, d));
            out.axpy(diag, d);
            return out;
          },
          rhs);
    }
  } else {
    SmoothFunction F{
        [&](const Vec& du) {
          const Vec v = a + du;
          const Vec p = phi(v);
          double val = 0.5 * prob.rho * du.squared_norm() + 0.5 * prob.nu * v.squared_norm();
          if (has_s) val += dot(prob.s, p);
          if (has_z) val += 0.5 * prob.kappa * (p - prob.z).squared_norm();
          return val;
        },
        [&](const Vec& du) {
          const Vec v = a + du;
          Vec cot = has_s ? prob.s : Vec(layer.batch(on_w ? x : v) * layer.out_dim());
          if (has_z) cot.axpy(prob.kappa, phi(v) - prob.z);
          Vec g = vjp(v, cot);
          g.axpy(prob.rho, du);
          g.axpy(prob.nu, v);
          return g;
        },
    };
    MinimizeResult m = minimize(F, Vec(n), cfg, cfg.grad_tol * std::max(1.0, a.norm()));
    local.iterations = m.iterations;
    local.unconverged = m.converged ? 0 : 1;
    local.max_residual = m.grad_norm;
    u = std::move(m.y);
  }
  if (stats) {
    stats->solves += local.solves;
    stats->closed_form += local.closed_form;
    stats->iterations += local.iterations;
    stats->unconverged += local.unconverged;
    stats->max_residual = std::max(stats->max_residual, local.max_residual);
  }
  return u;
}

// ---------------------------------------------------------------- classical

ClassicalTape classical_forward(const Chain& chain, const BlockParams& w, const Vec& x0) {
  ClassicalTape tape;
  tape.states = chain.forward(w, x0);
  for (std::size_t t = 0; t < chain.tau(); ++t) {
    LayerPtr layer = chain.layers()[t];
    const Vec& wt = w[t];
    const Vec& xt = tape.states[t];
    tape.phi_x.push_back([layer, wt, xt](const Vec& l) { return layer->vjp_x(wt, xt, l); });
    tape.phi_w.push_back([layer, wt, xt](const Vec& l) { return layer->vjp_w(wt, xt, l); });
  }
  return tape;
}

DeltaUpdate BackpropResult::delta(double step) const {
  DeltaUpdate d{gradient};
  for (std::size_t t = 0; t < d.g.size(); ++t) d.g[t] *= step;
  return d;
}

BackpropResult backprop(const Chain& chain, const BlockParams& w, const Vec& x0,
                        const Objective& h, double mu_reg) {
  const ClassicalTape tape = classical_forward(chain, w, x0);
  const std::size_t tau = chain.tau();
  BackpropResult out;
  out.value = h.value(tape.states.back());
  out.lambda.resize(tau);
  std::vector<Vec> g(tau);
  Vec lam = h.grad(tape.states.back());
  require_dim(lam, tape.states.back().size(), "objective gradient");
  for (std::size_t t = tau; t-- > 0;) {
    out.lambda[t] = lam;
    g[t] = tape.phi_w[t](lam);
    if (mu_reg != 0.0) g[t].axpy(mu_reg, w[t]);
    if (t > 0) lam = tape.phi_x[t](lam);
  }
  if (mu_reg != 0.0) out.value += 0.5 * mu_reg * w.squared_norm();
  out.gradient = BlockParams(std::move(g));
  return out;
}

// ---------------------------------------------------------------- tape

OracleTape::OracleTape(const Chain& chain, BlockParams w, std::vector<Vec> states,
                       InnerSolverConfig cfg)
    : chain_(&chain), w_(std::move(w)), states_(std::move(states)), cfg_(cfg) {
  cfg_.validate();
  if (states_.size() != w_.size() + 1)
    throw DimensionError("tape state count", w_.size() + 1, states_.size());
}

Vec OracleTape::solve_x(std::size_t t, const LocalProblem& p) const {
  try {
    return solve_local(chain_->layer(t - 1), Block::X, w_[t - 1], states_[t - 1], p, cfg_, &stats_);
  } catch (const DivergenceError& e) {
    throw DivergenceError("layer " + std::to_string(t) + ", x-form: " + e.what(), e.trace());
  }
}

Vec OracleTape::solve_w(std::size_t t, const LocalProblem& p) const {
  try {
    return solve_local(chain_->layer(t - 1), Block::W, w_[t - 1], states_[t - 1], p, cfg_, &stats_);
  } catch (const DivergenceError& e) {
    throw DivergenceError("layer " + std::to_string(t) + ", w-form: " + e.what(), e.trace());
  }
}

Vec OracleTape::phi_x(std::size_t t, const Vec& lambda) const {
  return -solve_x(t, LocalProblem{lambda, 1.0, 0.0, Vec(), 0.0});
}

Vec OracleTape::phi_w(std::size_t t, const Vec& lambda, double nu) const {
  return -solve_w(t, LocalProblem{lambda, 1.0, 0.0, Vec(), nu});
}

OracleTape moreau_forward(const Chain& chain, const BlockParams& w, const Vec& x0,
                          const InnerSolverConfig& cfg) {
  return OracleTape(chain, w, chain.forward(w, x0), cfg);
}

namespace {

void check_schedule(const Schedule& s, std::size_t tau) {
  if (s.gamma.size() != tau || s.alpha.size() != tau)
    throw DimensionError("schedule length", tau, s.gamma.size());
  for (std::size_t t = 0; t < tau; ++t)
    if (!(s.gamma[t] > 0.0) || !(s.alpha[t] > 0.0))
      throw ConfigError("schedule entries must be positive");
}

}  // namespace

MoreauBackwardResult moreau_backward(const OracleTape& tape, const Objective& h,
                                     const Schedule& sched, double mu_reg) {
  const std::size_t tau = tape.tau();
  check_schedule(sched, tau);
  MoreauBackwardResult out;
  out.lambda.resize(tau);
  std::vector<Vec> g(tau);
  const double g_top = sched.gamma[tau - 1];
  Vec lam = (1.0 / g_top) * moreau_grad(h, tape.states().back(), g_top, tape.solver()).moreau_gradient;
  for (std::size_t t = tau; t >= 1; --t) {
    out.lambda[t - 1] = lam;
    const double a = sched.alpha[t - 1];
    g[t - 1] = tape.phi_w(t, a * lam, a * mu_reg);
    if (t > 1) {
      const double gp = sched.gamma[t - 2];
      lam = (1.0 / gp) * tape.phi_x(t, gp * lam);
    }
  }
  out.update.g = BlockParams(std::move(g));
  return out;
}

// ---------------------------------------------------------------- penalized family

void AugLagConfig::validate(std::size_t tau) const {
  if (!(kappa >= 0.0)) throw ConfigError("auglag: κ must be non-negative");
  if (beta.size() != tau) throw DimensionError("auglag β schedule length", tau, beta.size());
  for (double b : beta)
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("auglag: β_t must be finite and non-negative");
  if (!(mu_reg >= 0.0)) throw ConfigError("auglag: regularization weight must be non-negative");
  check_schedule(schedule, tau);
}

OracleTape auglag_forward(const Chain& chain, const BlockParams& w, const Vec& x0,
                          const AugLagConfig& cfg, const InnerSolverConfig& solver) {
  cfg.validate(chain.tau());
  return OracleTape(chain, w, chain.forward(w, x0), solver);
}

namespace {

/// Shared sweep for the augmented-Lagrangian and regularized target-propagation
/// passes. Without β the multipliers are identically zero.
PenalizedResult penalized_sweep(const OracleTape& tape, const Objective& h, double kappa,
                                const std::vector<double>* beta, const Schedule& sched,
                                double mu_reg) {
  const std::size_t tau = tape.tau();
  const auto& x = tape.states();
  PenalizedResult out;
  out.targets.resize(tau);
  out.lambda.resize(tau);
  std::vector<Vec> wplus(tau);

  const double c_top = 1.0 / (1.0 / sched.gamma[tau - 1] + kappa);
  Vec xplus = x[tau] - moreau_grad(h, x[tau], c_top, tape.solver()).moreau_gradient;
  for (std::size_t t = tau; t >= 1; --t) {
    out.targets[t - 1] = xplus;
    Vec lam = beta ? (*beta)[t - 1] * (x[t] - xplus) : Vec(xplus.size());
    const double a = sched.alpha[t - 1];
    LocalProblem pw{beta ? a * lam : Vec(), 1.0, a * kappa, xplus, a * mu_reg};
    wplus[t - 1] = tape.params()[t - 1] + tape.solve_w(t, pw);
    if (t > 1) {
      const double c = 1.0 / (1.0 / sched.gamma[t - 2] + kappa);
      LocalProblem px{beta ? c * lam : Vec(), 1.0, c * kappa, xplus, 0.0};
      xplus = x[t - 1] + tape.solve_x(t, px);
    }
    out.lambda[t - 1] = std::move(lam);
  }
  out.update.w = BlockParams(std::move(wplus));
  return out;
}

}  // namespace

PenalizedResult auglag_backward(const OracleTape& tape, const Objective& h, const AugLagConfig& cfg) {
  cfg.validate(tape.tau());
  return penalized_sweep(tape, h, cfg.kappa, &cfg.beta, cfg.schedule, cfg.mu_reg);
}

PenalizedResult reg_target_prop(const Chain& chain, const BlockParams& w, const Vec& x0,
                                const Objective& h, double kappa, const Schedule& sched,
                                const InnerSolverConfig& solver, double mu_reg) {
  if (!(kappa >= 0.0)) throw ConfigError("reg_target_prop: κ must be non-negative");
  check_schedule(sched, chain.tau());
  const OracleTape tape(chain, w, chain.forward(w, x0), solver);
  return penalized_sweep(tape, h, kappa, nullptr, sched, mu_reg);
}

PenalizedResult target_prop(const Chain& chain, const BlockParams& w, const Vec& x0,
                            const Objective& h, double kappa, const InnerSolverConfig& solver,
                            double mu_reg) {
  if (!(kappa > 0.0)) throw ConfigError("target_prop: κ must be positive");
  const OracleTape tape(chain, w, chain.forward(w, x0), solver);
  const std::size_t tau = chain.tau();
  const auto& x = tape.states();
  PenalizedResult out;
  out.targets.resize(tau);
  out.lambda.assign(tau, Vec());
  std::vector<Vec> wplus(tau);
  Vec xplus = x[tau] - moreau_grad(h, x[tau], 1.0 / kappa, solver).moreau_gradient;
  for (std::size_t t = tau; t >= 1; --t) {
    out.targets[t - 1] = xplus;
    out.lambda[t - 1] = Vec(xplus.size());
    wplus[t - 1] = w[t - 1] + tape.solve_w(t, LocalProblem{Vec(), 0.0, 1.0, xplus, mu_reg / kappa});
    if (t > 1) xplus = x[t - 1] + tape.solve_x(t, LocalProblem{Vec(), 0.0, 1.0, xplus, 0.0});
  }
  out.update.w = BlockParams(std::move(wplus));
  return out;
}

PenalizedResult proximal_backprop(const Chain& chain, const BlockParams& w, const Vec& x0,
                                  const Objective& h, double alpha, const InnerSolverConfig& solver,
                                  double mu_reg) {
  if (!(alpha > 0.0)) throw ConfigError("proximal_backprop: α must be positive");
  const BackpropResult bp = backprop(chain, w, x0, h);
  const OracleTape tape(chain, w, chain.forward(w, x0), solver);
  const std::size_t tau = chain.tau();
  PenalizedResult out;
  out.targets.resize(tau);
  out.lambda = bp.lambda;
  std::vector<Vec> wplus(tau);
  for (std::size_t t = tau; t >= 1; --t) {
    Vec z = tape.states()[t] - bp.lambda[t - 1];
    wplus[t - 1] = w[t - 1] + tape.solve_w(t, LocalProblem{Vec(), 1.0, alpha, z, alpha * mu_reg});
    out.targets[t - 1] = std::move(z);
  }
  out.update.w = BlockParams(std::move(wplus));
  return out;
}

// ---------------------------------------------------------------- dispatch

std::string to_string(OracleKind k) {
  switch (k) {
    case OracleKind::Backprop: return "backprop";
    case OracleKind::Moreau: return "moreau";
    case OracleKind::AugLag: return "auglag";
    case OracleKind::TargetProp: return "targetprop";
    case OracleKind::RegTargetProp: return "reg-targetprop";
    case OracleKind::ProxBackprop: return "proxbp";
  }
  return "backprop";
}

OracleKind oracle_kind_from_string(const std::string& name) {
  for (auto k : {OracleKind::Backprop, OracleKind::Moreau, OracleKind::AugLag, OracleKind::TargetProp,
                 OracleKind::RegTargetProp, OracleKind::ProxBackprop})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown oracle '" + name +
                    "' (expected backprop|moreau|auglag|targetprop|reg-targetprop|proxbp)");
}

void OracleSpec::validate() const {
  if (!(delta >= 0.0)) throw ConfigError("oracle: δ must be non-negative");
  if (!(gamma > 0.0) || !(alpha > 0.0)) throw ConfigError("oracle: γ and α must be positive");
  if (!(kappa >= 0.0)) throw ConfigError("oracle: κ must be non-negative");
  if (kind == OracleKind::TargetProp && !(kappa > 0.0))
    throw ConfigError("oracle: target propagation needs κ > 0");
  if (!(mu_reg >= 0.0)) throw ConfigError("oracle: regularization weight must be non-negative");
  if (!std::isfinite(beta)) throw ConfigError("oracle: β must be finite");
  solver.validate();
}

OracleCall run_oracle(const OracleSpec& spec, const Chain& chain, const BlockParams& w,
                      const Vec& x0, const Objective& h) {
  spec.validate();
  OracleCall call{DeltaUpdate{}, {}};
  switch (spec.kind) {
    case OracleKind::Backprop: {
      call.output = backprop(chain, w, x0, h, spec.mu_reg).delta(spec.delta);
      break;
    }
    case OracleKind::Moreau: {
      const OracleTape tape = moreau_forward(chain, w, x0, spec.solver);
      call.output = moreau_backward(tape, h, make_schedule(spec.gamma, spec.alpha, chain.tau()),
                                    spec.mu_reg)
                        .update;
      call.stats = tape.stats();
      break;
    }
    case OracleKind::AugLag: {
      AugLagConfig cfg;
      cfg.kappa = spec.kappa;
      cfg.schedule = make_schedule(spec.gamma, spec.alpha, chain.tau());
      cfg.mu_reg = spec.mu_reg;
      for (double g : cfg.schedule.gamma) cfg.beta.push_back(spec.beta < 0.0 ? 1.0 / g : spec.beta);
      const OracleTape tape = auglag_forward(chain, w, x0, cfg, spec.solver);
      call.output = auglag_backward(tape, h, cfg).update;
      call.stats = tape.stats();
      break;
    }
    case OracleKind::TargetProp:
      call.output = target_prop(chain, w, x0, h, spec.kappa, spec.solver, spec.mu_reg).update;
      break;
    case OracleKind::RegTargetProp:
      call.output = reg_target_prop(chain, w, x0, h, spec.kappa,
                                    make_schedule(spec.gamma, spec.alpha, chain.tau()), spec.solver,
                                    spec.mu_reg)
                        .update;
      break;
    case OracleKind::ProxBackprop:
      call.output = proximal_backprop(chain, w, x0, h, spec.alpha, spec.solver, spec.mu_reg).update;
      break;
  }
  return call;
}

}  // namespace mgrad
