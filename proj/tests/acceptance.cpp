// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "mgrad/errors.hpp"
#include "mgrad/experiments.hpp"

using namespace mgrad;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Mat random_spd(Rng& rng, std::size_t n, double floor) {
  const Mat A = rng.normal_mat(n, n);
  return A.transpose() * A + floor * Mat::identity(n);
}

LayerPtr smooth_layer(Rng& rng, std::size_t in, std::size_t out) {
  const Activation act = rng.below(2) ? Activation::Tanh : Activation::Softplus;
  return std::make_shared<DenseActivationLayer>(in, out, act);
}

Chain tanh_chain(std::size_t tau, std::size_t width) {
  std::vector<LayerPtr> layers;
  for (std::size_t t = 0; t < tau; ++t)
    layers.push_back(std::make_shared<DenseActivationLayer>(width, width, Activation::Tanh));
  return Chain(layers);
}

// ------------------------------------------------------------------ 1

Verdict backprop_vs_fd() {
  Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t tau = 1 + rng.below(4);
    std::vector<std::size_t> dims{1 + rng.below(8)};
    std::vector<LayerPtr> layers;
    for (std::size_t t = 0; t < tau; ++t) {
      dims.push_back(1 + rng.below(8));
      layers.push_back(smooth_layer(rng, dims[t], dims[t + 1]));
    }
    const Chain c(layers);
    const BlockParams w = c.init_params(rng);
    const Vec x0 = rng.normal_vec(dims.front());
    const Objective h = Objective::squared_loss(rng.normal_vec(dims.back()));
    const Vec g = backprop(c, w, x0, h).gradient.flatten();
    const Vec fd = finite_difference_gradient(
        [&](const Vec& flat) { return h.value(c.output(w.unflatten(flat), x0)); }, w.flatten());
    worst = std::max(worst, relative_error(g, fd, 1e-8));
  }
  return {worst <= 1e-5, "max relative error " + num(worst) + " (tol 1e-5)"};
}

// ------------------------------------------------------------------ 2

Verdict dual_chain_rule() {
  Rng rng(202);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = 1 + rng.below(5), k = 1 + rng.below(5);
    auto layer = std::make_shared<DenseActivationLayer>(n, k, Activation::Tanh);
    const Vec w = layer->init_params(rng);
    const LayerConstants lc = *layer->constants(w);
    const Mat Q = random_spd(rng, k, 0.5);
    const Vec b = rng.normal_vec(k);
    const Objective f = Objective::quadratic(Q, b);
    // tanh keeps g(·) in [−1, 1]ᵏ, where ‖∇f‖ ≤ ‖Q‖√k + ‖b‖
    const double ell_f = Q.spectral_norm() * std::sqrt(static_cast<double>(k)) + b.norm();
    const double alpha = 1.0 / (2.0 * ell_f * std::max(lc.L, 1e-12));
    const double beta = 1.0 / (2.0 * std::max(lc.ell * lc.ell, 1e-12));
    const Vec x = rng.normal_vec(n);
    const SmoothMap g = layer_map(layer, w);
    const DualProxResult dual = dual_prox_gradient(f, g, x, alpha, beta, 5000);

    const ScalarFn primal = [&](const Vec& y) {
      return alpha * f.value(g.value(x + y)) + 0.5 * y.squared_norm();
    };
    const GradientFn primal_grad = [&](const Vec& y) {
      return alpha * g.vjp(x + y, f.grad(g.value(x + y))) + y;
    };
    BruteForceOptions bo;
    bo.grad_tol = 1e-11;
    const BruteForceResult bf = brute_force_argmin(primal, primal_grad, Vec(n), bo);
    worst = std::max(worst, (dual.moreau_gradient + bf.argmin).norm());
  }
  return {worst <= 1e-4, "max |dual - primal| " + num(worst) + " (tol 1e-4)"};
}

// ------------------------------------------------------------------ 3

Verdict gap_bound() {
  Rng rng(303);
  double worst_excess = -1e300;
  bool ok = true;
  for (int i = 0; i < 20; ++i) {
    const Mat A = rng.normal_mat(3, 4);
    const Vec b = rng.normal_vec(3);
    const Objective abs1 = Objective::l1();
    const Objective nrm = Objective::norm_affine(A, b);
    const double ell_nrm = A.spectral_norm();
    const Vec x1 = rng.normal_vec(1, 2.0);
    const Vec x4 = rng.normal_vec(4, 2.0);
    for (double alpha : {0.1, 1.0}) {
      const double g1 = envelope_gap_check(abs1, x1, alpha);
      const double g2 = envelope_gap_check(nrm, x4, alpha);
      const double e1 = g1 - alpha * 1.0;
      const double e2 = g2 - alpha * ell_nrm * ell_nrm;
      worst_excess = std::max({worst_excess, e1, e2});
      ok = ok && g1 < alpha + 1e-12 && g2 < alpha * ell_nrm * ell_nrm + 1e-12;
    }
  }
  return {ok, "max gap - alpha*l^2 = " + num(worst_excess) + " (must be < 1e-12)"};
}

// ------------------------------------------------------------------ 4

Verdict closed_forms() {
  Rng rng(404);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = 1 + rng.below(6);
    const Vec x = rng.normal_vec(n, 2.0);
    const double a = rng.uniform(0.05, 3.0);

    const Mat Q = random_spd(rng, n, 0.1);
    const Vec b = rng.normal_vec(n);
    const Vec quad = closed_form_prox(Objective::quadratic(Q, b), x, a).moreau_gradient;
    // α(I + αQ)⁻¹(Qx + b)
    const Vec expect_q = solve(Mat::identity(n) + a * Q, a * (matvec(Q, x) + b));
    worst = std::max(worst, (quad - expect_q).norm_inf() / std::max(1.0, expect_q.norm_inf()));

    const Vec lam = rng.normal_vec(n);
    const Vec lin = closed_form_prox(Objective::linear(lam), x, a).moreau_gradient;
    worst = std::max(worst, (lin - a * lam).norm_inf() / std::max(1.0, a * lam.norm_inf()));

    const Vec st = closed_form_prox(Objective::l1(), x, a).moreau_gradient;
    Vec expect_s(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double shrunk = std::copysign(std::max(std::abs(x[j]) - a, 0.0), x[j]);
      expect_s[j] = x[j] - shrunk;
    }
    worst = std::max(worst, (st - expect_s).norm_inf() / std::max(1.0, expect_s.norm_inf()));
  }
  return {worst <= 1e-12, "max error " + num(worst) + " (tol 1e-12)"};
}

// ------------------------------------------------------------------ 5

Verdict reductions() {
  double worst_moreau = 0.0, worst_rtp = 0.0;
  const InnerSolverConfig solver = InnerSolverConfig::theory();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(500 + seed);
    const Chain c = tanh_chain(3, 3);
    const BlockParams w = c.init_params(rng);
    const Vec x0 = rng.normal_vec(3);
    const Objective h = Objective::squared_loss(rng.normal_vec(3));
    const Schedule s = make_schedule(0.5, 0.8, 3);

    AugLagConfig cfg;
    cfg.schedule = s;
    for (double g : s.gamma) cfg.beta.push_back(1.0 / g);
    const auto al = auglag_backward(auglag_forward(c, w, x0, cfg, solver), h, cfg);
    const auto mo = moreau_backward(moreau_forward(c, w, x0, solver), h, s);
    worst_moreau = std::max(worst_moreau,
                            (al.update.w.flatten() - apply_update(w, mo.update).flatten()).norm_inf());

    cfg.kappa = 0.7;
    cfg.beta.assign(3, 0.0);
    const auto al0 = auglag_backward(auglag_forward(c, w, x0, cfg, solver), h, cfg);
    const auto rtp = reg_target_prop(c, w, x0, h, 0.7, s, solver);
    worst_rtp = std::max(worst_rtp, (al0.update.w.flatten() - rtp.update.w.flatten()).norm_inf());
  }
  return {worst_moreau <= 1e-10 && worst_rtp <= 1e-10,
          "auglag vs moreau " + num(worst_moreau) + ", auglag(beta=0) vs reg-targetprop " + num(worst_rtp) +
              " (tol 1e-10)"};
}

// ------------------------------------------------------------------ 6

Verdict small_alpha() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(600 + seed);
    const Chain c = tanh_chain(2, 3);
    const BlockParams w = c.init_params(rng);
    const Vec x0 = rng.normal_vec(3);
    const Objective h = Objective::squared_loss(rng.normal_vec(3));
    const double alpha = 1e-5;
    const Schedule s = make_schedule(1.0, alpha, 2);
    const auto mo = moreau_backward(moreau_forward(c, w, x0, InnerSolverConfig::theory()), h, s);
    const auto bp = backprop(c, w, x0, h);
    for (std::size_t t = 0; t < 2; ++t)
      worst = std::max(worst, relative_error((1.0 / alpha) * mo.update.g[t], bp.gradient[t]));
  }
  return {worst <= 1e-3, "max relative deviation " + num(worst) + " (tol 1e-3)"};
}

// ------------------------------------------------------------------ 7

Verdict gd_bound() {
  Rng gen(707);
  const Mat Q = random_spd(gen, 10, 0.1);
  const Vec b = gen.normal_vec(10);
  const Vec x0 = gen.normal_vec(10);
  const double L = Q.spectral_norm();
  const double delta = 1.0 / (2.0 * L);
  const double f_star = -0.5 * dot(b, solve(Q, b));
  const double f0 = 0.5 * dot(x0, matvec(Q, x0)) + dot(b, x0);
  bool ok = true;
  double min_slack = 1e300;
  for (double eps : {0.0, 0.1}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const auto traj = noisy_gd_quadratic(Q, b, x0, delta, eps, 1000, rng);
      const auto rep = check_approx_gd_bound(traj.grad_norms, f0, delta, eps, f_star, L);
      ok = ok && rep.satisfied && rep.step_admissible;
      for (const auto& p : rep.points) min_slack = std::min(min_slack, p.bound - p.min_grad_sq);
    }
  }
  return {ok, "40 runs x 1000 steps, min slack " + num(min_slack)};
}

// ------------------------------------------------------------------ 8

struct PendulumRun {
  RunRecord record;
  Vec final_state;
};

Verdict pendulum() {
  auto run = [](std::size_t tau, OracleSpec spec, std::size_t iters) {
    PendulumParams p;
    p.horizon = tau;
    const PendulumOutcome o = run_pendulum(p, spec, iters);
    return PendulumRun{o.record, o.final_state};
  };
  OracleSpec mor;
  mor.kind = OracleKind::Moreau;
  mor.gamma = 0.5;
  mor.alpha = 128.0;
  OracleSpec gd;

  std::ostringstream detail;
  bool ok = true;
  std::vector<double> mor_best, gd_best;
  for (auto [tau, delta] : {std::pair<std::size_t, double>{50, 1.0}, {100, 0.25}}) {
    gd.delta = delta;
    const PendulumRun m = run(tau, mor, 200);
    const PendulumRun g = run(tau, gd, 200);
    const double h0 = m.record.rows.front().train_loss;
    const double rm = 1.0 - m.record.best_loss() / h0;
    const double rg = g.record.diverged ? 0.0 : 1.0 - g.record.best_loss() / h0;
    ok = ok && !m.record.diverged && !g.record.diverged && rm >= 0.9 && rg >= 0.9;
    mor_best.push_back(m.record.best_loss());
    gd_best.push_back(g.record.diverged ? INFINITY : g.record.best_loss());
    auto swing = [](const Vec& x) { return std::isfinite(x[0]) && std::abs(x[0] - M_PI) <= 0.2; };
    detail << "tau=" << tau << ": MorGD reduction " << num(rm) << (swing(m.final_state) ? " (swing-up)" : "")
           << ", GD(delta=" << delta << ") " << (g.record.diverged ? "diverged" : "reduction " + num(rg))
           << (!g.record.diverged && swing(g.final_state) ? " (swing-up)" : "") << "; ";
  }
  const bool below = mor_best[1] <= gd_best[1];
  ok = ok && below;
  detail << "MorGD best at tau=100 " << num(mor_best[1]) << (below ? " <= " : " > ") << "GD " << num(gd_best[1]);

  // Feasibility of the swing-up threshold: long GD at a step that is stable for τ = 100.
  gd.delta = std::ldexp(1.0, -10);
  const PendulumRun longrun = run(100, gd, 20000);
  detail << "; baseline GD(delta=2^-10, 20000 it, tau=100) |theta-pi| = "
         << num(std::abs(longrun.final_state[0] - M_PI));
  return {ok, detail.str()};
}

// ------------------------------------------------------------------ 9

Verdict mlp() {
  const ExperimentConfig cfg = ExperimentConfig::defaults(ExperimentKind::TrainMlp);
  const MlpData data = load_mlp_data(cfg);
  const Chain chain = build_mlp(cfg, data.train.dim(), data.train.classes);
  Rng init = Rng(cfg.seed).split(2);
  const BlockParams w0 = chain.init_params(init);
  MinibatchOptions mo;
  mo.epochs = 10;
  mo.batch = 256;
  mo.seed = 9;
  auto run = [&](const OracleSpec& s) { return minibatch_loop(data.train, nullptr, chain, s, w0, mo).record; };

  const RunRecord mor = run(cfg.oracle_spec());
  std::vector<GridCandidate> grid;
  for (double d : powers_of_two(-4, 4)) {
    OracleSpec s;
    s.delta = d;
    s.mu_reg = cfg.mu_reg;
    grid.push_back({"delta=" + num(d), s});
  }
  const GridResult gr = grid_search(grid, run, 10);
  const double sgd_best = gr.table[gr.best].best_loss;
  const double acc = mor.final_train_acc.value_or(0.0);
  const bool ok = !mor.diverged && acc >= 0.85 && mor.best_loss() <= 2.0 * sgd_best;
  return {ok, data.source + " n=" + std::to_string(data.train.size()) + ": Moreau accuracy " + num(acc) +
                  ", best loss " + num(mor.best_loss()) + " vs SGD(" + gr.table[gr.best].label + ") " +
                  num(sgd_best) + (mor.diverged ? ", diverged" : "")};
}

// ------------------------------------------------------------------ 10

Verdict optimality_form() {
  double worst = 0.0;
  bool converged = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t d0 = 1 + rng.below(3), d1 = 1 + rng.below(3), d2 = 1 + rng.below(3);
    const Chain c(std::vector<LayerPtr>{std::make_shared<DenseActivationLayer>(d0, d1, Activation::Tanh),
                                        std::make_shared<DenseActivationLayer>(d1, d2, Activation::Tanh)});
    const BlockParams w = c.init_params(rng);
    const Vec x0 = rng.normal_vec(d0);
    std::vector<int> label{static_cast<int>(rng.below(d2))};
    const Objective h = Objective::logistic(label, d2);
    const double ell_h = std::sqrt(2.0);  // ‖softmax − onehot‖ ≤ √2
    const auto cs = theoretical_stepsizes(*c.constants(w), ell_h).c;
    const auto xs = c.forward(w, x0);

    for (std::size_t t = 1; t <= 2; ++t) {
      const double alpha = 1.0 / std::max(cs[t - 1], 1.0);
      auto shifted = [&](const Vec& v) {
        BlockParams wv = w;
        wv[t - 1] = w[t - 1] + v;
        return wv;
      };
      // Moreau gradient by direct minimization over v_t
      const ScalarFn F = [&](const Vec& v) {
        return alpha * h.value(c.output(shifted(v), x0)) + 0.5 * v.squared_norm();
      };
      const GradientFn dF = [&](const Vec& v) {
        return alpha * backprop(c, shifted(v), x0, h).gradient[t - 1] + v;
      };
      BruteForceOptions bo;
      bo.grad_tol = 1e-12;
      const Vec v_bf = brute_force_argmin(F, dF, Vec(w[t - 1].size()), bo).argmin;

      // Joint problem: fixed point of its stationarity conditions
      //   λ_τ = ∇h(x_τ), λ_{s−1} = ∂ₓφ_s λ_s, v = −α ∂_wφ_t(w_t + v, x_{t−1}) λ_t.
      Vec v(w[t - 1].size());
      Vec lambda_t;
      double moved = 1.0;
      for (int it = 0; it < 100000 && moved > 1e-14; ++it) {
        const BlockParams wv = shifted(v);
        const auto states = c.forward(wv, x0);
        Vec lam = h.grad(states.back());
        for (std::size_t s = 2; s > t; --s) lam = c.layer(s - 1).vjp_x(wv[s - 1], states[s - 1], lam);
        lambda_t = lam;
        const Vec next = -alpha * c.layer(t - 1).vjp_w(wv[t - 1], xs[t - 1], lam);
        moved = (next - v).norm();
        v = 0.5 * (v + next);
      }
      converged = converged && moved <= 1e-12;

      // The same v_t from the local problem in λ_t* alone
      const Vec v_local = solve_local(c.layer(t - 1), Block::W, w[t - 1], xs[t - 1],
                                      LocalProblem{alpha * lambda_t, 1.0, 0.0, Vec(), 0.0},
                                      InnerSolverConfig::theory());
      worst = std::max({worst, (v_bf - v).norm(), (v_local - v).norm()});
    }
  }
  return {converged && worst <= 1e-4, "max |v_direct - v_joint|, |v_local - v_joint| = " + num(worst) + " (tol 1e-4)"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;  // 0: no limit
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "backprop matches finite differences", 30, backprop_vs_fd},
      {2, "dual chain rule vs primal brute force", 60, dual_chain_rule},
      {3, "envelope gap bound", 0, gap_bound},
      {4, "closed-form prox identities", 0, closed_forms},
      {5, "oracle reductions", 0, reductions},
      {6, "small-alpha consistency at gamma=1", 0, small_alpha},
      {7, "approximate-GD bound under noise", 0, gd_bound},
      {8, "pendulum MorGD vs GD", 300, pendulum},
      {9, "MLP stochastic Moreau training", 600, mlp},
      {10, "Moreau gradient from the joint problem", 0, optimality_form},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    const bool in_time = c.budget_seconds <= 0 || secs <= c.budget_seconds;
    const bool pass = v.pass && in_time;
    failed += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.name << " | " << v.detail
              << " | " << num(secs) << " s" << (in_time ? "" : " (over budget)") << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
