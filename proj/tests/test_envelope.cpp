#include <cmath>

#include "doctest.h"
#include "mgrad/envelope.hpp"

using namespace mgrad;

namespace {

Mat spd(Rng& rng, std::size_t n, double shift) {
  const Mat B = rng.normal_mat(n, n);
  return B.transpose() * B + shift * Mat::identity(n);
}

}  // namespace

TEST_CASE("solver config presets") {
  CHECK(InnerSolverConfig::theory().method == SolverMethod::ClosedFormIfAvailable);
  CHECK(InnerSolverConfig::practice().method == SolverMethod::QuasiNewton2Step);
  CHECK_FALSE(InnerSolverConfig::iterative_only().uses_closed_form());
  InnerSolverConfig bad;
  bad.goldstein_c = 0.6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = InnerSolverConfig{};
  bad.grad_tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(solver_method_from_string(to_string(SolverMethod::QuasiNewton2Step)) == SolverMethod::QuasiNewton2Step);
}

TEST_CASE("moreau gradient examples") {
  Rng rng(1);
  const Vec x = rng.normal_vec(3);
  for (double a : {0.1, 1.0, 5.0}) {
    const auto half_sq = moreau_grad(Objective::squared_loss(Vec(3)), x, a);
    CHECK(relative_error(half_sq.moreau_gradient, (a / (1.0 + a)) * x) < 1e-14);
    CHECK((half_sq.moreau_gradient + half_sq.minimizer).norm() == 0.0);

    const Vec lam{1.0, -2.0, 0.5};
    CHECK(relative_error(moreau_grad(Objective::linear(lam), x, a).moreau_gradient, a * lam) < 1e-14);

    for (double s : {-3.0, -0.05, 0.0, 0.4, 2.0}) {
      const double expect = (s > 0) - (s < 0) ? std::copysign(std::min(a, std::abs(s)), s) : 0.0;
      CHECK(moreau_grad(Objective::l1(), Vec{s}, a).moreau_gradient[0] == doctest::Approx(expect));
    }
  }
  CHECK(moreau_grad(Objective::squared_loss(Vec(3)), x, 0.0).moreau_gradient.norm() == 0.0);
  CHECK_THROWS_AS(moreau_grad(Objective::l1(), x, -1.0), ConfigError);
}

TEST_CASE("closed-form prox") {
  Rng rng(2);
  const Mat Q = spd(rng, 3, 0.5);
  const Vec b = rng.normal_vec(3), x = rng.normal_vec(3);
  const double a = 0.7;
  const auto r = closed_form_prox(Objective::quadratic(Q, b), x, a);
  CHECK(r.closed_form);
  CHECK((matvec(Mat::identity(3) + a * Q, r.minimizer) + a * (matvec(Q, x) + b)).norm() < 1e-12);
  const Vec t{1.0, 2.0, 3.0};
  const auto d = closed_form_prox(Objective::squared_loss(t), x, a);
  CHECK(relative_error(d.moreau_gradient, (a / (1 + a)) * (x - t)) < 1e-14);
  CHECK_THROWS_AS(closed_form_prox(Objective::logistic({0}, 3), x, a), Error);
  CHECK_FALSE(has_closed_form_prox(Objective::logistic({0}, 3)));
  CHECK(has_closed_form_prox(Objective::l1()));
}

TEST_CASE("iterative path agrees with the closed form and is optimal") {
  Rng rng(3);
  const InnerSolverConfig it = InnerSolverConfig::iterative_only();
  for (int i = 0; i < 10; ++i) {
    const Mat Q = spd(rng, 4, 0.1);
    const Vec b = rng.normal_vec(4), x = rng.normal_vec(4);
    const Objective f = Objective::quadratic(Q, b);
    const auto r = moreau_grad(f, x, 0.8, it);
    CHECK_FALSE(r.closed_form);
    CHECK(relative_error(r.moreau_gradient, closed_form_prox(f, x, 0.8).moreau_gradient) < 1e-8);
    // first-order condition α∇f(x + y*) + y* = 0
    CHECK((0.8 * f.grad(x + r.minimizer) + r.minimizer).norm() <= it.grad_tol * std::max(1.0, x.norm()) * 1.0001);
  }
  // envelope never exceeds the α-scaled objective at y = 0
  const Objective lg = Objective::logistic({2, 0}, 3);
  const Vec x = rng.normal_vec(6);
  const auto r = moreau_grad(lg, x, 1.5);
  CHECK(r.envelope_value <= 1.5 * lg.value(x));
}

TEST_CASE("small-alpha consistency") {
  Rng rng(4);
  const Objective f = Objective::logistic({1, 0}, 2);
  const Vec x = rng.normal_vec(4);
  std::vector<double> errs;
  for (double a : {1e-2, 1e-3, 1e-4}) {
    const Vec g = moreau_grad(f, x, a).moreau_gradient;
    errs.push_back((g - a * f.grad(x)).norm());
  }
  const double C = errs[0] / 1e-4;
  CHECK(errs[1] <= C * 1e-6 * 1.5);
  CHECK(errs[2] <= C * 1e-8 * 1.5);
}

TEST_CASE("scaling convention") {
  Rng rng(5);
  const Vec x = rng.normal_vec(3), t = rng.normal_vec(3);
  const double a = 0.3;
  // env_α(f) = env(αf)/α, so α·∇env_α(f) = ∇env(αf)
  const auto r = moreau_grad(Objective::squared_loss(t), x, a);
  CHECK(envelope_value_scaled(r, a) * a == doctest::Approx(r.envelope_value));
}

TEST_CASE("absolute value envelope gradient is 1/alpha-Lipschitz") {
  Rng rng(6);
  for (double a : {0.1, 1.0}) {
    for (int i = 0; i < 200; ++i) {
      const double u = rng.normal(), v = rng.normal();
      const double gu = moreau_grad(Objective::l1(), Vec{u}, a).moreau_gradient[0] / a;
      const double gv = moreau_grad(Objective::l1(), Vec{v}, a).moreau_gradient[0] / a;
      CHECK(std::abs(gu - gv) <= std::abs(u - v) / a + 1e-12);
    }
  }
}

TEST_CASE("gap bound") {
  Rng rng(7);
  for (double a : {0.1, 1.0}) {
    for (int i = 0; i < 20; ++i) {
      const double s = rng.normal() * 2;
      const double gap = envelope_gap_check(Objective::l1(), Vec{s}, a);
      const double huber = std::abs(s) <= a ? s * s / (2 * a) : std::abs(s) - a / 2;
      CHECK(gap == doctest::Approx(std::abs(s) - huber).epsilon(1e-12));
      CHECK(gap <= a / 2 + 1e-12);
    }
    CHECK(envelope_gap_check(Objective::constant(4.0), Vec{1.0, 2.0}, a) == 0.0);
    for (int i = 0; i < 20; ++i) {
      const Mat A = rng.normal_mat(2, 3);
      const Vec b = rng.normal_vec(2), x = rng.normal_vec(3, 2.0);
      const double ell = A.spectral_norm();
      CHECK(envelope_gap_check(Objective::norm_affine(A, b), x, a) <= a * ell * ell + 1e-12);
    }
  }
}

TEST_CASE("goldstein line search accepts an admissible step") {
  const SmoothFunction F{[](const Vec& y) { return 0.5 * y.squared_norm(); }, [](const Vec& y) { return y; }};
  const Vec y{2.0, -1.0};
  const Vec g = F.grad(y);
  const double c = 0.25;
  const auto ls = goldstein_line_search(F, y, F.value(y), g, 1.0, InnerSolverConfig{});
  REQUIRE(ls.ok);
  const double dec = F.value(y) - ls.value;
  CHECK(dec >= c * ls.step * g.squared_norm());
  CHECK(dec <= (1 - c) * ls.step * g.squared_norm());
}

TEST_CASE("two-step quasi-Newton") {
  const SmoothFunction half{[](const Vec& y) { return 0.5 * y[0] * y[0]; }, [](const Vec& y) { return Vec{y[0]}; }};
  const auto r = quasi_newton_2step(half, Vec{1.0});
  CHECK(std::abs(r.y[0]) <= 1e-12);

  const auto still = quasi_newton_2step(half, Vec{0.0});
  CHECK(still.y[0] == 0.0);

  // envelope subproblem of λᵀtanh(Wᵀ(x+y)+b) around y = 0, λ small enough
  // for the subproblem to be strongly convex
  Rng rng(8);
  auto layer = std::make_shared<DenseActivationLayer>(3, 3, Activation::Tanh);
  const Vec w = layer->init_params(rng), x = rng.normal_vec(3), lam = 0.3 * rng.normal_vec(3);
  const SmoothFunction sub{
      [&](const Vec& y) { return dot(lam, layer->eval(w, x + y)) + 0.5 * y.squared_norm(); },
      [&](const Vec& y) { return layer->vjp_x(w, x + y, lam) + y; }};
  const auto q = quasi_newton_2step(sub, Vec(3));
  CHECK(sub.grad(q.y).norm() < sub.grad(Vec(3)).norm());
  CHECK(sub.value(q.y) < sub.value(Vec(3)));
  CHECK(q.iterations == 2);
}

TEST_CASE("inner divergence raises with a trace") {
  const SmoothFunction quartic{[](const Vec& y) { return -std::pow(y[0] + 1.0, 4); },
                               [](const Vec& y) { return Vec{-4.0 * std::pow(y[0] + 1.0, 3)}; }};
  try {
    moreau_grad(quartic, Vec{0.0}, 1.0, InnerSolverConfig::iterative_only());
    FAIL("expected an error");
  } catch (const DivergenceError& e) {
    CHECK_FALSE(e.trace().empty());
  }
}

TEST_CASE("dual prox-gradient") {
  Rng rng(9);
  SUBCASE("identity map reduces to the plain envelope") {
    const Mat Q = spd(rng, 3, 0.5);
    const Objective f = Objective::quadratic(Q, rng.normal_vec(3));
    const Vec x = rng.normal_vec(3);
    const auto d = dual_prox_gradient(f, linear_map(Mat::identity(3)), x, 0.2, 0.5, 400);
    CHECK(relative_error(d.moreau_gradient, moreau_grad(f, x, 0.2).moreau_gradient) < 1e-8);
  }
  SUBCASE("linear objective through a linear map") {
    const Vec a{1.0, -0.5};
    const Mat B = rng.normal_mat(2, 3);
    const Vec x = rng.normal_vec(3);
    const double alpha = 0.3;
    const auto d = dual_prox_gradient(Objective::linear(a), linear_map(B), x, alpha, 0.25, 5);
    CHECK(relative_error(d.mu, alpha * a) < 1e-12);
    CHECK(relative_error(d.minimizer, -alpha * tmatvec(B, a)) < 1e-12);
  }
  SUBCASE("quadratic through affine+tanh matches brute force; dual is monotone") {
    for (int i = 0; i < 5; ++i) {
      auto layer = std::make_shared<DenseActivationLayer>(2, 2, Activation::Tanh);
      const Vec w = layer->init_params(rng);
      const SmoothMap g = layer_map(layer, w);
      const Mat Q = spd(rng, 2, 0.2);
      const Objective f = Objective::quadratic(Q, rng.normal_vec(2));
      const Vec x = rng.normal_vec(2);
      const double alpha = 0.1;
      const auto d = dual_prox_gradient(f, g, x, alpha, 0.25, 2000);
      for (std::size_t k = 1; k < d.dual_trace.size(); ++k)
        CHECK(d.dual_trace[k] >= d.dual_trace[k - 1] - 1e-10 * (1 + std::abs(d.dual_trace[k])));
      const auto bf = brute_force_argmin(
          [&](const Vec& y) { return alpha * f.value(g.value(x + y)) + 0.5 * y.squared_norm(); },
          [&](const Vec& y) { return alpha * g.vjp(x + y, f.grad(g.value(x + y))) + y; }, Vec(2));
      CHECK((d.minimizer - bf.argmin).norm() <= 1e-4);
      CHECK(d.dual_value <= d.primal_value + 1e-8);
    }
  }
  CHECK_THROWS_AS(dual_prox_gradient(Objective::l1(), linear_map(Mat::identity(1)), Vec{1.0}, 0.0, 1.0, 1),
                  ConfigError);
}

TEST_CASE("one-step dual") {
  Rng rng(10);
  const Vec lam{0.3, -1.0};
  const Mat A = rng.normal_mat(2, 2);
  const Vec x = rng.normal_vec(2);
  CHECK(relative_error(one_step_dual(Objective::linear(lam), linear_map(A), x, 0.4, 2.0), lam) < 1e-14);
  // β = α leaves only the envelope gradient of f at g(x)
  const Objective sq = Objective::squared_loss(Vec{1.0, 2.0});
  CHECK(relative_error(one_step_dual(sq, linear_map(A), x, 0.5, 0.5),
                       moreau_grad(sq, matvec(A, x), 1.0).moreau_gradient) < 1e-14);
  // one dual iteration from μ⁰ = 0 gives α·μ̂
  const Mat Q = spd(rng, 2, 0.5);
  const Objective f = Objective::quadratic(Q, rng.normal_vec(2));
  const double a = 0.3, b = 0.8;
  const auto d = dual_prox_gradient(f, linear_map(A), x, a, b, 1);
  CHECK(relative_error(d.mu, a * one_step_dual(f, linear_map(A), x, a, b)) < 1e-12);
}

TEST_CASE("linear composition closed form") {
  Rng rng(11);
  for (int i = 0; i < 10; ++i) {
    const Mat Q = spd(rng, 3, 0.5), A = rng.normal_mat(3, 3);
    const Vec x = rng.normal_vec(3);
    const Vec formula = linear_composition_moreau_grad(Q, A, x);
    // direct: (I + AᵀQA) y = −AᵀQAx
    const Mat M = A.transpose() * Q * A;
    const Vec direct = -1.0 * solve(Mat::identity(3) + M, -1.0 * matvec(M, x));
    CHECK(relative_error(formula, direct) < 1e-8);
    const double beta = 0.5 / std::pow(A.spectral_norm(), 2);
    const auto d = dual_prox_gradient(Objective::quadratic(Q, Vec(3)), linear_map(A), x, 1.0, beta, 20000);
    CHECK(relative_error(d.moreau_gradient, formula) < 1e-8);
  }
}
