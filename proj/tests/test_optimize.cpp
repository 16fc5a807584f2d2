#include <cmath>
#include <sstream>

#include "doctest.h"
#include "mgrad/optimize.hpp"

using namespace mgrad;

namespace {

// One dense layer fed with x0 = 0: the output is the bias, so h∘f is h on the bias block.
struct BiasProblem {
  Chain chain;
  Vec x0;
  BlockParams w0;
};

BiasProblem bias_problem(std::size_t d, const Vec& start) {
  Chain c(std::vector<LayerPtr>{std::make_shared<DenseLayer>(1, d)});
  BlockParams w = c.zero_params();
  for (std::size_t i = 0; i < d; ++i) w[0][d + i] = start[i];
  return {c, Vec(1), w};
}

Chain tanh_chain(std::size_t tau, std::size_t width) {
  std::vector<LayerPtr> layers;
  for (std::size_t t = 0; t < tau; ++t)
    layers.push_back(std::make_shared<DenseActivationLayer>(width, width, Activation::Tanh));
  return Chain(layers);
}

double cosine(const Vec& a, const Vec& b) { return dot(a, b) / (a.norm() * b.norm()); }

}  // namespace

TEST_CASE("gradient descent on a convex quadratic") {
  const Mat Q{{2.0, 0.3}, {0.3, 1.0}};
  const auto p = bias_problem(2, Vec{1.0, -2.0});
  const Objective h = Objective::quadratic(Q, Vec{0.1, 0.0});
  const double L = Q.spectral_norm();
  const auto r = gradient_descent(p.chain, h, p.x0, p.w0, 1.5 / L, 50);
  REQUIRE(r.record.rows.size() == 51);
  for (std::size_t k = 1; k < r.record.rows.size(); ++k)
    CHECK(r.record.rows[k].train_loss <= r.record.rows[k - 1].train_loss + 1e-15);
  CHECK_FALSE(r.record.diverged);

  const auto still = gradient_descent(p.chain, h, p.x0, p.w0, 0.0, 5);
  CHECK((still.w.flatten() - p.w0.flatten()).norm_inf() == 0.0);
  const auto none = gradient_descent(p.chain, h, p.x0, p.w0, 0.3, 0);
  CHECK(none.record.rows.size() == 1);
  CHECK((none.w.flatten() - p.w0.flatten()).norm_inf() == 0.0);

  const auto blown = gradient_descent(p.chain, h, p.x0, p.w0, 4.0 / L, 200);
  CHECK(blown.record.diverged);
  CHECK_FALSE(blown.record.divergence_reason.empty());
}

TEST_CASE("gradient descent on the pendulum") {
  PendulumParams p;
  p.horizon = 50;
  const Chain c = pendulum_chain(p);
  const Objective h = Objective::pendulum_terminal(p.rho);
  const Vec x0{0.0, 0.0};
  // δ = 1 overshoots on the first step under explicit Euler; δ = 0.5 is stable.
  const auto s = gradient_descent(c, h, x0, c.zero_params(), 0.5, 200);
  CHECK_FALSE(s.record.diverged);
  CHECK(s.record.best_loss() < 0.1 * s.record.rows[0].train_loss);
}

TEST_CASE("moreau gd") {
  Rng rng(1);
  const Chain c = tanh_chain(1, 3);
  const BlockParams w0 = c.init_params(rng);
  const Vec x0 = rng.normal_vec(3);
  const Objective h = Objective::squared_loss(rng.normal_vec(3));
  const Vec g = backprop(c, w0, x0, h).gradient.flatten();
  double prev = 1.0;
  for (double alpha : {1e-2, 1e-3, 1e-4}) {
    const auto r = moreau_gd(c, h, x0, w0, 1.0, alpha, 1, InnerSolverConfig::theory());
    const double err = 1.0 - cosine(w0.flatten() - r.w.flatten(), g);
    CHECK(err <= prev);
    prev = err;
  }
  CHECK(prev < 1e-6);

  const auto none = moreau_gd(c, h, x0, w0, 1.0, 0.5, 0);
  CHECK((none.w.flatten() - w0.flatten()).norm_inf() == 0.0);
}

TEST_CASE("moreau gd on the pendulum") {
  PendulumParams p;
  p.horizon = 50;
  const Chain c = pendulum_chain(p);
  const Objective h = Objective::pendulum_terminal(p.rho);
  const auto r = moreau_gd(c, h, Vec{0.0, 0.0}, c.zero_params(), 0.5, 128.0, 20);
  CHECK_FALSE(r.record.diverged);
  CHECK(r.record.rows.back().train_loss < r.record.rows.front().train_loss);
  CHECK(r.record.solver_stats.solves > 0);
}

TEST_CASE("augmented-Lagrangian descent") {
  Rng rng(2);
  const Chain c = tanh_chain(3, 3);
  const BlockParams w0 = c.init_params(rng);
  const Vec x0 = rng.normal_vec(3);
  const Objective h = Objective::squared_loss(rng.normal_vec(3));
  const auto solver = InnerSolverConfig::theory();
  const auto a = al_mgd(c, h, x0, w0, 0.5, 0.8, 0.0, -1.0, 10, solver);
  const auto m = moreau_gd(c, h, x0, w0, 0.5, 0.8, 10, solver);
  CHECK((a.w.flatten() - m.w.flatten()).norm_inf() <= 1e-10);
  for (std::size_t k = 0; k < a.record.rows.size(); ++k)
    CHECK(a.record.rows[k].train_loss == doctest::Approx(m.record.rows[k].train_loss).epsilon(1e-10));

  OracleSpec table;
  table.kind = OracleKind::AugLag;
  table.gamma = 32.0;
  table.alpha = 8.0;
  table.beta = 0.1;
  CHECK_NOTHROW(table.validate());

  // tanh saturates, so the blow-up needs an unbounded activation
  const Chain relu = mlp_chain({5, 8, 8, 3}, Activation::Relu, Activation::Identity);
  const BlockParams wr = relu.init_params(rng);
  const Vec xr = rng.normal_vec(5);
  const Objective hr = Objective::squared_loss(rng.normal_vec(3));
  CHECK_FALSE(al_mgd(relu, hr, xr, wr, 1.0, 2.0, 0.0, 1.0, 30).record.diverged);
  CHECK(al_mgd(relu, hr, xr, wr, 1.0, 2.0, 0.0, 1e4, 30).record.diverged);
}

TEST_CASE("mini-batch loop") {
  Rng rng(3);
  Dataset d;
  d.classes = 2;
  for (int i = 0; i < 12; ++i) {
    d.inputs.push_back(rng.normal_vec(3));
    d.labels.push_back(i % 2);
  }
  const Chain c = mlp_chain({3, 4, 2}, Activation::Tanh, Activation::Identity);
  const BlockParams w0 = c.init_params(rng);
  OracleSpec spec;
  spec.delta = 0.3;

  MinibatchOptions full;
  full.epochs = 5;
  full.batch = d.size();
  const auto mb = minibatch_loop(d, nullptr, c, spec, w0, full);
  std::vector<std::size_t> all(d.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto bl = batch_loop(spec, c, batch_objective(d, all, LossHead::Squared), stack_inputs(d, all), w0, 5);
  REQUIRE(mb.record.rows.size() == bl.record.rows.size());
  for (std::size_t k = 0; k < mb.record.rows.size(); ++k)
    CHECK(mb.record.rows[k].train_loss == doctest::Approx(bl.record.rows[k].train_loss).epsilon(1e-12));

  MinibatchOptions small;
  small.epochs = 3;
  small.batch = 5;
  small.seed = 42;
  spec.kind = OracleKind::Moreau;
  spec.alpha = 0.5;
  const auto r1 = minibatch_loop(d, &d, c, spec, w0, small);
  const auto r2 = minibatch_loop(d, &d, c, spec, w0, small);
  std::ostringstream s1, s2;
  r1.record.write_csv(s1);
  r2.record.write_csv(s2);
  CHECK(s1.str() == s2.str());
  CHECK(r1.w.flatten().values() == r2.w.flatten().values());
  CHECK(r1.record.rows.back().test_acc.has_value());

  small.batch = 13;
  CHECK_THROWS_AS(minibatch_loop(d, nullptr, c, spec, w0, small), ConfigError);
  Dataset empty;
  empty.classes = 2;
  small.batch = 1;
  CHECK_THROWS_AS(minibatch_loop(empty, nullptr, c, spec, w0, small), Error);
}

TEST_CASE("grid search") {
  const Mat Q{{1.0, 0.0}, {0.0, 0.5}};
  const auto p = bias_problem(2, Vec{1.0, 1.0});
  const Objective h = Objective::quadratic(Q, Vec(2));
  const double L = 1.0;
  auto run = [&](const OracleSpec& s) { return batch_loop(s, p.chain, h, p.x0, p.w0, 50).record; };

  std::vector<GridCandidate> one{{"only", OracleSpec{}}};
  one[0].spec.delta = 0.1;
  CHECK(grid_search(one, run, 50).best == 0);

  std::vector<GridCandidate> grid;
  for (double d : powers_of_two(-3, 3)) {
    GridCandidate g{std::to_string(d), OracleSpec{}};
    g.spec.delta = d / L;
    grid.push_back(g);
  }
  const auto res = grid_search(grid, run, 50);
  CHECK(res.table[res.best].spec.delta == doctest::Approx(1.0));
  CHECK(res.table.size() == 7);
  CHECK(res.table.back().diverged);

  std::vector<GridCandidate> bad{{"a", OracleSpec{}}, {"b", OracleSpec{}}};
  bad[0].spec.delta = 8.0;
  bad[1].spec.delta = 16.0;
  CHECK_THROWS_AS(grid_search(bad, run, 50), DivergenceError);
  CHECK_THROWS_AS(grid_search({}, run, 50), ConfigError);
  CHECK(powers_of_two(-1, 1) == std::vector<double>{0.5, 1.0, 2.0});
}

TEST_CASE("run record transforms") {
  RunRecord r;
  for (double v : {3.0, 1.0, 2.0, 0.5, 0.7}) {
    RunRow row;
    row.iter = r.rows.size();
    row.train_loss = v;
    r.rows.push_back(row);
  }
  CHECK(r.best_so_far() == std::vector<double>{3.0, 1.0, 1.0, 0.5, 0.5});
  CHECK(r.best_loss() == 0.5);
  CHECK(r.best_so_far_area(2) == doctest::Approx(0.5 * (3.0 + 1.0) + 0.5 * (1.0 + 1.0)));
  std::ostringstream os;
  r.write_csv(os);
  CHECK(os.str().rfind(std::string(kCurveHeader) + "\n0,3,,,,\n", 0) == 0);
}

TEST_CASE("approximate gradient descent bound") {
  // k = 1: the bound is the formula itself.
  const auto one = check_approx_gd_bound({2.0}, 5.0, 0.25, 0.1, 1.0, 2.0);
  REQUIRE(one.points.size() == 1);
  CHECK(one.points[0].bound == doctest::Approx(8.0 / (5.0 * 0.25) * 4.0 + 8.0 * 0.01));
  CHECK(one.points[0].min_grad_sq == 4.0);
  CHECK(one.satisfied);
  CHECK(one.step_admissible);
  CHECK_FALSE(check_approx_gd_bound({2.0}, 5.0, 0.5, 0.0, 1.0, 2.0).step_admissible);
  CHECK_FALSE(check_approx_gd_bound({100.0}, 1.0, 0.25, 0.0, 1.0, 2.0).satisfied);

  Rng gen(4);
  std::vector<double> diag;
  for (int i = 0; i < 10; ++i) diag.push_back(0.5 + 1.5 * gen.uniform());
  Mat Q(10, 10);
  for (std::size_t i = 0; i < 10; ++i) Q(i, i) = diag[i];
  const Vec b = gen.normal_vec(10);
  const double L = Q.spectral_norm();
  const double f_star = -0.5 * dot(b, solve(Q, b));
  const Vec x0 = gen.normal_vec(10);
  const double f0 = 0.5 * dot(x0, matvec(Q, x0)) + dot(b, x0);

  Rng exact_rng(0);
  const auto exact = noisy_gd_quadratic(Q, b, x0, 1.0 / (2 * L), 0.0, 200, exact_rng);
  const auto rep = check_approx_gd_bound(exact.grad_norms, f0, 1.0 / (2 * L), 0.0, f_star, L);
  CHECK(rep.satisfied);
  CHECK(rep.points.back().min_grad_sq < 1e-3 * rep.points.back().bound);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto t = noisy_gd_quadratic(Q, b, x0, 1.0 / (2 * L), 0.1, 1000, rng);
    CHECK(check_approx_gd_bound(t.grad_norms, f0, 1.0 / (2 * L), 0.1, f_star, L).satisfied);
  }
}
