#include "mgrad/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace mgrad {

// ---------------------------------------------------------------- RunRecord

std::vector<double> RunRecord::best_so_far() const {
  std::vector<double> out;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    if (r.train_loss < best) best = r.train_loss;
    out.push_back(best);
  }
  return out;
}

double RunRecord::best_loss() const {
  const auto b = best_so_far();
  return b.empty() ? std::numeric_limits<double>::infinity() : b.back();
}

double RunRecord::best_so_far_area(std::size_t budget) const {
  const auto b = best_so_far();
  const std::size_t n = std::min(b.size(), budget + 1);
  double area = 0.0;
  for (std::size_t i = 1; i < n; ++i) area += 0.5 * (b[i - 1] + b[i]);
  return area;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
  return static_cast<double>(ms) / 1000.0;
}

void merge(LocalSolveStats& into, const LocalSolveStats& s) {
  into.solves += s.solves;
  into.closed_form += s.closed_form;
  into.iterations += s.iterations;
  into.unconverged += s.unconverged;
  into.max_residual = std::max(into.max_residual, s.max_residual);
}

/// Returns true (and marks the record) when the loss has blown up.
bool check_divergence(RunRecord& rec, double loss, double initial, const RunOptions& opts) {
  if (!std::isfinite(loss)) {
    rec.diverged = true;
    rec.divergence_reason = "non-finite objective";
    return true;
  }
  if (loss > opts.divergence_factor * std::max(std::abs(initial), 1e-12)) {
    rec.diverged = true;
    rec.divergence_reason = "objective exceeded " + fmt(opts.divergence_factor) + "x its initial value";
    return true;
  }
  return false;
}

}  // namespace

void RunRecord::write_csv(std::ostream& os) const {
  os << kCurveHeader << '\n';
  for (const auto& r : rows) {
    os << r.iter << ',' << fmt(r.train_loss) << ',' << fmt(r.test_loss) << ',' << fmt(r.test_acc)
       << ',' << fmt(r.grad_norm) << ',';
    if (r.seconds) os << std::fixed << std::setprecision(3) << *r.seconds << std::defaultfloat;
    os << '\n';
  }
}

// ---------------------------------------------------------------- batch loops

RunResult batch_loop(const OracleSpec& spec, const Chain& chain, const Objective& h, const Vec& x0,
                     const BlockParams& w0, std::size_t iters, const RunOptions& opts) {
  spec.validate();
  chain.check_params(w0);
  const auto start = Clock::now();
  RunResult res{w0, {}};
  auto loss_at = [&](const BlockParams& w) -> double {
    try {
      return h.value(chain.output(w, x0));
    } catch (const NonFiniteError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  const double f0 = loss_at(w0);
  res.record.rows.push_back({0, f0, {}, {}, {}, opts.record_time ? std::optional(elapsed(start)) : std::nullopt});
  if (check_divergence(res.record, f0, f0, opts)) return res;
  for (std::size_t k = 1; k <= iters; ++k) {
    OracleCall call;
    try {
      call = run_oracle(spec, chain, res.w, x0, h);
    } catch (const DivergenceError& e) {
      res.record.diverged = true;
      res.record.divergence_reason = e.what();
      break;
    } catch (const NonFiniteError& e) {
      res.record.diverged = true;
      res.record.divergence_reason = e.what();
      break;
    }
    merge(res.record.solver_stats, call.stats);
    BlockParams next = apply_update(res.w, call.output);
    const double step = (next - res.w).norm();
    const double gnorm = spec.kind == OracleKind::Backprop && spec.delta > 0.0 ? step / spec.delta : step;
    res.w = std::move(next);
    const double f = res.w.all_finite() ? loss_at(res.w) : std::numeric_limits<double>::quiet_NaN();
    res.record.rows.push_back({k, f, {}, {}, gnorm, opts.record_time ? std::optional(elapsed(start)) : std::nullopt});
    if (check_divergence(res.record, f, f0, opts)) break;
  }
  res.record.wall_seconds = elapsed(start);
  return res;
}

RunResult gradient_descent(const Chain& chain, const Objective& h, const Vec& x0,
                           const BlockParams& w0, double delta, std::size_t iters,
                           const RunOptions& opts, double mu_reg) {
  OracleSpec spec;
  spec.kind = OracleKind::Backprop;
  spec.delta = delta;
  spec.mu_reg = mu_reg;
  return batch_loop(spec, chain, h, x0, w0, iters, opts);
}

RunResult moreau_gd(const Chain& chain, const Objective& h, const Vec& x0, const BlockParams& w0,
                    double gamma, double alpha, std::size_t iters, const InnerSolverConfig& solver,
                    const RunOptions& opts, double mu_reg) {
  OracleSpec spec;
  spec.kind = OracleKind::Moreau;
  spec.gamma = gamma;
  spec.alpha = alpha;
  spec.solver = solver;
  spec.mu_reg = mu_reg;
  return batch_loop(spec, chain, h, x0, w0, iters, opts);
}

RunResult al_mgd(const Chain& chain, const Objective& h, const Vec& x0, const BlockParams& w0,
                 double gamma, double alpha, double kappa, double beta, std::size_t iters,
                 const InnerSolverConfig& solver, const RunOptions& opts, double mu_reg) {
  OracleSpec spec;
  spec.kind = OracleKind::AugLag;
  spec.gamma = gamma;
  spec.alpha = alpha;
  spec.kappa = kappa;
  spec.beta = beta;
  spec.solver = solver;
  spec.mu_reg = mu_reg;
  return batch_loop(spec, chain, h, x0, w0, iters, opts);
}

// ---------------------------------------------------------------- datasets

void Dataset::validate() const {
  if (inputs.empty()) throw Error("dataset is empty");
  if (labels.size() != inputs.size()) throw DimensionError("dataset labels", inputs.size(), labels.size());
  if (classes == 0) throw Error("dataset needs at least one class");
  const std::size_t d = dim();
  for (const auto& x : inputs) require_dim(x, d, "dataset sample");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw Error("dataset label out of range");
}

std::string to_string(LossHead h) { return h == LossHead::Squared ? "squared" : "logistic"; }

LossHead loss_head_from_string(const std::string& name) {
  if (name == "squared") return LossHead::Squared;
  if (name == "logistic") return LossHead::Logistic;
  throw ConfigError("unknown loss '" + name + "' (expected squared|logistic)");
}

Vec stack_inputs(const Dataset& d, const std::vector<std::size_t>& idx) {
  const std::size_t dim = d.dim();
  Vec x(idx.size() * dim);
  for (std::size_t s = 0; s < idx.size(); ++s)
    std::copy(d.inputs[idx[s]].begin(), d.inputs[idx[s]].end(),
              x.begin() + static_cast<std::ptrdiff_t>(s * dim));
  return x;
}

Objective batch_objective(const Dataset& d, const std::vector<std::size_t>& idx, LossHead head) {
  if (idx.empty()) throw Error("batch_objective: empty batch");
  if (head == LossHead::Logistic) {
    std::vector<int> labels;
    for (auto i : idx) labels.push_back(d.labels[i]);
    return Objective::logistic(std::move(labels), d.classes);
  }
  Vec target(idx.size() * d.classes);
  for (std::size_t s = 0; s < idx.size(); ++s) target[s * d.classes + d.labels[idx[s]]] = 1.0;
  // Mean over every output entry: (1/(m·k))·Σ(out − onehot)².
  return Objective::squared_loss(std::move(target),
                                 2.0 / static_cast<double>(idx.size() * d.classes));
}

Metrics evaluate(const Chain& chain, const BlockParams& w, const Dataset& d, LossHead head) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Vec out = chain.output(w, stack_inputs(d, idx));
  return {batch_objective(d, idx, head).value(out), classification_accuracy(out, d.labels, d.classes)};
}

RunResult minibatch_loop(const Dataset& train, const Dataset* test, const Chain& chain,
                         const OracleSpec& spec, const BlockParams& w0, const MinibatchOptions& opts) {
  train.validate();
  if (test) test->validate();
  spec.validate();
  chain.check_params(w0);
  if (opts.batch < 1) throw ConfigError("minibatch: batch size must be at least 1");
  if (opts.batch > train.size()) throw ConfigError("minibatch: batch size exceeds the dataset size");
  if (chain.input_dim() != train.dim()) throw DimensionError("chain input vs dataset", chain.input_dim(), train.dim());
  if (chain.output_dim() != train.classes)
    throw DimensionError("chain output vs class count", train.classes, chain.output_dim());

  const auto start = Clock::now();
  Rng rng(opts.seed);
  RunResult res{w0, {}};
  auto row = [&](std::size_t epoch, std::optional<double> gnorm) {
    RunRow r;
    r.iter = epoch;
    Metrics m;
    try {
      m = evaluate(chain, res.w, train, opts.head);
    } catch (const NonFiniteError&) {
      m.loss = std::numeric_limits<double>::quiet_NaN();
    }
    r.train_loss = m.loss;
    res.record.final_train_acc = m.accuracy;
    if (test && std::isfinite(m.loss)) {
      const Metrics t = evaluate(chain, res.w, *test, opts.head);
      r.test_loss = t.loss;
      r.test_acc = t.accuracy;
    }
    r.grad_norm = gnorm;
    if (opts.run.record_time) r.seconds = elapsed(start);
    res.record.rows.push_back(r);
    return m.loss;
  };
  const double f0 = row(0, std::nullopt);
  if (check_divergence(res.record, f0, f0, opts.run)) return res;

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const auto perm = rng.permutation(train.size());
    double step_sq = 0.0;
    bool failed = false;
    for (std::size_t begin = 0; begin < perm.size(); begin += opts.batch) {
      const std::size_t end = std::min(perm.size(), begin + opts.batch);
      std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                                   perm.begin() + static_cast<std::ptrdiff_t>(end));
      try {
        OracleCall call = run_oracle(spec, chain, res.w, stack_inputs(train, idx),
                                     batch_objective(train, idx, opts.head));
        merge(res.record.solver_stats, call.stats);
        BlockParams next = apply_update(res.w, call.output);
        step_sq += (next - res.w).squared_norm();
        res.w = std::move(next);
      } catch (const Error& e) {
        if (!dynamic_cast<const DivergenceError*>(&e) && !dynamic_cast<const NonFiniteError*>(&e)) throw;
        res.record.diverged = true;
        res.record.divergence_reason = e.what();
        failed = true;
        break;
      }
      if (!res.w.all_finite()) {
        res.record.diverged = true;
        res.record.divergence_reason = "non-finite parameters";
        failed = true;
        break;
      }
    }
    if (failed) break;
    const double f = row(epoch, std::sqrt(step_sq));
    if (check_divergence(res.record, f, f0, opts.run)) break;
  }
  res.record.wall_seconds = elapsed(start);
  return res;
}

// ---------------------------------------------------------------- grid search

GridResult grid_search(const std::vector<GridCandidate>& candidates,
                       const std::function<RunRecord(const OracleSpec&)>& run, std::size_t budget) {
  if (candidates.empty()) throw ConfigError("grid_search: empty candidate grid");
  GridResult out;
  double best_area = std::numeric_limits<double>::infinity();
  bool any = false;
  std::vector<double> residual;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    RunRecord rec = run(candidates[i].spec);
    GridRow row{candidates[i].label, candidates[i].spec, rec.best_so_far_area(budget), rec.best_loss(),
                rec.diverged};
    if (!rec.rows.empty()) residual.push_back(rec.rows.back().train_loss);
    if (!row.diverged && std::isfinite(row.area) && row.area < best_area) {
      best_area = row.area;
      out.best = i;
      any = true;
    }
    out.table.push_back(row);
    out.records.push_back(std::move(rec));
  }
  if (!any) throw DivergenceError("grid_search: every candidate diverged", residual);
  return out;
}

std::vector<double> powers_of_two(int lo, int hi) {
  std::vector<double> out;
  for (int e = lo; e <= hi; ++e) out.push_back(std::ldexp(1.0, e));
  return out;
}

// ---------------------------------------------------------------- bound checker

BoundReport check_approx_gd_bound(const std::vector<double>& grad_norms, double f0, double delta,
                                  double eps, double f_star, double L) {
  BoundReport rep;
  rep.step_admissible = delta <= 1.0 / (2.0 * L) * (1.0 + 1e-12);
  double min_sq = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= grad_norms.size(); ++k) {
    min_sq = std::min(min_sq, grad_norms[k - 1] * grad_norms[k - 1]);
    const double bound = 8.0 / (5.0 * delta * static_cast<double>(k)) * (f0 - f_star) + 8.0 * eps * eps;
    rep.points.push_back({k, min_sq, bound});
    if (min_sq > bound && rep.satisfied) {
      rep.satisfied = false;
      rep.first_violation = k;
    }
  }
  return rep;
}

NoisyTrajectory noisy_gd_quadratic(const Mat& Q, const Vec& b, const Vec& x0, double delta,
                                   double eps, std::size_t steps, Rng& rng) {
  NoisyTrajectory tr;
  Vec x = x0;
  for (std::size_t k = 0; k <= steps; ++k) {
    const Vec g = matvec(Q, x) + b;
    tr.values.push_back(0.5 * dot(x, matvec(Q, x)) + dot(b, x));
    tr.grad_norms.push_back(g.norm());
    if (k == steps) break;
    Vec noise(x.size());
    if (eps > 0.0) {
      Vec dir = rng.normal_vec(x.size());
      noise = (eps / dir.norm()) * dir;
    }
    x.axpy(-delta, g + noise);
  }
  return tr;
}

}  // namespace mgrad
