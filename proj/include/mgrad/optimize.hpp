#pragma once

// Outer loops binding an oracle to parameter updates, plus grid search and
// the approximate-gradient-descent bound checker.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mgrad/chain.hpp"
#include "mgrad/oracles.hpp"

namespace mgrad {

struct RunRow {
  std::size_t iter = 0;
  double train_loss = 0.0;
  std::optional<double> test_loss;
  std::optional<double> test_acc;
  std::optional<double> grad_norm;
  std::optional<double> seconds;
};

struct RunRecord {
  std::vector<RunRow> rows;
  bool diverged = false;
  std::string divergence_reason;
  std::optional<double> final_train_acc;
  LocalSolveStats solver_stats;
  double wall_seconds = 0.0;

  /// y_k = min_{i ≤ k} train_loss_i.
  std::vector<double> best_so_far() const;
  double best_loss() const;
  /// Trapezoidal area under the best-so-far curve over rows 0..budget.
  double best_so_far_area(std::size_t budget) const;
  void write_csv(std::ostream& os) const;
};

/// Header of the per-iteration CSV.
inline constexpr const char* kCurveHeader = "iter,train_loss,test_loss,test_acc,grad_norm,seconds";

struct RunOptions {
  /// Fill the seconds column (off by default so equal runs give identical CSVs).
  bool record_time = false;
  /// Abort once the objective exceeds this multiple of its initial value.
  double divergence_factor = 1e6;
};

struct RunResult {
  BlockParams w;
  RunRecord record;
};

/// Fixed-step batch loop with any oracle: w ← w − g (delta) or w ← g (replacement).
RunResult batch_loop(const OracleSpec& spec, const Chain& chain, const Objective& h, const Vec& x0,
                     const BlockParams& w0, std::size_t iters, const RunOptions& opts = {});

/// w^(k+1) = w^(k) − δ∇(h∘f)(w^(k)).
RunResult gradient_descent(const Chain& chain, const Objective& h, const Vec& x0,
                           const BlockParams& w0, double delta, std::size_t iters,
                           const RunOptions& opts = {}, double mu_reg = 0.0);

/// Moreau forward + backward each iteration, w ← w − g.
RunResult moreau_gd(const Chain& chain, const Objective& h, const Vec& x0, const BlockParams& w0,
                    double gamma, double alpha, std::size_t iters,
                    const InnerSolverConfig& solver = InnerSolverConfig::practice(),
                    const RunOptions& opts = {}, double mu_reg = 0.0);

/// Augmented-Lagrangian forward + backward each iteration, w ← w⁺.
/// β < 0 selects β_t = γ_t⁻¹.
RunResult al_mgd(const Chain& chain, const Objective& h, const Vec& x0, const BlockParams& w0,
                 double gamma, double alpha, double kappa, double beta, std::size_t iters,
                 const InnerSolverConfig& solver = InnerSolverConfig::practice(),
                 const RunOptions& opts = {}, double mu_reg = 0.0);

struct Dataset {
  std::vector<Vec> inputs;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return inputs.size(); }
  std::size_t dim() const { return inputs.empty() ? 0 : inputs.front().size(); }
  void validate() const;
};

enum class LossHead { Squared, Logistic };

std::string to_string(LossHead h);
LossHead loss_head_from_string(const std::string& name);

/// Stacks the selected samples into one chain input.
Vec stack_inputs(const Dataset& d, const std::vector<std::size_t>& idx);
/// Batch objective over the selected samples, averaged over the batch.
Objective batch_objective(const Dataset& d, const std::vector<std::size_t>& idx, LossHead head);

struct Metrics {
  double loss = 0.0;
  double accuracy = 0.0;
};
/// Full-dataset loss and accuracy in a fixed order.
Metrics evaluate(const Chain& chain, const BlockParams& w, const Dataset& d, LossHead head);

struct MinibatchOptions {
  std::size_t epochs = 10;
  std::size_t batch = 256;
  std::uint64_t seed = 0;
  LossHead head = LossHead::Squared;
  RunOptions run;
};

/// Shuffled-partition epochs; one oracle call per mini-batch, metrics once per epoch.
RunResult minibatch_loop(const Dataset& train, const Dataset* test, const Chain& chain,
                         const OracleSpec& spec, const BlockParams& w0, const MinibatchOptions& opts);

struct GridCandidate {
  std::string label;
  OracleSpec spec;
};

struct GridRow {
  std::string label;
  OracleSpec spec;
  double area = 0.0;
  double best_loss = 0.0;
  bool diverged = false;
};

struct GridResult {
  std::size_t best = 0;
  std::vector<GridRow> table;
  std::vector<RunRecord> records;
};

/// Runs every candidate and keeps the smallest area under the best-so-far
/// curve over `budget` iterations. Diverged candidates are excluded; if all
/// diverge a DivergenceError lists their last values.
GridResult grid_search(const std::vector<GridCandidate>& candidates,
                       const std::function<RunRecord(const OracleSpec&)>& run, std::size_t budget);

/// Powers of two 2^lo … 2^hi.
std::vector<double> powers_of_two(int lo, int hi);

struct BoundPoint {
  std::size_t k = 0;
  double min_grad_sq = 0.0;  // min_{i<k} ‖∇f(x_i)‖²
  double bound = 0.0;        // (8/(5δk))(f₀ − f*) + 8ε²
};

struct BoundReport {
  std::vector<BoundPoint> points;
  bool satisfied = true;
  bool step_admissible = true;  // δ ≤ 1/(2L)
  std::size_t first_violation = 0;
};

/// `grad_norms[i]` is the exact ‖∇f(x_i)‖ along an ε-approximate GD trajectory.
BoundReport check_approx_gd_bound(const std::vector<double>& grad_norms, double f0, double delta,
                                  double eps, double f_star, double L);

struct NoisyTrajectory {
  std::vector<double> values;
  std::vector<double> grad_norms;
};

/// GD on ½xᵀQx + bᵀx with the gradient perturbed by a uniformly oriented
/// vector of norm exactly ε at every step.
NoisyTrajectory noisy_gd_quadratic(const Mat& Q, const Vec& b, const Vec& x0, double delta,
                                   double eps, std::size_t steps, Rng& rng);

}  // namespace mgrad
