#pragma once

// First-order oracles over a chain: classical back-propagation, Moreau
// back-propagation, the augmented-Lagrangian pass, target propagation (plain
// and regularized) and proximal back-propagation.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mgrad/chain.hpp"
#include "mgrad/envelope.hpp"

namespace mgrad {

/// Step to subtract: w ← w − g.
struct DeltaUpdate {
  BlockParams g;
};
/// New parameters: w ← g.
struct Replacement {
  BlockParams w;
};
using OracleOutput = std::variant<DeltaUpdate, Replacement>;

BlockParams apply_update(const BlockParams& w, const OracleOutput& out);
bool is_delta(const OracleOutput& out);
const BlockParams& output_blocks(const OracleOutput& out);

/// Counters for the inner solves of one oracle call.
struct LocalSolveStats {
  std::size_t solves = 0;
  std::size_t closed_form = 0;
  std::size_t iterations = 0;
  std::size_t unconverged = 0;
  double max_residual = 0.0;
};

/// Minimizes over u (warm start u = 0) the layer-local problem
///   F(u) = sᵀφ(a+u) + (ρ/2)‖u‖² + (κ/2)‖φ(a+u) − z‖² + (ν/2)‖a+u‖²
/// where a is w_t (Block::W) or x_{t−1} (Block::X) and the other argument is
/// held fixed. Empty s means s = 0; z is only read when κ > 0.
struct LocalProblem {
  Vec s;
  double rho = 1.0;
  double kappa = 0.0;
  Vec z;
  double nu = 0.0;
};

enum class Block { W, X };

/// Solves one layer-local problem; the result is the displacement u*.
/// Affine-in-the-variable layers use an exact solve when the solver config
/// allows closed forms.
Vec solve_local(const Layer& layer, Block block, const Vec& w, const Vec& x,
                const LocalProblem& prob, const InnerSolverConfig& cfg,
                LocalSolveStats* stats = nullptr);

/// Linear maps stored by the classical forward pass: λ ↦ (∂_x φ_t)ᵀλ and λ ↦ (∂_w φ_t)ᵀλ.
struct ClassicalTape {
  std::vector<Vec> states;
  std::vector<std::function<Vec(const Vec&)>> phi_x;
  std::vector<std::function<Vec(const Vec&)>> phi_w;
};

ClassicalTape classical_forward(const Chain& chain, const BlockParams& w, const Vec& x0);

struct BackpropResult {
  double value = 0.0;
  BlockParams gradient;           // ∇_w h(f(w, x0)) + μw
  std::vector<Vec> lambda;        // λ_1 … λ_τ at index t−1
  DeltaUpdate delta(double step) const;
};

/// Classical reverse mode. `mu_reg` adds the ℓ2² regularizer's gradient μw.
BackpropResult backprop(const Chain& chain, const BlockParams& w, const Vec& x0,
                        const Objective& h, double mu_reg = 0.0);

/// Forward pass storing the per-layer non-linear forms. The same tape serves
/// the Moreau, augmented-Lagrangian and target-propagation families.
class OracleTape {
 public:
  OracleTape(const Chain& chain, BlockParams w, std::vector<Vec> states, InnerSolverConfig cfg);

  std::size_t tau() const { return w_.size(); }
  const std::vector<Vec>& states() const { return states_; }
  const BlockParams& params() const { return w_; }
  const InnerSolverConfig& solver() const { return cfg_; }
  const Chain& chain() const { return *chain_; }
  LocalSolveStats& stats() const { return stats_; }

  /// Φ^x_t(λ) = ∇env(λᵀφ_t(w_t, ·))(x_{t−1}), t is 1-based.
  Vec phi_x(std::size_t t, const Vec& lambda) const;
  /// Φ^w_t(λ) = ∇env(λᵀφ_t(·, x_{t−1}) + (ν/2)‖·‖²)(w_t).
  Vec phi_w(std::size_t t, const Vec& lambda, double nu = 0.0) const;

  /// Raw local solves (displacements) for the penalized variants.
  Vec solve_x(std::size_t t, const LocalProblem& p) const;
  Vec solve_w(std::size_t t, const LocalProblem& p) const;

 private:
  const Chain* chain_;
  BlockParams w_;
  std::vector<Vec> states_;
  InnerSolverConfig cfg_;
  mutable LocalSolveStats stats_;
};

OracleTape moreau_forward(const Chain& chain, const BlockParams& w, const Vec& x0,
                          const InnerSolverConfig& cfg = InnerSolverConfig::theory());

struct MoreauBackwardResult {
  DeltaUpdate update;
  std::vector<Vec> lambda;  // λ_1 … λ_τ
};

/// λ_τ = γ_τ⁻¹∇env(γ_τ h)(x_τ); λ_{t−1} = γ_{t−1}⁻¹Φ^x_t(γ_{t−1}λ_t); g_t = Φ^w_t(α_tλ_t).
MoreauBackwardResult moreau_backward(const OracleTape& tape, const Objective& h,
                                     const Schedule& sched, double mu_reg = 0.0);

struct AugLagConfig {
  double kappa = 0.0;
  std::vector<double> beta;  // β_t at index t−1
  Schedule schedule;
  double mu_reg = 0.0;
  void validate(std::size_t tau) const;
};

OracleTape auglag_forward(const Chain& chain, const BlockParams& w, const Vec& x0,
                          const AugLagConfig& cfg,
                          const InnerSolverConfig& solver = InnerSolverConfig::theory());

struct PenalizedResult {
  Replacement update;
  std::vector<Vec> targets;  // x_1⁺ … x_τ⁺
  std::vector<Vec> lambda;   // λ_1⁺ … λ_τ⁺ (zero for the target families)
};

/// Block sweep x_t⁺ → λ_t⁺ → w_t⁺ from t = τ down to 1.
PenalizedResult auglag_backward(const OracleTape& tape, const Objective& h, const AugLagConfig& cfg);

PenalizedResult target_prop(const Chain& chain, const BlockParams& w, const Vec& x0,
                            const Objective& h, double kappa,
                            const InnerSolverConfig& solver = InnerSolverConfig::theory(),
                            double mu_reg = 0.0);

PenalizedResult reg_target_prop(const Chain& chain, const BlockParams& w, const Vec& x0,
                                const Objective& h, double kappa, const Schedule& sched,
                                const InnerSolverConfig& solver = InnerSolverConfig::theory(),
                                double mu_reg = 0.0);

PenalizedResult proximal_backprop(const Chain& chain, const BlockParams& w, const Vec& x0,
                                  const Objective& h, double alpha,
                                  const InnerSolverConfig& solver = InnerSolverConfig::theory(),
                                  double mu_reg = 0.0);

// ------------------------------------------------------------ dispatch

enum class OracleKind { Backprop, Moreau, AugLag, TargetProp, RegTargetProp, ProxBackprop };

std::string to_string(OracleKind k);
OracleKind oracle_kind_from_string(const std::string& name);

struct OracleSpec {
  OracleKind kind = OracleKind::Backprop;
  double delta = 1.0;  // classical step
  double gamma = 1.0;  // base of the γ_t schedule
  double alpha = 1.0;  // base of the α_t schedule (proximal step for proxbp)
  double kappa = 0.0;
  double beta = 0.0;   // β_t = β for all t; negative means β_t = γ_t⁻¹
  double mu_reg = 0.0;
  InnerSolverConfig solver = InnerSolverConfig::practice();
  void validate() const;
};

struct OracleCall {
  OracleOutput output;
  LocalSolveStats stats;
};

OracleCall run_oracle(const OracleSpec& spec, const Chain& chain, const BlockParams& w,
                      const Vec& x0, const Objective& h);

}  // namespace mgrad
