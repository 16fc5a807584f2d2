#pragma once

// Experiment drivers behind the command-line tool: flat JSON configuration,
// dataset ingestion (IDX files or synthetic blobs), the pendulum and MLP
// runs, the envelope property suite and grid search.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mgrad/chain.hpp"
#include "mgrad/optimize.hpp"

namespace mgrad {

enum class ExperimentKind { Pendulum, TrainMlp, EnvelopeCheck, GridSearch };

std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& name);

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::Pendulum;
  OracleKind oracle = OracleKind::Moreau;
  std::uint64_t seed = 0;
  std::string output = "out";
  std::string solver = "practice";  // practice | theory | gd

  double gamma = 0.5;
  double alpha = 128.0;
  double beta = -1.0;  // negative: β_t = γ_t⁻¹
  double kappa = 0.0;
  double delta = 1.0;
  double mu_reg = 0.0;
  bool record_time = false;

  // pendulum
  std::size_t tau = 50;
  std::size_t iters = 200;
  double dt = 0.1;
  double rho = 0.1;
  double friction = 0.01;
  double theta0 = 0.0;
  double omega0 = 0.0;
  bool compare_gd = true;
  double gd_delta = 1.0;

  // mlp
  std::vector<std::size_t> hidden{64};
  std::string activation = "relu";
  std::string head = "squared";
  std::size_t epochs = 10;
  std::size_t batch = 256;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::size_t limit = 1000;
  std::size_t test_limit = 1000;
  std::size_t blob_classes = 10;
  std::size_t blob_per_class = 100;
  std::size_t blob_dim = 10;
  double blob_sigma = 0.3;

  // grid search
  std::string grid_problem = "pendulum";  // pendulum | mlp
  int grid_lo = -4;
  int grid_hi = 2;
  int gamma_lo = -1;
  int gamma_hi = -1;
  std::size_t grid_budget = 50;

  // envelope check
  std::size_t check_points = 20;

  /// Defaults for an experiment: pendulum uses γ=0.5, α=2⁷; MLP uses γ=1, α=2, μ=1e-6.
  static ExperimentConfig defaults(ExperimentKind kind);
  void validate() const;

  PendulumParams pendulum() const;
  InnerSolverConfig solver_config() const;
  OracleSpec oracle_spec() const;
};

/// Parses a flat JSON document. Unknown keys and ill-typed values raise
/// ConfigError. Absent keys take the defaults of the named experiment; if
/// `command` is non-empty it names the experiment and must agree with any
/// "experiment" key in the document.
ExperimentConfig parse_config(const std::string& json_text, const std::string& command = "");
/// Full echo of every field; parse_config(config_to_json(c)) == c.
std::string config_to_json(const ExperimentConfig& c);
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

/// IDX images (magic 0x00000803) and labels (0x00000801); the first `limit`
/// samples in file order, pixels scaled to [0, 1], labels in 0..9.
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         std::size_t limit);

/// k Gaussian blobs with n samples each in ℝᵈ. Class c is centred at
/// ±e_{c mod d} (sign flips every d classes) with isotropic noise σ.
Dataset synth_blobs(std::size_t k, std::size_t n, std::size_t d, std::uint64_t seed,
                    double sigma = 0.3);

struct CheckRow {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
};

/// Envelope property suite: closed forms against the iterative solver, the
/// gap bound, the linear-composition formula, the dual chain rule against a
/// brute-force primal solve, and the Moreau gradient against finite
/// differences of the envelope.
std::vector<CheckRow> envelope_property_suite(std::uint64_t seed, std::size_t points);

struct PendulumOutcome {
  RunRecord record;
  BlockParams controls;
  Vec final_state;
};

/// Runs one oracle on the pendulum from zero controls.
PendulumOutcome run_pendulum(const PendulumParams& p, const OracleSpec& spec, std::size_t iters,
                             const RunOptions& opts = {});

struct MlpData {
  Dataset train;
  Dataset test;
  bool has_test = false;
  std::string source;  // "idx" or "synth_blobs"
};

MlpData load_mlp_data(const ExperimentConfig& c);
Chain build_mlp(const ExperimentConfig& c, std::size_t in_dim, std::size_t classes);

/// Executes the configured experiment and writes its artifacts under
/// c.output. Returns 0 on success and 1 on divergence or a failed check.
int run_experiment(const ExperimentConfig& c, std::ostream& log);

}  // namespace mgrad
