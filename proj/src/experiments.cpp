#include "mgrad/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iterator>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "mgrad/envelope.hpp"
#include "mgrad/errors.hpp"

namespace mgrad {

using nlohmann::json;

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Pendulum: return "pendulum";
    case ExperimentKind::TrainMlp: return "train-mlp";
    case ExperimentKind::EnvelopeCheck: return "envelope-check";
    case ExperimentKind::GridSearch: return "grid-search";
  }
  return "?";
}

ExperimentKind experiment_kind_from_string(const std::string& name) {
  if (name == "pendulum") return ExperimentKind::Pendulum;
  if (name == "train-mlp") return ExperimentKind::TrainMlp;
  if (name == "envelope-check") return ExperimentKind::EnvelopeCheck;
  if (name == "grid-search") return ExperimentKind::GridSearch;
  throw ConfigError("unknown experiment '" + name +
                    "' (expected pendulum, train-mlp, envelope-check or grid-search)");
}

// ------------------------------------------------------------ config

ExperimentConfig ExperimentConfig::defaults(ExperimentKind kind) {
  ExperimentConfig c;
  c.experiment = kind;
  switch (kind) {
    case ExperimentKind::Pendulum:
      break;
    case ExperimentKind::TrainMlp:
      c.gamma = 1.0;
      c.alpha = 2.0;
      c.mu_reg = 1e-6;
      c.compare_gd = false;
      break;
    case ExperimentKind::EnvelopeCheck:
      c.compare_gd = false;
      break;
    case ExperimentKind::GridSearch:
      c.oracle = OracleKind::Backprop;
      c.compare_gd = false;
      break;
  }
  return c;
}

namespace {

// One visitor over every plain field keeps parsing and echoing in step.
template <class Config, class F>
void visit_fields(Config& c, F&& f) {
  f("seed", c.seed);
  f("output", c.output);
  f("solver", c.solver);
  f("gamma", c.gamma);
  f("alpha", c.alpha);
  f("beta", c.beta);
  f("kappa", c.kappa);
  f("delta", c.delta);
  f("mu_reg", c.mu_reg);
  f("record_time", c.record_time);
  f("tau", c.tau);
  f("iters", c.iters);
  f("dt", c.dt);
  f("rho", c.rho);
  f("friction", c.friction);
  f("theta0", c.theta0);
  f("omega0", c.omega0);
  f("compare_gd", c.compare_gd);
  f("gd_delta", c.gd_delta);
  f("hidden", c.hidden);
  f("activation", c.activation);
  f("head", c.head);
  f("epochs", c.epochs);
  f("batch", c.batch);
  f("train_images", c.train_images);
  f("train_labels", c.train_labels);
  f("test_images", c.test_images);
  f("test_labels", c.test_labels);
  f("limit", c.limit);
  f("test_limit", c.test_limit);
  f("blob_classes", c.blob_classes);
  f("blob_per_class", c.blob_per_class);
  f("blob_dim", c.blob_dim);
  f("blob_sigma", c.blob_sigma);
  f("grid_problem", c.grid_problem);
  f("grid_lo", c.grid_lo);
  f("grid_hi", c.grid_hi);
  f("gamma_lo", c.gamma_lo);
  f("gamma_hi", c.gamma_hi);
  f("grid_budget", c.grid_budget);
  f("check_points", c.check_points);
}

template <class T>
void read_value(const std::string& key, const json& v, T& out) {
  auto bad = [&](const char* expected) {
    return ConfigError("config key '" + key + "': expected " + expected + ", got " + v.dump());
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw bad("a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw bad("a string");
    out = v.get<std::string>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) throw bad("a number");
    out = v.get<double>();
  } else if constexpr (std::is_same_v<T, int>) {
    if (!v.is_number_integer()) throw bad("an integer");
    out = v.get<int>();
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    if (!v.is_array()) throw bad("an array of positive integers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) throw bad("an array of positive integers");
      out.push_back(e.get<std::size_t>());
    }
  } else {
    static_assert(std::is_unsigned_v<T>);
    if (!v.is_number_unsigned()) throw bad("a non-negative integer");
    out = v.get<T>();
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("config: " + msg);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(solver == "practice" || solver == "theory" || solver == "gd",
          "solver must be practice, theory or gd");
  require(std::isfinite(gamma) && gamma > 0.0, "gamma must be positive");
  require(std::isfinite(alpha) && alpha > 0.0, "alpha must be positive");
  require(std::isfinite(beta), "beta must be finite");
  require(std::isfinite(kappa) && kappa >= 0.0, "kappa must be non-negative");
  require(std::isfinite(delta) && delta > 0.0, "delta must be positive");
  require(std::isfinite(mu_reg) && mu_reg >= 0.0, "mu_reg must be non-negative");
  require(tau >= 1, "tau must be at least 1");
  require(iters >= 1, "iters must be at least 1");
  require(std::isfinite(dt) && dt > 0.0, "dt must be positive");
  require(std::isfinite(rho) && rho >= 0.0, "rho must be non-negative");
  require(std::isfinite(friction) && std::isfinite(theta0) && std::isfinite(omega0),
          "pendulum constants must be finite");
  require(std::isfinite(gd_delta) && gd_delta > 0.0, "gd_delta must be positive");
  for (auto h : hidden) require(h >= 1, "hidden widths must be positive");
  activation_from_string(activation);
  loss_head_from_string(head);
  require(epochs >= 1, "epochs must be at least 1");
  require(batch >= 1, "batch must be at least 1");
  require(train_images.empty() == train_labels.empty(),
          "train_images and train_labels go together");
  require(test_images.empty() == test_labels.empty(), "test_images and test_labels go together");
  require(limit >= 1 && test_limit >= 1, "limit must be at least 1");
  require(blob_classes >= 1 && blob_per_class >= 1 && blob_dim >= 1, "blob sizes must be positive");
  require(std::isfinite(blob_sigma) && blob_sigma >= 0.0, "blob_sigma must be non-negative");
  require(grid_problem == "pendulum" || grid_problem == "mlp", "grid_problem must be pendulum or mlp");
  require(grid_lo <= grid_hi && gamma_lo <= gamma_hi, "grid bounds must satisfy lo <= hi");
  require(grid_hi - grid_lo <= 30 && gamma_hi - gamma_lo <= 30, "grid spans at most 31 powers");
  require(grid_budget >= 1, "grid_budget must be at least 1");
  require(check_points >= 1, "check_points must be at least 1");
  require(!output.empty(), "output must name a directory");
  if (oracle == OracleKind::AugLag) require(beta != 0.0 || kappa > 0.0, "auglag needs beta or kappa");
  if (oracle == OracleKind::TargetProp) require(kappa > 0.0, "targetprop needs kappa > 0");
}

PendulumParams ExperimentConfig::pendulum() const {
  PendulumParams p;
  p.friction = friction;
  p.dt = dt;
  p.horizon = tau;
  p.rho = rho;
  p.theta0 = theta0;
  p.omega0 = omega0;
  return p;
}

InnerSolverConfig ExperimentConfig::solver_config() const {
  if (solver == "theory") return InnerSolverConfig::theory();
  if (solver == "gd") return InnerSolverConfig::iterative_only();
  return InnerSolverConfig::practice();
}

OracleSpec ExperimentConfig::oracle_spec() const {
  OracleSpec s;
  s.kind = oracle;
  s.delta = delta;
  s.gamma = gamma;
  s.alpha = alpha;
  s.kappa = kappa;
  s.beta = beta;
  s.mu_reg = mu_reg;
  s.solver = solver_config();
  return s;
}

ExperimentConfig parse_config(const std::string& json_text, const std::string& command) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");

  std::string name = command;
  if (auto it = doc.find("experiment"); it != doc.end()) {
    if (!it->is_string()) throw ConfigError("config key 'experiment': expected a string");
    const std::string in_doc = it->get<std::string>();
    if (!name.empty() && in_doc != name)
      throw ConfigError("config names experiment '" + in_doc + "' but the command is '" + name + "'");
    name = in_doc;
  }
  if (name.empty()) throw ConfigError("no experiment given");
  ExperimentConfig c = ExperimentConfig::defaults(experiment_kind_from_string(name));

  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& key = it.key();
    if (key == "experiment") continue;
    if (key == "oracle") {
      if (!it->is_string()) throw ConfigError("config key 'oracle': expected a string");
      try {
        c.oracle = oracle_kind_from_string(it->get<std::string>());
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      continue;
    }
    bool found = false;
    visit_fields(c, [&](const char* field, auto& value) {
      if (!found && key == field) {
        read_value(key, *it, value);
        found = true;
      }
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

namespace {

json config_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = to_string(c.experiment);
  j["oracle"] = to_string(c.oracle);
  visit_fields(c, [&](const char* field, const auto& value) { j[field] = value; });
  return j;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& c) { return config_json(c).dump(2) + "\n"; }

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return config_json(a) == config_json(b);
}

// ------------------------------------------------------------ data

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         std::size_t limit) {
  if (limit == 0) throw DataError("IDX: limit 0 gives an empty dataset");
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.size() < 16) throw DataError("IDX images '" + images_path + "': truncated header");
  if (lab.size() < 8) throw DataError("IDX labels '" + labels_path + "': truncated header");
  if (be32(img, 0) != 0x803)
    throw DataError("IDX images '" + images_path + "': bad magic " + std::to_string(be32(img, 0)));
  if (be32(lab, 0) != 0x801)
    throw DataError("IDX labels '" + labels_path + "': bad magic " + std::to_string(be32(lab, 0)));
  const std::size_t n_img = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  const std::size_t n_lab = be32(lab, 4);
  if (n_img != n_lab)
    throw DataError("IDX: " + std::to_string(n_img) + " images but " + std::to_string(n_lab) + " labels");
  const std::size_t pixels = rows * cols;
  if (pixels == 0) throw DataError("IDX images: zero-sized images");
  if (img.size() < 16 + n_img * pixels) throw DataError("IDX images '" + images_path + "': truncated data");
  if (lab.size() < 8 + n_lab) throw DataError("IDX labels '" + labels_path + "': truncated data");

  const std::size_t n = std::min(limit, n_img);
  if (n == 0) throw DataError("IDX: file holds no samples");
  Dataset d;
  d.classes = 10;
  for (std::size_t s = 0; s < n; ++s) {
    const int label = lab[8 + s];
    if (label > 9) throw DataError("IDX labels: sample " + std::to_string(s) + " has label " + std::to_string(label));
    Vec x(pixels);
    for (std::size_t p = 0; p < pixels; ++p) x[p] = img[16 + s * pixels + p] / 255.0;
    d.inputs.push_back(std::move(x));
    d.labels.push_back(label);
  }
  return d;
}

Dataset synth_blobs(std::size_t k, std::size_t n, std::size_t d, std::uint64_t seed, double sigma) {
  if (k < 1 || n < 1 || d < 1) throw ConfigError("synth_blobs: k, n and d must be positive");
  Rng rng(seed);
  Dataset ds;
  ds.classes = k;
  for (std::size_t c = 0; c < k; ++c) {
    const double sign = (c / d) % 2 == 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      Vec x = rng.normal_vec(d, sigma);
      x[c % d] += sign;
      ds.inputs.push_back(std::move(x));
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

MlpData load_mlp_data(const ExperimentConfig& c) {
  MlpData out;
  if (!c.train_images.empty()) {
    out.train = load_idx_dataset(c.train_images, c.train_labels, c.limit);
    if (!c.test_images.empty()) {
      out.test = load_idx_dataset(c.test_images, c.test_labels, c.test_limit);
      out.has_test = true;
    }
    out.source = "idx";
    return out;
  }
  out.train = synth_blobs(c.blob_classes, c.blob_per_class, c.blob_dim, splitmix64(c.seed + 1),
                          c.blob_sigma);
  out.test = synth_blobs(c.blob_classes, std::max<std::size_t>(1, c.blob_per_class / 5), c.blob_dim,
                         splitmix64(c.seed + 4), c.blob_sigma);
  out.has_test = true;
  out.source = "synth_blobs";
  return out;
}

Chain build_mlp(const ExperimentConfig& c, std::size_t in_dim, std::size_t classes) {
  std::vector<std::size_t> widths{in_dim};
  widths.insert(widths.end(), c.hidden.begin(), c.hidden.end());
  widths.push_back(classes);
  return mlp_chain(widths, activation_from_string(c.activation), Activation::Identity);
}

// ------------------------------------------------------------ envelope suite

namespace {

struct MaxError {
  double value = -std::numeric_limits<double>::infinity();
  void add(double e) { value = std::isnan(e) ? e : std::max(value, e); }
};

CheckRow make_row(std::string name, const MaxError& m, double tol) {
  return {std::move(name), m.value <= tol, m.value, tol};
}

Mat random_spd(Rng& rng, std::size_t n, double shift) {
  const Mat B = rng.normal_mat(n, n, 1.0 / std::sqrt(static_cast<double>(n)));
  return B.transpose() * B + shift * Mat::identity(n);
}

double scale_of(const Vec& v) { return std::max(1.0, v.norm()); }

}  // namespace

std::vector<CheckRow> envelope_property_suite(std::uint64_t seed, std::size_t points) {
  Rng rng(seed);
  std::vector<CheckRow> rows;
  const InnerSolverConfig exact = InnerSolverConfig::theory();
  const InnerSolverConfig iterative = InnerSolverConfig::iterative_only();

  {  // squared loss: y* = −αw(x − t)/(1 + αw)
    MaxError m;
    for (std::size_t i = 0; i < points; ++i) {
      const Vec t = rng.normal_vec(4), x = rng.normal_vec(4);
      const double w = rng.uniform(0.1, 3.0), a = rng.uniform(0.05, 4.0);
      const Vec expect = (-a * w / (1.0 + a * w)) * (x - t);
      const Vec got = closed_form_prox(Objective::squared_loss(t, w), x, a).minimizer;
      m.add((got - expect).norm() / scale_of(expect));
    }
    rows.push_back(make_row("closed_form.squared_loss", m, 1e-12));
  }
  {  // quadratic: stationarity y + α(Q(x + y) + b) = 0
    MaxError m;
    for (std::size_t i = 0; i < points; ++i) {
      const Mat Q = random_spd(rng, 4, 0.1);
      const Vec b = rng.normal_vec(4), x = rng.normal_vec(4);
      const double a = rng.uniform(0.05, 4.0);
      const Vec y = closed_form_prox(Objective::quadratic(Q, b), x, a).minimizer;
      const Vec r = y + a * (matvec(Q, x + y) + b);
      m.add(r.norm() / scale_of(a * (matvec(Q, x) + b)));
    }
    rows.push_back(make_row("closed_form.quadratic", m, 1e-12));
  }
  {  // linear form: y* = −αλ
    MaxError m;
    for (std::size_t i = 0; i < points; ++i) {
      const Vec lam = rng.normal_vec(5), x = rng.normal_vec(5);
      const double a = rng.uniform(0.05, 4.0);
      const Vec y = closed_form_prox(Objective::linear(lam), x, a).minimizer;
      m.add((y + a * lam).norm() / scale_of(a * lam));
    }
    rows.push_back(make_row("closed_form.linear", m, 1e-12));
  }
  {  // ℓ1: x + y* = sign(x)·max(|x| − αs, 0)
    MaxError m;
    for (std::size_t i = 0; i < points; ++i) {
      const Vec x = rng.normal_vec(6, 2.0);
      const double a = rng.uniform(0.05, 2.0), s = rng.uniform(0.5, 2.0);
      const Vec y = closed_form_prox(Objective::l1(s), x, a).minimizer;
      Vec expect(x.size());
      for (std::size_t j = 0; j < x.size(); ++j)
        expect[j] = std::copysign(std::max(std::abs(x[j]) - a * s, 0.0), x[j]) - x[j];
      m.add((y - expect).norm() / scale_of(x));
    }
    rows.push_back(make_row("closed_form.soft_threshold", m, 1e-12));
  }
  {  // the iterative solver agrees with the closed form
    MaxError m;
    for (std::size_t i = 0; i < points; ++i) {
      const Mat Q = random_spd(rng, 3, 0.2);
      const Vec b = rng.normal_vec(3), x = rng.normal_vec(3);
      const double a = rng.uniform(0.1, 2.0);
      const Objective f = Objective::quadratic(Q, b);
      const Vec cf = closed_form_prox(f, x, a).moreau_gradient;
      const Vec it = moreau_grad(f, x, a, iterative).moreau_gradient;
      m.add((it - cf).norm() / scale_of(cf));
    }
    rows.push_back(make_row("iterative_vs_closed.quadratic", m, 1e-8));
  }
  {  // |f − env_α f| ≤ αℓ² for |·| (ℓ = 1) and ‖A· − b‖ (ℓ = ‖A‖₂)
    MaxError m;
    for (double a : {0.1, 1.0}) {
      for (std::size_t i = 0; i < points; ++i) {
        const Vec x = rng.normal_vec(1, 2.0);
        const double gap = envelope_gap_check(Objective::l1(), x, a, exact);
        m.add(gap - a);
        const Mat A = rng.normal_mat(2, 3);
        const Vec b = rng.normal_vec(2), z = rng.normal_vec(3, 2.0);
        const double ell = A.spectral_norm();
        m.add(envelope_gap_check(Objective::norm_affine(A, b), z, a, exact) - a * ell * ell);
      }
    }
    rows.push_back(make_row("gap_bound.lipschitz", m, 1e-12));
  }
  {  // ∇env(f∘A)(x) = Aᵀ(AAᵀ + Q⁻¹)⁻¹Ax against a direct solve on f∘A
    MaxError m;
    for (std::size_t i = 0; i < points; ++i) {
      const Mat Q = random_spd(rng, 2, 0.5);
      const Mat A = rng.normal_mat(2, 3);
      const Vec x = rng.normal_vec(3);
      const Mat AtQA = A.transpose() * Q * A;
      const Objective fa = Objective::quadratic(AtQA, Vec(3));
      const Vec direct = moreau_grad(fa, x, 1.0, iterative).moreau_gradient;
      const Vec formula = linear_composition_moreau_grad(Q, A, x);
      m.add((formula - direct).norm() / scale_of(direct));
    }
    rows.push_back(make_row("linear_composition", m, 1e-8));
  }
  {  // dual chain rule: −y* from the dual iteration vs a brute-force primal solve
    MaxError m;
    const std::size_t reps = std::min<std::size_t>(points, 5);
    for (std::size_t i = 0; i < reps; ++i) {
      auto layer = std::make_shared<DenseActivationLayer>(3, 3, Activation::Tanh);
      const Vec w = layer->init_params(rng);
      const SmoothMap g = layer_map(layer, w);
      const Mat Q = random_spd(rng, 3, 0.5);
      const Vec c = rng.normal_vec(3);
      const Objective f = Objective::quadratic(Q, -1.0 * matvec(Q, c));
      const Vec x = rng.normal_vec(3);
      const double a = 0.2;
      const double Lc = std::pow(DenseLayer(3, 3).weights(w).frobenius_norm(), 2);
      const DualProxResult dual = dual_prox_gradient(f, g, x, a, 0.5 / std::max(1.0, Lc), 3000, exact);
      const ScalarFn primal = [&](const Vec& y) { return a * f.value(g.value(x + y)) + 0.5 * y.squared_norm(); };
      const GradientFn primal_grad = [&](const Vec& y) {
        return a * g.vjp(x + y, f.grad(g.value(x + y))) + y;
      };
      BruteForceOptions bo;
      bo.step = 0.5;
      const BruteForceResult bf = brute_force_argmin(primal, primal_grad, Vec(3), bo);
      m.add((dual.moreau_gradient + bf.argmin).norm());
    }
    rows.push_back(make_row("dual_chain_rule", m, 1e-4));
  }
  {  // ∇env(αf) against central differences of the envelope value
    MaxError m;
    for (std::size_t i = 0; i < points; ++i) {
      std::vector<int> labels{static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3))};
      const Objective f = Objective::logistic(labels, 3);
      const Vec x = rng.normal_vec(6);
      const double a = rng.uniform(0.1, 2.0);
      const Vec grad = moreau_grad(f, x, a, exact).moreau_gradient;
      const Vec fd = finite_difference_gradient(
          [&](const Vec& z) { return moreau_grad(f, z, a, exact).envelope_value; }, x);
      m.add((grad - fd).norm() / scale_of(grad));
    }
    rows.push_back(make_row("envelope_gradient_fd", m, 1e-6));
  }
  return rows;
}

// ------------------------------------------------------------ drivers

PendulumOutcome run_pendulum(const PendulumParams& p, const OracleSpec& spec, std::size_t iters,
                             const RunOptions& opts) {
  const Chain chain = pendulum_chain(p);
  const Objective h = Objective::pendulum_terminal(p.rho);
  const Vec x0{p.theta0, p.omega0};
  RunResult r = batch_loop(spec, chain, h, x0, chain.zero_params(), iters, opts);
  PendulumOutcome out{std::move(r.record), std::move(r.w), Vec(2)};
  try {
    out.final_state = chain.output(out.controls, x0);
  } catch (const NonFiniteError&) {
    out.final_state = Vec{std::nan(""), std::nan("")};
  }
  return out;
}

namespace {

namespace fs = std::filesystem;

double round_ms(double s) { return std::round(s * 1000.0) / 1000.0; }

json stats_json(const LocalSolveStats& s) {
  return {{"solves", s.solves},
          {"closed_form", s.closed_form},
          {"iterations", s.iterations},
          {"unconverged", s.unconverged},
          {"max_residual", s.max_residual}};
}

json record_json(const RunRecord& r) {
  json j;
  j["rows"] = r.rows.size();
  j["initial_loss"] = r.rows.empty() ? json() : json(r.rows.front().train_loss);
  j["final_loss"] = r.rows.empty() ? json() : json(r.rows.back().train_loss);
  j["best_loss"] = r.rows.empty() ? json() : json(r.best_loss());
  j["diverged"] = r.diverged;
  j["divergence_reason"] = r.divergence_reason;
  if (r.final_train_acc) j["final_train_acc"] = *r.final_train_acc;
  if (!r.rows.empty() && r.rows.back().test_acc) j["final_test_acc"] = *r.rows.back().test_acc;
  j["solver_stats"] = stats_json(r.solver_stats);
  j["wall_seconds"] = round_ms(r.wall_seconds);
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

void write_curve(const fs::path& path, const RunRecord& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  r.write_csv(out);
}

json pendulum_json(const PendulumOutcome& o) {
  json j = record_json(o.record);
  j["theta_final"] = o.final_state[0];
  j["omega_final"] = o.final_state[1];
  const double miss = std::abs(o.final_state[0] - M_PI);
  j["swing_up_reached"] = std::isfinite(miss) && miss <= 0.2;
  if (!o.record.rows.empty()) {
    const double f0 = o.record.rows.front().train_loss;
    j["reduction"] = f0 > 0.0 ? 1.0 - o.record.best_loss() / f0 : 0.0;
  }
  return j;
}

int pendulum_command(const ExperimentConfig& c, const fs::path& dir, std::ostream& log) {
  RunOptions opts;
  opts.record_time = c.record_time;
  const PendulumParams p = c.pendulum();
  const PendulumOutcome main = run_pendulum(p, c.oracle_spec(), c.iters, opts);
  write_curve(dir / "curve.csv", main.record);
  json summary;
  summary["experiment"] = "pendulum";
  summary["oracle"] = to_string(c.oracle);
  summary["run"] = pendulum_json(main);
  bool diverged = main.record.diverged;
  log << to_string(c.oracle) << ": h(x_0)=" << main.record.rows.front().train_loss
      << " best=" << main.record.best_loss() << " theta_tau=" << main.final_state[0]
      << (main.record.diverged ? " DIVERGED" : "") << "\n";
  if (c.compare_gd) {
    OracleSpec gd;
    gd.kind = OracleKind::Backprop;
    gd.delta = c.gd_delta;
    gd.mu_reg = c.mu_reg;
    const PendulumOutcome base = run_pendulum(p, gd, c.iters, opts);
    write_curve(dir / "curve_gd.csv", base.record);
    summary["gd"] = pendulum_json(base);
    summary["gd"]["delta"] = c.gd_delta;
    diverged = diverged || base.record.diverged;
    log << "backprop (delta=" << c.gd_delta << "): best=" << base.record.best_loss()
        << " theta_tau=" << base.final_state[0] << (base.record.diverged ? " DIVERGED" : "") << "\n";
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  return diverged ? 1 : 0;
}

RunResult run_mlp(const ExperimentConfig& c, const MlpData& data, const OracleSpec& spec,
                  std::size_t epochs) {
  const Chain chain = build_mlp(c, data.train.dim(), data.train.classes);
  Rng init = Rng(c.seed).split(2);
  const BlockParams w0 = chain.init_params(init);
  MinibatchOptions mo;
  mo.epochs = epochs;
  mo.batch = std::min(c.batch, data.train.size());
  mo.seed = splitmix64(c.seed ^ 0x5eedULL);
  mo.head = loss_head_from_string(c.head);
  mo.run.record_time = c.record_time;
  return minibatch_loop(data.train, data.has_test ? &data.test : nullptr, chain, spec, w0, mo);
}

int mlp_command(const ExperimentConfig& c, const fs::path& dir, std::ostream& log) {
  const MlpData data = load_mlp_data(c);
  const RunResult r = run_mlp(c, data, c.oracle_spec(), c.epochs);
  write_curve(dir / "curve.csv", r.record);
  json summary;
  summary["experiment"] = "train-mlp";
  summary["oracle"] = to_string(c.oracle);
  summary["dataset"] = {{"source", data.source},
                        {"train_size", data.train.size()},
                        {"test_size", data.has_test ? data.test.size() : 0},
                        {"dim", data.train.dim()},
                        {"classes", data.train.classes}};
  summary["run"] = record_json(r.record);
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  log << to_string(c.oracle) << " on " << data.source << ": best loss " << r.record.best_loss()
      << ", train accuracy " << r.record.final_train_acc.value_or(0.0)
      << (r.record.diverged ? " DIVERGED" : "") << "\n";
  return r.record.diverged ? 1 : 0;
}

int envelope_command(const ExperimentConfig& c, const fs::path& dir, std::ostream& log) {
  const auto rows = envelope_property_suite(c.seed, c.check_points);
  std::ofstream csv(dir / "checks.csv");
  csv << "check,pass,measured,tolerance\n" << std::setprecision(17);
  std::size_t failed = 0;
  for (const auto& r : rows) {
    csv << r.name << ',' << (r.pass ? 1 : 0) << ',' << r.measured << ',' << r.tolerance << '\n';
    log << std::left << std::setw(32) << r.name << (r.pass ? "PASS" : "FAIL") << "  measured "
        << std::scientific << std::setprecision(3) << r.measured << "  tol " << r.tolerance
        << std::defaultfloat << "\n";
    if (!r.pass) ++failed;
  }
  json summary{{"experiment", "envelope-check"}, {"checks", rows.size()}, {"failed", failed}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  return failed == 0 ? 0 : 1;
}

int grid_command(const ExperimentConfig& c, const fs::path& dir, std::ostream& log) {
  std::vector<GridCandidate> candidates;
  const OracleSpec base = c.oracle_spec();
  for (double a : powers_of_two(c.grid_lo, c.grid_hi)) {
    if (c.oracle == OracleKind::Backprop) {
      OracleSpec s = base;
      s.delta = a;
      std::ostringstream label;
      label << "delta=" << a;
      candidates.push_back({label.str(), s});
      continue;
    }
    for (double g : powers_of_two(c.gamma_lo, c.gamma_hi)) {
      OracleSpec s = base;
      s.alpha = a;
      s.gamma = g;
      std::ostringstream label;
      label << "alpha=" << a << ";gamma=" << g;
      candidates.push_back({label.str(), s});
    }
  }

  std::function<RunRecord(const OracleSpec&)> run;
  std::optional<MlpData> data;
  if (c.grid_problem == "mlp") {
    data = load_mlp_data(c);
    run = [&](const OracleSpec& s) { return run_mlp(c, *data, s, c.epochs).record; };
  } else {
    const PendulumParams p = c.pendulum();
    run = [&, p](const OracleSpec& s) { return run_pendulum(p, s, c.iters).record; };
  }
  GridResult g;
  try {
    g = grid_search(candidates, run, c.grid_budget);
  } catch (const DivergenceError& e) {
    log << e.what() << "\n";
    json summary{{"experiment", "grid-search"}, {"all_diverged", true}};
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    return 1;
  }
  std::ofstream table(dir / "grid.csv");
  table << "label,area,best_loss,diverged\n" << std::setprecision(17);
  for (const auto& row : g.table) {
    table << row.label << ',' << row.area << ',' << row.best_loss << ',' << (row.diverged ? 1 : 0) << '\n';
    log << std::left << std::setw(28) << row.label << " area " << row.area << " best "
        << row.best_loss << (row.diverged ? " diverged" : "") << (&row == &g.table[g.best] ? "  <- best" : "")
        << "\n";
  }
  write_curve(dir / "curve.csv", g.records[g.best]);
  json summary{{"experiment", "grid-search"},
               {"problem", c.grid_problem},
               {"oracle", to_string(c.oracle)},
               {"budget", c.grid_budget},
               {"best", g.table[g.best].label},
               {"best_area", g.table[g.best].area},
               {"candidates", g.table.size()}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  return 0;
}

}  // namespace

int run_experiment(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const fs::path dir(c.output);
  fs::create_directories(dir);
  write_text(dir / "config.json", config_to_json(c));
  const auto start = std::chrono::steady_clock::now();
  int code = 0;
  try {
    switch (c.experiment) {
      case ExperimentKind::Pendulum: code = pendulum_command(c, dir, log); break;
      case ExperimentKind::TrainMlp: code = mlp_command(c, dir, log); break;
      case ExperimentKind::EnvelopeCheck: code = envelope_command(c, dir, log); break;
      case ExperimentKind::GridSearch: code = grid_command(c, dir, log); break;
    }
  } catch (const DivergenceError& e) {
    log << "diverged: " << e.what() << "\n";
    return 1;
  } catch (const NonFiniteError& e) {
    log << "diverged: " << e.what() << "\n";
    return 1;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log << "wall time " << std::fixed << std::setprecision(3) << secs << " s\n" << std::defaultfloat;
  return code;
}

}  // namespace mgrad
