#include "asem/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

#include "asem/log.hpp"
#include "asem/rng.hpp"

namespace asem {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

void check_seeds(const std::vector<std::uint64_t>& seeds, const char* who) {
  if (seeds.empty()) fail_config("%s: needs at least one seed", who);
  std::vector<std::uint64_t> sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    fail_config("%s: seeds must be distinct", who);
}

void validate_sweep(const SweepSpec& spec, bool need_beta) {
  validate_design(spec.instance);
  if (spec.m_values.empty()) fail_config("sweep: width grid is empty");
  for (int m : spec.m_values)
    if (m < 1) fail_config("sweep: width %d must be positive", m);
  if (spec.t_values.empty()) fail_config("sweep: iteration grid is empty");
  for (long long t : spec.t_values)
    if (t < 1) fail_config("sweep: iteration count %lld must be positive", t);
  if (spec.alpha_values.empty()) fail_config("sweep: alpha grid is empty");
  for (double a : spec.alpha_values)
    if (!(a >= 0.0) || !std::isfinite(a)) fail_config("sweep: bad alpha %g", a);
  if (need_beta) {
    if (spec.beta_values.empty()) fail_config("sweep: beta grid is empty");
    for (double bt : spec.beta_values)
      if (!(bt > 0.0) || !std::isfinite(bt)) fail_config("sweep: bad beta %g", bt);
    if (!(spec.coeff_norm > 0.0)) fail_config("sweep: coeff_norm must be positive");
  }
  if (!(spec.radius > 0.0)) fail_config("sweep: radius must be positive");
  if (!(spec.target_noise >= 0.0)) fail_config("sweep: target_noise must be >= 0");
  if (!(spec.eta_rule.coeff > 0.0) || !std::isfinite(spec.eta_rule.power))
    fail_config("sweep: bad stepsize rule");
  if (spec.snapshot_stride < 0) fail_config("sweep: snapshot_stride must be >= 0");
  if (spec.workers < 0) fail_config("sweep: workers must be >= 0");
  check_seeds(spec.seeds, "sweep");
}

// Seeds for the independent streams one sweep cell consumes.
struct CellSeeds {
  std::uint64_t theta, omega, stream, truth;
};

CellSeeds cell_seeds(std::uint64_t seed) {
  CounterRng root(seed);
  return {root.fork(1).key(), root.fork(2).key(), root.fork(3).key(), root.fork(4).key()};
}

double run_cell(const SweepSpec& spec, const DiscreteDesign& design, int m, long long t,
                double alpha, std::uint64_t seed, Eigen::VectorXd& f_out) {
  const CellSeeds ks = cell_seeds(seed);
  const int d1 = static_cast<int>(design.x1_grid[0].size());
  const int d2 = static_cast<int>(design.x2_grid[0].size());
  NetworkState theta = init_network(
      TwoLayerConfig{.input_dim = d1, .width = m, .radius = spec.radius}, ks.theta);
  NetworkState omega = init_network(
      TwoLayerConfig{.input_dim = d2, .width = m, .radius = spec.radius}, ks.omega);

  GameConfig cfg;
  cfg.alpha = alpha;
  cfg.eta = eta_for(spec.eta_rule, t);
  cfg.iterations = t;
  cfg.snapshot_stride = spec.snapshot_stride;
  cfg.seed = seed;
  TrainTrace trace =
      sgda_run(theta, omega, cfg, stream_discrete(design, ks.stream, spec.target_noise));
  const AveragedEstimator avg = average_estimator(trace);
  f_out = tabulate_grid([&](std::span<const double> x) { return avg.predict(x); },
                        design.x1_grid);
  return cfg.eta;
}

double median_of_finite(std::vector<double> v) {
  std::erase_if(v, [](double x) { return !std::isfinite(x); });
  if (v.empty()) return kNan;
  return median(std::move(v));
}

}  // namespace

double eta_for(const EtaRule& rule, long long iterations) {
  return rule.coeff * std::pow(static_cast<double>(iterations), rule.power);
}

ConvergenceReport convergence_experiment(const SweepSpec& spec) {
  validate_sweep(spec, false);
  const DiscretizedOperator op = estimate_operator(spec.instance);
  const Eigen::VectorXd truth = Eigen::Map<const Eigen::VectorXd>(
      spec.instance.f_true.data(), static_cast<Eigen::Index>(spec.instance.f_true.size()));
  const Eigen::VectorXd b = apply(op, truth);
  std::vector<Eigen::VectorXd> f_alpha;
  f_alpha.reserve(spec.alpha_values.size());
  for (double a : spec.alpha_values) f_alpha.push_back(solve_regularized(op, b, a));

  const std::size_t nm = spec.m_values.size(), nt = spec.t_values.size();
  const std::size_t na = spec.alpha_values.size(), ns = spec.seeds.size();
  ConvergenceReport report;
  report.rows.resize(nm * nt * na * ns);

  parallel_for(report.rows.size(), spec.workers, [&](std::size_t idx) {
    std::size_t rem = idx;
    const std::size_t si = rem % ns;
    rem /= ns;
    const std::size_t ai = rem % na;
    rem /= na;
    const std::size_t ti = rem % nt;
    const std::size_t mi = rem / nt;

    ConvergenceRow& row = report.rows[idx];
    row.m = spec.m_values[mi];
    row.t = spec.t_values[ti];
    row.alpha = spec.alpha_values[ai];
    row.seed = spec.seeds[si];
    row.eta = eta_for(spec.eta_rule, row.t);
    const auto start = std::chrono::steady_clock::now();
    try {
      Eigen::VectorXd f;
      run_cell(spec, spec.instance, row.m, row.t, row.alpha, row.seed, f);
      row.suboptimality = suboptimality(op, f, b, row.alpha, f_alpha[ai]);
      row.l2_error_vs_oracle = weighted_sq_norm_x1(op, f - f_alpha[ai]);
    } catch (const std::exception& e) {
      row.error = e.what();
      row.suboptimality = kNan;
      row.l2_error_vs_oracle = kNan;
      log_warn("convergence cell m=%d T=%lld alpha=%g seed=%llu failed: %s", row.m,
               row.t, row.alpha, static_cast<unsigned long long>(row.seed), e.what());
    }
    row.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });

  // Log-log slope of the seed-median suboptimality against T, one summary
  // per (m, alpha) with at least two usable budgets.
  for (std::size_t mi = 0; mi < nm; ++mi)
    for (std::size_t ai = 0; ai < na; ++ai) {
      std::vector<double> xs, ys;
      for (std::size_t ti = 0; ti < nt; ++ti) {
        std::vector<double> subs;
        for (std::size_t si = 0; si < ns; ++si)
          subs.push_back(report.rows[((mi * nt + ti) * na + ai) * ns + si].suboptimality);
        const double med = median_of_finite(std::move(subs));
        if (std::isfinite(med) && med > 0.0) {
          xs.push_back(std::log(static_cast<double>(spec.t_values[ti])));
          ys.push_back(std::log(med));
        }
      }
      if (xs.size() >= 2)
        report.slopes.push_back(
            {spec.m_values[mi], spec.alpha_values[ai], ls_slope(xs, ys)});
    }
  return report;
}

void write_convergence_csv(const ConvergenceReport& report, std::ostream& os,
                           const CsvMeta& meta) {
  const std::string head = csv_meta_line(meta);
  if (!head.empty()) os << head << '\n';
  os << "m,T,eta,alpha,seed,suboptimality,l2_error_vs_oracle,runtime\n";
  for (const ConvergenceRow& r : report.rows)
    os << r.m << ',' << r.t << ',' << fmt_g17(r.eta) << ',' << fmt_g17(r.alpha) << ','
       << r.seed << ',' << fmt_g17(r.suboptimality) << ','
       << fmt_g17(r.l2_error_vs_oracle) << ',' << fmt_g17(r.runtime_seconds) << '\n';
  for (const ConvergenceSlope& s : report.slopes)
    os << "# slope m=" << s.m << " alpha=" << fmt_g17(s.alpha)
       << " dlog_subopt_dlogT=" << fmt_g17(s.slope) << '\n';
  for (const ConvergenceRow& r : report.rows)
    if (!r.error.empty())
      os << "# failed m=" << r.m << " T=" << r.t << " alpha=" << fmt_g17(r.alpha)
         << " seed=" << r.seed << ": " << r.error << '\n';
}

nlohmann::json convergence_to_json(const ConvergenceReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const ConvergenceRow& r : report.rows) {
    nlohmann::json j{{"m", r.m},
                     {"T", r.t},
                     {"eta", r.eta},
                     {"alpha", r.alpha},
                     {"seed", r.seed},
                     {"suboptimality", r.suboptimality},
                     {"l2_error_vs_oracle", r.l2_error_vs_oracle},
                     {"runtime", r.runtime_seconds}};
    if (!r.error.empty()) j["error"] = r.error;
    rows.push_back(std::move(j));
  }
  nlohmann::json slopes = nlohmann::json::array();
  for (const ConvergenceSlope& s : report.slopes)
    slopes.push_back({{"m", s.m}, {"alpha", s.alpha}, {"dlog_subopt_dlogT", s.slope}});
  return {{"rows", std::move(rows)}, {"slopes", std::move(slopes)}};
}

ConsistencyReport consistency_experiment(const SweepSpec& spec) {
  validate_sweep(spec, true);
  const DiscretizedOperator op = estimate_operator(spec.instance);
  const SingularSystem sys = svd_system(op);

  const std::size_t nb = spec.beta_values.size(), na = spec.alpha_values.size();
  const std::size_t nt = spec.t_values.size(), nm = spec.m_values.size();
  const std::size_t ns = spec.seeds.size();
  ConsistencyReport report;
  report.rows.resize(nb * na * nt * nm * ns);

  parallel_for(report.rows.size(), spec.workers, [&](std::size_t idx) {
    std::size_t rem = idx;
    const std::size_t si = rem % ns;
    rem /= ns;
    const std::size_t mi = rem % nm;
    rem /= nm;
    const std::size_t ti = rem % nt;
    rem /= nt;
    const std::size_t ai = rem % na;
    const std::size_t bi = rem / na;

    ConsistencyRow& row = report.rows[idx];
    row.alpha = spec.alpha_values[ai];
    row.beta = spec.beta_values[bi];
    row.t = spec.t_values[ti];
    row.m = spec.m_values[mi];
    row.seed = spec.seeds[si];
    try {
      // Each seed gets its own spectrally regular truth, so medians across
      // seeds average over instances as well as over training noise.
      const Eigen::VectorXd truth =
          make_beta_regular_truth(sys, row.beta, spec.coeff_norm, cell_seeds(row.seed).truth);
      DiscreteDesign design = spec.instance;
      design.f_true.assign(truth.begin(), truth.end());
      Eigen::VectorXd f;
      run_cell(spec, design, row.m, row.t, row.alpha, row.seed, f);
      row.l2_error_to_truth = weighted_sq_norm_x1(op, f - truth);
    } catch (const std::exception& e) {
      row.error = e.what();
      row.l2_error_to_truth = kNan;
      log_warn("consistency cell beta=%g alpha=%g seed=%llu failed: %s", row.beta,
               row.alpha, static_cast<unsigned long long>(row.seed), e.what());
    }
  });

  for (std::size_t bi = 0; bi < nb; ++bi) {
    ConsistencyArgmin best;
    best.beta = spec.beta_values[bi];
    best.alpha = kNan;
    best.median_error = std::numeric_limits<double>::infinity();
    for (std::size_t ai = 0; ai < na; ++ai) {
      std::vector<double> errs;
      for (std::size_t rest = 0; rest < nt * nm * ns; ++rest)
        errs.push_back(report.rows[(bi * na + ai) * nt * nm * ns + rest].l2_error_to_truth);
      const double med = median_of_finite(std::move(errs));
      if (std::isfinite(med) && med < best.median_error) {
        best.median_error = med;
        best.alpha = spec.alpha_values[ai];
      }
    }
    report.argmin.push_back(best);
  }
  return report;
}

void write_consistency_csv(const ConsistencyReport& report, std::ostream& os,
                           const CsvMeta& meta) {
  const std::string head = csv_meta_line(meta);
  if (!head.empty()) os << head << '\n';
  os << "alpha,beta,T,m,seed,l2_error_to_truth\n";
  for (const ConsistencyRow& r : report.rows)
    os << fmt_g17(r.alpha) << ',' << fmt_g17(r.beta) << ',' << r.t << ',' << r.m << ','
       << r.seed << ',' << fmt_g17(r.l2_error_to_truth) << '\n';
  for (const ConsistencyArgmin& a : report.argmin)
    os << "# argmin beta=" << fmt_g17(a.beta) << " alpha=" << fmt_g17(a.alpha)
       << " median_error=" << fmt_g17(a.median_error) << '\n';
  for (const ConsistencyRow& r : report.rows)
    if (!r.error.empty())
      os << "# failed beta=" << fmt_g17(r.beta) << " alpha=" << fmt_g17(r.alpha)
         << " seed=" << r.seed << ": " << r.error << '\n';
}

nlohmann::json consistency_to_json(const ConsistencyReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const ConsistencyRow& r : report.rows) {
    nlohmann::json j{{"alpha", r.alpha}, {"beta", r.beta},   {"T", r.t},
                     {"m", r.m},         {"seed", r.seed},   {"l2_error_to_truth", r.l2_error_to_truth}};
    if (!r.error.empty()) j["error"] = r.error;
    rows.push_back(std::move(j));
  }
  nlohmann::json mins = nlohmann::json::array();
  for (const ConsistencyArgmin& a : report.argmin)
    mins.push_back({{"beta", a.beta}, {"alpha", a.alpha}, {"median_error", a.median_error}});
  return {{"rows", std::move(rows)}, {"argmin", std::move(mins)}};
}

namespace {

// Minimizes u'Qu/2 + l'u over the ball |u| <= r for positive definite Q:
// unconstrained solution if feasible, otherwise the boundary point found by
// bisecting the multiplier in (Q + mu I) u = -l.
Eigen::VectorXd ball_min_quadratic(const Eigen::MatrixXd& q, const Eigen::VectorXd& l,
                                   double r) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
  const Eigen::VectorXd lam = es.eigenvalues();
  if (lam(0) <= 0.0) fail_runtime("regret: accumulated quadratic is not positive definite");
  const Eigen::VectorXd c = es.eigenvectors().transpose() * l;
  const auto norm_at = [&](double mu) {
    double n2 = 0.0;
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      const double w = c(i) / (lam(i) + mu);
      n2 += w * w;
    }
    return std::sqrt(n2);
  };
  double mu = 0.0;
  if (norm_at(0.0) > r) {
    double lo = 0.0, hi = 1.0;
    while (norm_at(hi) > r) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + hi); ++it) {
      const double mid = 0.5 * (lo + hi);
      (norm_at(mid) > r ? lo : hi) = mid;
    }
    mu = 0.5 * (lo + hi);
  }
  Eigen::VectorXd scaled(c.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) scaled(i) = -c(i) / (lam(i) + mu);
  return es.eigenvectors() * scaled;
}

Eigen::VectorXd uniform_in_ball(CounterRng& rng, int dim, double radius) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.gaussian();
  const double norm = v.norm();
  if (norm == 0.0) return Eigen::VectorXd::Zero(dim);
  return v * (radius * std::pow(rng.uniform01_open(), 1.0 / dim) / norm);
}

Eigen::VectorXd random_direction(CounterRng& rng, int dim) {
  Eigen::VectorXd v(dim);
  double n = 0.0;
  do {
    for (int i = 0; i < dim; ++i) v(i) = rng.gaussian();
    n = v.norm();
  } while (n == 0.0);
  return v / n;
}

void validate_regret(const RegretSpec& spec) {
  if (spec.dim < 1) fail_config("regret: dim must be >= 1");
  if (spec.horizon < 1) fail_config("regret: horizon must be >= 1");
  if (!(spec.radius > 0.0)) fail_config("regret: radius must be positive");
  if (!(spec.eig_lo > 0.0) || !(spec.eig_hi >= spec.eig_lo))
    fail_config("regret: curvature range must satisfy 0 < lo <= hi");
  if (!(spec.center_radius >= 0.0) || !(spec.noise_scale >= 0.0) ||
      !(spec.bias_norm >= 0.0))
    fail_config("regret: scales must be >= 0");
  if (!(spec.delta > 0.0) || !(spec.delta < 1.0))
    fail_config("regret: delta must lie in (0, 1)");
  if (spec.k_bound < 0.0 || spec.m_bound < 0.0 || spec.eta < 0.0)
    fail_config("regret: bounds and stepsize must be >= 0 (0 = derived)");
  check_seeds(spec.seeds, "regret");
}

}  // namespace

RegretReport regret_harness(const RegretSpec& spec) {
  validate_regret(spec);
  const int n = spec.dim;
  const double r = spec.radius;
  const long long horizon = spec.horizon;

  // Almost-sure bound on the squared corrupted gradient norm, and half the
  // squared worst-case distance from the start to a comparator.
  const double grad_norm =
      spec.eig_hi * (r + spec.center_radius) + spec.noise_scale + spec.bias_norm;
  RegretReport report;
  report.k_bound = spec.k_bound > 0.0 ? spec.k_bound : grad_norm * grad_norm;
  report.m_bound = spec.m_bound > 0.0 ? spec.m_bound : 2.0 * r * r;
  report.eta = spec.eta > 0.0
                   ? spec.eta
                   : std::sqrt(2.0 * report.m_bound / (report.k_bound * horizon));

  const double bound_fixed =
      report.eta * report.k_bound / 2.0 + report.m_bound / (horizon * report.eta) +
      8.0 * report.k_bound *
          std::sqrt(report.m_bound * std::log(1.0 / spec.delta) / horizon);

  for (std::uint64_t seed : spec.seeds) {
    CounterRng root(seed);
    CounterRng bias_rng = root.fork(0);
    const Eigen::VectorXd bias =
        spec.bias_norm > 0.0 ? Eigen::VectorXd(spec.bias_norm * random_direction(bias_rng, n))
                             : Eigen::VectorXd(Eigen::VectorXd::Zero(n));

    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd q_sum = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd l_sum = Eigen::VectorXd::Zero(n);
    double const_sum = 0.0, realized = 0.0, bias_sum = 0.0;

    for (long long t = 0; t < horizon; ++t) {
      CounterRng step = root.fork(1 + static_cast<std::uint64_t>(t));
      // Random rotation from a QR factorization, curvatures uniform in range.
      Eigen::MatrixXd g(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) g(i, j) = step.gaussian();
      const Eigen::MatrixXd rot = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
      Eigen::VectorXd eigs(n);
      for (int i = 0; i < n; ++i) eigs(i) = step.uniform(spec.eig_lo, spec.eig_hi);
      const Eigen::MatrixXd quad = rot * eigs.asDiagonal() * rot.transpose();
      const Eigen::VectorXd center = uniform_in_ball(step, n, spec.center_radius);
      const Eigen::VectorXd noise = uniform_in_ball(step, n, spec.noise_scale);

      const Eigen::VectorXd diff = w - center;
      realized += 0.5 * diff.dot(quad * diff);
      q_sum += quad;
      l_sum -= quad * center;
      const_sum += 0.5 * center.dot(quad * center);
      bias_sum += bias.norm();

      const Eigen::VectorXd grad = quad * diff + noise + bias;
      w -= report.eta * grad;
      const double norm = w.norm();
      if (norm > r) w *= r / norm;
    }

    const Eigen::VectorXd best = ball_min_quadratic(q_sum, l_sum, r);
    const double best_avg =
        (0.5 * best.dot(q_sum * best) + l_sum.dot(best) + const_sum) / horizon;
    const double regret = realized / horizon - best_avg;
    const double bound =
        bound_fixed + 2.0 * std::sqrt(2.0 * report.m_bound) / horizon * bias_sum;
    const bool violated = regret > bound;
    report.rows.push_back({seed, regret, bound, violated});
    if (violated) ++report.violations;
  }
  return report;
}

void write_regret_csv(const RegretReport& report, std::ostream& os, const CsvMeta& meta) {
  const std::string head = csv_meta_line(meta);
  if (!head.empty()) os << head << '\n';
  os << "seed,regret,bound,violated\n";
  for (const RegretRow& r : report.rows)
    os << r.seed << ',' << fmt_g17(r.regret) << ',' << fmt_g17(r.bound) << ','
       << (r.violated ? 1 : 0) << '\n';
  os << "# violations=" << report.violations << " of " << report.rows.size()
     << " eta=" << fmt_g17(report.eta) << " k_bound=" << fmt_g17(report.k_bound)
     << " m_bound=" << fmt_g17(report.m_bound) << '\n';
}

nlohmann::json regret_to_json(const RegretReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const RegretRow& r : report.rows)
    rows.push_back({{"seed", r.seed},
                    {"regret", r.regret},
                    {"bound", r.bound},
                    {"violated", r.violated}});
  return {{"rows", std::move(rows)},
          {"violations", report.violations},
          {"eta", report.eta},
          {"k_bound", report.k_bound},
          {"m_bound", report.m_bound}};
}

namespace {

// Payoff of a strategy pair on one sample, through either the exact
// networks or their linearizations around the initialization.
double payoff_eval(const NetworkState& theta, const NetworkState& omega, const Sample& s,
                   double alpha, bool linearized) {
  double (*f)(const NetworkState&, std::span<const double>) =
      linearized ? linearized_forward : forward;
  const double u = f(omega, s.instrument);
  double res = -s.target;
  for (const WeightedPoint& p : s.eval_points) res += p.coeff * f(theta, p.point);
  const double fr = f(theta, s.eval_points[s.ridge_index].point);
  return u * res - 0.5 * u * u + 0.5 * alpha * fr * fr;
}

void check_same_frozen_state(const NetworkState& a, const NetworkState& b) {
  if (a.arch != b.arch || a.input_dim != b.input_dim || a.width != b.width ||
      a.depth != b.depth)
    fail_config("decomposition: comparator architecture differs from the primal player");
  if (a.init_weights != b.init_weights || a.signs != b.signs ||
      a.input_map != b.input_map || a.output != b.output)
    fail_config("decomposition: comparator must share the primal initialization");
}

}  // namespace

DecompositionReport decomposition_report(const TrainTrace& trace,
                                         std::span<const Sample> frozen_batch,
                                         const NetworkState& comparator) {
  if (trace.snapshots.empty()) fail_config("decomposition: trace has no snapshots");
  if (trace.config.snapshot_stride != 1)
    fail_config("decomposition: trace was recorded at stride %lld, need 1",
                trace.config.snapshot_stride);
  if (frozen_batch.empty()) fail_config("decomposition: frozen batch is empty");
  check_same_frozen_state(comparator, trace.theta0);
  const double alpha = trace.config.alpha;

  NetworkState theta = trace.theta0, omega = trace.omega0;
  double sum_iter = 0.0, sum_iter_hat = 0.0, sum_comp_hat = 0.0, sum_comp = 0.0;
  for (const SnapshotRow& snap : trace.snapshots) {
    theta.weights = snap.theta_weights;
    omega.weights = snap.omega_weights;
    for (const Sample& s : frozen_batch) {
      sum_iter += payoff_eval(theta, omega, s, alpha, false);
      sum_iter_hat += payoff_eval(theta, omega, s, alpha, true);
      sum_comp_hat += payoff_eval(comparator, omega, s, alpha, true);
      sum_comp += payoff_eval(comparator, omega, s, alpha, false);
    }
  }

  const double scale =
      1.0 / (static_cast<double>(trace.snapshots.size()) * frozen_batch.size());
  DecompositionReport report;
  report.iterations = static_cast<long long>(trace.snapshots.size());
  report.raw_regret = (sum_iter - sum_comp) * scale;
  report.value_gap_at_iterates = (sum_iter - sum_iter_hat) * scale;
  report.linearized_regret = (sum_iter_hat - sum_comp_hat) * scale;
  report.value_gap_at_comparator = (sum_comp_hat - sum_comp) * scale;
  report.identity_gap =
      std::fabs(report.raw_regret - (report.value_gap_at_iterates +
                                     report.linearized_regret +
                                     report.value_gap_at_comparator));
  return report;
}

nlohmann::json decomposition_to_json(const DecompositionReport& report) {
  return {{"raw_regret", report.raw_regret},
          {"value_gap_at_iterates", report.value_gap_at_iterates},
          {"linearized_regret", report.linearized_regret},
          {"value_gap_at_comparator", report.value_gap_at_comparator},
          {"identity_gap", report.identity_gap},
          {"iterations", report.iterations}};
}

GmmResult gmm_objective(const GridFn& g, std::span<const GridFn> instruments,
                        std::span<const Sample> samples) {
  if (instruments.empty()) fail_config("gmm: needs at least one instrument function");
  if (samples.empty()) fail_config("gmm: needs samples");
  const int m = static_cast<int>(instruments.size());
  const double inv_n = 1.0 / static_cast<double>(samples.size());

  Eigen::VectorXd psi = Eigen::VectorXd::Zero(m);
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd h(m);
  for (const Sample& s : samples) {
    double res = -s.target;
    for (const WeightedPoint& p : s.eval_points) res += p.coeff * g(p.point);
    for (int j = 0; j < m; ++j) h(j) = instruments[j](s.instrument);
    psi += res * h;
    lambda += h * h.transpose();
  }
  psi *= inv_n;
  lambda *= inv_n;

  GmmResult result;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lambda);
  const double trace = lambda.trace();
  if (!(trace > 0.0)) fail_runtime("gmm: every instrument vanishes on the sample");
  if (es.eigenvalues()(0) <= 1e-12 * trace) {
    const double ridge = 1e-10 * trace / m;
    lambda += ridge * Eigen::MatrixXd::Identity(m, m);
    es.compute(lambda);
    result.regularized = true;
    log_info("gmm: singular moment covariance, added ridge %g", ridge);
  }

  result.objective = 0.5 * psi.dot(lambda.ldlt().solve(psi));
  // Independent route: maximize a'psi - a'Lambda a / 2 exactly and evaluate
  // the payoff at the maximizer.
  const Eigen::VectorXd a_star =
      es.eigenvectors() *
      (es.eigenvectors().transpose() * psi).cwiseQuotient(es.eigenvalues());
  result.dual_objective = a_star.dot(psi) - 0.5 * a_star.dot(lambda * a_star);
  return result;
}

namespace {

std::vector<double> fd_weights_of(NetworkState net,
                                  const std::function<double(const NetworkState&)>& value,
                                  double h) {
  std::vector<double> out(net.n_weights());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double w0 = net.weights[i];
    net.weights[i] = w0 + h;
    const double up = value(net);
    net.weights[i] = w0 - h;
    const double down = value(net);
    net.weights[i] = w0;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

double rel_vec_err(std::span<const double> got, std::span<const double> want) {
  const double scale = std::max(std::sqrt(sq_norm(want)), 1e-12);
  return std::sqrt(sq_distance(got, want)) / scale;
}

void perturb_feasible(NetworkState& net, CounterRng& rng) {
  const std::size_t total = net.n_weights();
  const std::size_t block = net.arch == Arch::two_layer
                                ? total
                                : static_cast<std::size_t>(net.width) * net.width;
  for (std::size_t off = 0; off < total; off += block) {
    double n2 = 0.0;
    std::vector<double> dir(block);
    for (double& d : dir) {
      d = rng.gaussian();
      n2 += d * d;
    }
    const double scale = rng.uniform01() * net.radius / std::sqrt(n2);
    for (std::size_t i = 0; i < block; ++i)
      net.weights[off + i] = net.init_weights[off + i] + scale * dir[i];
  }
}

std::vector<double> ball_point(CounterRng& rng, int dim) {
  std::vector<double> x(dim);
  double n2 = 0.0;
  for (double& v : x) {
    v = rng.gaussian();
    n2 += v * v;
  }
  const double scale = std::pow(rng.uniform01_open(), 1.0 / dim) / std::sqrt(n2);
  for (double& v : x) v *= scale;
  return x;
}

}  // namespace

GradientAuditReport gradient_audit(const NetworkState& theta_proto,
                                   const NetworkState& omega_proto,
                                   const AuditSpec& spec) {
  if (spec.n_probes < 1) fail_config("audit: n_probes must be >= 1");
  if (!(spec.margin > 0.0) || !(spec.fd_step > 0.0) || !(spec.tolerance > 0.0))
    fail_config("audit: margin, fd_step and tolerance must be positive");
  if (!(spec.alpha >= 0.0)) fail_config("audit: alpha must be >= 0");

  GradientAuditReport report;
  CounterRng root(spec.seed);
  for (int probe = 0; probe < spec.n_probes; ++probe) {
    NetworkState theta = theta_proto, omega = omega_proto;
    Sample s;
    bool found = false;
    for (int attempt = 0; attempt < 256 && !found; ++attempt) {
      CounterRng rng = root.fork(static_cast<std::uint64_t>(probe) * 1024 + attempt);
      theta.weights = theta_proto.weights;
      omega.weights = omega_proto.weights;
      perturb_feasible(theta, rng);
      perturb_feasible(omega, rng);
      s.eval_points = {{1.0, ball_point(rng, theta.input_dim)},
                       {-1.0, ball_point(rng, theta.input_dim)}};
      s.instrument = ball_point(rng, omega.input_dim);
      s.target = rng.uniform(-1.0, 1.0);
      s.ridge_index = 0;
      double margin = kink_margin(omega, s.instrument);
      for (const WeightedPoint& p : s.eval_points)
        margin = std::min(margin, kink_margin(theta, p.point));
      found = margin > spec.margin;
    }
    if (!found)
      fail_runtime("audit: no kink-free probe found after 256 attempts (margin %g)",
                   spec.margin);

    const std::vector<double> gn = gradient(theta, s.eval_points[0].point);
    const std::vector<double> gn_fd = fd_weights_of(
        theta,
        [&](const NetworkState& net) { return forward(net, s.eval_points[0].point); },
        spec.fd_step);
    report.max_rel_err_network =
        std::max(report.max_rel_err_network, rel_vec_err(gn, gn_fd));

    const std::vector<double> gt = grad_theta(theta, omega, s, spec.alpha);
    const std::vector<double> gt_fd = fd_weights_of(
        theta, [&](const NetworkState& net) { return payoff(net, omega, s, spec.alpha); },
        spec.fd_step);
    report.max_rel_err_theta = std::max(report.max_rel_err_theta, rel_vec_err(gt, gt_fd));

    const std::vector<double> go = grad_omega(theta, omega, s);
    const std::vector<double> go_fd = fd_weights_of(
        omega, [&](const NetworkState& net) { return payoff(theta, net, s, spec.alpha); },
        spec.fd_step);
    report.max_rel_err_omega = std::max(report.max_rel_err_omega, rel_vec_err(go, go_fd));
    ++report.probes;
  }
  report.pass = report.max_rel_err_network <= spec.tolerance &&
                report.max_rel_err_theta <= spec.tolerance &&
                report.max_rel_err_omega <= spec.tolerance;
  return report;
}

nlohmann::json audit_to_json(const GradientAuditReport& report) {
  return {{"max_rel_err_network", report.max_rel_err_network},
          {"max_rel_err_theta", report.max_rel_err_theta},
          {"max_rel_err_omega", report.max_rel_err_omega},
          {"probes", report.probes},
          {"pass", report.pass}};
}

}  // namespace asem
