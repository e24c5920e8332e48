#include "asem/game.hpp"

#include <cmath>

#include "asem/log.hpp"

namespace asem {

static void check_sample(const NetworkState& theta, const NetworkState& omega,
                         const Sample& s) {
  if (s.eval_points.empty()) fail_config("sample: needs at least one eval point");
  if (s.ridge_index < 0 || s.ridge_index >= static_cast<int>(s.eval_points.size()))
    fail_config("sample: ridge_index %d out of range [0, %zu)", s.ridge_index,
                s.eval_points.size());
  for (const WeightedPoint& p : s.eval_points)
    if (static_cast<int>(p.point.size()) != theta.input_dim)
      fail_config("sample: eval point has dim %zu, primal network expects %d",
                  p.point.size(), theta.input_dim);
  if (static_cast<int>(s.instrument.size()) != omega.input_dim)
    fail_config("sample: instrument has dim %zu, adversary expects %d",
                s.instrument.size(), omega.input_dim);
}

double residual(const NetworkState& theta, const Sample& s) {
  if (s.eval_points.empty()) fail_config("sample: needs at least one eval point");
  double acc = -s.target;
  for (const WeightedPoint& p : s.eval_points) acc += p.coeff * forward(theta, p.point);
  return acc;
}

double payoff(const NetworkState& theta, const NetworkState& omega,
              const Sample& s, double alpha) {
  check_sample(theta, omega, s);
  const double u = forward(omega, s.instrument);
  const double fr = forward(theta, s.eval_points[s.ridge_index].point);
  return u * residual(theta, s) - 0.5 * u * u + 0.5 * alpha * fr * fr;
}

// grad_theta F = u(x2) sum_k c_k grad f(x_k) + alpha f(x_r) grad f(x_r);
// the ridge term folds into eval point r's coefficient.
static void grad_theta_into(const NetworkState& theta, const NetworkState& omega,
                            const Sample& s, double alpha, std::span<double> out,
                            std::span<double> scratch) {
  const double u = forward(omega, s.instrument);
  const double fr = forward(theta, s.eval_points[s.ridge_index].point);
  for (double& v : out) v = 0.0;
  for (int k = 0; k < static_cast<int>(s.eval_points.size()); ++k) {
    const WeightedPoint& p = s.eval_points[k];
    double c = u * p.coeff;
    if (k == s.ridge_index) c += alpha * fr;
    if (c == 0.0) continue;
    gradient_into(theta, p.point, scratch);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * scratch[i];
  }
}

// grad_omega F = (residual - u(x2)) grad u(x2).
static void grad_omega_into(const NetworkState& theta, const NetworkState& omega,
                            const Sample& s, std::span<double> out) {
  const double u = forward(omega, s.instrument);
  const double c = residual(theta, s) - u;
  gradient_into(omega, s.instrument, out);
  for (double& v : out) v *= c;
}

std::vector<double> grad_theta(const NetworkState& theta, const NetworkState& omega,
                               const Sample& s, double alpha) {
  check_sample(theta, omega, s);
  std::vector<double> out(theta.n_weights()), scratch(theta.n_weights());
  grad_theta_into(theta, omega, s, alpha, out, scratch);
  return out;
}

std::vector<double> grad_omega(const NetworkState& theta, const NetworkState& omega,
                               const Sample& s) {
  check_sample(theta, omega, s);
  std::vector<double> out(omega.n_weights());
  grad_omega_into(theta, omega, s, out);
  return out;
}

static void check_game_config(const GameConfig& c) {
  if (c.iterations < 1) fail_config("game: iterations must be >= 1, got %lld", c.iterations);
  if (!(c.eta >= 0.0) || !std::isfinite(c.eta))
    fail_config("game: eta must be finite and >= 0, got %g", c.eta);
  if (!(c.alpha >= 0.0) || !std::isfinite(c.alpha))
    fail_config("game: alpha must be finite and >= 0, got %g", c.alpha);
  if (c.snapshot_stride < 0) fail_config("game: snapshot_stride must be >= 0");
  if (c.minibatch < 1) fail_config("game: minibatch must be >= 1, got %d", c.minibatch);
}

TrainTrace sgda_run(const NetworkState& theta_init, const NetworkState& omega_init,
                    const GameConfig& config, const SampleStream& stream) {
  check_game_config(config);
  if (!stream) fail_config("game: null sample stream");

  GameConfig cfg = config;
  if (cfg.snapshot_stride == 0)
    cfg.snapshot_stride = std::max<long long>(1, cfg.iterations / 512);

  TrainTrace trace;
  trace.config = cfg;
  trace.theta0 = theta_init;
  trace.omega0 = omega_init;
  trace.rows.reserve(static_cast<std::size_t>(cfg.iterations));

  NetworkState theta = theta_init;
  NetworkState omega = omega_init;
  const std::size_t np = theta.n_weights(), na = omega.n_weights();
  std::vector<double> gt(np), gt_acc(np), scratch(np), go(na), go_acc(na);
  Sample s;

  for (long long t = 1; t <= cfg.iterations; ++t) {
    double payoff_acc = 0.0;
    for (double& v : gt_acc) v = 0.0;
    for (double& v : go_acc) v = 0.0;
    for (int b = 0; b < cfg.minibatch; ++b) {
      if (!stream(s)) fail_runtime("game: sample stream exhausted at iteration %lld", t);
      check_sample(theta, omega, s);
      payoff_acc += payoff(theta, omega, s, cfg.alpha);
      grad_theta_into(theta, omega, s, cfg.alpha, gt, scratch);
      grad_omega_into(theta, omega, s, go);
      for (std::size_t i = 0; i < np; ++i) gt_acc[i] += gt[i];
      for (std::size_t i = 0; i < na; ++i) go_acc[i] += go[i];
    }
    const double inv_b = 1.0 / cfg.minibatch;
    payoff_acc *= inv_b;
    for (double& v : gt_acc) v *= inv_b;
    for (double& v : go_acc) v *= inv_b;

    const double gt_norm = std::sqrt(sq_norm(gt_acc));
    const double go_norm = std::sqrt(sq_norm(go_acc));
    if (!std::isfinite(gt_norm) || !std::isfinite(go_norm) || !std::isfinite(payoff_acc))
      fail_runtime("game: non-finite payoff or gradient at iteration %lld", t);

    trace.rows.push_back({t, payoff_acc, gt_norm, go_norm,
                          std::sqrt(sq_distance(theta.weights, theta_init.weights)),
                          std::sqrt(sq_distance(omega.weights, omega_init.weights))});
    if (t % cfg.snapshot_stride == 0)
      trace.snapshots.push_back({t, theta.weights, omega.weights});

    // Simultaneous update: both gradients were taken at (theta_t, omega_t).
    for (std::size_t i = 0; i < np; ++i) theta.weights[i] -= cfg.eta * gt_acc[i];
    for (std::size_t i = 0; i < na; ++i) omega.weights[i] += cfg.eta * go_acc[i];
    project_in_place(theta);
    project_in_place(omega);
  }

  trace.theta_final = std::move(theta);
  trace.omega_final = std::move(omega);
  log_debug("sgda_run: %lld iterations, %zu snapshots, final payoff %g",
            cfg.iterations, trace.snapshots.size(),
            trace.rows.empty() ? 0.0 : trace.rows.back().payoff);
  return trace;
}

AveragedEstimator::AveragedEstimator(NetworkState base,
                                     std::vector<std::vector<double>> snapshot_weights)
    : base_(std::move(base)), snapshot_weights_(std::move(snapshot_weights)) {
  if (snapshot_weights_.empty()) fail_config("averaged estimator: no snapshots");
  for (const auto& w : snapshot_weights_)
    if (w.size() != base_.n_weights())
      fail_config("averaged estimator: snapshot size %zu, expected %zu", w.size(),
                  base_.n_weights());
}

double AveragedEstimator::predict(std::span<const double> x) const {
  double acc = 0.0;
  for (const auto& w : snapshot_weights_) acc += forward_with(base_, w, x);
  return acc / static_cast<double>(snapshot_weights_.size());
}

NetworkState AveragedEstimator::materialize(std::size_t i) const {
  if (i >= snapshot_weights_.size())
    fail_config("averaged estimator: snapshot %zu out of range", i);
  NetworkState out = base_;
  out.weights = snapshot_weights_[i];
  return out;
}

AveragedEstimator average_estimator(const TrainTrace& trace) {
  if (trace.snapshots.empty()) fail_config("average_estimator: trace has no snapshots");
  std::vector<std::vector<double>> w;
  w.reserve(trace.snapshots.size());
  for (const SnapshotRow& row : trace.snapshots) w.push_back(row.theta_weights);
  return AveragedEstimator(trace.theta0, std::move(w));
}

NetworkState materialize_snapshot(const TrainTrace& trace, std::size_t i, bool theta_player) {
  if (i >= trace.snapshots.size())
    fail_config("trace: snapshot %zu out of range (have %zu)", i, trace.snapshots.size());
  NetworkState out = theta_player ? trace.theta0 : trace.omega0;
  out.weights = theta_player ? trace.snapshots[i].theta_weights
                             : trace.snapshots[i].omega_weights;
  return out;
}

}  // namespace asem
