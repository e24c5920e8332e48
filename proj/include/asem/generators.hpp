#pragma once
// Synthetic data designs with known ground truth.
//
// All emitted points have euclidean norm <= 1 (the networks' domain), all
// noise is gaussian truncated at three standard deviations (bounded
// residuals), and every generator is a pure function of (design, n, seed).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "asem/game.hpp"

namespace asem {

enum class LinkKind { linear, sigmoid, sine };

// Scalar structural link applied to the mean coordinate of the emitted
// point.  Bounded by `scale` on [-1, 1] for every kind.
double link_eval(LinkKind kind, double scale, double freq, double u);
LinkKind link_from_string(const std::string& s);
std::string link_to_string(LinkKind kind);

// Instrumental-variable design:
//   Z ~ U[-1,1]^d (emitted as Z/sqrt(d)),
//   X_j = tanh(rho Z_j + sqrt(1-rho^2) e)  with shared confounder e,
//   Y = g0(X/sqrt(d)) + e + nu.
// The confounder e enters both X and Y, so E[Y | X] != g0; conditioning on
// Z restores E[Y - g0(X) | Z] = 0.
struct IvDesign {
  LinkKind link = LinkKind::sigmoid;
  double link_scale = 1.0;
  double link_freq = 1.0;        // sine only
  double rho = 0.5;              // instrument strength in [0, 1]
  double confounder_scale = 0.1; // e
  double outcome_noise = 0.1;    // nu
  int dim = 2;                   // instrument dimension
};

// Dynamic panel with additive unit effects:
//   Y_{i,t} = m(X_{i,t}) + effect_i + eps_{i,t},
//   X_{i,t} = tanh(0.5 X_{i,t-1} + 0.5 eps_{i,t-1} + zeta_{i,t}).
// First-differencing removes effect_i exactly; each sample carries the two
// eval points u_{t-1} = [Y_{t-1}, X_t]/c and u_{t-2} = [Y_{t-2}, X_{t-1}]/c
// with coefficients +1/-1, instrument u_{t-2}, and target Delta Y_t.  The
// regressor reacts to lagged shocks, so the differenced residual is
// correlated with u_{t-1} but mean-zero given the instrument.
struct PanelDesign {
  LinkKind link = LinkKind::sigmoid;
  double link_scale = 1.0;
  double link_freq = 1.0;
  double effect_scale = 1.0;  // sd of the unit fixed effects
  double noise_scale = 0.1;   // sd of eps
  int units = 100;            // N
  int periods = 4;            // observed periods per unit, >= 3
};

// Finite-state design on embedded grids.  joint_pmf[i][j] = P(X1=i, X2=j on
// the index level); grid rows are the embedded points (norm <= 1) fed to
// the networks; f_true holds the structural values on the X1 grid.
struct DiscreteDesign {
  std::vector<std::vector<double>> joint_pmf;
  std::vector<std::vector<double>> x1_grid;
  std::vector<std::vector<double>> x2_grid;
  std::vector<double> f_true;
};

void validate_design(const IvDesign& d);
void validate_design(const PanelDesign& d);
void validate_design(const DiscreteDesign& d);

std::vector<Sample> gen_iv(const IvDesign& design, long long n, std::uint64_t seed);
std::vector<Sample> gen_panel(const PanelDesign& design, std::uint64_t seed);
std::vector<Sample> gen_discrete(const DiscreteDesign& design, long long n,
                                 std::uint64_t seed, double target_noise = 0.0);

// Structural truth on emitted (scaled) points, for residual diagnostics.
std::function<double(std::span<const double>)> structural_truth(const IvDesign& design);
std::function<double(std::span<const double>)> structural_truth(const PanelDesign& design);

// Scale factor c applied to the raw panel points [Y, X].
double panel_point_scale(const PanelDesign& design);

// Endless streams for the training loop (never exhaust).
SampleStream stream_iv(const IvDesign& design, std::uint64_t seed);
SampleStream stream_discrete(const DiscreteDesign& design, std::uint64_t seed,
                             double target_noise = 0.0);
// Finite stream over a fixed vector (copied); exhausts at the end.
SampleStream stream_from_vector(std::vector<Sample> samples);

struct MomentRow {
  std::string name;
  double mean = 0.0;
  double std_err = 0.0;
};

// Sample moments of residual(truth) * h(instrument) for each test function;
// all should be zero to within a few standard errors when the truth and the
// conditional-mean restriction hold.
std::vector<MomentRow> moment_check(
    std::span<const Sample> samples,
    const std::function<double(std::span<const double>)>& truth,
    std::span<const std::pair<std::string, std::function<double(std::span<const double>)>>>
        test_functions);

// Smooth canned instance: half-circle embeddings on both grids, a gaussian
// coupling pmf with the given bandwidth (smaller = tighter dependence and
// slower singular value decay), and a two-harmonic structural truth.
DiscreteDesign make_smooth_discrete_design(int k1, int k2, double bandwidth,
                                           double truth_scale);

}  // namespace asem
