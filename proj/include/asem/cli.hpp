#pragma once
// Config-driven command layer behind the asem binary.
//
// Each command reads one JSON config file, applies the command-line
// overrides, and writes its outputs under the chosen directory.  Every
// emitted CSV and report embeds the config hash and the seed so a run can
// be reproduced from its artifacts alone.  Unknown config keys are errors.
//
// Exit codes: 0 success, 1 bad config or arguments, 2 runtime failure,
// 3 a hard invariant failed (audit mismatch, bound violations, identity
// breakage).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asem/diagnostics.hpp"
#include "asem/generators.hpp"
#include "asem/nn.hpp"

namespace asem {

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;  // --seed; replaces the config seed
                                      // (and any sweep seed list)
  std::string out_dir = ".";
  int workers = 0;                    // sweep parallelism; 0 = all cores
  bool json = false;                  // also dump experiment rows as JSON
};

// Shared shape of both players' networks; input dims come from the design
// except where noted.
struct NetworkSection {
  Arch arch = Arch::two_layer;
  int input_dim = 0;  // 0: derived from the design (audit requires explicit)
  int width = 64;
  int depth = 1;      // multi_layer only
  double radius = 1.0;
};

struct GameSection {
  double alpha = 0.1;
  double eta = 0.01;
  long long iterations = 1000;
  long long snapshot_stride = 0;  // 0: auto
  int minibatch = 1;
};

struct SamplesSection {
  long long n = 1000;
  double target_noise = 0.0;  // discrete designs only
};

enum class OracleMode { tikhonov, svd, truth };

struct OracleSection {
  OracleMode mode = OracleMode::tikhonov;
  double alpha = 0.1;      // tikhonov
  double beta = 1.0;       // truth
  double coeff_norm = 1.0; // truth
};

enum class ExperimentKind { convergence, consistency, linearization, regret, decomposition };

struct LinearizationSection {
  int input_dim = 4;
  double radius = 1.0;
  std::vector<int> widths = {64, 256, 1024, 4096};
  int draws = 2000;
};

struct DecompositionSection {
  std::vector<int> m_values = {64};
  long long iterations = 500;
  double eta = 0.05;
  double alpha = 0.1;
  double radius = 2.0;
  int batch = 32;
  double comparator_shift = 0.5;  // comparator distance as a radius fraction
  double target_noise = 0.1;
};

struct ExperimentSection {
  ExperimentKind kind = ExperimentKind::convergence;
  SweepSpec sweep;  // convergence and consistency; instance filled from the design
  RegretSpec regret;
  LinearizationSection linearization;
  DecompositionSection decomposition;
};

struct AuditSection {
  AuditSpec spec;
  NetworkSection theta;  // explicit input dims
  NetworkSection omega;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<IvDesign> iv;
  std::optional<PanelDesign> panel;
  std::optional<DiscreteDesign> discrete;
  std::optional<NetworkSection> network;
  std::optional<GameSection> game;
  std::optional<SamplesSection> samples;
  std::optional<OracleSection> oracle;
  std::optional<ExperimentSection> experiment;
  std::optional<AuditSection> audit;
  nlohmann::json doc;  // parsed document after overrides, hashed for stamping
};

// Strict parse; any unknown key or malformed value throws ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Hex digest of the canonical dump of the (post-override) document.
std::string config_hash(const RunConfig& config);

int run_simulate(const RunConfig& config, const CliOptions& opt);
int run_train(const RunConfig& config, const CliOptions& opt);
int run_oracle(const RunConfig& config, const CliOptions& opt);
int run_experiment(const RunConfig& config, const CliOptions& opt);
int run_audit(const RunConfig& config, const CliOptions& opt);

// Loads the config, applies overrides, dispatches, and maps exceptions to
// exit codes.  `command` is one of simulate|train|oracle|experiment|audit.
int run_cli(const std::string& command, const CliOptions& opt);

}  // namespace asem
