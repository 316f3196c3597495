#pragma once

// Experiment plumbing: empirical moments, confidence widths, global width
// tuning, single runs and sweeps over the sample size.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spectree/quartet.hpp"
#include "spectree/srg.hpp"
#include "spectree/tree_model.hpp"

namespace spectree {

// Sigma_hat_{x,y} = X^T Y / N for every leaf pair.
MomentProvider empirical_moments(const SampleBatch& batch);

enum class DeltaMode { formula, global, fixed };

struct DeltaModeSpec {
  DeltaMode mode = DeltaMode::formula;
  double fixed_value = 0.0;

  // "formula", "global" or "fixed:<value>"; throws ConfigError otherwise.
  static DeltaModeSpec parse(const std::string& s);
  std::string to_string() const;
};

// Log-spaced candidate widths for global tuning.
struct DeltaGrid {
  double min = 1e-4;
  double max = 1.0;
  std::size_t points = 25;

  void validate() const;
  std::vector<double> values() const;
};

struct PairWidth {
  LeafPair pair;
  PairPlugins plugins;
  double t = 0.0;
  double delta = 0.0;
};

// Per-pair formula widths with the whole-tree log factor.
std::vector<PairWidth> formula_widths(const SampleBatch& batch, double eta);

struct TuningPoint {
  double delta = 0.0;
  bool failed = true;
  // Every quartet test abstained, so the output reflects tie-breaking only.
  bool uninformative = false;
  std::optional<LearnedTree> tree;
};

struct TuningResult {
  std::optional<double> delta;  // empty when every grid point failed
  std::size_t plateau_first = 0;
  std::size_t plateau_length = 0;
  std::vector<TuningPoint> trace;
};

// Runs reconstruction at every grid width, finds the longest run of
// consecutive points with the same topology and returns the grid point in
// the middle of it, preferring the larger width on ties. Failed points and
// points where no quartet test resolved a pairing never join a plateau.
TuningResult tune_global_delta(const MomentProvider& moments, const std::vector<NodeId>& leaves,
                               std::size_t k, const std::vector<double>& grid,
                               const SrgOptions& options = {});

struct ThresholdBuild {
  ThresholdTable table;
  DeltaModeSpec requested;
  std::vector<PairWidth> pair_widths;  // formula inputs, when used
  std::optional<TuningResult> tuning;
  bool fell_back_to_formula = false;
};

// `batch` may be null for population moments; formula widths are then zero.
ThresholdBuild build_thresholds(const SampleBatch* batch, const MomentProvider& moments,
                                std::size_t k, double eta, const DeltaModeSpec& mode,
                                const DeltaGrid& grid, const SrgOptions& options = {});

struct RunConfig {
  std::size_t n_samples = 0;  // 0 means exact population moments
  double eta = 0.1;
  DeltaModeSpec delta_mode;
  DeltaGrid grid;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  std::optional<double> min_correlation;
  bool memoize = true;
  bool verify_invariants = true;

  void validate() const;
};

struct RunReport {
  bool recovered = false;
  std::size_t rf_distance = 0;
  bool failed = false;
  std::string failure_reason;
  std::size_t iterations = 0;
  double seconds = 0.0;

  std::size_t n_leaves = 0;
  std::size_t k = 0;
  std::size_t n_samples = 0;
  std::uint64_t sample_seed = 0;

  std::string threshold_mode;
  double delta_min = 0.0;
  double delta_max = 0.0;
  double delta_mean = 0.0;
  std::optional<double> tuned_delta;
  bool fell_back_to_formula = false;

  std::optional<ModelDiagnostics> diagnostics;
  SrgStats stats;
  std::optional<LearnedTree> tree;

  // Stable field order. Timing is omitted when include_timing is false.
  std::string to_json(bool include_timing = true) const;
};

RunReport run_experiment(const LinearTreeModel& model, const RunConfig& config,
                         const std::optional<ModelDiagnostics>& diagnostics = std::nullopt);

struct SweepRow {
  std::size_t n_samples = 0;
  std::size_t trial = 0;
  bool recovered = false;
  std::size_t rf_distance = 0;
  double seconds = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // ordered by (N, trial)
  std::vector<std::pair<std::size_t, double>> recovery_rates;  // per N, in input order

  std::string to_csv() const;
};

// Trials run on config.jobs worker threads; every trial gets a seed derived
// from (config.seed, N, trial) so results do not depend on scheduling.
SweepResult run_sweep(const LinearTreeModel& model, const RunConfig& config,
                      const std::vector<std::size_t>& n_values, std::size_t trials);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b);

// Quartet test on four leaves of a batch with single-quartet widths.
struct QuartetRun {
  QuartetSpectra spectra;
  QuartetEvaluation evaluation;
  std::array<PairWidth, 6> widths;
};
QuartetRun quartet_from_batch(const SampleBatch& batch, std::array<NodeId, 4> labels,
                              std::size_t k, double delta_conf);

std::string moments_to_json(const MomentProvider& moments);
std::string thresholds_to_json(const ThresholdBuild& build);
std::string diagnostics_to_json(const ModelDiagnostics& diag);

}  // namespace spectree
