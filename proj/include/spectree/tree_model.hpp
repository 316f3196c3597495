#pragma once

// Linear latent tree models: parameters, exact population moments,
// ancestral sampling and the model-level diagnostics (non-redundancy,
// correlation strength, sample-size bound).

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spectree/latent_tree.hpp"
#include "spectree/spectral_core.hpp"

namespace spectree {

enum class Family { gaussian, discrete };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

// A LatentTree with linear conditional means E[child | parent] = M parent.
//
// edge_map[c] is A_{c|parent} (k x k) for a hidden child and C_{c|parent}
// (d x k) for an observed child; it is empty for the root. In the discrete
// family these are column-stochastic conditional probability tables and
// root_moment = diag(root marginal). In the Gaussian family every variable
// is zero-mean, root_moment is the root covariance and noise_cov[c] is the
// covariance of the additive noise on child c.
struct LinearTreeModel {
  LatentTree tree;
  Family family = Family::gaussian;
  std::size_t k = 1;
  std::size_t d = 1;
  Matrix root_moment;
  std::vector<Matrix> edge_map;
  std::vector<Matrix> noise_cov;

  std::size_t dim(NodeId u) const { return tree.is_observed(u) ? d : k; }
  // Shapes, finiteness and family-specific constraints; throws on failure.
  void validate() const;
};

struct ConditionMargins {
  double rho_cap = 0.95;  // upper bound imposed on rho_max
  double min_sv = 0.3;    // lower bound on sigma_k of every edge map
};

// Draws parameters for `tree` until the model satisfies all four conditions
// with the requested margins. Throws GenerationError after the retry budget.
LinearTreeModel attach_parameters(const LatentTree& tree, Family family, std::size_t k,
                                  std::size_t d, const ConditionMargins& margins,
                                  std::uint64_t seed);

struct PopulationMoments {
  // E[x y^T] keyed by the sorted pair, oriented as (pair.a, pair.b).
  std::map<LeafPair, Matrix> pair_moments;
  // E[u u^T] for every node.
  std::vector<Matrix> node_second_moments;

  // E[x y^T] in the requested orientation.
  Matrix pair(NodeId x, NodeId y) const;
};

// Exact second moments. Throws NumericError when some E[hh^T] is singular.
PopulationMoments population_moments(const LinearTreeModel& model);

// E[u v^T] for arbitrary nodes (hidden ones included).
Matrix cross_moment(const LinearTreeModel& model, const PopulationMoments& moments, NodeId u,
                    NodeId v);

// Product of edge maps along the directed path from ancestor `a` down to `v`.
Matrix path_product(const LinearTreeModel& model, NodeId a, NodeId v);

struct SampleBatch {
  std::vector<NodeId> leaves;  // ascending
  std::vector<Matrix> data;    // data[i] is N x dim for leaves[i]
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;

  const Matrix& leaf(NodeId x) const;
  // Throws NumericError on non-finite values or inconsistent row counts.
  void validate() const;
};

// Ancestral sampling; discrete states are emitted as coordinate vectors.
SampleBatch sample(const LinearTreeModel& model, std::size_t n, std::uint64_t seed);

// log det_k of the cross moment, whitened on hidden endpoints only.
double mu_from_moments(NodeKind kind_u, NodeKind kind_v, const Matrix& uu, const Matrix& uv,
                       const Matrix& vv, std::size_t k);
double mu_metric(const LinearTreeModel& model, const PopulationMoments& moments, NodeId u,
                 NodeId v);

// det(E[hg^T])^2 / (det E[hh^T] det E[gg^T]) for two hidden nodes.
double rho_squared(const LinearTreeModel& model, const PopulationMoments& moments, NodeId h,
                   NodeId g);

struct DiagnosticsOptions {
  std::size_t mc_draws = 100000;      // Gaussian only: draws used for M
  std::uint64_t mc_seed = 20111212;
};

struct ModelDiagnostics {
  double rho_max = 0.0;
  std::pair<NodeId, NodeId> rho_argmax{-1, -1};
  double gamma_min = 0.0;
  NodeId gamma_argmin = -1;
  double gamma_max = 0.0;

  double B = 0.0;
  double M = 0.0;
  double t = 0.0;
  double d_bar = 0.0;          // largest per-pair effective dimension
  bool M_is_empirical = false; // true for unbounded (Gaussian) leaves
  double B_monte_carlo = 0.0;  // Gaussian cross-check of B from the same draws
  double B_std_error = 0.0;
  std::size_t mc_draws = 0;
  std::uint64_t mc_seed = 0;

  double n_required = 0.0;  // +infinity when a condition is violated
  double eps_min = 0.0;
  double epsilon = 0.0;
  double theta = 0.0;
  double varsigma = 0.0;

  bool rho_violation = false;
  bool gamma_violation = false;
};

ModelDiagnostics model_diagnostics(const LinearTreeModel& model, double eta,
                                   const DiagnosticsOptions& options = {});

// Sample-size requirement of the reconstruction guarantee.
double required_samples(std::size_t k, double B, double M, double t, double gamma_min,
                        double gamma_max, double rho_max);

// Exact enumeration of the correlation-condition max-min quantity.
double gamma_min_of(const LatentTree& tree, const PopulationMoments& moments, std::size_t k,
                    NodeId* argmin = nullptr);

struct ConditionCheck {
  bool pass = false;
  double witness = 0.0;
  std::string detail;
};

struct ConditionReport {
  ConditionCheck structure;       // witness: number of violations
  ConditionCheck linear_means;    // witness: max column-sum error (discrete) or 0
  ConditionCheck rank;            // witness: smallest sigma_k over E[hh^T], A, C
  ConditionCheck non_redundancy;  // witness: rho_max
  ConditionCheck correlation;     // witness: gamma_min

  bool all_pass() const {
    return structure.pass && linear_means.pass && rank.pass && non_redundancy.pass &&
           correlation.pass;
  }
};

// Never throws for model-content problems; they are reported as failures.
ConditionReport check_conditions(const LinearTreeModel& model);

}  // namespace spectree
