#pragma once

// Spectral Recursive Grouping: bottom-up reconstruction of a latent tree
// from pairwise second moments of the observed leaves, driven by quartet
// tests that can only rule merges out.

#include <array>
#include <atomic>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spectree/latent_tree.hpp"
#include "spectree/quartet.hpp"
#include "spectree/tree_model.hpp"

namespace spectree {

// Second-moment matrices for every unordered pair of observed leaves.
class MomentProvider {
 public:
  enum class Source { population, empirical };

  MomentProvider() = default;
  // `pairs` holds E[a b^T] for each sorted pair (a, b).
  MomentProvider(Source source, std::vector<NodeId> leaves, std::map<LeafPair, Matrix> pairs);

  static MomentProvider from_population(const PopulationMoments& moments,
                                        const std::vector<NodeId>& leaves);

  Source source() const { return source_; }
  const std::vector<NodeId>& leaves() const { return leaves_; }
  const std::map<LeafPair, Matrix>& pairs() const { return pairs_; }
  // Sigma_{x,y} oriented as E[x y^T].
  Matrix get(NodeId x, NodeId y) const;
  const Matrix& stored(LeafPair p) const;

  // Every pair present and finite; throws otherwise.
  void validate() const;

 private:
  Source source_ = Source::population;
  std::vector<NodeId> leaves_;
  std::map<LeafPair, Matrix> pairs_;
};

struct ThresholdTable {
  enum class Mode { per_pair_formula, global_uniform };

  Mode mode = Mode::global_uniform;
  std::map<LeafPair, double> widths;

  double width(NodeId x, NodeId y) const;
  static ThresholdTable uniform(const std::vector<NodeId>& leaves, double delta);
  // Complete over the leaves and non-negative (+infinity allowed).
  void validate(const std::vector<NodeId>& leaves) const;
};

// Quartet tests over globally fixed moments and widths. Results depend only
// on the unordered set of four leaves, so they are memoized on that key.
class QuartetOracle {
 public:
  QuartetOracle(const MomentProvider& moments, const ThresholdTable& thresholds, std::size_t k,
                bool memoize = true);

  // Safe to call concurrently.
  QuartetResult test(NodeId a, NodeId b, NodeId c, NodeId d);
  QuartetEvaluation evaluate(NodeId a, NodeId b, NodeId c, NodeId d) const;

  // sigma_k(Sigma_{x,y}), computed once per pair.
  double sigma_k(NodeId x, NodeId y) const;
  std::size_t k() const { return k_; }

  std::size_t tests_evaluated() const { return evaluated_.load(); }
  std::size_t cache_hits() const { return hits_.load(); }
  // Evaluated tests that returned a pairing rather than abstaining.
  std::size_t tests_resolved() const { return resolved_.load(); }

 private:
  QuartetSpectra spectra_for(std::array<NodeId, 4> sorted) const;

  std::size_t k_;
  bool memoize_;
  std::map<LeafPair, std::vector<double>> spectra_;
  std::map<LeafPair, double> widths_;
  mutable std::shared_mutex mutex_;
  std::map<std::array<NodeId, 4>, QuartetResult> memo_;
  std::atomic<std::size_t> evaluated_{0};
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> resolved_{0};
};

// Working set R, rooted subtrees T[u] (as child lists) and leaf sets L[u].
// Child lists and leaf sets are retained for nodes that have left R.
struct ReconstructionState {
  std::vector<NodeId> working_set;  // ascending
  std::map<NodeId, std::vector<NodeId>> children;
  std::map<NodeId, std::vector<NodeId>> leaf_sets;  // ascending
  std::set<NodeId> observed;
  NodeId next_hidden_id = 0;

  static ReconstructionState initial(const std::vector<NodeId>& leaves);

  bool is_leaf(NodeId u) const { return observed.count(u) > 0; }
  const std::vector<NodeId>& leaves_of(NodeId u) const { return leaf_sets.at(u); }
  const std::vector<NodeId>& children_of(NodeId u) const { return children.at(u); }
  std::vector<NodeId> subtree_nodes(NodeId u) const;

  // Subtrees of R are disjoint and their leaf sets partition the leaves.
  // Throws DefectError otherwise.
  void check_invariants() const;
};

struct MergeableResult {
  bool mergeable = true;
  // (x, y, x', y') whose test split x from y, when not mergeable.
  std::optional<std::array<NodeId, 4>> witness;
};

MergeableResult mergeable(std::span<const NodeId> working_set, const ReconstructionState& state,
                          NodeId u, NodeId v, QuartetOracle& oracle);

enum class Relation { siblings, u_parent_of_v, v_parent_of_u };
std::string to_string(Relation r);

struct RelationshipResult {
  Relation relation = Relation::siblings;
  // Neither parenthood was refuted and the default branch was taken.
  bool defaulted = false;
};

RelationshipResult relationship(std::span<const NodeId> working_set,
                                const ReconstructionState& state, NodeId u, NodeId v,
                                QuartetOracle& oracle);

// Undirected output tree: leaves carry the original labels, hidden nodes
// carry synthetic ids.
struct LearnedTree {
  std::set<NodeId> leaves;
  std::set<NodeId> hidden;
  std::vector<std::pair<NodeId, NodeId>> edges;  // (parent, child) in the rooted output
  NodeId root = -1;

  std::map<NodeId, std::vector<NodeId>> adjacency() const;
  // Rooted parenthesised form, e.g. "((0,1),2,3);". Hidden nodes are unlabeled.
  std::string to_newick() const;
  // Connected, acyclic, leaves exactly the observed labels with degree 1.
  bool well_formed() const;

  static LearnedTree from_latent(const LatentTree& tree);
};

struct SrgOptions {
  bool memoize = true;
  bool verify_invariants = true;
  // Ignore candidate pairs whose best sigma_k falls below this value.
  std::optional<double> min_correlation;
};

struct IterationRecord {
  NodeId u = -1;
  NodeId v = -1;
  double score = 0.0;
  Relation relation = Relation::siblings;
  NodeId created = -1;  // new hidden node for siblings, else -1
};

struct SrgStats {
  std::size_t iterations = 0;
  std::size_t mergeable_calls = 0;
  std::size_t quartet_tests = 0;
  std::size_t cache_hits = 0;
  std::size_t resolved_quartets = 0;
  std::size_t invariant_checks = 0;
  std::size_t defaulted_relationships = 0;
};

struct SrgResult {
  std::optional<LearnedTree> tree;  // empty on failure
  std::string failure_reason;
  SrgStats stats;
  std::vector<IterationRecord> trace;
  std::vector<std::string> warnings;

  bool failed() const { return !tree.has_value(); }
};

// Returns failure as a value. Throws DefectError if a loop invariant breaks
// while options.verify_invariants is set.
SrgResult spectral_recursive_grouping(const MomentProvider& moments,
                                      const ThresholdTable& thresholds,
                                      const std::vector<NodeId>& leaves, std::size_t k,
                                      const SrgOptions& options = {});

struct TreeComparison {
  bool isomorphic = false;
  std::size_t rf_distance = 0;
};

// Nontrivial leaf bipartitions induced by the edges of a tree, each stored
// as the side that excludes the smallest leaf.
std::set<std::vector<NodeId>> leaf_bipartitions(const std::map<NodeId, std::vector<NodeId>>& adjacency,
                                                const std::set<NodeId>& leaves);

// Robinson-Foulds comparison. Throws LabelMismatchError on different leaf sets.
TreeComparison compare_trees(const LearnedTree& a, const LatentTree& b);
TreeComparison compare_trees(const LearnedTree& a, const LearnedTree& b);

}  // namespace spectree
