#include <algorithm>
#include <limits>

#include <gtest/gtest.h>

#include "spectree/errors.hpp"
#include "spectree/latent_tree.hpp"
#include "spectree/srg.hpp"
#include "spectree/tree_model.hpp"
#include "test_support.hpp"

using namespace spectree;

namespace {

struct Fixture {
  LinearTreeModel model;
  MomentProvider moments;
  std::vector<NodeId> leaves;
};

Fixture population(const LatentTree& tree, Family family, std::size_t k, std::size_t d,
                   std::uint64_t seed) {
  Fixture f;
  f.model = attach_parameters(tree, family, k, d, {}, seed);
  f.leaves = f.model.tree.observed();
  f.moments = MomentProvider::from_population(population_moments(f.model), f.leaves);
  return f;
}

SrgResult run(const Fixture& f, double delta, SrgOptions opts = {}) {
  return spectral_recursive_grouping(f.moments, ThresholdTable::uniform(f.leaves, delta), f.leaves,
                                     f.model.k, opts);
}

// Four leaves with the split {0,2}|{1,3}.
LatentTree crossed_quartet() {
  LatentTree t;
  for (int i = 0; i < 4; ++i) t.add_node(NodeKind::observed);
  const NodeId h = t.add_node(NodeKind::hidden);
  const NodeId g = t.add_node(NodeKind::hidden);
  t.add_edge(h, 0);
  t.add_edge(h, 2);
  t.add_edge(g, 1);
  t.add_edge(g, 3);
  t.add_edge(h, g);
  t.set_root(h);
  return t;
}

}  // namespace

TEST(Mergeable, TwoNodeWorkingSetIsAlwaysMergeable) {
  const auto f = population(spectree::testing::two_cherry_quartet(), Family::gaussian, 1, 2, 1);
  QuartetOracle oracle(f.moments, ThresholdTable::uniform(f.leaves, 0.0), 1);
  const auto state = ReconstructionState::initial(f.leaves);
  const std::vector<NodeId> r{0, 2};
  EXPECT_TRUE(mergeable(r, state, 0, 2, oracle).mergeable);
}

TEST(Mergeable, CherryIsMergeableAndCrossPairHasWitness) {
  const auto f = population(spectree::testing::two_cherry_quartet(), Family::gaussian, 1, 2, 1);
  QuartetOracle oracle(f.moments, ThresholdTable::uniform(f.leaves, 0.0), 1);
  const auto state = ReconstructionState::initial(f.leaves);
  const auto& r = state.working_set;

  EXPECT_TRUE(mergeable(r, state, 0, 1, oracle).mergeable);
  EXPECT_TRUE(mergeable(r, state, 2, 3, oracle).mergeable);

  const auto bad = mergeable(r, state, 0, 2, oracle);
  EXPECT_FALSE(bad.mergeable);
  ASSERT_TRUE(bad.witness.has_value());
  auto w = *bad.witness;
  std::sort(w.begin(), w.end());
  EXPECT_EQ(w, (std::array<NodeId, 4>{0, 1, 2, 3}));
}

TEST(Relationship, TwoLeavesAreSiblings) {
  const auto f = population(spectree::testing::two_cherry_quartet(), Family::gaussian, 1, 2, 1);
  QuartetOracle oracle(f.moments, ThresholdTable::uniform(f.leaves, 0.0), 1);
  const auto state = ReconstructionState::initial(f.leaves);
  const auto rel = relationship(state.working_set, state, 0, 1, oracle);
  EXPECT_EQ(rel.relation, Relation::siblings);
  EXPECT_FALSE(rel.defaulted);
  EXPECT_EQ(to_string(Relation::siblings), "siblings");
}

TEST(Srg, ThreeLeafStar) {
  const auto f = population(spectree::testing::star(3), Family::gaussian, 2, 3, 5);
  const auto r = run(f, 0.0);
  ASSERT_FALSE(r.failed()) << r.failure_reason;
  EXPECT_EQ(r.stats.iterations, 2u);
  EXPECT_EQ(r.tree->hidden.size(), 1u);
  EXPECT_EQ(r.tree->to_newick(), "(1,2,3);");
  EXPECT_TRUE(compare_trees(*r.tree, f.model.tree).isomorphic);
}

TEST(Srg, FiveLeafStarStaysAStar) {
  const auto f = population(spectree::testing::star(5), Family::gaussian, 1, 2, 9);
  const auto r = run(f, 0.0);
  ASSERT_FALSE(r.failed()) << r.failure_reason;
  EXPECT_EQ(r.tree->hidden.size(), 1u);
  EXPECT_TRUE(compare_trees(*r.tree, f.model.tree).isomorphic);
}

TEST(Srg, RecoversPopulationTrees) {
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    const std::size_t k = 1 + seed % 3;
    const auto family = (k >= 2 && seed % 2) ? Family::discrete : Family::gaussian;
    const auto f = population(generate_tree(8, 4, seed), family, k, k + 1, seed);
    const auto r = run(f, 0.0);
    ASSERT_FALSE(r.failed()) << "seed " << seed << ": " << r.failure_reason;
    const auto cmp = compare_trees(*r.tree, f.model.tree);
    EXPECT_TRUE(cmp.isomorphic) << "seed " << seed << " got " << r.tree->to_newick();
    EXPECT_EQ(cmp.rf_distance, 0u);
    EXPECT_EQ(r.stats.iterations, 7u);
    EXPECT_EQ(r.stats.invariant_checks, 7u);
    EXPECT_TRUE(r.tree->well_formed());
  }
}

TEST(Srg, InfiniteWidthsStillTerminate) {
  const auto f = population(generate_tree(9, 4, 3), Family::gaussian, 1, 2, 3);
  const auto r = run(f, std::numeric_limits<double>::infinity());
  ASSERT_FALSE(r.failed()) << r.failure_reason;
  EXPECT_EQ(r.stats.iterations, 8u);
  EXPECT_EQ(r.stats.resolved_quartets, 0u);
  EXPECT_TRUE(r.tree->well_formed());
  EXPECT_EQ(r.tree->leaves.size(), 9u);
}

TEST(Srg, MemoizationDoesNotChangeTheOutput) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto f = population(generate_tree(7, 4, seed), Family::gaussian, 1, 1, seed);
    // A nonzero width makes some tests abstain, exercising both paths.
    const double delta = 0.002 * static_cast<double>(seed % 5);
    SrgOptions on, off;
    off.memoize = false;
    const auto a = run(f, delta, on);
    const auto b = run(f, delta, off);
    ASSERT_EQ(a.failed(), b.failed()) << "seed " << seed;
    EXPECT_EQ(b.stats.cache_hits, 0u);
    EXPECT_LE(a.stats.quartet_tests, b.stats.quartet_tests);
    if (!a.failed()) {
      EXPECT_EQ(a.tree->edges, b.tree->edges) << "seed " << seed;
      EXPECT_EQ(a.tree->root, b.tree->root);
    }
  }
}

TEST(Srg, Deterministic) {
  const auto f = population(generate_tree(10, 4, 21), Family::gaussian, 2, 2, 21);
  const auto a = run(f, 0.0);
  const auto b = run(f, 0.0);
  ASSERT_FALSE(a.failed());
  EXPECT_EQ(a.tree->to_newick(), b.tree->to_newick());
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].u, b.trace[i].u);
    EXPECT_EQ(a.trace[i].v, b.trace[i].v);
    EXPECT_EQ(a.trace[i].relation, b.trace[i].relation);
  }
}

TEST(Srg, HiddenIdsStartAfterLargestLeaf) {
  const auto f = population(spectree::testing::two_cherry_quartet(), Family::gaussian, 1, 1, 2);
  const auto r = run(f, 0.0);
  ASSERT_FALSE(r.failed());
  ASSERT_EQ(r.trace.size(), 3u);
  EXPECT_EQ(r.trace.front().created, 4);
  EXPECT_TRUE(compare_trees(*r.tree, spectree::testing::two_cherry_quartet()).isomorphic);
}

TEST(Srg, MinCorrelationCanBlockEveryMerge) {
  const auto f = population(generate_tree(6, 4, 4), Family::gaussian, 1, 1, 4);
  SrgOptions opts;
  opts.min_correlation = 1e6;
  const auto r = run(f, 0.0, opts);
  EXPECT_TRUE(r.failed());
  EXPECT_FALSE(r.failure_reason.empty());
}

TEST(Srg, RejectsBadInput) {
  const auto f = population(generate_tree(6, 4, 4), Family::gaussian, 1, 1, 4);
  auto fewer = f.leaves;
  fewer.pop_back();
  EXPECT_THROW(spectral_recursive_grouping(f.moments, ThresholdTable::uniform(f.leaves, 0.0), fewer, 1),
               LabelMismatchError);
  const std::vector<NodeId> two{0, 1};
  EXPECT_THROW(spectral_recursive_grouping(f.moments, ThresholdTable::uniform(f.leaves, 0.0), two, 1),
               ConfigError);
  EXPECT_THROW(ThresholdTable::uniform(f.leaves, -1.0).validate(f.leaves), DomainError);
}

TEST(CompareTrees, SelfAndCrossedQuartets) {
  const auto a = LearnedTree::from_latent(spectree::testing::two_cherry_quartet());
  const auto b = LearnedTree::from_latent(crossed_quartet());
  const auto same = compare_trees(a, spectree::testing::two_cherry_quartet());
  EXPECT_TRUE(same.isomorphic);
  EXPECT_EQ(same.rf_distance, 0u);
  const auto diff = compare_trees(a, b);
  EXPECT_FALSE(diff.isomorphic);
  EXPECT_EQ(diff.rf_distance, 2u);

  // A star has no nontrivial splits; one missing split against a resolved quartet.
  const auto star = LearnedTree::from_latent(spectree::testing::star(4));
  LatentTree relabeled;
  for (int i = 0; i < 4; ++i) relabeled.add_node(NodeKind::observed);
  const NodeId h = relabeled.add_node(NodeKind::hidden);
  for (int i = 0; i < 4; ++i) relabeled.add_edge(h, i);
  relabeled.set_root(h);
  EXPECT_EQ(compare_trees(a, relabeled).rf_distance, 1u);
  EXPECT_THROW(compare_trees(a, star), LabelMismatchError);
}

TEST(CompareTrees, BipartitionsOfCaterpillar) {
  const auto t = LearnedTree::from_latent(spectree::testing::two_cherry_quartet());
  const auto splits = leaf_bipartitions(t.adjacency(), t.leaves);
  // Normalised to the side without the smallest leaf.
  EXPECT_EQ(splits, (std::set<std::vector<NodeId>>{{2, 3}}));
}

TEST(LearnedTree, NewickAndWellFormed) {
  const auto t = LearnedTree::from_latent(spectree::testing::two_cherry_quartet());
  EXPECT_EQ(t.to_newick(), "(0,1,(2,3));");
  EXPECT_TRUE(t.well_formed());
  LearnedTree broken = t;
  broken.edges.pop_back();
  EXPECT_FALSE(broken.well_formed());
}

TEST(ReconstructionState, InvariantsCatchCorruption) {
  auto s = ReconstructionState::initial({0, 1, 2, 3});
  EXPECT_NO_THROW(s.check_invariants());
  EXPECT_EQ(s.next_hidden_id, 4);
  s.working_set.push_back(99);
  EXPECT_THROW(s.check_invariants(), DefectError);
}

TEST(QuartetOracle, MemoCountsHits) {
  const auto f = population(spectree::testing::two_cherry_quartet(), Family::gaussian, 1, 2, 1);
  QuartetOracle oracle(f.moments, ThresholdTable::uniform(f.leaves, 0.0), 1);
  const auto first = oracle.test(0, 1, 2, 3);
  const auto second = oracle.test(3, 2, 1, 0);
  EXPECT_EQ(first, second);
  EXPECT_EQ(oracle.tests_evaluated(), 1u);
  EXPECT_EQ(oracle.cache_hits(), 1u);
  EXPECT_EQ(oracle.tests_resolved(), 1u);
  ASSERT_TRUE(first.has_value());
  EXPECT_EQ(*first, Pairing::of(LeafPair::of(0, 1), LeafPair::of(2, 3)));
  EXPECT_GT(oracle.sigma_k(0, 1), 0.0);
  EXPECT_EQ(oracle.sigma_k(0, 1), oracle.sigma_k(1, 0));
}
