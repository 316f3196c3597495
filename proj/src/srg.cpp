#include "spectree/srg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <mutex>
#include <sstream>
#include <tuple>

#include "spectree/errors.hpp"

namespace spectree {

namespace {

std::string pair_name(LeafPair p) {
  return "(" + std::to_string(p.a) + "," + std::to_string(p.b) + ")";
}

std::vector<NodeId> without(std::span<const NodeId> set, NodeId a, NodeId b) {
  std::vector<NodeId> out;
  out.reserve(set.size());
  for (NodeId x : set) {
    if (x != a && x != b) out.push_back(x);
  }
  return out;
}

std::vector<NodeId> sorted_union(const std::vector<NodeId>& a, const std::vector<NodeId>& b) {
  std::vector<NodeId> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace

// ---------------------------------------------------------------- moments

MomentProvider::MomentProvider(Source source, std::vector<NodeId> leaves,
                               std::map<LeafPair, Matrix> pairs)
    : source_(source), leaves_(std::move(leaves)), pairs_(std::move(pairs)) {
  std::sort(leaves_.begin(), leaves_.end());
  if (std::adjacent_find(leaves_.begin(), leaves_.end()) != leaves_.end()) {
    throw ConfigError("repeated leaf label in moment provider");
  }
}

MomentProvider MomentProvider::from_population(const PopulationMoments& moments,
                                               const std::vector<NodeId>& leaves) {
  std::map<LeafPair, Matrix> pairs;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (std::size_t j = i + 1; j < leaves.size(); ++j) {
      const auto p = LeafPair::of(leaves[i], leaves[j]);
      pairs[p] = moments.pair(p.a, p.b);
    }
  }
  return MomentProvider(Source::population, leaves, std::move(pairs));
}

const Matrix& MomentProvider::stored(LeafPair p) const {
  const auto it = pairs_.find(p);
  if (it == pairs_.end()) throw ConfigError("no second moment for pair " + pair_name(p));
  return it->second;
}

Matrix MomentProvider::get(NodeId x, NodeId y) const {
  const auto p = LeafPair::of(x, y);
  const Matrix& m = stored(p);
  return x == p.a ? m : Matrix(m.transpose());
}

void MomentProvider::validate() const {
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    for (std::size_t j = i + 1; j < leaves_.size(); ++j) {
      const auto p = LeafPair::of(leaves_[i], leaves_[j]);
      const Matrix& m = stored(p);
      if (!m.allFinite()) throw NumericError("non-finite second moment for pair " + pair_name(p));
    }
  }
}

// ------------------------------------------------------------- thresholds

double ThresholdTable::width(NodeId x, NodeId y) const {
  const auto it = widths.find(LeafPair::of(x, y));
  if (it == widths.end()) {
    throw ConfigError("no threshold for pair " + pair_name(LeafPair::of(x, y)));
  }
  return it->second;
}

ThresholdTable ThresholdTable::uniform(const std::vector<NodeId>& leaves, double delta) {
  ThresholdTable t;
  t.mode = Mode::global_uniform;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (std::size_t j = i + 1; j < leaves.size(); ++j) {
      t.widths[LeafPair::of(leaves[i], leaves[j])] = delta;
    }
  }
  return t;
}

void ThresholdTable::validate(const std::vector<NodeId>& leaves) const {
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (std::size_t j = i + 1; j < leaves.size(); ++j) {
      const double w = width(leaves[i], leaves[j]);
      if (std::isnan(w) || w < 0.0) {
        throw DomainError("threshold for pair " + pair_name(LeafPair::of(leaves[i], leaves[j])) +
                          " must be non-negative");
      }
    }
  }
}

// ----------------------------------------------------------------- oracle

QuartetOracle::QuartetOracle(const MomentProvider& moments, const ThresholdTable& thresholds,
                             std::size_t k, bool memoize)
    : k_(k), memoize_(memoize) {
  if (k == 0) throw DimensionError("k must be positive");
  moments.validate();
  thresholds.validate(moments.leaves());
  const auto& leaves = moments.leaves();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (std::size_t j = i + 1; j < leaves.size(); ++j) {
      const auto p = LeafPair::of(leaves[i], leaves[j]);
      spectra_[p] = top_singular_values(moments.stored(p), k).values;
      widths_[p] = thresholds.width(p.a, p.b);
    }
  }
}

double QuartetOracle::sigma_k(NodeId x, NodeId y) const {
  return spectra_.at(LeafPair::of(x, y)).back();
}

QuartetSpectra QuartetOracle::spectra_for(std::array<NodeId, 4> sorted) const {
  QuartetSpectra q;
  q.labels = sorted;
  q.k = k_;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      const auto p = LeafPair::of(sorted[static_cast<std::size_t>(i)], sorted[static_cast<std::size_t>(j)]);
      const auto slot = static_cast<std::size_t>(pair_slot(i, j));
      const auto it = spectra_.find(p);
      if (it == spectra_.end()) throw ConfigError("unknown leaf pair " + pair_name(p));
      q.sv[slot] = it->second;
      q.delta[slot] = widths_.at(p);
    }
  }
  return q;
}

QuartetEvaluation QuartetOracle::evaluate(NodeId a, NodeId b, NodeId c, NodeId d) const {
  std::array<NodeId, 4> key{a, b, c, d};
  std::sort(key.begin(), key.end());
  if (std::adjacent_find(key.begin(), key.end()) != key.end()) {
    throw ConfigError("quartet needs four distinct leaves");
  }
  return evaluate_quartet(spectra_for(key));
}

QuartetResult QuartetOracle::test(NodeId a, NodeId b, NodeId c, NodeId d) {
  std::array<NodeId, 4> key{a, b, c, d};
  std::sort(key.begin(), key.end());
  if (memoize_) {
    std::shared_lock lock(mutex_);
    const auto it = memo_.find(key);
    if (it != memo_.end()) {
      ++hits_;
      return it->second;
    }
  }
  if (std::adjacent_find(key.begin(), key.end()) != key.end()) {
    throw ConfigError("quartet needs four distinct leaves");
  }
  const QuartetResult r = spectral_quartet_test(spectra_for(key));
  ++evaluated_;
  if (r) ++resolved_;
  if (memoize_) {
    std::unique_lock lock(mutex_);
    memo_.emplace(key, r);
  }
  return r;
}

// ------------------------------------------------------------------ state

ReconstructionState ReconstructionState::initial(const std::vector<NodeId>& leaves) {
  ReconstructionState s;
  s.working_set = leaves;
  std::sort(s.working_set.begin(), s.working_set.end());
  if (std::adjacent_find(s.working_set.begin(), s.working_set.end()) != s.working_set.end()) {
    throw ConfigError("repeated leaf label");
  }
  for (NodeId x : s.working_set) {
    s.children[x] = {};
    s.leaf_sets[x] = {x};
    s.observed.insert(x);
  }
  s.next_hidden_id = s.working_set.empty() ? 0 : s.working_set.back() + 1;
  return s;
}

std::vector<NodeId> ReconstructionState::subtree_nodes(NodeId u) const {
  std::vector<NodeId> out;
  std::vector<NodeId> stack{u};
  while (!stack.empty()) {
    const NodeId x = stack.back();
    stack.pop_back();
    out.push_back(x);
    const auto it = children.find(x);
    if (it == children.end()) throw DefectError("node " + std::to_string(x) + " has no record");
    for (NodeId c : it->second) stack.push_back(c);
  }
  return out;
}

void ReconstructionState::check_invariants() const {
  std::set<NodeId> seen_nodes;
  std::set<NodeId> seen_leaves;
  const auto known = [&](NodeId x) { return is_leaf(x) || children.count(x) > 0; };
  for (NodeId u : working_set) {
    if (!known(u) || leaf_sets.count(u) == 0) {
      throw DefectError("working-set node " + std::to_string(u) + " is unknown");
    }
    std::vector<NodeId> leaves_below;
    for (NodeId x : subtree_nodes(u)) {
      if (!seen_nodes.insert(x).second) {
        throw DefectError("node " + std::to_string(x) + " appears in two subtrees of the working set");
      }
      if (is_leaf(x)) leaves_below.push_back(x);
    }
    std::sort(leaves_below.begin(), leaves_below.end());
    if (leaves_below != leaves_of(u)) {
      throw DefectError("leaf set of node " + std::to_string(u) + " does not match its subtree");
    }
    seen_leaves.insert(leaves_below.begin(), leaves_below.end());
  }
  if (seen_leaves != observed) {
    throw DefectError("leaf sets of the working set do not cover every leaf");
  }
}

// ------------------------------------------------------ merge primitives

MergeableResult mergeable(std::span<const NodeId> working_set, const ReconstructionState& state,
                          NodeId u, NodeId v, QuartetOracle& oracle) {
  const auto others = without(working_set, u, v);
  if (others.size() < 2) return {};
  const auto& lu = state.leaves_of(u);
  const auto& lv = state.leaves_of(v);
  for (std::size_t i = 0; i < others.size(); ++i) {
    const auto& lu2 = state.leaves_of(others[i]);
    for (std::size_t j = i + 1; j < others.size(); ++j) {
      const auto& lv2 = state.leaves_of(others[j]);
      for (NodeId x : lu) {
        for (NodeId y : lv) {
          for (NodeId x2 : lu2) {
            for (NodeId y2 : lv2) {
              const auto r = oracle.test(x, y, x2, y2);
              if (r && r->splits(x, y)) {
                return {false, std::array<NodeId, 4>{x, y, x2, y2}};
              }
            }
          }
        }
      }
    }
  }
  return {};
}

std::string to_string(Relation r) {
  switch (r) {
    case Relation::siblings: return "siblings";
    case Relation::u_parent_of_v: return "u_parent_of_v";
    case Relation::v_parent_of_u: return "v_parent_of_u";
  }
  return "unknown";
}

namespace {

// True when some child of `parent` refuses to merge with `other` once the
// parent is replaced by its children in the working set.
bool parenthood_refuted(std::span<const NodeId> working_set, const ReconstructionState& state,
                        NodeId parent, NodeId other, QuartetOracle& oracle) {
  if (state.is_leaf(parent)) return true;
  const auto& kids = state.children_of(parent);
  std::vector<NodeId> expanded;
  for (NodeId x : working_set) {
    if (x != parent) expanded.push_back(x);
  }
  expanded.insert(expanded.end(), kids.begin(), kids.end());
  std::sort(expanded.begin(), expanded.end());
  for (NodeId child : kids) {
    if (!mergeable(expanded, state, child, other, oracle).mergeable) return true;
  }
  return false;
}

}  // namespace

RelationshipResult relationship(std::span<const NodeId> working_set,
                                const ReconstructionState& state, NodeId u, NodeId v,
                                QuartetOracle& oracle) {
  const bool u_refuted = parenthood_refuted(working_set, state, u, v, oracle);
  const bool v_refuted = parenthood_refuted(working_set, state, v, u, oracle);
  if (u_refuted && v_refuted) return {Relation::siblings, false};
  if (u_refuted) return {Relation::v_parent_of_u, false};
  return {Relation::u_parent_of_v, !v_refuted};
}

// ----------------------------------------------------------- learned tree

std::map<NodeId, std::vector<NodeId>> LearnedTree::adjacency() const {
  std::map<NodeId, std::vector<NodeId>> adj;
  for (NodeId x : leaves) adj[x];
  for (NodeId h : hidden) adj[h];
  for (const auto& [p, c] : edges) {
    adj[p].push_back(c);
    adj[c].push_back(p);
  }
  for (auto& [_, nb] : adj) std::sort(nb.begin(), nb.end());
  return adj;
}

std::string LearnedTree::to_newick() const {
  std::map<NodeId, std::vector<NodeId>> kids;
  for (const auto& [p, c] : edges) kids[p].push_back(c);
  for (auto& [_, c] : kids) std::sort(c.begin(), c.end());
  std::ostringstream out;
  const std::function<void(NodeId)> emit = [&](NodeId u) {
    const auto it = kids.find(u);
    if (it == kids.end() || it->second.empty()) {
      if (leaves.count(u)) out << u;
      return;
    }
    out << '(';
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      if (i > 0) out << ',';
      emit(it->second[i]);
    }
    out << ')';
    if (leaves.count(u)) out << u;
  };
  if (root >= 0) emit(root);
  out << ';';
  return out.str();
}

bool LearnedTree::well_formed() const {
  const auto adj = adjacency();
  const std::size_t n = leaves.size() + hidden.size();
  if (adj.size() != n || edges.size() + 1 != n) return false;
  for (NodeId x : leaves) {
    if (hidden.count(x) || adj.at(x).size() != 1) return false;
  }
  if (!adj.count(root)) return false;
  std::set<NodeId> seen{root};
  std::vector<NodeId> stack{root};
  while (!stack.empty()) {
    const NodeId u = stack.back();
    stack.pop_back();
    for (NodeId w : adj.at(u)) {
      if (seen.insert(w).second) stack.push_back(w);
    }
  }
  return seen.size() == n;
}

LearnedTree LearnedTree::from_latent(const LatentTree& tree) {
  LearnedTree out;
  for (NodeId x : tree.observed()) out.leaves.insert(x);
  for (NodeId h : tree.hidden()) out.hidden.insert(h);
  out.root = tree.root();
  for (NodeId u : tree.preorder()) {
    for (NodeId c : tree.children(u)) out.edges.emplace_back(u, c);
  }
  return out;
}

namespace {

LearnedTree assemble(const ReconstructionState& state, NodeId root) {
  LearnedTree out;
  out.root = root;
  for (NodeId u : state.subtree_nodes(root)) {
    if (state.is_leaf(u)) {
      out.leaves.insert(u);
    } else {
      out.hidden.insert(u);
    }
    for (NodeId c : state.children_of(u)) out.edges.emplace_back(u, c);
  }
  // A hidden root with two children is a degree-2 node: splice it out and
  // re-root at a hidden child.
  const auto& kids = state.children_of(root);
  if (!state.is_leaf(root) && kids.size() == 2) {
    NodeId keep = kids[0];
    NodeId other = kids[1];
    if (state.is_leaf(keep)) std::swap(keep, other);
    if (!state.is_leaf(keep)) {
      std::erase_if(out.edges, [&](const auto& e) { return e.first == root; });
      out.edges.emplace_back(keep, other);
      out.hidden.erase(root);
      out.root = keep;
    }
  }
  return out;
}

struct Candidate {
  double score;
  LeafPair best;
  NodeId u;
  NodeId v;
};

}  // namespace

SrgResult spectral_recursive_grouping(const MomentProvider& moments,
                                      const ThresholdTable& thresholds,
                                      const std::vector<NodeId>& leaves, std::size_t k,
                                      const SrgOptions& options) {
  if (leaves.size() < 3) throw ConfigError("reconstruction needs at least 3 leaves");
  auto sorted_leaves = leaves;
  std::sort(sorted_leaves.begin(), sorted_leaves.end());
  if (sorted_leaves != moments.leaves()) {
    throw LabelMismatchError("leaf labels differ from those of the moment provider");
  }

  QuartetOracle oracle(moments, thresholds, k, options.memoize);
  ReconstructionState state = ReconstructionState::initial(leaves);
  SrgResult result;

  const auto finish = [&](std::string reason) {
    result.failure_reason = std::move(reason);
    result.stats.quartet_tests = oracle.tests_evaluated();
    result.stats.cache_hits = oracle.cache_hits();
    result.stats.resolved_quartets = oracle.tests_resolved();
    return result;
  };

  const std::size_t n = leaves.size();
  for (std::size_t iter = 0; iter + 1 < n; ++iter) {
    const auto& R = state.working_set;

    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < R.size(); ++i) {
      for (std::size_t j = i + 1; j < R.size(); ++j) {
        Candidate c{-1.0, {}, R[i], R[j]};
        for (NodeId x : state.leaves_of(R[i])) {
          for (NodeId y : state.leaves_of(R[j])) {
            const double s = oracle.sigma_k(x, y);
            const auto p = LeafPair::of(x, y);
            if (s > c.score || (s == c.score && p < c.best)) {
              c.score = s;
              c.best = p;
            }
          }
        }
        if (options.min_correlation && c.score < *options.min_correlation) continue;
        candidates.push_back(c);
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      return std::tie(a.best, a.u, a.v) < std::tie(b.best, b.u, b.v);
    });

    const Candidate* chosen = nullptr;
    for (const auto& c : candidates) {
      ++result.stats.mergeable_calls;
      if (mergeable(R, state, c.u, c.v, oracle).mergeable) {
        chosen = &c;
        break;
      }
    }
    if (chosen == nullptr) {
      return finish("no mergeable pair among " + std::to_string(R.size()) +
                    " working-set nodes at iteration " + std::to_string(iter + 1));
    }

    const NodeId u = chosen->u;
    const NodeId v = chosen->v;
    const auto rel = relationship(R, state, u, v, oracle);
    if (rel.defaulted) {
      ++result.stats.defaulted_relationships;
      result.warnings.push_back("relationship of " + std::to_string(u) + " and " +
                                std::to_string(v) +
                                " undetermined; treating the first as parent");
    }

    IterationRecord rec{u, v, chosen->score, rel.relation, -1};
    const std::size_t before = R.size();
    std::vector<NodeId> next = without(R, u, v);
    switch (rel.relation) {
      case Relation::siblings: {
        const NodeId h = state.next_hidden_id++;
        state.children[h] = {u, v};
        state.leaf_sets[h] = sorted_union(state.leaves_of(u), state.leaves_of(v));
        next.push_back(h);
        rec.created = h;
        break;
      }
      case Relation::u_parent_of_v:
      case Relation::v_parent_of_u: {
        const NodeId parent = rel.relation == Relation::u_parent_of_v ? u : v;
        const NodeId child = parent == u ? v : u;
        auto& kids = state.children[parent];
        kids.push_back(child);
        std::sort(kids.begin(), kids.end());
        state.leaf_sets[parent] = sorted_union(state.leaves_of(parent), state.leaves_of(child));
        next.push_back(parent);
        break;
      }
    }
    std::sort(next.begin(), next.end());
    state.working_set = std::move(next);
    result.trace.push_back(rec);
    ++result.stats.iterations;

    if (options.verify_invariants) {
      ++result.stats.invariant_checks;
      if (state.working_set.size() + 1 != before) {
        throw DefectError("working set did not shrink by exactly one");
      }
      state.check_invariants();
    }
  }

  if (state.working_set.size() != 1) {
    return finish("working set holds " + std::to_string(state.working_set.size()) +
                  " nodes after the last iteration");
  }
  result.tree = assemble(state, state.working_set.front());
  if (options.verify_invariants && !result.tree->well_formed()) {
    throw DefectError("reconstructed tree is not well formed");
  }
  return finish({});
}

// ------------------------------------------------------------- comparison

std::set<std::vector<NodeId>> leaf_bipartitions(
    const std::map<NodeId, std::vector<NodeId>>& adjacency, const std::set<NodeId>& leaves) {
  std::set<std::vector<NodeId>> out;
  if (leaves.empty()) return out;
  const NodeId smallest = *leaves.begin();
  for (const auto& [u, nb] : adjacency) {
    for (NodeId v : nb) {
      if (u > v) continue;
      std::vector<NodeId> side;
      std::vector<std::pair<NodeId, NodeId>> stack{{v, u}};
      while (!stack.empty()) {
        auto [x, from] = stack.back();
        stack.pop_back();
        if (leaves.count(x)) side.push_back(x);
        for (NodeId w : adjacency.at(x)) {
          if (w != from) stack.emplace_back(w, x);
        }
      }
      std::sort(side.begin(), side.end());
      if (std::binary_search(side.begin(), side.end(), smallest)) {
        std::vector<NodeId> other;
        std::set_difference(leaves.begin(), leaves.end(), side.begin(), side.end(),
                            std::back_inserter(other));
        side = std::move(other);
      }
      if (side.size() >= 2 && side.size() + 2 <= leaves.size()) out.insert(std::move(side));
    }
  }
  return out;
}

TreeComparison compare_trees(const LearnedTree& a, const LearnedTree& b) {
  if (a.leaves != b.leaves) throw LabelMismatchError("trees have different leaf label sets");
  const auto pa = leaf_bipartitions(a.adjacency(), a.leaves);
  const auto pb = leaf_bipartitions(b.adjacency(), b.leaves);
  std::vector<std::vector<NodeId>> diff;
  std::set_symmetric_difference(pa.begin(), pa.end(), pb.begin(), pb.end(),
                                std::back_inserter(diff));
  return {diff.empty(), diff.size()};
}

TreeComparison compare_trees(const LearnedTree& a, const LatentTree& b) {
  return compare_trees(a, LearnedTree::from_latent(b));
}

}  // namespace spectree
