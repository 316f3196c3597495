#pragma once

// Leaf-labeled latent tree: observed variables sit at the leaves, hidden
// variables at internal nodes. Node ids are dense indices 0..size()-1.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spectree/quartet.hpp"

namespace spectree {

enum class NodeKind { observed, hidden };

class LatentTree {
 public:
  NodeId add_node(NodeKind kind);
  void add_edge(NodeId u, NodeId v);
  // Directions are derived from the root; it must be a hidden node.
  void set_root(NodeId r);

  std::size_t size() const { return kinds_.size(); }
  NodeKind kind(NodeId u) const { return kinds_.at(static_cast<std::size_t>(u)); }
  bool is_observed(NodeId u) const { return kind(u) == NodeKind::observed; }
  NodeId root() const { return root_; }
  const std::vector<NodeId>& neighbors(NodeId u) const { return adj_.at(static_cast<std::size_t>(u)); }
  std::size_t degree(NodeId u) const { return neighbors(u).size(); }

  std::vector<NodeId> observed() const;
  std::vector<NodeId> hidden() const;
  std::vector<std::pair<NodeId, NodeId>> edges() const;  // each edge once, (min, max)

  // Rooted views; valid only on a structurally valid tree with a root.
  NodeId parent(NodeId u) const { return parent_.at(static_cast<std::size_t>(u)); }
  const std::vector<NodeId>& children(NodeId u) const { return children_.at(static_cast<std::size_t>(u)); }
  int depth(NodeId u) const { return depth_.at(static_cast<std::size_t>(u)); }
  // Root first; every parent precedes its children.
  const std::vector<NodeId>& preorder() const { return preorder_; }

  NodeId lowest_common_ancestor(NodeId u, NodeId v) const;
  // Nodes on the undirected path from u to v, both ends included.
  std::vector<NodeId> path(NodeId u, NodeId v) const;
  // The unique node lying on all three pairwise paths.
  NodeId median(NodeId a, NodeId b, NodeId c) const;

  // Observed leaves in each component left after deleting h (one per neighbor).
  std::vector<std::vector<NodeId>> leaves_around(NodeId h) const;

  // Human-readable violations of the latent-tree invariants; empty when valid.
  std::vector<std::string> structural_violations() const;
  // Throws StructureError listing the first violation.
  void validate() const;

  // Induced topology of four observed leaves: the pairing, or nullopt for a star.
  std::optional<Pairing> induced_quartet(NodeId a, NodeId b, NodeId c, NodeId d) const;

 private:
  void rebuild_rooted_view();

  std::vector<NodeKind> kinds_;
  std::vector<std::vector<NodeId>> adj_;
  NodeId root_ = -1;
  std::vector<NodeId> parent_;
  std::vector<std::vector<NodeId>> children_;
  std::vector<int> depth_;
  std::vector<NodeId> preorder_;
};

// Random tree with n_leaves observed leaves and hidden degrees in
// [3, max_hidden_degree]. Deterministic for a given seed.
LatentTree generate_tree(std::size_t n_leaves, std::size_t max_hidden_degree, std::uint64_t seed);

}  // namespace spectree
