#include "spectree/latent_tree.hpp"

#include <algorithm>
#include <deque>
#include <random>
#include <set>

#include "spectree/errors.hpp"

namespace spectree {

NodeId LatentTree::add_node(NodeKind kind) {
  kinds_.push_back(kind);
  adj_.emplace_back();
  parent_.push_back(-1);
  children_.emplace_back();
  depth_.push_back(0);
  return static_cast<NodeId>(kinds_.size() - 1);
}

void LatentTree::add_edge(NodeId u, NodeId v) {
  const auto n = static_cast<NodeId>(size());
  if (u < 0 || v < 0 || u >= n || v >= n) throw StructureError("edge endpoint out of range");
  if (u == v) throw StructureError("self-loop on node " + std::to_string(u));
  auto& nu = adj_[static_cast<std::size_t>(u)];
  if (std::find(nu.begin(), nu.end(), v) != nu.end()) {
    throw StructureError("duplicate edge " + std::to_string(u) + "-" + std::to_string(v));
  }
  nu.push_back(v);
  adj_[static_cast<std::size_t>(v)].push_back(u);
  if (root_ >= 0) rebuild_rooted_view();
}

void LatentTree::set_root(NodeId r) {
  if (r < 0 || static_cast<std::size_t>(r) >= size()) throw StructureError("root out of range");
  root_ = r;
  rebuild_rooted_view();
}

void LatentTree::rebuild_rooted_view() {
  const std::size_t n = size();
  parent_.assign(n, -1);
  children_.assign(n, {});
  depth_.assign(n, 0);
  preorder_.clear();
  std::vector<bool> seen(n, false);
  std::vector<NodeId> stack{root_};
  seen[static_cast<std::size_t>(root_)] = true;
  while (!stack.empty()) {
    const NodeId u = stack.back();
    stack.pop_back();
    preorder_.push_back(u);
    // Reverse so that children are visited in ascending neighbor order.
    const auto& nb = adj_[static_cast<std::size_t>(u)];
    for (auto it = nb.rbegin(); it != nb.rend(); ++it) {
      const auto w = static_cast<std::size_t>(*it);
      if (seen[w]) continue;
      seen[w] = true;
      parent_[w] = u;
      depth_[w] = depth_[static_cast<std::size_t>(u)] + 1;
      stack.push_back(*it);
    }
  }
  for (NodeId u : preorder_) {
    if (parent_[static_cast<std::size_t>(u)] >= 0) {
      children_[static_cast<std::size_t>(parent_[static_cast<std::size_t>(u)])].push_back(u);
    }
  }
  for (auto& c : children_) std::sort(c.begin(), c.end());
}

std::vector<NodeId> LatentTree::observed() const {
  std::vector<NodeId> out;
  for (std::size_t u = 0; u < size(); ++u) {
    if (kinds_[u] == NodeKind::observed) out.push_back(static_cast<NodeId>(u));
  }
  return out;
}

std::vector<NodeId> LatentTree::hidden() const {
  std::vector<NodeId> out;
  for (std::size_t u = 0; u < size(); ++u) {
    if (kinds_[u] == NodeKind::hidden) out.push_back(static_cast<NodeId>(u));
  }
  return out;
}

std::vector<std::pair<NodeId, NodeId>> LatentTree::edges() const {
  std::vector<std::pair<NodeId, NodeId>> out;
  for (std::size_t u = 0; u < size(); ++u) {
    for (NodeId v : adj_[u]) {
      if (static_cast<NodeId>(u) < v) out.emplace_back(static_cast<NodeId>(u), v);
    }
  }
  return out;
}

NodeId LatentTree::lowest_common_ancestor(NodeId u, NodeId v) const {
  while (depth(u) > depth(v)) u = parent(u);
  while (depth(v) > depth(u)) v = parent(v);
  while (u != v) {
    u = parent(u);
    v = parent(v);
  }
  return u;
}

std::vector<NodeId> LatentTree::path(NodeId u, NodeId v) const {
  const NodeId a = lowest_common_ancestor(u, v);
  std::vector<NodeId> up;
  for (NodeId x = u; x != a; x = parent(x)) up.push_back(x);
  up.push_back(a);
  std::vector<NodeId> down;
  for (NodeId x = v; x != a; x = parent(x)) down.push_back(x);
  up.insert(up.end(), down.rbegin(), down.rend());
  return up;
}

NodeId LatentTree::median(NodeId a, NodeId b, NodeId c) const {
  const NodeId ab = lowest_common_ancestor(a, b);
  const NodeId ac = lowest_common_ancestor(a, c);
  const NodeId bc = lowest_common_ancestor(b, c);
  NodeId best = ab;
  if (depth(ac) > depth(best)) best = ac;
  if (depth(bc) > depth(best)) best = bc;
  return best;
}

std::vector<std::vector<NodeId>> LatentTree::leaves_around(NodeId h) const {
  std::vector<std::vector<NodeId>> out;
  for (NodeId start : neighbors(h)) {
    std::vector<NodeId> leaves;
    std::vector<std::pair<NodeId, NodeId>> stack{{start, h}};
    while (!stack.empty()) {
      auto [u, from] = stack.back();
      stack.pop_back();
      if (is_observed(u)) leaves.push_back(u);
      for (NodeId w : neighbors(u)) {
        if (w != from) stack.emplace_back(w, u);
      }
    }
    std::sort(leaves.begin(), leaves.end());
    out.push_back(std::move(leaves));
  }
  return out;
}

std::vector<std::string> LatentTree::structural_violations() const {
  std::vector<std::string> out;
  const std::size_t n = size();
  if (n == 0) {
    out.emplace_back("tree has no nodes");
    return out;
  }
  std::size_t edge_count = 0;
  for (const auto& nb : adj_) edge_count += nb.size();
  edge_count /= 2;

  std::vector<bool> seen(n, false);
  std::deque<NodeId> queue{0};
  seen[0] = true;
  std::size_t reached = 0;
  while (!queue.empty()) {
    const NodeId u = queue.front();
    queue.pop_front();
    ++reached;
    for (NodeId w : adj_[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = true;
        queue.push_back(w);
      }
    }
  }
  if (reached != n) out.emplace_back("tree is not connected");
  if (edge_count != n - 1) out.emplace_back("tree has a cycle (edges != nodes - 1)");

  for (std::size_t u = 0; u < n; ++u) {
    const auto id = std::to_string(u);
    const std::size_t deg = adj_[u].size();
    if (kinds_[u] == NodeKind::observed) {
      if (deg != 1) out.push_back("observed node " + id + " has degree " + std::to_string(deg));
      for (NodeId w : adj_[u]) {
        if (kinds_[static_cast<std::size_t>(w)] == NodeKind::observed) {
          out.push_back("observed node " + id + " is adjacent to observed node " + std::to_string(w));
        }
      }
    } else if (deg == 2) {
      out.push_back("hidden node " + id + " has degree exactly 2");
    } else if (deg < 3) {
      out.push_back("hidden node " + id + " has degree " + std::to_string(deg) + " < 3");
    }
  }
  if (root_ < 0) {
    out.emplace_back("no root designated");
  } else if (kinds_[static_cast<std::size_t>(root_)] != NodeKind::hidden) {
    out.emplace_back("root must be a hidden node");
  }
  return out;
}

void LatentTree::validate() const {
  const auto v = structural_violations();
  if (!v.empty()) throw StructureError(v.front());
}

std::optional<Pairing> LatentTree::induced_quartet(NodeId a, NodeId b, NodeId c, NodeId d) const {
  const auto disjoint = [&](NodeId p, NodeId q, NodeId r, NodeId s) {
    const auto left = path(p, q);
    const std::set<NodeId> on_left(left.begin(), left.end());
    for (NodeId x : path(r, s)) {
      if (on_left.count(x)) return false;
    }
    return true;
  };
  if (disjoint(a, b, c, d)) return Pairing::of(LeafPair::of(a, b), LeafPair::of(c, d));
  if (disjoint(a, c, b, d)) return Pairing::of(LeafPair::of(a, c), LeafPair::of(b, d));
  if (disjoint(a, d, b, c)) return Pairing::of(LeafPair::of(a, d), LeafPair::of(b, c));
  return std::nullopt;
}

LatentTree generate_tree(std::size_t n_leaves, std::size_t max_hidden_degree, std::uint64_t seed) {
  if (n_leaves < 3) throw GenerationError("a latent tree needs at least 3 leaves");
  if (max_hidden_degree < 3) throw GenerationError("hidden nodes need degree at least 3");

  // Grow an adjacency structure one leaf at a time, then relabel so that the
  // observed leaves get ids 0..n-1 and hidden nodes follow.
  std::mt19937_64 rng(seed);
  std::vector<bool> is_leaf{false, true, true, true};
  std::vector<std::vector<int>> adj{{1, 2, 3}, {0}, {0}, {0}};
  const auto connect = [&](int u, int v) {
    adj[static_cast<std::size_t>(u)].push_back(v);
    adj[static_cast<std::size_t>(v)].push_back(u);
  };
  const auto disconnect = [&](int u, int v) {
    auto& a = adj[static_cast<std::size_t>(u)];
    a.erase(std::find(a.begin(), a.end(), v));
    auto& b = adj[static_cast<std::size_t>(v)];
    b.erase(std::find(b.begin(), b.end(), u));
  };

  for (std::size_t leaves = 3; leaves < n_leaves; ++leaves) {
    std::vector<int> open;
    std::vector<std::pair<int, int>> edges;
    for (std::size_t u = 0; u < adj.size(); ++u) {
      if (!is_leaf[u] && adj[u].size() < max_hidden_degree) open.push_back(static_cast<int>(u));
      for (int v : adj[u]) {
        if (static_cast<int>(u) < v) edges.emplace_back(static_cast<int>(u), v);
      }
    }
    const int leaf = static_cast<int>(adj.size());
    is_leaf.push_back(true);
    adj.emplace_back();
    std::bernoulli_distribution attach(0.5);
    if (!open.empty() && attach(rng)) {
      std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
      connect(open[pick(rng)], leaf);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, edges.size() - 1);
      const auto [u, v] = edges[pick(rng)];
      const int mid = static_cast<int>(adj.size());
      is_leaf.push_back(false);
      adj.emplace_back();
      disconnect(u, v);
      connect(u, mid);
      connect(mid, v);
      connect(mid, leaf);
    }
  }

  std::vector<int> relabel(adj.size(), -1);
  LatentTree tree;
  for (bool want_leaf : {true, false}) {
    for (std::size_t u = 0; u < adj.size(); ++u) {
      if (is_leaf[u] == want_leaf) {
        relabel[u] = tree.add_node(want_leaf ? NodeKind::observed : NodeKind::hidden);
      }
    }
  }
  for (std::size_t u = 0; u < adj.size(); ++u) {
    for (int v : adj[u]) {
      if (static_cast<int>(u) < v) tree.add_edge(relabel[u], relabel[static_cast<std::size_t>(v)]);
    }
  }
  const auto hidden = tree.hidden();
  std::uniform_int_distribution<std::size_t> pick_root(0, hidden.size() - 1);
  tree.set_root(hidden[pick_root(rng)]);
  return tree;
}

}  // namespace spectree
