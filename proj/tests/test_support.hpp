#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "spectree/latent_tree.hpp"

namespace spectree::testing {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  }
  return m;
}

// Four leaves 0..3 paired as {0,1}|{2,3}: hidden 4 holds 0 and 1, hidden 5
// holds 2 and 3, root at 4.
inline LatentTree two_cherry_quartet() {
  LatentTree t;
  for (int i = 0; i < 4; ++i) t.add_node(NodeKind::observed);
  const NodeId h = t.add_node(NodeKind::hidden);
  const NodeId g = t.add_node(NodeKind::hidden);
  t.add_edge(h, 0);
  t.add_edge(h, 1);
  t.add_edge(g, 2);
  t.add_edge(g, 3);
  t.add_edge(h, g);
  t.set_root(h);
  return t;
}

// Hidden root 0 with `n` observed children 1..n.
inline LatentTree star(int n) {
  LatentTree t;
  const NodeId r = t.add_node(NodeKind::hidden);
  for (int i = 0; i < n; ++i) t.add_edge(r, t.add_node(NodeKind::observed));
  t.set_root(r);
  return t;
}

}  // namespace spectree::testing
