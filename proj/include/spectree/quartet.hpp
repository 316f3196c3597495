#pragma once

// Spectral quartet test and the confidence-width formulas that feed it.
//
// A quartet is four observed variables z_0..z_3. The six second-moment
// matrices between them are addressed by slot, see pair_slot(). For a
// partition {i,j}|{i',j'} the test compares
//
//   prod_s [sigma_s(S_ij) - D_ij]_+ [sigma_s(S_i'j') - D_i'j']_+
//
// against the matching upper products of both crossing pairings, s = 1..k.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "spectree/spectral_core.hpp"

namespace spectree {

using NodeId = int;

// Two leaves grouped together, stored sorted.
struct LeafPair {
  NodeId a = 0;
  NodeId b = 0;

  static LeafPair of(NodeId x, NodeId y) { return x < y ? LeafPair{x, y} : LeafPair{y, x}; }
  bool contains(NodeId x) const { return a == x || b == x; }
  auto operator<=>(const LeafPair&) const = default;
};

// {{first}, {second}} with first holding the smallest of the four labels.
struct Pairing {
  LeafPair first;
  LeafPair second;

  static Pairing of(LeafPair p, LeafPair q) { return p.a < q.a ? Pairing{p, q} : Pairing{q, p}; }
  // True when x and y end up in different groups.
  bool splits(NodeId x, NodeId y) const { return first.contains(x) != first.contains(y); }
  bool operator==(const Pairing&) const = default;
  std::string to_string() const;
};

// Abstain is represented by an empty optional.
using QuartetResult = std::optional<Pairing>;

// Slot of the pair (i, j), i != j, among positions 0..3:
// (0,1)=0 (0,2)=1 (0,3)=2 (1,2)=3 (1,3)=4 (2,3)=5.
constexpr int pair_slot(int i, int j) {
  if (i > j) std::swap(i, j);
  constexpr int base[3] = {0, 3, 5};
  return base[i] + (j - i - 1);
}

struct QuartetInput {
  std::array<NodeId, 4> labels{};
  // sigma_hat[pair_slot(i, j)] is the estimate of E[z_i z_j^T] for i < j.
  std::array<Matrix, 6> sigma_hat;
  std::array<double, 6> delta{};
  std::size_t k = 1;

  // Throws on repeated labels, negative widths or too-small matrices.
  void validate() const;
};

// The quartet test only consumes the top-k singular values of each pair.
struct QuartetSpectra {
  std::array<NodeId, 4> labels{};
  std::array<std::vector<double>, 6> sv;  // each of length k, descending
  std::array<double, 6> delta{};
  std::size_t k = 1;

  static QuartetSpectra from_input(const QuartetInput& in);
};

struct PartitionScore {
  Pairing pairing;
  FactorProduct lower;  // clamped lower product for the grouped pairs
  FactorProduct upper;  // larger of the two crossing upper products
  bool satisfied = false;
};

struct QuartetEvaluation {
  std::array<PartitionScore, 3> partitions;
  QuartetResult result;
};

// Relative tolerance under which two products are treated as tied.
inline constexpr double kTieTolerance = 1e-9;

// True when lhs exceeds rhs by more than the tie tolerance.
bool strictly_greater(const FactorProduct& lhs, const FactorProduct& rhs);

QuartetEvaluation evaluate_quartet(const QuartetSpectra& q);
QuartetResult spectral_quartet_test(const QuartetSpectra& q);
QuartetResult spectral_quartet_test(const QuartetInput& in);

// Constants behind a Bernstein-type width for one pair {i, j}.
struct ConfidenceParams {
  double B = 0.0;      // max of ||E[|z_j|^2 z_i z_i^T]|| and the symmetric term
  double M_i = 0.0;    // almost-sure bound on |z_i|
  double M_j = 0.0;
  double d_bar = 1.0;  // effective dimension
  double t = 0.0;      // log factor
  std::size_t N = 1;   // sample count
  // Per-quartet failure probability. Left empty when t comes from the
  // whole-tree rule, which is parameterised by eta instead.
  std::optional<double> delta_conf;

  void validate() const;
};

// sqrt(2 B t / N) + M_i M_j t / (3 N).
double delta_bernstein(const ConfidenceParams& p);

// 1.55 ln(24 d_bar / delta), the log factor for one quartet.
double t_factor_quartet(double d_bar, double delta_conf);

// 4 ln(4 d_bar n / eta), the log factor for a whole tree on n leaves.
double t_factor_tree(double d_bar, std::size_t n_leaves, double eta);

// (1 + sqrt(t)) / sqrt(N): Frobenius-norm width for simplex-valued pairs,
// valid with probability at least 1 - exp(-t).
double delta_discrete(std::size_t N, double t);

// Largest uniform width that still guarantees the correct pairing when
// E[hg^T] has full rank: (1/8k) min{1, 1/rho - 1} sigma_k_min.
double max_delta_full_rank(std::size_t k, double rho, double sigma_k_min);

// Same guarantee when E[hg^T] has rank r < k:
// (1/8k) min{1, 8k (1/(2 rho1))^(1/(k-r))} sigma_min.
double max_delta_rank_r(std::size_t k, std::size_t r, double rho1, double sigma_min);

// Population quantities for a quartet whose true pairing is {0,1}|{2,3}.
struct QuartetGeometry {
  double rho_squared = 0.0;  // det_k(S02) det_k(S13) / (det_k(S01) det_k(S23))
  double sigma_k_min = 0.0;  // min over the six pairs of sigma_k
};
QuartetGeometry quartet_geometry(const QuartetSpectra& population);

// Width-guarantee quantities when the hidden link has rank r < k, true pairing {0,1}|{2,3}.
struct RankDeficientGeometry {
  double sigma_min = 0.0;
  double rho1 = 0.0;
};
RankDeficientGeometry rank_deficient_geometry(const QuartetSpectra& population, std::size_t r);

// Plug-in estimates of the constants of a Bernstein width, from paired
// samples (rows are observations).
struct PairPlugins {
  double B = 0.0;
  double M_i = 0.0;
  double M_j = 0.0;
  double d_bar = 1.0;      // floored at 1
  double d_bar_raw = 0.0;  // before flooring
};
PairPlugins estimate_plugins(const Matrix& samples_i, const Matrix& samples_j);

}  // namespace spectree
