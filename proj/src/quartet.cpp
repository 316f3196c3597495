#include "spectree/quartet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "spectree/errors.hpp"

namespace spectree {

namespace {

struct Partition {
  int i, j, ip, jp;  // {i,j} | {ip,jp}
};

constexpr std::array<Partition, 3> kPartitions = {{{0, 1, 2, 3}, {0, 2, 1, 3}, {0, 3, 1, 2}}};

FactorProduct lower_product(const QuartetSpectra& q, int slot_a, int slot_b) {
  std::vector<double> f;
  f.reserve(2 * q.k);
  for (std::size_t s = 0; s < q.k; ++s) {
    f.push_back(clamp_nonneg(q.sv[slot_a][s] - q.delta[slot_a]));
    f.push_back(clamp_nonneg(q.sv[slot_b][s] - q.delta[slot_b]));
  }
  return FactorProduct::of(f);
}

FactorProduct upper_product(const QuartetSpectra& q, int slot_a, int slot_b) {
  std::vector<double> f;
  f.reserve(2 * q.k);
  for (std::size_t s = 0; s < q.k; ++s) {
    f.push_back(q.sv[slot_a][s] + q.delta[slot_a]);
    f.push_back(q.sv[slot_b][s] + q.delta[slot_b]);
  }
  return FactorProduct::of(f);
}

void require(bool ok, const char* what) {
  if (!ok) throw DomainError(what);
}

}  // namespace

std::string Pairing::to_string() const {
  return "{{" + std::to_string(first.a) + "," + std::to_string(first.b) + "},{" +
         std::to_string(second.a) + "," + std::to_string(second.b) + "}}";
}

void QuartetInput::validate() const {
  std::set<NodeId> distinct(labels.begin(), labels.end());
  if (distinct.size() != 4) throw DomainError("quartet labels must be distinct");
  if (k < 1) throw DimensionError("quartet rank k must be at least 1");
  for (int slot = 0; slot < 6; ++slot) {
    const Matrix& m = sigma_hat[slot];
    require_finite(m);
    if (static_cast<std::size_t>(std::min(m.rows(), m.cols())) < k) {
      throw DimensionError("second-moment matrix smaller than rank k");
    }
    if (!(delta[slot] >= 0.0)) throw DomainError("confidence widths must be non-negative");
  }
}

QuartetSpectra QuartetSpectra::from_input(const QuartetInput& in) {
  in.validate();
  QuartetSpectra q;
  q.labels = in.labels;
  q.delta = in.delta;
  q.k = in.k;
  for (int slot = 0; slot < 6; ++slot) {
    q.sv[slot] = top_singular_values(in.sigma_hat[slot], in.k).values;
  }
  return q;
}

bool strictly_greater(const FactorProduct& lhs, const FactorProduct& rhs) {
  if (!lhs.log_space && !rhs.log_space) {
    if (!(lhs.direct > rhs.direct)) return false;
    if (std::isinf(rhs.direct)) return false;
    const double scale = std::max(std::abs(lhs.direct), std::abs(rhs.direct));
    return lhs.direct - rhs.direct > kTieTolerance * scale;
  }
  if (!(lhs.log_value > rhs.log_value)) return false;
  if (rhs.log_value == -std::numeric_limits<double>::infinity()) return true;
  // A relative tie of 1e-9 on the products is a log difference of ~1e-9.
  return lhs.log_value - rhs.log_value > std::log1p(kTieTolerance);
}

QuartetEvaluation evaluate_quartet(const QuartetSpectra& q) {
  QuartetEvaluation eval;
  int satisfied = 0;
  int winner = -1;
  for (int p = 0; p < 3; ++p) {
    const auto& part = kPartitions[p];
    PartitionScore& score = eval.partitions[p];
    score.pairing = Pairing::of(LeafPair::of(q.labels[part.i], q.labels[part.j]),
                                LeafPair::of(q.labels[part.ip], q.labels[part.jp]));
    score.lower = lower_product(q, pair_slot(part.i, part.j), pair_slot(part.ip, part.jp));
    // The two crossing pairings {i,i'}{j,j'} and {i,j'}{j,i'}.
    const auto cross_a = upper_product(q, pair_slot(part.i, part.ip), pair_slot(part.j, part.jp));
    const auto cross_b = upper_product(q, pair_slot(part.i, part.jp), pair_slot(part.j, part.ip));
    score.upper = cross_a.log_value >= cross_b.log_value ? cross_a : cross_b;
    score.satisfied = strictly_greater(score.lower, score.upper);
    if (score.satisfied) {
      ++satisfied;
      winner = p;
    }
  }
  if (satisfied == 1) eval.result = eval.partitions[winner].pairing;
  return eval;
}

QuartetResult spectral_quartet_test(const QuartetSpectra& q) { return evaluate_quartet(q).result; }

QuartetResult spectral_quartet_test(const QuartetInput& in) {
  return spectral_quartet_test(QuartetSpectra::from_input(in));
}

void ConfidenceParams::validate() const {
  require(B > 0.0 && std::isfinite(B), "B must be positive and finite");
  require(M_i > 0.0 && std::isfinite(M_i), "M_i must be positive and finite");
  require(M_j > 0.0 && std::isfinite(M_j), "M_j must be positive and finite");
  require(d_bar >= 1.0, "d_bar must be at least 1");
  require(t > 0.0 && std::isfinite(t), "t must be positive and finite");
  require(N >= 1, "N must be at least 1");
  if (delta_conf) {
    require(*delta_conf > 0.0 && *delta_conf < 1.0 / 6.0, "delta must lie in (0, 1/6)");
  }
}

double delta_bernstein(const ConfidenceParams& p) {
  p.validate();
  const double n = static_cast<double>(p.N);
  return std::sqrt(2.0 * p.B * p.t / n) + p.M_i * p.M_j * p.t / (3.0 * n);
}

double t_factor_quartet(double d_bar, double delta_conf) {
  require(d_bar >= 1.0, "d_bar must be at least 1");
  require(delta_conf > 0.0 && delta_conf < 1.0 / 6.0, "delta must lie in (0, 1/6)");
  return 1.55 * std::log(24.0 * d_bar / delta_conf);
}

double t_factor_tree(double d_bar, std::size_t n_leaves, double eta) {
  require(d_bar >= 1.0, "d_bar must be at least 1");
  require(n_leaves >= 3, "a tree needs at least 3 leaves");
  require(eta > 0.0 && eta < 1.0, "eta must lie in (0, 1)");
  return 4.0 * std::log(4.0 * d_bar * static_cast<double>(n_leaves) / eta);
}

double delta_discrete(std::size_t N, double t) {
  require(N >= 1, "N must be at least 1");
  require(t > 0.0 && std::isfinite(t), "t must be positive");
  return (1.0 + std::sqrt(t)) / std::sqrt(static_cast<double>(N));
}

double max_delta_full_rank(std::size_t k, double rho, double sigma_k_min) {
  require(k >= 1, "k must be at least 1");
  require(rho > 0.0 && rho < 1.0, "rho must lie in (0, 1)");
  require(sigma_k_min > 0.0, "sigma_k_min must be positive");
  const double kk = static_cast<double>(k);
  return std::min(1.0, 1.0 / rho - 1.0) * sigma_k_min / (8.0 * kk);
}

double max_delta_rank_r(std::size_t k, std::size_t r, double rho1, double sigma_min) {
  require(r >= 1 && r < k, "rank r must satisfy 1 <= r < k");
  require(rho1 > 0.0 && std::isfinite(rho1), "rho1 must be positive");
  require(sigma_min > 0.0, "sigma_min must be positive");
  const double kk = static_cast<double>(k);
  const double inner = 8.0 * kk * std::pow(1.0 / (2.0 * rho1), 1.0 / static_cast<double>(k - r));
  return std::min(1.0, inner) * sigma_min / (8.0 * kk);
}

QuartetGeometry quartet_geometry(const QuartetSpectra& population) {
  const auto log_det = [&](int a, int b) {
    return FactorProduct::of(population.sv[pair_slot(a, b)]).log_value;
  };
  QuartetGeometry g;
  g.rho_squared = std::exp(log_det(0, 2) + log_det(1, 3) - log_det(0, 1) - log_det(2, 3));
  g.sigma_k_min = std::numeric_limits<double>::infinity();
  for (const auto& sv : population.sv) g.sigma_k_min = std::min(g.sigma_k_min, sv[population.k - 1]);
  return g;
}

RankDeficientGeometry rank_deficient_geometry(const QuartetSpectra& population, std::size_t r) {
  const std::size_t k = population.k;
  require(r >= 1 && r < k, "rank r must satisfy 1 <= r < k");
  const auto& sv = population.sv;
  RankDeficientGeometry g;
  g.sigma_min = std::min(sv[pair_slot(0, 1)][k - 1], sv[pair_slot(2, 3)][k - 1]);
  for (int i : {0, 1}) {
    for (int j : {2, 3}) g.sigma_min = std::min(g.sigma_min, sv[pair_slot(i, j)][r - 1]);
  }
  const auto log_top = [&](int a, int b, std::size_t count) {
    double acc = 0.0;
    for (std::size_t s = 0; s < count; ++s) acc += std::log(sv[pair_slot(a, b)][s]);
    return acc;
  };
  const double cross =
      std::max(log_top(0, 2, r) + log_top(1, 3, r), log_top(0, 3, r) + log_top(1, 2, r));
  const double log_rho1_sq = 2.0 * static_cast<double>(k - r) * std::log(g.sigma_min) + cross -
                             log_top(0, 1, k) - log_top(2, 3, k);
  g.rho1 = std::exp(0.5 * log_rho1_sq);
  return g;
}

PairPlugins estimate_plugins(const Matrix& samples_i, const Matrix& samples_j) {
  require_finite(samples_i);
  require_finite(samples_j);
  if (samples_i.rows() != samples_j.rows()) {
    throw DimensionError("paired samples must have the same number of rows");
  }
  const double n = static_cast<double>(samples_i.rows());
  const Vector sq_i = samples_i.rowwise().squaredNorm();
  const Vector sq_j = samples_j.rowwise().squaredNorm();

  const Matrix weighted_i = samples_i.transpose() * sq_j.asDiagonal() * samples_i / n;
  const Matrix weighted_j = samples_j.transpose() * sq_i.asDiagonal() * samples_j / n;
  PairPlugins p;
  p.B = std::max(spectral_norm(weighted_i), spectral_norm(weighted_j));
  p.M_i = std::sqrt(sq_i.maxCoeff());
  p.M_j = std::sqrt(sq_j.maxCoeff());
  const Matrix cross = samples_i.transpose() * samples_j / n;
  const double fourth = sq_i.cwiseProduct(sq_j).sum() / n;
  p.d_bar_raw = p.B > 0.0 ? (fourth - cross.squaredNorm()) / p.B : 0.0;
  p.d_bar = std::max(1.0, p.d_bar_raw);
  return p;
}

}  // namespace spectree
