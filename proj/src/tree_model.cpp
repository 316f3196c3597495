#include "spectree/tree_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <tuple>

#include "spectree/errors.hpp"
#include "spectree/quartet.hpp"

namespace spectree {

namespace {

constexpr int kModelAttempts = 25;
constexpr int kEdgeAttempts = 400;
constexpr double kRootMarginalFloor = 0.05;

using Rng = std::mt19937_64;

Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
Matrix random_orthogonal(Rng& rng, Eigen::Index n) {
  const Matrix g = gaussian_matrix(rng, n, n);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (r(i, i) < 0) q.col(i) *= -1.0;
  }
  return q;
}

Vector uniform_vector(Rng& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

// U diag(s) V^T with orthonormal U (rows x k), V (k x k) and s in [lo, hi].
Matrix random_linear_map(Rng& rng, Eigen::Index rows, Eigen::Index k, double lo, double hi) {
  const Matrix u = random_orthogonal(rng, rows).leftCols(k);
  const Matrix v = random_orthogonal(rng, k);
  Vector s = uniform_vector(rng, k, lo, hi);
  return u * s.asDiagonal() * v.transpose();
}

Vector dirichlet_ones(Rng& rng, Eigen::Index n) {
  std::gamma_distribution<double> gamma(1.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = gamma(rng);
  return v / v.sum();
}

// Mixture of an injective state assignment and random conditional columns.
Matrix random_stochastic_map(Rng& rng, Eigen::Index rows, Eigen::Index k) {
  std::vector<Eigen::Index> target(static_cast<std::size_t>(rows));
  for (Eigen::Index i = 0; i < rows; ++i) target[static_cast<std::size_t>(i)] = i;
  std::shuffle(target.begin(), target.end(), rng);
  std::uniform_real_distribution<double> lam(0.55, 0.95);
  Matrix m(rows, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double l = lam(rng);
    Vector col = (1.0 - l) * dirichlet_ones(rng, rows);
    col(target[static_cast<std::size_t>(j)]) += l;
    m.col(j) = col;
  }
  return m;
}

double sigma_k(const Matrix& m, std::size_t k) { return top_singular_values(m, k).values.back(); }

double log_abs_det(const Matrix& m) { return log_det_k(m, static_cast<std::size_t>(m.rows())); }

Matrix child_second_moment(Family family, const Matrix& map, const Matrix& parent_moment,
                           const Matrix& noise) {
  if (family == Family::discrete) {
    const Vector marginal = map * parent_moment.diagonal();
    return marginal.asDiagonal();
  }
  return map * parent_moment * map.transpose() + noise;
}

}  // namespace

std::string to_string(Family f) { return f == Family::gaussian ? "gaussian" : "discrete"; }

Family family_from_string(const std::string& s) {
  if (s == "gaussian") return Family::gaussian;
  if (s == "discrete") return Family::discrete;
  throw ConfigError("unknown model family '" + s + "'");
}

void LinearTreeModel::validate() const {
  tree.validate();
  const auto n = tree.size();
  if (k < 1 || d < k) throw DimensionError("model needs 1 <= k <= d");
  if (edge_map.size() != n) throw DimensionError("edge_map must have one entry per node");
  if (family == Family::gaussian && noise_cov.size() != n) {
    throw DimensionError("noise_cov must have one entry per node");
  }
  const auto kk = static_cast<Eigen::Index>(k);
  if (root_moment.rows() != kk || root_moment.cols() != kk) {
    throw DimensionError("root moment must be k x k");
  }
  require_finite(root_moment);
  for (std::size_t u = 0; u < n; ++u) {
    const auto id = static_cast<NodeId>(u);
    if (id == tree.root()) continue;
    const auto rows = static_cast<Eigen::Index>(dim(id));
    const Matrix& m = edge_map[u];
    if (m.rows() != rows || m.cols() != kk) {
      throw DimensionError("edge map of node " + std::to_string(u) + " has wrong shape");
    }
    require_finite(m);
    if (family == Family::gaussian) {
      const Matrix& c = noise_cov[u];
      if (c.rows() != rows || c.cols() != rows) {
        throw DimensionError("noise covariance of node " + std::to_string(u) + " has wrong shape");
      }
      require_finite(c);
    } else {
      if ((m.array() < 0.0).any()) {
        throw DomainError("conditional table of node " + std::to_string(u) + " is negative");
      }
      if (((m.colwise().sum().array() - 1.0).abs() > 1e-9).any()) {
        throw DomainError("conditional table of node " + std::to_string(u) +
                          " is not column-stochastic");
      }
    }
  }
  if (family == Family::discrete) {
    const Vector pi = root_moment.diagonal();
    if ((pi.array() < 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-9 ||
        !root_moment.isDiagonal(0.0)) {
      throw DomainError("discrete root moment must be diag(root marginal)");
    }
  }
}

Matrix PopulationMoments::pair(NodeId x, NodeId y) const {
  const auto key = LeafPair::of(x, y);
  const auto it = pair_moments.find(key);
  if (it == pair_moments.end()) throw DimensionError("no moment for the requested pair");
  return x == key.a ? it->second : Matrix(it->second.transpose());
}

Matrix path_product(const LinearTreeModel& model, NodeId a, NodeId v) {
  const auto& tree = model.tree;
  if (v == a) return Matrix::Identity(static_cast<Eigen::Index>(model.k), static_cast<Eigen::Index>(model.k));
  Matrix p = model.edge_map[static_cast<std::size_t>(v)];
  for (NodeId x = tree.parent(v); x != a; x = tree.parent(x)) {
    if (x < 0) throw DefectError("path_product: a is not an ancestor of v");
    p = p * model.edge_map[static_cast<std::size_t>(x)];
  }
  return p;
}

Matrix cross_moment(const LinearTreeModel& model, const PopulationMoments& moments, NodeId u,
                    NodeId v) {
  if (u == v) return moments.node_second_moments[static_cast<std::size_t>(u)];
  const NodeId a = model.tree.lowest_common_ancestor(u, v);
  const Matrix& aa = moments.node_second_moments[static_cast<std::size_t>(a)];
  if (a == u) return aa * path_product(model, a, v).transpose();
  if (a == v) return path_product(model, a, u) * aa;
  return path_product(model, a, u) * aa * path_product(model, a, v).transpose();
}

PopulationMoments population_moments(const LinearTreeModel& model) {
  const auto& tree = model.tree;
  PopulationMoments out;
  out.node_second_moments.resize(tree.size());
  for (NodeId u : tree.preorder()) {
    const auto idx = static_cast<std::size_t>(u);
    if (u == tree.root()) {
      out.node_second_moments[idx] = model.root_moment;
    } else {
      const Matrix& parent = out.node_second_moments[static_cast<std::size_t>(tree.parent(u))];
      const Matrix noise = model.family == Family::gaussian ? model.noise_cov[idx] : Matrix();
      out.node_second_moments[idx] =
          child_second_moment(model.family, model.edge_map[idx], parent, noise);
    }
    if (!tree.is_observed(u)) {
      const auto spec = top_singular_values(out.node_second_moments[idx], model.k);
      if (spec.values.back() <= 0.0) {
        throw NumericError("E[hh^T] of hidden node " + std::to_string(u) + " is rank-deficient");
      }
    }
  }
  const auto leaves = tree.observed();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (std::size_t j = i + 1; j < leaves.size(); ++j) {
      out.pair_moments.emplace(LeafPair::of(leaves[i], leaves[j]),
                               cross_moment(model, out, leaves[i], leaves[j]));
    }
  }
  return out;
}

const Matrix& SampleBatch::leaf(NodeId x) const {
  const auto it = std::lower_bound(leaves.begin(), leaves.end(), x);
  if (it == leaves.end() || *it != x) throw DimensionError("leaf " + std::to_string(x) + " not in batch");
  return data[static_cast<std::size_t>(it - leaves.begin())];
}

void SampleBatch::validate() const {
  if (leaves.size() != data.size()) throw DimensionError("sample batch leaf/data size mismatch");
  if (!std::is_sorted(leaves.begin(), leaves.end())) throw DimensionError("batch leaves must be sorted");
  for (const auto& m : data) {
    if (static_cast<std::size_t>(m.rows()) != n_samples) {
      throw DimensionError("every leaf must carry the same number of samples");
    }
    if (!m.allFinite()) throw NumericError("sample batch contains non-finite values");
  }
}

SampleBatch sample(const LinearTreeModel& model, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw DomainError("need at least one sample");
  const auto& tree = model.tree;
  const auto rows = static_cast<Eigen::Index>(n);
  Rng rng(seed);
  SampleBatch batch;
  batch.n_samples = n;
  batch.seed = seed;
  batch.leaves = tree.observed();
  std::vector<Matrix> values(tree.size());

  if (model.family == Family::gaussian) {
    for (NodeId u : tree.preorder()) {
      const auto idx = static_cast<std::size_t>(u);
      const auto dim = static_cast<Eigen::Index>(model.dim(u));
      if (u == tree.root()) {
        const Matrix chol = model.root_moment.llt().matrixL();
        values[idx] = gaussian_matrix(rng, rows, dim) * chol.transpose();
      } else {
        const Matrix& parent = values[static_cast<std::size_t>(tree.parent(u))];
        // Noise covariance may be singular (zero noise), so factor via eigenvalues.
        Eigen::SelfAdjointEigenSolver<Matrix> eig(model.noise_cov[idx]);
        const Matrix l =
            eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
        values[idx] = parent * model.edge_map[idx].transpose() +
                      gaussian_matrix(rng, rows, dim) * l.transpose();
      }
    }
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto draw = [&](const auto& probs) {
      const double r = unif(rng);
      double acc = 0.0;
      const auto m = probs.size();
      for (Eigen::Index s = 0; s < m; ++s) {
        acc += probs(s);
        if (r < acc) return s;
      }
      return m - 1;
    };
    std::vector<std::vector<Eigen::Index>> state(tree.size());
    for (NodeId u : tree.preorder()) {
      const auto idx = static_cast<std::size_t>(u);
      auto& st = state[idx];
      st.resize(n);
      if (u == tree.root()) {
        const Vector pi = model.root_moment.diagonal();
        for (auto& s : st) s = draw(pi);
      } else {
        const auto& ps = state[static_cast<std::size_t>(tree.parent(u))];
        const Matrix& table = model.edge_map[idx];
        for (std::size_t i = 0; i < n; ++i) st[i] = draw(table.col(ps[i]));
      }
    }
    for (NodeId x : batch.leaves) {
      Matrix m = Matrix::Zero(rows, static_cast<Eigen::Index>(model.d));
      const auto& st = state[static_cast<std::size_t>(x)];
      for (Eigen::Index i = 0; i < rows; ++i) m(i, st[static_cast<std::size_t>(i)]) = 1.0;
      values[static_cast<std::size_t>(x)] = std::move(m);
    }
  }
  for (NodeId x : batch.leaves) batch.data.push_back(std::move(values[static_cast<std::size_t>(x)]));
  return batch;
}

double mu_from_moments(NodeKind kind_u, NodeKind kind_v, const Matrix& uu, const Matrix& uv,
                       const Matrix& vv, std::size_t k) {
  Matrix m = uv;
  if (kind_u == NodeKind::hidden) m = inverse_sqrt_spd(uu) * m;
  if (kind_v == NodeKind::hidden) m = m * inverse_sqrt_spd(vv);
  return log_det_k(m, k);
}

double mu_metric(const LinearTreeModel& model, const PopulationMoments& moments, NodeId u,
                 NodeId v) {
  if (u == v) throw DomainError("mu is defined for distinct nodes");
  const auto& tree = model.tree;
  return mu_from_moments(tree.kind(u), tree.kind(v),
                         moments.node_second_moments[static_cast<std::size_t>(u)],
                         cross_moment(model, moments, u, v),
                         moments.node_second_moments[static_cast<std::size_t>(v)], model.k);
}

double rho_squared(const LinearTreeModel& model, const PopulationMoments& moments, NodeId h,
                   NodeId g) {
  const Matrix hg = cross_moment(model, moments, h, g);
  const double log_rho_sq =
      2.0 * log_abs_det(hg) - log_abs_det(moments.node_second_moments[static_cast<std::size_t>(h)]) -
      log_abs_det(moments.node_second_moments[static_cast<std::size_t>(g)]);
  return std::exp(log_rho_sq);
}

namespace {

// Adjacent hidden pairs attain rho_max (rho is multiplicative along paths),
// but the diagnostics enumerate every pair anyway.
std::pair<double, std::pair<NodeId, NodeId>> rho_max_of(const LinearTreeModel& model,
                                                        const PopulationMoments& moments) {
  const auto hidden = model.tree.hidden();
  double best = 0.0;
  std::pair<NodeId, NodeId> arg{-1, -1};
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    for (std::size_t j = i + 1; j < hidden.size(); ++j) {
      const double r = std::sqrt(rho_squared(model, moments, hidden[i], hidden[j]));
      if (r > best) {
        best = r;
        arg = {hidden[i], hidden[j]};
      }
    }
  }
  return {best, arg};
}

}  // namespace

double gamma_min_of(const LatentTree& tree, const PopulationMoments& moments, std::size_t k,
                    NodeId* argmin) {
  std::map<LeafPair, double> sk;
  for (const auto& [pair, m] : moments.pair_moments) sk[pair] = sigma_k(m, k);
  const auto corr = [&](NodeId x, NodeId y) { return sk.at(LeafPair::of(x, y)); };

  double gamma = std::numeric_limits<double>::infinity();
  for (NodeId h : tree.hidden()) {
    const auto groups = tree.leaves_around(h);
    for (std::size_t a = 0; a < groups.size(); ++a) {
      for (std::size_t b = a + 1; b < groups.size(); ++b) {
        for (std::size_t c = b + 1; c < groups.size(); ++c) {
          double best = 0.0;
          for (NodeId x1 : groups[a]) {
            for (NodeId x2 : groups[b]) {
              const double c12 = corr(x1, x2);
              if (c12 <= best) continue;
              for (NodeId x3 : groups[c]) {
                best = std::max(best, std::min({c12, corr(x1, x3), corr(x2, x3)}));
              }
            }
          }
          if (best < gamma) {
            gamma = best;
            if (argmin) *argmin = h;
          }
        }
      }
    }
  }
  return gamma;
}

double required_samples(std::size_t k, double B, double M, double t, double gamma_min,
                        double gamma_max, double rho_max) {
  const double gap = gamma_min * gamma_min / gamma_max * (1.0 - rho_max);
  if (!(gap > 0.0)) return std::numeric_limits<double>::infinity();
  const double kk = static_cast<double>(k);
  return 200.0 * kk * kk * B * t / (gap * gap) + 7.0 * kk * M * M * t / gap;
}

ModelDiagnostics model_diagnostics(const LinearTreeModel& model, double eta,
                                   const DiagnosticsOptions& options) {
  if (!(eta > 0.0 && eta < 1.0)) throw DomainError("eta must lie in (0, 1)");
  const auto moments = population_moments(model);
  const auto& tree = model.tree;
  const auto leaves = tree.observed();
  const std::size_t k = model.k;

  ModelDiagnostics diag;
  std::tie(diag.rho_max, diag.rho_argmax) = rho_max_of(model, moments);
  diag.gamma_min = gamma_min_of(tree, moments, k, &diag.gamma_argmin);
  for (const auto& [pair, m] : moments.pair_moments) {
    diag.gamma_max = std::max(diag.gamma_max, spectral_norm(m));
  }

  // Fourth-moment functionals. Discrete leaves are unit coordinate vectors,
  // so ||x|| = 1 and E[||y||^2 x x^T] = E[x x^T]. Gaussian leaves use the
  // Isserlis identities:
  //   E[||y||^2 x x^T] = tr(S_yy) S_xx + 2 S_xy S_yx
  //   E[||x||^2 ||y||^2] = tr(S_xx) tr(S_yy) + 2 tr(S_xy S_yx)
  std::optional<SampleBatch> draws;
  if (model.family == Family::gaussian) {
    draws = sample(model, options.mc_draws, options.mc_seed);
    diag.M_is_empirical = true;
    diag.mc_draws = options.mc_draws;
    diag.mc_seed = options.mc_seed;
    for (const auto& m : draws->data) {
      diag.M = std::max(diag.M, std::sqrt(m.rowwise().squaredNorm().maxCoeff()));
    }
  } else {
    diag.M = 1.0;
  }

  diag.t = 0.0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (std::size_t j = i + 1; j < leaves.size(); ++j) {
      const NodeId x = leaves[i];
      const NodeId y = leaves[j];
      const Matrix& sxx = moments.node_second_moments[static_cast<std::size_t>(x)];
      const Matrix& syy = moments.node_second_moments[static_cast<std::size_t>(y)];
      const Matrix sxy = moments.pair(x, y);
      double b = 0.0;
      double fourth = 0.0;
      if (model.family == Family::discrete) {
        b = std::max(spectral_norm(sxx), spectral_norm(syy));
        fourth = 1.0;
      } else {
        const Matrix wx = syy.trace() * sxx + 2.0 * sxy * sxy.transpose();
        const Matrix wy = sxx.trace() * syy + 2.0 * sxy.transpose() * sxy;
        b = std::max(spectral_norm(wx), spectral_norm(wy));
        fourth = sxx.trace() * syy.trace() + 2.0 * (sxy * sxy.transpose()).trace();
      }
      const double dbar = std::max(1.0, (fourth - sxy.squaredNorm()) / b);
      diag.B = std::max(diag.B, b);
      diag.d_bar = std::max(diag.d_bar, dbar);
      diag.t = std::max(diag.t, t_factor_tree(dbar, leaves.size(), eta));

      if (draws) {
        // Batch-means standard error of the Monte-Carlo estimate of B.
        constexpr int kBatches = 10;
        const Eigen::Index per = static_cast<Eigen::Index>(draws->n_samples) / kBatches;
        const Matrix& xs = draws->leaf(x);
        const Matrix& ys = draws->leaf(y);
        std::vector<double> est;
        for (int bi = 0; bi < kBatches && per > 0; ++bi) {
          est.push_back(estimate_plugins(xs.middleRows(bi * per, per), ys.middleRows(bi * per, per)).B);
        }
        const double full = estimate_plugins(xs, ys).B;
        if (full > diag.B_monte_carlo && !est.empty()) {
          double mean = 0.0;
          for (double e : est) mean += e;
          mean /= static_cast<double>(est.size());
          double var = 0.0;
          for (double e : est) var += (e - mean) * (e - mean);
          var /= static_cast<double>(est.size() - 1);
          diag.B_monte_carlo = full;
          diag.B_std_error = std::sqrt(var / static_cast<double>(est.size()));
        }
      }
    }
  }

  diag.rho_violation = !(diag.rho_max < 1.0);
  diag.gamma_violation = !(diag.gamma_min > 0.0);
  diag.n_required = required_samples(k, diag.B, diag.M, diag.t, diag.gamma_min, diag.gamma_max,
                                     diag.rho_max);
  if (diag.rho_violation || diag.gamma_violation) {
    diag.n_required = std::numeric_limits<double>::infinity();
  }

  const double kk = static_cast<double>(k);
  const double ratio = diag.gamma_max > 0.0 ? diag.gamma_min / diag.gamma_max : 0.0;
  diag.eps_min = diag.rho_max > 0.0 ? std::min(1.0 / diag.rho_max - 1.0, 1.0) : 1.0;
  diag.epsilon = ratio / (8.0 * kk + ratio);
  diag.theta = diag.gamma_min / (1.0 + diag.epsilon);
  diag.varsigma = ratio * (1.0 - diag.epsilon) * diag.theta;
  return diag;
}

ConditionReport check_conditions(const LinearTreeModel& model) {
  ConditionReport rep;
  const auto& tree = model.tree;
  const auto violations = tree.structural_violations();
  rep.structure.pass = violations.empty();
  rep.structure.witness = static_cast<double>(violations.size());
  rep.structure.detail = violations.empty() ? "ok" : violations.front();
  if (!rep.structure.pass) {
    for (auto* c : {&rep.linear_means, &rep.rank, &rep.non_redundancy, &rep.correlation}) {
      c->detail = "skipped: invalid tree structure";
    }
    return rep;
  }

  try {
    model.validate();
    rep.linear_means.pass = true;
    rep.linear_means.detail = model.family == Family::discrete
                                  ? "conditional tables are column-stochastic"
                                  : "linear-Gaussian conditionals";
  } catch (const std::exception& e) {
    rep.linear_means.detail = e.what();
    for (auto* c : {&rep.rank, &rep.non_redundancy, &rep.correlation}) {
      c->detail = "skipped: malformed parameters";
    }
    return rep;
  }

  const std::size_t k = model.k;
  double min_sk = std::numeric_limits<double>::infinity();
  std::string rank_detail = "ok";
  for (std::size_t u = 0; u < tree.size(); ++u) {
    if (static_cast<NodeId>(u) == tree.root()) continue;
    const double s = sigma_k(model.edge_map[u], k);
    if (s < min_sk) {
      min_sk = s;
      rank_detail = "smallest sigma_k on edge map of node " + std::to_string(u);
    }
  }
  std::optional<PopulationMoments> moments;
  try {
    moments = population_moments(model);
  } catch (const NumericError& e) {
    rank_detail = e.what();
    min_sk = 0.0;
  }
  if (moments) {
    for (NodeId h : tree.hidden()) {
      const double s = sigma_k(moments->node_second_moments[static_cast<std::size_t>(h)], k);
      if (s < min_sk) {
        min_sk = s;
        rank_detail = "smallest sigma_k on E[hh^T] of node " + std::to_string(h);
      }
    }
  }
  rep.rank.witness = min_sk;
  rep.rank.pass = min_sk > 0.0;
  rep.rank.detail = rank_detail;

  if (!moments) {
    rep.non_redundancy.detail = "skipped: moments unavailable";
    rep.correlation.detail = "skipped: moments unavailable";
    return rep;
  }
  const auto [rho, arg] = rho_max_of(model, *moments);
  rep.non_redundancy.witness = rho;
  rep.non_redundancy.pass = rho < 1.0 - 1e-9;
  rep.non_redundancy.detail = "rho_max attained at hidden pair (" + std::to_string(arg.first) +
                              ", " + std::to_string(arg.second) + ")";

  NodeId where = -1;
  const double gamma = gamma_min_of(tree, *moments, k, &where);
  rep.correlation.witness = gamma;
  rep.correlation.pass = gamma > 0.0;
  rep.correlation.detail = "gamma_min attained around hidden node " + std::to_string(where);
  return rep;
}

LinearTreeModel attach_parameters(const LatentTree& tree, Family family, std::size_t k,
                                  std::size_t d, const ConditionMargins& margins,
                                  std::uint64_t seed) {
  tree.validate();
  if (k < 1 || d < k) throw GenerationError("need 1 <= k <= d");
  if (!(margins.rho_cap > 0.0 && margins.rho_cap < 1.0)) {
    throw GenerationError("rho_cap must lie in (0, 1)");
  }
  if (!(margins.min_sv > 0.0 && margins.min_sv <= 1.0)) {
    throw GenerationError("min_sv must lie in (0, 1]");
  }
  if (family == Family::discrete && k < 2) {
    // A one-state hidden variable is constant, so rho = 1 on every edge.
    throw GenerationError("discrete models need k >= 2 hidden states");
  }
  if (family == Family::discrete && kRootMarginalFloor * static_cast<double>(k) >= 1.0) {
    throw GenerationError("k too large for the root-marginal floor");
  }

  Rng rng(seed);
  const auto kk = static_cast<Eigen::Index>(k);
  const auto dd = static_cast<Eigen::Index>(d);
  const double cap_sq = margins.rho_cap * margins.rho_cap;
  std::uniform_real_distribution<double> noise_scale(0.1, 0.5);

  for (int attempt = 0; attempt < kModelAttempts; ++attempt) {
    LinearTreeModel m;
    m.tree = tree;
    m.family = family;
    m.k = k;
    m.d = d;
    m.edge_map.assign(tree.size(), Matrix());
    if (family == Family::gaussian) m.noise_cov.assign(tree.size(), Matrix());
    std::vector<Matrix> second(tree.size());

    if (family == Family::gaussian) {
      const Matrix u = random_orthogonal(rng, kk);
      m.root_moment = u * uniform_vector(rng, kk, 0.5, 1.5).asDiagonal() * u.transpose();
    } else {
      const Vector pi = kRootMarginalFloor +
                        (1.0 - kRootMarginalFloor * static_cast<double>(k)) *
                            dirichlet_ones(rng, kk).array();
      m.root_moment = pi.asDiagonal();
    }
    second[static_cast<std::size_t>(tree.root())] = m.root_moment;

    bool ok = true;
    for (NodeId u : tree.preorder()) {
      if (u == tree.root()) continue;
      const auto idx = static_cast<std::size_t>(u);
      const Matrix& parent = second[static_cast<std::size_t>(tree.parent(u))];
      const bool hidden = !tree.is_observed(u);
      const Eigen::Index rows = hidden ? kk : dd;
      bool accepted = false;
      for (int e = 0; e < kEdgeAttempts && !accepted; ++e) {
        Matrix map = family == Family::gaussian ? random_linear_map(rng, rows, kk, margins.min_sv, 1.0)
                                                : random_stochastic_map(rng, rows, kk);
        if (sigma_k(map, k) < margins.min_sv) continue;
        Matrix noise;
        if (family == Family::gaussian) {
          const double s = noise_scale(rng);
          noise = s * s * Matrix::Identity(rows, rows);
        }
        Matrix child = child_second_moment(family, map, parent, noise);
        if (hidden) {
          if (top_singular_values(child, k).values.back() <= 0.0) continue;
          const Matrix hg = parent * map.transpose();
          const double rsq =
              std::exp(2.0 * log_abs_det(hg) - log_abs_det(parent) - log_abs_det(child));
          if (!(rsq <= cap_sq)) continue;
        }
        m.edge_map[idx] = std::move(map);
        if (family == Family::gaussian) m.noise_cov[idx] = std::move(noise);
        second[idx] = std::move(child);
        accepted = true;
      }
      if (!accepted) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    const auto report = check_conditions(m);
    if (report.all_pass() && report.non_redundancy.witness <= margins.rho_cap) return m;
  }
  throw GenerationError("could not draw parameters meeting the requested margins");
}

}  // namespace spectree
