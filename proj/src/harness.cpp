#include "spectree/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "spectree/errors.hpp"

namespace spectree {

namespace {

using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Zero when the pair carries no signal at all (an identically zero leaf).
double width_for(const PairPlugins& p, double t, std::size_t n) {
  if (p.B <= 0.0 || p.M_i <= 0.0 || p.M_j <= 0.0) return 0.0;
  ConfidenceParams c;
  c.B = p.B;
  c.M_i = p.M_i;
  c.M_j = p.M_j;
  c.d_bar = p.d_bar;
  c.t = t;
  c.N = n;
  return delta_bernstein(c);
}

Json json_number_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

MomentProvider empirical_moments(const SampleBatch& batch) {
  batch.validate();
  if (batch.n_samples < 1) throw DomainError("need at least one sample");
  const double n = static_cast<double>(batch.n_samples);
  std::map<LeafPair, Matrix> pairs;
  for (std::size_t i = 0; i < batch.leaves.size(); ++i) {
    for (std::size_t j = i + 1; j < batch.leaves.size(); ++j) {
      pairs[LeafPair::of(batch.leaves[i], batch.leaves[j])] =
          batch.data[i].transpose() * batch.data[j] / n;
    }
  }
  return MomentProvider(MomentProvider::Source::empirical, batch.leaves, std::move(pairs));
}

DeltaModeSpec DeltaModeSpec::parse(const std::string& s) {
  if (s == "formula") return {DeltaMode::formula, 0.0};
  if (s == "global") return {DeltaMode::global, 0.0};
  constexpr std::string_view prefix = "fixed:";
  if (s.rfind(prefix, 0) == 0) {
    const std::string rest = s.substr(prefix.size());
    double v = 0.0;
    std::size_t used = 0;
    try {
      v = std::stod(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != rest.size() || std::isnan(v) || v < 0.0) {
      throw ConfigError("fixed width must be a non-negative number, got '" + rest + "'");
    }
    return {DeltaMode::fixed, v};
  }
  throw ConfigError("unknown delta mode '" + s + "' (expected formula, global or fixed:<value>)");
}

std::string DeltaModeSpec::to_string() const {
  switch (mode) {
    case DeltaMode::formula: return "formula";
    case DeltaMode::global: return "global";
    case DeltaMode::fixed: {
      std::ostringstream s;
      s << "fixed:" << fixed_value;
      return s.str();
    }
  }
  return "unknown";
}

void DeltaGrid::validate() const {
  if (!(min > 0.0) || !(max > min) || !std::isfinite(max)) {
    throw ConfigError("grid bounds must satisfy 0 < min < max");
  }
  if (points < 8) throw ConfigError("tuning grid needs at least 8 points");
}

std::vector<double> DeltaGrid::values() const {
  validate();
  std::vector<double> out(points);
  const double lo = std::log(min);
  const double hi = std::log(max);
  for (std::size_t i = 0; i < points; ++i) {
    out[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  out.front() = min;
  out.back() = max;
  return out;
}

std::vector<PairWidth> formula_widths(const SampleBatch& batch, double eta) {
  if (!(eta > 0.0 && eta < 1.0)) throw DomainError("eta must lie in (0, 1)");
  std::vector<PairWidth> out;
  const std::size_t n_leaves = batch.leaves.size();
  for (std::size_t i = 0; i < n_leaves; ++i) {
    for (std::size_t j = i + 1; j < n_leaves; ++j) {
      PairWidth w;
      w.pair = LeafPair::of(batch.leaves[i], batch.leaves[j]);
      w.plugins = estimate_plugins(batch.data[i], batch.data[j]);
      w.t = t_factor_tree(w.plugins.d_bar, n_leaves, eta);
      w.delta = width_for(w.plugins, w.t, batch.n_samples);
      out.push_back(w);
    }
  }
  return out;
}

TuningResult tune_global_delta(const MomentProvider& moments, const std::vector<NodeId>& leaves,
                               std::size_t k, const std::vector<double>& grid,
                               const SrgOptions& options) {
  if (grid.size() < 8) throw ConfigError("tuning grid needs at least 8 points");
  TuningResult out;
  for (double delta : grid) {
    const auto table = ThresholdTable::uniform(leaves, delta);
    auto r = spectral_recursive_grouping(moments, table, leaves, k, options);
    const bool uninformative = !r.failed() && r.stats.resolved_quartets == 0;
    out.trace.push_back({delta, r.failed(), uninformative, std::move(r.tree)});
  }
  std::size_t best_first = 0;
  std::size_t best_len = 0;
  const auto usable = [&](std::size_t idx) {
    return !out.trace[idx].failed && !out.trace[idx].uninformative;
  };
  std::size_t i = 0;
  while (i < out.trace.size()) {
    if (!usable(i)) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < out.trace.size() && usable(j) &&
           compare_trees(*out.trace[i].tree, *out.trace[j].tree).isomorphic) {
      ++j;
    }
    // >= so that later (larger-width) plateaus win ties.
    if (j - i >= best_len) {
      best_first = i;
      best_len = j - i;
    }
    i = j;
  }
  if (best_len > 0) {
    out.plateau_first = best_first;
    out.plateau_length = best_len;
    out.delta = out.trace[best_first + best_len / 2].delta;
  }
  return out;
}

ThresholdBuild build_thresholds(const SampleBatch* batch, const MomentProvider& moments,
                                std::size_t k, double eta, const DeltaModeSpec& mode,
                                const DeltaGrid& grid, const SrgOptions& options) {
  ThresholdBuild out;
  out.requested = mode;
  const auto& leaves = moments.leaves();

  const auto use_formula = [&]() {
    out.table = ThresholdTable{};
    out.table.mode = ThresholdTable::Mode::per_pair_formula;
    if (batch == nullptr) {
      // Exact moments carry no estimation error.
      out.table = ThresholdTable::uniform(leaves, 0.0);
      out.table.mode = ThresholdTable::Mode::per_pair_formula;
      return;
    }
    out.pair_widths = formula_widths(*batch, eta);
    for (const auto& w : out.pair_widths) out.table.widths[w.pair] = w.delta;
  };

  switch (mode.mode) {
    case DeltaMode::formula:
      use_formula();
      break;
    case DeltaMode::fixed:
      out.table = ThresholdTable::uniform(leaves, mode.fixed_value);
      break;
    case DeltaMode::global: {
      out.tuning = tune_global_delta(moments, leaves, k, grid.values(), options);
      if (out.tuning->delta) {
        out.table = ThresholdTable::uniform(leaves, *out.tuning->delta);
      } else {
        use_formula();
        out.fell_back_to_formula = true;
      }
      break;
    }
  }
  out.table.validate(leaves);
  return out;
}

void RunConfig::validate() const {
  if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("eta must lie in (0, 1)");
  if (delta_mode.mode == DeltaMode::global) grid.validate();
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (min_correlation && !(*min_correlation >= 0.0)) {
    throw ConfigError("min-correlation must be non-negative");
  }
}

std::string RunReport::to_json(bool include_timing) const {
  Json doc;
  doc["recovered"] = recovered;
  doc["rf_distance"] = rf_distance;
  doc["failed"] = failed;
  doc["failure_reason"] = failure_reason;
  doc["iterations"] = iterations;
  if (include_timing) doc["seconds"] = seconds;
  doc["n_leaves"] = n_leaves;
  doc["k"] = k;
  doc["n_samples"] = n_samples;
  doc["moment_source"] = n_samples == 0 ? "population" : "empirical";
  doc["sample_seed"] = sample_seed;

  Json th;
  th["mode"] = threshold_mode;
  th["delta_min"] = json_number_or_null(delta_min);
  th["delta_max"] = json_number_or_null(delta_max);
  th["delta_mean"] = json_number_or_null(delta_mean);
  if (tuned_delta) {
    th["tuned_delta"] = *tuned_delta;
    th["tuning_rule"] = "heuristic: midpoint of the longest stable-topology plateau";
  }
  th["fell_back_to_formula"] = fell_back_to_formula;
  doc["thresholds"] = std::move(th);

  if (diagnostics) {
    Json d;
    d["rho_max"] = diagnostics->rho_max;
    d["gamma_min"] = diagnostics->gamma_min;
    d["gamma_max"] = diagnostics->gamma_max;
    d["n_required"] = json_number_or_null(diagnostics->n_required);
    doc["diagnostics"] = std::move(d);
  }

  Json st;
  st["iterations"] = stats.iterations;
  st["mergeable_calls"] = stats.mergeable_calls;
  st["quartet_tests"] = stats.quartet_tests;
  st["cache_hits"] = stats.cache_hits;
  st["resolved_quartets"] = stats.resolved_quartets;
  st["invariant_checks"] = stats.invariant_checks;
  st["defaulted_relationships"] = stats.defaulted_relationships;
  doc["stats"] = std::move(st);
  doc["newick"] = tree ? Json(tree->to_newick()) : Json(nullptr);
  return doc.dump(2) + "\n";
}

RunReport run_experiment(const LinearTreeModel& model, const RunConfig& config,
                         const std::optional<ModelDiagnostics>& diagnostics) {
  config.validate();
  const auto start = Clock::now();
  RunReport report;
  const auto leaves = model.tree.observed();
  report.n_leaves = leaves.size();
  report.k = model.k;
  report.n_samples = config.n_samples;
  report.diagnostics = diagnostics;

  std::optional<SampleBatch> batch;
  MomentProvider moments;
  if (config.n_samples == 0) {
    moments = MomentProvider::from_population(population_moments(model), leaves);
  } else {
    report.sample_seed = config.seed;
    batch = sample(model, config.n_samples, config.seed);
    moments = empirical_moments(*batch);
  }

  SrgOptions options;
  options.memoize = config.memoize;
  options.verify_invariants = config.verify_invariants;
  options.min_correlation = config.min_correlation;

  const auto build = build_thresholds(batch ? &*batch : nullptr, moments, model.k, config.eta,
                                      config.delta_mode, config.grid, options);
  report.threshold_mode = config.delta_mode.to_string();
  report.fell_back_to_formula = build.fell_back_to_formula;
  if (build.tuning) report.tuned_delta = build.tuning->delta;
  if (!build.table.widths.empty()) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    double sum = 0.0;
    for (const auto& [_, w] : build.table.widths) {
      lo = std::min(lo, w);
      hi = std::max(hi, w);
      sum += w;
    }
    report.delta_min = lo;
    report.delta_max = hi;
    report.delta_mean = sum / static_cast<double>(build.table.widths.size());
  }

  const auto result = spectral_recursive_grouping(moments, build.table, leaves, model.k, options);
  report.stats = result.stats;
  report.iterations = result.stats.iterations;
  report.failed = result.failed();
  report.failure_reason = result.failure_reason;
  if (!result.failed()) {
    const auto cmp = compare_trees(*result.tree, model.tree);
    report.rf_distance = cmp.rf_distance;
    report.recovered = cmp.isomorphic;
    report.tree = result.tree;
  }
  report.seconds = seconds_since(start);
  return report;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ b);
}

std::string SweepResult::to_csv() const {
  std::ostringstream out;
  out << "N,trial,recovered,rf,seconds\n";
  for (const auto& r : rows) {
    out << r.n_samples << ',' << r.trial << ',' << (r.recovered ? 1 : 0) << ',' << r.rf_distance
        << ',' << r.seconds << '\n';
  }
  return out.str();
}

SweepResult run_sweep(const LinearTreeModel& model, const RunConfig& config,
                      const std::vector<std::size_t>& n_values, std::size_t trials) {
  config.validate();
  for (std::size_t n : n_values) {
    if (n < 1) throw ConfigError("sweep sample sizes must be at least 1");
  }
  SweepResult out;
  out.rows.resize(n_values.size() * trials);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;

  const auto worker = [&]() {
    while (true) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= out.rows.size()) return;
      const std::size_t n = n_values[idx / trials];
      const std::size_t trial = idx % trials;
      try {
        RunConfig c = config;
        c.n_samples = n;
        c.seed = derive_seed(config.seed, n, trial);
        c.jobs = 1;
        const auto rep = run_experiment(model, c);
        out.rows[idx] = {n, trial, rep.recovered, rep.rf_distance, rep.seconds};
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(out.rows.size());
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(config.jobs, out.rows.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  for (std::size_t i = 0; i < n_values.size(); ++i) {
    std::size_t ok = 0;
    for (std::size_t t = 0; t < trials; ++t) ok += out.rows[i * trials + t].recovered ? 1 : 0;
    out.recovery_rates.emplace_back(n_values[i], trials == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(trials));
  }
  return out;
}

QuartetRun quartet_from_batch(const SampleBatch& batch, std::array<NodeId, 4> labels,
                              std::size_t k, double delta_conf) {
  QuartetInput in;
  in.labels = labels;
  in.k = k;
  QuartetRun run;
  const double n = static_cast<double>(batch.n_samples);
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      const auto slot = static_cast<std::size_t>(pair_slot(i, j));
      const Matrix& xi = batch.leaf(labels[static_cast<std::size_t>(i)]);
      const Matrix& xj = batch.leaf(labels[static_cast<std::size_t>(j)]);
      in.sigma_hat[slot] = xi.transpose() * xj / n;
      PairWidth& w = run.widths[slot];
      w.pair = LeafPair::of(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(j)]);
      w.plugins = estimate_plugins(xi, xj);
      w.t = t_factor_quartet(w.plugins.d_bar, delta_conf);
      w.delta = width_for(w.plugins, w.t, batch.n_samples);
      in.delta[slot] = w.delta;
    }
  }
  in.validate();
  run.spectra = QuartetSpectra::from_input(in);
  run.evaluation = evaluate_quartet(run.spectra);
  return run;
}

namespace {

Json matrix_rows(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string moments_to_json(const MomentProvider& moments) {
  Json doc;
  doc["source"] = moments.source() == MomentProvider::Source::population ? "population" : "empirical";
  doc["leaves"] = moments.leaves();
  Json pairs = Json::array();
  for (const auto& [p, m] : moments.pairs()) {
    pairs.push_back(Json{{"pair", {p.a, p.b}}, {"moment", matrix_rows(m)}});
  }
  doc["pairs"] = std::move(pairs);
  return doc.dump(2) + "\n";
}

std::string thresholds_to_json(const ThresholdBuild& build) {
  Json doc;
  doc["mode"] = build.requested.to_string();
  doc["fell_back_to_formula"] = build.fell_back_to_formula;
  if (build.tuning) {
    Json t;
    t["rule"] = "heuristic: midpoint of the longest stable-topology plateau";
    t["delta"] = build.tuning->delta ? Json(*build.tuning->delta) : Json(nullptr);
    t["plateau_first"] = build.tuning->plateau_first;
    t["plateau_length"] = build.tuning->plateau_length;
    Json trace = Json::array();
    for (const auto& p : build.tuning->trace) {
      trace.push_back(Json{{"delta", p.delta},
                           {"failed", p.failed},
                           {"uninformative", p.uninformative},
                           {"newick", p.tree ? Json(p.tree->to_newick()) : Json(nullptr)}});
    }
    t["trace"] = std::move(trace);
    doc["tuning"] = std::move(t);
  }
  std::map<LeafPair, const PairWidth*> details;
  for (const auto& w : build.pair_widths) details[w.pair] = &w;
  Json widths = Json::array();
  for (const auto& [p, delta] : build.table.widths) {
    Json entry{{"pair", {p.a, p.b}}, {"delta", json_number_or_null(delta)}};
    if (const auto it = details.find(p); it != details.end()) {
      const auto& pl = it->second->plugins;
      entry["B"] = pl.B;
      entry["M_i"] = pl.M_i;
      entry["M_j"] = pl.M_j;
      entry["d_bar"] = pl.d_bar;
      entry["t"] = it->second->t;
    }
    widths.push_back(std::move(entry));
  }
  doc["widths"] = std::move(widths);
  return doc.dump(2) + "\n";
}

std::string diagnostics_to_json(const ModelDiagnostics& d) {
  Json doc;
  doc["rho_max"] = d.rho_max;
  doc["rho_argmax"] = {d.rho_argmax.first, d.rho_argmax.second};
  doc["gamma_min"] = d.gamma_min;
  doc["gamma_argmin"] = d.gamma_argmin;
  doc["gamma_max"] = d.gamma_max;
  doc["B"] = d.B;
  doc["M"] = d.M;
  doc["M_is_empirical"] = d.M_is_empirical;
  doc["B_monte_carlo"] = d.B_monte_carlo;
  doc["B_std_error"] = d.B_std_error;
  doc["mc_draws"] = d.mc_draws;
  doc["mc_seed"] = d.mc_seed;
  doc["t"] = d.t;
  doc["d_bar"] = d.d_bar;
  doc["n_required"] = json_number_or_null(d.n_required);
  doc["eps_min"] = d.eps_min;
  doc["epsilon"] = d.epsilon;
  doc["theta"] = d.theta;
  doc["varsigma"] = d.varsigma;
  doc["rho_violation"] = d.rho_violation;
  doc["gamma_violation"] = d.gamma_violation;
  return doc.dump(2) + "\n";
}

}  // namespace spectree
