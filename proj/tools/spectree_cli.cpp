// Command-line front end. Exit codes: 0 success, 1 reconstruction failure,
// 2 input error, 3 internal defect.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spectree/errors.hpp"
#include "spectree/harness.hpp"
#include "spectree/serialization.hpp"

using namespace spectree;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInput = 2;
constexpr int kExitDefect = 3;

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
  } else {
    write_file(out_path, text);
  }
}

struct ThresholdFlags {
  double eta = 0.1;
  std::string delta_mode = "formula";
  double grid_min = 1e-4;
  double grid_max = 1.0;
  std::size_t grid_points = 25;
  std::optional<double> min_correlation;

  void add_to(CLI::App* app) {
    app->add_option("--eta", eta, "Failure probability for the whole tree")->check(CLI::Range(0.0, 1.0));
    app->add_option("--delta-mode", delta_mode, "formula, global or fixed:<value>");
    app->add_option("--grid-min", grid_min, "Smallest width in the tuning grid");
    app->add_option("--grid-max", grid_max, "Largest width in the tuning grid");
    app->add_option("--grid-points", grid_points, "Number of log-spaced tuning widths");
    app->add_option("--min-correlation", min_correlation,
                    "Skip candidate pairs whose best sigma_k is below this value");
  }
  DeltaGrid grid() const { return {grid_min, grid_max, grid_points}; }
  SrgOptions options() const {
    SrgOptions o;
    o.min_correlation = min_correlation;
    return o;
  }
};

// Moments come either from a sample file or, for a model file, exactly.
struct MomentSource {
  std::string samples;
  std::string model;

  void add_to(CLI::App* app) {
    auto* s = app->add_option("--samples", samples, "Sample file (text or binary)");
    auto* m = app->add_option("--model", model, "Model file; exact population moments are used");
    s->excludes(m);
  }

  struct Loaded {
    std::optional<SampleBatch> batch;
    MomentProvider moments;
  };

  Loaded load() const {
    Loaded out;
    if (!samples.empty()) {
      out.batch = load_samples(samples);
      out.moments = empirical_moments(*out.batch);
    } else if (!model.empty()) {
      const auto m = model_from_json(read_file(model));
      out.moments = MomentProvider::from_population(population_moments(m), m.tree.observed());
    } else {
      throw ConfigError("one of --samples or --model is required");
    }
    return out;
  }
};

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size() || v < 1.0) throw std::invalid_argument(tok);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("invalid sample size '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("no sample sizes given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent tree structure learning by spectral recursive grouping"};
  app.require_subcommand(1);

  std::string out_path;
  std::uint64_t seed = 1;
  std::size_t k = 1;

  // generate
  auto* gen = app.add_subcommand("generate", "Draw a random latent tree model");
  std::size_t n_leaves = 8;
  std::size_t max_degree = 4;
  std::string family = "gaussian";
  std::size_t d = 0;
  double rho_cap = 0.95;
  double min_sv = 0.3;
  gen->add_option("--leaves", n_leaves, "Number of observed leaves")->check(CLI::Range(3, 1000));
  gen->add_option("--max-degree", max_degree, "Largest hidden-node degree")->check(CLI::Range(3, 1000));
  gen->add_option("--family", family, "gaussian or discrete");
  gen->add_option("--k", k, "Hidden dimension")->check(CLI::PositiveNumber);
  gen->add_option("--d", d, "Observed dimension (defaults to k)");
  gen->add_option("--rho-cap", rho_cap, "Upper bound imposed on rho_max");
  gen->add_option("--min-sv", min_sv, "Lower bound on sigma_k of every edge map");
  gen->add_option("--seed", seed, "Random seed");
  gen->add_option("--out", out_path, "Output file (default stdout)");

  // sample
  auto* smp = app.add_subcommand("sample", "Draw samples from a model");
  std::string model_path;
  std::size_t n_samples = 1000;
  std::string format = "text";
  smp->add_option("--model", model_path, "Model file")->required();
  smp->add_option("--n-samples", n_samples, "Number of samples")->check(CLI::PositiveNumber);
  smp->add_option("--seed", seed, "Random seed");
  smp->add_option("--format", format, "text or binary")->check(CLI::IsMember({"text", "binary"}));
  smp->add_option("--out", out_path, "Output file")->required();

  // moments
  auto* mom = app.add_subcommand("moments", "Pairwise second-moment matrices");
  MomentSource mom_src;
  mom_src.add_to(mom);
  mom->add_option("--out", out_path, "Output file (default stdout)");

  // thresholds
  auto* thr = app.add_subcommand("thresholds", "Confidence widths for every leaf pair");
  MomentSource thr_src;
  ThresholdFlags thr_flags;
  thr_src.add_to(thr);
  thr_flags.add_to(thr);
  thr->add_option("--k", k, "Hidden dimension")->check(CLI::PositiveNumber);
  thr->add_option("--out", out_path, "Output file (default stdout)");

  // learn
  auto* lrn = app.add_subcommand("learn", "Reconstruct the tree");
  MomentSource lrn_src;
  ThresholdFlags lrn_flags;
  std::string newick_path;
  lrn_src.add_to(lrn);
  lrn_flags.add_to(lrn);
  lrn->add_option("--k", k, "Hidden dimension")->check(CLI::PositiveNumber);
  lrn->add_option("--out", out_path, "Tree document (default stdout)");
  lrn->add_option("--newick", newick_path, "Also write the parenthesised form here");

  // eval
  auto* evl = app.add_subcommand("eval", "Compare a learned tree with a reference");
  std::string learned_path;
  std::string truth_path;
  evl->add_option("--learned", learned_path, "Learned tree document")->required();
  evl->add_option("--truth", truth_path, "Reference tree or model document")->required();
  evl->add_option("--out", out_path, "Output file (default stdout)");

  // quartet
  auto* qrt = app.add_subcommand("quartet", "Run one quartet test on sampled data");
  std::string samples_path;
  std::vector<NodeId> quartet_leaves;
  double delta_conf = 0.05;
  qrt->add_option("--samples", samples_path, "Sample file")->required();
  qrt->add_option("--leaves", quartet_leaves, "Four leaf ids")->required()->expected(4)->delimiter(',');
  qrt->add_option("--k", k, "Hidden dimension")->check(CLI::PositiveNumber);
  qrt->add_option("--delta", delta_conf, "Per-quartet failure probability");
  qrt->add_option("--out", out_path, "Output file (default stdout)");

  // diagnose
  auto* dia = app.add_subcommand("diagnose", "Model conditions and sample-size requirement");
  double dia_eta = 0.1;
  dia->add_option("--model", model_path, "Model file")->required();
  dia->add_option("--eta", dia_eta, "Failure probability for the whole tree");
  dia->add_option("--seed", seed, "Seed for Monte-Carlo estimates");
  dia->add_option("--out", out_path, "Output file (default stdout)");

  // sweep
  auto* swp = app.add_subcommand("sweep", "Recovery rate over sample sizes");
  ThresholdFlags swp_flags;
  std::string n_list = "1000,10000,100000";
  std::size_t trials = 20;
  std::size_t jobs = 1;
  std::string csv_path;
  swp->add_option("--model", model_path, "Model file")->required();
  swp_flags.add_to(swp);
  swp->add_option("--n-samples", n_list, "Comma-separated sample sizes");
  swp->add_option("--trials", trials, "Trials per sample size")->check(CLI::PositiveNumber);
  swp->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  swp->add_option("--seed", seed, "Base seed");
  swp->add_option("--csv", csv_path, "Per-trial rows (N,trial,recovered,rf,seconds)");
  swp->add_option("--out", out_path, "Summary document (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*gen) {
      const auto tree = generate_tree(n_leaves, max_degree, seed);
      const auto model = attach_parameters(tree, family_from_string(family), k, d == 0 ? k : d,
                                           {rho_cap, min_sv}, seed);
      emit(out_path, model_to_json(model));
    } else if (*smp) {
      const auto model = model_from_json(read_file(model_path));
      save_samples(out_path, sample(model, n_samples, seed), sample_format_from_string(format));
    } else if (*mom) {
      emit(out_path, moments_to_json(mom_src.load().moments));
    } else if (*thr) {
      const auto src = thr_src.load();
      const auto build = build_thresholds(src.batch ? &*src.batch : nullptr, src.moments, k,
                                          thr_flags.eta, DeltaModeSpec::parse(thr_flags.delta_mode),
                                          thr_flags.grid(), thr_flags.options());
      emit(out_path, thresholds_to_json(build));
    } else if (*lrn) {
      const auto src = lrn_src.load();
      const auto opts = lrn_flags.options();
      const auto build = build_thresholds(src.batch ? &*src.batch : nullptr, src.moments, k,
                                          lrn_flags.eta, DeltaModeSpec::parse(lrn_flags.delta_mode),
                                          lrn_flags.grid(), opts);
      const auto result = spectral_recursive_grouping(src.moments, build.table,
                                                      src.moments.leaves(), k, opts);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
      if (result.failed()) {
        std::cerr << "reconstruction failed: " << result.failure_reason << '\n';
        return kExitFailure;
      }
      emit(out_path, tree_to_json(*result.tree));
      if (!newick_path.empty()) write_file(newick_path, result.tree->to_newick() + "\n");
    } else if (*evl) {
      const auto learned = tree_from_json(read_file(learned_path));
      const auto truth = tree_from_json(read_file(truth_path));
      const auto cmp = compare_trees(learned, truth);
      std::ostringstream s;
      s << "{\n  \"isomorphic\": " << (cmp.isomorphic ? "true" : "false")
        << ",\n  \"rf_distance\": " << cmp.rf_distance << "\n}\n";
      emit(out_path, s.str());
    } else if (*qrt) {
      const auto batch = load_samples(samples_path);
      const auto run = quartet_from_batch(
          batch, {quartet_leaves[0], quartet_leaves[1], quartet_leaves[2], quartet_leaves[3]}, k,
          delta_conf);
      std::ostringstream s;
      s << "{\n  \"result\": \""
        << (run.evaluation.result ? run.evaluation.result->to_string() : std::string("abstain"))
        << "\",\n  \"widths\": [";
      for (std::size_t i = 0; i < run.widths.size(); ++i) {
        const auto& w = run.widths[i];
        s << (i ? ", " : "") << "{\"pair\": [" << w.pair.a << ", " << w.pair.b
          << "], \"delta\": " << w.delta << ", \"t\": " << w.t << "}";
      }
      s << "]\n}\n";
      emit(out_path, s.str());
    } else if (*dia) {
      const auto model = model_from_json(read_file(model_path));
      const auto report = check_conditions(model);
      DiagnosticsOptions opts;
      opts.mc_seed = seed;
      emit(out_path, diagnostics_to_json(model_diagnostics(model, dia_eta, opts)));
      if (!report.all_pass()) {
        std::cerr << "warning: model violates at least one identifiability condition\n";
      }
    } else if (*swp) {
      const auto model = model_from_json(read_file(model_path));
      RunConfig cfg;
      cfg.eta = swp_flags.eta;
      cfg.delta_mode = DeltaModeSpec::parse(swp_flags.delta_mode);
      cfg.grid = swp_flags.grid();
      cfg.seed = seed;
      cfg.jobs = jobs;
      cfg.min_correlation = swp_flags.min_correlation;
      const auto result = run_sweep(model, cfg, parse_sizes(n_list), trials);
      if (!csv_path.empty()) write_file(csv_path, result.to_csv());
      std::ostringstream s;
      s << "{\n  \"delta_mode\": \"" << cfg.delta_mode.to_string() << "\",\n  \"trials\": " << trials
        << ",\n  \"recovery\": [";
      for (std::size_t i = 0; i < result.recovery_rates.size(); ++i) {
        s << (i ? ", " : "") << "{\"N\": " << result.recovery_rates[i].first
          << ", \"rate\": " << result.recovery_rates[i].second << "}";
      }
      s << "]\n}\n";
      emit(out_path, s.str());
    }
  } catch (const DefectError& e) {
    std::cerr << "internal defect: " << e.what() << '\n';
    return kExitDefect;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const GenerationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "internal defect: " << e.what() << '\n';
    return kExitDefect;
  }
  return kExitOk;
}
