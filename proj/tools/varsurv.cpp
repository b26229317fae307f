// varsurv command-line tool: simulate, fit, simstudy, diagnose.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include <unistd.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "varsurv/datagen.hpp"
#include "varsurv/diagnostics.hpp"
#include "varsurv/io.hpp"
#include "varsurv/joint.hpp"
#include "varsurv/lmm.hpp"
#include "varsurv/naive.hpp"
#include "varsurv/simstudy.hpp"
#include "varsurv/survival.hpp"

namespace fs = std::filesystem;
using namespace varsurv;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

int default_parallelism() {
  if (const char* env = std::getenv("VARSURV_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid VARSURV_THREADS='" << env << "'\n";
  }
  return 1;
}

std::string now_utc() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json provenance(const std::string& command, const std::vector<std::string>& argv) {
  return {{"tool", "varsurv"}, {"version", kVersion}, {"command", command}, {"argv", argv}, {"created", now_utc()}};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw io::FormatError("cannot create output directory '" + dir.string() + "'");
}

// ---- simulate ----

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void cmd_simulate(const SimulateArgs& a, const std::vector<std::string>& argv) {
  SimConfig cfg = io::sim_config_from_json(io::read_text(a.config));
  if (a.seed) cfg.seed = *a.seed;
  const SimulatedData d = generate_dataset(cfg);
  ensure_dir(a.out);
  const fs::path out(a.out);
  io::write_csv(out / "longitudinal.csv", io::to_csv(d.longitudinal));
  io::write_csv(out / "survival.csv", io::to_csv(d.survival));
  io::write_csv(out / "truth.csv", io::to_csv(d.truth));
  if (!d.covariates.names.empty()) io::write_csv(out / "covariates.csv", io::to_csv(d.covariates));
  json prov = provenance("simulate", argv);
  prov["config"] = json::parse(io::to_json(cfg));
  prov["warnings"] = d.warnings;
  prov["individuals_without_measurements"] = d.no_measurements;
  io::write_text(out / "provenance.json", prov.dump(2) + "\n");
  for (const auto& w : d.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << d.survival.rows.size() << " individuals, " << d.longitudinal.rows.size()
            << " measurements to " << out.string() << "\n";
}

// ---- fit ----

struct FitArgs {
  std::string method;
  std::string data_dir;
  std::string longitudinal, survival, covariates, truth, stage1;
  std::string out;
  std::optional<double> t_sep;
  int K = 15;
  int chains = 3;
  int burn_in = 1000;
  int samples = 1000;
  int thin = 1;
  int min_measurements = 2;
  std::string sd_denominator = "n";
  std::uint64_t seed = 1;
  int threads = 0;
  std::vector<std::string> fixed;
  std::vector<std::string> adjust;
  bool individual_draws = false;
};

std::string resolve(const std::string& explicit_path, const std::string& dir, const char* name, bool required) {
  if (!explicit_path.empty()) return explicit_path;
  if (!dir.empty()) {
    const fs::path p = fs::path(dir) / name;
    if (fs::exists(p)) return p.string();
  }
  if (required) throw InvalidInput(std::string("missing input ") + name + " (use --data or an explicit path)");
  return "";
}

void write_fit_report(const fs::path& out, json report, const std::vector<std::string>& warnings) {
  report["warnings"] = warnings;
  io::write_text(out / "report.json", report.dump(2) + "\n");
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

void cmd_fit(const FitArgs& a, const std::vector<std::string>& argv) {
  std::string method;
  for (char ch : a.method) method.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  const bool is_lmm = method.rfind("lmm", 0) == 0;
  const bool is_jm = method.rfind("jm", 0) == 0;
  if (!(is_lmm || is_jm || method == "naive" || method == "true-values" || method == "stage2"))
    throw InvalidInput("unknown method '" + a.method + "' (naive, lmm1-4, jm1-4, true-values, stage2)");

  const std::string surv_path = resolve(a.survival, a.data_dir, "survival.csv", true);
  SurvivalDataset surv = io::survival_from_csv(io::read_csv(surv_path));
  const std::string cov_path = resolve(a.covariates, a.data_dir, "covariates.csv", false);
  CovariateTable cov;
  if (!cov_path.empty()) cov = io::covariates_from_csv(io::read_csv(cov_path));
  if ((!a.fixed.empty() || !a.adjust.empty()) && cov.names.empty())
    throw InvalidInput("--fixed/--adjust need a covariates file");

  LongitudinalDataset lon;
  const bool needs_lon = is_lmm || is_jm || method == "naive";
  if (needs_lon) lon = io::longitudinal_from_csv(io::read_csv(resolve(a.longitudinal, a.data_dir, "longitudinal.csv", true)));
  if (a.t_sep) {
    if (!needs_lon) throw InvalidInput("--t-sep applies to methods that use longitudinal data");
    std::tie(lon, surv) = landmark_split(lon, surv, *a.t_sep);
  }

  ensure_dir(a.out);
  const fs::path out(a.out);
  json report = provenance("fit", argv);
  report["method"] = method;
  std::vector<std::string> warnings;

  McmcSettings mc;
  mc.n_chains = a.chains;
  mc.burn_in = a.burn_in;
  mc.n_samples = a.samples;
  mc.thinning = a.thin;
  mc.seed = a.seed;
  mc.max_threads = a.threads > 0 ? a.threads : default_parallelism();
  FitOptions opts;
  opts.keep_individual_draws = a.individual_draws;

  auto stage2 = [&](const Stage1Estimates& s1) {
    const CoxFit cox = two_stage_fit(s1, surv, cov, a.adjust);
    io::write_csv(out / "cox.csv", io::to_csv(cox));
    report["cox"] = {{"events", cox.n_events}, {"iterations", cox.iterations},
                     {"log_partial_likelihood", cox.log_partial_likelihood}};
  };
  auto posterior = [&](const PosteriorSamples& s, const std::vector<BlockStats>& blocks) {
    io::write_csv(out / "posterior_summary.csv", io::to_csv(summarize(s)));
    io::write_csv(out / "draws.csv", io::draws_to_csv(s));
    io::write_csv(out / "diagnostics.csv", io::to_csv(blocks));
  };

  if (method == "naive") {
    const NaiveTable table = naive_table(lon, a.min_measurements, sd_denominator_from_string(a.sd_denominator));
    const Stage1Estimates s1 = to_stage1(table);
    io::write_csv(out / "stage1.csv", io::to_csv(s1));
    report["excluded"] = table.excluded;
    if (!table.excluded.empty())
      warnings.push_back(std::to_string(table.excluded.size()) + " individual(s) with fewer than " +
                         std::to_string(a.min_measurements) + " measurements excluded");
    stage2(s1);
  } else if (method == "true-values") {
    const std::string truth_path = resolve(a.truth, a.data_dir, "truth.csv", false);
    if (truth_path.empty()) throw InvalidInput("true-values needs truth.csv (simulated data only)");
    Stage1Estimates s1;
    for (const auto& t : io::truth_from_csv(io::read_csv(truth_path))) s1.rows.push_back({t.id, t.b0, t.sigma, std::nullopt});
    stage2(s1);
  } else if (method == "stage2") {
    if (a.stage1.empty()) throw InvalidInput("stage2 needs --stage1 (output of a naive or lmm fit)");
    stage2(io::stage1_from_csv(io::read_csv(a.stage1)));
  } else {
    const LmmVariant variant = lmm_variant_from_string(method);
    LmmSpec spec;
    spec.variant = variant;
    spec.fixed_covariates = a.fixed;
    const Cohort cohort = make_cohort(lon, surv, cov);
    if (is_lmm) {
      const LmmFit fit = fit_lmm(cohort, spec, PriorSpec{}, mc, opts);
      warnings = fit.warnings;
      io::write_csv(out / "stage1.csv", io::to_csv(fit.stage1));
      posterior(fit.samples, fit.blocks);
      report["excluded"] = fit.excluded;
      stage2(fit.stage1);
    } else {
      JointSpec js;
      js.lmm = spec;
      js.K = a.K;
      js.survival_covariates = a.adjust;
      const JointFit fit = fit_joint(cohort, js, PriorSpec{}, mc, opts);
      warnings = fit.warnings;
      io::write_csv(out / "effects.csv", io::to_csv(fit.effects));
      posterior(fit.samples, fit.blocks);
      report["cutpoints"] = fit.cutpoints;
      report["dic"] = {{"mean_deviance", fit.mean_deviance}, {"p_d", fit.p_d}, {"dic", fit.dic}};
    }
    report["mcmc"] = {{"chains", mc.n_chains}, {"burn_in", mc.burn_in}, {"samples", mc.n_samples},
                      {"thin", mc.thinning}, {"seed", mc.seed}};
  }
  write_fit_report(out, report, warnings);
  std::cout << "wrote " << method << " results to " << out.string() << "\n";
}

// ---- simstudy ----

struct StudyArgs {
  std::string grid;
  std::string out;
  int parallelism = 0;
  bool paper_scale = false;
  bool fresh = false;
};

void cmd_simstudy(const StudyArgs& a, const std::vector<std::string>& argv) {
  StudyGrid grid = io::study_grid_from_json(io::read_text(a.grid));
  if (a.paper_scale) grid.n_replications = 1000;
  validate(grid);
  ensure_dir(a.out);
  const fs::path out(a.out);
  const fs::path raw_path = out / "raw_estimates.csv";

  StudyOptions opts;
  opts.parallelism = a.parallelism > 0 ? a.parallelism : default_parallelism();
  if (!a.fresh && fs::exists(raw_path)) {
    opts.completed = io::raw_from_csv(io::read_csv(raw_path));
    std::cerr << "resuming: " << opts.completed.size() << " stored estimates\n";
  } else {
    io::write_csv(raw_path, io::raw_to_csv({}));
  }
  std::ofstream raw_out(raw_path, std::ios::binary | std::ios::app);
  if (!raw_out) throw io::FormatError("cannot append to '" + raw_path.string() + "'");
  std::size_t done = 0;
  const bool tty = isatty(STDERR_FILENO) != 0;
  const std::size_t total = grid_points(grid).size() * static_cast<std::size_t>(grid.n_replications);
  opts.on_unit_done = [&](const std::vector<ReplicateEstimate>& est) {
    // only the rows, the header is already in the file
    io::CsvTable t = io::raw_to_csv(est);
    std::ostringstream ss;
    io::write_csv(ss, t);
    const std::string text = ss.str();
    raw_out << text.substr(text.find("\r\n") + 2);
    raw_out.flush();
    ++done;
    if (tty)
      std::cerr << "\rcompleted " << done << " unit(s) this run (" << total << " in the grid)" << std::flush;
    else if (done % 10 == 0)
      std::cerr << "completed " << done << " unit(s) this run (" << total << " in the grid)\n";
  };
  const StudyResult res = run_study(grid, opts);
  if (tty) std::cerr << "\n";

  io::write_csv(out / "metrics.csv", io::metrics_to_csv(res.points, res.rows));
  io::write_csv(raw_path, io::raw_to_csv(res.raw));  // canonical order

  // plot data: estimate distributions are the raw file; scatter of naive level
  // vs log SD for the first replication of the first grid point
  {
    SimConfig c = res.points.front();
    c.seed = replication_seed(grid.base.seed, 0);
    const SimulatedData d = generate_dataset(c);
    const NaiveTable nt = naive_table(d.longitudinal, grid.min_measurements, grid.naive_sd_denominator);
    io::CsvTable t{{"id", "level", "log_sd"}, {}};
    for (const auto& r : nt.rows)
      if (r.sd > 0.0) t.rows.push_back({std::to_string(r.id), io::format_double(r.level), io::format_double(std::log(r.sd))});
    io::write_csv(out / "plot_level_logsd.csv", t);
  }
  json prov = provenance("simstudy", argv);
  prov["grid"] = json::parse(io::to_json(grid));
  prov["flags"] = res.flags;
  io::write_text(out / "provenance.json", prov.dump(2) + "\n");
  for (const auto& f : res.flags) std::cerr << "flag: " << f << "\n";
  std::cout << "wrote " << res.rows.size() << " metrics rows to " << (out / "metrics.csv").string() << "\n";
}

// ---- diagnose ----

struct DiagnoseArgs {
  std::string draws;
  std::string out;
  int max_lag = 1;
};

void cmd_diagnose(const DiagnoseArgs& a) {
  const PosteriorSamples s = io::draws_from_csv(io::read_csv(a.draws));
  validate(s);
  io::CsvTable t = io::to_csv(summarize(s));
  if (a.max_lag > 1) {
    for (int k = 2; k <= a.max_lag; ++k) t.header.push_back("acf" + std::to_string(k));
    for (std::size_t j = 0; j < s.parameter_names.size(); ++j) {
      std::vector<double> acf;
      try {
        acf = autocorrelation(s, s.parameter_names[j], a.max_lag);
      } catch (const std::exception&) {
        acf.assign(static_cast<std::size_t>(a.max_lag), std::numeric_limits<double>::quiet_NaN());
      }
      for (int k = 2; k <= a.max_lag; ++k) t.rows[j].push_back(io::format_double(acf[static_cast<std::size_t>(k - 1)]));
    }
  }
  if (a.out.empty())
    io::write_csv(std::cout, t);
  else
    io::write_csv(a.out, t);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Visit-to-visit variability and survival: simulation, two-stage and joint models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Generate a synthetic dataset from a JSON config");
  s->add_option("--config", sim.config, "Simulation config (JSON)")->required();
  s->add_option("--out", sim.out, "Output directory")->required();
  s->add_option("--seed", sim.seed, "Override the config seed");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Fit one method to a dataset");
  f->add_option("method", fit.method, "naive, lmm1-4, jm1-4, true-values or stage2")->required();
  f->add_option("--data", fit.data_dir, "Directory with longitudinal.csv, survival.csv[, covariates.csv, truth.csv]");
  f->add_option("--longitudinal", fit.longitudinal, "Longitudinal CSV (id,time,value)");
  f->add_option("--survival", fit.survival, "Survival CSV (id,time,event)");
  f->add_option("--covariates", fit.covariates, "Covariates CSV (id,<names>)");
  f->add_option("--truth", fit.truth, "Truth CSV (id,b0,sigma) for true-values");
  f->add_option("--stage1", fit.stage1, "Stage-one CSV (id,level,sd[,slope]) for stage2");
  f->add_option("--out", fit.out, "Output directory")->required();
  f->add_option("--t-sep", fit.t_sep, "Separation time: measurements before, survival after");
  f->add_option("--K", fit.K, "Baseline hazard intervals (joint models)")->check(CLI::PositiveNumber);
  f->add_option("--chains", fit.chains, "MCMC chains")->check(CLI::PositiveNumber);
  f->add_option("--burnin", fit.burn_in, "Burn-in updates per chain")->check(CLI::NonNegativeNumber);
  f->add_option("--samples", fit.samples, "Retained draws per chain")->check(CLI::PositiveNumber);
  f->add_option("--thin", fit.thin, "Updates between retained draws")->check(CLI::PositiveNumber);
  f->add_option("--min-measurements", fit.min_measurements, "Naive method: minimum measurements per individual")
      ->check(CLI::PositiveNumber);
  f->add_option("--sd-denominator", fit.sd_denominator, "Naive method: SD denominator, n or n-1")
      ->check(CLI::IsMember({"n", "n-1"}));
  f->add_option("--seed", fit.seed, "MCMC seed");
  f->add_option("--threads", fit.threads, "Chains run in parallel (default: VARSURV_THREADS or 1)");
  f->add_option("--fixed", fit.fixed, "Covariates in the longitudinal mean")->delimiter(',');
  f->add_option("--adjust", fit.adjust, "Covariates in the hazard")->delimiter(',');
  f->add_flag("--individual-draws", fit.individual_draws, "Store per-individual draws in draws.csv");

  StudyArgs study;
  auto* st = app.add_subcommand("simstudy", "Run a replication study from a JSON grid");
  st->add_option("--grid", study.grid, "Study grid (JSON)")->required();
  st->add_option("--out", study.out, "Output directory")->required();
  st->add_option("--parallelism", study.parallelism, "Worker threads (default: VARSURV_THREADS or 1)");
  st->add_flag("--paper-scale", study.paper_scale, "Use 1000 replications");
  st->add_flag("--fresh", study.fresh, "Ignore stored raw estimates instead of resuming");

  DiagnoseArgs diag;
  auto* dg = app.add_subcommand("diagnose", "R-hat, autocorrelation and effective draws for stored draws");
  dg->add_option("--draws", diag.draws, "draws.csv written by fit")->required();
  dg->add_option("--out", diag.out, "Output CSV (default: stdout)");
  dg->add_option("--max-lag", diag.max_lag, "Report autocorrelations up to this lag")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*s) cmd_simulate(sim, args);
    if (*f) cmd_fit(fit, args);
    if (*st) cmd_simstudy(study, args);
    if (*dg) cmd_diagnose(diag);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
