#include "varsurv/simstudy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "varsurv/diagnostics.hpp"
#include "varsurv/joint.hpp"
#include "varsurv/lmm.hpp"
#include "varsurv/naive.hpp"
#include "varsurv/survival.hpp"

namespace varsurv {

std::string to_string(Method m) {
  switch (m) {
    case Method::TrueValues:
      return "TrueValues";
    case Method::Naive:
      return "Naive";
    case Method::LMM1:
      return "LMM1";
    case Method::LMM2:
      return "LMM2";
    case Method::JM1:
      return "JM1";
    case Method::JM2:
      return "JM2";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  std::string t;
  for (char ch : s)
    if (ch != '-' && ch != '_') t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (t == "truevalues" || t == "true") return Method::TrueValues;
  if (t == "naive") return Method::Naive;
  if (t == "lmm1") return Method::LMM1;
  if (t == "lmm2") return Method::LMM2;
  if (t == "jm1") return Method::JM1;
  if (t == "jm2") return Method::JM2;
  throw InvalidInput("unknown study method '" + s + "' (expected TrueValues, Naive, LMM1, LMM2, JM1 or JM2)");
}

std::vector<SimConfig> grid_points(const StudyGrid& grid) {
  const std::vector<int> ns = grid.n_measurements.empty() ? std::vector<int>{grid.base.n_measurements} : grid.n_measurements;
  const std::vector<std::pair<double, double>> as =
      grid.associations.empty() ? std::vector<std::pair<double, double>>{{grid.base.alpha0, grid.base.alpha_sigma}}
                                : grid.associations;
  const std::vector<double> rs = grid.rho.empty() ? std::vector<double>{grid.base.rho} : grid.rho;
  std::vector<SimConfig> out;
  for (int n : ns) {
    for (const auto& [a0, as_] : as) {
      for (double r : rs) {
        SimConfig c = grid.base;
        c.n_measurements = n;
        c.alpha0 = a0;
        c.alpha_sigma = as_;
        c.rho = r;
        out.push_back(c);
      }
    }
  }
  return out;
}

void validate(const StudyGrid& grid) {
  if (grid.n_replications < 1) throw InvalidInput("n_replications must be >= 1");
  if (grid.methods.empty()) throw InvalidInput("no methods selected");
  if (grid.K < 1) throw InvalidInput("K must be >= 1");
  if (grid.min_measurements < 1) throw InvalidInput("min_measurements must be >= 1");
  validate(grid.lmm_mcmc);
  validate(grid.jm_mcmc);
  for (const auto& c : grid_points(grid)) validate(c);
}

MetricsRow metrics(const std::vector<double>& estimates, const std::vector<Interval>& intervals, double truth) {
  if (estimates.empty()) throw InvalidInput("metrics need at least one estimate");
  if (intervals.size() != estimates.size()) throw InvalidInput("one interval per estimate required");
  MetricsRow row;
  row.true_value = truth;
  const auto R = static_cast<double>(estimates.size());
  double sum = 0.0, sq_err = 0.0;
  for (double e : estimates) {
    sum += e;
    sq_err += (e - truth) * (e - truth);
  }
  row.mean_estimate = sum / R;
  row.rmse = std::sqrt(sq_err / R);
  if (estimates.size() >= 2) {
    double ss = 0.0;
    for (double e : estimates) ss += (e - row.mean_estimate) * (e - row.mean_estimate);
    row.sd_estimate = std::sqrt(ss / (R - 1.0));
  } else {
    row.flagged = true;
    row.note = "single replicate: SD undefined";
  }
  int covered = 0;
  for (const auto& iv : intervals)
    if (iv.lower <= truth && truth <= iv.upper) ++covered;
  row.coverage = covered / R;
  row.n_used = static_cast<int>(estimates.size());
  return row;
}

double omitted_correlation_bias(double beta1, double sigma1, double sigma2, double rho) {
  if (!(sigma2 > 0.0)) throw InvalidInput("sigma2 must be positive");
  return rho * beta1 * sigma1 / sigma2;
}

std::uint64_t replication_seed(std::uint64_t base_seed, int replication) {
  return mix64(base_seed ^ mix64(static_cast<std::uint64_t>(replication) + 1));
}

namespace {

std::vector<ReplicateEstimate> from_cox(const CoxFit& fit, Method m) {
  std::vector<ReplicateEstimate> out;
  for (const auto& [coef, label] : {std::pair{"level", "alpha0"}, std::pair{"sd", "alpha_sigma"}}) {
    ReplicateEstimate r;
    r.method = m;
    r.parameter = label;
    r.estimate = fit.coefficient(coef);
    const auto [lo, hi] = fit.wald_interval(coef);
    r.interval = {lo, hi};
    out.push_back(r);
  }
  return out;
}

void fail_on_convergence(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings)
    if (w.rfind("chains have not converged", 0) == 0) throw NumericalError(w);
}

}  // namespace

std::vector<ReplicateEstimate> run_method(Method method, const SimulatedData& data, const StudyGrid& grid,
                                          std::uint64_t seed) {
  switch (method) {
    case Method::TrueValues: {
      Stage1Estimates s;
      for (const auto& t : data.truth) s.rows.push_back({t.id, t.b0, t.sigma, std::nullopt});
      return from_cox(two_stage_fit(s, data.survival), method);
    }
    case Method::Naive: {
      const NaiveTable table = naive_table(data.longitudinal, grid.min_measurements, grid.naive_sd_denominator);
      return from_cox(two_stage_fit(to_stage1(table), data.survival), method);
    }
    case Method::LMM1:
    case Method::LMM2: {
      LmmSpec spec;
      spec.variant = method == Method::LMM1 ? LmmVariant::LMM1 : LmmVariant::LMM2;
      McmcSettings mc = grid.lmm_mcmc;
      mc.seed = mix64(seed ^ static_cast<std::uint64_t>(method));
      const LmmFit fit = fit_lmm(make_cohort(data.longitudinal, data.survival), spec, PriorSpec{}, mc);
      fail_on_convergence(fit.warnings);
      return from_cox(two_stage_fit(fit.stage1, data.survival), method);
    }
    case Method::JM1:
    case Method::JM2: {
      JointSpec spec;
      spec.lmm.variant = method == Method::JM1 ? LmmVariant::LMM1 : LmmVariant::LMM2;
      spec.K = grid.K;
      McmcSettings mc = grid.jm_mcmc;
      mc.seed = mix64(seed ^ static_cast<std::uint64_t>(method));
      const JointFit fit = fit_joint(make_cohort(data.longitudinal, data.survival), spec, PriorSpec{}, mc);
      fail_on_convergence(fit.warnings);
      std::vector<ReplicateEstimate> out;
      for (const char* name : {"alpha0", "alpha_sigma"}) {
        const auto draws = fit.samples.column(name);
        ReplicateEstimate r;
        r.method = method;
        r.parameter = name;
        double m = 0.0;
        for (double x : draws) m += x;
        r.estimate = m / static_cast<double>(draws.size());
        r.interval = {quantile(draws, 0.025), quantile(draws, 0.975)};
        out.push_back(r);
      }
      return out;
    }
  }
  throw InvalidInput("unsupported method");
}

std::vector<MetricsRow> aggregate(const std::vector<SimConfig>& points, const std::vector<ReplicateEstimate>& raw,
                                  std::vector<std::string>* flags) {
  struct Acc {
    std::vector<double> est;
    std::vector<Interval> iv;
    std::set<int> failed_reps;
    std::set<int> reps;
  };
  std::map<std::tuple<int, Method, std::string>, Acc> groups;
  for (const auto& r : raw) {
    for (const char* p : {"alpha0", "alpha_sigma"}) {
      if (r.failed || r.parameter == p) {
        auto& g = groups[{r.point, r.method, std::string(p)}];
        g.reps.insert(r.replication);
        if (r.failed) {
          g.failed_reps.insert(r.replication);
        } else {
          g.est.push_back(r.estimate);
          g.iv.push_back(r.interval);
        }
      }
    }
  }
  std::vector<MetricsRow> rows;
  for (auto& [key, g] : groups) {
    const auto& [point, method, param] = key;
    if (point < 0 || static_cast<std::size_t>(point) >= points.size())
      throw InvalidInput("raw estimate refers to unknown grid point " + std::to_string(point));
    const SimConfig& c = points[static_cast<std::size_t>(point)];
    const double truth = param == "alpha0" ? c.alpha0 : c.alpha_sigma;
    MetricsRow row;
    if (!g.est.empty()) {
      row = metrics(g.est, g.iv, truth);
    } else {
      row.true_value = truth;
      row.mean_estimate = row.rmse = row.coverage = std::numeric_limits<double>::quiet_NaN();
      row.flagged = true;
      row.note = "every replication failed";
    }
    row.point = point;
    row.method = method;
    row.parameter = param;
    row.n_failed = static_cast<int>(g.failed_reps.size());
    const double fail_rate = static_cast<double>(row.n_failed) / static_cast<double>(g.reps.size());
    if (fail_rate > 0.05) {
      row.flagged = true;
      std::ostringstream msg;
      msg << row.n_failed << " of " << g.reps.size() << " replications failed";
      row.note = row.note.empty() ? msg.str() : row.note + "; " + msg.str();
    }
    if (row.flagged && flags) {
      flags->push_back("point " + std::to_string(point) + ", " + to_string(method) + ", " + param + ": " + row.note);
    }
    rows.push_back(row);
  }
  return rows;
}

StudyResult run_study(const StudyGrid& grid, const StudyOptions& options) {
  validate(grid);
  StudyResult result;
  result.points = grid_points(grid);
  const int n_points = static_cast<int>(result.points.size());

  std::set<std::tuple<int, int, Method>> done;
  for (const auto& r : options.completed) {
    if (r.point < 0 || r.point >= n_points) continue;
    if (std::find(grid.methods.begin(), grid.methods.end(), r.method) == grid.methods.end()) continue;
    if (r.replication >= grid.n_replications) continue;
    done.insert({r.point, r.replication, r.method});
    result.raw.push_back(r);
  }

  struct Unit {
    int point;
    int rep;
  };
  std::vector<Unit> units;
  for (int p = 0; p < n_points; ++p) {
    for (int r = 0; r < grid.n_replications; ++r) {
      bool needed = false;
      for (Method m : grid.methods) needed = needed || !done.count({p, r, m});
      if (needed) units.push_back({p, r});
    }
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::string fatal;
  auto worker = [&] {
    for (std::size_t u = next++; u < units.size(); u = next++) {
      const Unit unit = units[u];
      std::vector<ReplicateEstimate> out;
      try {
        SimConfig cfg = result.points[static_cast<std::size_t>(unit.point)];
        cfg.seed = replication_seed(grid.base.seed, unit.rep);
        const SimulatedData data = generate_dataset(cfg);
        for (Method m : grid.methods) {
          if (done.count({unit.point, unit.rep, m})) continue;
          try {
            auto est = run_method(m, data, grid, cfg.seed);
            for (auto& e : est) {
              e.point = unit.point;
              e.replication = unit.rep;
              out.push_back(std::move(e));
            }
          } catch (const std::exception& e) {
            ReplicateEstimate f;
            f.point = unit.point;
            f.replication = unit.rep;
            f.method = m;
            f.failed = true;
            f.error = e.what();
            out.push_back(std::move(f));
          }
        }
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        if (fatal.empty()) fatal = e.what();
        continue;
      }
      std::lock_guard lock(mu);
      result.raw.insert(result.raw.end(), out.begin(), out.end());
      if (options.on_unit_done) options.on_unit_done(out);
    }
  };
  const int threads = std::max(1, options.parallelism);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (!fatal.empty()) throw NumericalError("simulation study aborted: " + fatal);

  std::stable_sort(result.raw.begin(), result.raw.end(), [](const ReplicateEstimate& x, const ReplicateEstimate& y) {
    return std::tie(x.point, x.replication, x.method, x.parameter) <
           std::tie(y.point, y.replication, y.method, y.parameter);
  });
  result.rows = aggregate(result.points, result.raw, &result.flags);
  return result;
}

}  // namespace varsurv
