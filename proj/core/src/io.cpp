#include "varsurv/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace varsurv::io {

using nlohmann::json;

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return j;
  throw FormatError("missing column '" + name + "'");
}

CsvTable parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false, field_started = false, any = false;
  char ch;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };
  while (in.get(ch)) {
    any = true;
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && !field_started && field.empty()) {
      in_quotes = true;
      field_started = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\r') {
      if (in.peek() == '\n') in.get(ch);
      end_record();
    } else if (ch == '\n') {
      end_record();
    } else {
      field.push_back(ch);
      field_started = true;
    }
  }
  if (in_quotes) throw FormatError("unterminated quoted CSV field");
  if (any && (!field.empty() || !record.empty())) end_record();
  CsvTable t;
  if (records.empty()) throw FormatError("CSV input has no header row");
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      throw FormatError("CSV row " + std::to_string(r + 1) + " has " + std::to_string(records[r].size()) +
                        " fields, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "' for reading");
  try {
    return parse_csv(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

}  // namespace

void write_csv(std::ostream& out, const CsvTable& table) {
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (j) out << ',';
      out << quote(fields[j]);
    }
    out << "\r\n";
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  write_csv(out, table);
  if (!out) throw FormatError("failed writing '" + path.string() + "'");
}

std::string format_double(double x) {
  if (std::isnan(x)) return "NA";
  if (std::isinf(x)) return x > 0 ? "Inf" : "-Inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

double parse_double(const std::string& s, const std::string& context) {
  if (s == "NA" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (s == "Inf") return std::numeric_limits<double>::infinity();
  if (s == "-Inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError("'" + s + "' is not a number" + (context.empty() ? "" : " (" + context + ")"));
  return v;
}

namespace {

IndividualId parse_id(const std::string& s, std::size_t row) {
  IndividualId v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError("row " + std::to_string(row + 1) + ": id '" + s + "' is not an integer");
  return v;
}

bool parse_event(const std::string& s, std::size_t row) {
  if (s == "1" || s == "TRUE" || s == "true") return true;
  if (s == "0" || s == "FALSE" || s == "false") return false;
  throw FormatError("row " + std::to_string(row + 1) + ": event indicator '" + s + "' must be 0 or 1");
}

std::string ctx(std::size_t row, const char* col) { return "row " + std::to_string(row + 1) + ", column " + col; }

}  // namespace

CsvTable to_csv(const LongitudinalDataset& d) {
  CsvTable t{{"id", "time", "value"}, {}};
  for (const auto& r : d.rows) t.rows.push_back({std::to_string(r.id), format_double(r.time), format_double(r.value)});
  return t;
}

CsvTable to_csv(const SurvivalDataset& d) {
  CsvTable t{{"id", "time", "event"}, {}};
  for (const auto& r : d.rows)
    t.rows.push_back({std::to_string(r.id), format_double(r.followup_time), r.event ? "1" : "0"});
  return t;
}

CsvTable to_csv(const CovariateTable& d) {
  CsvTable t;
  t.header.push_back("id");
  t.header.insert(t.header.end(), d.names.begin(), d.names.end());
  for (const auto& r : d.rows) {
    std::vector<std::string> row = {std::to_string(r.id)};
    for (double v : r.values) row.push_back(format_double(v));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable to_csv(const std::vector<TruthRow>& truth) {
  CsvTable t{{"id", "b0", "sigma", "event_time"}, {}};
  for (const auto& r : truth)
    t.rows.push_back({std::to_string(r.id), format_double(r.b0), format_double(r.sigma), format_double(r.event_time)});
  return t;
}

CsvTable to_csv(const Stage1Estimates& s) {
  const bool slope = s.has_slope();
  CsvTable t{{"id", "level", "sd"}, {}};
  if (slope) t.header.push_back("slope");
  for (const auto& r : s.rows) {
    std::vector<std::string> row = {std::to_string(r.id), format_double(r.level), format_double(r.sd)};
    if (slope) row.push_back(format_double(r.slope.value_or(std::numeric_limits<double>::quiet_NaN())));
    t.rows.push_back(std::move(row));
  }
  return t;
}

LongitudinalDataset longitudinal_from_csv(const CsvTable& t) {
  const auto ci = t.column("id"), ct = t.column("time"), cv = t.column("value");
  LongitudinalDataset d;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    d.rows.push_back({parse_id(row[ci], r), parse_double(row[ct], ctx(r, "time")), parse_double(row[cv], ctx(r, "value"))});
  }
  return d;
}

SurvivalDataset survival_from_csv(const CsvTable& t) {
  const auto ci = t.column("id"), ct = t.column("time"), ce = t.column("event");
  SurvivalDataset d;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    d.rows.push_back({parse_id(row[ci], r), parse_double(row[ct], ctx(r, "time")), parse_event(row[ce], r)});
  }
  return d;
}

CovariateTable covariates_from_csv(const CsvTable& t) {
  const auto ci = t.column("id");
  CovariateTable d;
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (j == ci) continue;
    d.names.push_back(t.header[j]);
    cols.push_back(j);
  }
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    CovariateRow row{parse_id(t.rows[r][ci], r), {}};
    for (std::size_t j : cols) row.values.push_back(parse_double(t.rows[r][j], "row " + std::to_string(r + 1) + ", column " + t.header[j]));
    d.rows.push_back(std::move(row));
  }
  return d;
}

std::vector<TruthRow> truth_from_csv(const CsvTable& t) {
  const auto ci = t.column("id"), cb = t.column("b0"), cs = t.column("sigma");
  std::size_t ce = t.header.size();
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (t.header[j] == "event_time") ce = j;
  std::vector<TruthRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    TruthRow tr{parse_id(row[ci], r), parse_double(row[cb], ctx(r, "b0")), parse_double(row[cs], ctx(r, "sigma")), 0.0};
    if (ce < t.header.size()) tr.event_time = parse_double(row[ce], ctx(r, "event_time"));
    out.push_back(tr);
  }
  return out;
}

Stage1Estimates stage1_from_csv(const CsvTable& t) {
  const auto ci = t.column("id"), cl = t.column("level"), cs = t.column("sd");
  std::size_t cslope = t.header.size();
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (t.header[j] == "slope") cslope = j;
  Stage1Estimates s;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    Stage1Row out{parse_id(row[ci], r), parse_double(row[cl], ctx(r, "level")), parse_double(row[cs], ctx(r, "sd")),
                  std::nullopt};
    if (cslope < t.header.size()) out.slope = parse_double(row[cslope], ctx(r, "slope"));
    s.rows.push_back(out);
  }
  return s;
}

CsvTable to_csv(const CoxFit& fit) {
  CsvTable t{{"coefficient", "estimate", "se", "z", "lower95", "upper95"}, {}};
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    const auto [lo, hi] = fit.wald_interval(fit.names[k]);
    t.rows.push_back({fit.names[k], format_double(fit.coefficients[k]), format_double(fit.standard_errors[k]),
                      format_double(fit.coefficients[k] / fit.standard_errors[k]), format_double(lo), format_double(hi)});
  }
  return t;
}

CsvTable to_csv(const std::vector<ParameterSummary>& rows) {
  CsvTable t{{"parameter", "mean", "sd", "q2.5", "q97.5", "Rhat", "acf1", "ess"}, {}};
  for (const auto& r : rows)
    t.rows.push_back({r.name, format_double(r.mean), format_double(r.sd), format_double(r.q025), format_double(r.q975),
                      format_double(r.rhat), format_double(r.acf1), format_double(r.ess)});
  return t;
}

CsvTable draws_to_csv(const PosteriorSamples& s) {
  CsvTable t;
  t.header.push_back("chain");
  t.header.insert(t.header.end(), s.parameter_names.begin(), s.parameter_names.end());
  for (Eigen::Index i = 0; i < s.draws.rows(); ++i) {
    std::vector<std::string> row = {std::to_string(s.chain_ids[static_cast<std::size_t>(i)])};
    for (Eigen::Index j = 0; j < s.draws.cols(); ++j) row.push_back(format_double(s.draws(i, j)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

PosteriorSamples draws_from_csv(const CsvTable& t) {
  const auto cc = t.column("chain");
  PosteriorSamples s;
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (j == cc) continue;
    s.parameter_names.push_back(t.header[j]);
    cols.push_back(j);
  }
  s.draws.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    s.chain_ids.push_back(static_cast<int>(parse_id(t.rows[r][cc], r)));
    for (std::size_t k = 0; k < cols.size(); ++k)
      s.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
          parse_double(t.rows[r][cols[k]], "row " + std::to_string(r + 1) + ", column " + t.header[cols[k]]);
  }
  return s;
}

CsvTable to_csv(const std::vector<BlockStats>& blocks) {
  CsvTable t{{"block", "kind", "dimension", "units", "acceptance", "mean_scale"}, {}};
  for (const auto& b : blocks)
    t.rows.push_back({b.name, b.kind == BlockKind::ConjugateGibbs ? "gibbs" : "random_walk", std::to_string(b.dimension),
                      std::to_string(b.units), format_double(b.acceptance), format_double(b.mean_scale)});
  return t;
}

CsvTable metrics_to_csv(const std::vector<SimConfig>& points, const std::vector<MetricsRow>& rows) {
  CsvTable t{{"point", "scenario", "n_measurements", "alpha0_true", "alpha_sigma_true", "rho", "method", "parameter",
              "true", "mean", "sd", "rmse", "coverage", "n_used", "n_failed", "flag"},
             {}};
  for (const auto& r : rows) {
    const SimConfig& c = points.at(static_cast<std::size_t>(r.point));
    t.rows.push_back({std::to_string(r.point), to_string(c.scenario), std::to_string(c.n_measurements),
                      format_double(c.alpha0), format_double(c.alpha_sigma), format_double(c.rho), to_string(r.method),
                      r.parameter, format_double(r.true_value), format_double(r.mean_estimate),
                      r.sd_estimate ? format_double(*r.sd_estimate) : "NA", format_double(r.rmse),
                      format_double(r.coverage), std::to_string(r.n_used), std::to_string(r.n_failed), r.note});
  }
  return t;
}

CsvTable raw_to_csv(const std::vector<ReplicateEstimate>& raw) {
  CsvTable t{{"point", "replication", "method", "parameter", "estimate", "lower", "upper", "failed", "error"}, {}};
  for (const auto& r : raw)
    t.rows.push_back({std::to_string(r.point), std::to_string(r.replication), to_string(r.method), r.parameter,
                      format_double(r.estimate), format_double(r.interval.lower), format_double(r.interval.upper),
                      r.failed ? "1" : "0", r.error});
  return t;
}

std::vector<ReplicateEstimate> raw_from_csv(const CsvTable& t) {
  const auto cp = t.column("point"), cr = t.column("replication"), cm = t.column("method"), cpar = t.column("parameter"),
             ce = t.column("estimate"), cl = t.column("lower"), cu = t.column("upper"), cf = t.column("failed"),
             cerr = t.column("error");
  std::vector<ReplicateEstimate> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    ReplicateEstimate e;
    e.point = static_cast<int>(parse_id(row[cp], r));
    e.replication = static_cast<int>(parse_id(row[cr], r));
    e.method = method_from_string(row[cm]);
    e.parameter = row[cpar];
    e.estimate = parse_double(row[ce], ctx(r, "estimate"));
    e.interval = {parse_double(row[cl], ctx(r, "lower")), parse_double(row[cu], ctx(r, "upper"))};
    e.failed = parse_event(row[cf], r);
    e.error = row[cerr];
    out.push_back(std::move(e));
  }
  return out;
}

// ---- JSON ----

namespace {

/// Strict reader: every key must be known, types must match.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw FormatError(where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw FormatError(path(key) + " has the wrong type");
    }
  }

  template <typename T>
  void require(const char* key, T& out) {
    if (!j_.contains(key)) throw FormatError("missing required field '" + path(key) + "'");
    get(key, out);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw FormatError("unknown field '" + path(it.key().c_str()) + "'");
  }

  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed JSON: ") + e.what());
  }
}

void check_version(ObjectReader& r) {
  int version = 0;
  r.require("schema_version", version);
  if (version != kSchemaVersion)
    throw FormatError("unsupported schema_version " + std::to_string(version) + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
}

void read_sim(const json& j, const std::string& where, SimConfig& c) {
  ObjectReader r(j, where);
  r.get("n_individuals", c.n_individuals);
  r.get("n_measurements", c.n_measurements);
  r.get("mu0", c.mu0);
  r.get("tau0", c.tau0);
  r.get("mu_sigma", c.mu_sigma);
  r.get("tau_sigma", c.tau_sigma);
  r.get("rho", c.rho);
  r.get("gamma0", c.gamma0);
  r.get("weibull_shape", c.weibull_shape);
  r.get("alpha0", c.alpha0);
  r.get("alpha_sigma", c.alpha_sigma);
  r.get("censor_time", c.censor_time);
  r.get("measurement_span", c.measurement_span);
  std::string scenario = to_string(c.scenario);
  r.get("scenario", scenario);
  try {
    c.scenario = scenario_from_string(scenario);
  } catch (const InvalidInput& e) {
    throw FormatError(r.path("scenario") + ": " + e.what());
  }
  r.get("seed", c.seed);
  if (const json* cov = r.child("covariates")) {
    if (!cov->is_array()) throw FormatError(r.path("covariates") + " must be an array");
    c.covariates.clear();
    for (std::size_t k = 0; k < cov->size(); ++k) {
      ObjectReader cr((*cov)[k], r.path("covariates") + "[" + std::to_string(k) + "]");
      SimCovariate sc;
      cr.require("name", sc.name);
      std::string kind = "normal";
      cr.get("kind", kind);
      if (kind == "normal")
        sc.kind = SimCovariate::Kind::Normal;
      else if (kind == "bernoulli")
        sc.kind = SimCovariate::Kind::Bernoulli;
      else
        throw FormatError(cr.path("kind") + " must be 'normal' or 'bernoulli'");
      cr.get("mean", sc.mean);
      cr.get("sd", sc.sd);
      cr.get("longitudinal_effect", sc.longitudinal_effect);
      cr.get("hazard_effect", sc.hazard_effect);
      cr.finish();
      c.covariates.push_back(sc);
    }
  }
  r.finish();
}

json sim_json(const SimConfig& c) {
  json j = {{"n_individuals", c.n_individuals},
            {"n_measurements", c.n_measurements},
            {"mu0", c.mu0},
            {"tau0", c.tau0},
            {"mu_sigma", c.mu_sigma},
            {"tau_sigma", c.tau_sigma},
            {"rho", c.rho},
            {"gamma0", c.gamma0},
            {"weibull_shape", c.weibull_shape},
            {"alpha0", c.alpha0},
            {"alpha_sigma", c.alpha_sigma},
            {"censor_time", c.censor_time},
            {"measurement_span", c.measurement_span},
            {"scenario", to_string(c.scenario)},
            {"seed", c.seed}};
  if (!c.covariates.empty()) {
    json arr = json::array();
    for (const auto& sc : c.covariates)
      arr.push_back({{"name", sc.name},
                     {"kind", sc.kind == SimCovariate::Kind::Normal ? "normal" : "bernoulli"},
                     {"mean", sc.mean},
                     {"sd", sc.sd},
                     {"longitudinal_effect", sc.longitudinal_effect},
                     {"hazard_effect", sc.hazard_effect}});
    j["covariates"] = arr;
  }
  return j;
}

void read_mcmc(const json& j, const std::string& where, McmcSettings& s) {
  ObjectReader r(j, where);
  r.get("chains", s.n_chains);
  r.get("burn_in", s.burn_in);
  r.get("samples", s.n_samples);
  r.get("thin", s.thinning);
  r.get("adapt_window", s.adapt_window);
  r.get("seed", s.seed);
  r.finish();
}

json mcmc_json(const McmcSettings& s) {
  return {{"chains", s.n_chains},       {"burn_in", s.burn_in},          {"samples", s.n_samples},
          {"thin", s.thinning},         {"adapt_window", s.adapt_window}, {"seed", s.seed}};
}

}  // namespace

SimConfig sim_config_from_json(const std::string& text) {
  const json j = parse_json(text);
  if (!j.is_object()) throw FormatError("configuration must be a JSON object");
  json body = j;
  ObjectReader top(j, "");
  check_version(top);
  body.erase("schema_version");
  SimConfig c;
  read_sim(body, "", c);
  return c;
}

std::string to_json(const SimConfig& c) {
  json j = sim_json(c);
  j["schema_version"] = kSchemaVersion;
  return j.dump(2);
}

StudyGrid study_grid_from_json(const std::string& text) {
  const json j = parse_json(text);
  ObjectReader r(j, "");
  check_version(r);
  StudyGrid g;
  g.lmm_mcmc.n_chains = 2;
  g.jm_mcmc.n_chains = 2;
  if (const json* base = r.child("base")) read_sim(*base, "base", g.base);
  r.get("n_measurements", g.n_measurements);
  r.get("associations", g.associations);
  r.get("rho", g.rho);
  std::vector<std::string> methods;
  r.get("methods", methods);
  if (!methods.empty()) {
    g.methods.clear();
    for (const auto& m : methods) {
      try {
        g.methods.push_back(method_from_string(m));
      } catch (const InvalidInput& e) {
        throw FormatError(std::string("methods: ") + e.what());
      }
    }
  }
  r.get("n_replications", g.n_replications);
  r.get("K", g.K);
  r.get("min_measurements", g.min_measurements);
  std::string denominator = to_string(g.naive_sd_denominator);
  r.get("naive_sd_denominator", denominator);
  try {
    g.naive_sd_denominator = sd_denominator_from_string(denominator);
  } catch (const InvalidInput& e) {
    throw FormatError(r.path("naive_sd_denominator") + ": " + e.what());
  }
  if (const json* m = r.child("lmm_mcmc")) read_mcmc(*m, "lmm_mcmc", g.lmm_mcmc);
  if (const json* m = r.child("jm_mcmc")) read_mcmc(*m, "jm_mcmc", g.jm_mcmc);
  r.finish();
  return g;
}

std::string to_json(const StudyGrid& g) {
  std::vector<std::string> methods;
  for (Method m : g.methods) methods.push_back(to_string(m));
  json j = {{"schema_version", kSchemaVersion},
            {"base", sim_json(g.base)},
            {"n_measurements", g.n_measurements},
            {"associations", g.associations},
            {"rho", g.rho},
            {"methods", methods},
            {"n_replications", g.n_replications},
            {"K", g.K},
            {"min_measurements", g.min_measurements},
            {"naive_sd_denominator", to_string(g.naive_sd_denominator)},
            {"lmm_mcmc", mcmc_json(g.lmm_mcmc)},
            {"jm_mcmc", mcmc_json(g.jm_mcmc)}};
  return j.dump(2);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw FormatError("failed writing '" + path.string() + "'");
}

}  // namespace varsurv::io
