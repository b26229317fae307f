#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "varsurv/datagen.hpp"
#include "varsurv/diagnostics.hpp"
#include "varsurv/joint.hpp"
#include "varsurv/lmm.hpp"
#include "varsurv/simstudy.hpp"
#include "varsurv/survival.hpp"

namespace varsurv::io {

/// Current version of the JSON configuration schema.
inline constexpr int kSchemaVersion = 1;

/// Raised for unreadable or malformed files and configs.
class FormatError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

// ---- CSV (RFC 4180) ----

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws FormatError naming the missing column.
  std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);
void write_csv(std::ostream& out, const CsvTable& table);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);
double parse_double(const std::string& s, const std::string& context = "");

// ---- datasets ----

CsvTable to_csv(const LongitudinalDataset& d);        // id,time,value
CsvTable to_csv(const SurvivalDataset& d);            // id,time,event
CsvTable to_csv(const CovariateTable& d);             // id,<names...>
CsvTable to_csv(const std::vector<TruthRow>& truth);  // id,b0,sigma
CsvTable to_csv(const Stage1Estimates& s);            // id,level,sd[,slope]

LongitudinalDataset longitudinal_from_csv(const CsvTable& t);
SurvivalDataset survival_from_csv(const CsvTable& t);
CovariateTable covariates_from_csv(const CsvTable& t);
std::vector<TruthRow> truth_from_csv(const CsvTable& t);
Stage1Estimates stage1_from_csv(const CsvTable& t);

// ---- reports ----

CsvTable to_csv(const CoxFit& fit);                          // coefficient,estimate,se,z,lower,upper
CsvTable to_csv(const std::vector<ParameterSummary>& rows);  // parameter,mean,sd,q2.5,q97.5,Rhat,acf1,ess
/// Posterior draws with a leading chain column.
CsvTable draws_to_csv(const PosteriorSamples& s);
PosteriorSamples draws_from_csv(const CsvTable& t);
CsvTable to_csv(const std::vector<BlockStats>& blocks);

CsvTable metrics_to_csv(const std::vector<SimConfig>& points, const std::vector<MetricsRow>& rows);
CsvTable raw_to_csv(const std::vector<ReplicateEstimate>& raw);
std::vector<ReplicateEstimate> raw_from_csv(const CsvTable& t);

// ---- JSON configuration ----

SimConfig sim_config_from_json(const std::string& text);
std::string to_json(const SimConfig& c);
StudyGrid study_grid_from_json(const std::string& text);
std::string to_json(const StudyGrid& g);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace varsurv::io
