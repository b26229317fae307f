#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "varsurv/diagnostics.hpp"
#include "varsurv/survival.hpp"

namespace varsurv {

double cumulative_hazard(const PiecewiseHazard& ph, double t, double linear_predictor) {
  if (!(t >= 0.0)) throw InvalidInput("cumulative_hazard needs t >= 0");
  double h = 0.0;
  const std::size_t k_max = ph.heights.size();
  for (std::size_t k = 0; k < k_max; ++k) {
    const double lo = ph.cutpoints[k];
    if (t <= lo) break;
    const double hi = (k + 1 == k_max) ? t : std::min(t, ph.cutpoints[k + 1]);
    h += ph.heights[k] * (hi - lo);
  }
  return std::exp(linear_predictor) * h;
}

std::vector<double> quantile_cutpoints(std::span<const double> event_times, int k, double max_followup) {
  if (k < 1) throw InvalidInput("number of hazard intervals must be >= 1");
  std::vector<double> times(event_times.begin(), event_times.end());
  std::sort(times.begin(), times.end());
  const auto distinct = static_cast<int>(std::unique(times.begin(), times.end()) - times.begin());
  if (distinct < k)
    throw InvalidInput("only " + std::to_string(distinct) + " distinct event times for " + std::to_string(k) +
                       " hazard intervals; use a smaller K");
  std::vector<double> cuts = {0.0};
  const std::vector<double> all(event_times.begin(), event_times.end());
  for (int j = 1; j < k; ++j) cuts.push_back(quantile(all, static_cast<double>(j) / k));
  cuts.push_back(max_followup);
  for (std::size_t j = 1; j < cuts.size(); ++j) {
    if (!(cuts[j] > cuts[j - 1]))
      throw InvalidInput("hazard cut-points are not strictly increasing; use a smaller K");
  }
  return cuts;
}

std::pair<LongitudinalDataset, SurvivalDataset> landmark_split(const LongitudinalDataset& lon,
                                                               const SurvivalDataset& surv, double t_sep) {
  if (!(t_sep >= 0.0) || !std::isfinite(t_sep)) throw InvalidInput("separation time must be finite and >= 0");
  SurvivalDataset s_out;
  std::unordered_set<IndividualId> survivors;
  for (const auto& r : surv.rows) {
    if (r.followup_time <= t_sep) continue;
    s_out.rows.push_back({r.id, r.followup_time - t_sep, r.event});
    survivors.insert(r.id);
  }
  if (s_out.rows.empty()) throw InvalidInput("no individuals survive to the separation time");
  LongitudinalDataset l_out;
  for (const auto& r : lon.rows) {
    if (r.time >= t_sep || !survivors.count(r.id)) continue;
    l_out.rows.push_back(r);
  }
  if (l_out.rows.empty()) throw InvalidInput("no measurements remain before the separation time");
  return {std::move(l_out), std::move(s_out)};
}

}  // namespace varsurv
