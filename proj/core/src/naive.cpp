#include "varsurv/naive.hpp"

#include <cmath>
#include <unordered_map>

namespace varsurv {

double naive_level(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("naive_level needs at least one value");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double naive_sd(std::span<const double> values) {
  if (values.size() < 2) throw InvalidInput("naive_sd needs at least two values");
  const double mean = naive_level(values);
  double ss = 0.0;
  for (double v : values) ss += (mean - v) * (mean - v);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

std::string to_string(SdDenominator d) { return d == SdDenominator::N ? "n" : "n-1"; }

SdDenominator sd_denominator_from_string(const std::string& s) {
  if (s == "n") return SdDenominator::N;
  if (s == "n-1") return SdDenominator::NMinusOne;
  throw InvalidInput("unknown SD denominator '" + s + "' (expected 'n' or 'n-1')");
}

NaiveTable naive_table(const LongitudinalDataset& lon, int min_measurements, SdDenominator denominator) {
  std::vector<IndividualId> order;
  std::unordered_map<IndividualId, std::vector<double>> series;
  for (const auto& r : lon.rows) {
    auto [it, inserted] = series.try_emplace(r.id);
    if (inserted) order.push_back(r.id);
    it->second.push_back(r.value);
  }
  const auto threshold = static_cast<std::size_t>(std::max(min_measurements, 2));
  NaiveTable table;
  for (IndividualId id : order) {
    const auto& v = series[id];
    if (v.size() < threshold) {
      table.excluded.push_back(id);
      continue;
    }
    const double n = static_cast<double>(v.size());
    const double scale = denominator == SdDenominator::N ? 1.0 : std::sqrt(n / (n - 1.0));
    table.rows.push_back({id, naive_level(v), scale * naive_sd(v), static_cast<int>(v.size())});
  }
  return table;
}

}  // namespace varsurv
