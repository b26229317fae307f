#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "varsurv/random.hpp"
#include "varsurv/types.hpp"

namespace varsurv {

struct McmcSettings {
  int n_chains = 3;
  int burn_in = 1000;
  /// Retained draws per chain; each retained draw is `thinning` updates apart.
  int n_samples = 1000;
  int thinning = 1;
  /// Updates between refreshes of adapted proposal covariances.
  int adapt_window = 50;
  /// Acceptance target for scalar random-walk blocks; multivariate blocks use
  /// target_accept_multi.
  double target_accept = 0.44;
  double target_accept_multi = 0.23;
  /// Robbins-Monro tuning during burn-in. Frozen afterwards either way.
  bool adapt = true;
  std::uint64_t seed = 1;
  /// Chains run concurrently on up to this many threads (0: one per chain).
  int max_threads = 1;
};

void validate(const McmcSettings& s);

enum class BlockKind {
  /// Draws directly from a full conditional. The kernel may include an exact
  /// Metropolis-Hastings correction for non-conjugate factors, in which case it
  /// reports how many of its units accepted.
  ConjugateGibbs,
  /// Gaussian random-walk Metropolis, one independent proposal per unit.
  RandomWalkMetropolis,
};

/// One update step within a sweep. `units` conditionally independent copies
/// (e.g. one per individual) share the block's kind and dimension; each unit of
/// a random-walk block keeps its own adapted proposal.
struct BlockUpdater {
  std::string name;
  BlockKind kind = BlockKind::RandomWalkMetropolis;
  std::size_t dimension = 1;
  std::size_t units = 1;
  double proposal_scale = 1.0;

  /// ConjugateGibbs: update all units, return the number of accepted units.
  std::function<std::size_t(CounterRng&)> sample;

  /// RandomWalkMetropolis accessors.
  std::function<void(std::size_t unit, std::span<double> x)> get;
  std::function<double(std::size_t unit, std::span<const double> x)> log_density;
  std::function<void(std::size_t unit, std::span<const double> x)> set;
};

/// Per-chain sampler state. Implementations own all mutable state of one chain;
/// the blocks they return capture `this`.
class ChainModel {
 public:
  virtual ~ChainModel() = default;
  virtual std::vector<BlockUpdater> blocks() = 0;
  /// Current values of the monitored parameters, in McmcTarget order.
  virtual void monitored(std::span<double> out) const = 0;
  /// Full unnormalised log posterior at the current state.
  virtual double log_posterior() const = 0;
  /// Hook called after every retained draw (e.g. running posterior means).
  virtual void on_retained_draw() {}
};

struct McmcTarget {
  std::vector<std::string> parameter_names;
  /// Builds chain `chain` with its initial state; may draw from `rng`.
  std::function<std::unique_ptr<ChainModel>(int chain, CounterRng& rng)> make_chain;
};

struct BlockStats {
  std::string name;
  BlockKind kind = BlockKind::RandomWalkMetropolis;
  std::size_t dimension = 1;
  std::size_t units = 1;
  /// Post-burn-in acceptance rate pooled over chains and units.
  double acceptance = 1.0;
  /// Mean final proposal scale over units and chains (RW only).
  double mean_scale = 0.0;
};

struct McmcRun {
  PosteriorSamples samples;
  std::vector<BlockStats> blocks;
  std::vector<std::string> warnings;
  std::vector<std::unique_ptr<ChainModel>> chains;
};

/// Runs every chain for burn_in + n_samples * thinning sweeps. Chain c uses
/// substream c of settings.seed, so results do not depend on max_threads.
McmcRun run_chains(const McmcTarget& target, const McmcSettings& settings);

}  // namespace varsurv
