#include "varsurv/mcmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace varsurv {

void validate(const McmcSettings& s) {
  if (s.n_chains < 1) throw InvalidInput("n_chains must be >= 1");
  if (s.burn_in < 0) throw InvalidInput("burn_in must be >= 0");
  if (s.n_samples < 1) throw InvalidInput("n_samples must be >= 1 (zero-iteration request)");
  if (s.thinning < 1) throw InvalidInput("thinning must be >= 1");
  if (s.adapt_window < 1) throw InvalidInput("adapt_window must be >= 1");
  if (!(s.target_accept > 0.0 && s.target_accept < 1.0) ||
      !(s.target_accept_multi > 0.0 && s.target_accept_multi < 1.0))
    throw InvalidInput("target acceptance rates must lie in (0, 1)");
}

namespace {

/// Adaptive proposal for one unit of a random-walk block.
struct UnitProposal {
  double log_scale = 0.0;
  long n_seen = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd m2;
  Eigen::MatrixXd chol;  // proposal shape (lower triangular); identity until learned
  bool learned = false;
};

class BlockRunner {
 public:
  BlockRunner(BlockUpdater block, const McmcSettings& settings) : block_(std::move(block)), settings_(settings) {
    if (block_.kind == BlockKind::RandomWalkMetropolis) {
      if (!(block_.proposal_scale > 0.0)) throw InvalidInput("block '" + block_.name + "': proposal_scale must be > 0");
      if (!block_.get || !block_.set || !block_.log_density)
        throw InvalidInput("block '" + block_.name + "': random-walk blocks need get/set/log_density");
      const auto d = static_cast<Eigen::Index>(block_.dimension);
      units_.resize(block_.units);
      for (auto& u : units_) {
        u.log_scale = std::log(block_.proposal_scale);
        if (d > 1) {
          u.mean = Eigen::VectorXd::Zero(d);
          u.m2 = Eigen::MatrixXd::Zero(d, d);
          u.chol = Eigen::MatrixXd::Identity(d, d);
        }
      }
      x_.resize(block_.dimension);
      y_.resize(block_.dimension);
      z_.resize(block_.dimension);
    } else if (!block_.sample) {
      throw InvalidInput("block '" + block_.name + "': Gibbs blocks need a sampler");
    }
  }

  void step(CounterRng& rng, long iter, bool adapting, bool counting) {
    if (block_.kind == BlockKind::ConjugateGibbs) {
      const std::size_t acc = block_.sample(rng);
      if (counting) {
        accepted_ += acc;
        proposed_ += block_.units;
      }
      return;
    }
    const double target =
        block_.dimension == 1 ? settings_.target_accept : settings_.target_accept_multi;
    for (std::size_t unit = 0; unit < block_.units; ++unit) {
      UnitProposal& u = units_[unit];
      block_.get(unit, x_);
      const double lp0 = block_.log_density(unit, x_);
      const double s = std::exp(u.log_scale);
      if (block_.dimension == 1) {
        y_[0] = x_[0] + s * rng.normal();
      } else {
        for (auto& zi : z_) zi = rng.normal();
        const auto d = static_cast<Eigen::Index>(block_.dimension);
        Eigen::Map<const Eigen::VectorXd> z(z_.data(), d);
        Eigen::Map<const Eigen::VectorXd> x(x_.data(), d);
        Eigen::Map<Eigen::VectorXd> y(y_.data(), d);
        y = x + s * (u.chol * z);  // chol is lower triangular
      }
      const double lp1 = block_.log_density(unit, y_);
      double accept_prob = 0.0;
      if (std::isfinite(lp1)) accept_prob = lp1 >= lp0 ? 1.0 : std::exp(lp1 - lp0);
      const bool accept = accept_prob >= 1.0 || rng.uniform() < accept_prob;
      if (accept) block_.set(unit, y_);
      if (counting) {
        accepted_ += accept ? 1 : 0;
        ++proposed_;
      }
      if (adapting) {
        const double gain = 2.0 / std::pow(static_cast<double>(iter) + 10.0, 0.6);
        u.log_scale += gain * (accept_prob - target);
        u.log_scale = std::clamp(u.log_scale, -30.0, 30.0);
        if (block_.dimension > 1) learn_shape(u, accept ? y_ : x_, iter);
      }
    }
  }

  BlockStats stats() const {
    BlockStats st;
    st.name = block_.name;
    st.kind = block_.kind;
    st.dimension = block_.dimension;
    st.units = block_.units;
    st.acceptance = proposed_ ? static_cast<double>(accepted_) / static_cast<double>(proposed_) : 0.0;
    if (!units_.empty()) {
      double sum = 0.0;
      for (const auto& u : units_) sum += std::exp(u.log_scale);
      st.mean_scale = sum / static_cast<double>(units_.size());
    }
    return st;
  }

  std::size_t accepted() const { return accepted_; }
  std::size_t proposed() const { return proposed_; }
  const BlockUpdater& block() const { return block_; }

 private:
  void learn_shape(UnitProposal& u, const std::vector<double>& state, long iter) {
    const auto d = static_cast<Eigen::Index>(block_.dimension);
    Eigen::Map<const Eigen::VectorXd> v(state.data(), d);
    ++u.n_seen;
    const Eigen::VectorXd delta = v - u.mean;
    u.mean += delta / static_cast<double>(u.n_seen);
    u.m2 += delta * (v - u.mean).transpose();
    const long window = settings_.adapt_window;
    if (u.n_seen >= std::max<long>(2 * d + 2, window) && iter % window == 0) {
      Eigen::MatrixXd cov = u.m2 / static_cast<double>(u.n_seen - 1);
      const double ridge = 1e-10 * std::max(cov.diagonal().maxCoeff(), 1e-300);
      cov.diagonal().array() += ridge;
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() == Eigen::Success) {
        // restart the scale at the 2.38/sqrt(d) rule once a covariance shape exists
        if (!u.learned) {
          u.log_scale = std::log(2.38 / std::sqrt(static_cast<double>(d)));
          u.learned = true;
        }
        u.chol = llt.matrixL();
      }
    }
  }

  BlockUpdater block_;
  const McmcSettings& settings_;
  std::vector<UnitProposal> units_;
  std::vector<double> x_, y_, z_;
  std::size_t accepted_ = 0;
  std::size_t proposed_ = 0;
};

struct ChainOutput {
  std::unique_ptr<ChainModel> model;
  Eigen::MatrixXd draws;
  std::vector<BlockStats> stats;
  std::vector<std::size_t> accepted, proposed;
  std::string error;
};

void run_one_chain(const McmcTarget& target, const McmcSettings& settings, int chain, ChainOutput& out) {
  try {
    CounterRng rng = CounterRng(settings.seed).substream(static_cast<std::uint64_t>(chain));
    out.model = target.make_chain(chain, rng);
    const double lp_init = out.model->log_posterior();
    if (!std::isfinite(lp_init)) {
      std::ostringstream msg;
      msg << "chain " << chain << ": log posterior is " << lp_init
          << " at the initial values; re-initialise the chain with values inside the support";
      throw NumericalError(msg.str());
    }
    std::vector<BlockRunner> runners;
    for (auto& b : out.model->blocks()) runners.emplace_back(std::move(b), settings);

    const auto n_par = static_cast<Eigen::Index>(target.parameter_names.size());
    out.draws.resize(settings.n_samples, n_par);
    std::vector<double> row(target.parameter_names.size());
    const long total = static_cast<long>(settings.burn_in) + static_cast<long>(settings.n_samples) * settings.thinning;
    Eigen::Index kept = 0;
    for (long iter = 1; iter <= total; ++iter) {
      const bool burning = iter <= settings.burn_in;
      for (auto& r : runners) r.step(rng, iter, burning && settings.adapt, !burning);
      if (!burning && (iter - settings.burn_in) % settings.thinning == 0) {
        out.model->monitored(row);
        for (Eigen::Index j = 0; j < n_par; ++j) out.draws(kept, j) = row[static_cast<std::size_t>(j)];
        ++kept;
        out.model->on_retained_draw();
      }
    }
    for (const auto& r : runners) {
      out.stats.push_back(r.stats());
      out.accepted.push_back(r.accepted());
      out.proposed.push_back(r.proposed());
    }
  } catch (const std::exception& e) {
    out.error = e.what();
  }
}

}  // namespace

McmcRun run_chains(const McmcTarget& target, const McmcSettings& settings) {
  validate(settings);
  if (!target.make_chain) throw InvalidInput("MCMC target has no chain factory");

  std::vector<ChainOutput> outputs(static_cast<std::size_t>(settings.n_chains));
  const int threads = settings.max_threads <= 0 ? settings.n_chains : std::min(settings.max_threads, settings.n_chains);
  if (threads <= 1) {
    for (int c = 0; c < settings.n_chains; ++c) run_one_chain(target, settings, c, outputs[static_cast<std::size_t>(c)]);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int c = next++; c < settings.n_chains; c = next++)
          run_one_chain(target, settings, c, outputs[static_cast<std::size_t>(c)]);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& o : outputs)
    if (!o.error.empty()) throw NumericalError(o.error);

  McmcRun run;
  auto& s = run.samples;
  s.parameter_names = target.parameter_names;
  s.thinning = settings.thinning;
  s.burn_in = settings.burn_in;
  const auto n_par = static_cast<Eigen::Index>(target.parameter_names.size());
  s.draws.resize(static_cast<Eigen::Index>(settings.n_samples) * settings.n_chains, n_par);
  for (int c = 0; c < settings.n_chains; ++c) {
    s.draws.middleRows(static_cast<Eigen::Index>(c) * settings.n_samples, settings.n_samples) =
        outputs[static_cast<std::size_t>(c)].draws;
    s.chain_ids.insert(s.chain_ids.end(), static_cast<std::size_t>(settings.n_samples), c);
  }

  const auto& first = outputs.front().stats;
  for (std::size_t b = 0; b < first.size(); ++b) {
    BlockStats st = first[b];
    std::size_t acc = 0, prop = 0;
    double scale = 0.0;
    for (const auto& o : outputs) {
      acc += o.accepted[b];
      prop += o.proposed[b];
      scale += o.stats[b].mean_scale;
    }
    st.acceptance = prop ? static_cast<double>(acc) / static_cast<double>(prop) : 0.0;
    st.mean_scale = scale / static_cast<double>(outputs.size());
    if (prop > 0 && acc == 0)
      run.warnings.push_back("block '" + st.name + "' rejected every proposal after burn-in");
    run.blocks.push_back(st);
  }
  for (auto& o : outputs) run.chains.push_back(std::move(o.model));
  return run;
}

}  // namespace varsurv
