#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

#include "lqgame/equilibrium.hpp"
#include "lqgame/filter.hpp"
#include "lqgame/model.hpp"
#include "lqgame/rng.hpp"

namespace lqgame {

enum class FilterMode { Corrected, Naive, FullObservation };

inline const char* filter_mode_name(FilterMode m) {
  switch (m) {
    case FilterMode::Corrected: return "corrected";
    case FilterMode::Naive: return "naive";
    case FilterMode::FullObservation: return "full";
  }
  return "?";
}

/// How episode initial conditions are resolved.
///   Fixed:   true x1 and both priors straight from Prior (the experiment
///            setup: a fixed ground truth and fixed, possibly wrong, priors).
///   AnchorP: player P's prior mean held fixed; the truth and player E's
///            prior are drawn so that both initial estimation errors have
///            exactly their assumed law. This realizes P's subjective
///            expectation, which is what the value function predicts.
///   AnchorE: symmetric, anchored at player E.
enum class InitMode { Fixed, AnchorP, AnchorE };

/// Full per-step record of one simulated game. Replaying the stored
/// noises through the dynamics reproduces the state sequence bit-for-bit.
struct EpisodeTrace {
  uint64_t seed = 0;
  std::vector<Vector> x;              // t = 0..T, full state
  std::vector<Vector> xhatP, xhatE;   // t = 0..T, estimated block
  std::vector<Vector> uP, uE;         // t = 0..T-1
  std::vector<Vector> zP, zE;         // t = 1..T at slot [t]; slot [0] empty
  std::vector<Vector> w;              // t = 0..T-1
  std::vector<Vector> wP, wE;         // t = 1..T at slot [t]; slot [0] empty
  double costP = 0.0, costE = 0.0;

  Vector errorP(const Dimensions& d, int t) const { return xhatP[t] - x[t].head(d.n1); }
  Vector errorE(const Dimensions& d, int t) const { return xhatE[t] - x[t].head(d.n1); }
};

/// Precomputed immutable per-run context shared across episodes.
struct SimContext {
  const GameModel* model = nullptr;
  const Prior* prior = nullptr;
  const RiccatiSolution* riccati = nullptr;
  FilterMode mode = FilterMode::Corrected;
  InitMode init = InitMode::Fixed;
  GaussianSampler w_sampler, gp_sampler, ge_sampler, w0p_sampler, w0e_sampler;

  SimContext(const GameModel& m, const Prior& p, const RiccatiSolution& r, FilterMode fm,
             InitMode im = InitMode::Fixed)
      : model(&m), prior(&p), riccati(&r), mode(fm), init(im) {
    w_sampler = GaussianSampler(m.W);
    gp_sampler = GaussianSampler(m.GP);
    ge_sampler = GaussianSampler(m.GE);
    if (im != InitMode::Fixed) {
      w0p_sampler = GaussianSampler(p.W0P);
      w0e_sampler = GaussianSampler(p.W0E);
    }
  }
};

/// Simulates one game: evolve the true state, deliver noisy signals, have
/// both players act on their current beliefs through the gain schedule,
/// and run the selected filter. Costs accumulate per the stage costs plus
/// the terminal term.
inline EpisodeTrace run_episode(const SimContext& ctx, uint64_t seed) {
  const GameModel& model = *ctx.model;
  const Prior& prior = *ctx.prior;
  const RiccatiSolution& riccati = *ctx.riccati;
  const auto& d = model.dims;
  const int T = d.T;
  Rng rng(seed);

  Vector x1_0 = prior.x1_true0;
  Vector xhat0P = prior.xhat0P;
  Vector xhat0E = prior.xhat0E;
  if (ctx.init == InitMode::AnchorP) {
    const Vector eP = ctx.w0p_sampler.draw(rng);
    x1_0 = prior.xhat0P - eP;
    xhat0E = x1_0 + ctx.w0e_sampler.draw(rng);
  } else if (ctx.init == InitMode::AnchorE) {
    const Vector eE = ctx.w0e_sampler.draw(rng);
    x1_0 = prior.xhat0E - eE;
    xhat0P = x1_0 + ctx.w0p_sampler.draw(rng);
  } else if (x1_0.size() != d.n1) {
    throw DimensionError("run_episode: prior lacks the true initial estimated block (x1_0)");
  }

  EpisodeTrace tr;
  tr.seed = seed;
  tr.x.resize(T + 1);
  tr.xhatP.resize(T + 1);
  tr.xhatE.resize(T + 1);
  tr.uP.resize(T);
  tr.uE.resize(T);
  tr.zP.resize(T + 1);
  tr.zE.resize(T + 1);
  tr.w.resize(T);
  tr.wP.resize(T + 1);
  tr.wE.resize(T + 1);

  Vector x(d.n);
  x.head(d.n1) = x1_0;
  if (d.n2 > 0) x.tail(d.n2) = prior.x0_observed;
  tr.x[0] = x;

  Prior episode_prior = prior;
  episode_prior.xhat0P = xhat0P;
  episode_prior.xhat0E = xhat0E;
  BeliefState beliefP = BeliefState::initial(Player::P, episode_prior);
  BeliefState beliefE = BeliefState::initial(Player::E, episode_prior);
  if (ctx.mode == FilterMode::FullObservation) {
    beliefP.xhat = x1_0;
    beliefE.xhat = x1_0;
  }
  tr.xhatP[0] = beliefP.xhat;
  tr.xhatE[0] = beliefE.xhat;

  for (int t = 1; t <= T; ++t) {
    Vector yP(d.n), yE(d.n);
    yP.head(d.n1) = beliefP.xhat;
    yE.head(d.n1) = beliefE.xhat;
    if (d.n2 > 0) {
      yP.tail(d.n2) = x.tail(d.n2);
      yE.tail(d.n2) = x.tail(d.n2);
    }
    const Vector uP = riccati.FP[t - 1] * yP;
    const Vector uE = riccati.FE[t - 1] * yE;
    tr.uP[t - 1] = uP;
    tr.uE[t - 1] = uE;

    tr.costP += stage_cost(model, t - 1, x, uP, uE, Player::P);
    tr.costE += stage_cost(model, t - 1, x, uP, uE, Player::E);

    const Vector w = ctx.w_sampler.draw(rng);
    tr.w[t - 1] = w;
    const Vector x2_prev = d.n2 > 0 ? Vector(x.tail(d.n2)) : Vector();
    x = model.A_t(t - 1) * x + model.BP_t(t - 1) * uP + model.BE_t(t - 1) * uE +
        model.Gamma_t(t - 1) * w;
    tr.x[t] = x;

    const Vector wP = ctx.gp_sampler.draw(rng);
    const Vector wE = ctx.ge_sampler.draw(rng);
    tr.wP[t] = wP;
    tr.wE[t] = wE;
    const Vector zP = model.H_t(Player::P, t) * x.head(d.n1) + wP;
    const Vector zE = model.H_t(Player::E, t) * x.head(d.n1) + wE;
    tr.zP[t] = zP;
    tr.zE[t] = zE;

    try {
      switch (ctx.mode) {
        case FilterMode::Corrected: {
          auto [repP, repE] =
              d.n2 > 0 ? mixed_step(model, beliefP, beliefE, x2_prev, uP, uE, zP, zE,
                                    riccati.FP[t - 1], riccati.FE[t - 1], t)
                       : two_player_step(model, beliefP, beliefE, uP, uE, zP, zE,
                                         riccati.FP[t - 1], riccati.FE[t - 1], t);
          beliefP = repP.belief_out;
          beliefE = repE.belief_out;
          break;
        }
        case FilterMode::Naive: {
          const std::optional<Vector> x2 =
              d.n2 > 0 ? std::optional<Vector>(x2_prev) : std::nullopt;
          beliefP = naive_step(model, beliefP, uP, uE, zP, t, Player::P, x2);
          beliefE = naive_step(model, beliefE, uP, uE, zE, t, Player::E, x2);
          break;
        }
        case FilterMode::FullObservation: {
          beliefP.t = t;
          beliefE.t = t;
          beliefP.xhat = x.head(d.n1);
          beliefE.xhat = x.head(d.n1);
          break;
        }
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + " [episode seed " + std::to_string(seed) +
                               "]");
    }
    tr.xhatP[t] = beliefP.xhat;
    tr.xhatE[t] = beliefE.xhat;
  }

  tr.costP += stage_cost(model, T, x, Vector(), Vector(), Player::P);
  tr.costE += stage_cost(model, T, x, Vector(), Vector(), Player::E);
  return tr;
}

/// Aggregate metrics over a batch. Estimation-error averages run over
/// t = 0..T within each episode (the prior's error at t = 0 included),
/// then across episodes. Agreement statistics apply to bargaining-shaped
/// models (n2 = 2, offers as the observed block); otherwise they are zero.
struct BatchStats {
  int episodes = 0;
  double mse_P = 0.0, mae_P = 0.0, mse_E = 0.0, mae_E = 0.0;
  long agreements = 0;
  double mean_cost_P = 0.0, mean_cost_E = 0.0;
  std::vector<double> agreement_prices;
  double ap_mean = std::numeric_limits<double>::quiet_NaN();
  double ap_ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ap_ci_hi = std::numeric_limits<double>::quiet_NaN();
};

/// Per-t across-episode means, the data behind the offer/estimate figures.
struct FigureSeries {
  std::vector<Vector> mean_x;      // t = 0..T, full state
  std::vector<Vector> mean_xhatP;  // t = 0..T
  std::vector<Vector> mean_xhatE;
};

struct BatchOptions {
  double agreement_threshold = 3.0;
  int jobs = 1;
  InitMode init = InitMode::Fixed;
  bool collect_traces = false;
  bool collect_figure = false;
};

struct EpisodeSummary {
  double mseP = 0.0, maeP = 0.0, mseE = 0.0, maeE = 0.0;
  double costP = 0.0, costE = 0.0;
  double final_gap = std::numeric_limits<double>::quiet_NaN();
  double final_price = std::numeric_limits<double>::quiet_NaN();
};

struct BatchResult {
  BatchStats stats;
  FigureSeries figure;
  std::vector<EpisodeTrace> traces;  // populated when collect_traces
  std::vector<EpisodeSummary> episodes;
};

namespace detail {

class KahanSum {
 public:
  void add(double v) {
    const double y = v - comp_;
    const double t = sum_ + y;
    comp_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0, comp_ = 0.0;
};

inline EpisodeSummary summarize_episode(const GameModel& model, const EpisodeTrace& tr) {
  const auto& d = model.dims;
  EpisodeSummary s;
  KahanSum mseP, maeP, mseE, maeE;
  for (int t = 0; t <= d.T; ++t) {
    const Vector eP = tr.xhatP[t] - tr.x[t].head(d.n1);
    const Vector eE = tr.xhatE[t] - tr.x[t].head(d.n1);
    mseP.add(eP.squaredNorm());
    maeP.add(eP.lpNorm<1>());
    mseE.add(eE.squaredNorm());
    maeE.add(eE.lpNorm<1>());
  }
  const double steps = d.T + 1;
  s.mseP = mseP.value() / steps;
  s.maeP = maeP.value() / steps;
  s.mseE = mseE.value() / steps;
  s.maeE = maeE.value() / steps;
  s.costP = tr.costP;
  s.costE = tr.costE;
  if (d.n2 == 2) {
    const double xB = tr.x[d.T](d.n1);
    const double xS = tr.x[d.T](d.n1 + 1);
    s.final_gap = std::abs(xB - xS);
    s.final_price = 0.5 * (xB + xS);
  }
  return s;
}

inline void reduce_summaries(const GameModel& model, const std::vector<EpisodeSummary>& summaries,
                             double threshold, BatchStats& stats) {
  KahanSum mseP, maeP, mseE, maeE, costP, costE, ap, ap2;
  long agreements = 0;
  std::vector<double> prices;
  for (const auto& s : summaries) {
    mseP.add(s.mseP);
    maeP.add(s.maeP);
    mseE.add(s.mseE);
    maeE.add(s.maeE);
    costP.add(s.costP);
    costE.add(s.costE);
    if (model.dims.n2 == 2 && s.final_gap < threshold) {
      ++agreements;
      prices.push_back(s.final_price);
      ap.add(s.final_price);
      ap2.add(s.final_price * s.final_price);
    }
  }
  const double n = static_cast<double>(summaries.size());
  stats.episodes = static_cast<int>(summaries.size());
  stats.mse_P = mseP.value() / n;
  stats.mae_P = maeP.value() / n;
  stats.mse_E = mseE.value() / n;
  stats.mae_E = maeE.value() / n;
  stats.mean_cost_P = costP.value() / n;
  stats.mean_cost_E = costE.value() / n;
  stats.agreements = agreements;
  stats.agreement_prices = std::move(prices);
  if (agreements > 0) {
    const double na = static_cast<double>(agreements);
    stats.ap_mean = ap.value() / na;
    const double var = std::max(0.0, ap2.value() / na - stats.ap_mean * stats.ap_mean);
    const double half = 1.96 * std::sqrt(var / na);
    stats.ap_ci_lo = stats.ap_mean - half;
    stats.ap_ci_hi = stats.ap_mean + half;
  }
}

}  // namespace detail

/// Runs `episodes` independent games with per-episode derived seeds and
/// aggregates. Episodes may be spread over worker threads; every episode
/// writes into its own slot and the reduction runs in episode order, so
/// the result is byte-identical for any job count.
inline BatchResult run_batch(const GameModel& model, const Prior& prior,
                             const RiccatiSolution& riccati, FilterMode mode, int episodes,
                             uint64_t base_seed, const BatchOptions& opts = {}) {
  if (episodes < 1) throw RangeError("run_batch: episodes must be >= 1");
  const SimContext ctx(model, prior, riccati, mode, opts.init);
  const auto& d = model.dims;

  BatchResult result;
  result.episodes.resize(episodes);
  if (opts.collect_traces) result.traces.resize(episodes);

  std::vector<detail::KahanSum> fig_x, fig_p, fig_e;
  if (opts.collect_figure) {
    fig_x.resize((d.T + 1) * d.n);
    fig_p.resize((d.T + 1) * d.n1);
    fig_e.resize((d.T + 1) * d.n1);
  }

  auto worker = [&](int first, int last, std::vector<EpisodeTrace>* local_traces) {
    for (int i = first; i < last; ++i) {
      EpisodeTrace tr = run_episode(ctx, mix_seed(base_seed, static_cast<uint64_t>(i)));
      result.episodes[i] = detail::summarize_episode(model, tr);
      if (opts.collect_traces) {
        (*local_traces)[i] = std::move(tr);
      } else if (opts.collect_figure) {
        (*local_traces)[i] = std::move(tr);  // kept only until figure fold below
      }
    }
  };

  const int jobs = std::max(1, opts.jobs);
  const bool keep = opts.collect_traces || opts.collect_figure;
  std::vector<EpisodeTrace> kept;
  if (keep && !opts.collect_traces) kept.resize(episodes);
  std::vector<EpisodeTrace>* sink =
      opts.collect_traces ? &result.traces : (keep ? &kept : nullptr);

  if (jobs == 1) {
    worker(0, episodes, sink);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (episodes + jobs - 1) / jobs;
    for (int j = 0; j < jobs; ++j) {
      const int first = j * chunk;
      const int last = std::min(episodes, first + chunk);
      if (first >= last) break;
      pool.emplace_back(worker, first, last, sink);
    }
    for (auto& th : pool) th.join();
  }

  detail::reduce_summaries(model, result.episodes, opts.agreement_threshold, result.stats);

  if (opts.collect_figure) {
    const std::vector<EpisodeTrace>& src = opts.collect_traces ? result.traces : kept;
    for (const auto& tr : src) {
      for (int t = 0; t <= d.T; ++t) {
        for (int c = 0; c < d.n; ++c) fig_x[t * d.n + c].add(tr.x[t](c));
        for (int c = 0; c < d.n1; ++c) fig_p[t * d.n1 + c].add(tr.xhatP[t](c));
        for (int c = 0; c < d.n1; ++c) fig_e[t * d.n1 + c].add(tr.xhatE[t](c));
      }
    }
    result.figure.mean_x.resize(d.T + 1);
    result.figure.mean_xhatP.resize(d.T + 1);
    result.figure.mean_xhatE.resize(d.T + 1);
    for (int t = 0; t <= d.T; ++t) {
      result.figure.mean_x[t] = Vector(d.n);
      result.figure.mean_xhatP[t] = Vector(d.n1);
      result.figure.mean_xhatE[t] = Vector(d.n1);
      for (int c = 0; c < d.n; ++c)
        result.figure.mean_x[t](c) = fig_x[t * d.n + c].value() / episodes;
      for (int c = 0; c < d.n1; ++c) {
        result.figure.mean_xhatP[t](c) = fig_p[t * d.n1 + c].value() / episodes;
        result.figure.mean_xhatE[t](c) = fig_e[t * d.n1 + c].value() / episodes;
      }
    }
  }
  return result;
}

/// Corrected vs naive under common random numbers: episode i of both
/// modes consumes the identical noise stream, which removes most sampling
/// variance from the mode comparison.
struct PairedResult {
  BatchResult corrected;
  BatchResult naive;
  double mean_delta_mse_P = 0.0;  // naive minus corrected, positive = naive worse
  double mean_delta_mae_P = 0.0;
  long both_agreed = 0;
  // Agreement-price stats restricted to episodes agreed in both modes.
  double ap_both_corrected = std::numeric_limits<double>::quiet_NaN();
  double ap_both_corrected_ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ap_both_corrected_ci_hi = std::numeric_limits<double>::quiet_NaN();
  double ap_both_naive = std::numeric_limits<double>::quiet_NaN();
  double ap_both_naive_ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ap_both_naive_ci_hi = std::numeric_limits<double>::quiet_NaN();
};

inline PairedResult paired_comparison(const GameModel& model, const Prior& prior,
                                      const RiccatiSolution& riccati, int episodes,
                                      uint64_t base_seed, const BatchOptions& opts = {}) {
  PairedResult pr;
  pr.corrected = run_batch(model, prior, riccati, FilterMode::Corrected, episodes, base_seed, opts);
  pr.naive = run_batch(model, prior, riccati, FilterMode::Naive, episodes, base_seed, opts);

  detail::KahanSum dmse, dmae;
  detail::KahanSum apc, apc2, apn, apn2;
  long both = 0;
  for (int i = 0; i < episodes; ++i) {
    const auto& c = pr.corrected.episodes[i];
    const auto& nv = pr.naive.episodes[i];
    dmse.add(nv.mseP - c.mseP);
    dmae.add(nv.maeP - c.maeP);
    if (model.dims.n2 == 2 && c.final_gap < opts.agreement_threshold &&
        nv.final_gap < opts.agreement_threshold) {
      ++both;
      apc.add(c.final_price);
      apc2.add(c.final_price * c.final_price);
      apn.add(nv.final_price);
      apn2.add(nv.final_price * nv.final_price);
    }
  }
  pr.mean_delta_mse_P = dmse.value() / episodes;
  pr.mean_delta_mae_P = dmae.value() / episodes;
  pr.both_agreed = both;
  if (both > 0) {
    const double nb = static_cast<double>(both);
    auto ci = [&](detail::KahanSum& s, detail::KahanSum& s2, double& mean, double& lo, double& hi) {
      mean = s.value() / nb;
      const double var = std::max(0.0, s2.value() / nb - mean * mean);
      const double half = 1.96 * std::sqrt(var / nb);
      lo = mean - half;
      hi = mean + half;
    };
    ci(apc, apc2, pr.ap_both_corrected, pr.ap_both_corrected_ci_lo, pr.ap_both_corrected_ci_hi);
    ci(apn, apn2, pr.ap_both_naive, pr.ap_both_naive_ci_lo, pr.ap_both_naive_ci_hi);
  }
  return pr;
}

}  // namespace lqgame
