#pragma once

#include <optional>
#include <vector>

#include "lqgame/equilibrium.hpp"
#include "lqgame/filter.hpp"
#include "lqgame/model.hpp"
#include "lqgame/rng.hpp"

namespace lqgame {

enum class TowerMode { Corrected, Naive };

/// Both sides of the tower identity E[E[x'Ox | H_t] | H_{t-1}] =
/// E[x'Ox | H_{t-1}] in closed form, from player P's perspective.
/// predicted_discrepancy is the analytic value of lhs - rhs under the
/// uncorrected filter (zero for the corrected one); mc_se carries the
/// standard error when the report comes from a Monte Carlo estimate.
struct TowerReport {
  int t = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double residual = 0.0;
  double predicted_discrepancy = 0.0;
  double mc_se = 0.0;
};

/// Closed-form tower check over one step t-1 -> t. Beliefs supply the
/// covariance bookkeeping at t-1 (corrected or naive, matching `mode`);
/// FP / FE are the gains both players play at t-1. The quadratic weight
/// defaults to player P's stage cost Q_t; interior-time checks against the
/// value recursion pass U_{t+1} instead.
inline TowerReport tower_check(const GameModel& model, const BeliefState& belief_P,
                               const BeliefState& belief_E, const Matrix& FP, const Matrix& FE,
                               int t, TowerMode mode,
                               const std::optional<Matrix>& weight = std::nullopt) {
  const auto& d = model.dims;
  if (d.n2 != 0) throw DimensionError("tower_check operates on the fully-partial setting (n2 = 0)");
  if (t < 1 || t > d.T) throw RangeError("tower_check: t out of range");

  const Matrix O = weight ? *weight : model.Q_t(Player::P, t);
  const Matrix& A = model.A_t(t - 1);
  const Matrix& BP = model.BP_t(t - 1);
  const Matrix& BE = model.BE_t(t - 1);
  const Matrix& H = model.H_t(Player::P, t);
  const Matrix& Gamma = model.Gamma_t(t - 1);
  const Matrix GW = model.GWG_full(t - 1);
  const Matrix I = Matrix::Identity(d.n, d.n);

  const Matrix& SP = belief_P.Sigma;
  const Matrix& SE = belief_E.Sigma;
  const Matrix& C = belief_P.SigmaCross;  // (P,E) orientation
  const Vector& xhat = belief_P.xhat;

  // Pi vanishes for the uncorrected filter; the corrected improved
  // covariance and the naive predicted covariance then share one formula.
  Matrix Pi = Matrix::Zero(d.n, d.n);
  Matrix Sigma_plus = SP;
  if (mode == TowerMode::Corrected) {
    Pi = solve_sym_right(SP - C, belief_P.SigmaRel, kFilterRcondMin, "tower_check (Pi)");
    Sigma_plus = symmetrize(SP - Pi * (SP - C).transpose());
  }
  const Matrix Sigma_minus = symmetrize(A * Sigma_plus * A.transpose() + GW);
  const Matrix Sgain = H * Sigma_minus * H.transpose() + model.GP;
  const Matrix K =
      solve_sym(Sgain, H * Sigma_minus.transpose(), kFilterRcondMin, "tower_check (K)").transpose();
  const Matrix Sigma_t = symmetrize((I - K * H) * Sigma_minus);

  const Matrix N = BE * FE;
  const Matrix KH = K * H;
  const Matrix L1 = A * Pi + N - KH * A * Pi;
  const Matrix L2 = -A * Pi - N - KH * A * (I - Pi);
  const Matrix closed = A + BP * FP + N;

  TowerReport rep;
  rep.t = t;
  const double quad = xhat.dot(closed.transpose() * O * closed * xhat);
  rep.lhs = quad + (L1.transpose() * O * L1 * SE).trace() + (L2.transpose() * O * L2 * SP).trace() +
            2.0 * (L1.transpose() * O * L2 * C).trace() +
            (K.transpose() * O * K * model.GP).trace() +
            (Gamma.transpose() * H.transpose() * K.transpose() * O * K * H * Gamma * model.W)
                .trace() +
            (O * Sigma_t).trace();
  const Matrix AN = A + N;
  rep.rhs = quad + (Gamma.transpose() * O * Gamma * model.W).trace() +
            (AN.transpose() * O * AN * SP).trace() + (N.transpose() * O * N * SE).trace() -
            2.0 * (AN.transpose() * O * N * C.transpose()).trace();

  if (mode == TowerMode::Naive) {
    // Analytic lhs - rhs gap of the uncorrected filter; linear in (SP - C).
    rep.predicted_discrepancy =
        2.0 * (FE.transpose() * BE.transpose() * O * (KH - I) * A * (SP - C)).trace();
  }
  rep.residual = std::abs(rep.lhs - rep.rhs - rep.predicted_discrepancy);
  return rep;
}

namespace detail {

inline BeliefState belief_from_schedule(const CovarianceSchedule& cs, Player i, int t,
                                        const Vector& xhat) {
  BeliefState b;
  b.t = t;
  b.xhat = xhat;
  b.Sigma = (i == Player::P) ? cs.SigmaP[t] : cs.SigmaE[t];
  b.SigmaCross = (i == Player::P) ? cs.SigmaCross[t] : Matrix(cs.SigmaCross[t].transpose());
  b.SigmaRel = cs.SigmaRel[t];
  return b;
}

}  // namespace detail

/// Monte Carlo cross-check of the closed forms: draws the estimation
/// errors and step noises conditional on H^P_{t-1}, runs the selected
/// filter's mean update on each draw, and averages both sides of the
/// tower identity. The residual is measured against its own standard
/// error (paired samples), minus the analytic discrepancy in naive mode.
inline TowerReport mc_tower_check(const GameModel& model, const Prior& prior,
                                  const std::vector<Matrix>& FP, const std::vector<Matrix>& FE,
                                  int t, int replications, TowerMode mode, uint64_t seed,
                                  const std::optional<Matrix>& weight = std::nullopt) {
  const auto& d = model.dims;
  if (d.n2 != 0) throw DimensionError("mc_tower_check operates on the fully-partial setting");
  if (t < 1 || t > d.T) throw RangeError("mc_tower_check: t out of range");

  const CovarianceSchedule cs = (mode == TowerMode::Corrected)
                                    ? corrected_covariance_schedule(model, prior, FP, FE)
                                    : naive_covariance_schedule(model, prior);
  Rng rng(seed);
  const Vector xhatP = rng.normal_vector(d.n);  // any fixed value works; keep it generic
  const BeliefState bP = detail::belief_from_schedule(cs, Player::P, t - 1, xhatP);
  const BeliefState bE = detail::belief_from_schedule(cs, Player::E, t - 1, Vector::Zero(d.n));

  const TowerReport closed = tower_check(model, bP, bE, FP[t - 1], FE[t - 1], t, mode, weight);
  const Matrix O = weight ? *weight : model.Q_t(Player::P, t);

  // Joint factor for (eP, eE) at t-1.
  Matrix joint(2 * d.n, 2 * d.n);
  joint.topLeftCorner(d.n, d.n) = bP.Sigma;
  joint.topRightCorner(d.n, d.n) = bP.SigmaCross;
  joint.bottomLeftCorner(d.n, d.n) = bP.SigmaCross.transpose();
  joint.bottomRightCorner(d.n, d.n) = bE.Sigma;
  const GaussianSampler err_sampler(joint);
  const GaussianSampler w_sampler(model.W);
  const GaussianSampler gp_sampler(model.GP);

  const Matrix& A = model.A_t(t - 1);
  const Matrix& H = model.H_t(Player::P, t);
  const Matrix& KP = cs.KP[t];
  const Matrix SigmaP_t = cs.SigmaP[t];
  const double trace_term = (O * SigmaP_t).trace();

  double sum_diff = 0.0, sum_diff2 = 0.0, sum_lhs = 0.0, sum_rhs = 0.0;
  double comp_d = 0.0, comp_l = 0.0, comp_r = 0.0;  // Kahan compensations
  auto kahan = [](double& sum, double& comp, double v) {
    const double y = v - comp;
    const double tmp = sum + y;
    comp = (tmp - sum) - y;
    sum = tmp;
  };

  for (int rep = 0; rep < replications; ++rep) {
    const Vector e = err_sampler.draw(rng);
    const Vector eP = e.head(d.n);
    const Vector eE = e.tail(d.n);
    const Vector xhatE = xhatP - eP + eE;
    const Vector x_prev = xhatP - eP;
    const Vector uP = FP[t - 1] * xhatP;
    const Vector uE = FE[t - 1] * xhatE;
    const Vector w = w_sampler.draw(rng);
    const Vector x_t = A * x_prev + model.BP_t(t - 1) * uP + model.BE_t(t - 1) * uE +
                       model.Gamma_t(t - 1) * w;
    const Vector zP = H * x_t.head(d.n1) + gp_sampler.draw(rng);

    Vector xhat_t;
    if (mode == TowerMode::Corrected) {
      const SignalPair sp = select_signal_pair(FE[t - 1], std::nullopt, uE, std::nullopt);
      const Vector xplus = xhatP + cs.JP[t - 1] * (sp.y - sp.Y * xhatP);
      const Vector xminus =
          A * xplus + model.BP_t(t - 1) * uP + model.BE_t(t - 1) * uE;
      xhat_t = xminus + KP * (zP - H * xminus);
    } else {
      const Vector xminus = A * xhatP + model.BP_t(t - 1) * uP + model.BE_t(t - 1) * uE;
      xhat_t = xminus + KP * (zP - H * xminus);
    }

    const double lhs_sample = xhat_t.dot(O * xhat_t) + trace_term;
    const double rhs_sample = x_t.dot(O * x_t);
    kahan(sum_lhs, comp_l, lhs_sample);
    kahan(sum_rhs, comp_r, rhs_sample);
    kahan(sum_diff, comp_d, lhs_sample - rhs_sample);
    sum_diff2 += (lhs_sample - rhs_sample) * (lhs_sample - rhs_sample);
  }

  TowerReport rep;
  rep.t = t;
  rep.lhs = sum_lhs / replications;
  rep.rhs = sum_rhs / replications;
  rep.predicted_discrepancy = closed.predicted_discrepancy;
  const double mean_diff = sum_diff / replications;
  const double var_diff =
      std::max(0.0, sum_diff2 / replications - mean_diff * mean_diff) / replications;
  rep.mc_se = std::sqrt(var_diff);
  rep.residual = std::abs(mean_diff - rep.predicted_discrepancy);
  return rep;
}

/// Reproducible random instance family satisfying the model assumptions:
/// dynamics entries uniform(-1, 1), covariances M M' + 0.1 I.
struct RandomModelSpec {
  int n = 2;
  int m = 1;
  int k = 1;
  int T = 3;
};

inline Matrix random_entries(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = 2.0 * rng.uniform01() - 1.0;
  return m;
}

inline Matrix random_spd(Rng& rng, int n) {
  const Matrix m = random_entries(rng, n, n);
  return symmetrize(m * m.transpose() + 0.1 * Matrix::Identity(n, n));
}

inline std::pair<GameModel, Prior> random_model(uint64_t seed, const RandomModelSpec& spec) {
  Rng rng(seed);
  GameModel model;
  model.dims = Dimensions{spec.n, spec.n, 0, spec.m, spec.k, spec.n, spec.n, spec.n, spec.T};
  const auto& d = model.dims;
  for (int t = 0; t < d.T; ++t) {
    model.A.push_back(random_entries(rng, d.n, d.n));
    model.BP.push_back(random_entries(rng, d.n, d.m));
    model.BE.push_back(random_entries(rng, d.n, d.k));
    model.Gamma.push_back(random_entries(rng, d.n, d.d));
    model.RP.push_back(random_spd(rng, d.m));
    model.RE.push_back(random_spd(rng, d.k));
  }
  model.W = random_spd(rng, d.d);
  for (int t = 0; t < d.T; ++t) {
    Matrix HP = random_entries(rng, d.p, d.n);
    while (matrix_rank(HP) < d.n) HP = random_entries(rng, d.p, d.n);
    Matrix HE = random_entries(rng, d.q, d.n);
    while (matrix_rank(HE) < d.n) HE = random_entries(rng, d.q, d.n);
    model.HP.push_back(HP);
    model.HE.push_back(HE);
  }
  model.GP = random_spd(rng, d.p);
  model.GE = random_spd(rng, d.q);
  for (int t = 0; t <= d.T; ++t) {
    model.QP.push_back(random_spd(rng, d.n));
    model.QE.push_back(random_spd(rng, d.n));
  }

  Prior prior;
  prior.xhat0P = random_entries(rng, d.n, 1);
  prior.W0P = random_spd(rng, d.n);
  prior.xhat0E = random_entries(rng, d.n, 1);
  prior.W0E = random_spd(rng, d.n);
  prior.x1_true0 = random_entries(rng, d.n, 1);
  return {model, prior};
}

/// Random admissible gain schedules for a model (full rank holds almost
/// surely; re-drawn on the rare degenerate sample).
inline std::pair<std::vector<Matrix>, std::vector<Matrix>> random_gains(uint64_t seed,
                                                                        const GameModel& model) {
  Rng rng(mix_seed(seed, 0x9a135));
  const auto& d = model.dims;
  std::vector<Matrix> FP, FE;
  for (int t = 0; t < d.T; ++t) {
    Matrix fp = random_entries(rng, d.m, d.n);
    while (matrix_rank(fp) < std::min(d.m, d.n)) fp = random_entries(rng, d.m, d.n);
    Matrix fe = random_entries(rng, d.k, d.n);
    while (matrix_rank(fe) < std::min(d.k, d.n)) fe = random_entries(rng, d.k, d.n);
    FP.push_back(fp);
    FE.push_back(fe);
  }
  return {FP, FE};
}

/// Exact conditional mean of x_t given player P's information, computed
/// by brute-force joint-Gaussian conditioning: every quantity in the game
/// is an affine function of the stacked primitive vector
/// (e0P, e0E, w_0.., wP_1.., wE_1..), so E[x_t | observations] follows
/// from one covariance solve, independent of the filter recursion.
struct OracleComparison {
  Vector xhat_filter;    // corrected-filter estimate on the drawn episode
  Vector cond_mean;      // exact E[x_t | z^P_{1..t}, u^E_{0..t-1}]
};

namespace detail {

struct AffineForm {
  Vector c;
  Matrix L;  // value = c + L * g with g ~ N(0, I)
};

}  // namespace detail

inline OracleComparison oracle_conditional_estimate(const GameModel& model, const Prior& prior,
                                                    const std::vector<Matrix>& FP,
                                                    const std::vector<Matrix>& FE, int t_query,
                                                    uint64_t seed) {
  const auto& d = model.dims;
  if (d.n2 != 0) throw DimensionError("oracle_conditional_estimate: fully-partial setting only");
  if (t_query < 1 || t_query > d.T) throw RangeError("oracle_conditional_estimate: t out of range");

  const CovarianceSchedule cs = corrected_covariance_schedule(model, prior, FP, FE);

  // Primitive standard-normal vector layout:
  //   [e0P (n) | e0E (n) | w_0..w_{T-1} (d each) | wP_1..wP_T | wE_1..wE_T]
  const int T = t_query;
  const int G = 2 * d.n + T * d.d + T * d.p + T * d.q;
  int off_e0P = 0, off_e0E = d.n, off_w = 2 * d.n, off_wP = 2 * d.n + T * d.d,
      off_wE = 2 * d.n + T * d.d + T * d.p;

  const Matrix W0P_half = psd_sqrt(prior.W0P);
  const Matrix W0E_half = psd_sqrt(prior.W0E);
  const Matrix W_half = psd_sqrt(model.W);
  const Matrix GP_half = psd_sqrt(model.GP);
  const Matrix GE_half = psd_sqrt(model.GE);

  auto zero_form = [&](int rows) {
    return detail::AffineForm{Vector::Zero(rows), Matrix::Zero(rows, G)};
  };
  auto block_form = [&](int rows, int offset, const Matrix& factor) {
    detail::AffineForm f = zero_form(rows);
    f.L.middleCols(offset, factor.cols()) = factor;
    return f;
  };
  auto apply = [&](const Matrix& M, const detail::AffineForm& f) {
    return detail::AffineForm{M * f.c, M * f.L};
  };
  auto add = [](const detail::AffineForm& a, const detail::AffineForm& b) {
    return detail::AffineForm{a.c + b.c, a.L + b.L};
  };

  // Anchored at player P's view: x_0 = xhat0P - e0P, xhat0E = x_0 + e0E.
  detail::AffineForm x = block_form(d.n, off_e0P, Matrix(-W0P_half));
  x.c = prior.xhat0P;
  detail::AffineForm xhatP = zero_form(d.n);
  xhatP.c = prior.xhat0P;
  detail::AffineForm xhatE = add(x, block_form(d.n, off_e0E, W0E_half));

  std::vector<detail::AffineForm> obs_forms;  // z^P_1..z^P_t, u^E_0..u^E_{t-1}

  for (int t = 1; t <= T; ++t) {
    const detail::AffineForm uP = apply(FP[t - 1], xhatP);
    const detail::AffineForm uE = apply(FE[t - 1], xhatE);
    obs_forms.push_back(uE);

    detail::AffineForm x_next = apply(model.A_t(t - 1), x);
    x_next = add(x_next, apply(model.BP_t(t - 1), uP));
    x_next = add(x_next, apply(model.BE_t(t - 1), uE));
    x_next =
        add(x_next, block_form(d.n, off_w + (t - 1) * d.d, Matrix(model.Gamma_t(t - 1) * W_half)));
    x = x_next;

    const detail::AffineForm zP =
        add(apply(model.H_t(Player::P, t), x), block_form(d.p, off_wP + (t - 1) * d.p, GP_half));
    const detail::AffineForm zE =
        add(apply(model.H_t(Player::E, t), x), block_form(d.q, off_wE + (t - 1) * d.q, GE_half));
    obs_forms.push_back(zP);

    // Both players' corrected-filter estimates as affine forms, using the
    // deterministic gain schedule. This mirrors the data-generating
    // process; the conditioning below never uses these recursions.
    auto filter_update = [&](Player who, const detail::AffineForm& xhat_own,
                             const detail::AffineForm& u_opp, const Matrix& F_opp,
                             const detail::AffineForm& z) {
      const Matrix& J = (who == Player::P) ? cs.JP[t - 1] : cs.JE[t - 1];
      const Matrix& K = (who == Player::P) ? cs.KP[t] : cs.KE[t];
      const SignalMode mode = signal_mode(F_opp);
      detail::AffineForm innov;
      if (mode == SignalMode::ActionSignal) {
        innov = add(u_opp, apply(-F_opp, xhat_own));
      } else {
        const Matrix FtF = F_opp.transpose() * F_opp;
        const Matrix pinv =
            solve_sym(FtF, F_opp.transpose(), kFilterRcondMin, "oracle (recover)");
        innov = add(apply(pinv, u_opp), apply(-Matrix::Identity(d.n, d.n), xhat_own));
      }
      detail::AffineForm xplus = add(xhat_own, apply(J, innov));
      detail::AffineForm xminus = apply(model.A_t(t - 1), xplus);
      xminus = add(xminus, apply(model.BP_t(t - 1), (who == Player::P) ? apply(FP[t - 1], xhatP)
                                                                       : apply(FP[t - 1], xhatP)));
      xminus = add(xminus, apply(model.BE_t(t - 1), apply(FE[t - 1], xhatE)));
      const detail::AffineForm resid = add(z, apply(-model.H_t(who, t), xminus));
      return add(xminus, apply(K, resid));
    };
    const detail::AffineForm xhatP_next = filter_update(Player::P, xhatP, uE, FE[t - 1], zP);
    const detail::AffineForm xhatE_next = filter_update(Player::E, xhatE, uP, FP[t - 1], zE);
    xhatP = xhatP_next;
    xhatE = xhatE_next;
  }

  // Stack the observation forms.
  int obs_dim = 0;
  for (const auto& f : obs_forms) obs_dim += static_cast<int>(f.c.size());
  Vector obs_c(obs_dim);
  Matrix obs_L(obs_dim, G);
  int row = 0;
  for (const auto& f : obs_forms) {
    obs_c.segment(row, f.c.size()) = f.c;
    obs_L.middleRows(row, f.c.size()) = f.L;
    row += static_cast<int>(f.c.size());
  }

  // Draw one primitive realization and evaluate everything on it.
  Rng rng(seed);
  const Vector g = rng.normal_vector(G);
  const Vector obs_value = obs_c + obs_L * g;

  OracleComparison out;
  out.xhat_filter = xhatP.c + xhatP.L * g;
  const Matrix cov_obs = obs_L * obs_L.transpose();
  const Matrix cov_x_obs = x.L * obs_L.transpose();
  const Vector adj = solve_sym(cov_obs, obs_value - obs_c, 1e-14, "oracle conditioning");
  out.cond_mean = x.c + cov_x_obs * adj;
  return out;
}

}  // namespace lqgame
