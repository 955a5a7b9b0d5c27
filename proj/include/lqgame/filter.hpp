#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "lqgame/model.hpp"

namespace lqgame {

struct DegenerateSignalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AdmissibilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Singularity guard for the filter solves. The recursion guarantees the
/// inverted factors are nonsingular when the model assumptions hold, so a
/// failure here signals violated preconditions rather than bad luck.
constexpr double kFilterRcondMin = 1e-13;

/// One player's belief over the partially observed block at time t:
/// estimate xhat with covariance Sigma, the cross-covariance of the two
/// players' estimation errors SigmaCross = E[e_self (e_opp)'], and the
/// relative covariance SigmaRel = Cov(xhat_opp - xhat_self), which is also
/// this player's posterior covariance for the opponent's estimate.
struct BeliefState {
  int t = 0;
  Vector xhat;
  Matrix Sigma;
  Matrix SigmaCross;
  Matrix SigmaRel;

  static BeliefState initial(Player i, const Prior& prior) {
    BeliefState b;
    b.t = 0;
    b.xhat = (i == Player::P) ? prior.xhat0P : prior.xhat0E;
    b.Sigma = (i == Player::P) ? prior.W0P : prior.W0E;
    b.SigmaCross = Matrix::Zero(b.Sigma.rows(), b.Sigma.cols());
    b.SigmaRel = prior.W0P + prior.W0E;
    return b;
  }
};

enum class SignalMode { ActionSignal, EstimateRecovered };

/// The opponent's action seen as a linear signal y = Y * x1 + (no noise).
/// When the opponent's gain block has full column rank n1 the estimate is
/// recovered outright (Y = I); otherwise the action itself is the signal.
struct SignalPair {
  Matrix Y;
  Vector y;
  SignalMode mode = SignalMode::ActionSignal;
};

struct CorrectionResult {
  Matrix J;
  Vector xhat_plus;
  Matrix Sigma_plus;
};

/// Full bookkeeping of one player's side of a two-player step.
struct FilterStepReport {
  Matrix J;
  Vector xhat_plus;
  Matrix Sigma_plus;
  Vector xhat_minus;
  Matrix Sigma_minus;
  Matrix K;
  Matrix Delta;
  BeliefState belief_out;
};

/// Classifies the opponent gain block F1 (control_dim x n1) by rank.
/// Admissible gains have rank min(control_dim, n1); anything less is
/// rejected since the signal algebra breaks down.
inline SignalMode signal_mode(const Matrix& F1) {
  const int cdim = static_cast<int>(F1.rows());
  const int n1 = static_cast<int>(F1.cols());
  if (matrix_rank(F1) != std::min(cdim, n1)) {
    throw AdmissibilityError("opponent gain block has rank below min(control dim, n1)");
  }
  return n1 <= cdim ? SignalMode::EstimateRecovered : SignalMode::ActionSignal;
}

/// Builds the (Y, y) pair for the opponent's observed action u_opp.
/// F2/x2 subtract the fully observed block's contribution; in recovered
/// mode y is the opponent's state estimate obtained by left-inverting F1
/// (callers may pass it precomputed instead).
inline SignalPair select_signal_pair(const Matrix& F_opp_1,
                                     const std::optional<Matrix>& F_opp_2, const Vector& u_opp,
                                     const std::optional<Vector>& x2,
                                     const std::optional<Vector>& xhat_opp_recovered = std::nullopt) {
  SignalPair sp;
  sp.mode = signal_mode(F_opp_1);
  Vector u_eff = u_opp;
  if (F_opp_2 && x2 && F_opp_2->size() > 0) u_eff -= (*F_opp_2) * (*x2);

  if (sp.mode == SignalMode::ActionSignal) {
    sp.Y = F_opp_1;
    sp.y = u_eff;
  } else {
    sp.Y = Matrix::Identity(F_opp_1.cols(), F_opp_1.cols());
    if (xhat_opp_recovered) {
      sp.y = *xhat_opp_recovered;
    } else {
      const Matrix FtF = F_opp_1.transpose() * F_opp_1;
      sp.y = solve_sym(FtF, F_opp_1.transpose() * u_eff, kFilterRcondMin,
                       "select_signal_pair (recover estimate)");
    }
  }
  return sp;
}

/// Information correction: treats the opponent's action as a signal and
/// folds it into the belief. J is the gain on the innovation y - Y*xhat;
/// the covariance drops by the PSD term (Sigma - SigmaCross) SigmaRel^{-1}
/// (Sigma - SigmaCross)', so information never hurts.
inline CorrectionResult correction_step(const BeliefState& belief, const SignalPair& signal) {
  CorrectionResult res;
  const Matrix D = belief.Sigma - belief.SigmaCross;
  const Matrix YS = signal.Y * belief.SigmaRel;
  const Matrix S = YS * YS.transpose();  // Y SigmaRel SigmaRel Y'
  Matrix JT;
  try {
    JT = solve_sym(S, YS * D.transpose(), kFilterRcondMin, "correction_step");
  } catch (const NumericalError& e) {
    throw DegenerateSignalError(e.what());
  }
  res.J = JT.transpose();
  res.xhat_plus = belief.xhat + res.J * (signal.y - signal.Y * belief.xhat);
  const Matrix DS = solve_sym_right(D, belief.SigmaRel, kFilterRcondMin, "correction_step (SigmaRel)");
  res.Sigma_plus = symmetrize(belief.Sigma - DS * D.transpose());
  return res;
}

namespace detail {

struct MeasurementUpdate {
  Matrix K;
  Vector xhat;
  Matrix Sigma;
};

inline MeasurementUpdate measurement_update(const Matrix& H, const Matrix& G,
                                            const Vector& xhat_minus, const Matrix& Sigma_minus,
                                            const Vector& z) {
  MeasurementUpdate mu;
  const Matrix S = H * Sigma_minus * H.transpose() + G;
  Matrix KT;
  try {
    KT = solve_sym(S, H * Sigma_minus.transpose(), kFilterRcondMin, "measurement_update");
  } catch (const NumericalError& e) {
    throw DegenerateSignalError(e.what());
  }
  mu.K = KT.transpose();
  mu.xhat = xhat_minus + mu.K * (z - H * xhat_minus);
  mu.Sigma = symmetrize((Matrix::Identity(Sigma_minus.rows(), Sigma_minus.cols()) - mu.K * H) *
                        Sigma_minus);
  return mu;
}

}  // namespace detail

/// Single-agent Kalman recursion: predict with the player's own control,
/// then measurement-update with the signal z at time t. Cross and relative
/// covariances are carried through untouched (single-agent mode has none).
inline BeliefState single_agent_step(const GameModel& model, const BeliefState& belief,
                                     const Vector& u, const Vector& z, int t,
                                     Player player = Player::P) {
  if (t < 1 || t > model.dims.T) throw RangeError("single_agent_step: t out of range");
  if (belief.t != t - 1) throw RangeError("single_agent_step: belief not at t-1");
  if (model.dims.n2 != 0) throw DimensionError("single_agent_step requires n2 = 0");

  const Vector xhat_minus = model.A_t(t - 1) * belief.xhat + model.B_t(player, t - 1) * u;
  const Matrix Sigma_minus =
      symmetrize(model.A_t(t - 1) * belief.Sigma * model.A_t(t - 1).transpose() + model.GWG_full(t - 1));
  const auto mu = detail::measurement_update(model.H_t(player, t), model.G_i(player), xhat_minus,
                                             Sigma_minus, z);
  BeliefState out = belief;
  out.t = t;
  out.xhat = mu.xhat;
  out.Sigma = mu.Sigma;
  return out;
}

/// Uncorrected recursion: both controls enter the predict step but the
/// opponent's action is never used as information. This is the baseline
/// whose tower-property failure the verify module exhibits.
inline BeliefState naive_step(const GameModel& model, const BeliefState& belief, const Vector& uP,
                              const Vector& uE, const Vector& z, int t, Player player,
                              const std::optional<Vector>& x2_prev = std::nullopt) {
  if (t < 1 || t > model.dims.T) throw RangeError("naive_step: t out of range");
  if (belief.t != t - 1) throw RangeError("naive_step: belief not at t-1");
  const auto& d = model.dims;
  if (d.n2 > 0 && (!x2_prev || x2_prev->size() != d.n2)) {
    throw DimensionError("naive_step: x2_prev required when n2 > 0");
  }

  Vector xhat_minus = model.A11(t - 1) * belief.xhat + model.B1(Player::P, t - 1) * uP +
                      model.B1(Player::E, t - 1) * uE;
  if (d.n2 > 0) xhat_minus += model.A12(t - 1) * (*x2_prev);
  const Matrix Sigma_minus =
      symmetrize(model.A11(t - 1) * belief.Sigma * model.A11(t - 1).transpose() + model.GWG1(t - 1));
  const auto mu = detail::measurement_update(model.H_t(player, t), model.G_i(player), xhat_minus,
                                             Sigma_minus, z);
  BeliefState out = belief;
  out.t = t;
  out.xhat = mu.xhat;
  out.Sigma = mu.Sigma;
  return out;
}

namespace detail {

inline void check_cross_consistency(const BeliefState& bP, const BeliefState& bE) {
  const double scale = std::max(1.0, bP.SigmaCross.cwiseAbs().maxCoeff());
  if ((bE.SigmaCross - bP.SigmaCross.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw std::invalid_argument(
        "two-player step: beliefs carry inconsistent cross-covariances "
        "(SigmaCross of E must transpose SigmaCross of P)");
  }
  if (bP.t != bE.t) throw std::invalid_argument("two-player step: beliefs at different times");
}

struct PlayerSide {
  Player who;
  const BeliefState* belief;
  Vector z;
  Matrix F_opp_1;  // opponent's gain on the estimated block
  Matrix F_opp_2;  // opponent's gain on the observed block (may be empty)
  Vector u_opp;
};

/// Shared body of the corrected two-player step on the partitioned model.
/// The two players' corrections and measurement updates are independent,
/// but Delta / SigmaCross / SigmaRel couple them, so the step is atomic.
inline std::pair<FilterStepReport, FilterStepReport> corrected_step_impl(
    const GameModel& model, const BeliefState& belief_P, const BeliefState& belief_E,
    const std::optional<Vector>& x2_prev, const Vector& uP, const Vector& uE, const Vector& zP,
    const Vector& zE, const Matrix& FP, const Matrix& FE, int t) {
  const auto& d = model.dims;
  if (t < 1 || t > d.T) throw RangeError("two-player step: t out of range");
  if (belief_P.t != t - 1) throw RangeError("two-player step: beliefs not at t-1");
  check_cross_consistency(belief_P, belief_E);

  auto split = [&](const Matrix& F) {
    return std::pair<Matrix, Matrix>(F.leftCols(d.n1), F.rightCols(d.n2));
  };
  const auto [FP1, FP2] = split(FP);
  const auto [FE1, FE2] = split(FE);

  PlayerSide sideP{Player::P, &belief_P, zP, FE1, FE2, uE};
  PlayerSide sideE{Player::E, &belief_E, zE, FP1, FP2, uP};

  FilterStepReport reports[2];
  for (int s = 0; s < 2; ++s) {
    const PlayerSide& side = (s == 0) ? sideP : sideE;
    const SignalPair sp = select_signal_pair(side.F_opp_1, side.F_opp_2, side.u_opp, x2_prev);
    const CorrectionResult corr = correction_step(*side.belief, sp);

    Vector xhat_minus = model.A11(t - 1) * corr.xhat_plus + model.B1(Player::P, t - 1) * uP +
                        model.B1(Player::E, t - 1) * uE;
    if (d.n2 > 0) xhat_minus += model.A12(t - 1) * (*x2_prev);
    const Matrix Sigma_minus = symmetrize(
        model.A11(t - 1) * corr.Sigma_plus * model.A11(t - 1).transpose() + model.GWG1(t - 1));

    MeasurementUpdate mu;
    try {
      mu = measurement_update(model.H_t(side.who, t), model.G_i(side.who), xhat_minus, Sigma_minus,
                              side.z);
    } catch (const DegenerateSignalError& e) {
      throw DegenerateSignalError(std::string(e.what()) + " [player " + player_name(side.who) +
                                  ", step t=" + std::to_string(t) + "]");
    }

    FilterStepReport& rep = reports[s];
    rep.J = corr.J;
    rep.xhat_plus = corr.xhat_plus;
    rep.Sigma_plus = corr.Sigma_plus;
    rep.xhat_minus = xhat_minus;
    rep.Sigma_minus = Sigma_minus;
    rep.K = mu.K;
    rep.belief_out.t = t;
    rep.belief_out.xhat = mu.xhat;
    rep.belief_out.Sigma = mu.Sigma;
  }

  // Joint bookkeeping. Only SigmaCross^{(P,E)} is propagated; the (E,P)
  // orientation is its transpose.
  const Matrix D_PE = belief_P.Sigma - belief_P.SigmaCross;
  const Matrix D_EP = belief_E.Sigma - belief_E.SigmaCross;
  const Matrix Delta_PE =
      solve_sym_right(D_PE, belief_P.SigmaRel, kFilterRcondMin, "two-player step (Delta)") *
          D_EP.transpose() +
      belief_P.SigmaCross;
  reports[0].Delta = Delta_PE;
  reports[1].Delta = Delta_PE.transpose();

  const Matrix mid =
      model.A11(t - 1) * Delta_PE * model.A11(t - 1).transpose() + model.GWG1(t - 1);
  const Matrix IKH_P = Matrix::Identity(d.n1, d.n1) - reports[0].K * model.H_t(Player::P, t);
  const Matrix IKH_E = Matrix::Identity(d.n1, d.n1) - reports[1].K * model.H_t(Player::E, t);
  const Matrix cross_PE = IKH_P * mid * IKH_E.transpose();
  const Matrix rel =
      symmetrize(reports[0].belief_out.Sigma + reports[1].belief_out.Sigma - cross_PE -
                 cross_PE.transpose());

  reports[0].belief_out.SigmaCross = cross_PE;
  reports[1].belief_out.SigmaCross = cross_PE.transpose();
  reports[0].belief_out.SigmaRel = rel;
  reports[1].belief_out.SigmaRel = rel;
  return {reports[0], reports[1]};
}

}  // namespace detail

/// Corrected two-player step in the fully-partial setting (n2 = 0): both
/// players fold the opponent's previous action into their belief, predict,
/// and measurement-update; the cross and relative covariances are then
/// updated jointly. FP / FE are the gains both players used at t-1.
inline std::pair<FilterStepReport, FilterStepReport> two_player_step(
    const GameModel& model, const BeliefState& belief_P, const BeliefState& belief_E,
    const Vector& uP, const Vector& uE, const Vector& zP, const Vector& zE, const Matrix& FP,
    const Matrix& FE, int t) {
  if (model.dims.n2 != 0) throw DimensionError("two_player_step requires n2 = 0 (use mixed_step)");
  return detail::corrected_step_impl(model, belief_P, belief_E, std::nullopt, uP, uE, zP, zE, FP,
                                     FE, t);
}

/// Mixed-observability variant: beliefs cover only the n1 block, the
/// observed block enters through the partitioned predict terms, and the
/// opponent's signal subtracts F_opp^(2) x2 before use.
inline std::pair<FilterStepReport, FilterStepReport> mixed_step(
    const GameModel& model, const BeliefState& belief_P, const BeliefState& belief_E,
    const Vector& x2_prev, const Vector& uP, const Vector& uE, const Vector& zP, const Vector& zE,
    const Matrix& FP, const Matrix& FE, int t) {
  if (model.dims.n2 < 1) throw DimensionError("mixed_step requires n2 >= 1 (use two_player_step)");
  return detail::corrected_step_impl(model, belief_P, belief_E, x2_prev, uP, uE, zP, zE, FP, FE,
                                     t);
}

/// Deterministic covariance and gain sequences induced by a gain schedule.
/// These evolve independently of realized signals, so one forward pass
/// serves every episode and the value-constant recursion.
struct CovarianceSchedule {
  // Indexed by t = 0..T.
  std::vector<Matrix> SigmaP, SigmaE;
  std::vector<Matrix> SigmaCross;  // (P,E) orientation
  std::vector<Matrix> SigmaRel;
  // K at t = 1..T (slot [t]; slot [0] unused and empty).
  std::vector<Matrix> KP, KE;
  // Correction gain J and Pi = (Sigma - SigmaCross) SigmaRel^{-1} at
  // t = 0..T-1 (the correction entering step t -> t+1).
  std::vector<Matrix> JP, JE;
  std::vector<Matrix> PiP, PiE;
  // Improved and predicted covariances around step t -> t+1.
  std::vector<Matrix> SigmaP_plus, SigmaE_plus;    // t = 0..T-1
  std::vector<Matrix> SigmaP_minus, SigmaE_minus;  // at t = 1..T (slot [t])
};

/// Runs the corrected recursion on covariances only, under gains FP/FE
/// (full n-column gains; only their n1 block enters the signal algebra).
inline CovarianceSchedule corrected_covariance_schedule(const GameModel& model, const Prior& prior,
                                                        const std::vector<Matrix>& FP,
                                                        const std::vector<Matrix>& FE) {
  const auto& d = model.dims;
  const int T = d.T;
  CovarianceSchedule cs;
  auto resize_all = [&](std::vector<Matrix>& v) { v.resize(static_cast<size_t>(T) + 1); };
  resize_all(cs.SigmaP);
  resize_all(cs.SigmaE);
  resize_all(cs.SigmaCross);
  resize_all(cs.SigmaRel);
  resize_all(cs.KP);
  resize_all(cs.KE);
  resize_all(cs.JP);
  resize_all(cs.JE);
  resize_all(cs.PiP);
  resize_all(cs.PiE);
  resize_all(cs.SigmaP_plus);
  resize_all(cs.SigmaE_plus);
  resize_all(cs.SigmaP_minus);
  resize_all(cs.SigmaE_minus);

  cs.SigmaP[0] = prior.W0P;
  cs.SigmaE[0] = prior.W0E;
  cs.SigmaCross[0] = Matrix::Zero(d.n1, d.n1);
  cs.SigmaRel[0] = prior.W0P + prior.W0E;

  for (int t = 1; t <= T; ++t) {
    const Matrix& SP = cs.SigmaP[t - 1];
    const Matrix& SE = cs.SigmaE[t - 1];
    const Matrix& C = cs.SigmaCross[t - 1];
    const Matrix& rel = cs.SigmaRel[t - 1];

    const Matrix D_P = SP - C;
    const Matrix D_E = SE - C.transpose();
    cs.PiP[t - 1] = solve_sym_right(D_P, rel, kFilterRcondMin, "covariance schedule (Pi)");
    cs.PiE[t - 1] = solve_sym_right(D_E, rel, kFilterRcondMin, "covariance schedule (Pi)");

    auto correction_gain = [&](const Matrix& D, const Matrix& F_opp_full) {
      const Matrix F1 = F_opp_full.leftCols(d.n1);
      const SignalMode mode = signal_mode(F1);
      const Matrix Y = (mode == SignalMode::ActionSignal)
                           ? F1
                           : Matrix(Matrix::Identity(d.n1, d.n1));
      const Matrix YS = Y * rel;
      const Matrix S = YS * YS.transpose();
      Matrix JT = solve_sym(S, YS * D.transpose(), kFilterRcondMin, "covariance schedule (J)");
      return Matrix(JT.transpose());
    };
    cs.JP[t - 1] = correction_gain(D_P, FE[static_cast<size_t>(t - 1)]);
    cs.JE[t - 1] = correction_gain(D_E, FP[static_cast<size_t>(t - 1)]);

    cs.SigmaP_plus[t - 1] = symmetrize(SP - cs.PiP[t - 1] * D_P.transpose());
    cs.SigmaE_plus[t - 1] = symmetrize(SE - cs.PiE[t - 1] * D_E.transpose());

    const Matrix A11 = model.A11(t - 1);
    const Matrix GW = model.GWG1(t - 1);
    cs.SigmaP_minus[t] = symmetrize(A11 * cs.SigmaP_plus[t - 1] * A11.transpose() + GW);
    cs.SigmaE_minus[t] = symmetrize(A11 * cs.SigmaE_plus[t - 1] * A11.transpose() + GW);

    auto gain = [&](Player who, const Matrix& Sminus) {
      const Matrix& H = model.H_t(who, t);
      const Matrix S = H * Sminus * H.transpose() + model.G_i(who);
      Matrix KT = solve_sym(S, H * Sminus.transpose(), kFilterRcondMin, "covariance schedule (K)");
      return Matrix(KT.transpose());
    };
    cs.KP[t] = gain(Player::P, cs.SigmaP_minus[t]);
    cs.KE[t] = gain(Player::E, cs.SigmaE_minus[t]);

    const Matrix I1 = Matrix::Identity(d.n1, d.n1);
    cs.SigmaP[t] = symmetrize((I1 - cs.KP[t] * model.H_t(Player::P, t)) * cs.SigmaP_minus[t]);
    cs.SigmaE[t] = symmetrize((I1 - cs.KE[t] * model.H_t(Player::E, t)) * cs.SigmaE_minus[t]);

    const Matrix Delta = cs.PiP[t - 1] * rel * cs.PiE[t - 1].transpose() + C;
    const Matrix mid = A11 * Delta * A11.transpose() + GW;
    cs.SigmaCross[t] = (I1 - cs.KP[t] * model.H_t(Player::P, t)) * mid *
                       (I1 - cs.KE[t] * model.H_t(Player::E, t)).transpose();
    cs.SigmaRel[t] = symmetrize(cs.SigmaP[t] + cs.SigmaE[t] - cs.SigmaCross[t] -
                                cs.SigmaCross[t].transpose());
  }
  return cs;
}

/// Covariance sequences of the uncorrected filter. The cross-covariance
/// still exists objectively and follows the Lyapunov recursion with
/// Delta = SigmaCross (no correction term).
inline CovarianceSchedule naive_covariance_schedule(const GameModel& model, const Prior& prior) {
  const auto& d = model.dims;
  const int T = d.T;
  CovarianceSchedule cs;
  cs.SigmaP.resize(static_cast<size_t>(T) + 1);
  cs.SigmaE.resize(static_cast<size_t>(T) + 1);
  cs.SigmaCross.resize(static_cast<size_t>(T) + 1);
  cs.SigmaRel.resize(static_cast<size_t>(T) + 1);
  cs.KP.resize(static_cast<size_t>(T) + 1);
  cs.KE.resize(static_cast<size_t>(T) + 1);
  cs.SigmaP_minus.resize(static_cast<size_t>(T) + 1);
  cs.SigmaE_minus.resize(static_cast<size_t>(T) + 1);

  cs.SigmaP[0] = prior.W0P;
  cs.SigmaE[0] = prior.W0E;
  cs.SigmaCross[0] = Matrix::Zero(d.n1, d.n1);
  cs.SigmaRel[0] = prior.W0P + prior.W0E;

  for (int t = 1; t <= T; ++t) {
    const Matrix A11 = model.A11(t - 1);
    const Matrix GW = model.GWG1(t - 1);
    cs.SigmaP_minus[t] = symmetrize(A11 * cs.SigmaP[t - 1] * A11.transpose() + GW);
    cs.SigmaE_minus[t] = symmetrize(A11 * cs.SigmaE[t - 1] * A11.transpose() + GW);

    auto gain = [&](Player who, const Matrix& Sminus) {
      const Matrix& H = model.H_t(who, t);
      const Matrix S = H * Sminus * H.transpose() + model.G_i(who);
      Matrix KT = solve_sym(S, H * Sminus.transpose(), kFilterRcondMin, "naive schedule (K)");
      return Matrix(KT.transpose());
    };
    cs.KP[t] = gain(Player::P, cs.SigmaP_minus[t]);
    cs.KE[t] = gain(Player::E, cs.SigmaE_minus[t]);

    const Matrix I1 = Matrix::Identity(d.n1, d.n1);
    cs.SigmaP[t] = symmetrize((I1 - cs.KP[t] * model.H_t(Player::P, t)) * cs.SigmaP_minus[t]);
    cs.SigmaE[t] = symmetrize((I1 - cs.KE[t] * model.H_t(Player::E, t)) * cs.SigmaE_minus[t]);

    const Matrix mid = A11 * cs.SigmaCross[t - 1] * A11.transpose() + GW;
    cs.SigmaCross[t] = (I1 - cs.KP[t] * model.H_t(Player::P, t)) * mid *
                       (I1 - cs.KE[t] * model.H_t(Player::E, t)).transpose();
    cs.SigmaRel[t] = symmetrize(cs.SigmaP[t] + cs.SigmaE[t] - cs.SigmaCross[t] -
                                cs.SigmaCross[t].transpose());
  }
  return cs;
}

}  // namespace lqgame
