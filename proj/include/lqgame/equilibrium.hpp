#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "lqgame/filter.hpp"
#include "lqgame/model.hpp"

namespace lqgame {

struct NoUniqueEquilibriumError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kEquilibriumRcondMin = 1e-12;

/// Feedback Nash gains and the value matrices they induce.
struct RiccatiSolution {
  std::vector<Matrix> UP, UE;      // t = 0..T
  std::vector<Matrix> FP, FE;      // t = 0..T-1
  std::vector<double> condPhi;     // t = 0..T-1, condition of the stacked block matrix

  const Matrix& U(Player i, int t) const { return i == Player::P ? UP[t] : UE[t]; }
  const Matrix& F(Player i, int t) const { return i == Player::P ? FP[t] : FE[t]; }
};

/// Scalar value-function constants plus the per-step auxiliary matrices
/// (Pi and the stacked L blocks) that build them.
struct ValueConstants {
  std::vector<double> cP, cE;  // t = 0..T
  std::vector<Matrix> PiP, PiE;                    // t = 0..T-1
  std::vector<Matrix> LbarP1, LbarP2, LbarE1, LbarE2;  // t = 0..T-1

  double c(Player i, int t) const { return i == Player::P ? cP[t] : cE[t]; }
};

/// Solves the coupled stage-gain equations at one step by stacking both
/// players' unknowns into a single linear system: the diagonal blocks are
/// R^i + B^i' U^i B^i and the off-diagonal blocks B^i' U^i B^j. A singular
/// stacked matrix means no unique equilibrium at this step.
inline std::tuple<Matrix, Matrix, double> solve_stage_gains(const GameModel& model,
                                                            const Matrix& UP_next,
                                                            const Matrix& UE_next, int t) {
  const auto& d = model.dims;
  const Matrix& A = model.A_t(t);
  const Matrix& BP = model.BP_t(t);
  const Matrix& BE = model.BE_t(t);

  Matrix Phi(d.m + d.k, d.m + d.k);
  Phi.topLeftCorner(d.m, d.m) = model.R_t(Player::P, t) + BP.transpose() * UP_next * BP;
  Phi.topRightCorner(d.m, d.k) = BP.transpose() * UP_next * BE;
  Phi.bottomLeftCorner(d.k, d.m) = BE.transpose() * UE_next * BP;
  Phi.bottomRightCorner(d.k, d.k) = model.R_t(Player::E, t) + BE.transpose() * UE_next * BE;

  Matrix rhs(d.m + d.k, d.n);
  rhs.topRows(d.m) = -(BP.transpose() * UP_next * A);
  rhs.bottomRows(d.k) = -(BE.transpose() * UE_next * A);

  const double cond = cond_svd(Phi);
  if (!(cond < 1.0 / kEquilibriumRcondMin)) {
    throw NoUniqueEquilibriumError("stage-gain system singular at t=" + std::to_string(t) +
                                   " (no unique equilibrium)");
  }
  const Matrix stacked = Phi.partialPivLu().solve(rhs);
  return {stacked.topRows(d.m), stacked.bottomRows(d.k), cond};
}

/// Backward pass: from U_T = Q_T, alternate the stage-gain solve with the
/// Riccati update U_t = Q_t + F'RF + (A + B^P F^P + B^E F^E)' U_{t+1} (...).
inline RiccatiSolution backward_riccati(const GameModel& model) {
  const int T = model.dims.T;
  RiccatiSolution sol;
  sol.UP.resize(static_cast<size_t>(T) + 1);
  sol.UE.resize(static_cast<size_t>(T) + 1);
  sol.FP.resize(static_cast<size_t>(T));
  sol.FE.resize(static_cast<size_t>(T));
  sol.condPhi.resize(static_cast<size_t>(T));

  sol.UP[static_cast<size_t>(T)] = symmetrize(model.Q_t(Player::P, T));
  sol.UE[static_cast<size_t>(T)] = symmetrize(model.Q_t(Player::E, T));

  for (int t = T - 1; t >= 0; --t) {
    auto [FP, FE, cond] = solve_stage_gains(model, sol.UP[t + 1], sol.UE[t + 1], t);
    sol.FP[t] = FP;
    sol.FE[t] = FE;
    sol.condPhi[t] = cond;

    const Matrix closed = model.A_t(t) + model.BP_t(t) * FP + model.BE_t(t) * FE;
    sol.UP[t] = symmetrize(model.Q_t(Player::P, t) + FP.transpose() * model.R_t(Player::P, t) * FP +
                           closed.transpose() * sol.UP[t + 1] * closed);
    sol.UE[t] = symmetrize(model.Q_t(Player::E, t) + FE.transpose() * model.R_t(Player::E, t) * FE +
                           closed.transpose() * sol.UE[t + 1] * closed);
  }
  return sol;
}

namespace detail {

inline double trace_prod(const Matrix& a, const Matrix& b) { return (a * b).trace(); }

}  // namespace detail

/// Backward recursion for the value constants. The covariance schedule
/// supplies the deterministic Sigma / SigmaCross / K / Pi sequences the
/// equilibrium gains induce; gains come first, covariances second,
/// constants third. With n2 = 0 the recursion follows the trace expansion
/// of the direct one-step expectation; with n2 > 0 it uses the stacked
/// L-block form on the (estimate, observed) vector.
inline ValueConstants value_constants(const GameModel& model, const RiccatiSolution& riccati,
                                      const CovarianceSchedule& cov) {
  const auto& d = model.dims;
  const int T = d.T;
  ValueConstants vc;
  vc.cP.assign(static_cast<size_t>(T) + 1, 0.0);
  vc.cE.assign(static_cast<size_t>(T) + 1, 0.0);
  vc.PiP.resize(static_cast<size_t>(T));
  vc.PiE.resize(static_cast<size_t>(T));
  vc.LbarP1.resize(static_cast<size_t>(T));
  vc.LbarP2.resize(static_cast<size_t>(T));
  vc.LbarE1.resize(static_cast<size_t>(T));
  vc.LbarE2.resize(static_cast<size_t>(T));

  for (Player i : {Player::P, Player::E}) {
    const Player j = opponent(i);
    std::vector<double>& c = (i == Player::P) ? vc.cP : vc.cE;
    const std::vector<Matrix>& Sigma_i = (i == Player::P) ? cov.SigmaP : cov.SigmaE;
    const std::vector<Matrix>& Sigma_j = (i == Player::P) ? cov.SigmaE : cov.SigmaP;
    const std::vector<Matrix>& K_i = (i == Player::P) ? cov.KP : cov.KE;
    const std::vector<Matrix>& Pi_i = (i == Player::P) ? cov.PiP : cov.PiE;

    const Matrix QT11 = model.Q_t(i, T).topLeftCorner(d.n1, d.n1);
    c[static_cast<size_t>(T)] = detail::trace_prod(QT11, Sigma_i[static_cast<size_t>(T)]);

    for (int t = T - 1; t >= 0; --t) {
      const Matrix& U_next = riccati.U(i, t + 1);
      const Matrix& Fj = riccati.F(j, t);
      const Matrix& Bj = model.B_t(j, t);
      // SigmaCross is stored in (P,E) orientation.
      const Matrix cross_ij =
          (i == Player::P) ? cov.SigmaCross[t] : Matrix(cov.SigmaCross[t].transpose());

      double ct;
      if (d.n2 == 0) {
        const Matrix M = model.A_t(t) + Bj * Fj;
        const Matrix N = Bj * Fj;
        ct = c[t + 1] + detail::trace_prod(model.Q_t(i, t), Sigma_i[t]) -
             detail::trace_prod(U_next, Sigma_i[t + 1]) +
             detail::trace_prod(M.transpose() * U_next * M, Sigma_i[t]) +
             detail::trace_prod(N.transpose() * U_next * N, Sigma_j[t]) -
             2.0 * detail::trace_prod(M.transpose() * U_next * N, cross_ij.transpose()) +
             detail::trace_prod(model.Gamma_t(t).transpose() * U_next * model.Gamma_t(t), model.W);
      } else {
        const Matrix A11 = model.A11(t);
        const Matrix A21 = model.A21(t);
        const Matrix Bj1 = model.B1(j, t);
        const Matrix Bj2 = model.B2(j, t);
        const Matrix Fj1 = Fj.leftCols(d.n1);
        const Matrix& K = K_i[t + 1];
        const Matrix KH = K * model.H_t(i, t + 1);
        const Matrix& Pi = Pi_i[t];
        const Matrix I1 = Matrix::Identity(d.n1, d.n1);

        const Matrix Ltil1 = -A11 * Pi - Bj1 * Fj1 - KH * A11 * (I1 - Pi);
        const Matrix Ltil2 = A11 * Pi + Bj1 * Fj1 - KH * A11 * Pi;
        Matrix Lbar1(d.n, d.n1), Lbar2(d.n, d.n1);
        Lbar1.topRows(d.n1) = Ltil1;
        Lbar1.bottomRows(d.n2) = -(A21 + Bj2 * Fj1);
        Lbar2.topRows(d.n1) = Ltil2;
        Lbar2.bottomRows(d.n2) = Bj2 * Fj1;

        Matrix Snoise(d.n, d.d);
        Snoise.topRows(d.n1) = KH * model.Gamma1(t);
        Snoise.bottomRows(d.n2) = model.Gamma2(t);
        const Matrix U11 = U_next.topLeftCorner(d.n1, d.n1);
        const Matrix Q11 = model.Q_t(i, t).topLeftCorner(d.n1, d.n1);

        ct = c[t + 1] + detail::trace_prod(Q11, Sigma_i[t]) +
             detail::trace_prod(Lbar1.transpose() * U_next * Lbar1, Sigma_i[t]) +
             detail::trace_prod(Lbar2.transpose() * U_next * Lbar2, Sigma_j[t]) +
             2.0 * detail::trace_prod(Lbar2.transpose() * U_next * Lbar1, cross_ij) +
             detail::trace_prod(K.transpose() * U11 * K, model.G_i(i)) +
             detail::trace_prod(Snoise.transpose() * U_next * Snoise, model.W);

        if (i == Player::P) {
          vc.PiP[t] = Pi;
          vc.LbarP1[t] = Lbar1;
          vc.LbarP2[t] = Lbar2;
        } else {
          vc.PiE[t] = Pi;
          vc.LbarE1[t] = Lbar1;
          vc.LbarE2[t] = Lbar2;
        }
      }
      c[static_cast<size_t>(t)] = ct;
    }
  }
  return vc;
}

/// Quadratic value function: y' U_t y + c_t. In the fully-partial setting
/// y is the state estimate; in the mixed setting y stacks the estimate and
/// the observed block.
inline double value_at(const RiccatiSolution& riccati, const ValueConstants& constants,
                       const Vector& y, int t, Player player) {
  if (t < 0 || t >= static_cast<int>(riccati.UP.size())) {
    throw RangeError("value_at: t out of range");
  }
  return y.dot(riccati.U(player, t) * y) + constants.c(player, t);
}

}  // namespace lqgame
