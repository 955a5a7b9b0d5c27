#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lqgame/linalg.hpp"

namespace lqgame {

enum class Player { P, E };

inline Player opponent(Player p) { return p == Player::P ? Player::E : Player::P; }
inline const char* player_name(Player p) { return p == Player::P ? "P" : "E"; }

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// State is split into a partially observed block of size n1 (estimated
/// through noisy signals) and a fully observed block of size n2 (public).
/// n2 = 0 recovers the fully-partial setting.
struct Dimensions {
  int n = 1;    // state
  int n1 = 1;   // partially observed sub-block
  int n2 = 0;   // fully observed sub-block
  int m = 1;    // player-P control
  int k = 1;    // player-E control
  int p = 1;    // P signal
  int q = 1;    // E signal
  int d = 1;    // process noise
  int T = 1;    // horizon, in steps

  bool consistent() const {
    return n == n1 + n2 && n1 >= 1 && n2 >= 0 && m >= 1 && k >= 1 && p >= 1 &&
           q >= 1 && d >= 1 && T >= 1;
  }
};

/// Time-indexed system, observation, and cost matrices of one game.
/// Storage conventions: A, BP, BE, Gamma, RP, RE hold t = 0..T-1;
/// HP, HE hold t = 1..T (accessor takes the time index, not the slot);
/// QP, QE hold t = 0..T. Constant matrices are broadcast at load time.
struct GameModel {
  Dimensions dims;

  std::vector<Matrix> A, BP, BE, Gamma;   // t = 0..T-1
  Matrix W;                               // d x d process-noise covariance
  std::vector<Matrix> HP, HE;             // t = 1..T, stored at [t-1]
  Matrix GP, GE;                          // signal-noise covariances
  std::vector<Matrix> QP, QE;             // t = 0..T
  std::vector<Matrix> RP, RE;             // t = 0..T-1

  const Matrix& A_t(int t) const { return at(A, t, 0, dims.T - 1, "A"); }
  const Matrix& BP_t(int t) const { return at(BP, t, 0, dims.T - 1, "BP"); }
  const Matrix& BE_t(int t) const { return at(BE, t, 0, dims.T - 1, "BE"); }
  const Matrix& Gamma_t(int t) const { return at(Gamma, t, 0, dims.T - 1, "Gamma"); }
  const Matrix& H_t(Player i, int t) const {
    return i == Player::P ? at(HP, t - 1, 0, dims.T - 1, "HP") : at(HE, t - 1, 0, dims.T - 1, "HE");
  }
  const Matrix& G_i(Player i) const { return i == Player::P ? GP : GE; }
  const Matrix& Q_t(Player i, int t) const {
    return i == Player::P ? at(QP, t, 0, dims.T, "QP") : at(QE, t, 0, dims.T, "QE");
  }
  const Matrix& R_t(Player i, int t) const {
    return i == Player::P ? at(RP, t, 0, dims.T - 1, "RP") : at(RE, t, 0, dims.T - 1, "RE");
  }
  const Matrix& B_t(Player i, int t) const { return i == Player::P ? BP_t(t) : BE_t(t); }
  int control_dim(Player i) const { return i == Player::P ? dims.m : dims.k; }

  // Partition blocks of the mixed setting; with n2 = 0 the (1,x) blocks
  // are the full matrices and the (2,x) blocks are empty.
  Matrix A11(int t) const { return A_t(t).topLeftCorner(dims.n1, dims.n1); }
  Matrix A12(int t) const { return A_t(t).topRightCorner(dims.n1, dims.n2); }
  Matrix A21(int t) const { return A_t(t).bottomLeftCorner(dims.n2, dims.n1); }
  Matrix A22(int t) const { return A_t(t).bottomRightCorner(dims.n2, dims.n2); }
  Matrix B1(Player i, int t) const { return B_t(i, t).topRows(dims.n1); }
  Matrix B2(Player i, int t) const { return B_t(i, t).bottomRows(dims.n2); }
  Matrix Gamma1(int t) const { return Gamma_t(t).topRows(dims.n1); }
  Matrix Gamma2(int t) const { return Gamma_t(t).bottomRows(dims.n2); }
  /// Process-noise covariance restricted to the partially observed block.
  Matrix GWG1(int t) const { return Gamma1(t) * W * Gamma1(t).transpose(); }
  Matrix GWG_full(int t) const { return Gamma_t(t) * W * Gamma_t(t).transpose(); }

 private:
  static const Matrix& at(const std::vector<Matrix>& v, int slot, int lo, int hi,
                          const char* name) {
    if (slot < lo || slot > hi || slot >= static_cast<int>(v.size())) {
      throw RangeError(std::string(name) + ": time index out of range");
    }
    return v[static_cast<size_t>(slot)];
  }
};

/// Each player's Gaussian prior over the partially observed block, plus
/// the public initial values used when simulating episodes: x0_observed is
/// the fully observed block (present when n2 > 0) and x1_true0 the true
/// initial value of the partially observed block.
struct Prior {
  Vector xhat0P;
  Matrix W0P;
  Vector xhat0E;
  Matrix W0E;
  Vector x0_observed;  // size n2
  Vector x1_true0;     // size n1
};

struct ValidationIssue {
  enum class Severity { Error, Warning };
  Severity severity = Severity::Error;
  std::string assumption;  // which assumption item, or "structure"
  int t = -1;              // time index, -1 when not time-indexed
  std::string matrix;      // offending matrix
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool pass() const {
    for (const auto& i : issues)
      if (i.severity == ValidationIssue::Severity::Error) return false;
    return true;
  }
  bool has_warnings() const {
    for (const auto& i : issues)
      if (i.severity == ValidationIssue::Severity::Warning) return true;
    return false;
  }
  std::string summary() const {
    std::string s;
    for (const auto& i : issues) {
      s += (i.severity == ValidationIssue::Severity::Error ? "error: " : "warning: ");
      s += i.assumption + " [" + i.matrix;
      if (i.t >= 0) s += " at t=" + std::to_string(i.t);
      s += "] " + i.message + "\n";
    }
    return s;
  }
};

namespace detail {

/// Positive-definiteness tolerance on the minimum eigenvalue of the
/// symmetrized matrix. Min eig in (0, eps_pd] is reported as a warning
/// (near-singular), not a failure, so deliberately tiny regularization
/// noise passes validation.
constexpr double kEpsPd = 1e-10;

inline void check_dims(const GameModel& model, const Prior& prior, ValidationReport& rep) {
  const auto& d = model.dims;
  auto structural = [&](const std::string& name, int t, const std::string& msg) {
    rep.issues.push_back({ValidationIssue::Severity::Error, "structure", t, name, msg});
  };
  auto expect = [&](const Matrix& m, int rows, int cols, const std::string& name, int t) -> bool {
    if (m.rows() != rows || m.cols() != cols) {
      structural(name, t,
                 "expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
      return false;
    }
    return true;
  };

  if (!d.consistent()) {
    structural("dims", -1, "dimension record inconsistent (need n = n1 + n2, all >= 1, n2 >= 0, T >= 1)");
    return;
  }
  auto expect_series = [&](const std::vector<Matrix>& v, size_t len, int rows, int cols,
                           const std::string& name) {
    if (v.size() != len) {
      structural(name, -1, "expected " + std::to_string(len) + " time steps, got " +
                               std::to_string(v.size()));
      return;
    }
    for (size_t t = 0; t < v.size(); ++t) {
      if (!expect(v[t], rows, cols, name, static_cast<int>(t))) return;
    }
  };

  const size_t T = static_cast<size_t>(d.T);
  expect_series(model.A, T, d.n, d.n, "A");
  expect_series(model.BP, T, d.n, d.m, "BP");
  expect_series(model.BE, T, d.n, d.k, "BE");
  expect_series(model.Gamma, T, d.n, d.d, "Gamma");
  expect(model.W, d.d, d.d, "W", -1);
  expect_series(model.HP, T, d.p, d.n1, "HP");
  expect_series(model.HE, T, d.q, d.n1, "HE");
  expect(model.GP, d.p, d.p, "GP", -1);
  expect(model.GE, d.q, d.q, "GE", -1);
  expect_series(model.QP, T + 1, d.n, d.n, "QP");
  expect_series(model.QE, T + 1, d.n, d.n, "QE");
  expect_series(model.RP, T, d.m, d.m, "RP");
  expect_series(model.RE, T, d.k, d.k, "RE");
  expect(Matrix(prior.xhat0P), d.n1, 1, "xhat0P", -1);
  expect(Matrix(prior.xhat0E), d.n1, 1, "xhat0E", -1);
  expect(prior.W0P, d.n1, d.n1, "W0P", -1);
  expect(prior.W0E, d.n1, d.n1, "W0E", -1);
  if (d.n2 > 0) expect(Matrix(prior.x0_observed), d.n2, 1, "x0_observed", -1);
  if (prior.x1_true0.size() > 0) expect(Matrix(prior.x1_true0), d.n1, 1, "x1_0", -1);
}

inline void check_pd(const Matrix& m, const std::string& assumption, int t,
                     const std::string& name, ValidationReport& rep) {
  const double ev = min_eigenvalue(m);
  if (ev <= 0.0) {
    rep.issues.push_back({ValidationIssue::Severity::Error, assumption, t, name,
                          "not positive definite (min eig " + std::to_string(ev) + ")"});
  } else if (ev <= kEpsPd) {
    rep.issues.push_back({ValidationIssue::Severity::Warning, assumption, t, name,
                          "near-singular (min eig " + std::to_string(ev) + ")"});
  }
}

inline void check_psd(const Matrix& m, const std::string& assumption, int t,
                      const std::string& name, ValidationReport& rep) {
  const double ev = min_eigenvalue(m);
  if (ev < -kEpsPd) {
    rep.issues.push_back({ValidationIssue::Severity::Error, assumption, t, name,
                          "not positive semidefinite (min eig " + std::to_string(ev) + ")"});
  }
}

}  // namespace detail

/// Checks every standing model assumption: noise covariances positive
/// definite (item 1), signal matrices of rank n1 (item 2), process noise
/// non-degenerate on the estimated block (item 3), cost matrices PSD/PD
/// (item 4), plus prior covariances and structural dimension agreement.
/// Structural errors short-circuit the numeric checks.
inline ValidationReport validate(const GameModel& model, const Prior& prior) {
  ValidationReport rep;
  detail::check_dims(model, prior, rep);
  if (!rep.pass()) return rep;

  const auto& d = model.dims;
  detail::check_pd(model.W, "assumption-1 (noise covariance)", -1, "W", rep);
  detail::check_pd(model.GP, "assumption-1 (noise covariance)", -1, "GP", rep);
  detail::check_pd(model.GE, "assumption-1 (noise covariance)", -1, "GE", rep);

  for (int t = 1; t <= d.T; ++t) {
    if (matrix_rank(model.H_t(Player::P, t)) != d.n1) {
      rep.issues.push_back({ValidationIssue::Severity::Error, "assumption-2 (signal rank)", t, "HP",
                            "rank below n1 = " + std::to_string(d.n1)});
    }
    if (matrix_rank(model.H_t(Player::E, t)) != d.n1) {
      rep.issues.push_back({ValidationIssue::Severity::Error, "assumption-2 (signal rank)", t, "HE",
                            "rank below n1 = " + std::to_string(d.n1)});
    }
  }

  for (int t = 0; t < d.T; ++t) {
    detail::check_pd(model.GWG1(t), "assumption-3 (process noise on estimated block)", t,
                     "Gamma1*W*Gamma1'", rep);
  }

  for (int t = 0; t <= d.T; ++t) {
    detail::check_psd(model.Q_t(Player::P, t), "assumption-4 (cost)", t, "QP", rep);
    detail::check_psd(model.Q_t(Player::E, t), "assumption-4 (cost)", t, "QE", rep);
  }
  for (int t = 0; t < d.T; ++t) {
    detail::check_pd(model.R_t(Player::P, t), "assumption-4 (cost)", t, "RP", rep);
    detail::check_pd(model.R_t(Player::E, t), "assumption-4 (cost)", t, "RE", rep);
  }

  detail::check_pd(prior.W0P, "prior covariance", -1, "W0P", rep);
  detail::check_pd(prior.W0E, "prior covariance", -1, "W0E", rep);
  return rep;
}

/// Per-step cost of one player: x'Q_t x + u'R_t u for t < T, and the
/// terminal term x'Q_T x alone at t = T.
inline double stage_cost(const GameModel& model, int t, const Vector& x, const Vector& uP,
                         const Vector& uE, Player player) {
  if (t < 0 || t > model.dims.T) throw RangeError("stage_cost: t out of range");
  const double state_term = x.dot(model.Q_t(player, t) * x);
  if (t == model.dims.T) return state_term;
  const Vector& u = player == Player::P ? uP : uE;
  return state_term + u.dot(model.R_t(player, t) * u);
}

}  // namespace lqgame
