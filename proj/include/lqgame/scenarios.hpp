#pragma once

#include <cmath>
#include <map>
#include <string>

#include "lqgame/model.hpp"

namespace lqgame {

/// Parameters of the bargaining family. Player P is the buyer, player E
/// the seller. The value of the good is the estimated block: a scalar
/// price (theta absent, p0) or a factor model p = <theta, xi>.
struct BargainingParams {
  double alphaB = 50.0, alphaS = 50.0;    // agreement penalties
  double betaB = 30.0, betaS = 30.0;      // target-deviation penalties
  double deltaB = -0.05, deltaS = 0.05;   // target-price offsets
  double rhoB = 15.0, rhoS = 15.0;        // concession-penalty scale
  double gammaB = 0.1, gammaS = 0.1;      // concession-penalty decay
  int T = 10;

  double p0 = 50.0;                        // n1 = 1: true initial value
  Vector theta;                            // n1 = 2: value coefficients
  Vector xi0;                              // n1 = 2: true initial factors
  double x0B = 10.0, x0S = 90.0;           // initial offers
  Vector Wbar;                             // per-factor process noise variances
  double WB_off = 1e-12, WS_off = 1e-12;   // offer-noise floors
  Matrix GB, GS;                           // observation-noise covariances
  Vector xhat0B, xhat0S;                   // prior means
  Matrix W0B, W0S;                         // prior covariances
  double agreement_threshold = 3.0;

  bool valid() const {
    return deltaB > -1.0 && deltaB < 0.0 && deltaS > 0.0 && deltaS < 1.0 && alphaB > 0 &&
           alphaS > 0 && betaB > 0 && betaS > 0 && rhoB > 0 && rhoS > 0 && T >= 1;
  }
};

namespace detail {

/// Terminal cost of one bargainer on the state (xi, xB, xS): the quadratic
/// form of alpha (xB - xS)^2 + beta (x_own - (1+delta) <theta, xi>)^2,
/// assembled from the expansion so the matrix is symmetric PSD by
/// construction.
inline Matrix bargaining_terminal_q(double alpha, double beta, double delta, const Vector& theta,
                                    bool buyer) {
  const int n1 = static_cast<int>(theta.size());
  const int n = n1 + 2;
  const int own = buyer ? n1 : n1 + 1;
  const int other = buyer ? n1 + 1 : n1;
  Matrix Q = Matrix::Zero(n, n);
  const double s = 1.0 + delta;
  Q.topLeftCorner(n1, n1) = beta * s * s * theta * theta.transpose();
  for (int i = 0; i < n1; ++i) {
    Q(i, own) = -beta * s * theta(i);
    Q(own, i) = -beta * s * theta(i);
  }
  Q(own, own) = alpha + beta;
  Q(other, other) = alpha;
  Q(own, other) = -alpha;
  Q(other, own) = -alpha;
  return Q;
}

inline std::pair<GameModel, Prior> build_bargaining(const BargainingParams& params) {
  if (!params.valid()) throw std::invalid_argument("bargaining parameters out of range");
  Vector theta = params.theta;
  if (theta.size() == 0) {
    theta = Vector::Ones(1);  // scalar value: p itself is the factor
  }
  const int n1 = static_cast<int>(theta.size());
  const int n = n1 + 2;
  const int T = params.T;

  GameModel model;
  model.dims = Dimensions{n, n1, 2, 1, 1, n1, n1, n, T};

  Matrix BB = Matrix::Zero(n, 1);
  BB(n1, 0) = 1.0;
  Matrix BS = Matrix::Zero(n, 1);
  BS(n1 + 1, 0) = 1.0;

  Vector wdiag(n);
  const Vector wbar = params.Wbar.size() > 0 ? params.Wbar : Vector::Constant(n1, 9.0);
  if (wbar.size() != n1) throw std::invalid_argument("Wbar must have one entry per factor");
  wdiag.head(n1) = wbar;
  wdiag(n1) = params.WB_off;
  wdiag(n1 + 1) = params.WS_off;

  const Matrix QT_B = bargaining_terminal_q(params.alphaB, params.betaB, params.deltaB, theta, true);
  const Matrix QT_S =
      bargaining_terminal_q(params.alphaS, params.betaS, params.deltaS, theta, false);

  for (int t = 0; t < T; ++t) {
    model.A.push_back(Matrix::Identity(n, n));
    model.BP.push_back(BB);
    model.BE.push_back(BS);
    model.Gamma.push_back(Matrix::Identity(n, n));
    model.HP.push_back(Matrix::Identity(n1, n1));
    model.HE.push_back(Matrix::Identity(n1, n1));
    model.QP.push_back(Matrix::Zero(n, n));
    model.QE.push_back(Matrix::Zero(n, n));
    model.RP.push_back(Matrix::Constant(1, 1, params.rhoB * std::exp(-params.gammaB * t)));
    model.RE.push_back(Matrix::Constant(1, 1, params.rhoS * std::exp(-params.gammaS * t)));
  }
  model.QP.push_back(QT_B);
  model.QE.push_back(QT_S);
  model.W = wdiag.asDiagonal();
  model.GP = params.GB.size() > 0 ? params.GB : Matrix::Identity(n1, n1);
  model.GE = params.GS.size() > 0 ? params.GS : Matrix::Identity(n1, n1);

  Prior prior;
  prior.xhat0P = params.xhat0B;
  prior.W0P = params.W0B;
  prior.xhat0E = params.xhat0S;
  prior.W0E = params.W0S;
  prior.x0_observed = Vector(2);
  prior.x0_observed << params.x0B, params.x0S;
  prior.x1_true0 = params.xi0.size() > 0 ? params.xi0 : Vector::Constant(1, params.p0);
  return {model, prior};
}

}  // namespace detail

/// Single-value bargaining game (n1 = 1): state (p, xB, xS) with random
/// walks, public offers, and the terminal agreement/target penalties.
inline std::pair<GameModel, Prior> build_bargaining_1d(const BargainingParams& params) {
  BargainingParams p = params;
  if (p.theta.size() > 0 && p.theta.size() != 1) {
    throw std::invalid_argument("build_bargaining_1d: scalar value only");
  }
  p.theta = Vector::Ones(1);
  if (p.xi0.size() == 0) p.xi0 = Vector::Constant(1, p.p0);
  if (p.Wbar.size() == 0) p.Wbar = Vector::Constant(1, 9.0);
  if (p.GB.size() == 0) p.GB = Matrix::Constant(1, 1, 100.0);
  if (p.GS.size() == 0) p.GS = Matrix::Constant(1, 1, 1.0);
  if (p.xhat0B.size() == 0) p.xhat0B = Vector::Constant(1, 40.0);
  if (p.xhat0S.size() == 0) p.xhat0S = Vector::Constant(1, 51.0);
  if (p.W0B.size() == 0) p.W0B = Matrix::Constant(1, 1, 100.0);
  if (p.W0S.size() == 0) p.W0S = Matrix::Constant(1, 1, 1.0);
  return detail::build_bargaining(p);
}

/// Factor bargaining game (Appendix-style, n1 = length(theta) = 2): the
/// value is p = <theta, xi> and players observe noisy factors, so they
/// cannot recover the opponent's estimate from a scalar offer change.
inline std::pair<GameModel, Prior> build_bargaining_factors(const BargainingParams& params) {
  BargainingParams p = params;
  if (p.theta.size() == 0) p.theta = Vector::Ones(2);
  if (p.theta.size() != 2) throw std::invalid_argument("build_bargaining_factors: n1 = 2 expected");
  if (p.xi0.size() == 0) {
    p.xi0 = Vector(2);
    p.xi0 << 30.0, 20.0;
  }
  if (p.Wbar.size() == 0) p.Wbar = Vector::Constant(2, 4.5);
  if (p.GB.size() == 0) p.GB = 50.0 * Matrix::Identity(2, 2);
  if (p.GS.size() == 0) p.GS = 0.5 * Matrix::Identity(2, 2);
  if (p.xhat0B.size() == 0) {
    p.xhat0B = Vector(2);
    p.xhat0B << 25.0, 15.0;
  }
  if (p.xhat0S.size() == 0) {
    p.xhat0S = Vector(2);
    p.xhat0S << 31.0, 20.0;
  }
  if (p.W0B.size() == 0) p.W0B = 50.0 * Matrix::Identity(2, 2);
  if (p.W0S.size() == 0) p.W0S = 0.5 * Matrix::Identity(2, 2);
  return detail::build_bargaining(p);
}

/// Default parameter set of the beneficial-price variant: the buyer
/// chases their target price rather than the agreement itself (lower
/// alphaB, higher betaB, calmer value process, very inaccurate buyer).
inline BargainingParams beneficial_price_defaults() {
  BargainingParams p;
  p.alphaB = 20.0;
  p.alphaS = 50.0;
  p.betaB = 40.0;
  p.betaS = 30.0;
  p.rhoB = 10.0;
  p.rhoS = 10.0;
  p.Wbar = Vector::Constant(1, 1.0);
  p.GB = Matrix::Constant(1, 1, 100.0);
  p.GS = Matrix::Constant(1, 1, 1.0);
  p.xhat0B = Vector::Constant(1, 70.0);
  p.xhat0S = Vector::Constant(1, 53.0);
  p.W0B = Matrix::Constant(1, 1, 100.0);
  p.W0S = Matrix::Constant(1, 1, 1.0);
  return p;
}

/// Same structure as the single-value game; only the defaults differ.
inline std::pair<GameModel, Prior> build_beneficial_price(
    const BargainingParams& params = beneficial_price_defaults()) {
  return build_bargaining_1d(params);
}

/// Named scenario registry exposed to the CLI. The 1d symmetric variants
/// and the 2d asymmetric one use the published parameters; the 2d
/// symmetric variants mirror the 1d construction (equal noise, priors
/// straddling the true value with matching accuracy).
inline std::pair<GameModel, Prior> scenario_by_name(const std::string& name) {
  BargainingParams p;
  if (name == "bargain1d-asym") {
    return build_bargaining_1d(p);
  }
  if (name == "bargain1d-sym-acc") {
    p.GB = Matrix::Constant(1, 1, 1.0);
    p.GS = Matrix::Constant(1, 1, 1.0);
    p.xhat0B = Vector::Constant(1, 49.0);
    p.xhat0S = Vector::Constant(1, 51.0);
    p.W0B = Matrix::Constant(1, 1, 1.0);
    p.W0S = Matrix::Constant(1, 1, 1.0);
    return build_bargaining_1d(p);
  }
  if (name == "bargain1d-sym-inacc") {
    p.GB = Matrix::Constant(1, 1, 100.0);
    p.GS = Matrix::Constant(1, 1, 100.0);
    p.xhat0B = Vector::Constant(1, 40.0);
    p.xhat0S = Vector::Constant(1, 60.0);
    p.W0B = Matrix::Constant(1, 1, 100.0);
    p.W0S = Matrix::Constant(1, 1, 100.0);
    return build_bargaining_1d(p);
  }
  if (name == "bargain1d-beneficial") {
    return build_beneficial_price(p);
  }
  if (name == "bargain2d-asym") {
    return build_bargaining_factors(p);
  }
  if (name == "bargain2d-sym-acc") {
    p.GB = 0.5 * Matrix::Identity(2, 2);
    p.GS = 0.5 * Matrix::Identity(2, 2);
    p.xhat0B = Vector(2);
    p.xhat0B << 29.0, 20.0;
    p.xhat0S = Vector(2);
    p.xhat0S << 31.0, 20.0;
    p.W0B = 0.5 * Matrix::Identity(2, 2);
    p.W0S = 0.5 * Matrix::Identity(2, 2);
    return build_bargaining_factors(p);
  }
  if (name == "bargain2d-sym-inacc") {
    p.GB = 50.0 * Matrix::Identity(2, 2);
    p.GS = 50.0 * Matrix::Identity(2, 2);
    p.xhat0B = Vector(2);
    p.xhat0B << 25.0, 15.0;
    p.xhat0S = Vector(2);
    p.xhat0S << 35.0, 25.0;
    p.W0B = 50.0 * Matrix::Identity(2, 2);
    p.W0S = 50.0 * Matrix::Identity(2, 2);
    return build_bargaining_factors(p);
  }
  throw std::invalid_argument("unknown scenario: " + name);
}

inline std::vector<std::string> scenario_names() {
  return {"bargain1d-asym",    "bargain1d-sym-acc", "bargain1d-sym-inacc", "bargain1d-beneficial",
          "bargain2d-asym",    "bargain2d-sym-acc", "bargain2d-sym-inacc"};
}

}  // namespace lqgame
