#pragma once

#include <cmath>

#include "types.hpp"

namespace linkadjust {

inline constexpr double kLog2Pi = 1.8378770664093454836;

//! log(1 + exp(x)) without overflow.
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

//! log of the logistic function; stable for |eta| up to ~700 and beyond.
inline double log_sigmoid(double eta) { return -softplus(-eta); }

inline double sigmoid(double eta) {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

//! P(m=0|z) under the logistic correct-match model.
inline double h_logistic(const Vector& z_row, const Vector& gamma) {
    if (z_row.size() != gamma.size())
        throw invalid_input("h_logistic: z and gamma dimensions differ");
    return sigmoid(z_row.dot(gamma));
}

//! log Normal(y; x'beta, sigma^2) density.
inline double gaussian_loglik(double y_val, const Vector& x_row, const OutcomeParams& theta) {
    theta.validate();
    if (!std::isfinite(y_val) || !x_row.allFinite())
        throw invalid_input("gaussian_loglik: non-finite input");
    if (x_row.size() != theta.beta.size())
        throw invalid_input("gaussian_loglik: x and beta dimensions differ");
    const double r = (y_val - x_row.dot(theta.beta)) / theta.sigma;
    return -0.5 * kLog2Pi - std::log(theta.sigma) - 0.5 * r * r;
}

inline double gaussian_loglik_resid(double resid, double sigma) {
    const double r = resid / sigma;
    return -0.5 * kLog2Pi - std::log(sigma) - 0.5 * r * r;
}

//! Slack of the mismatch-rate constraint: b - zbar'(-gamma); feasible iff >= 0.
inline double constraint_slack(const Matrix& Z, const Vector& gamma,
                               const MismatchRateConstraint& c) {
    if (Z.cols() != gamma.size())
        throw invalid_input("constraint_slack: Z and gamma dimensions differ");
    const Vector zbar = Z.colwise().mean();
    return c.b + zbar.dot(gamma);
}

namespace detail {

//! Inverse standard-normal CDF (Wichura's AS241, double precision).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw invalid_input("normal_quantile: p must be in (0,1)");
    const double q = p - 0.5;
    double r;
    if (std::abs(q) <= 0.425) {
        r = 0.180625 - q * q;
        return q *
               (((((((2509.0809287301226727 * r + 33430.575583588128105) * r +
                     67265.770927008700853) * r + 45921.953931549871457) * r +
                   13731.693765509461125) * r + 1971.5909503065514427) * r +
                 133.14166789178437745) * r + 3.387132872796366608) /
               (((((((5226.495278852545703 * r + 28729.085735721942674) * r +
                     39307.89580009271061) * r + 21213.794301586595867) * r +
                   5394.1960214247511077) * r + 687.1870074920579083) * r +
                 42.313330701600911252) * r + 1.0);
    }
    r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r +
                    0.24178072517745061177) * r + 1.27045825245236838258) * r +
                  3.64784832476320460504) * r + 5.7694972214606914055) * r +
                4.6303378461565452959) * r + 1.42343711074968357734) /
              (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r +
                    0.0151986665636164571966) * r + 0.14810397642748007459) * r +
                  0.68976733498510000455) * r + 1.6763848301838038494) * r +
                2.05319162663775882187) * r + 1.0);
    } else {
        r -= 5.0;
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    0.0012426609473880784386) * r + 0.026532189526576123093) * r +
                  0.29656057182850489123) * r + 1.7848265399172913358) * r +
                5.4637849111641143699) * r + 6.6579046435011037772) /
              (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r +
                    1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r +
                  0.0148753612908506148525) * r + 0.13692988092273580531) * r +
                0.59983220655588793769) * r + 1.0);
    }
    return q < 0.0 ? -val : val;
}

//! log(sum_j exp(v_j)) along a row, guarding empty/-inf rows.
inline double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
    const double vmax = v.maxCoeff();
    if (!std::isfinite(vmax)) return vmax;
    return vmax + std::log((v.array() - vmax).exp().sum());
}

} // namespace detail

} // namespace linkadjust
