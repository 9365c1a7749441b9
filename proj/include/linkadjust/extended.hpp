#pragma once

#include "plain.hpp"

namespace linkadjust {

//! Donor weights for the mismatch component: omega_j = (1-h_j) / sum_k (1-h_k).
inline Vector donor_weights(const Matrix& Z, const Vector& gamma) {
    if (gamma.size() != Z.cols()) throw invalid_input("donor_weights: gamma size mismatch");
    const Vector eta = Z * gamma;
    Vector w(eta.size());
    for (Index i = 0; i < eta.size(); ++i) w[i] = sigmoid(-eta[i]);
    const double S = w.sum();
    if (!(S > 1e-12))
        throw no_mismatch_mass(
            "all links are certain-correct; the mismatch component is unidentified");
    return w / S;
}

//! Pairwise mixture weights: omega_ii on the diagonal, with the off-diagonal
//! rule omega_ij = (1-h_i)(1-h_j)/S held implicitly. Each row sums to one.
struct PairwiseWeights {
    Vector h;
    double S = 0.0;
    Vector omega_diag;

    double off_diagonal(Index i, Index j) const {
        return i == j ? 0.0 : (1.0 - h[i]) * (1.0 - h[j]) / S;
    }
};

inline PairwiseWeights pairwise_weights(const Matrix& Z, const Vector& gamma) {
    if (gamma.size() != Z.cols()) throw invalid_input("pairwise_weights: gamma size mismatch");
    const Vector eta = Z * gamma;
    PairwiseWeights pw;
    pw.h.resize(eta.size());
    for (Index i = 0; i < eta.size(); ++i) pw.h[i] = sigmoid(eta[i]);
    pw.S = (1.0 - pw.h.array()).sum();
    if (!(pw.S > 1e-12))
        throw no_mismatch_mass(
            "all links are certain-correct; the mismatch component is unidentified");
    pw.omega_diag =
        (pw.h.array() + (1.0 - pw.h.array()).square() / pw.S).matrix();
    return pw;
}

//! Dense posterior component memberships; row i gives P(response i was
//! generated by covariate row j). Row-major so a row is contiguous.
struct Responsibilities {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> L;
};

inline Responsibilities extended_responsibilities(const LinkedDataset& data,
                                                  const OutcomeParams& theta,
                                                  const MismatchParams& gamma) {
    data.validate();
    theta.validate();
    const Index n = data.n();
    const auto rule = detail::make_pair_rule(data.Z * gamma.gamma, /*informative=*/true);
    const Vector mu = data.X * theta.beta;
    const double c0 = -std::log(theta.sigma) - 0.5 * kLog2Pi;
    const double inv2s2 = 0.5 / (theta.sigma * theta.sigma);
    Responsibilities out;
    out.L.resize(n, n);
    Vector rowlog(n);
    for (Index i = 0; i < n; ++i) {
        rowlog.array() = rule.b.array() + rule.a[i] +
                         (c0 - inv2s2 * (data.y[i] - mu.array()).square());
        const double dy = data.y[i] - mu[i];
        rowlog[i] = rule.log_diag[i] + (c0 - inv2s2 * dy * dy);
        const double mx = rowlog.maxCoeff();
        const double logden = mx + std::log((rowlog.array() - mx).exp().sum());
        if (!std::isfinite(logden))
            throw degenerate_density("all mixture components vanish at observation", i);
        out.L.row(i) = (rowlog.array() - logden).exp();
    }
    return out;
}

inline OutcomeParams extended_mstep_theta(const LinkedDataset& data,
                                          const Responsibilities& resp) {
    const Index n = data.n();
    if (resp.L.rows() != n || resp.L.cols() != n)
        throw invalid_input("extended_mstep_theta: responsibility matrix must be n x n");
    detail::PairStats st;
    st.col_mass = resp.L.colwise().sum();
    st.col_ymass = resp.L.transpose() * data.y;
    return detail::pair_mstep_theta(data.y, data.X, st, 1e-6 * detail::sd_of(data.y));
}

inline MismatchParams extended_mstep_gamma(const LinkedDataset& data,
                                           const Responsibilities& resp,
                                           const Vector& gamma_init,
                                           const std::optional<MismatchRateConstraint>& constraint = {}) {
    if (gamma_init.size() != data.q())
        throw invalid_input("extended_mstep_gamma: gamma_init size mismatch");
    detail::PairStats st;
    st.col_mass = resp.L.colwise().sum();
    st.diag = resp.L.diagonal();
    const auto fit = detail::informative_gamma_step(data.Z, st, gamma_init,
                                                    constraint ? &*constraint : nullptr);
    MismatchParams out;
    out.gamma = fit.gamma;
    out.constraint = constraint;
    return out;
}

inline double composite_loglik_extended(const LinkedDataset& data, const OutcomeParams& theta,
                                        const MismatchParams& gamma) {
    theta.validate();
    const auto rule = detail::make_pair_rule(data.Z * gamma.gamma, /*informative=*/true);
    return detail::pair_row_logliks(data.y, data.X, rule, theta).sum();
}

//! EM fit of the pairwise mixture. Warm-started from a short plug-in fit
//! unless both initial parameter sets are supplied explicitly.
inline FitResult fit_extended(const LinkedDataset& data, const EmConfig& config = {}) {
    data.validate();
    config.validate();
    if (data.n() > config.n_cap)
        throw invalid_input("fit_extended: n exceeds n_cap for the pairwise E-step");
    OutcomeParams theta0;
    Vector gamma0;
    if (config.theta_init && config.gamma_init &&
        config.gamma_init->gamma.size() == data.q()) {
        theta0 = *config.theta_init;
        gamma0 = config.gamma_init->gamma;
    } else {
        EmConfig warm = config;
        warm.marginal = MarginalMode::KDE;
        warm.user_marginal = nullptr;
        warm.max_iter = 10;
        const FitResult head = fit_plain(data, warm);
        theta0 = config.theta_init ? *config.theta_init : head.theta;
        gamma0 = config.gamma_init && config.gamma_init->gamma.size() == data.q()
                     ? config.gamma_init->gamma
                     : head.gamma.gamma;
    }
    auto r = detail::pairwise_em(data.y, data.X, data.Z, std::move(theta0), std::move(gamma0),
                                 /*informative=*/true, config.max_iter, config.tol,
                                 config.constraint ? &*config.constraint : nullptr);
    return detail::from_pair_em(std::move(r), config);
}

} // namespace linkadjust
