#pragma once

#include "logistic_fit.hpp"
#include "optim.hpp"

namespace linkadjust::detail {

inline double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

//! Log pairwise mixture weights in factored form: off the diagonal
//! log w_ij = a_i + b_j, on it w_ii = h_i + exp(a_i + b_i). Covers both the
//! informative-linkage rule (b_j = log(1-h_j), normalized by the total
//! mismatch mass S) and the exchangeable rule with a uniform 1/n donor.
struct PairRule {
    Vector a, b, log_h, log_1mh, log_diag;
    double log_S = 0.0;
    bool informative = false;
};

inline PairRule make_pair_rule(const Vector& eta, bool informative) {
    const Index n = eta.size();
    PairRule rule;
    rule.informative = informative;
    rule.log_h.resize(n);
    rule.log_1mh.resize(n);
    for (Index i = 0; i < n; ++i) {
        rule.log_h[i] = log_sigmoid(eta[i]);
        rule.log_1mh[i] = log_sigmoid(-eta[i]);
    }
    if (informative) {
        rule.log_S = log_sum_exp(rule.log_1mh.transpose());
        if (!std::isfinite(rule.log_S))
            throw degenerate_data("pairwise EM: total mismatch mass underflowed to zero");
        rule.a = rule.log_1mh.array() - rule.log_S;
        rule.b = rule.log_1mh;
    } else {
        rule.a = rule.log_1mh.array() - std::log(static_cast<double>(n));
        rule.b = Vector::Zero(n);
    }
    rule.log_diag.resize(n);
    for (Index i = 0; i < n; ++i)
        rule.log_diag[i] = log_add_exp(rule.log_h[i], rule.a[i] + rule.b[i]);
    return rule;
}

//! One E-step over all n^2 pairs, streamed row by row so nothing quadratic
//! is ever materialized. col_mass/col_ymass are the sufficient statistics
//! for the outcome M-step; match_share is P(link i is correct | y_i).
struct PairStats {
    double loglik = 0.0;
    Vector col_mass, col_ymass, diag, match_share;
};

inline PairStats pair_estep(const Vector& y, const Matrix& X, const PairRule& rule,
                            const OutcomeParams& theta) {
    const Index n = y.size();
    const Vector mu = X * theta.beta;
    const double c0 = -std::log(theta.sigma) - 0.5 * kLog2Pi;
    const double inv2s2 = 0.5 / (theta.sigma * theta.sigma);
    PairStats st;
    st.col_mass = Vector::Zero(n);
    st.col_ymass = Vector::Zero(n);
    st.diag.resize(n);
    st.match_share.resize(n);
    Vector rowlog(n);
    for (Index i = 0; i < n; ++i) {
        rowlog.array() = rule.b.array() + rule.a[i] +
                         (c0 - inv2s2 * (y[i] - mu.array()).square());
        const double dy = y[i] - mu[i];
        const double logf_ii = c0 - inv2s2 * dy * dy;
        rowlog[i] = rule.log_diag[i] + logf_ii;
        const double mx = rowlog.maxCoeff();
        const double logden = mx + std::log((rowlog.array() - mx).exp().sum());
        if (!std::isfinite(logden))
            throw degenerate_density("all mixture components vanish at observation", i);
        st.loglik += logden;
        rowlog.array() = (rowlog.array() - logden).exp();
        st.col_mass += rowlog;
        st.col_ymass += y[i] * rowlog;
        st.diag[i] = rowlog[i];
        st.match_share[i] = std::exp(rule.log_h[i] + logf_ii - logden);
    }
    return st;
}

//! Row log-likelihoods log sum_j w_ij f(y_i | x_j) without responsibility
//! accumulation; the per-observation contributions the sandwich needs.
inline Vector pair_row_logliks(const Vector& y, const Matrix& X, const PairRule& rule,
                               const OutcomeParams& theta) {
    const Index n = y.size();
    const Vector mu = X * theta.beta;
    const double c0 = -std::log(theta.sigma) - 0.5 * kLog2Pi;
    const double inv2s2 = 0.5 / (theta.sigma * theta.sigma);
    Vector out(n), rowlog(n);
    for (Index i = 0; i < n; ++i) {
        rowlog.array() = rule.b.array() + rule.a[i] +
                         (c0 - inv2s2 * (y[i] - mu.array()).square());
        const double dy = y[i] - mu[i];
        rowlog[i] = rule.log_diag[i] + (c0 - inv2s2 * dy * dy);
        const double mx = rowlog.maxCoeff();
        out[i] = mx + std::log((rowlog.array() - mx).exp().sum());
        if (!std::isfinite(out[i]))
            throw degenerate_density("all mixture components vanish at observation", i);
    }
    return out;
}

inline OutcomeParams pair_mstep_theta(const Vector& y, const Matrix& X, const PairStats& st,
                                      double sigma_floor) {
    const Matrix A = X.transpose() *
                     (X.array().colwise() * st.col_mass.array()).matrix();
    const Vector rhs = X.transpose() * st.col_ymass;
    OutcomeParams theta;
    theta.beta = A.ldlt().solve(rhs);
    if (!theta.beta.allFinite())
        throw singular_design("pairwise EM: weighted normal equations are singular");
    const Vector mu = X * theta.beta;
    const double ss = y.squaredNorm() - 2.0 * st.col_ymass.dot(mu) +
                      (st.col_mass.array() * mu.array().square()).sum();
    const double s2 = ss / static_cast<double>(y.size());
    theta.sigma = std::sqrt(std::max(s2, sigma_floor * sigma_floor));
    return theta;
}

//! Expected complete-data terms in gamma for the informative rule, reduced
//! to O(n): sum_i d_i log w_ii + sum_i (r_i + c_i) log(1-h_i) - T log S,
//! with d the diagonal responsibilities and r/c off-diagonal row/col masses.
class ReducedGammaObjective {
public:
    ReducedGammaObjective(const Matrix& Z, const PairStats& st,
                          const MismatchRateConstraint* constraint, double barrier_mu)
        : Z_(Z), d_(st.diag), constraint_(constraint), mu_(barrier_mu) {
        rc_ = (Vector::Ones(st.diag.size()) - st.diag) + (st.col_mass - st.diag);
        T_ = (Vector::Ones(st.diag.size()) - st.diag).sum();
        zbar_ = Z.colwise().mean();
    }

    double operator()(const Vector& gamma) const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        if (constraint_) {
            const double slack = constraint_->b + zbar_.dot(gamma);
            if (slack <= 0.0) return inf;
        }
        const Vector eta = Z_ * gamma;
        const Index n = eta.size();
        Vector l1h(n);
        for (Index i = 0; i < n; ++i) l1h[i] = log_sigmoid(-eta[i]);
        const double logS = log_sum_exp(l1h.transpose());
        if (!std::isfinite(logS)) return inf;
        double Q = -T_ * logS;
        for (Index i = 0; i < n; ++i) {
            const double log_wii = log_add_exp(log_sigmoid(eta[i]), 2.0 * l1h[i] - logS);
            Q += d_[i] * log_wii + rc_[i] * l1h[i];
        }
        if (constraint_ && mu_ > 0.0)
            Q += mu_ * std::log(constraint_->b + zbar_.dot(gamma));
        return -Q;
    }

private:
    const Matrix& Z_;
    Vector d_, rc_, zbar_;
    double T_ = 0.0;
    const MismatchRateConstraint* constraint_;
    double mu_ = 0.0;
};

inline LogisticFit informative_gamma_step(const Matrix& Z, const PairStats& st, Vector gamma,
                                          const MismatchRateConstraint* constraint) {
    LogisticFit out;
    const Vector zbar = Z.colwise().mean();
    if (constraint) {
        const double slack = constraint->b + zbar.dot(gamma);
        if (slack <= 1e-8) gamma[0] += 0.5 - slack;
    }
    const Vector incumbent = gamma;
    if (constraint) {
        double mu = 1.0;
        for (int round = 0; round < 5; ++round) {
            gamma = minimize(ReducedGammaObjective(Z, st, constraint, mu), gamma);
            mu *= 0.2;
        }
    } else {
        gamma = minimize(ReducedGammaObjective(Z, st, nullptr, 0.0), gamma);
    }
    if ((gamma.array().abs() > kGammaClip).any()) {
        out.separation_warning = true;
        gamma = gamma.cwiseMax(-kGammaClip).cwiseMin(kGammaClip);
        if (constraint) {
            const double s = constraint->b + zbar.dot(gamma);
            if (s < 0.0) gamma[0] += 1e-6 - s;
        }
    }
    // Projecting onto the clip box can spoil the ascent; the EM monotonicity
    // invariant requires never returning a point worse than the start.
    const ReducedGammaObjective raw(Z, st, constraint, 0.0);
    if (raw(gamma) > raw(incumbent)) gamma = incumbent;
    if (constraint) out.constraint_active = constraint->b + zbar.dot(gamma) < 0.05;
    out.gamma = std::move(gamma);
    return out;
}

struct PairEmResult {
    OutcomeParams theta;
    Vector gamma;
    Vector posterior_correct;
    std::vector<double> trace;
    int iterations = 0;
    bool converged = false;
    bool separation_warning = false;
    bool constraint_active = false;
};

//! Shared EM driver over the n^2 pairwise mixture. The informative rule is
//! the mismatch-aware donor weighting; the exchangeable rule recovers the
//! two-component fit whose mismatch marginal is refreshed from theta itself.
inline PairEmResult pairwise_em(const Vector& y, const Matrix& X, const Matrix& Z,
                                OutcomeParams theta, Vector gamma, bool informative,
                                int max_iter, double tol,
                                const MismatchRateConstraint* constraint) {
    const double sigma_floor =
        1e-6 * std::sqrt((y.array() - y.mean()).square().sum() /
                         static_cast<double>(std::max<Index>(y.size() - 1, 1)));
    if (constraint) {
        const Vector zbar = Z.colwise().mean();
        const double slack = constraint->b + zbar.dot(gamma);
        if (slack <= 1e-8) gamma[0] += 0.5 - slack;
    }
    PairEmResult res;
    res.trace.reserve(static_cast<std::size_t>(max_iter) + 1);
    bool stats_current = false;
    for (int it = 0; it < max_iter; ++it) {
        const PairRule rule = make_pair_rule(Z * gamma, informative);
        const PairStats st = pair_estep(y, X, rule, theta);
        res.trace.push_back(st.loglik);
        res.posterior_correct = st.match_share;
        stats_current = true;
        const std::size_t t = res.trace.size();
        if (t >= 2 && std::abs(res.trace[t - 1] - res.trace[t - 2]) <
                          tol * (1.0 + std::abs(res.trace[t - 2]))) {
            res.converged = true;
            break;
        }
        theta = pair_mstep_theta(y, X, st, sigma_floor);
        LogisticFit gs = informative
                             ? informative_gamma_step(Z, st, gamma, constraint)
                             : weighted_bernoulli_fit(Z, st.match_share, gamma, constraint);
        gamma = std::move(gs.gamma);
        res.separation_warning = res.separation_warning || gs.separation_warning;
        res.constraint_active = gs.constraint_active;
        res.iterations = it + 1;
        stats_current = false;
    }
    if (!stats_current) {
        const PairRule rule = make_pair_rule(Z * gamma, informative);
        const PairStats st = pair_estep(y, X, rule, theta);
        res.trace.push_back(st.loglik);
        res.posterior_correct = st.match_share;
    }
    res.theta = std::move(theta);
    res.gamma = std::move(gamma);
    return res;
}

} // namespace linkadjust::detail
