#pragma once

#include "emcore.hpp"
#include "marginal.hpp"

namespace linkadjust {

namespace detail {

inline double sd_of(const Vector& y) {
    const Index n = y.size();
    if (n < 2) return 0.0;
    return std::sqrt((y.array() - y.mean()).square().sum() / static_cast<double>(n - 1));
}

//! Weighted least squares via QR on the sqrt-weighted design; throws on
//! rank deficiency. Returns beta and the weighted residual sum of squares.
inline std::pair<Vector, double> wls(const Vector& y, const Matrix& X, const Vector& w) {
    const Vector sw = w.array().max(0.0).sqrt();
    const Matrix Xw = X.array().colwise() * sw.array();
    Eigen::ColPivHouseholderQR<Matrix> qr(Xw);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols())
        throw singular_design("weighted design matrix is rank-deficient");
    const Vector beta = qr.solve((y.array() * sw.array()).matrix());
    const double rss = (w.array() * (y - X * beta).array().square()).sum();
    return {beta, rss};
}

inline OutcomeParams ols_fit(const Vector& y, const Matrix& X) {
    auto [beta, rss] = wls(y, X, Vector::Ones(y.size()));
    OutcomeParams theta;
    theta.beta = std::move(beta);
    const Index dof = std::max<Index>(y.size() - X.cols(), 1);
    theta.sigma = std::sqrt(std::max(rss / static_cast<double>(dof), 1e-300));
    return theta;
}

inline Vector default_gamma_init(Index q) {
    Vector g = Vector::Zero(q);
    g[0] = logit(0.95);
    return g;
}

//! Log mixture pieces of the two-component model at each observation:
//! la_i = log h_i + log f(y_i|x_i), lb_i = log(1-h_i) + log f(y_i).
struct PlainRows {
    Vector log_match, log_mismatch, loglik;  // loglik_i = logaddexp(la_i, lb_i)
};

inline PlainRows plain_rows(const LinkedDataset& data, const OutcomeParams& theta,
                            const Vector& gamma, const Vector& log_fy) {
    const Index n = data.n();
    const Vector eta = data.Z * gamma;
    const Vector mu = data.X * theta.beta;
    const double c0 = -std::log(theta.sigma) - 0.5 * kLog2Pi;
    const double inv2s2 = 0.5 / (theta.sigma * theta.sigma);
    PlainRows rows;
    rows.log_match.resize(n);
    rows.log_mismatch.resize(n);
    rows.loglik.resize(n);
    for (Index i = 0; i < n; ++i) {
        const double dy = data.y[i] - mu[i];
        rows.log_match[i] = log_sigmoid(eta[i]) + (c0 - inv2s2 * dy * dy);
        rows.log_mismatch[i] = log_sigmoid(-eta[i]) + log_fy[i];
        const double ll = log_add_exp(rows.log_match[i], rows.log_mismatch[i]);
        if (!std::isfinite(ll))
            throw degenerate_density("both mixture components vanish at observation", i);
        rows.loglik[i] = ll;
    }
    return rows;
}

} // namespace detail

//! Posterior mismatch probabilities m-hat under the two-component model.
inline Vector plain_estep(const LinkedDataset& data, const OutcomeParams& theta,
                          const MismatchParams& gamma, const MarginalDensity& f_y) {
    theta.validate();
    if (gamma.gamma.size() != data.q()) throw invalid_input("plain_estep: gamma size mismatch");
    if (f_y.log_at_obs.size() != data.n())
        throw invalid_input("plain_estep: marginal not evaluated at the observations");
    const auto rows = detail::plain_rows(data, theta, gamma.gamma, f_y.log_at_obs);
    Vector mhat(data.n());
    for (Index i = 0; i < data.n(); ++i)
        mhat[i] = std::exp(rows.log_mismatch[i] - rows.loglik[i]);
    return mhat;
}

//! Weighted Gaussian M-step with weights 1 - mhat.
inline OutcomeParams plain_mstep_theta(const LinkedDataset& data, const Vector& mhat) {
    const Vector w = (1.0 - mhat.array()).matrix();
    if (w.sum() <= static_cast<double>(data.p()))
        throw degenerate_data("plain_mstep_theta: correct-match mass does not exceed p");
    auto [beta, rss] = detail::wls(data.y, data.X, w);
    OutcomeParams theta;
    theta.beta = std::move(beta);
    const double floor = 1e-6 * detail::sd_of(data.y);
    theta.sigma = std::sqrt(std::max(rss / w.sum(), floor * floor));
    return theta;
}

//! Bernoulli M-step for the correct-match model, with optional rate bound.
inline MismatchParams plain_mstep_gamma(const LinkedDataset& data, const Vector& mhat,
                                        const std::optional<MismatchRateConstraint>& constraint = {},
                                        const Vector& gamma_init = Vector()) {
    Vector g0 = gamma_init.size() == data.q() ? gamma_init : Vector::Zero(data.q());
    const Vector targets = (1.0 - mhat.array()).matrix();
    const auto fit = weighted_bernoulli_fit(data.Z, targets, std::move(g0),
                                            constraint ? &*constraint : nullptr);
    MismatchParams out;
    out.gamma = fit.gamma;
    out.constraint = constraint;
    return out;
}

inline double composite_loglik_plain(const LinkedDataset& data, const OutcomeParams& theta,
                                     const MismatchParams& gamma, const MarginalDensity& f_y) {
    return detail::plain_rows(data, theta, gamma.gamma, f_y.log_at_obs).loglik.sum();
}

namespace detail {

//! Two-component EM with a frozen marginal; shared by the plug-in plain fit
//! and the oracle fit (which substitutes its own mismatch-component density).
inline FitResult two_component_em(const LinkedDataset& data, const EmConfig& config,
                                  const MarginalDensity& f_y) {
    const Index n = data.n();
    const Index p = data.p();
    OutcomeParams theta = config.theta_init ? *config.theta_init : ols_fit(data.y, data.X);
    Vector gamma = config.gamma_init && config.gamma_init->gamma.size() == data.q()
                       ? config.gamma_init->gamma
                       : default_gamma_init(data.q());
    const MismatchRateConstraint* c = config.constraint ? &*config.constraint : nullptr;
    if (c) {
        const Vector zbar = data.Z.colwise().mean();
        const double slack = c->b + zbar.dot(gamma);
        if (slack <= 1e-8) gamma[0] += 0.5 - slack;
    }

    FitResult res;
    res.gamma.constraint = config.constraint;
    bool frozen_reported = false, mono_reported = false;
    Vector mhat;
    bool stats_current = false;
    for (int it = 0; it < config.max_iter; ++it) {
        const auto rows = plain_rows(data, theta, gamma, f_y.log_at_obs);
        const double ll = rows.loglik.sum();
        mhat.resize(n);
        for (Index i = 0; i < n; ++i)
            mhat[i] = std::exp(rows.log_mismatch[i] - rows.loglik[i]);
        if (!res.loglik_trace.empty() && !mono_reported &&
            ll < res.loglik_trace.back() - 1e-6 * (1.0 + std::abs(res.loglik_trace.back()))) {
            res.diagnostics.push_back("internal error: composite log-likelihood decreased");
            mono_reported = true;
        }
        res.loglik_trace.push_back(ll);
        stats_current = true;
        const std::size_t t = res.loglik_trace.size();
        if (t >= 2 && std::abs(res.loglik_trace[t - 1] - res.loglik_trace[t - 2]) <
                          config.tol * (1.0 + std::abs(res.loglik_trace[t - 2]))) {
            res.converged = true;
            break;
        }
        const Vector w = (1.0 - mhat.array()).matrix();
        if (w.sum() <= static_cast<double>(p)) {
            if (!frozen_reported) {
                res.diagnostics.push_back(
                    "theta frozen: correct-match mass at or below p in an M-step");
                frozen_reported = true;
            }
        } else {
            theta = plain_mstep_theta(data, mhat);
        }
        auto gfit = weighted_bernoulli_fit(data.Z, w, gamma, c);
        gamma = std::move(gfit.gamma);
        if (gfit.separation_warning &&
            std::find(res.diagnostics.begin(), res.diagnostics.end(),
                      "gamma clipped at separation guard") == res.diagnostics.end())
            res.diagnostics.push_back("gamma clipped at separation guard");
        res.iterations = it + 1;
        stats_current = false;
    }
    if (!stats_current) {
        const auto rows = plain_rows(data, theta, gamma, f_y.log_at_obs);
        res.loglik_trace.push_back(rows.loglik.sum());
        mhat.resize(n);
        for (Index i = 0; i < n; ++i)
            mhat[i] = std::exp(rows.log_mismatch[i] - rows.loglik[i]);
    }
    res.theta = std::move(theta);
    res.gamma.gamma = std::move(gamma);
    res.posterior_correct = (1.0 - mhat.array()).matrix();
    if (!res.converged && res.iterations >= config.max_iter)
        res.diagnostics.push_back("EM reached max_iter without meeting tol");
    return res;
}

inline FitResult from_pair_em(PairEmResult&& r, const EmConfig& config) {
    FitResult res;
    res.theta = std::move(r.theta);
    res.gamma.gamma = std::move(r.gamma);
    res.gamma.constraint = config.constraint;
    res.posterior_correct = std::move(r.posterior_correct);
    res.loglik_trace = std::move(r.trace);
    res.iterations = r.iterations;
    res.converged = r.converged;
    if (r.separation_warning) res.diagnostics.push_back("gamma clipped at separation guard");
    if (r.constraint_active) res.diagnostics.push_back("mismatch-rate constraint is active");
    if (!r.converged) res.diagnostics.push_back("EM reached max_iter without meeting tol");
    return res;
}

} // namespace detail

//! EM fit of the two-component model. Plug-in marginal modes freeze f(y)
//! up front; Integrated mode refreshes it from theta by treating every
//! covariate row as an equally weighted donor, which is the exchangeable
//! special case of the pairwise mixture.
inline FitResult fit_plain(const LinkedDataset& data, const EmConfig& config = {}) {
    data.validate();
    config.validate();
    if (config.marginal == MarginalMode::Integrated) {
        if (data.n() > config.n_cap)
            throw invalid_input("fit_plain: n exceeds n_cap for the integrated marginal");
        const OutcomeParams theta0 =
            config.theta_init ? *config.theta_init : detail::ols_fit(data.y, data.X);
        Vector gamma0 = config.gamma_init && config.gamma_init->gamma.size() == data.q()
                            ? config.gamma_init->gamma
                            : detail::default_gamma_init(data.q());
        auto r = detail::pairwise_em(data.y, data.X, data.Z, theta0, std::move(gamma0),
                                     /*informative=*/false, config.max_iter, config.tol,
                                     config.constraint ? &*config.constraint : nullptr);
        return detail::from_pair_em(std::move(r), config);
    }
    const MarginalDensity f_y =
        estimate_marginal(data.y, config.marginal, config.theta_init, &data.X,
                          config.user_marginal);
    return detail::two_component_em(data, config, f_y);
}

} // namespace linkadjust
