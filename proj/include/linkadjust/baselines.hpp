#pragma once

#include "inference.hpp"

namespace linkadjust {

//! Supplied density of the response among mismatched links, f(y | m=1).
struct OracleSpec {
    MarginalDensity f_y_given_m1;
};

//! Ordinary least squares ignoring mismatch, with the classical covariance.
//! sigma uses the n-p denominator (the EM fits use mass-weighted ones).
inline FitResult fit_naive(const LinkedDataset& data) {
    data.validate();
    const Index n = data.n();
    const Index p = data.p();
    if (n <= p) throw invalid_input("fit_naive: need n > p");
    FitResult res;
    res.theta = detail::ols_fit(data.y, data.X);
    res.gamma.gamma = Vector();
    const Index d = p + 1;
    res.cov = Matrix::Zero(d, d);
    const Matrix xtx_inv = (data.X.transpose() * data.X).ldlt().solve(Matrix::Identity(p, p));
    res.cov.topLeftCorner(p, p) = res.theta.sigma * res.theta.sigma * xtx_inv;
    res.cov(p, p) = 0.5 / static_cast<double>(n - p);  // asymptotic var of log sigma-hat
    res.se = res.cov.diagonal().cwiseSqrt();
    res.posterior_correct = Vector::Ones(n);
    const Vector resid = data.y - data.X * res.theta.beta;
    double ll = 0.0;
    for (Index i = 0; i < n; ++i) ll += gaussian_loglik_resid(resid[i], res.theta.sigma);
    res.loglik_trace.push_back(ll);
    res.converged = true;
    res.iterations = 0;
    return res;
}

//! The two-component fit with the mismatch-component density supplied
//! externally instead of estimated from the responses. Shares the plug-in
//! EM code path exactly, so supplying the plug-in marginal itself
//! reproduces fit_plain bit for bit.
inline FitResult fit_oracle(const LinkedDataset& data, const OracleSpec& spec,
                            const EmConfig& config = {}) {
    data.validate();
    config.validate();
    MarginalDensity f = spec.f_y_given_m1;
    const Index n = data.n();
    if (f.log_at_obs.size() != n) {
        if (!f.eval) throw invalid_input("fit_oracle: density has no evaluator");
        f.log_at_obs.resize(n);
        for (Index i = 0; i < n; ++i) {
            const double v = f.eval(data.y[i]);
            if (!(v > 0.0) || !std::isfinite(v))
                throw degenerate_density("fit_oracle: supplied density not strictly positive", i);
            f.log_at_obs[i] = std::log(v);
        }
    }
    return detail::two_component_em(data, config, f);
}

} // namespace linkadjust
