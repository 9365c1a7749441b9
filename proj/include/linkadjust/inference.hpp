#pragma once

#include "extended.hpp"

namespace linkadjust {

//! Which composite log-likelihood the derivatives are taken through: the
//! two-component model with a frozen marginal, its integrated-marginal
//! variant (exchangeable pairwise mixture), or the informative pairwise fit.
enum class LoglikKind { Plain, IntegratedPlain, Extended };

struct InferenceResult {
    Matrix cov;
    Vector se;
    Vector ci_lower, ci_upper;
    double level = 0.95;
    double hessian_condition = 0.0;
    std::vector<std::string> diagnostics;
};

namespace detail {

inline OutcomeParams unpack_theta(const Vector& u, Index p) {
    OutcomeParams theta;
    theta.beta = u.head(p);
    theta.sigma = std::exp(u[p]);
    return theta;
}

//! Per-observation log-likelihood rows as a function of the packed vector
//! (beta, log sigma, gamma). Plain kind keeps the marginal frozen.
class RowLoglik {
public:
    RowLoglik(const LinkedDataset& data, LoglikKind kind, Vector log_fy, Vector gamma_fixed)
        : data_(data), kind_(kind), log_fy_(std::move(log_fy)),
          gamma_fixed_(std::move(gamma_fixed)) {
        if (kind_ == LoglikKind::Plain && log_fy_.size() != data_.n())
            throw invalid_input("inference: plain kind needs the fitted marginal at the observations");
    }

    Index dim(bool include_gamma) const {
        return data_.p() + 1 + (include_gamma ? data_.q() : 0);
    }

    //! u may omit the gamma block, in which case the stored values are used.
    Vector rows(const Vector& u) const {
        const Index p = data_.p();
        const OutcomeParams theta = unpack_theta(u, p);
        const Vector gamma = u.size() > p + 1 ? Vector(u.tail(data_.q())) : gamma_fixed_;
        if (kind_ == LoglikKind::Plain)
            return plain_rows(data_, theta, gamma, log_fy_).loglik;
        const auto rule = make_pair_rule(data_.Z * gamma,
                                         kind_ == LoglikKind::Extended);
        return pair_row_logliks(data_.y, data_.X, rule, theta);
    }

    double row(const Vector& u, Index i) const {
        const Index p = data_.p();
        const OutcomeParams theta = unpack_theta(u, p);
        const Vector gamma = u.size() > p + 1 ? Vector(u.tail(data_.q())) : gamma_fixed_;
        const double mu_i = data_.X.row(i).dot(theta.beta);
        const double eta_i = data_.Z.row(i).dot(gamma);
        const double logf_ii = gaussian_loglik_resid(data_.y[i] - mu_i, theta.sigma);
        if (kind_ == LoglikKind::Plain)
            return log_add_exp(log_sigmoid(eta_i) + logf_ii,
                               log_sigmoid(-eta_i) + log_fy_[i]);
        const auto rule = make_pair_rule(data_.Z * gamma,
                                         kind_ == LoglikKind::Extended);
        const Vector mu = data_.X * theta.beta;
        const double c0 = -std::log(theta.sigma) - 0.5 * kLog2Pi;
        const double inv2s2 = 0.5 / (theta.sigma * theta.sigma);
        Vector rowlog(data_.n());
        rowlog.array() = rule.b.array() + rule.a[i] +
                         (c0 - inv2s2 * (data_.y[i] - mu.array()).square());
        rowlog[i] = rule.log_diag[i] + logf_ii;
        const double mx = rowlog.maxCoeff();
        return mx + std::log((rowlog.array() - mx).exp().sum());
    }

private:
    const LinkedDataset& data_;
    LoglikKind kind_;
    Vector log_fy_;
    Vector gamma_fixed_;
};

inline Vector pack_params(const OutcomeParams& theta, const Vector& gamma, bool include_gamma) {
    Vector u(theta.beta.size() + 1 + (include_gamma ? gamma.size() : 0));
    u.head(theta.beta.size()) = theta.beta;
    u[theta.beta.size()] = std::log(theta.sigma);
    if (include_gamma) u.tail(gamma.size()) = gamma;
    return u;
}

} // namespace detail

//! Central finite-difference score of the i-th negative log-likelihood
//! contribution, step-halving up to 5 times on non-finite evaluations.
inline Vector per_observation_score(const LinkedDataset& data, const OutcomeParams& theta,
                                    const MismatchParams& gamma, Index i, LoglikKind kind,
                                    const MarginalDensity* f_y = nullptr,
                                    bool include_gamma = true) {
    theta.validate();
    if (i < 0 || i >= data.n()) throw invalid_input("per_observation_score: bad index");
    const detail::RowLoglik rows(data, kind, f_y ? f_y->log_at_obs : Vector(), gamma.gamma);
    const Vector u0 = detail::pack_params(theta, gamma.gamma, include_gamma);
    const double base = std::cbrt(std::numeric_limits<double>::epsilon());
    Vector score(u0.size());
    Vector up = u0;
    for (Index k = 0; k < u0.size(); ++k) {
        double h = base * std::max(1.0, std::abs(u0[k]));
        bool ok = false;
        for (int attempt = 0; attempt < 5 && !ok; ++attempt, h *= 0.5) {
            up[k] = u0[k] + h;
            const double fp = rows.row(up, i);
            up[k] = u0[k] - h;
            const double fm = rows.row(up, i);
            up[k] = u0[k];
            if (std::isfinite(fp) && std::isfinite(fm)) {
                score[k] = -(fp - fm) / (2.0 * h);
                ok = true;
            }
        }
        if (!ok)
            throw degenerate_data("per_observation_score: objective non-finite near the estimate");
    }
    return score;
}

//! Wald intervals around the packed estimates; the sigma coordinate is
//! treated on the log scale and the interval exponentiated back.
inline void wald_intervals(const Vector& packed, Index sigma_index, double level,
                           InferenceResult& res) {
    if (!(level > 0.0 && level < 1.0)) throw invalid_input("confidence level must be in (0,1)");
    const double z = detail::normal_quantile(0.5 + level / 2.0);
    const Index d = packed.size();
    if (res.se.size() != d) throw invalid_input("wald_intervals: se/estimate size mismatch");
    res.level = level;
    res.ci_lower.resize(d);
    res.ci_upper.resize(d);
    for (Index k = 0; k < d; ++k) {
        const double lo = packed[k] - z * res.se[k];
        const double hi = packed[k] + z * res.se[k];
        if (k == sigma_index) {
            res.ci_lower[k] = std::exp(lo);
            res.ci_upper[k] = std::exp(hi);
        } else {
            res.ci_lower[k] = lo;
            res.ci_upper[k] = hi;
        }
        if (res.se[k] == 0.0) {
            res.diagnostics.push_back("zero-width interval at coordinate " + std::to_string(k));
        }
    }
}

//! Robust covariance H^{-1} J H^{-1} / n with H the finite-difference
//! Hessian of the mean negative log-likelihood and J the mean score
//! outer-product; symmetrized and PSD-repaired by eigenvalue clipping.
inline InferenceResult sandwich_covariance(const LinkedDataset& data, const OutcomeParams& theta,
                                           const MismatchParams& gamma, LoglikKind kind,
                                           const MarginalDensity* f_y = nullptr,
                                           double level = 0.95, bool include_gamma = true) {
    data.validate();
    theta.validate();
    if (!(level > 0.0 && level < 1.0)) throw invalid_input("confidence level must be in (0,1)");
    // A rank-deficient design leaves the likelihood exactly flat along a
    // coefficient direction; the information matrix is singular no matter how
    // the finite-difference estimate of it rounds.
    {
        Eigen::ColPivHouseholderQR<Matrix> qx(data.X);
        qx.setThreshold(1e-10);
        bool deficient = qx.rank() < data.X.cols();
        if (!deficient && include_gamma) {
            Eigen::ColPivHouseholderQR<Matrix> qz(data.Z);
            qz.setThreshold(1e-10);
            deficient = qz.rank() < data.Z.cols();
        }
        if (deficient)
            throw singular_information("sandwich_covariance: rank-deficient design",
                                       std::numeric_limits<double>::infinity());
    }
    const Index n = data.n();
    const detail::RowLoglik rows(data, kind, f_y ? f_y->log_at_obs : Vector(), gamma.gamma);
    const Vector u0 = detail::pack_params(theta, gamma.gamma, include_gamma);
    const Index d = u0.size();
    const double dn = static_cast<double>(n);

    auto mean_nll = [&](const Vector& u) { return -rows.rows(u).sum() / dn; };

    // Scores of the per-observation negative log-likelihoods (n x d).
    const double score_step = std::cbrt(std::numeric_limits<double>::epsilon());
    Matrix S(n, d);
    {
        Vector up = u0;
        for (Index k = 0; k < d; ++k) {
            double h = score_step * std::max(1.0, std::abs(u0[k]));
            bool ok = false;
            for (int attempt = 0; attempt < 5 && !ok; ++attempt, h *= 0.5) {
                up[k] = u0[k] + h;
                const Vector fp = rows.rows(up);
                up[k] = u0[k] - h;
                const Vector fm = rows.rows(up);
                up[k] = u0[k];
                if (fp.allFinite() && fm.allFinite()) {
                    S.col(k) = -(fp - fm) / (2.0 * h);
                    ok = true;
                }
            }
            if (!ok)
                throw degenerate_data("sandwich_covariance: scores non-finite near the estimate");
        }
    }
    const Matrix J = S.transpose() * S / dn;

    // Finite-difference Hessian of the mean negative log-likelihood.
    const double hess_step = std::pow(std::numeric_limits<double>::epsilon(), 0.25);
    Vector steps(d);
    for (Index k = 0; k < d; ++k) steps[k] = hess_step * std::max(1.0, std::abs(u0[k]));
    Matrix H(d, d);
    const double f0 = mean_nll(u0);
    Vector u = u0;
    for (Index k = 0; k < d; ++k) {
        u[k] = u0[k] + steps[k];
        const double fp = mean_nll(u);
        u[k] = u0[k] - steps[k];
        const double fm = mean_nll(u);
        u[k] = u0[k];
        H(k, k) = (fp - 2.0 * f0 + fm) / (steps[k] * steps[k]);
    }
    for (Index k = 0; k < d; ++k) {
        for (Index l = k + 1; l < d; ++l) {
            u[k] = u0[k] + steps[k]; u[l] = u0[l] + steps[l];
            const double fpp = mean_nll(u);
            u[l] = u0[l] - steps[l];
            const double fpm = mean_nll(u);
            u[k] = u0[k] - steps[k]; u[l] = u0[l] + steps[l];
            const double fmp = mean_nll(u);
            u[l] = u0[l] - steps[l];
            const double fmm = mean_nll(u);
            u[k] = u0[k]; u[l] = u0[l];
            H(k, l) = H(l, k) = (fpp - fpm - fmp + fmm) / (4.0 * steps[k] * steps[l]);
        }
    }
    if (!H.allFinite())
        throw degenerate_data("sandwich_covariance: Hessian non-finite near the estimate");
    H = ((H + H.transpose()) / 2.0).eval();

    Eigen::SelfAdjointEigenSolver<Matrix> eh(H);
    const Vector lam = eh.eigenvalues();
    const double lmax = lam.cwiseAbs().maxCoeff();
    const double lmin = lam.cwiseAbs().minCoeff();
    const double cond = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
    if (!(lmin > 0.0) || cond > 1e12)
        throw singular_information("sandwich_covariance: Hessian numerically singular", cond);
    const Matrix Hinv =
        eh.eigenvectors() * lam.cwiseInverse().asDiagonal() * eh.eigenvectors().transpose();

    InferenceResult res;
    res.hessian_condition = cond;
    Matrix cov = Hinv * J * Hinv / dn;
    cov = ((cov + cov.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> ec(cov);
    const Vector cl = ec.eigenvalues();
    if (cl.minCoeff() < 0.0) {
        if (cl.minCoeff() < -1e-8)
            res.diagnostics.push_back("covariance repaired: eigenvalue clipped from " +
                                      std::to_string(cl.minCoeff()));
        const Vector clipped = cl.cwiseMax(0.0);
        cov = ec.eigenvectors() * clipped.asDiagonal() * ec.eigenvectors().transpose();
        cov = ((cov + cov.transpose()) / 2.0).eval();
    }
    res.cov = std::move(cov);
    res.se = res.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    wald_intervals(u0, data.p(), level, res);
    return res;
}

} // namespace linkadjust
