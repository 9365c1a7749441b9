#pragma once

#include "model.hpp"

namespace linkadjust {

struct LogisticFit {
    Vector gamma;
    bool separation_warning = false;
    bool constraint_active = false;
};

namespace detail {

//! Weighted Bernoulli objective sum_i [w_i log h_i + (1-w_i) log(1-h_i)],
//! optionally plus mu * log(slack) when a rate constraint is present.
inline double bernoulli_objective(const Matrix& Z, const Vector& w, const Vector& gamma) {
    const Vector eta = Z * gamma;
    double f = 0.0;
    for (Index i = 0; i < eta.size(); ++i)
        f += w[i] * log_sigmoid(eta[i]) + (1.0 - w[i]) * log_sigmoid(-eta[i]);
    return f;
}

//! Newton ascent with backtracking; when mu > 0 the log-barrier on the
//! constraint slack is folded into the objective and its derivatives.
inline Vector newton_bernoulli(const Matrix& Z, const Vector& w, Vector gamma,
                               const MismatchRateConstraint* c, double mu) {
    const Index q = Z.cols();
    const Vector zbar = Z.colwise().mean();
    auto value = [&](const Vector& g) {
        double f = bernoulli_objective(Z, w, g);
        if (c) {
            const double s = c->b + zbar.dot(g);
            if (s <= 0.0) return -std::numeric_limits<double>::infinity();
            if (mu > 0.0) f += mu * std::log(s);
        }
        return f;
    };
    double f = value(gamma);
    for (int it = 0; it < 100; ++it) {
        const Vector eta = Z * gamma;
        Vector h(eta.size());
        for (Index i = 0; i < eta.size(); ++i) h[i] = sigmoid(eta[i]);
        Vector grad = Z.transpose() * (w - h);
        Matrix H = Z.transpose() * (Z.array().colwise() *
                                    (h.array() * (1.0 - h.array()))).matrix();
        if (c && mu > 0.0) {
            const double s = c->b + zbar.dot(gamma);
            grad += (mu / s) * zbar;
            H += (mu / (s * s)) * (zbar * zbar.transpose());
        }
        H.diagonal().array() += 1e-10;
        const Vector step = H.ldlt().solve(grad);
        if (!step.allFinite()) break;
        double t = 1.0;
        Vector cand(q);
        double fc = -std::numeric_limits<double>::infinity();
        while (t > 1e-10) {
            cand = gamma + t * step;
            fc = value(cand);
            if (fc >= f - 1e-14) break;
            t *= 0.5;
        }
        if (fc < f) break;
        const bool done = std::abs(fc - f) < 1e-13 * (std::abs(f) + 1.0);
        gamma = cand;
        f = fc;
        if (done) break;
    }
    return gamma;
}

//! Clip a fitted gamma into the +-kGammaClip box, then revert to the
//! incumbent if the projection made the objective worse: callers inside an
//! EM sweep rely on this step never regressing.
inline void clip_no_worse(const Matrix& Z, const Vector& w, const MismatchRateConstraint* c,
                          const Vector& zbar, const Vector& incumbent, LogisticFit& out) {
    if ((out.gamma.array().abs() > kGammaClip).any()) {
        out.separation_warning = true;
        out.gamma = out.gamma.cwiseMax(-kGammaClip).cwiseMin(kGammaClip);
        if (c) {
            const double s = c->b + zbar.dot(out.gamma);
            if (s < 0.0) out.gamma[0] += 1e-6 - s;  // keep the clipped point feasible
        }
    }
    auto raw = [&](const Vector& g) {
        if (c && c->b + zbar.dot(g) <= 0.0) return -std::numeric_limits<double>::infinity();
        return bernoulli_objective(Z, w, g);
    };
    if (raw(out.gamma) < raw(incumbent)) out.gamma = incumbent;
}

} // namespace detail

//! Maximize the weighted Bernoulli likelihood for gamma, with w_i = P(m_i=0)
//! targets in [0,1]. An optional upper bound on the mismatch rate is enforced
//! by a log-barrier (weight shrinking x0.2 over 5 rounds); an infeasible start
//! is repaired by shifting the intercept, which moves the slack one-for-one.
inline LogisticFit weighted_bernoulli_fit(const Matrix& Z, const Vector& w, Vector gamma,
                                          const MismatchRateConstraint* c = nullptr) {
    if (Z.rows() != w.size()) throw invalid_input("weighted_bernoulli_fit: size mismatch");
    if (gamma.size() != Z.cols()) throw invalid_input("weighted_bernoulli_fit: bad gamma init");
    if (((w.array() < -1e-12) || (w.array() > 1.0 + 1e-12)).any())
        throw invalid_input("weighted_bernoulli_fit: targets outside [0,1]");
    LogisticFit out;
    const Vector zbar = Z.colwise().mean();

    if (!c) {
        const Vector incumbent = gamma;
        out.gamma = detail::newton_bernoulli(Z, w, std::move(gamma), nullptr, 0.0);
        detail::clip_no_worse(Z, w, nullptr, zbar, incumbent, out);
    } else {
        double slack = c->b + zbar.dot(gamma);
        if (slack <= 1e-8) gamma[0] += 0.5 - slack;  // feasible restart
        const Vector incumbent = gamma;
        double mu = 1.0;
        for (int round = 0; round < 5; ++round) {
            gamma = detail::newton_bernoulli(Z, w, std::move(gamma), c, mu);
            mu *= 0.2;
        }
        out.gamma = std::move(gamma);
        detail::clip_no_worse(Z, w, c, zbar, incumbent, out);
        out.constraint_active = c->b + zbar.dot(out.gamma) < 0.05;
    }
    return out;
}

} // namespace linkadjust
