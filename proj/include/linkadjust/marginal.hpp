#pragma once

#include <algorithm>
#include <map>
#include <memory>

#include "model.hpp"

namespace linkadjust {

//! Estimate of the marginal density f(y), evaluated in log space at the
//! observed responses (the EM only ever needs those points) plus a generic
//! pointwise evaluator for external use.
struct MarginalDensity {
    MarginalMode mode = MarginalMode::KDE;
    std::function<double(double)> eval;  // y -> density
    std::optional<double> bandwidth;
    Vector log_at_obs;  // log f(y_i) cached at the observed responses
};

namespace detail {

//! Type-7 quantile (linear interpolation of order statistics) of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double prob) {
    const double pos = prob * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return s[lo] * (1.0 - frac) + s[hi] * frac;
}

} // namespace detail

//! Silverman's rule: 0.9 * min(sd, IQR/1.34) * n^(-1/5), falling back to sd
//! when the IQR is degenerate.
inline double silverman_bandwidth(const Vector& y) {
    const Index n = y.size();
    if (n < 2) throw invalid_input("silverman_bandwidth: need n >= 2");
    const double mean = y.mean();
    const double sd = std::sqrt((y.array() - mean).square().sum() / double(n - 1));
    std::vector<double> s(y.data(), y.data() + n);
    std::sort(s.begin(), s.end());
    const double iqr = detail::quantile_sorted(s, 0.75) - detail::quantile_sorted(s, 0.25);
    const double a = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    if (!(a > 0.0)) throw degenerate_data("silverman_bandwidth: zero-variance responses");
    return 0.9 * a * std::pow(static_cast<double>(n), -0.2);
}

namespace detail {

inline Vector kde_log_density(const Vector& sample, const Vector& pts, double bw) {
    const Index n = sample.size();
    const double log_norm = std::log(static_cast<double>(n) * bw) + 0.5 * kLog2Pi;
    Vector out(pts.size());
    Eigen::ArrayXd d(n);
    for (Index i = 0; i < pts.size(); ++i) {
        d = (sample.array() - pts[i]) / bw;
        d = -0.5 * d.square();
        const double m = d.maxCoeff();
        out[i] = m + std::log((d - m).exp().sum()) - log_norm;
    }
    return out;
}

} // namespace detail

//! Build a MarginalDensity for the plug-in modes. Integrated mode needs the
//! current theta and the covariate rows it averages over.
inline MarginalDensity estimate_marginal(const Vector& y, MarginalMode mode,
                                         const std::optional<OutcomeParams>& theta = {},
                                         const Matrix* X = nullptr,
                                         std::function<double(double)> user = {}) {
    MarginalDensity out;
    out.mode = mode;
    const Index n = y.size();
    switch (mode) {
        case MarginalMode::KDE: {
            if (n < 2) throw invalid_input("estimate_marginal: KDE needs n >= 2");
            const double bw = silverman_bandwidth(y);
            out.bandwidth = bw;
            out.log_at_obs = detail::kde_log_density(y, y, bw);
            auto sample = std::make_shared<Vector>(y);
            out.eval = [sample, bw](double v) {
                Vector pt(1);
                pt[0] = v;
                return std::exp(detail::kde_log_density(*sample, pt, bw)[0]);
            };
            break;
        }
        case MarginalMode::EmpiricalPMF: {
            auto counts = std::make_shared<std::map<double, double>>();
            for (Index i = 0; i < n; ++i) (*counts)[y[i]] += 1.0 / static_cast<double>(n);
            out.log_at_obs.resize(n);
            for (Index i = 0; i < n; ++i) out.log_at_obs[i] = std::log(counts->at(y[i]));
            out.eval = [counts](double v) {
                auto it = counts->find(v);
                return it == counts->end() ? 0.0 : it->second;
            };
            break;
        }
        case MarginalMode::Integrated: {
            if (!theta) throw invalid_input("estimate_marginal: Integrated mode needs theta");
            if (!X) throw invalid_input("estimate_marginal: Integrated mode needs covariates");
            theta->validate();
            auto th = std::make_shared<OutcomeParams>(*theta);
            auto mu = std::make_shared<Vector>(*X * theta->beta);
            const double logn = std::log(static_cast<double>(mu->size()));
            auto log_avg = [th, mu, logn](double v) {
                Eigen::ArrayXd t = (v - mu->array()) / th->sigma;
                t = -0.5 * t.square();
                const double m = t.maxCoeff();
                return m + std::log((t - m).exp().sum()) - logn - std::log(th->sigma) -
                       0.5 * kLog2Pi;
            };
            out.log_at_obs.resize(n);
            for (Index i = 0; i < n; ++i) out.log_at_obs[i] = log_avg(y[i]);
            out.eval = [log_avg](double v) { return std::exp(log_avg(v)); };
            break;
        }
        case MarginalMode::UserSupplied: {
            if (!user) throw invalid_input("estimate_marginal: no user density supplied");
            out.log_at_obs.resize(n);
            for (Index i = 0; i < n; ++i) {
                const double f = user(y[i]);
                if (!(f > 0.0) || !std::isfinite(f))
                    throw degenerate_density(
                        "estimate_marginal: supplied density not strictly positive", i);
                out.log_at_obs[i] = std::log(f);
            }
            out.eval = std::move(user);
            break;
        }
    }
    return out;
}

} // namespace linkadjust
