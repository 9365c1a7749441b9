#pragma once

#include <random>

#include "model.hpp"

namespace linkadjust::detail {

using Objective = std::function<double(const Vector&)>;

//! Nelder-Mead with the standard (1, 2, 0.5, 0.5) coefficients. Minimizes.
inline Vector nelder_mead(const Objective& f, Vector x0, double xatol = 1e-6,
                          double fatol = 1e-9, int max_iter = 2000) {
    const Index n = x0.size();
    std::vector<Vector> simplex;
    simplex.reserve(n + 1);
    simplex.push_back(x0);
    for (Index j = 0; j < n; ++j) {
        Vector v = x0;
        v[j] = (v[j] != 0.0) ? v[j] * 1.05 : 0.00025;
        simplex.push_back(std::move(v));
    }
    std::vector<double> fv(n + 1);
    for (Index j = 0; j <= n; ++j) fv[j] = f(simplex[j]);

    std::vector<Index> order(n + 1);
    auto sort_simplex = [&] {
        std::iota(order.begin(), order.end(), Index{0});
        std::sort(order.begin(), order.end(), [&](Index a, Index b) { return fv[a] < fv[b]; });
        std::vector<Vector> s2(n + 1);
        std::vector<double> f2(n + 1);
        for (Index j = 0; j <= n; ++j) { s2[j] = simplex[order[j]]; f2[j] = fv[order[j]]; }
        simplex.swap(s2);
        fv.swap(f2);
    };
    sort_simplex();

    for (int it = 0; it < max_iter; ++it) {
        double xspread = 0.0, fspread = 0.0;
        for (Index j = 1; j <= n; ++j) {
            xspread = std::max(xspread, (simplex[j] - simplex[0]).cwiseAbs().maxCoeff());
            fspread = std::max(fspread, std::abs(fv[j] - fv[0]));
        }
        if (xspread <= xatol && fspread <= fatol) break;

        Vector centroid = Vector::Zero(n);
        for (Index j = 0; j < n; ++j) centroid += simplex[j];
        centroid /= static_cast<double>(n);

        const Vector xr = centroid + (centroid - simplex[n]);
        const double fr = f(xr);
        if (fr < fv[0]) {
            const Vector xe = centroid + 2.0 * (centroid - simplex[n]);
            const double fe = f(xe);
            if (fe < fr) { simplex[n] = xe; fv[n] = fe; }
            else         { simplex[n] = xr; fv[n] = fr; }
        } else if (fr < fv[n - 1]) {
            simplex[n] = xr;
            fv[n] = fr;
        } else {
            const bool outside = fr < fv[n];
            const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid))
                                      : Vector(centroid - 0.5 * (centroid - simplex[n]));
            const double fc = f(xc);
            if (fc < (outside ? fr : fv[n])) {
                simplex[n] = xc;
                fv[n] = fc;
            } else {
                for (Index j = 1; j <= n; ++j) {
                    simplex[j] = simplex[0] + 0.5 * (simplex[j] - simplex[0]);
                    fv[j] = f(simplex[j]);
                }
            }
        }
        sort_simplex();
    }
    return simplex[0];
}

inline Vector central_gradient(const Objective& f, const Vector& x) {
    const double base = std::cbrt(std::numeric_limits<double>::epsilon());
    Vector g(x.size());
    Vector xp = x;
    for (Index j = 0; j < x.size(); ++j) {
        const double h = base * std::max(1.0, std::abs(x[j]));
        xp[j] = x[j] + h;
        const double fp = f(xp);
        xp[j] = x[j] - h;
        const double fm = f(xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    return g;
}

//! BFGS with Armijo backtracking; used as a local polish after Nelder-Mead.
inline Vector bfgs(const Objective& f, Vector x, int max_iter = 60) {
    const Index n = x.size();
    Matrix Hinv = Matrix::Identity(n, n);
    double fx = f(x);
    Vector g = central_gradient(f, x);
    for (int it = 0; it < max_iter; ++it) {
        if (!g.allFinite() || g.norm() < 1e-8 * (1.0 + std::abs(fx))) break;
        Vector d = -(Hinv * g);
        if (d.dot(g) >= 0.0) { Hinv.setIdentity(); d = -g; }
        double t = 1.0;
        Vector xn;
        double fn = fx;
        bool ok = false;
        while (t > 1e-12) {
            xn = x + t * d;
            fn = f(xn);
            if (std::isfinite(fn) && fn <= fx + 1e-4 * t * g.dot(d)) { ok = true; break; }
            t *= 0.5;
        }
        if (!ok) break;
        const Vector gn = central_gradient(f, xn);
        const Vector s = xn - x;
        const Vector yv = gn - g;
        const double sy = s.dot(yv);
        if (sy > 1e-12) {
            const double rho = 1.0 / sy;
            const Matrix I = Matrix::Identity(n, n);
            Hinv = (I - rho * s * yv.transpose()) * Hinv * (I - rho * yv * s.transpose()) +
                   rho * s * s.transpose();
        }
        x = std::move(xn);
        fx = fn;
        g = gn;
    }
    return x;
}

//! Multi-start minimizer: Nelder-Mead from x0 plus two deterministic
//! perturbed restarts, then a BFGS polish of the winner. Returns the best
//! point seen, so callers can rely on f(result) <= f(x0).
inline Vector minimize(const Objective& f, const Vector& x0) {
    Vector best = x0;
    double fbest = f(x0);
    auto consider = [&](const Vector& cand) {
        const double fc = f(cand);
        if (std::isfinite(fc) && fc < fbest) { best = cand; fbest = fc; }
    };
    consider(nelder_mead(f, x0));
    std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int r = 0; r < 2; ++r) {
        Vector xs = best;
        for (Index j = 0; j < xs.size(); ++j) xs[j] += 0.5 * normal(rng);
        consider(nelder_mead(f, xs));
    }
    consider(bfgs(f, best));
    return best;
}

} // namespace linkadjust::detail
