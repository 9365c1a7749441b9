#include <catch2/catch_amalgamated.hpp>

#include <linkadjust/inference.hpp>

#include <cmath>
#include <random>

using namespace linkadjust;
using Catch::Approx;

namespace {

LinkedDataset make_contaminated(Index n, double mismatch_rate, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::bernoulli_distribution flip(mismatch_rate);
    LinkedDataset d;
    d.y.resize(n);
    d.X.resize(n, 2);
    d.Z.resize(n, 2);
    Vector clean(n);
    for (Index i = 0; i < n; ++i) {
        const double x = nd(eng);
        d.X(i, 0) = 1.0;
        d.X(i, 1) = x;
        d.Z(i, 0) = 1.0;
        d.Z(i, 1) = nd(eng);
        clean[i] = 1.0 - x + 0.25 * nd(eng);
    }
    d.y = clean;
    std::uniform_int_distribution<Index> pick(0, n - 1);
    for (Index i = 0; i < n; ++i)
        if (flip(eng)) d.y[i] = clean[pick(eng)];
    return d;
}

} // namespace

TEST_CASE("finite-difference gradient matches a quadratic exactly", "[optim]") {
    Matrix A(3, 3);
    A << 4, 1, 0, 1, 3, -1, 0, -1, 2;
    Vector b(3);
    b << 1, -2, 0.5;
    auto f = [&](const Vector& x) { return 0.5 * x.dot(A * x) + b.dot(x); };
    std::mt19937_64 eng(1);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int k = 0; k < 10; ++k) {
        Vector x(3);
        x << nd(eng), nd(eng), nd(eng);
        const Vector g = detail::central_gradient(f, x);
        const Vector ref = A * x + b;
        CHECK((g - ref).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("minimize finds the optimum of smooth test functions", "[optim]") {
    Matrix A(2, 2);
    A << 3, 0.5, 0.5, 1;
    Vector b(2);
    b << -1, 2;
    auto quad = [&](const Vector& x) { return 0.5 * x.dot(A * x) + b.dot(x); };
    const Vector xstar = -A.ldlt().solve(b);
    const Vector x = detail::minimize(quad, Vector::Zero(2));
    CHECK((x - xstar).cwiseAbs().maxCoeff() < 1e-4);

    auto rosen = [](const Vector& v) {
        const double a = 1.0 - v[0], c = v[1] - v[0] * v[0];
        return a * a + 100.0 * c * c;
    };
    const Vector r = detail::minimize(rosen, (Vector(2) << -1.2, 1.0).finished());
    CHECK(rosen(r) < 1e-6);
    // never worse than the starting point, even on a hostile surface
    auto spiky = [](const Vector& v) { return v[0] * v[0] + 5.0 * std::abs(std::sin(9.0 * v[0])); };
    const Vector s0 = Vector::Constant(1, 0.17);
    CHECK(spiky(detail::minimize(spiky, s0)) <= spiky(s0) + 1e-12);
}

TEST_CASE("per-observation scores match the analytic mixture gradient", "[inference]") {
    auto d = make_contaminated(40, 0.3, 3);
    OutcomeParams theta;
    theta.beta = (Vector(2) << 0.9, -1.05).finished();
    theta.sigma = 0.3;
    MismatchParams gam;
    gam.gamma = (Vector(2) << 1.2, 0.4).finished();
    const auto f_y = estimate_marginal(d.y, MarginalMode::KDE);
    const Vector mhat = plain_estep(d, theta, gam, f_y);
    for (Index i : {Index(0), Index(7), Index(23), Index(39)}) {
        const Vector s = per_observation_score(d, theta, gam, i, LoglikKind::Plain, &f_y);
        const double w = 1.0 - mhat[i];
        const double e = d.y[i] - d.X.row(i).dot(theta.beta);
        const double h = sigmoid(d.Z.row(i).dot(gam.gamma));
        // d(-ll_i)/d beta = -(1-mhat_i) e_i x_i / sigma^2
        for (Index k = 0; k < 2; ++k)
            CHECK(s[k] == Approx(-w * e * d.X(i, k) / (theta.sigma * theta.sigma)).margin(1e-6));
        // d(-ll_i)/d log sigma = -(1-mhat_i) (e^2/sigma^2 - 1)
        CHECK(s[2] == Approx(-w * (e * e / (theta.sigma * theta.sigma) - 1.0)).margin(1e-6));
        // d(-ll_i)/d gamma = -((1-mhat_i) - h_i) z_i
        for (Index k = 0; k < 2; ++k)
            CHECK(s[3 + k] == Approx(-(w - h) * d.Z(i, k)).margin(1e-6));
    }
    CHECK_THROWS_AS(per_observation_score(d, theta, gam, 40, LoglikKind::Plain, &f_y),
                    invalid_input);
    CHECK_THROWS_AS(per_observation_score(d, theta, gam, 0, LoglikKind::Plain, nullptr),
                    invalid_input);
}

TEST_CASE("scores sum to zero at the maximum-likelihood estimate", "[inference]") {
    auto d = make_contaminated(150, 0.0, 5);
    // certain-correct regime: gamma pinned at the separation guard
    const auto ols = detail::ols_fit(d.y, d.X);
    OutcomeParams theta = ols;
    theta.sigma = std::sqrt((d.y - d.X * ols.beta).squaredNorm() / 150.0);  // ML scale
    MismatchParams gam;
    gam.gamma = (Vector(2) << kGammaClip, 0.0).finished();
    const auto f_y = estimate_marginal(d.y, MarginalMode::KDE);
    Vector total = Vector::Zero(3);
    for (Index i = 0; i < d.n(); ++i)
        total += per_observation_score(d, theta, gam, i, LoglikKind::Plain, &f_y,
                                       /*include_gamma=*/false);
    CHECK((total / 150.0).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("stationarity holds at a tightly converged mixture fit", "[inference]") {
    auto d = make_contaminated(200, 0.3, 7);
    EmConfig cfg;
    cfg.tol = 1e-13;
    cfg.max_iter = 3000;
    const auto fit = fit_plain(d, cfg);
    const auto f_y = estimate_marginal(d.y, MarginalMode::KDE);
    Vector total = Vector::Zero(5);
    for (Index i = 0; i < d.n(); ++i)
        total += per_observation_score(d, fit.theta, fit.gamma, i, LoglikKind::Plain, &f_y);
    CHECK((total / 200.0).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("wald intervals use the normal quantile and the log-sigma scale", "[inference]") {
    InferenceResult res;
    res.se = (Vector(3) << 0.1, 0.2, 0.0).finished();
    Vector packed(3);
    packed << 1.0, std::log(0.5), 2.0;
    wald_intervals(packed, 1, 0.95, res);
    const double z = 1.959963984540054;
    CHECK(res.ci_lower[0] == Approx(1.0 - z * 0.1).epsilon(1e-12));
    CHECK(res.ci_upper[0] == Approx(1.0 + z * 0.1).epsilon(1e-12));
    CHECK(res.ci_lower[1] == Approx(0.5 * std::exp(-z * 0.2)).epsilon(1e-12));
    CHECK(res.ci_upper[1] == Approx(0.5 * std::exp(z * 0.2)).epsilon(1e-12));
    CHECK(res.ci_lower[2] == 2.0);
    CHECK(res.ci_upper[2] == 2.0);
    REQUIRE_FALSE(res.diagnostics.empty());
    CHECK(res.diagnostics.back().find("zero-width") != std::string::npos);
    CHECK_THROWS_AS(wald_intervals(packed, 1, 1.5, res), invalid_input);
    InferenceResult bad;
    bad.se = Vector::Ones(2);
    CHECK_THROWS_AS(wald_intervals(packed, 1, 0.95, bad), invalid_input);
}

TEST_CASE("sandwich reduces to the robust OLS covariance when links are certain",
          "[inference]") {
    auto d = make_contaminated(120, 0.0, 9);
    const auto ols = detail::ols_fit(d.y, d.X);
    OutcomeParams theta = ols;
    theta.sigma = std::sqrt((d.y - d.X * ols.beta).squaredNorm() / 120.0);
    MismatchParams gam;
    gam.gamma = (Vector(2) << kGammaClip, 0.0).finished();
    const auto f_y = estimate_marginal(d.y, MarginalMode::KDE);
    const auto inf = sandwich_covariance(d, theta, gam, LoglikKind::Plain, &f_y, 0.95,
                                         /*include_gamma=*/false);
    // HC0: (X'X)^{-1} (sum x_i x_i' e_i^2) (X'X)^{-1}
    const Matrix XtX = d.X.transpose() * d.X;
    Matrix meat = Matrix::Zero(2, 2);
    const Vector e = d.y - d.X * theta.beta;
    for (Index i = 0; i < d.n(); ++i)
        meat += e[i] * e[i] * d.X.row(i).transpose() * d.X.row(i);
    const Matrix hc0 = XtX.inverse() * meat * XtX.inverse();
    for (Index a = 0; a < 2; ++a)
        for (Index b = 0; b < 2; ++b)
            CHECK(inf.cov(a, b) == Approx(hc0(a, b)).epsilon(1e-6));

    // full analytic sandwich including the log-sigma coordinate
    const double s2 = theta.sigma * theta.sigma;
    Matrix H = Matrix::Zero(3, 3);
    H.topLeftCorner(2, 2) = XtX / (120.0 * s2);
    H(2, 2) = 2.0 * e.squaredNorm() / (120.0 * s2);
    H.block(0, 2, 2, 1) = 2.0 * (d.X.transpose() * e) / (120.0 * s2);
    H.block(2, 0, 1, 2) = H.block(0, 2, 2, 1).transpose();
    Matrix J = Matrix::Zero(3, 3);
    for (Index i = 0; i < d.n(); ++i) {
        Vector s(3);
        s.head(2) = -e[i] * d.X.row(i).transpose() / s2;
        s[2] = 1.0 - e[i] * e[i] / s2;
        J += s * s.transpose();
    }
    J /= 120.0;
    const Matrix ref = H.inverse() * J * H.inverse() / 120.0;
    CHECK((inf.cov - ref).norm() < 1e-5 * ref.norm());
}

TEST_CASE("duplicating the file scales the standard errors by one over root two",
          "[inference]") {
    auto d = make_contaminated(80, 0.3, 11);
    auto f_eval = [](double v) {
        return std::exp(-0.5 * v * v / 4.0) / std::sqrt(8.0 * M_PI);
    };
    LinkedDataset d2;
    d2.y.resize(160);
    d2.y << d.y, d.y;
    d2.X.resize(160, 2);
    d2.X << d.X, d.X;
    d2.Z.resize(160, 2);
    d2.Z << d.Z, d.Z;
    OutcomeParams theta;
    theta.beta = (Vector(2) << 1.0, -1.0).finished();
    theta.sigma = 0.3;
    MismatchParams gam;
    gam.gamma = (Vector(2) << 1.0, 0.5).finished();
    const auto f1 = estimate_marginal(d.y, MarginalMode::UserSupplied, {}, nullptr, f_eval);
    const auto f2 = estimate_marginal(d2.y, MarginalMode::UserSupplied, {}, nullptr, f_eval);
    const auto i1 = sandwich_covariance(d, theta, gam, LoglikKind::Plain, &f1);
    const auto i2 = sandwich_covariance(d2, theta, gam, LoglikKind::Plain, &f2);
    for (Index k = 0; k < i1.se.size(); ++k)
        CHECK(i2.se[k] == Approx(i1.se[k] / std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("the extended and integrated likelihood kinds produce usable intervals",
          "[inference]") {
    auto d = make_contaminated(120, 0.3, 13);
    EmConfig cfg;
    const auto fit = fit_plain(d, cfg);
    for (LoglikKind kind : {LoglikKind::IntegratedPlain, LoglikKind::Extended}) {
        const auto inf = sandwich_covariance(d, fit.theta, fit.gamma, kind);
        REQUIRE(inf.se.size() == 5);
        CHECK(inf.se.minCoeff() > 0.0);
        CHECK(inf.hessian_condition < 1e12);
        for (Index k = 0; k < 5; ++k) CHECK(inf.ci_lower[k] < inf.ci_upper[k]);
        // sigma interval comes back on the raw scale around the estimate
        CHECK(inf.ci_lower[2] > 0.0);
        CHECK(inf.ci_lower[2] < fit.theta.sigma);
        CHECK(inf.ci_upper[2] > fit.theta.sigma);
    }
}

TEST_CASE("a collinear design is reported as singular information", "[inference]") {
    auto d = make_contaminated(60, 0.2, 15);
    LinkedDataset bad = d;
    bad.X.resize(60, 3);
    bad.X.leftCols(2) = d.X;
    bad.X.col(2) = d.X.col(1);
    OutcomeParams theta;
    theta.beta = (Vector(3) << 1.0, -0.5, -0.5).finished();
    theta.sigma = 0.3;
    MismatchParams gam;
    gam.gamma = (Vector(2) << 1.0, 0.0).finished();
    const auto f_y = estimate_marginal(bad.y, MarginalMode::KDE);
    CHECK_THROWS_AS(
        sandwich_covariance(bad, theta, gam, LoglikKind::Plain, &f_y),
        singular_information);
}
