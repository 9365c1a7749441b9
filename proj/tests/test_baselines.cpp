#include <catch2/catch_amalgamated.hpp>

#include <linkadjust/baselines.hpp>

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
    d.Z = Matrix::Ones(n, 1);
    Vector clean(n);
    for (Index i = 0; i < n; ++i) {
        const double x = nd(eng);
        d.X(i, 0) = 1.0;
        d.X(i, 1) = x;
        clean[i] = 1.0 - x + 0.25 * nd(eng);
    }
    d.y = clean;
    std::uniform_int_distribution<Index> pick(0, n - 1);
    d.true_m = IntVector::Zero(n);
    for (Index i = 0; i < n; ++i)
        if (flip(eng)) {
            d.y[i] = clean[pick(eng)];
            (*d.true_m)[i] = 1;
        }
    return d;
}

} // namespace

TEST_CASE("naive fit is ordinary least squares with the classical covariance",
          "[baselines]") {
    auto d = make_contaminated(100, 0.0, 1);
    const auto fit = fit_naive(d);
    const Matrix XtX = d.X.transpose() * d.X;
    const Vector beta_ref = XtX.ldlt().solve(d.X.transpose() * d.y);
    CHECK((fit.theta.beta - beta_ref).cwiseAbs().maxCoeff() < 1e-10);
    const double rss = (d.y - d.X * beta_ref).squaredNorm();
    CHECK(fit.theta.sigma == Approx(std::sqrt(rss / 98.0)).epsilon(1e-12));
    const Matrix cov_ref = (rss / 98.0) * XtX.inverse();
    for (Index a = 0; a < 2; ++a)
        for (Index b = 0; b < 2; ++b)
            CHECK(fit.cov(a, b) == Approx(cov_ref(a, b)).margin(1e-10));
    CHECK(fit.cov(2, 2) == Approx(0.5 / 98.0).epsilon(1e-12));
    CHECK(fit.converged);
    CHECK(fit.posterior_correct.minCoeff() == 1.0);
    CHECK(fit.gamma.gamma.size() == 0);
}

TEST_CASE("naive fit equals the first mixture M-step up to the scale denominator",
          "[baselines]") {
    // with mhat = 0 the weighted M-step solves the same normal equations the
    // naive fit does; only the residual-variance denominator differs (n vs n-p)
    auto d = make_contaminated(60, 0.2, 2);
    const auto naive = fit_naive(d);
    const auto mstep = plain_mstep_theta(d, Vector::Zero(60));
    CHECK((naive.theta.beta - mstep.beta).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(mstep.sigma * mstep.sigma * 60.0 ==
          Approx(naive.theta.sigma * naive.theta.sigma * 58.0).epsilon(1e-10));
}

TEST_CASE("naive fit rejects degenerate inputs", "[baselines]") {
    LinkedDataset d;
    d.y = Vector::Zero(2);
    d.X = Matrix::Ones(2, 2);
    d.Z = Matrix::Ones(2, 1);
    CHECK_THROWS_AS(fit_naive(d), invalid_input);  // n == p
    auto dd = make_contaminated(30, 0.0, 3);
    dd.X.col(1).setConstant(1.0);  // collinear with the intercept
    CHECK_THROWS_AS(fit_naive(dd), singular_design);
}

TEST_CASE("oracle fit with the plug-in marginal reproduces the plain fit bit for bit",
          "[baselines]") {
    auto d = make_contaminated(150, 0.3, 4);
    EmConfig cfg;
    const auto plain = fit_plain(d, cfg);
    OracleSpec spec{estimate_marginal(d.y, MarginalMode::KDE)};
    const auto oracle = fit_oracle(d, spec, cfg);
    REQUIRE(oracle.theta.beta.size() == plain.theta.beta.size());
    for (Index k = 0; k < 2; ++k) CHECK(oracle.theta.beta[k] == plain.theta.beta[k]);
    CHECK(oracle.theta.sigma == plain.theta.sigma);
    for (Index k = 0; k < plain.gamma.gamma.size(); ++k)
        CHECK(oracle.gamma.gamma[k] == plain.gamma.gamma[k]);
    CHECK(oracle.iterations == plain.iterations);
    REQUIRE(oracle.loglik_trace.size() == plain.loglik_trace.size());
    for (std::size_t t = 0; t < plain.loglik_trace.size(); ++t)
        CHECK(oracle.loglik_trace[t] == plain.loglik_trace[t]);
    for (Index i = 0; i < d.n(); ++i)
        CHECK(oracle.posterior_correct[i] == plain.posterior_correct[i]);
}

TEST_CASE("oracle fit accepts a bare evaluator and validates it", "[baselines]") {
    auto d = make_contaminated(80, 0.3, 5);
    OracleSpec spec;
    spec.f_y_given_m1.eval = [](double v) {
        return std::exp(-0.5 * v * v / 4.0) / std::sqrt(8.0 * M_PI);
    };
    const auto fit = fit_oracle(d, spec);
    CHECK(fit.converged);
    CHECK(std::isfinite(fit.theta.beta[1]));
    OracleSpec bad;
    bad.f_y_given_m1.eval = [](double) { return 0.0; };
    CHECK_THROWS_AS(fit_oracle(d, bad), degenerate_density);
    OracleSpec none;
    CHECK_THROWS_AS(fit_oracle(d, none), invalid_input);
}

TEST_CASE("true-density oracle beats the naive slope under heavy mismatch",
          "[baselines]") {
    auto d = make_contaminated(400, 0.35, 6);
    // truth: mismatched responses are draws from the marginal of y
    const double mu = d.y.mean();
    const double sd = std::sqrt((d.y.array() - mu).square().sum() / 399.0);
    OracleSpec spec;
    spec.f_y_given_m1.eval = [mu, sd](double v) {
        const double t = (v - mu) / sd;
        return std::exp(-0.5 * t * t) / (sd * std::sqrt(2.0 * M_PI));
    };
    const auto oracle = fit_oracle(d, spec);
    const auto naive = fit_naive(d);
    CHECK(std::abs(oracle.theta.beta[1] + 1.0) < std::abs(naive.theta.beta[1] + 1.0));
}
