#include <catch2/catch_amalgamated.hpp>

#include <linkadjust/marginal.hpp>

#include <cmath>
#include <random>

using namespace linkadjust;
using Catch::Approx;

namespace {

double gauss_pdf(double v, double mu, double sd) {
    const double r = (v - mu) / sd;
    return std::exp(-0.5 * r * r) / (sd * std::sqrt(2.0 * M_PI));
}

} // namespace

TEST_CASE("silverman bandwidth follows the plug-in rule", "[marginal]") {
    // four points with sd and IQR computable by hand
    Vector y(4);
    y << 0.0, 1.0, 2.0, 3.0;
    const double sd = std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 3.0);
    const double iqr = 2.25 - 0.75;  // type-7 quartiles of {0,1,2,3}
    const double expect = 0.9 * std::min(sd, iqr / 1.34) * std::pow(4.0, -0.2);
    CHECK(silverman_bandwidth(y) == Approx(expect).epsilon(1e-12));
    Vector flat = Vector::Constant(5, 2.0);
    CHECK_THROWS_AS(silverman_bandwidth(flat), degenerate_data);
    Vector one(1);
    one << 1.0;
    CHECK_THROWS_AS(silverman_bandwidth(one), invalid_input);
}

TEST_CASE("two-point KDE equals the average of its kernels", "[marginal]") {
    Vector y(2);
    y << -1.0, 1.0;
    const auto f = estimate_marginal(y, MarginalMode::KDE);
    REQUIRE(f.bandwidth.has_value());
    const double bw = *f.bandwidth;
    for (double v : {-2.0, -0.3, 0.0, 0.7, 1.5}) {
        const double expect = 0.5 * (gauss_pdf(v, -1.0, bw) + gauss_pdf(v, 1.0, bw));
        CHECK(f.eval(v) == Approx(expect).epsilon(1e-12));
    }
    // symmetry about the midpoint
    CHECK(f.eval(0.4) == Approx(f.eval(-0.4)).epsilon(1e-12));
    // cached log densities agree with the evaluator
    for (Index i = 0; i < 2; ++i)
        CHECK(std::exp(f.log_at_obs[i]) == Approx(f.eval(y[i])).epsilon(1e-12));
}

TEST_CASE("KDE on a standard normal sample is close to the true density", "[marginal]") {
    std::mt19937_64 eng(7);
    std::normal_distribution<double> nd(0.0, 1.0);
    Vector y(4000);
    for (Index i = 0; i < y.size(); ++i) y[i] = nd(eng);
    const auto f = estimate_marginal(y, MarginalMode::KDE);
    CHECK(f.eval(0.0) == Approx(0.3989).margin(0.05));
    CHECK(f.eval(1.0) == Approx(gauss_pdf(1.0, 0.0, 1.0)).margin(0.05));
}

TEST_CASE("empirical pmf counts duplicates and misses off-support points", "[marginal]") {
    Vector y(5);
    y << 1.0, 2.0, 2.0, 3.0, 2.0;
    const auto f = estimate_marginal(y, MarginalMode::EmpiricalPMF);
    CHECK(f.eval(2.0) == Approx(0.6).epsilon(1e-14));
    CHECK(f.eval(1.0) == Approx(0.2).epsilon(1e-14));
    CHECK(f.eval(9.0) == 0.0);
    CHECK(std::exp(f.log_at_obs[0]) == Approx(0.2).epsilon(1e-12));
    CHECK(std::exp(f.log_at_obs[1]) == Approx(0.6).epsilon(1e-12));
}

TEST_CASE("integrated marginal averages the outcome density over the file", "[marginal]") {
    OutcomeParams theta;
    theta.beta = Vector(2);
    theta.beta << 0.5, 1.0;
    theta.sigma = 0.7;
    Matrix X(3, 2);
    X << 1, 0, 1, 1, 1, -1;
    Vector y(3);
    y << 0.2, 1.4, -0.9;
    const auto f = estimate_marginal(y, MarginalMode::Integrated, theta, &X);
    for (double v : {-1.0, 0.2, 2.0}) {
        double expect = 0.0;
        for (int j = 0; j < 3; ++j) expect += gauss_pdf(v, X.row(j).dot(theta.beta), theta.sigma);
        expect /= 3.0;
        CHECK(f.eval(v) == Approx(expect).epsilon(1e-12));
    }
    // single-row file: just the outcome density itself
    Matrix X1 = X.topRows(1);
    Vector y1 = y.head(1);
    const auto f1 = estimate_marginal(y1, MarginalMode::Integrated, theta, &X1);
    CHECK(f1.eval(0.3) == Approx(gauss_pdf(0.3, 0.5, 0.7)).epsilon(1e-12));
    CHECK_THROWS_AS(estimate_marginal(y, MarginalMode::Integrated), invalid_input);
    CHECK_THROWS_AS(estimate_marginal(y, MarginalMode::Integrated, theta), invalid_input);
}

TEST_CASE("user-supplied density is validated at the observed points", "[marginal]") {
    Vector y(3);
    y << 0.0, 1.0, 2.0;
    const auto f = estimate_marginal(y, MarginalMode::UserSupplied, {}, nullptr,
                                     [](double v) { return gauss_pdf(v, 0.0, 2.0); });
    CHECK(std::exp(f.log_at_obs[2]) == Approx(gauss_pdf(2.0, 0.0, 2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(estimate_marginal(y, MarginalMode::UserSupplied), invalid_input);
    CHECK_THROWS_AS(estimate_marginal(y, MarginalMode::UserSupplied, {}, nullptr,
                                      [](double v) { return v - 1.0; }),
                    degenerate_density);
    try {
        estimate_marginal(y, MarginalMode::UserSupplied, {}, nullptr,
                          [](double) { return 0.0; });
        FAIL("expected degenerate_density");
    } catch (const degenerate_density& e) {
        CHECK(e.index() == 0);
    }
}
