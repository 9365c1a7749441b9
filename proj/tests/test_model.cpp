#include <catch2/catch_amalgamated.hpp>

#include <linkadjust/model.hpp>

#include <cmath>

using namespace linkadjust;
using Catch::Approx;

namespace {

// Standard normal CDF via erfc, the independent check for the quantile code.
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

} // namespace

TEST_CASE("softplus matches log1p(exp) and never overflows", "[model]") {
    CHECK(softplus(0.0) == Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(softplus(3.5) == Approx(std::log1p(std::exp(3.5))).epsilon(1e-14));
    CHECK(softplus(-3.5) == Approx(std::log1p(std::exp(-3.5))).epsilon(1e-14));
    CHECK(softplus(800.0) == Approx(800.0).epsilon(1e-14));
    CHECK(softplus(-800.0) == Approx(0.0).margin(1e-300));
    // identity softplus(x) - softplus(-x) = x
    for (double x : {-20.0, -1.0, 0.3, 7.0, 40.0})
        CHECK(softplus(x) - softplus(-x) == Approx(x).epsilon(1e-12));
}

TEST_CASE("sigmoid, log_sigmoid, and logit are mutually consistent", "[model]") {
    for (double eta : {-30.0, -4.0, -0.5, 0.0, 0.5, 4.0, 30.0}) {
        CHECK(std::log(sigmoid(eta)) == Approx(log_sigmoid(eta)).margin(1e-12));
        CHECK(sigmoid(eta) + sigmoid(-eta) == Approx(1.0).epsilon(1e-14));
    }
    for (double p : {1e-6, 0.25, 0.5, 0.9, 1.0 - 1e-6})
        CHECK(sigmoid(logit(p)) == Approx(p).epsilon(1e-10));
    // extremes stay finite
    CHECK(std::isfinite(log_sigmoid(-745.0)));
    CHECK(sigmoid(-800.0) == 0.0);
    CHECK(sigmoid(800.0) == 1.0);
}

TEST_CASE("h_logistic evaluates the correct-match probability", "[model]") {
    Vector z(2), gamma(2);
    z << 1.0, 2.0;
    gamma << 0.5, -0.25;
    CHECK(h_logistic(z, gamma) == Approx(sigmoid(0.0)).epsilon(1e-14));
    Vector g1(1);
    g1 << 1.0;
    CHECK_THROWS_AS(h_logistic(z, g1), invalid_input);
}

TEST_CASE("gaussian log-density matches hand values", "[model]") {
    OutcomeParams theta;
    theta.beta = Vector::Zero(1);
    theta.sigma = 1.0;
    Vector x = Vector::Ones(1);
    // N(0;0,1) log density = -0.5 log(2 pi)
    CHECK(gaussian_loglik(0.0, x, theta) == Approx(-0.9189385332046727).epsilon(1e-14));
    theta.sigma = 2.0;
    CHECK(gaussian_loglik(3.0, x, theta) ==
          Approx(-0.5 * kLog2Pi - std::log(2.0) - 0.5 * 2.25).epsilon(1e-14));
    CHECK(gaussian_loglik_resid(3.0, 2.0) == Approx(gaussian_loglik(3.0, x, theta)).epsilon(1e-14));
    theta.sigma = -1.0;
    CHECK_THROWS_AS(gaussian_loglik(0.0, x, theta), invalid_input);
}

TEST_CASE("constraint slack is b plus the mean mismatch-design score", "[model]") {
    Matrix Z(3, 2);
    Z << 1, 0, 1, 1, 1, 2;
    Vector gamma(2);
    gamma << 0.5, -1.0;
    const auto c = MismatchRateConstraint::from_rate(0.25);
    // zbar = (1, 1), slack = logit(0.25) + 0.5 - 1
    CHECK(constraint_slack(Z, gamma, c) == Approx(logit(0.25) - 0.5).epsilon(1e-12));
    CHECK_THROWS_AS(MismatchRateConstraint::from_rate(0.0), invalid_input);
    CHECK_THROWS_AS(MismatchRateConstraint::from_rate(1.0), invalid_input);
}

TEST_CASE("normal quantile inverts the erfc-based CDF", "[model]") {
    CHECK(detail::normal_quantile(0.5) == Approx(0.0).margin(1e-15));
    CHECK(detail::normal_quantile(0.975) == Approx(1.959963984540054).epsilon(1e-12));
    CHECK(detail::normal_quantile(0.025) == Approx(-1.959963984540054).epsilon(1e-12));
    for (double p : {1e-10, 1e-4, 0.01, 0.1, 0.3, 0.7, 0.9, 0.99, 1.0 - 1e-6}) {
        const double x = detail::normal_quantile(p);
        CHECK(normal_cdf(x) == Approx(p).epsilon(1e-10));
    }
    CHECK_THROWS_AS(detail::normal_quantile(0.0), invalid_input);
    CHECK_THROWS_AS(detail::normal_quantile(1.0), invalid_input);
}

TEST_CASE("log_sum_exp is exact on small rows and stable on large ones", "[model]") {
    Eigen::RowVectorXd v(3);
    v << std::log(1.0), std::log(2.0), std::log(3.0);
    CHECK(detail::log_sum_exp(v) == Approx(std::log(6.0)).epsilon(1e-14));
    Eigen::RowVectorXd big(2);
    big << 1000.0, 1000.0;
    CHECK(detail::log_sum_exp(big) == Approx(1000.0 + std::log(2.0)).epsilon(1e-14));
    Eigen::RowVectorXd mixed(2);
    mixed << -std::numeric_limits<double>::infinity(), 2.0;
    CHECK(detail::log_sum_exp(mixed) == Approx(2.0).epsilon(1e-14));
    Eigen::RowVectorXd none(2);
    none << -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity();
    CHECK(detail::log_sum_exp(none) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("dataset validation rejects malformed inputs", "[model]") {
    LinkedDataset d;
    d.y = Vector::Zero(3);
    d.X = Matrix::Ones(3, 1);
    d.Z = Matrix::Ones(3, 1);
    CHECK_NOTHROW(d.validate());
    d.X(1, 0) = 0.0;
    CHECK_THROWS_AS(d.validate(), invalid_input);
    d.X(1, 0) = 1.0;
    d.y[2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(d.validate(), invalid_input);
    d.y[2] = 0.0;
    d.Z = Matrix::Ones(2, 1);
    CHECK_THROWS_AS(d.validate(), invalid_input);
}
