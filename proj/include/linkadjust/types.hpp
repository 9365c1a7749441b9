#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "exceptions.hpp"

namespace linkadjust {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntVector = Eigen::VectorXi;
using Index = Eigen::Index;

//! A linked file: responses y, outcome design X, mismatch-model design Z.
//! Both designs carry an explicit all-ones intercept as their first column.
struct LinkedDataset {
    Vector y;
    Matrix X;
    Matrix Z;
    std::optional<IntVector> true_m;    // ground-truth mismatch flags (simulation only)
    std::optional<IntVector> block_id;  // block membership for within-block permutation

    Index n() const { return y.size(); }
    Index p() const { return X.cols(); }
    Index q() const { return Z.cols(); }

    void validate() const {
        const Index N = n();
        if (N == 0) throw invalid_input("dataset is empty");
        if (X.rows() != N || Z.rows() != N)
            throw invalid_input("X/Z row count does not match y");
        if (N < p()) throw invalid_input("need n >= p");
        if (N < q()) throw invalid_input("need n >= q");
        if (!y.allFinite() || !X.allFinite() || !Z.allFinite())
            throw invalid_input("non-finite entries in dataset");
        if ((X.col(0).array() != 1.0).any())
            throw invalid_input("first column of X must be an all-ones intercept");
        if ((Z.col(0).array() != 1.0).any())
            throw invalid_input("first column of Z must be an all-ones intercept");
        if (true_m && true_m->size() != N)
            throw invalid_input("true_m length does not match y");
        if (block_id && block_id->size() != N)
            throw invalid_input("block_id length does not match y");
    }
};

//! theta = (beta, sigma) of the Gaussian outcome model.
struct OutcomeParams {
    Vector beta;
    double sigma = 1.0;

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma))
            throw invalid_input("sigma must be positive and finite");
        if (!beta.allFinite()) throw invalid_input("beta must be finite");
    }
};

//! Upper bound on the mismatch rate, expressed on the logit scale.
struct MismatchRateConstraint {
    double assumed_rate = 0.5;
    double b = 0.0;  // logit(assumed_rate)

    static MismatchRateConstraint from_rate(double rate) {
        if (!(rate > 0.0 && rate < 1.0))
            throw invalid_input("assumed mismatch rate must lie in (0,1)");
        return {rate, std::log(rate / (1.0 - rate))};
    }
};

//! gamma of the logistic correct-match model.
struct MismatchParams {
    Vector gamma;
    std::optional<MismatchRateConstraint> constraint;
};

enum class MarginalMode { KDE, EmpiricalPMF, Integrated, UserSupplied };

//! EM controls shared by the plain and extended fits.
struct EmConfig {
    int max_iter = 500;
    double tol = 1e-8;  // relative change in composite log-likelihood
    std::optional<OutcomeParams> theta_init;
    std::optional<MismatchParams> gamma_init;
    MarginalMode marginal = MarginalMode::KDE;
    std::function<double(double)> user_marginal;  // density of y given m=1, UserSupplied mode
    std::optional<MismatchRateConstraint> constraint;
    Index n_cap = 20000;  // guard for the dense n x n responsibility matrix

    void validate() const {
        if (max_iter < 1) throw invalid_input("max_iter must be >= 1");
        if (!(tol > 0.0)) throw invalid_input("tol must be > 0");
        if (marginal == MarginalMode::UserSupplied && !user_marginal)
            throw invalid_input("UserSupplied marginal mode needs a density function");
    }
};

//! Estimates plus convergence metadata; cov/se are filled in by the inference layer.
struct FitResult {
    OutcomeParams theta;
    MismatchParams gamma;
    Matrix cov;
    Vector se;
    Vector posterior_correct;          // P(m_i = 0 | data) at convergence
    std::vector<double> loglik_trace;  // composite log-likelihood per iteration
    int iterations = 0;
    bool converged = false;
    std::vector<std::string> diagnostics;

    Vector packed() const {
        Vector u(theta.beta.size() + 1 + gamma.gamma.size());
        u << theta.beta, std::log(theta.sigma), gamma.gamma;
        return u;
    }
};

constexpr double kGammaClip = 30.0;  // separation guard for logistic coefficients

} // namespace linkadjust
