#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <thread>

#include "baselines.hpp"

namespace linkadjust {

namespace detail {

//! splitmix64 finalizer; the basis of all stream derivation.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

enum class Purpose : std::uint64_t {
    Covariates = 1,  // fixed across replications: derived with r = 0
    Noise = 2,
    Mismatch = 3,
    Permutation = 4,
    ZDraw = 5,
    CaseInject = 6,
};

//! Stream seed for (scenario seed, purpose, replication). Chained mixing
//! keeps nearby (seed, r) pairs statistically unrelated.
inline std::uint64_t derive_seed(std::uint64_t seed, Purpose purpose, std::uint64_t r) {
    return mix64(mix64(mix64(seed) ^ static_cast<std::uint64_t>(purpose)) ^ r);
}

inline std::mt19937_64 make_engine(std::uint64_t seed, Purpose purpose, std::uint64_t r) {
    return std::mt19937_64(derive_seed(seed, purpose, r));
}

inline Vector standard_normal(Index n, std::mt19937_64& eng) {
    std::normal_distribution<double> dist;
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = dist(eng);
    return v;
}

//! Beta(a, b) draws via two gammas, clamped away from {0, 1} so the logit
//! transform stays finite.
inline Vector beta_draws(Index n, double a, double b, std::mt19937_64& eng) {
    std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
    Vector v(n);
    for (Index i = 0; i < n; ++i) {
        const double x = ga(eng), y = gb(eng);
        v[i] = std::clamp(x / (x + y), 1e-12, 1.0 - 1e-12);
    }
    return v;
}

inline void permute_subset(Vector& y, const std::vector<Index>& idx, std::mt19937_64& eng) {
    std::vector<double> vals;
    vals.reserve(idx.size());
    for (const Index i : idx) vals.push_back(y[i]);
    std::shuffle(vals.begin(), vals.end(), eng);
    for (std::size_t k = 0; k < idx.size(); ++k) y[idx[k]] = vals[k];
}

inline IntVector draw_mismatch(const Vector& h, std::mt19937_64& eng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    IntVector m(h.size());
    for (Index i = 0; i < h.size(); ++i) m[i] = unif(eng) < 1.0 - h[i] ? 1 : 0;
    return m;
}

inline std::vector<Index> where(const IntVector& m, int value) {
    std::vector<Index> idx;
    for (Index i = 0; i < m.size(); ++i)
        if (m[i] == value) idx.push_back(i);
    return idx;
}

} // namespace detail

enum class ScenarioKind { Motivating, OverlapI, OverlapII, OverlapIII, EleBlocks, CaseStudyMechanism };

struct ScenarioTruth {
    Vector beta;
    double sigma = 0.25;
    Vector gamma;
};

struct ScenarioSpec {
    ScenarioKind kind = ScenarioKind::Motivating;
    Index n = 1000;
    std::uint64_t seed = 0;
    ScenarioTruth truth;

    void validate() const {
        if (n < 10) throw invalid_input("scenario needs n >= 10");
        if (truth.beta.size() == 0 || truth.gamma.size() == 0)
            throw invalid_input("scenario truth is not populated");
        if (!(truth.sigma > 0.0)) throw invalid_input("scenario sigma must be positive");
    }
};

//! Scenario with its default generating parameters.
inline ScenarioSpec make_scenario(ScenarioKind kind, Index n, std::uint64_t seed) {
    ScenarioSpec spec;
    spec.kind = kind;
    spec.n = n;
    spec.seed = seed;
    switch (kind) {
        case ScenarioKind::Motivating:
            spec.truth.beta = (Vector(2) << 1.0, -1.0).finished();
            spec.truth.sigma = 0.25;
            spec.truth.gamma = (Vector(2) << 2.5, 4.5).finished();
            break;
        case ScenarioKind::OverlapI:
        case ScenarioKind::OverlapII:
            spec.truth.beta = (Vector(4) << 1.0, 2.0, -1.5, 1.0).finished();
            spec.truth.sigma = 0.25;
            spec.truth.gamma = (Vector(3) << 1.0, -2.5, 1.0).finished();
            break;
        case ScenarioKind::OverlapIII:
            spec.truth.beta = (Vector(4) << 1.0, 2.0, -1.5, 1.0).finished();
            spec.truth.sigma = 0.25;
            spec.truth.gamma = (Vector(3) << 1.0, 0.0, 1.0).finished();
            break;
        case ScenarioKind::EleBlocks: {
            spec.truth.beta = (Vector(2) << 1.0, -1.0).finished();
            spec.truth.sigma = 0.25;
            const double g0 = (logit(0.28) + logit(0.97)) / 2.0;
            spec.truth.gamma = (Vector(2) << g0, logit(0.28) - g0).finished();
            break;
        }
        case ScenarioKind::CaseStudyMechanism:
            spec.truth.beta = (Vector(2) << 0.34, 0.81).finished();
            spec.truth.sigma = 0.386;
            spec.truth.gamma = (Vector(2) << 2.0, 3.0).finished();
            break;
    }
    return spec;
}

//! One simulated linked file plus the pre-contamination responses.
struct SimDraw {
    LinkedDataset data;
    Vector y_clean;
};

namespace detail {

//! Pearson correlation inside the Gaussian copula that couples the fixed x
//! grid to the z draws in the overlap settings; tuned so the realized
//! Corr(x, z) lands at the targeted -0.8 after both rank mappings.
inline constexpr double kOverlapCopulaRho = -0.8694;

} // namespace detail

inline SimDraw gen_motivating(const ScenarioSpec& spec, std::uint64_t r) {
    spec.validate();
    if (spec.kind != ScenarioKind::Motivating) throw invalid_input("wrong scenario kind");
    const Index n = spec.n;
    auto xeng = detail::make_engine(spec.seed, detail::Purpose::Covariates, 0);
    const Vector x = detail::standard_normal(n, xeng);
    auto neng = detail::make_engine(spec.seed, detail::Purpose::Noise, r);
    const Vector eps = detail::standard_normal(n, neng);

    SimDraw out;
    out.data.X.resize(n, 2);
    out.data.X.col(0).setOnes();
    out.data.X.col(1) = x;
    out.data.Z = out.data.X;
    out.y_clean = out.data.X * spec.truth.beta + spec.truth.sigma * eps;

    Vector h(n);
    for (Index i = 0; i < n; ++i)
        h[i] = sigmoid(spec.truth.gamma[0] + spec.truth.gamma[1] * x[i]);
    auto meng = detail::make_engine(spec.seed, detail::Purpose::Mismatch, r);
    out.data.true_m = detail::draw_mismatch(h, meng);
    out.data.y = out.y_clean;
    auto peng = detail::make_engine(spec.seed, detail::Purpose::Permutation, r);
    detail::permute_subset(out.data.y, detail::where(*out.data.true_m, 1), peng);
    return out;
}

inline SimDraw gen_overlap(const ScenarioSpec& spec, std::uint64_t r) {
    spec.validate();
    if (spec.kind != ScenarioKind::OverlapI && spec.kind != ScenarioKind::OverlapII &&
        spec.kind != ScenarioKind::OverlapIII)
        throw invalid_input("wrong scenario kind");
    const Index n = spec.n;
    Vector x(n);
    for (Index i = 0; i < n; ++i)
        x[i] = -3.0 + 6.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    Vector d(n);
    for (Index i = 0; i < n; ++i) d[i] = x[i] > 0.0 ? 1.0 : 0.0;

    auto zeng = detail::make_engine(spec.seed, detail::Purpose::ZDraw, r);
    Vector z(n);
    if (spec.kind == ScenarioKind::OverlapII) {
        const Vector p = detail::beta_draws(n, 4.5, 0.5, zeng);
        for (Index i = 0; i < n; ++i) z[i] = logit(p[i]);
    } else {
        // Couple z to the ascending x grid through Gaussian-copula ranks.
        const Vector a = detail::standard_normal(n, zeng);
        const Vector b0 = detail::standard_normal(n, zeng);
        const double rho = detail::kOverlapCopulaRho;
        const Vector b = rho * a + std::sqrt(1.0 - rho * rho) * b0;
        const Vector p = detail::beta_draws(n, 4.5, 0.5, zeng);
        std::vector<double> zs(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) zs[static_cast<std::size_t>(i)] = logit(p[i]);
        std::sort(zs.begin(), zs.end());
        std::vector<Index> ord(static_cast<std::size_t>(n)), brank(static_cast<std::size_t>(n));
        std::iota(ord.begin(), ord.end(), Index{0});
        std::sort(ord.begin(), ord.end(), [&](Index u, Index v) { return a[u] < a[v]; });
        std::vector<Index> bord(static_cast<std::size_t>(n));
        std::iota(bord.begin(), bord.end(), Index{0});
        std::sort(bord.begin(), bord.end(), [&](Index u, Index v) { return b[u] < b[v]; });
        for (Index pos = 0; pos < n; ++pos) brank[static_cast<std::size_t>(bord[pos])] = pos;
        for (Index k = 0; k < n; ++k)
            z[k] = zs[static_cast<std::size_t>(brank[static_cast<std::size_t>(ord[k])])];
    }

    SimDraw out;
    out.data.X.resize(n, 4);
    out.data.X.col(0).setOnes();
    out.data.X.col(1) = d;
    out.data.X.col(2) = x;
    out.data.X.col(3) = (d.array() * x.array()).matrix();
    out.data.Z.resize(n, 3);
    out.data.Z.col(0).setOnes();
    out.data.Z.col(1) = d;
    out.data.Z.col(2) = z;

    auto neng = detail::make_engine(spec.seed, detail::Purpose::Noise, r);
    out.y_clean = out.data.X * spec.truth.beta +
                  spec.truth.sigma * detail::standard_normal(n, neng);
    Vector h(n);
    const Vector eta = out.data.Z * spec.truth.gamma;
    for (Index i = 0; i < n; ++i) h[i] = sigmoid(eta[i]);
    auto meng = detail::make_engine(spec.seed, detail::Purpose::Mismatch, r);
    out.data.true_m = detail::draw_mismatch(h, meng);
    out.data.y = out.y_clean;
    auto peng = detail::make_engine(spec.seed, detail::Purpose::Permutation, r);
    detail::permute_subset(out.data.y, detail::where(*out.data.true_m, 1), peng);
    return out;
}

inline SimDraw gen_ele_blocks(const ScenarioSpec& spec, std::uint64_t r) {
    spec.validate();
    if (spec.kind != ScenarioKind::EleBlocks) throw invalid_input("wrong scenario kind");
    const Index n = spec.n;
    auto xeng = detail::make_engine(spec.seed, detail::Purpose::Covariates, 0);
    const Vector x = detail::standard_normal(n, xeng);

    SimDraw out;
    out.data.X.resize(n, 2);
    out.data.X.col(0).setOnes();
    out.data.X.col(1) = x;
    out.data.Z.resize(n, 2);
    out.data.Z.col(0).setOnes();
    IntVector block(n);
    for (Index i = 0; i < n; ++i) {
        block[i] = x[i] <= 0.0 ? 1 : 2;
        out.data.Z(i, 1) = x[i] <= 0.0 ? 1.0 : -1.0;  // sum-to-zero block contrast
    }
    out.data.block_id = block;

    auto neng = detail::make_engine(spec.seed, detail::Purpose::Noise, r);
    out.y_clean = out.data.X * spec.truth.beta +
                  spec.truth.sigma * detail::standard_normal(n, neng);
    Vector h(n);
    const Vector eta = out.data.Z * spec.truth.gamma;
    for (Index i = 0; i < n; ++i) h[i] = sigmoid(eta[i]);
    auto meng = detail::make_engine(spec.seed, detail::Purpose::Mismatch, r);
    out.data.true_m = detail::draw_mismatch(h, meng);
    out.data.y = out.y_clean;
    auto peng = detail::make_engine(spec.seed, detail::Purpose::Permutation, r);
    for (int blk : {1, 2}) {
        std::vector<Index> idx;
        for (Index i = 0; i < n; ++i)
            if (block[i] == blk && (*out.data.true_m)[i] == 1) idx.push_back(i);
        detail::permute_subset(out.data.y, idx, peng);
    }
    return out;
}

//! Contaminate an (x, y) file through the quadratic-distance mechanism:
//! logit(P(m=0|x)) = gamma0 + gamma1 (median(x) - x)^2. Returns the permuted
//! responses, the mismatch flags, and the mismatch-model design column.
struct CaseInjection {
    Vector y;
    IntVector true_m;
    Vector w;  // (median(x) - x)^2
};

inline CaseInjection inject_casestudy_mismatch(const Vector& x, const Vector& y,
                                               const Vector& gamma, std::uint64_t seed) {
    if (x.size() != y.size()) throw invalid_input("inject_casestudy_mismatch: size mismatch");
    if (gamma.size() != 2) throw invalid_input("inject_casestudy_mismatch: gamma must have 2 entries");
    const Index n = x.size();
    std::vector<double> s(x.data(), x.data() + n);
    std::sort(s.begin(), s.end());
    const double med = detail::quantile_sorted(s, 0.5);
    CaseInjection out;
    out.w = (med - x.array()).square().matrix();
    Vector h(n);
    for (Index i = 0; i < n; ++i) h[i] = sigmoid(gamma[0] + gamma[1] * out.w[i]);
    auto meng = detail::make_engine(seed, detail::Purpose::Mismatch, 0);
    out.true_m = detail::draw_mismatch(h, meng);
    out.y = y;
    auto peng = detail::make_engine(seed, detail::Purpose::Permutation, 0);
    detail::permute_subset(out.y, detail::where(out.true_m, 1), peng);
    return out;
}

inline SimDraw gen_casestudy(const ScenarioSpec& spec, std::uint64_t r) {
    spec.validate();
    if (spec.kind != ScenarioKind::CaseStudyMechanism) throw invalid_input("wrong scenario kind");
    const Index n = spec.n;
    auto xeng = detail::make_engine(spec.seed, detail::Purpose::Covariates, 0);
    // Income-like positive skew: log-normal with median 1.6.
    Vector x = detail::standard_normal(n, xeng);
    for (Index i = 0; i < n; ++i) x[i] = std::exp(std::log(1.6) + 0.55 * x[i]);

    SimDraw out;
    out.data.X.resize(n, 2);
    out.data.X.col(0).setOnes();
    out.data.X.col(1) = x;
    auto neng = detail::make_engine(spec.seed, detail::Purpose::Noise, r);
    out.y_clean = out.data.X * spec.truth.beta +
                  spec.truth.sigma * detail::standard_normal(n, neng);
    const std::uint64_t inject_seed =
        detail::derive_seed(spec.seed, detail::Purpose::CaseInject, r);
    auto inj = inject_casestudy_mismatch(x, out.y_clean, spec.truth.gamma, inject_seed);
    out.data.y = std::move(inj.y);
    out.data.true_m = std::move(inj.true_m);
    out.data.Z.resize(n, 2);
    out.data.Z.col(0).setOnes();
    out.data.Z.col(1) = inj.w;
    return out;
}

inline SimDraw generate(const ScenarioSpec& spec, std::uint64_t r) {
    switch (spec.kind) {
        case ScenarioKind::Motivating: return gen_motivating(spec, r);
        case ScenarioKind::OverlapI:
        case ScenarioKind::OverlapII:
        case ScenarioKind::OverlapIII: return gen_overlap(spec, r);
        case ScenarioKind::EleBlocks: return gen_ele_blocks(spec, r);
        case ScenarioKind::CaseStudyMechanism: return gen_casestudy(spec, r);
    }
    throw invalid_input("unknown scenario kind");
}

enum class Method { Naive, Plain, PlainConstrained, Oracle, Extended };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::Naive: return "naive";
        case Method::Plain: return "plain";
        case Method::PlainConstrained: return "plain-constrained";
        case Method::Oracle: return "oracle";
        case Method::Extended: return "extended";
    }
    return "?";
}

inline std::optional<Method> method_from_name(const std::string& s) {
    for (Method m : {Method::Naive, Method::Plain, Method::PlainConstrained, Method::Oracle,
                     Method::Extended})
        if (s == method_name(m)) return m;
    return std::nullopt;
}

struct ParamSummary {
    std::string name;
    double true_value = 0.0;
    double mean_est = 0.0;
    double bias = 0.0;
    std::optional<double> rel_bias;  // bias / true, absent when true == 0
    std::optional<double> sd;        // absent when fewer than 2 successes
    std::optional<double> coverage;  // absent when CIs were not computed
};

struct ReplicationReport {
    Method method = Method::Naive;
    int replications = 0;
    int failures = 0;
    bool excess_failures = false;  // more than 2% of R failed
    double mean_mismatch_rate = 0.0;
    std::optional<std::array<double, 2>> block_match_rates;  // EleBlocks only
    std::vector<ParamSummary> params;
    Matrix estimates;  // R x dim, NaN rows for failed replications
    std::vector<std::string> failure_notes;
};

namespace detail {

struct MethodPlan {
    Method method;
    Index dim;                    // beta..., sigma, gamma...
    Vector truth;                 // raw scale (sigma, not log sigma)
    std::vector<std::string> names;
};

inline MethodPlan plan_for(Method m, const ScenarioSpec& spec) {
    const Index p = spec.truth.beta.size();
    const Index q = m == Method::Naive ? 0 : spec.truth.gamma.size();
    MethodPlan plan;
    plan.method = m;
    plan.dim = p + 1 + q;
    plan.truth.resize(plan.dim);
    plan.truth.head(p) = spec.truth.beta;
    plan.truth[p] = spec.truth.sigma;
    if (q > 0) plan.truth.tail(q) = spec.truth.gamma;
    for (Index j = 0; j < p; ++j) plan.names.push_back("beta" + std::to_string(j));
    plan.names.push_back("sigma");
    for (Index j = 0; j < q; ++j) plan.names.push_back("gamma" + std::to_string(j));
    return plan;
}

//! Gaussian density fitted to the responses at truly mismatched positions;
//! the best-case mismatch-component density for the oracle fit.
inline MarginalDensity oracle_density(const LinkedDataset& data) {
    const auto idx = where(*data.true_m, 1);
    if (idx.size() < 2) throw degenerate_data("oracle: fewer than 2 mismatched responses");
    double mean = 0.0;
    for (const Index i : idx) mean += data.y[i];
    mean /= static_cast<double>(idx.size());
    double ss = 0.0;
    for (const Index i : idx) ss += (data.y[i] - mean) * (data.y[i] - mean);
    const double sd = std::sqrt(ss / static_cast<double>(idx.size() - 1));
    if (!(sd > 0.0)) throw degenerate_data("oracle: mismatched responses are constant");
    auto pdf = [mean, sd](double v) {
        const double t = (v - mean) / sd;
        return std::exp(-0.5 * t * t) / (sd * std::sqrt(2.0 * 3.14159265358979323846));
    };
    return estimate_marginal(data.y, MarginalMode::UserSupplied, {}, nullptr, pdf);
}

struct RepOutcome {
    Vector estimate;   // raw-scale packed values, empty on failure
    Vector ci_lo, ci_hi;
    std::string note;  // failure description when estimate is empty
};

inline RepOutcome run_one_method(Method m, const SimDraw& draw, double level, bool compute_cis,
                                 std::optional<double> assumed_rate) {
    RepOutcome out;
    try {
        FitResult fit;
        std::optional<MarginalDensity> f_y;
        LoglikKind kind = LoglikKind::Plain;
        switch (m) {
            case Method::Naive:
                fit = fit_naive(draw.data);
                break;
            case Method::Plain: {
                EmConfig cfg;
                fit = fit_plain(draw.data, cfg);
                f_y = estimate_marginal(draw.data.y, MarginalMode::KDE);
                break;
            }
            case Method::PlainConstrained: {
                EmConfig cfg;
                if (!assumed_rate) throw invalid_input("constrained method needs an assumed rate");
                cfg.constraint = MismatchRateConstraint::from_rate(*assumed_rate);
                fit = fit_plain(draw.data, cfg);
                f_y = estimate_marginal(draw.data.y, MarginalMode::KDE);
                break;
            }
            case Method::Oracle: {
                OracleSpec ospec{oracle_density(draw.data)};
                fit = fit_oracle(draw.data, ospec);
                f_y = ospec.f_y_given_m1;
                break;
            }
            case Method::Extended:
                fit = fit_extended(draw.data);
                kind = LoglikKind::Extended;
                break;
        }
        const Index p = draw.data.p();
        const Index q = m == Method::Naive ? 0 : draw.data.q();
        out.estimate.resize(p + 1 + q);
        out.estimate.head(p) = fit.theta.beta;
        out.estimate[p] = fit.theta.sigma;
        if (q > 0) out.estimate.tail(q) = fit.gamma.gamma;
        if (!out.estimate.allFinite()) {
            out.estimate.resize(0);
            out.note = "non-finite estimates";
            return out;
        }
        if (compute_cis) {
            if (m == Method::Naive) {
                InferenceResult inf;
                inf.cov = fit.cov;
                inf.se = fit.se;
                Vector packed(p + 1);
                packed.head(p) = fit.theta.beta;
                packed[p] = std::log(fit.theta.sigma);
                wald_intervals(packed, p, level, inf);
                out.ci_lo = std::move(inf.ci_lower);
                out.ci_hi = std::move(inf.ci_upper);
            } else {
                const auto inf = sandwich_covariance(draw.data, fit.theta, fit.gamma, kind,
                                                     f_y ? &*f_y : nullptr, level);
                out.ci_lo = inf.ci_lower;
                out.ci_hi = inf.ci_upper;
            }
        }
    } catch (const std::exception& e) {
        out.estimate.resize(0);
        out.note = e.what();
    }
    return out;
}

} // namespace detail

//! Monte Carlo study: R contaminated draws of the scenario, each fitted by
//! every requested method; summaries of bias / relative bias / SD / CI
//! coverage per parameter. Deterministic for fixed (spec, R) regardless of
//! the thread count: replication r always uses the same derived streams and
//! aggregation happens in replication order after the workers join.
inline std::vector<ReplicationReport> run_replications(
    const ScenarioSpec& spec, int R, const std::vector<Method>& methods, double level = 0.95,
    int parallelism = 1, bool compute_cis = true, std::optional<double> assumed_rate = {}) {
    spec.validate();
    if (R < 1) throw invalid_input("run_replications: need R >= 1");
    if (!(level > 0.0 && level < 1.0)) throw invalid_input("level must be in (0,1)");
    if (methods.empty()) throw invalid_input("run_replications: no methods requested");

    const std::size_t M = methods.size();
    std::vector<detail::MethodPlan> plans;
    plans.reserve(M);
    for (const Method m : methods) plans.push_back(detail::plan_for(m, spec));

    std::vector<Matrix> est(M), lo(M), hi(M);
    std::vector<std::vector<std::string>> notes(M, std::vector<std::string>(R));
    for (std::size_t k = 0; k < M; ++k) {
        est[k] = Matrix::Constant(R, plans[k].dim, std::numeric_limits<double>::quiet_NaN());
        lo[k] = Matrix::Constant(R, plans[k].dim, std::numeric_limits<double>::quiet_NaN());
        hi[k] = Matrix::Constant(R, plans[k].dim, std::numeric_limits<double>::quiet_NaN());
    }
    Vector rates = Vector::Zero(R);
    Matrix block_rates = Matrix::Zero(R, 2);
    const bool has_blocks = spec.kind == ScenarioKind::EleBlocks;

    auto run_rep = [&](int r) {
        const SimDraw draw = generate(spec, static_cast<std::uint64_t>(r));
        rates[r] = draw.data.true_m->cast<double>().mean();
        if (has_blocks) {
            for (int blk : {1, 2}) {
                double matched = 0.0, total = 0.0;
                for (Index i = 0; i < draw.data.n(); ++i) {
                    if ((*draw.data.block_id)[i] != blk) continue;
                    total += 1.0;
                    matched += (*draw.data.true_m)[i] == 0 ? 1.0 : 0.0;
                }
                block_rates(r, blk - 1) = total > 0.0 ? matched / total : 0.0;
            }
        }
        for (std::size_t k = 0; k < M; ++k) {
            const auto res =
                detail::run_one_method(methods[k], draw, level, compute_cis, assumed_rate);
            if (res.estimate.size() == plans[k].dim) {
                est[k].row(r) = res.estimate;
                if (res.ci_lo.size() == plans[k].dim) {
                    lo[k].row(r) = res.ci_lo;
                    hi[k].row(r) = res.ci_hi;
                }
            } else {
                notes[k][r] = res.note.empty() ? "fit failed" : res.note;
            }
        }
    };

    const int T = std::clamp(parallelism, 1, R);
    if (T == 1) {
        for (int r = 0; r < R; ++r) run_rep(r);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t)
            pool.emplace_back([&] {
                for (int r = next.fetch_add(1); r < R; r = next.fetch_add(1)) run_rep(r);
            });
        for (auto& th : pool) th.join();
    }

    std::vector<ReplicationReport> reports;
    reports.reserve(M);
    for (std::size_t k = 0; k < M; ++k) {
        ReplicationReport rep;
        rep.method = methods[k];
        rep.replications = R;
        rep.mean_mismatch_rate = rates.mean();
        if (has_blocks)
            rep.block_match_rates = {block_rates.col(0).mean(), block_rates.col(1).mean()};
        rep.estimates = est[k];
        for (int r = 0; r < R; ++r)
            if (!notes[k][r].empty()) {
                ++rep.failures;
                rep.failure_notes.push_back("rep " + std::to_string(r) + ": " + notes[k][r]);
            }
        rep.excess_failures = rep.failures > 0 && 50 * rep.failures > R;
        for (Index j = 0; j < plans[k].dim; ++j) {
            ParamSummary ps;
            ps.name = plans[k].names[static_cast<std::size_t>(j)];
            ps.true_value = plans[k].truth[j];
            double sum = 0.0, count = 0.0;
            for (int r = 0; r < R; ++r)
                if (std::isfinite(est[k](r, j))) {
                    sum += est[k](r, j);
                    count += 1.0;
                }
            if (count == 0.0) {
                rep.params.push_back(ps);
                continue;
            }
            ps.mean_est = sum / count;
            ps.bias = ps.mean_est - ps.true_value;
            if (std::abs(ps.true_value) > 1e-12) ps.rel_bias = ps.bias / ps.true_value;
            if (count >= 2.0) {
                double ss = 0.0;
                for (int r = 0; r < R; ++r)
                    if (std::isfinite(est[k](r, j))) {
                        const double dd = est[k](r, j) - ps.mean_est;
                        ss += dd * dd;
                    }
                ps.sd = std::sqrt(ss / (count - 1.0));
            }
            if (compute_cis) {
                double covered = 0.0, with_ci = 0.0;
                for (int r = 0; r < R; ++r)
                    if (std::isfinite(lo[k](r, j)) && std::isfinite(hi[k](r, j))) {
                        with_ci += 1.0;
                        if (lo[k](r, j) <= ps.true_value && ps.true_value <= hi[k](r, j))
                            covered += 1.0;
                    }
                if (with_ci > 0.0) ps.coverage = covered / with_ci;
            }
            rep.params.push_back(std::move(ps));
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

} // namespace linkadjust
