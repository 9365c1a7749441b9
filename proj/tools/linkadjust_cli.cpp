// Command-line front end: fit mismatch-adjusted regressions on CSV files,
// generate scenario datasets, and run replication studies with JSON reports.

#include <linkadjust/linkadjust.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

using json = nlohmann::ordered_json;
using namespace linkadjust;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;     // bad flags, files, or data
constexpr int kExitWarning = 3;   // report written, but convergence/inference degraded
constexpr int kExitInternal = 4;

struct RunConfig {
    std::string command;
    std::string input_path;
    std::string response;
    std::vector<std::string> covariates;
    std::vector<std::string> m_covariates;
    std::string block_col;
    std::string method = "plain";
    std::vector<std::string> methods = {"naive", "plain", "oracle", "extended"};
    double assumed_rate = -1.0;  // <0 means unset
    int max_iter = 500;
    double tol = 1e-8;
    std::string scenario;
    Index n = 1000;
    std::uint64_t seed = 0;
    int replications = 200;
    double level = 0.95;
    int threads = 1;
    std::string output_path;
};

std::optional<ScenarioKind> scenario_from_name(const std::string& s) {
    if (s == "motivating") return ScenarioKind::Motivating;
    if (s == "overlap-i") return ScenarioKind::OverlapI;
    if (s == "overlap-ii") return ScenarioKind::OverlapII;
    if (s == "overlap-iii") return ScenarioKind::OverlapIII;
    if (s == "ele-blocks") return ScenarioKind::EleBlocks;
    if (s == "case-study") return ScenarioKind::CaseStudyMechanism;
    return std::nullopt;
}

std::string sibling_csv(const std::string& path, const std::string& suffix) {
    const auto dot = path.find_last_of('.');
    const auto slash = path.find_last_of("/\\");
    const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
    return (has_ext ? path.substr(0, dot) : path) + suffix + ".csv";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << text;
    if (!out) throw io_error("short write to '" + path + "'");
}

std::vector<std::string> param_names(Index p, Index q) {
    std::vector<std::string> names;
    for (Index j = 0; j < p; ++j) names.push_back("beta" + std::to_string(j));
    names.push_back("sigma");
    for (Index j = 0; j < q; ++j) names.push_back("gamma" + std::to_string(j));
    return names;
}

json fit_config_echo(const RunConfig& cfg) {
    json c;
    c["command"] = cfg.command;
    c["input"] = cfg.input_path;
    c["response"] = cfg.response;
    c["covariates"] = cfg.covariates;
    c["m_covariates"] = cfg.m_covariates;
    if (!cfg.block_col.empty()) c["block_col"] = cfg.block_col;
    c["method"] = cfg.method;
    if (cfg.assumed_rate > 0.0) c["assumed_rate"] = cfg.assumed_rate;
    c["max_iter"] = cfg.max_iter;
    c["tol"] = cfg.tol;
    c["level"] = cfg.level;
    c["output"] = cfg.output_path;
    return c;
}

int cmd_fit(const RunConfig& cfg) {
    const auto method = method_from_name(cfg.method);
    if (!method) throw invalid_input("unknown method '" + cfg.method + "'");
    if (*method == Method::PlainConstrained && !(cfg.assumed_rate > 0.0))
        throw invalid_input("method plain-constrained requires --assumed-rate");
    if (*method != Method::PlainConstrained && cfg.assumed_rate > 0.0)
        throw invalid_input("--assumed-rate is only meaningful with plain-constrained");

    const auto table = read_csv(cfg.input_path);
    ColumnRoles roles;
    roles.response = cfg.response;
    roles.covariates = cfg.covariates;
    roles.m_covariates = cfg.m_covariates;
    if (!cfg.block_col.empty()) roles.block = cfg.block_col;
    const LinkedDataset data = build_dataset(table, roles);

    EmConfig em;
    em.max_iter = cfg.max_iter;
    em.tol = cfg.tol;

    const auto t0 = std::chrono::steady_clock::now();
    FitResult fit;
    std::optional<MarginalDensity> f_y;
    LoglikKind kind = LoglikKind::Plain;
    switch (*method) {
        case Method::Naive:
            fit = fit_naive(data);
            break;
        case Method::Plain:
            fit = fit_plain(data, em);
            f_y = estimate_marginal(data.y, MarginalMode::KDE);
            break;
        case Method::PlainConstrained:
            em.constraint = MismatchRateConstraint::from_rate(cfg.assumed_rate);
            fit = fit_plain(data, em);
            f_y = estimate_marginal(data.y, MarginalMode::KDE);
            break;
        case Method::Oracle: {
            if (!data.true_m)
                throw invalid_input("method oracle requires a true_m column in the input");
            OracleSpec ospec{detail::oracle_density(data)};
            fit = fit_oracle(data, ospec, em);
            f_y = ospec.f_y_given_m1;
            break;
        }
        case Method::Extended:
            fit = fit_extended(data, em);
            kind = LoglikKind::Extended;
            break;
    }

    const Index p = data.p();
    const Index q = *method == Method::Naive ? 0 : data.q();
    bool inference_ok = true;
    InferenceResult inf;
    std::string inference_note;
    try {
        if (*method == Method::Naive) {
            inf.cov = fit.cov;
            inf.se = fit.se;
            Vector packed(p + 1);
            packed.head(p) = fit.theta.beta;
            packed[p] = std::log(fit.theta.sigma);
            wald_intervals(packed, p, cfg.level, inf);
        } else {
            inf = sandwich_covariance(data, fit.theta, fit.gamma, kind, f_y ? &*f_y : nullptr,
                                      cfg.level);
        }
    } catch (const error& e) {
        inference_ok = false;
        inference_note = e.what();
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    const auto names = param_names(p, q);
    Vector est(p + 1 + q);
    est.head(p) = fit.theta.beta;
    est[p] = fit.theta.sigma;
    if (q > 0) est.tail(q) = fit.gamma.gamma;

    json report;
    report["config"] = fit_config_echo(cfg);
    report["method"] = cfg.method;
    json ests = json::object();
    for (Index k = 0; k < est.size(); ++k) {
        json e;
        e["est"] = est[k];
        if (inference_ok) {
            // sigma is profiled on the log scale; report its delta-method SE
            e["se"] = k == p ? est[p] * inf.se[k] : inf.se[k];
            e["ci_lo"] = inf.ci_lower[k];
            e["ci_hi"] = inf.ci_upper[k];
        } else {
            e["se"] = nullptr;
            e["ci_lo"] = nullptr;
            e["ci_hi"] = nullptr;
        }
        ests[names[static_cast<std::size_t>(k)]] = e;
    }
    report["estimates"] = ests;
    report["loglik_trace"] = fit.loglik_trace;
    report["converged"] = fit.converged;
    report["iterations"] = fit.iterations;
    std::vector<std::string> diags = fit.diagnostics;
    if (inference_ok)
        diags.insert(diags.end(), inf.diagnostics.begin(), inf.diagnostics.end());
    else
        diags.push_back("inference unavailable: " + inference_note);
    report["diagnostics"] = diags;
    report["timing_ms"] = ms;

    const std::string posterior_path = sibling_csv(cfg.output_path, "_posterior");
    {
        Matrix out(data.n(), 2);
        for (Index i = 0; i < data.n(); ++i) {
            out(i, 0) = static_cast<double>(i);
            out(i, 1) = fit.posterior_correct[i];
        }
        write_csv(posterior_path, {"row", "posterior_correct"}, out);
    }
    report["posterior_correct_path"] = posterior_path;

    write_text(cfg.output_path, report.dump(2) + "\n");
    return fit.converged && inference_ok ? kExitOk : kExitWarning;
}

int cmd_simulate(const RunConfig& cfg) {
    const auto kind = scenario_from_name(cfg.scenario);
    if (!kind) throw invalid_input("unknown scenario '" + cfg.scenario + "'");
    const auto spec = make_scenario(*kind, cfg.n, cfg.seed);
    const SimDraw draw = generate(spec, 0);

    const Index n = draw.data.n();
    const Index p = draw.data.p();
    const Index q = draw.data.q();
    std::vector<std::string> header = {"y"};
    for (Index j = 1; j < p; ++j) header.push_back("x" + std::to_string(j));
    for (Index j = 1; j < q; ++j) header.push_back("z" + std::to_string(j));
    if (draw.data.block_id) header.push_back("block");
    header.push_back("true_m");

    Matrix out(n, static_cast<Index>(header.size()));
    Index c = 0;
    out.col(c++) = draw.data.y;
    for (Index j = 1; j < p; ++j) out.col(c++) = draw.data.X.col(j);
    for (Index j = 1; j < q; ++j) out.col(c++) = draw.data.Z.col(j);
    if (draw.data.block_id) out.col(c++) = draw.data.block_id->cast<double>();
    out.col(c++) = draw.data.true_m->cast<double>();
    write_csv(cfg.output_path, header, out);
    return kExitOk;
}

int cmd_replicate(const RunConfig& cfg) {
    const auto kind = scenario_from_name(cfg.scenario);
    if (!kind) throw invalid_input("unknown scenario '" + cfg.scenario + "'");
    std::vector<Method> methods;
    for (const auto& name : cfg.methods) {
        const auto m = method_from_name(name);
        if (!m) throw invalid_input("unknown method '" + name + "'");
        methods.push_back(*m);
    }
    const bool constrained =
        std::find(methods.begin(), methods.end(), Method::PlainConstrained) != methods.end();
    if (constrained && !(cfg.assumed_rate > 0.0))
        throw invalid_input("method plain-constrained requires --assumed-rate");

    const auto spec = make_scenario(*kind, cfg.n, cfg.seed);
    const auto reports =
        run_replications(spec, cfg.replications, methods, cfg.level, cfg.threads, true,
                         cfg.assumed_rate > 0.0 ? std::optional<double>(cfg.assumed_rate)
                                                : std::nullopt);

    // Config echo deliberately omits the thread count: it is an execution
    // detail, and the report must be byte-identical across thread counts.
    json c;
    c["command"] = cfg.command;
    c["scenario"] = cfg.scenario;
    c["n"] = cfg.n;
    c["seed"] = cfg.seed;
    c["replications"] = cfg.replications;
    c["methods"] = cfg.methods;
    if (cfg.assumed_rate > 0.0) c["assumed_rate"] = cfg.assumed_rate;
    c["level"] = cfg.level;
    c["output"] = cfg.output_path;

    json summary;
    summary["config"] = c;
    json rows = json::array();
    bool degraded = false;
    for (const auto& rep : reports) {
        json r;
        r["method"] = method_name(rep.method);
        r["replications"] = rep.replications;
        r["failures"] = rep.failures;
        r["excess_failures"] = rep.excess_failures;
        degraded = degraded || rep.excess_failures;
        r["mean_mismatch_rate"] = rep.mean_mismatch_rate;
        if (rep.block_match_rates)
            r["block_match_rates"] = {(*rep.block_match_rates)[0], (*rep.block_match_rates)[1]};
        json params = json::array();
        for (const auto& ps : rep.params) {
            json pj;
            pj["name"] = ps.name;
            pj["true"] = ps.true_value;
            pj["mean_est"] = ps.mean_est;
            pj["bias"] = ps.bias;
            pj["rel_bias"] = ps.rel_bias ? json(*ps.rel_bias) : json(nullptr);
            pj["sd"] = ps.sd ? json(*ps.sd) : json(nullptr);
            pj["coverage"] = ps.coverage ? json(*ps.coverage) : json(nullptr);
            params.push_back(pj);
        }
        r["params"] = params;
        r["failure_notes"] = rep.failure_notes;
        rows.push_back(r);
    }
    summary["results"] = rows;

    const std::string est_path = sibling_csv(cfg.output_path, "_estimates");
    {
        std::string text = "method,rep,param,estimate\n";
        for (std::size_t k = 0; k < reports.size(); ++k) {
            const auto plan = detail::plan_for(methods[k], spec);
            const auto& est = reports[k].estimates;
            for (Index r = 0; r < est.rows(); ++r)
                for (Index j = 0; j < est.cols(); ++j) {
                    if (!std::isfinite(est(r, j))) continue;  // failed replication
                    text += std::string(method_name(methods[k])) + "," + std::to_string(r) +
                            "," + plan.names[static_cast<std::size_t>(j)] + "," +
                            format_numeric(est(r, j)) + "\n";
                }
        }
        write_text(est_path, text);
    }
    summary["estimates_csv"] = est_path;

    write_text(cfg.output_path, summary.dump(2) + "\n");
    return degraded ? kExitWarning : kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    RunConfig cfg;
    CLI::App app{"mismatch-adjusted regression for linked files"};
    app.set_config("--config");
    app.add_option("--command", cfg.command, "fit | simulate | replicate")->required();
    app.add_option("--input", cfg.input_path, "input CSV (fit)");
    app.add_option("--response", cfg.response, "response column name (fit)");
    app.add_option("--covariates", cfg.covariates, "outcome covariate columns (fit)")
        ->delimiter(',');
    app.add_option("--m-covariates", cfg.m_covariates, "mismatch-model covariate columns (fit)")
        ->delimiter(',');
    app.add_option("--block-col", cfg.block_col, "block id column (fit)");
    app.add_option("--method", cfg.method,
                   "fit: naive | plain | plain-constrained | oracle | extended");
    app.add_option("--methods", cfg.methods, "replicate: comma-separated method list")
        ->delimiter(',');
    app.add_option("--assumed-rate", cfg.assumed_rate,
                   "mismatch-rate bound for plain-constrained");
    app.add_option("--max-iter", cfg.max_iter, "EM iteration cap");
    app.add_option("--tol", cfg.tol, "EM relative log-likelihood tolerance");
    app.add_option("--scenario", cfg.scenario,
                   "motivating | overlap-i | overlap-ii | overlap-iii | ele-blocks | case-study");
    app.add_option("--n", cfg.n, "scenario sample size");
    app.add_option("--seed", cfg.seed, "scenario seed");
    app.add_option("--replications", cfg.replications, "replication count (replicate)");
    app.add_option("--level", cfg.level, "confidence level");
    app.add_option("--threads", cfg.threads,
                   "worker threads for replicate (env LINKADJUST_THREADS)")
        ->envname("LINKADJUST_THREADS");
    app.add_option("--output", cfg.output_path, "output file path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (!(cfg.level > 0.0 && cfg.level < 1.0))
            throw invalid_input("--level must be in (0,1)");
        if (cfg.threads < 1) throw invalid_input("--threads must be >= 1");
        if (cfg.command == "fit") {
            if (cfg.input_path.empty() || cfg.response.empty())
                throw invalid_input("fit requires --input and --response");
            return cmd_fit(cfg);
        }
        if (cfg.command == "simulate") {
            if (cfg.scenario.empty()) throw invalid_input("simulate requires --scenario");
            return cmd_simulate(cfg);
        }
        if (cfg.command == "replicate") {
            if (cfg.scenario.empty()) throw invalid_input("replicate requires --scenario");
            if (cfg.replications < 1) throw invalid_input("--replications must be >= 1");
            return cmd_replicate(cfg);
        }
        throw invalid_input("unknown command '" + cfg.command + "'");
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}
