// Command-line front end: CSV in, CSV out, reproducible given --seed.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "metabvs/metabvs.hpp"

namespace fs = std::filesystem;
using namespace metabvs;

namespace {

constexpr int kExitBadInput = 2;    // malformed CSV or invalid flags
constexpr int kExitDimension = 3;   // dimension mismatch / size limits
constexpr int kExitNumerical = 4;   // numerical failure inside the fit

struct CommonOpts {
    std::string method = "em-gibbs";
    double g_theta = 1.0;
    std::string variance = "ig:0.01,0.01";
    int sweeps = 2000;
    int burn_in = -1;
    std::uint64_t seed = 0;
    double threshold = 0.95;
    std::string out_dir = ".";
    bool no_standardize = false;
    double g_omega = 0.0;  // <= 0: calibrate
    double mh_step = 0.5;
    int em_iters = 30;
    double em_tol = 1e-4;
    std::string em_init = "zero";
    int enum_cap = 20;
    double bb_alpha = 1.0, bb_beta = 1.0;
};

void add_common(CLI::App* sub, CommonOpts& o, bool seed_required) {
    sub->add_option("--method", o.method, "Fitting method")
        ->check(CLI::IsMember({"em-exact", "em-gibbs", "two-step", "mcmc", "beta-binomial"}))
        ->capture_default_str();
    sub->add_option("--g-theta", o.g_theta, "Zellner prior dispersion g")->capture_default_str();
    sub->add_option("--variance", o.variance,
                    "Error variance: known:<phi> or ig:<a0>,<b0>")
        ->capture_default_str();
    sub->add_option("--sweeps", o.sweeps, "Gibbs sweeps per chain")->capture_default_str();
    sub->add_option("--burn-in", o.burn_in, "Burn-in sweeps (-1: 10% of sweeps)")
        ->capture_default_str();
    auto* seed = sub->add_option("--seed", o.seed, "RNG seed");
    if (seed_required)
        seed->required();
    else
        seed->capture_default_str();
    sub->add_option("--threshold", o.threshold, "PIP selection threshold")->capture_default_str();
    sub->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
    sub->add_flag("--no-standardize", o.no_standardize, "Keep X columns on their original scale");
    sub->add_option("--g-omega", o.g_omega, "Hyperprior scale (<=0: calibrate from Z)")
        ->capture_default_str();
    sub->add_option("--mh-step", o.mh_step, "Metropolis step for --method mcmc")
        ->capture_default_str();
    sub->add_option("--em-iters", o.em_iters, "Maximum EM iterations")->capture_default_str();
    sub->add_option("--em-tol", o.em_tol, "EM stopping tolerance on omega")->capture_default_str();
    sub->add_option("--em-init", o.em_init,
                    "EM start: zero (prior probabilities 1/2) or sparse (1/(p+1))")
        ->check(CLI::IsMember({"zero", "sparse"}))
        ->capture_default_str();
    sub->add_option("--enum-cap", o.enum_cap, "Largest p for exact enumeration")
        ->capture_default_str();
    sub->add_option("--bb-alpha", o.bb_alpha, "Beta-Binomial alpha")->capture_default_str();
    sub->add_option("--bb-beta", o.bb_beta, "Beta-Binomial beta")->capture_default_str();
    sub->add_option("--config", "Options file with key = value lines and '#' comments; "
                                "flags given on the command line take precedence");
}

/// Expands `--config <file>` into the equivalent flags, inserted right after
/// the subcommand so that explicit flags (parsed last) override the file.
/// Unknown keys become unknown flags and fail parsing.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            break;
        }
    }
    if (path.empty()) return args;

    std::ifstream in(path);
    if (!in) throw MalformedCsv("config: cannot open '" + path + "'");
    std::vector<std::string> injected;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DomainError("config: line " + std::to_string(lineno) +
                              " is not of the form key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw DomainError("config: line " + std::to_string(lineno) + " has an empty key or value");
        if (key == "no-standardize") {
            if (value == "true" || value == "1") injected.push_back("--no-standardize");
            continue;
        }
        injected.push_back("--" + key);
        injected.push_back(value);
    }
    std::vector<std::string> out;
    out.push_back(args[0]);
    if (args.size() > 1) out.push_back(args[1]);  // the subcommand
    for (auto& s : injected) out.push_back(std::move(s));
    for (std::size_t i = 2; i < args.size(); ++i) out.push_back(args[i]);
    return out;
}

ZellnerConfig parse_zellner(const CommonOpts& o) {
    const std::string& v = o.variance;
    if (v.rfind("known:", 0) == 0) {
        const double phi = csv::parse_double(v.substr(6));
        return ZellnerConfig::known(o.g_theta, phi);
    }
    if (v.rfind("ig:", 0) == 0) {
        const std::string rest = v.substr(3);
        const auto comma = rest.find(',');
        if (comma == std::string::npos)
            throw DomainError("--variance ig form is ig:<a0>,<b0>");
        const double a0 = csv::parse_double(rest.substr(0, comma));
        const double b0 = csv::parse_double(rest.substr(comma + 1));
        return ZellnerConfig::inverse_gamma(o.g_theta, a0, b0);
    }
    throw DomainError("--variance must be known:<phi> or ig:<a0>,<b0>");
}

FitOptions::Method parse_method(const std::string& name) {
    if (name == "em-exact") return FitOptions::Method::EmExact;
    if (name == "em-gibbs") return FitOptions::Method::EmGibbs;
    if (name == "two-step") return FitOptions::Method::TwoStep;
    if (name == "mcmc") return FitOptions::Method::Mcmc;
    return FitOptions::Method::BetaBinomial;
}

FitOptions build_fit_options(const CommonOpts& o) {
    FitOptions opt;
    opt.method = parse_method(o.method);
    opt.zellner = parse_zellner(o);
    opt.gibbs.n_sweeps = o.sweeps;
    opt.gibbs.burn_in = o.burn_in;
    opt.gibbs.seed = o.seed;
    opt.g_omega = o.g_omega;
    opt.mh_step = o.mh_step;
    opt.bb_alpha = o.bb_alpha;
    opt.bb_beta = o.bb_beta;
    opt.em_max_iters = o.em_iters;
    opt.em_tol = o.em_tol;
    opt.em_sparse_init = o.em_init == "sparse";
    opt.enum_max_p = o.enum_cap;
    return opt;
}

struct LoadedData {
    Dataset data;
    std::vector<std::string> xnames;
};

LoadedData load_data(const std::string& path) {
    const csv::Table t = csv::read_file(path);
    if (t.ncols() < 2 || t.header[0] != "y")
        throw MalformedCsv("data csv: first column must be 'y' followed by covariate columns");
    LoadedData out;
    const int n = t.nrows(), p = t.ncols() - 1;
    if (n < 1) throw MalformedCsv("data csv: no data rows");
    for (int c = 1; c < t.ncols(); ++c) {
        if (!csv::valid_name(t.header[c]))
            throw MalformedCsv("data csv: invalid covariate name '" + t.header[c] + "'");
        out.xnames.push_back(t.header[c]);
    }
    VectorXd y(n);
    MatrixXd X(n, p);
    for (int r = 0; r < n; ++r) {
        y[r] = csv::parse_double(t.rows[r][0]);
        for (int c = 0; c < p; ++c) X(r, c) = csv::parse_double(t.rows[r][c + 1]);
    }
    out.data = Dataset(std::move(y), std::move(X), false);
    return out;
}

struct LoadedMeta {
    MatrixXd columns;  // p x q, ordered to match the x columns
    std::vector<std::string> znames;
};

LoadedMeta load_meta(const std::string& path, const std::vector<std::string>& xnames) {
    const csv::Table t = csv::read_file(path);
    if (t.ncols() < 2 || t.header[0] != "covariate")
        throw MalformedCsv("meta csv: first column must be 'covariate' followed by z columns");
    const int p = static_cast<int>(xnames.size());
    if (t.nrows() != p)
        throw DimensionMismatch("meta csv has " + std::to_string(t.nrows()) +
                                " rows but the data has " + std::to_string(p) + " covariates");
    LoadedMeta out;
    for (int c = 1; c < t.ncols(); ++c) {
        if (!csv::valid_name(t.header[c]))
            throw MalformedCsv("meta csv: invalid column name '" + t.header[c] + "'");
        out.znames.push_back(t.header[c]);
    }
    std::map<std::string, int> row_of;
    for (int r = 0; r < p; ++r) {
        if (!row_of.emplace(t.rows[r][0], r).second)
            throw DimensionMismatch("meta csv: duplicate covariate '" + t.rows[r][0] + "'");
    }
    const int q = t.ncols() - 1;
    out.columns.resize(p, q);
    for (int j = 0; j < p; ++j) {
        auto it = row_of.find(xnames[j]);
        if (it == row_of.end())
            throw DimensionMismatch("meta csv: no row for covariate '" + xnames[j] + "'");
        for (int c = 0; c < q; ++c)
            out.columns(j, c) = csv::parse_double(t.rows[it->second][c + 1]);
    }
    return out;
}

void write_pips(const std::string& dir, const std::vector<std::string>& names,
                const VectorXd& pip, const VectorXd& bma) {
    csv::Table t;
    t.header = {"name", "pip", "bma_coef"};
    for (std::size_t j = 0; j < names.size(); ++j)
        t.rows.push_back({names[j], csv::format_double(pip[j]), csv::format_double(bma[j])});
    csv::write_file(dir + "/pips.csv", t);

    csv::Table b;
    b.header = {"name", "bma_coef"};
    for (std::size_t j = 0; j < names.size(); ++j)
        b.rows.push_back({names[j], csv::format_double(bma[j])});
    csv::write_file(dir + "/bma.csv", b);
}

void write_omega(const std::string& dir, const CommonOpts& o, const FitOutput& fit,
                 const std::vector<std::string>& znames) {
    csv::Table t;
    t.header = {"term", "estimate"};
    if (o.method == "beta-binomial") {
        t.rows.push_back({"alpha", csv::format_double(o.bb_alpha)});
        t.rows.push_back({"beta", csv::format_double(o.bb_beta)});
    } else if (o.method == "two-step") {
        for (int b = 0; b < fit.omega.size(); ++b)
            t.rows.push_back({"block_" + std::to_string(b), csv::format_double(fit.omega[b])});
    } else {
        t.rows.push_back({"intercept", csv::format_double(fit.omega[0])});
        for (std::size_t k = 0; k < znames.size(); ++k)
            t.rows.push_back({znames[k], csv::format_double(fit.omega[k + 1])});
        t.rows.push_back({"g_omega", csv::format_double(fit.g_omega)});
    }
    csv::write_file(dir + "/omega.csv", t);
}

int run_fit(const std::string& data_path, const std::string& meta_path, const CommonOpts& o) {
    LoadedData loaded = load_data(data_path);
    const LoadedMeta meta = load_meta(meta_path, loaded.xnames);
    VectorXd scales = VectorXd::Ones(loaded.data.p());
    if (!o.no_standardize) scales = standardize_columns(loaded.data);
    const MetaCovariates Z = MetaCovariates::with_intercept(meta.columns);

    const FitOptions opt = build_fit_options(o);
    const FitOutput fit = fit_model(loaded.data, Z, opt);
    const VectorXd bma = fit.bma.array() / scales.array();  // original data units

    fs::create_directories(o.out_dir);
    write_pips(o.out_dir, loaded.xnames, fit.pip, bma);
    write_omega(o.out_dir, o, fit, meta.znames);

    int selected = 0;
    for (int j = 0; j < fit.pip.size(); ++j) selected += fit.pip[j] >= o.threshold ? 1 : 0;
    std::cout << "method: " << o.method << "\n"
              << "n: " << loaded.data.n() << "  p: " << loaded.data.p()
              << "  q (incl. intercept): " << Z.q() << "\n";
    if (std::isfinite(fit.g_omega)) std::cout << "g_omega: " << fit.g_omega << "\n";
    if (fit.omega.size() > 0) {
        std::cout << "omega:";
        for (int k = 0; k < fit.omega.size(); ++k) std::cout << " " << fit.omega[k];
        std::cout << "\n";
    }
    std::cout << "selected at PIP >= " << o.threshold << ": " << selected << "\n"
              << "wrote " << o.out_dir << "/pips.csv, omega.csv, bma.csv\n";
    return 0;
}

int run_enumerate(const std::string& data_path, const std::string& meta_path, const CommonOpts& o,
                  double floor, const std::string& omega_str) {
    LoadedData loaded = load_data(data_path);
    const LoadedMeta meta = load_meta(meta_path, loaded.xnames);
    const int p = loaded.data.p();
    if (p > 20) throw TooLarge("enumerate: p = " + std::to_string(p) + " exceeds 20");
    VectorXd scales = VectorXd::Ones(p);
    if (!o.no_standardize) scales = standardize_columns(loaded.data);
    const MetaCovariates Z = MetaCovariates::with_intercept(meta.columns);
    const ZellnerConfig zc = parse_zellner(o);

    ModelPrior prior = ModelPrior::fixed(VectorXd::Constant(p, 0.5));
    if (o.method == "beta-binomial") {
        prior = ModelPrior::beta_binomial(o.bb_alpha, o.bb_beta);
    } else if (!omega_str.empty()) {
        std::vector<double> vals;
        std::stringstream ss(omega_str);
        std::string item;
        while (std::getline(ss, item, ',')) vals.push_back(csv::parse_double(item));
        if (static_cast<int>(vals.size()) != Z.q())
            throw DimensionMismatch("--omega needs " + std::to_string(Z.q()) +
                                    " entries (intercept first)");
        prior = ModelPrior::logistic(Z, Eigen::Map<VectorXd>(vals.data(), vals.size()));
    } else {
        const FitOptions opt = build_fit_options(o);
        FitOptions exact = opt;
        exact.method = FitOptions::Method::EmExact;
        const FitOutput fit = fit_model(loaded.data, Z, exact);
        prior = ModelPrior::logistic(Z, fit.omega);
        std::cout << "fitted omega:";
        for (int k = 0; k < fit.omega.size(); ++k) std::cout << " " << fit.omega[k];
        std::cout << "\n";
    }

    const ModelEnumeration enumeration(loaded.data, zc, 20);
    const ExactPosterior post = enumeration.posterior(prior);

    std::vector<std::uint64_t> order(post.probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::uint64_t a, std::uint64_t b) {
        return post.probs[a] > post.probs[b];
    });

    fs::create_directories(o.out_dir);
    csv::Table models;
    models.header = {"model_bits", "log_marginal", "prior", "posterior"};
    for (std::uint64_t mask : order) {
        if (post.probs[mask] < floor) continue;
        const ModelIndicator m = ModelIndicator::from_mask(mask, p);
        const double logm = enumeration.log_marginal(mask);
        const double logprior = log_model_prior(prior, m, p);
        models.rows.push_back({m.bit_string(p), csv::format_double(logm),
                               csv::format_double(std::exp(logprior)),
                               csv::format_double(post.probs[mask])});
    }
    csv::write_file(o.out_dir + "/models.csv", models);

    csv::Table pips;
    pips.header = {"name", "pip"};
    for (int j = 0; j < p; ++j)
        pips.rows.push_back({loaded.xnames[j], csv::format_double(post.pip[j])});
    csv::write_file(o.out_dir + "/pips.csv", pips);

    std::cout << "log_evidence: " << csv::format_double(post.log_evidence) << "\n"
              << "models written: " << models.nrows() << "\n"
              << "wrote " << o.out_dir << "/models.csv, pips.csv\n";
    return 0;
}

int run_loocv(const std::string& data_path, const std::string& meta_path, const CommonOpts& o) {
    LoadedData loaded = load_data(data_path);
    const LoadedMeta meta = load_meta(meta_path, loaded.xnames);
    if (loaded.data.n() < 3)
        throw DimensionMismatch("loocv: need n >= 3, got n = " + std::to_string(loaded.data.n()));
    const MetaCovariates Z = MetaCovariates::with_intercept(meta.columns);
    const FitOptions opt = build_fit_options(o);

    VectorXd pred;
    const double r2 = loocv_r2(loaded.data, Z, opt, !o.no_standardize, &pred);

    fs::create_directories(o.out_dir);
    csv::Table t;
    t.header = {"row", "observed", "predicted"};
    for (int i = 0; i < pred.size(); ++i)
        t.rows.push_back({std::to_string(i + 1), csv::format_double(loaded.data.y[i]),
                          csv::format_double(pred[i])});
    csv::write_file(o.out_dir + "/predictions.csv", t);
    std::cout << "loocv_r2: " << csv::format_double(r2) << "\n"
              << "wrote " << o.out_dir << "/predictions.csv\n";
    return 0;
}

struct SimulateOpts {
    int n = 100, p = 60, q = 2, reps = 20;
    double omega0 = std::log(0.05 / 0.95), omega1 = 2.0, omega2 = 0.0;
    double x_corr = 0.5, meta_corr = 0.5;
    double theta_lo = 1.0 / 3.0, theta_hi = 2.0 / 3.0;
    std::string methods = "ebayes_meta,beta_binomial";
    std::string label;
};

int run_simulate(const CommonOpts& o, const SimulateOpts& s) {
    if (s.n < 1 || s.p < 1 || s.reps < 1 || s.q < 1) {
        std::cerr << "simulate: --n, --p, --q and --reps must be positive\n";
        return kExitBadInput;
    }
    if (!(s.theta_lo < s.theta_hi) || s.x_corr < 0.0 || s.x_corr >= 1.0 || s.meta_corr < 0.0 ||
        s.meta_corr >= 1.0) {
        std::cerr << "simulate: invalid theta range or correlations\n";
        return kExitBadInput;
    }
    ScenarioConfig cfg;
    cfg.n = s.n;
    cfg.p = s.p;
    cfg.q = s.q;
    cfg.omega_true = VectorXd::Zero(s.q + 1);
    cfg.omega_true[0] = s.omega0;
    if (s.q >= 1) cfg.omega_true[1] = s.omega1;
    if (s.q >= 2) cfg.omega_true[2] = s.omega2;
    cfg.x_corr = s.x_corr;
    cfg.meta_corr = s.meta_corr;
    cfg.theta_lo = s.theta_lo;
    cfg.theta_hi = s.theta_hi;
    cfg.n_reps = s.reps;
    cfg.seed = o.seed;
    cfg.pip_threshold = o.threshold;
    cfg.zellner = parse_zellner(o);
    cfg.n_sweeps = o.sweeps;
    cfg.em_max_iters = o.em_iters;
    {
        std::ostringstream lbl;
        lbl << "omega1_" << s.omega1 << "_n" << s.n << "_p" << s.p;
        cfg.label = s.label.empty() ? lbl.str() : s.label;
    }

    std::vector<ScenarioMethod> methods;
    std::stringstream ss(s.methods);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "ebayes_meta")
            methods.push_back(ScenarioMethod::EbayesMeta);
        else if (item == "ebayes_intercept")
            methods.push_back(ScenarioMethod::EbayesIntercept);
        else if (item == "beta_binomial")
            methods.push_back(ScenarioMethod::BetaBinomial);
        else {
            std::cerr << "simulate: unknown method '" << item << "'\n";
            return kExitBadInput;
        }
    }
    if (methods.empty()) {
        std::cerr << "simulate: no methods requested\n";
        return kExitBadInput;
    }

    const std::vector<MetricRow> rows = run_scenario(cfg, methods);

    fs::create_directories(o.out_dir);
    csv::Table t;
    t.header = {"scenario", "method", "rep", "mse", "power", "fdr"};
    for (const MetricRow& r : rows)
        t.rows.push_back({r.scenario, r.method, r.rep < 0 ? "mean" : std::to_string(r.rep),
                          csv::format_double(r.mse), csv::format_double(r.power),
                          csv::format_double(r.fdr)});
    csv::write_file(o.out_dir + "/metrics.csv", t);

    for (const MetricRow& r : rows)
        if (r.rep < 0)
            std::cout << r.method << ": mse " << r.mse << "  power " << r.power << "  fdr "
                      << r.fdr << "\n";
    std::cout << "wrote " << o.out_dir << "/metrics.csv\n";
    return 0;
}

int classify_error(const std::exception& e) {
    if (dynamic_cast<const MalformedCsv*>(&e)) return kExitBadInput;
    if (dynamic_cast<const DimensionMismatch*>(&e)) return kExitDimension;
    if (dynamic_cast<const TooLarge*>(&e)) return kExitDimension;
    if (dynamic_cast<const DegenerateVariance*>(&e)) return kExitDimension;
    return kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian variable selection with meta-covariate model priors"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    CommonOpts fit_o, enum_o, loocv_o, sim_o;
    std::string fit_data, fit_meta, enum_data, enum_meta, loocv_data, loocv_meta;
    double enum_floor = 1e-6;
    std::string enum_omega;
    SimulateOpts sim;

    CLI::App* fit = app.add_subcommand("fit", "Fit PIPs, omega and BMA coefficients from CSVs");
    fit->add_option("data", fit_data, "CSV with columns y,x1..xp")->required();
    fit->add_option("meta", fit_meta, "CSV with columns covariate,z1..zq")->required();
    add_common(fit, fit_o, /*seed_required=*/true);

    CLI::App* sim_cmd = app.add_subcommand("simulate", "Run the simulation study at desk scale");
    sim_cmd->add_option("--n", sim.n, "Observations")->capture_default_str();
    sim_cmd->add_option("--p", sim.p, "Covariates")->capture_default_str();
    sim_cmd->add_option("--q", sim.q, "Meta-covariates (excluding intercept)")
        ->capture_default_str();
    sim_cmd->add_option("--reps", sim.reps, "Replicates")->capture_default_str();
    sim_cmd->add_option("--omega0", sim.omega0, "True intercept log-odds")->capture_default_str();
    sim_cmd->add_option("--omega1", sim.omega1, "True effect of the first meta-covariate")
        ->capture_default_str();
    sim_cmd->add_option("--omega2", sim.omega2, "True effect of the second meta-covariate")
        ->capture_default_str();
    sim_cmd->add_option("--x-corr", sim.x_corr, "Pairwise covariate correlation")
        ->capture_default_str();
    sim_cmd->add_option("--meta-corr", sim.meta_corr, "Pairwise meta-covariate correlation")
        ->capture_default_str();
    sim_cmd->add_option("--theta-lo", sim.theta_lo, "Smallest active coefficient")
        ->capture_default_str();
    sim_cmd->add_option("--theta-hi", sim.theta_hi, "Largest active coefficient")
        ->capture_default_str();
    sim_cmd->add_option("--run-methods", sim.methods,
                        "Comma list of ebayes_meta,ebayes_intercept,beta_binomial")
        ->capture_default_str();
    sim_cmd->add_option("--label", sim.label, "Scenario label for metrics.csv");
    add_common(sim_cmd, sim_o, /*seed_required=*/true);

    CLI::App* enu = app.add_subcommand("enumerate", "Exact posterior over all models (p <= 20)");
    enu->add_option("data", enum_data, "CSV with columns y,x1..xp")->required();
    enu->add_option("meta", enum_meta, "CSV with columns covariate,z1..zq")->required();
    enu->add_option("--floor", enum_floor, "Smallest posterior probability written")
        ->capture_default_str();
    enu->add_option("--omega", enum_omega,
                    "Fix omega (comma separated, intercept first) instead of fitting");
    add_common(enu, enum_o, /*seed_required=*/false);

    CLI::App* loo = app.add_subcommand("loocv", "Leave-one-out R^2 of the BMA predictions");
    loo->add_option("data", loocv_data, "CSV with columns y,x1..xp")->required();
    loo->add_option("meta", loocv_meta, "CSV with columns covariate,z1..zq")->required();
    add_common(loo, loocv_o, /*seed_required=*/false);

    std::vector<std::string> args;
    try {
        args = expand_config(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    }
    try {
        // CLI11 parses the reversed argument vector
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        reversed.pop_back();  // drop the program name
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitBadInput;
    }

    try {
        if (fit->parsed()) return run_fit(fit_data, fit_meta, fit_o);
        if (sim_cmd->parsed()) return run_simulate(sim_o, sim);
        if (enu->parsed()) return run_enumerate(enum_data, enum_meta, enum_o, enum_floor, enum_omega);
        if (loo->parsed()) return run_loocv(loocv_data, loocv_meta, loocv_o);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return classify_error(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return 0;
}
