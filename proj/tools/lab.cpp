#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wlab/wlab.hpp"

using namespace wlab;
using io::json;

namespace {

struct Common {
    std::string out;
    std::string format = "json";
    std::uint64_t seed = 1;
    unsigned threads = 0;
};

// resolved inputs of one run; hashed into the header
struct Run {
    json cfg = json::object();
    std::uint64_t seed = 0;
};

void emit(const Common& c, const Run& run, json payload, const std::string& csv_body = {}) {
    io::Header h;
    h.seed = run.seed;
    h.config_hash = io::config_hash(run.cfg);
    std::string text;
    if (c.format == "csv") {
        if (csv_body.empty()) throw InvalidInput("this command has no CSV form; use --format json");
        text = h.csv_line() + csv_body;
    } else {
        json doc;
        doc["header"] = h.to_json();
        doc["config"] = run.cfg;
        doc["result"] = std::move(payload);
        text = doc.dump(2) + "\n";
    }
    if (c.out.empty()) std::cout << text;
    else io::atomic_write(c.out, text);
}

std::string csv_num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

json file_cfg(const std::string& path) { return io::read_json_file(path); }

InitialLaw initial_law(const std::string& init_path, double m0, double p0, int dim) {
    if (!init_path.empty()) return InitialLaw(io::read_measure(init_path));
    return InitialLaw(Vec::Constant(dim, m0), p0 * Mat::Identity(dim, dim));
}

// y path on the time grid from a simulated truth
std::vector<Vec> observations(const TruthPath& t) { return t.y; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lab: Wasserstein filtering and control laboratory"};
    app.require_subcommand(1);
    app.fallthrough();
    Common c;
    app.add_option("--out", c.out, "output file (stdout if omitted)");
    app.add_option("--format", c.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    app.add_option("--seed", c.seed, "random seed");
    app.add_option("--threads", c.threads, "worker cap (LAB_THREADS overrides)");

    std::string mu_path, nu_path, model_path, cost_path, u_path, policy_path, init_path;
    double sigma = 0.5;
    int n_max = -1, l_max = -1;

    // gauge
    auto* gauge = app.add_subcommand("gauge", "gauge-type function G");
    gauge->require_subcommand(1);
    auto add_gauge_opts = [&](CLI::App* s) {
        s->add_option("--mu", mu_path)->required();
        s->add_option("--nu", nu_path)->required();
        s->add_option("--sigma", sigma)->check(CLI::PositiveNumber);
        s->add_option("--n-max,--nmax", n_max)->check(CLI::Range(1, 20));
        s->add_option("--l-max,--lmax", l_max)->check(CLI::Range(1, 12));
    };
    auto* gauge_eval = gauge->add_subcommand("eval", "G(mu, nu)");
    auto* gauge_derivs = gauge->add_subcommand("derivs", "derivatives of G(., nu) on supp mu");
    add_gauge_opts(gauge_eval);
    add_gauge_opts(gauge_derivs);

    // entropy
    auto* entropy = app.add_subcommand("entropy", "entropy and Fisher information of mu * N_sigma");
    entropy->require_subcommand(1);
    auto* entropy_eval = entropy->add_subcommand("eval", "E, E~, Fisher");
    auto* entropy_derivs = entropy->add_subcommand("derivs", "derivatives of E on supp mu");
    for (auto* s : {entropy_eval, entropy_derivs}) {
        s->add_option("--mu", mu_path)->required();
        s->add_option("--sigma", sigma)->check(CLI::PositiveNumber);
    }

    // transport
    auto* transport = app.add_subcommand("transport", "Wasserstein distances");
    transport->require_subcommand(1);
    std::size_t samples = 4000;
    auto* w1 = transport->add_subcommand("w1", "exact W1");
    auto* w2 = transport->add_subcommand("w2", "exact W2");
    auto* w2s = transport->add_subcommand("w2sigma", "W2 of the Gaussian-smoothed measures");
    for (auto* s : {w1, w2, w2s}) {
        s->add_option("--mu", mu_path)->required();
        s->add_option("--nu", nu_path)->required();
    }
    w2s->add_option("--sigma", sigma)->check(CLI::PositiveNumber);
    w2s->add_option("--samples", samples)->check(CLI::Range(1, 1000000));

    // derivative checks
    auto* check = app.add_subcommand("check-derivatives", "analytic first variation against finite differences");
    std::string functional = "gauge";
    double check_tol = 1e-4;
    check->add_option("--functional", functional)->check(CLI::IsMember({"gauge", "entropy"}));
    check->add_option("--mu", mu_path)->required();
    check->add_option("--nu", nu_path)->required();
    check->add_option("--sigma", sigma)->check(CLI::PositiveNumber);
    check->add_option("--tol", check_tol)->check(CLI::PositiveNumber);

    // filter
    auto* filter = app.add_subcommand("filter", "Kushner-Stratonovich particle filter");
    filter->require_subcommand(1);
    double T = 1.0, dt = 1e-3, m0 = 0.0, p0 = 1.0;
    std::size_t N = 1000, paths = 200;
    std::string oracle = "none";
    std::vector<std::string> cyl_paths;
    std::vector<double> control;
    auto* filter_run = filter->add_subcommand("run", "simulate a signal and filter it");
    auto* ito = filter->add_subcommand("ito-check", "martingale residual of the Ito drift");
    for (auto* s : {filter_run, ito}) {
        s->add_option("--model", model_path)->required();
        s->add_option("--init", init_path, "initial measure JSON (else Gaussian m0, p0)");
        s->add_option("--m0", m0);
        s->add_option("--p0", p0)->check(CLI::NonNegativeNumber);
        s->add_option("--T", T)->check(CLI::PositiveNumber);
        s->add_option("--dt", dt)->check(CLI::PositiveNumber);
        s->add_option("--N", N)->check(CLI::Range(2, 10000000));
    }
    filter_run->add_option("--oracle", oracle)->check(CLI::IsMember({"none", "kalman"}));
    filter_run->add_option("--policy", policy_path);
    ito->add_option("--cyl", cyl_paths)->required();
    ito->add_option("--paths", paths)->check(CLI::Range(2, 1000000));
    ito->add_option("--g", control);

    // hjb
    auto* hjb = app.add_subcommand("hjb", "HJB residuals, value and DPP");
    hjb->require_subcommand(1);
    std::vector<std::string> policy_paths;
    double tau = 0.5;
    std::size_t inner = 4;
    auto* residual = hjb->add_subcommand("residual", "u - inf_g {L + A^g u} at mu");
    residual->add_option("--model", model_path)->required();
    residual->add_option("--cost", cost_path)->required();
    residual->add_option("--u", u_path)->required();
    residual->add_option("--mu", mu_path)->required();
    auto* value = hjb->add_subcommand("value", "Monte-Carlo value of a policy");
    auto* dpp = hjb->add_subcommand("dpp", "dynamic programming consistency");
    for (auto* s : {value, dpp}) {
        s->add_option("--model", model_path)->required();
        s->add_option("--cost", cost_path)->required();
        s->add_option("--init", init_path);
        s->add_option("--m0", m0);
        s->add_option("--p0", p0)->check(CLI::NonNegativeNumber);
        s->add_option("--T", T)->check(CLI::PositiveNumber);
        s->add_option("--dt", dt)->check(CLI::PositiveNumber);
        s->add_option("--N", N)->check(CLI::Range(2, 10000000));
        s->add_option("--paths", paths)->check(CLI::Range(2, 1000000));
    }
    value->add_option("--policy", policy_path)->required();
    dpp->add_option("--policy", policy_paths)->required();
    dpp->add_option("--tau", tau)->check(CLI::PositiveNumber);
    dpp->add_option("--inner", inner)->check(CLI::Range(1, 100000));

    // doubling
    auto* doubling = app.add_subcommand("doubling", "doubling-variables functional");
    doubling->require_subcommand(1);
    std::string u1_path, u2_path, alphas = "1", betas = "0.05", family_spec = "grid:13";
    double alpha = 1.0, beta = 0.05, lo = -3.0, hi = 3.0;
    int restarts = 8;
    auto* sweep = doubling->add_subcommand("sweep", "Step-1 diagnostics over alpha x beta");
    auto* dmax = doubling->add_subcommand("max", "maximize Phi at one (alpha, beta)");
    auto* suite = doubling->add_subcommand("suite", "Steps 3-7 inequality suite at a maximizer");
    for (auto* s : {sweep, dmax, suite}) {
        s->add_option("--u1", u1_path)->required();
        s->add_option("--u2", u2_path)->required();
        s->add_option("--family", family_spec, "grid:K or mixture:K");
        s->add_option("--lo", lo);
        s->add_option("--hi", hi);
        s->add_option("--sigma", sigma)->check(CLI::PositiveNumber);
        s->add_option("--restarts", restarts)->check(CLI::Range(1, 1000));
    }
    sweep->add_option("--alphas", alphas);
    sweep->add_option("--betas", betas);
    for (auto* s : {dmax, suite}) {
        s->add_option("--alpha", alpha)->check(CLI::PositiveNumber);
        s->add_option("--beta", beta)->check(CLI::PositiveNumber);
    }
    suite->add_option("--model", model_path)->required();
    suite->add_option("--cost", cost_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (const char* env = std::getenv("LAB_THREADS")) {
            try {
                c.threads = static_cast<unsigned>(std::stoul(env));
            } catch (const std::exception&) {
                throw InvalidInput("LAB_THREADS must be a nonnegative integer");
            }
        }
        if (c.threads > 0) set_thread_cap(c.threads);

        Run run;
        run.seed = c.seed;
        auto gauge_cfg = [&](int dim) {
            auto g = GaugeConfig::defaults(dim, sigma);
            if (n_max > 0) g.n_max = n_max;
            if (l_max > 0) g.l_max = l_max;
            g.validate();
            run.cfg["gauge"] = {{"sigma", g.sigma}, {"n_max", g.n_max}, {"l_max", g.l_max}, {"dim", g.dim}};
            return g;
        };
        auto load_measure = [&](const std::string& key, const std::string& path) {
            auto j = file_cfg(path);
            auto m = io::measure_from_json(j);
            run.cfg[key] = io::measure_to_json(m);
            return m;
        };

        if (gauge_eval->parsed() || gauge_derivs->parsed()) {
            run.cfg["command"] = gauge_eval->parsed() ? "gauge eval" : "gauge derivs";
            const auto mu = load_measure("mu", mu_path), nu = load_measure("nu", nu_path);
            const auto g = gauge_cfg(mu.dim());
            if (gauge_eval->parsed()) {
                const auto v = gauge_value(mu, nu, g);
                emit(c, run, {{"G", v.G}, {"tail_bound", v.tail_bound}, {"per_shell", v.per_shell}},
                     "G,tail_bound\n" + csv_num(v.G) + "," + csv_num(v.tail_bound) + "\n");
            } else {
                emit(c, run, io::bundle_to_json(gauge_derivatives(mu, nu, g, mu.points(), mu.points())));
            }
            return 0;
        }
        if (entropy_eval->parsed() || entropy_derivs->parsed()) {
            run.cfg["command"] = entropy_eval->parsed() ? "entropy eval" : "entropy derivs";
            run.cfg["sigma"] = sigma;
            const auto mu = load_measure("mu", mu_path);
            if (entropy_eval->parsed()) {
                const auto r = entropy_smoothed(mu, sigma);
                const double lb = entropy_lower_bound(mu, sigma);
                emit(c, run,
                     {{"entropy", r.entropy},
                      {"entropy_tilde", r.entropy_tilde},
                      {"fisher", r.fisher},
                      {"lower_bound", lb},
                      {"quadrature_error_estimate", r.quadrature_error_estimate}},
                     "entropy,entropy_tilde,fisher,lower_bound\n" + csv_num(r.entropy) + "," +
                         csv_num(r.entropy_tilde) + "," + csv_num(r.fisher) + "," + csv_num(lb) + "\n");
            } else {
                emit(c, run, io::bundle_to_json(entropy_derivatives(mu, sigma, mu.points(), mu.points())));
            }
            return 0;
        }
        if (w1->parsed() || w2->parsed() || w2s->parsed()) {
            const auto mu = load_measure("mu", mu_path), nu = load_measure("nu", nu_path);
            if (w2s->parsed()) {
                run.cfg["command"] = "transport w2sigma";
                run.cfg["sigma"] = sigma;
                run.cfg["samples"] = samples;
                const double d = wasserstein_smoothed(mu, nu, sigma, samples, c.seed);
                emit(c, run, {{"distance", d}}, "distance\n" + csv_num(d) + "\n");
            } else {
                const int p = w1->parsed() ? 1 : 2;
                run.cfg["command"] = p == 1 ? "transport w1" : "transport w2";
                const auto r = wasserstein(mu, nu, p);
                json plan = json::array();
                std::string csv = "i,j,mass\n";
                for (const auto& e : r.plan.entries) {
                    plan.push_back({{"i", e.i}, {"j", e.j}, {"mass", e.mass}});
                    csv += std::to_string(e.i) + "," + std::to_string(e.j) + "," + csv_num(e.mass) + "\n";
                }
                emit(c, run, {{"distance", r.distance}, {"cost", r.plan.cost}, {"plan", plan}}, csv);
            }
            return 0;
        }
        if (check->parsed()) {
            run.cfg["command"] = "check-derivatives";
            run.cfg["functional"] = functional;
            run.cfg["sigma"] = sigma;
            run.cfg["tol"] = check_tol;
            const auto mu = load_measure("mu", mu_path), nu = load_measure("nu", nu_path);
            MeasureFunctional F;
            DerivativeBundle b;
            if (functional == "gauge") {
                const auto g = gauge_cfg(mu.dim());
                F = {[nu, g](const DiscreteMeasure& m) { return gauge_value(m, nu, g).G; }, "gauge"};
                b = gauge_derivatives(mu, nu, g, nu.points(), {});
                // the slope toward nu also needs the values on supp mu
                const auto bm = gauge_derivatives(mu, nu, g, mu.points(), {});
                b.first_var.insert(b.first_var.end(), bm.first_var.begin(), bm.first_var.end());
            } else {
                F = {[sigma](const DiscreteMeasure& m) { return entropy_value(m, sigma, 24); }, "entropy"};
                b = entropy_derivatives(mu, sigma, nu.points(), {});
                const auto bm = entropy_derivatives(mu, sigma, mu.points(), {});
                b.first_var.insert(b.first_var.end(), bm.first_var.begin(), bm.first_var.end());
            }
            double analytic = 0.0;
            for (std::size_t j = 0; j < nu.size(); ++j) analytic += nu.weight(j) * b.first_var[j];
            for (std::size_t i = 0; i < mu.size(); ++i) analytic -= mu.weight(i) * b.first_var[nu.size() + i];
            const auto fd = var_derivative_fd(F, mu, nu);
            const double rel = std::abs(analytic - fd.richardson) / std::max(1.0, std::abs(fd.richardson));
            const bool ok = rel <= check_tol;
            emit(c, run, {{"analytic", analytic}, {"fd", fd.richardson}, {"rel_error", rel}, {"ok", ok}},
                 "analytic,fd,rel_error,ok\n" + csv_num(analytic) + "," + csv_num(fd.richardson) + "," + csv_num(rel) +
                     "," + (ok ? "1" : "0") + "\n");
            if (!ok) {
                std::cerr << "derivative check failed: relative error " << rel << " > " << check_tol << "\n";
                return 3;
            }
            return 0;
        }

        auto load_model = [&] {
            auto j = file_cfg(model_path);
            run.cfg["model"] = j;
            return io::model_from_json(j);
        };
        auto law_for = [&](int dim) {
            if (!init_path.empty()) return InitialLaw(load_measure("init", init_path));
            run.cfg["init"] = {{"m0", m0}, {"p0", p0}};
            return initial_law("", m0, p0, dim);
        };
        auto load_policy = [&](const std::string& path, const std::string& key) {
            auto j = file_cfg(path);
            run.cfg[key].push_back(j);
            return io::policy_from_json(j);
        };
        auto load_cost = [&] {
            auto j = file_cfg(cost_path);
            run.cfg["cost"] = j;
            return io::cost_from_json(j);
        };
        auto time_cfg = [&] {
            run.cfg["T"] = T;
            run.cfg["dt"] = dt;
            run.cfg["N"] = N;
        };

        if (filter_run->parsed()) {
            run.cfg["command"] = "filter run";
            run.cfg["oracle"] = oracle;
            time_cfg();
            const auto model = load_model();
            const auto law = law_for(model.dim_x);
            const Policy pol = policy_path.empty() ? (model.dim_u == 0 ? no_control()
                                                                       : constant_policy(model.control_lo))
                                                   : load_policy(policy_path, "policy");
            const auto truth = simulate_truth(model, law, pol, T, dt, c.seed);
            const auto fp = ks_particle_filter(model, law, pol, observations(truth), N, dt, c.seed);
            std::optional<std::vector<KalmanState>> kb;
            if (oracle == "kalman") {
                const auto [km, kc] = law.moments();
                kb = kalman_bucy(model, km, kc, truth.y, dt, truth.controls);
            }
            std::ostringstream csv;
            csv << "t,x,filter_mean" << (kb ? ",kalman_mean" : "") << ",ess\n";
            double se = 0.0;
            for (std::size_t k = 0; k < fp.times.size(); ++k) {
                csv << csv_num(fp.times[k]) << "," << csv_num(truth.x[k][0]) << "," << csv_num(fp.means[k][0]);
                if (kb) {
                    const double e = fp.means[k][0] - (*kb)[k].mean[0];
                    se += e * e;
                    csv << "," << csv_num((*kb)[k].mean[0]);
                }
                csv << "," << csv_num(fp.ess[k]) << "\n";
            }
            json res = {{"steps", fp.times.size() - 1}, {"resamples", fp.resamples},
                        {"final_mean", io::to_json(fp.means.back())}, {"final_cov", io::to_json(fp.covs.back())}};
            if (kb) {
                res["rmse_vs_kalman"] = std::sqrt(se / static_cast<double>(fp.times.size()));
                json km = json::array(), fm = json::array();
                for (std::size_t k = 0; k < fp.times.size(); ++k) {
                    km.push_back((*kb)[k].mean[0]);
                    fm.push_back(fp.means[k][0]);
                }
                res["filter_mean"] = fm;
                res["kalman_mean"] = km;
            }
            emit(c, run, res, csv.str());
            return 0;
        }
        if (ito->parsed()) {
            run.cfg["command"] = "filter ito-check";
            run.cfg["paths"] = paths;
            time_cfg();
            const auto model = load_model();
            const auto law = law_for(model.dim_x);
            std::vector<CylindricalFn> fns;
            for (const auto& p : cyl_paths) {
                auto j = file_cfg(p);
                run.cfg["cyl"].push_back(j);
                fns.push_back(io::cylindrical_from_json(j, model.dim_x));
            }
            Vec g = model.control_lo;
            if (!control.empty()) g = Eigen::Map<const Vec>(control.data(), static_cast<Eigen::Index>(control.size()));
            run.cfg["g"] = io::to_json(g);
            const auto res = ito_drift_check(model, g, fns, law, T, dt, N, paths, c.seed);
            json arr = json::array();
            std::string csv = "fn,residual,std_error,n_paths\n";
            for (std::size_t i = 0; i < res.size(); ++i) {
                arr.push_back({{"residual", res[i].residual}, {"std_error", res[i].std_error}, {"n_paths", res[i].n_paths}});
                csv += std::to_string(i) + "," + csv_num(res[i].residual) + "," + csv_num(res[i].std_error) + "," +
                       std::to_string(res[i].n_paths) + "\n";
            }
            emit(c, run, {{"checks", arr}}, csv);
            return 0;
        }
        if (residual->parsed()) {
            run.cfg["command"] = "hjb residual";
            const auto model = load_model();
            const auto cost = load_cost();
            const auto mu = load_measure("mu", mu_path);
            auto uj = file_cfg(u_path);
            run.cfg["u"] = uj;
            const auto u = io::cylindrical_from_json(uj, model.dim_x);
            const auto r = hjb_residual(model, cost, u, mu);
            emit(c, run,
                 {{"residual", r.residual}, {"second_order", r.second_order}, {"inf_value", r.inf_value},
                  {"argmin", io::to_json(r.argmin)}},
                 "residual,second_order,inf_value\n" + csv_num(r.residual) + "," + csv_num(r.second_order) + "," +
                     csv_num(r.inf_value) + "\n");
            return 0;
        }
        if (value->parsed()) {
            run.cfg["command"] = "hjb value";
            run.cfg["paths"] = paths;
            time_cfg();
            const auto model = load_model();
            const auto cost = load_cost();
            const auto law = law_for(model.dim_x);
            const auto pol = load_policy(policy_path, "policy");
            const auto v = value_mc(model, cost, pol, law, T, dt, N, paths, c.seed);
            emit(c, run,
                 {{"value", v.value}, {"std_error", v.std_error}, {"n_paths", v.n_paths},
                  {"truncation_bias_bound", v.truncation_bias_bound}},
                 "value,std_error,n_paths,truncation_bias_bound\n" + csv_num(v.value) + "," + csv_num(v.std_error) + "," +
                     std::to_string(v.n_paths) + "," + csv_num(v.truncation_bias_bound) + "\n");
            return 0;
        }
        if (dpp->parsed()) {
            run.cfg["command"] = "hjb dpp";
            run.cfg["paths"] = paths;
            run.cfg["tau"] = tau;
            run.cfg["inner"] = inner;
            time_cfg();
            const auto model = load_model();
            const auto cost = load_cost();
            const auto law = law_for(model.dim_x);
            std::vector<Policy> pols;
            for (const auto& p : policy_paths) pols.push_back(load_policy(p, "policies"));
            const auto r = dpp_check(model, cost, pols, law, tau, T, dt, N, paths, c.seed, inner);
            emit(c, run,
                 {{"lhs", r.lhs}, {"rhs", r.rhs}, {"gap", r.gap}, {"std_error", r.std_error},
                  {"truncation_bias", r.truncation_bias}, {"within_3se", r.within(3.0)}},
                 "lhs,rhs,gap,std_error,truncation_bias\n" + csv_num(r.lhs) + "," + csv_num(r.rhs) + "," +
                     csv_num(r.gap) + "," + csv_num(r.std_error) + "," + csv_num(r.truncation_bias) + "\n");
            return 0;
        }
        if (sweep->parsed() || dmax->parsed() || suite->parsed()) {
            auto u1j = file_cfg(u1_path), u2j = file_cfg(u2_path);
            run.cfg["u1"] = u1j;
            run.cfg["u2"] = u2j;
            run.cfg["family"] = family_spec;
            run.cfg["lo"] = lo;
            run.cfg["hi"] = hi;
            run.cfg["sigma"] = sigma;
            run.cfg["restarts"] = restarts;
            const auto colon = family_spec.find(':');
            if (colon == std::string::npos) throw InvalidInput("--family must look like grid:K or mixture:K");
            const std::string fk = family_spec.substr(0, colon);
            int K = 0;
            try {
                K = std::stoi(family_spec.substr(colon + 1));
            } catch (const std::exception&) {
                throw InvalidInput("--family size must be an integer");
            }
            if (!(lo < hi)) throw InvalidInput("--lo must be below --hi");
            MeasureFamily fam;
            if (fk == "grid") fam = MeasureFamily::simplex(K, lo, hi);
            else if (fk == "mixture") fam = MeasureFamily::mixture(K, lo, hi);
            else throw InvalidInput("--family kind must be grid or mixture");
            auto base = make_problem(io::functional_from_json(u1j), io::functional_from_json(u2j), alpha, beta, 1, sigma);
            MaximizeOptions mo;
            mo.restarts = restarts;
            if (sweep->parsed()) {
                run.cfg["command"] = "doubling sweep";
                const auto as = io::parse_list(alphas, "--alphas"), bs = io::parse_list(betas, "--betas");
                run.cfg["alphas"] = as;
                run.cfg["betas"] = bs;
                std::vector<std::pair<double, double>> ab;
                for (double a : as)
                    for (double b : bs) {
                        if (!(a > 0.0) || !(b > 0.0)) throw InvalidInput("alphas and betas must be positive");
                        ab.push_back({a, b});
                    }
                const auto rows = step1_diagnostics(base, ab, fam, c.seed, mo);
                std::ostringstream csv;
                csv << "alpha,beta,value,half_gauge,entropy_penalty,w1,w2,lip_bound,w2_bound,stationarity,converged\n";
                json arr = json::array();
                for (const auto& r : rows) {
                    csv << csv_num(r.alpha) << "," << csv_num(r.beta) << "," << csv_num(r.value) << ","
                        << csv_num(r.half_gauge) << "," << csv_num(r.entropy_penalty) << "," << csv_num(r.w1) << ","
                        << csv_num(r.w2) << "," << csv_num(r.lip_bound) << "," << csv_num(r.w2_bound) << ","
                        << csv_num(r.stationarity) << "," << (r.converged ? 1 : 0) << "\n";
                    arr.push_back({{"alpha", r.alpha}, {"beta", r.beta}, {"value", r.value}, {"half_gauge", r.half_gauge},
                                   {"entropy_penalty", r.entropy_penalty}, {"w1", r.w1}, {"w2", r.w2},
                                   {"lip_bound", r.lip_bound}, {"w2_bound", r.w2_bound},
                                   {"stationarity", r.stationarity}, {"converged", r.converged}, {"note", r.note}});
                }
                emit(c, run, {{"rows", arr}}, csv.str());
                return 0;
            }
            run.cfg["alpha"] = alpha;
            run.cfg["beta"] = beta;
            const auto res = maximize_phi(base, fam, c.seed, mo);
            if (dmax->parsed()) {
                run.cfg["command"] = "doubling max";
                emit(c, run,
                     {{"phi", res.phi.value}, {"half_gauge", res.phi.half_gauge},
                      {"entropy_penalty", res.phi.entropy_penalty}, {"stationarity", res.stationarity},
                      {"best_restart", res.best_restart}, {"mu_bar", io::measure_to_json(res.mu_bar)},
                      {"mu_under", io::measure_to_json(res.mu_under)}});
                return 0;
            }
            run.cfg["command"] = "doubling suite";
            const auto model = load_model();
            const auto cost = load_cost();
            StepOptions so;
            so.throw_on_violation = true;
            const auto rep = step_inequality_suite(base, res.mu_bar, res.mu_under, model, cost, {}, so);
            json arr = json::array();
            std::string csv = "name,lhs,rhs,fitted,ok\n";
            for (const auto& ck : rep.checks) {
                arr.push_back({{"name", ck.name}, {"lhs", ck.lhs}, {"rhs", ck.rhs}, {"base", ck.base},
                               {"fitted", ck.fitted}, {"ok", ck.ok}});
                csv += ck.name + "," + csv_num(ck.lhs) + "," + csv_num(ck.rhs) + "," + (ck.fitted ? "1" : "0") + "," +
                       (ck.ok ? "1" : "0") + "\n";
            }
            emit(c, run, {{"checks", arr}, {"ok", rep.ok}}, csv);
            return 0;
        }
        throw InvalidInput("no command given");
    } catch (const SuiteFailure& e) {
        std::cerr << "suite failure: " << e.what() << "\n";
        return 3;
    } catch (const InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 1;
    } catch (const json::exception& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
