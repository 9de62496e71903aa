// Batch front end: generates synthetic fleets/prices/datasets, runs the
// identification loop, evaluates models against datasets, and produces the
// noise-gap and factor-update benchmark tables. All outputs are plot-ready
// CSV or JSON under --out, reproducible from the config plus --seed.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "flexload/io.hpp"
#include "flexload/scenario.hpp"

namespace fs = std::filesystem;
using namespace flexload;
using io::json;

namespace {

struct RunConfig {
    scen::FleetSpec fleet;
    scen::PriceSpec prices;
    int days_train = 10;
    int days_test = 5;
    ident::NoiseSpec noise;
    ident::ResponseMode mode = ident::ResponseMode::Static;
    ident::ReplayOptions replay;
    bayopt::OptBudget budget{16, 48, 200, 64};
    int surrogate_storage = 1;
    int surrogate_generators = 0;
    int surrogate_interruptible = 0;
    std::vector<int> theorem1_counts = {10, 100, 1000};
    int theorem1_trials = 50;
    bool theorem1_identify_trend = false;
    std::vector<int> bench_sizes = {100, 200, 400, 700, 1000};
    int slice_resolution = 40;
    uint64_t seed = 1;

    std::string fleet_path = "fleet.json";
    std::string prices_path = "prices.csv";
    std::string dataset_path = "dataset.csv";
    std::string dataset_test_path = "dataset_test.csv";
    std::string gp_state_path = "gp_state.json";
};

scen::Band band_from(const json& j, const scen::Band& dflt) {
    if (j.is_array() && j.size() == 2) return {j[0].get<double>(), j[1].get<double>()};
    if (j.is_number()) return {j.get<double>(), j.get<double>()};
    return dflt;
}

ident::ResponseMode mode_from(const std::string& s) {
    if (s == "static") return ident::ResponseMode::Static;
    if (s == "dynamic") return ident::ResponseMode::Dynamic;
    if (s == "static_ext") return ident::ResponseMode::StaticExt;
    if (s == "dynamic_ext") return ident::ResponseMode::DynamicExt;
    throw std::invalid_argument("config: unknown mode '" + s + "'");
}

RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    json j;
    io::detail::open_in(path) >> j;

    if (j.contains("fleet")) {
        const json& f = j["fleet"];
        auto& fl = cfg.fleet;
        fl.n_storage = f.value("n_storage", fl.n_storage);
        fl.n_generators = f.value("n_generators", fl.n_generators);
        fl.n_interruptible = f.value("n_interruptible", fl.n_interruptible);
        fl.grid.T = f.value("T", fl.grid.T);
        fl.grid.dt = f.value("dt", fl.grid.dt);
        fl.fixed_kw = band_from(f.value("fixed_kw", json()), fl.fixed_kw);
        fl.str_p_lo = band_from(f.value("str_p_lo", json()), fl.str_p_lo);
        fl.str_p_hi = band_from(f.value("str_p_hi", json()), fl.str_p_hi);
        fl.str_e_hi = band_from(f.value("str_e_hi", json()), fl.str_e_hi);
        fl.str_e_lo_frac = band_from(f.value("str_e_lo_frac", json()), fl.str_e_lo_frac);
        fl.str_e0_frac = band_from(f.value("str_e0_frac", json()), fl.str_e0_frac);
        fl.str_sigma = band_from(f.value("str_sigma", json()), fl.str_sigma);
        fl.gen_p_lo = band_from(f.value("gen_p_lo", json()), fl.gen_p_lo);
        fl.gen_p_hi = band_from(f.value("gen_p_hi", json()), fl.gen_p_hi);
        fl.gen_ramp = band_from(f.value("gen_ramp", json()), fl.gen_ramp);
        fl.int_p_lo = band_from(f.value("int_p_lo", json()), fl.int_p_lo);
        fl.int_p_hi = band_from(f.value("int_p_hi", json()), fl.int_p_hi);
        fl.int_ramp = band_from(f.value("int_ramp", json()), fl.int_ramp);
        fl.adj_cost = f.value("adj_cost", fl.adj_cost);
    }
    if (j.contains("prices")) {
        const json& p = j["prices"];
        const std::string kind = p.value("kind", "synthetic_tou");
        if (kind == "synthetic_tou") cfg.prices.kind = scen::PriceKind::SyntheticTou;
        else if (kind == "synthetic_rt") cfg.prices.kind = scen::PriceKind::SyntheticRt;
        else if (kind == "csv") cfg.prices.kind = scen::PriceKind::Csv;
        else throw std::invalid_argument("config: unknown price kind '" + kind + "'");
        cfg.prices.levels = p.value("levels", cfg.prices.levels);
        cfg.prices.volatility = p.value("volatility", cfg.prices.volatility);
        cfg.prices.forecast_error_sd = p.value("forecast_error_sd", cfg.prices.forecast_error_sd);
        cfg.prices.path = p.value("path", cfg.prices.path);
        cfg.days_train = p.value("days_train", cfg.days_train);
        cfg.days_test = p.value("days_test", cfg.days_test);
    }
    if (j.contains("noise")) {
        const json& n = j["noise"];
        const int T = cfg.fleet.grid.T;
        if (n.contains("proportional_factor") && !n["proportional_factor"].is_null())
            cfg.noise.proportional_factor = n["proportional_factor"].get<double>();
        if (n.contains("sigma_agg_diag"))
            cfg.noise.sigma_agg = n["sigma_agg_diag"].get<double>() * Mat::Identity(T, T);
        if (n.contains("sigma_fix_diag"))
            cfg.noise.sigma_fix = n["sigma_fix_diag"].get<double>() * Mat::Identity(T, T);
    }
    cfg.mode = mode_from(j.value("mode", "static"));
    cfg.replay.t_dc = j.value("t_dc", cfg.replay.t_dc);
    cfg.replay.t_ph = j.value("t_ph", cfg.replay.t_ph);
    if (j.contains("budget")) {
        const json& b = j["budget"];
        cfg.budget.n0 = b.value("n0", cfg.budget.n0);
        cfg.budget.n_classic = b.value("n_classic", cfg.budget.n_classic);
        cfg.budget.n_max = b.value("n_max", cfg.budget.n_max);
        cfg.budget.acq_starts = b.value("acq_starts", cfg.budget.acq_starts);
    }
    if (j.contains("surrogate")) {
        const json& s = j["surrogate"];
        cfg.surrogate_storage = s.value("n_storage", cfg.surrogate_storage);
        cfg.surrogate_generators = s.value("n_generators", cfg.surrogate_generators);
        cfg.surrogate_interruptible = s.value("n_interruptible", cfg.surrogate_interruptible);
    }
    if (j.contains("theorem1")) {
        cfg.theorem1_counts = j["theorem1"].value("sample_counts", cfg.theorem1_counts);
        cfg.theorem1_trials = j["theorem1"].value("trials", cfg.theorem1_trials);
        cfg.theorem1_identify_trend =
            j["theorem1"].value("identify_trend", cfg.theorem1_identify_trend);
    }
    if (j.contains("bench")) cfg.bench_sizes = j["bench"].value("sizes", cfg.bench_sizes);
    if (j.contains("slice")) cfg.slice_resolution = j["slice"].value("resolution", cfg.slice_resolution);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

std::string resolve(const std::string& out, const std::string& path) {
    const fs::path p(path);
    return p.is_absolute() ? path : (fs::path(out) / p).string();
}

scen::SurrogateBundle build_surrogate(const RunConfig& cfg) {
    return scen::build_surrogate(cfg.fleet, cfg.surrogate_storage, cfg.surrogate_generators,
                                 cfg.surrogate_interruptible);
}

std::vector<PriceSignal> make_prices(const RunConfig& cfg, const std::string& out, int days,
                                     Rng& rng) {
    if (cfg.prices.kind == scen::PriceKind::Csv) {
        auto all = io::load_prices_csv(resolve(out, cfg.prices.path));
        if (static_cast<int>(all.size()) < days)
            throw std::runtime_error("price csv has fewer days than requested");
        all.resize(days);
        return all;
    }
    return scen::generate_prices(cfg.prices, cfg.fleet.grid.T, days, rng);
}

int cmd_gen(const RunConfig& cfg, const std::string& out) {
    Rng rng(cfg.seed);
    const AggregateModel truth = scen::sample_fleet(cfg.fleet, rng);
    const auto report = validate_model(truth);
    if (!report.ok) {
        for (const auto& [path, msg] : report.violations)
            std::cerr << path << ": " << msg << '\n';
        return 1;
    }
    const auto prices = make_prices(cfg, out, cfg.days_train + cfg.days_test, rng);
    const std::vector<PriceSignal> train(prices.begin(), prices.begin() + cfg.days_train);
    const std::vector<PriceSignal> test(prices.begin() + cfg.days_train, prices.end());

    io::save_model(resolve(out, cfg.fleet_path), truth);
    io::save_prices_csv(resolve(out, cfg.prices_path), prices);
    io::save_dataset_csv(resolve(out, cfg.dataset_path),
                         scen::synthesize_dataset(truth, train, cfg.noise, cfg.mode, rng,
                                                  cfg.replay));
    if (!test.empty()) {
        // Test days are observed noise-free: they score the identified model.
        io::save_dataset_csv(resolve(out, cfg.dataset_test_path),
                             scen::synthesize_dataset(truth, test, ident::NoiseSpec{},
                                                      cfg.mode, rng, cfg.replay));
    }
    std::cout << "wrote " << cfg.fleet_path << ", " << cfg.prices_path << ", "
              << cfg.dataset_path;
    if (!test.empty()) std::cout << ", " << cfg.dataset_test_path;
    std::cout << " in " << out << '\n';
    return 0;
}

int cmd_identify(const RunConfig& cfg, const std::string& out) {
    Rng rng(cfg.seed);
    const auto train = io::load_dataset_csv(resolve(out, cfg.dataset_path));
    std::vector<ident::ResponseSample> test;
    const std::string test_path = resolve(out, cfg.dataset_test_path);
    if (fs::exists(test_path)) test = io::load_dataset_csv(test_path);

    const scen::SurrogateBundle sur = build_surrogate(cfg);
    ident::IdentOptions opt;
    opt.replay = cfg.replay;
    const ident::IdentResult res =
        ident::identify(train, test, sur.spec, sur.box, cfg.budget, cfg.mode, rng, opt);

    io::save_trace_csv(resolve(out, "trace.csv"), res.trace);

    int failures = 0;
    for (const auto& it : res.trace.iterations)
        if (it.failed) ++failures;

    json metrics;
    metrics["f_hat"] = res.f_hat;
    metrics["nrmse_train"] = res.nrmse_train;
    if (res.nrmse_test) metrics["nrmse_test"] = *res.nrmse_test;
    metrics["evaluations"] = res.trace.state.size();
    metrics["infeasible_rate"] =
        static_cast<double>(failures) / static_cast<double>(res.trace.iterations.size());
    metrics["theta_hat"] = io::theta_to_json(res.theta_hat);
    io::write_json(resolve(out, "ident_result.json"), metrics);

    // Posterior surrogate over all evaluated points, for identifiability slices.
    const gp::GPState& state = res.trace.state;
    io::save_gp_state(resolve(out, cfg.gp_state_path), state);

    const Vec best_u = res.trace.best_theta;
    int n_pairs = 0;
    for (int a = 0; a < sur.box.size(); ++a) {
        if (sur.box.layout[a].kind != ComponentKind::Storage || sur.box.layout[a].index != 0)
            continue;
        for (int b = a + 1; b < sur.box.size(); ++b) {
            if (sur.box.layout[b].kind != ComponentKind::Storage || sur.box.layout[b].index != 0)
                continue;
            const auto grid = ident::posterior_slice(state, {a, b}, cfg.slice_resolution,
                                                     best_u, sur.box);
            io::save_slice_csv(resolve(out, "slice_" + sur.box.layout[a].param + "_" +
                                                sur.box.layout[b].param + ".csv"),
                               {sur.box.layout[a].param, sur.box.layout[b].param}, grid);
            ++n_pairs;
        }
    }

    std::cout << "f_hat " << res.f_hat << ", nrmse_train " << res.nrmse_train;
    if (res.nrmse_test) std::cout << ", nrmse_test " << *res.nrmse_test;
    std::cout << ", slices " << n_pairs << '\n';
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& out) {
    const AggregateModel m = io::load_model(resolve(out, cfg.fleet_path));
    const auto samples = io::load_dataset_csv(resolve(out, cfg.dataset_path));
    std::vector<Vec> est, obs;
    auto f = io::detail::open_out(resolve(out, "eval_responses.csv"));
    f << "day,t,p_obs,p_hat\n";
    for (size_t d = 0; d < samples.size(); ++d) {
        AggregateModel replay = m;
        replay.fixed = samples[d].p_fix_pred;
        const ResponseResult r =
            ident::mode_is_dynamic(cfg.mode)
                ? simulate_dynamic_day(replay, samples[d].prices, cfg.replay.t_dc,
                                       cfg.replay.t_ph, cfg.replay.forward)
                : solve_static_response(replay, samples[d].prices, cfg.replay.forward);
        char name[32];
        std::snprintf(name, sizeof(name), "response_%03zu.csv", d);
        io::save_response_csv(resolve(out, name), replay, r);
        est.push_back(r.p_agg);
        obs.push_back(samples[d].p_obs);
        for (int t = 0; t < m.grid.T; ++t)
            f << d << ',' << t << ',' << io::g17(obs.back()[t]) << ','
              << io::g17(est.back()[t]) << '\n';
    }
    json metrics;
    metrics["nrmse"] = ident::nrmse(obs, est);
    io::write_json(resolve(out, "eval_metrics.json"), metrics);
    std::cout << "nrmse " << metrics["nrmse"] << '\n';
    return 0;
}

int cmd_theorem1(const RunConfig& cfg, const std::string& out) {
    Rng rng(cfg.seed);
    const AggregateModel truth = scen::sample_fleet(cfg.fleet, rng);
    const int max_n = *std::max_element(cfg.theorem1_counts.begin(), cfg.theorem1_counts.end());
    const auto prices = make_prices(cfg, out, max_n, rng);

    ident::NoiseSpec spec = cfg.noise;
    const int T = cfg.fleet.grid.T;
    if (!spec.proportional_factor && spec.sigma_agg.size() == 0 && spec.sigma_fix.size() == 0) {
        spec.sigma_agg = 0.01 * Mat::Identity(T, T);
        spec.sigma_fix = 0.0025 * Mat::Identity(T, T);
    }

    ident::GapOptions gopt;
    gopt.mode = cfg.mode;
    gopt.replay = cfg.replay;
    if (cfg.theorem1_identify_trend) {
        const scen::SurrogateBundle sur = build_surrogate(cfg);
        gopt.identify_trend = true;
        gopt.surrogate = sur.spec;
        gopt.box = sur.box;
        gopt.budget = cfg.budget;
    }
    const auto stats =
        ident::noise_gap_experiment(truth, spec, prices, cfg.theorem1_counts,
                                    cfg.theorem1_trials, rng, gopt);
    io::save_gap_csv(resolve(out, "gap.csv"), stats);

    // log-log slope of the gap variance against N
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& s : stats) {
        const double x = std::log(static_cast<double>(s.n_samples));
        const double y = std::log(s.var_gap);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(stats.size());
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    json metrics;
    metrics["var_loglog_slope"] = slope;
    metrics["final_mean_gap"] = stats.back().mean_gap;
    metrics["final_se_gap"] = stats.back().se_gap;
    metrics["target"] = stats.back().target;
    if (stats.back().beta) {
        json beta = json::array(), theta_dev = json::array();
        for (const auto& s : stats) {
            beta.push_back(*s.beta);
            theta_dev.push_back(*s.theta_dev);
        }
        metrics["beta"] = beta;
        metrics["theta_dev"] = theta_dev;
    }
    io::write_json(resolve(out, "gap_metrics.json"), metrics);
    std::cout << "final gap " << stats.back().mean_gap << " (target " << stats.back().target
              << "), var slope " << slope << '\n';
    return 0;
}

int cmd_bench_chol(const RunConfig& cfg, const std::string& out) {
    Rng rng(cfg.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const gp::Hyperparams eta{1.0, 0.5, 0.1};
    const int dim = 6;
    auto f = io::detail::open_out(resolve(out, "bench_chol.csv"));
    f << "n,append_ms,refit_ms\n";
    using clock = std::chrono::steady_clock;
    for (const int n : cfg.bench_sizes) {
        std::vector<Vec> pts(n + 1, Vec(dim));
        for (auto& p : pts)
            for (int k = 0; k < dim; ++k) p[k] = unif(rng);
        Vec y = Vec::Zero(n + 1);
        std::vector<Vec> base(pts.begin(), pts.begin() + n);
        gp::GPState state = gp::gp_fit(base, y.head(n), eta);
        const auto t0 = clock::now();
        gp::append_point(state, pts[n], 0.0);
        const auto t1 = clock::now();
        gp::GPState refit = gp::gp_fit(pts, y, eta);
        const auto t2 = clock::now();
        const double append_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        const double refit_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
        f << n << ',' << io::g17(append_ms) << ',' << io::g17(refit_ms) << '\n';
    }
    std::cout << "wrote bench_chol.csv\n";
    return 0;
}

int cmd_slice(const RunConfig& cfg, const std::string& out) {
    const gp::GPState state = io::load_gp_state(resolve(out, cfg.gp_state_path));
    const scen::SurrogateBundle sur = build_surrogate(cfg);
    int best = 0;
    for (int i = 1; i < state.size(); ++i)
        if (state.y[i] < state.y[best]) best = i;
    const Vec fixed = state.x[best];
    for (int a = 0; a < sur.box.size(); ++a)
        for (int b = a + 1; b < sur.box.size(); ++b) {
            if (sur.box.layout[a].kind != ComponentKind::Storage ||
                sur.box.layout[a].index != 0 ||
                sur.box.layout[b].kind != ComponentKind::Storage ||
                sur.box.layout[b].index != 0)
                continue;
            const auto grid =
                ident::posterior_slice(state, {a, b}, cfg.slice_resolution, fixed, sur.box);
            io::save_slice_csv(resolve(out, "slice_" + sur.box.layout[a].param + "_" +
                                                sur.box.layout[b].param + ".csv"),
                               {sur.box.layout[a].param, sur.box.layout[b].param}, grid);
        }
    std::cout << "wrote posterior slices\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"aggregate flexible-load response simulation and identification"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand

    std::string config_path, out_dir = ".";
    uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "JSON run configuration")->expected(1);
    app.add_option("--out", out_dir, "output directory (created if missing)");
    app.add_option("--seed", seed, "seed overriding the config")->each([&](const std::string&) {
        seed_set = true;
    });

    auto* gen = app.add_subcommand("gen", "sample a fleet and synthesize a dataset");
    auto* identify = app.add_subcommand("identify", "identify parameters from a dataset");
    auto* eval = app.add_subcommand("eval", "evaluate a model file against a dataset");
    auto* theorem1 = app.add_subcommand("theorem1", "noise-gap statistics against tr(Sigma)");
    auto* bench = app.add_subcommand("bench-chol", "factor append vs refit timings");
    auto* slice = app.add_subcommand("slice", "posterior slices from a saved surrogate state");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_config(config_path);
        if (seed_set) cfg.seed = seed;
        fs::create_directories(out_dir);
        if (gen->parsed()) return cmd_gen(cfg, out_dir);
        if (identify->parsed()) return cmd_identify(cfg, out_dir);
        if (eval->parsed()) return cmd_eval(cfg, out_dir);
        if (theorem1->parsed()) return cmd_theorem1(cfg, out_dir);
        if (bench->parsed()) return cmd_bench_chol(cfg, out_dir);
        if (slice->parsed()) return cmd_slice(cfg, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
