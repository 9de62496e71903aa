#pragma once

// File formats. Numbers are written with 17 significant digits so every CSV
// and JSON round-trips doubles exactly.
//
//   fleet JSON    {"grid":{"T","dt"},"fixed":[],"adjustables":[],"storages":[]}
//   price CSV     day,t,lambda[,lambda_hat]
//   dataset CSV   day,t,lambda,lambda_hat,p_obs,p_fix_pred
//   trace CSV     iteration,phase,f,best_f,ei
//   response CSV  t,p_agg,p_fix,p_adj_<j>...,p_str_<i>...,e_str_<i>...
//   slice CSV     <param>[,<param>],mean,sd
//   gp JSON       {"points":[[...]],"y":[...],"eta":{alpha,beta,eps}}

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flexload/bayopt.hpp"
#include "flexload/forward.hpp"
#include "flexload/gp.hpp"
#include "flexload/identify.hpp"
#include "flexload/model.hpp"

namespace flexload::io {

using json = nlohmann::json;

inline std::string g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    return f;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    return f;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline double parse_double(const std::string& s, int line_no, const std::string& path) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
    }
}

inline long parse_int(const std::string& s, int line_no, const std::string& path) {
    try {
        size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad integer '" + s + "'");
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Fleet model JSON

inline json model_to_json(const AggregateModel& m) {
    json j;
    j["grid"] = {{"T", m.grid.T}, {"dt", m.grid.dt}};
    j["fixed"] = std::vector<double>(m.fixed.begin(), m.fixed.end());
    j["adjustables"] = json::array();
    for (const auto& a : m.adjustables)
        j["adjustables"].push_back({{"p_lo", a.p_lo},
                                    {"p_hi", a.p_hi},
                                    {"r_lo", a.r_lo},
                                    {"r_hi", a.r_hi},
                                    {"c", a.c},
                                    {"p_expect", std::vector<double>(a.p_expect.begin(),
                                                                     a.p_expect.end())}});
    j["storages"] = json::array();
    for (const auto& s : m.storages)
        j["storages"].push_back({{"p_lo", s.p_lo},
                                 {"p_hi", s.p_hi},
                                 {"e_lo", s.e_lo},
                                 {"e_hi", s.e_hi},
                                 {"e0", s.e0},
                                 {"sigma", s.sigma}});
    return j;
}

inline AggregateModel model_from_json(const json& j) {
    AggregateModel m;
    m.grid.T = j.at("grid").at("T").get<int>();
    m.grid.dt = j.at("grid").at("dt").get<double>();
    const auto fixed = j.at("fixed").get<std::vector<double>>();
    m.fixed = Eigen::Map<const Vec>(fixed.data(), static_cast<Eigen::Index>(fixed.size()));
    for (const auto& ja : j.value("adjustables", json::array())) {
        AdjustableParams a;
        a.p_lo = ja.at("p_lo").get<double>();
        a.p_hi = ja.at("p_hi").get<double>();
        a.r_lo = ja.at("r_lo").get<double>();
        a.r_hi = ja.at("r_hi").get<double>();
        a.c = ja.value("c", 0.0);
        const auto pe = ja.value("p_expect", std::vector<double>(m.grid.T, 0.0));
        a.p_expect = Eigen::Map<const Vec>(pe.data(), static_cast<Eigen::Index>(pe.size()));
        m.adjustables.push_back(std::move(a));
    }
    for (const auto& js : j.value("storages", json::array())) {
        StorageParams s;
        s.p_lo = js.at("p_lo").get<double>();
        s.p_hi = js.at("p_hi").get<double>();
        s.e_lo = js.at("e_lo").get<double>();
        s.e_hi = js.at("e_hi").get<double>();
        s.e0 = js.at("e0").get<double>();
        s.sigma = js.at("sigma").get<double>();
        m.storages.push_back(s);
    }
    return m;
}

inline void save_model(const std::string& path, const AggregateModel& m) {
    detail::open_out(path) << model_to_json(m).dump(2) << '\n';
}

inline AggregateModel load_model(const std::string& path) {
    json j;
    detail::open_in(path) >> j;
    return model_from_json(j);
}

// ---------------------------------------------------------------------------
// Price CSV

inline void save_prices_csv(const std::string& path, const std::vector<PriceSignal>& days) {
    auto f = detail::open_out(path);
    f << "day,t,lambda,lambda_hat\n";
    for (size_t d = 0; d < days.size(); ++d)
        for (Eigen::Index t = 0; t < days[d].lambda.size(); ++t)
            f << d << ',' << t << ',' << g17(days[d].lambda[t]) << ','
              << g17(days[d].lambda_hat[t]) << '\n';
}

inline std::vector<PriceSignal> load_prices_csv(const std::string& path) {
    auto f = detail::open_in(path);
    std::string line;
    int line_no = 0;
    if (!std::getline(f, line)) throw ParseError(path + ": empty file");
    ++line_no;
    const bool has_hat = line == "day,t,lambda,lambda_hat";
    if (!has_hat && line != "day,t,lambda")
        throw ParseError(path + ":1: expected header day,t,lambda[,lambda_hat]");
    std::vector<std::vector<double>> lam, hat;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = detail::split_csv(line);
        if (fields.size() != (has_hat ? 4u : 3u))
            throw ParseError(path + ":" + std::to_string(line_no) + ": wrong field count");
        const long day = detail::parse_int(fields[0], line_no, path);
        const long t = detail::parse_int(fields[1], line_no, path);
        if (day < 0 || day > static_cast<long>(lam.size()))
            throw ParseError(path + ":" + std::to_string(line_no) + ": days must be contiguous");
        if (day == static_cast<long>(lam.size())) {
            lam.emplace_back();
            hat.emplace_back();
        }
        if (t != static_cast<long>(lam[day].size()))
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": periods must be contiguous from 0");
        lam[day].push_back(detail::parse_double(fields[2], line_no, path));
        hat[day].push_back(has_hat ? detail::parse_double(fields[3], line_no, path)
                                   : lam[day].back());
    }
    if (lam.empty()) throw ParseError(path + ": no data rows");
    std::vector<PriceSignal> out;
    for (size_t d = 0; d < lam.size(); ++d) {
        if (lam[d].size() != lam[0].size())
            throw ParseError(path + ": day " + std::to_string(d) + " has inconsistent length");
        PriceSignal s;
        s.lambda = Eigen::Map<const Vec>(lam[d].data(), static_cast<Eigen::Index>(lam[d].size()));
        s.lambda_hat =
            Eigen::Map<const Vec>(hat[d].data(), static_cast<Eigen::Index>(hat[d].size()));
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset CSV

inline void save_dataset_csv(const std::string& path,
                             const std::vector<ident::ResponseSample>& samples) {
    auto f = detail::open_out(path);
    f << "day,t,lambda,lambda_hat,p_obs,p_fix_pred\n";
    for (size_t d = 0; d < samples.size(); ++d) {
        const auto& s = samples[d];
        for (Eigen::Index t = 0; t < s.p_obs.size(); ++t)
            f << d << ',' << t << ',' << g17(s.prices.lambda[t]) << ','
              << g17(s.prices.lambda_hat[t]) << ',' << g17(s.p_obs[t]) << ','
              << g17(s.p_fix_pred[t]) << '\n';
    }
}

inline std::vector<ident::ResponseSample> load_dataset_csv(const std::string& path) {
    auto f = detail::open_in(path);
    std::string line;
    int line_no = 0;
    if (!std::getline(f, line) || line != "day,t,lambda,lambda_hat,p_obs,p_fix_pred")
        throw ParseError(path + ":1: expected dataset header");
    ++line_no;
    std::vector<std::vector<std::array<double, 4>>> rows;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = detail::split_csv(line);
        if (fields.size() != 6)
            throw ParseError(path + ":" + std::to_string(line_no) + ": wrong field count");
        const long day = detail::parse_int(fields[0], line_no, path);
        const long t = detail::parse_int(fields[1], line_no, path);
        if (day < 0 || day > static_cast<long>(rows.size()))
            throw ParseError(path + ":" + std::to_string(line_no) + ": days must be contiguous");
        if (day == static_cast<long>(rows.size())) rows.emplace_back();
        if (t != static_cast<long>(rows[day].size()))
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": periods must be contiguous from 0");
        rows[day].push_back({detail::parse_double(fields[2], line_no, path),
                             detail::parse_double(fields[3], line_no, path),
                             detail::parse_double(fields[4], line_no, path),
                             detail::parse_double(fields[5], line_no, path)});
    }
    if (rows.empty()) throw ParseError(path + ": no data rows");
    std::vector<ident::ResponseSample> out;
    for (const auto& day_rows : rows) {
        const int T = static_cast<int>(day_rows.size());
        ident::ResponseSample s;
        s.prices.lambda = Vec(T);
        s.prices.lambda_hat = Vec(T);
        s.p_obs = Vec(T);
        s.p_fix_pred = Vec(T);
        for (int t = 0; t < T; ++t) {
            s.prices.lambda[t] = day_rows[t][0];
            s.prices.lambda_hat[t] = day_rows[t][1];
            s.p_obs[t] = day_rows[t][2];
            s.p_fix_pred[t] = day_rows[t][3];
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimization trace CSV

inline void save_trace_csv(const std::string& path, const bayopt::OptTrace& trace) {
    auto f = detail::open_out(path);
    f << "iteration,phase,f,best_f,ei\n";
    double best = kInf;
    for (size_t i = 0; i < trace.iterations.size(); ++i) {
        const auto& it = trace.iterations[i];
        if (!it.failed) best = std::min(best, it.f);
        f << i << ',' << (it.phase == bayopt::Phase::Classic ? "classic" : "fast") << ','
          << g17(it.f) << ',' << g17(best) << ',' << g17(it.ei) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Response CSV

inline void save_response_csv(const std::string& path, const AggregateModel& m,
                              const ResponseResult& r) {
    auto f = detail::open_out(path);
    f << "t,p_agg,p_fix";
    for (size_t j = 0; j < r.p_adj.size(); ++j) f << ",p_adj_" << j;
    for (size_t i = 0; i < r.p_str.size(); ++i) f << ",p_str_" << i;
    for (size_t i = 0; i < r.e_str.size(); ++i) f << ",e_str_" << i;
    f << '\n';
    for (int t = 0; t < m.grid.T; ++t) {
        f << t << ',' << g17(r.p_agg[t]) << ',' << g17(m.fixed[t]);
        for (const auto& p : r.p_adj) f << ',' << g17(p[t]);
        for (const auto& p : r.p_str) f << ',' << g17(p[t]);
        for (const auto& e : r.e_str) f << ',' << g17(e[t]);
        f << '\n';
    }
}

// ---------------------------------------------------------------------------
// Posterior slice CSV

inline void save_slice_csv(const std::string& path, const std::vector<std::string>& dim_names,
                           const std::vector<ident::SlicePoint>& grid) {
    auto f = detail::open_out(path);
    for (const auto& name : dim_names) f << name << ',';
    f << "mean,sd\n";
    for (const auto& p : grid) {
        for (Eigen::Index k = 0; k < p.coords.size(); ++k) f << g17(p.coords[k]) << ',';
        f << g17(p.mean) << ',' << g17(p.sd) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Gap statistics CSV

inline void save_gap_csv(const std::string& path, const std::vector<ident::GapStats>& stats) {
    auto f = detail::open_out(path);
    f << "n,mean_gap,se_gap,var_gap,target,theta_dev,beta\n";
    for (const auto& s : stats) {
        f << s.n_samples << ',' << g17(s.mean_gap) << ',' << g17(s.se_gap) << ','
          << g17(s.var_gap) << ',' << g17(s.target) << ',';
        if (s.theta_dev) f << g17(*s.theta_dev);
        f << ',';
        if (s.beta) f << g17(*s.beta);
        f << '\n';
    }
}

// ---------------------------------------------------------------------------
// GP state snapshot (factors are rebuilt on load)

inline void save_gp_state(const std::string& path, const gp::GPState& s) {
    json j;
    j["points"] = json::array();
    for (const auto& x : s.x) j["points"].push_back(std::vector<double>(x.begin(), x.end()));
    j["y"] = std::vector<double>(s.y.begin(), s.y.end());
    j["eta"] = {{"alpha", s.eta.alpha}, {"beta", s.eta.beta}, {"eps", s.eta.eps}};
    detail::open_out(path) << j.dump(2) << '\n';
}

inline gp::GPState load_gp_state(const std::string& path) {
    json j;
    detail::open_in(path) >> j;
    std::vector<Vec> x;
    for (const auto& p : j.at("points")) {
        const auto v = p.get<std::vector<double>>();
        x.push_back(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    const auto yv = j.at("y").get<std::vector<double>>();
    const Vec y = Eigen::Map<const Vec>(yv.data(), static_cast<Eigen::Index>(yv.size()));
    gp::Hyperparams eta{j.at("eta").at("alpha").get<double>(),
                        j.at("eta").at("beta").get<double>(),
                        j.at("eta").at("eps").get<double>()};
    return gp::gp_fit(std::move(x), y, eta);
}

// ---------------------------------------------------------------------------
// Theta JSON

inline json theta_to_json(const ThetaVector& t) {
    json j;
    j["values"] = std::vector<double>(t.values.begin(), t.values.end());
    j["box_lo"] = std::vector<double>(t.box_lo.begin(), t.box_lo.end());
    j["box_hi"] = std::vector<double>(t.box_hi.begin(), t.box_hi.end());
    j["layout"] = json::array();
    for (const auto& e : t.layout)
        j["layout"].push_back(
            {{"kind", e.kind == ComponentKind::Storage ? "storage" : "adjustable"},
             {"index", e.index},
             {"param", e.param}});
    return j;
}

inline void write_json(const std::string& path, const json& j) {
    detail::open_out(path) << j.dump(2) << '\n';
}

} // namespace flexload::io
