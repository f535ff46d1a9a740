#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "thresh2d/discretize.hpp"
#include "thresh2d/errors.hpp"

namespace thresh2d::config {

inline constexpr const char* tool_name = "thresh2d";
inline constexpr const char* tool_version = "1.0.0";

struct RunConfig {
    discretize::PotentialSpec potential;
    bool critical = false;  // coupling = critical: tune to the crossing-th zero in `channel`
    int channel = 0;
    int crossing = 1;

    double R = 8.0;
    int n_r = 24, n_theta = 16;

    double lambda1 = 0.1;
    double rank_tol = 1e-8;
    double quad_tol = 1e-9;
    double bound_eps = 0.01;

    // oscillatory sweeps over [lo, hi]^2
    double osc_lo = 0.1, osc_hi = 200.0;
    int osc_n = 40, osc_fine_n = 79;
    int osc_samples = 2;  // brute-force spot checks

    std::vector<double> lp_exponents{1.0, 2.0, 8.0};
    std::vector<double> lp_radii{15.0, 30.0, 60.0};
    double bracket_alpha = 3.0, bracket_beta = 3.0;

    double wave_lo = 0.5, wave_hi = 100.0;
    int wave_n = 73, wave_fine_n = 145, wave_angles = 8;
    double kbound_eps = 0.25;
    double d3_eps = 0.1;
    double error_ell = 1.5;

    std::uint64_t seed = 7;
    std::string out_dir = "out";
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string where(int line, const std::string& field) {
    std::ostringstream os;
    if (line > 0) os << "line " << line << ": ";
    os << field;
    return os.str();
}

inline double to_double(const std::string& v, int line, const std::string& field) {
    std::size_t pos = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size() || !std::isfinite(d))
        throw config_error(line, field, where(line, field) + ": expected a number, got '" + v + "'");
    return d;
}

inline long long to_integer(const std::string& v, int line, const std::string& field) {
    std::size_t pos = 0;
    long long n = 0;
    try {
        n = std::stoll(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw config_error(line, field, where(line, field) + ": expected an integer, got '" + v + "'");
    return n;
}

inline int to_int(const std::string& v, int line, const std::string& field) {
    const long long n = to_integer(v, line, field);
    if (n < -1000000000LL || n > 1000000000LL) throw config_error(line, field, where(line, field) + ": integer out of range");
    return static_cast<int>(n);
}

inline std::vector<double> to_list(const std::string& v, int line, const std::string& field) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item), line, field));
    if (out.empty()) throw config_error(line, field, where(line, field) + ": empty list");
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, int, const std::string&)>;

inline const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto num = [](double RunConfig::*m) {
            return [m](RunConfig& c, const std::string& v, int l, const std::string& f) { c.*m = to_double(v, l, f); };
        };
        auto integer = [](int RunConfig::*m) {
            return [m](RunConfig& c, const std::string& v, int l, const std::string& f) { c.*m = to_int(v, l, f); };
        };
        auto list = [](std::vector<double> RunConfig::*m) {
            return [m](RunConfig& c, const std::string& v, int l, const std::string& f) { c.*m = to_list(v, l, f); };
        };
        t["potential.family"] = [](RunConfig& c, const std::string& v, int l, const std::string& f) {
            try {
                c.potential.family = discretize::family_from_string(v);
            } catch (const std::invalid_argument& e) {
                throw config_error(l, f, where(l, f) + ": " + e.what());
            }
        };
        t["potential.coupling"] = [](RunConfig& c, const std::string& v, int l, const std::string& f) {
            if (v == "critical") {
                c.critical = true;
                c.potential.coupling = 0.0;
            } else {
                c.critical = false;
                c.potential.coupling = to_double(v, l, f);
            }
        };
        t["potential.beta"] = [](RunConfig& c, const std::string& v, int l, const std::string& f) { c.potential.beta = to_double(v, l, f); };
        t["potential.width"] = [](RunConfig& c, const std::string& v, int l, const std::string& f) { c.potential.width = to_double(v, l, f); };
        t["potential.center"] = [](RunConfig& c, const std::string& v, int l, const std::string& f) {
            const auto p = to_list(v, l, f);
            if (p.size() != 2) throw config_error(l, f, where(l, f) + ": expected two coordinates");
            c.potential.center = {p[0], p[1]};
        };
        t["potential.perturbation"] = [](RunConfig& c, const std::string& v, int l, const std::string& f) {
            c.potential.perturbation = to_double(v, l, f);
        };
        t["potential.perturbation_mode"] = [](RunConfig& c, const std::string& v, int l, const std::string& f) {
            c.potential.perturbation_mode = to_int(v, l, f);
        };
        t["potential.channel"] = integer(&RunConfig::channel);
        t["potential.crossing"] = integer(&RunConfig::crossing);
        t["grid.R"] = num(&RunConfig::R);
        t["grid.n_r"] = integer(&RunConfig::n_r);
        t["grid.n_theta"] = integer(&RunConfig::n_theta);
        t["cutoff.lambda1"] = num(&RunConfig::lambda1);
        t["tolerances.rank"] = num(&RunConfig::rank_tol);
        t["tolerances.quadrature"] = num(&RunConfig::quad_tol);
        t["tolerances.bound_eps"] = num(&RunConfig::bound_eps);
        t["oscint.lo"] = num(&RunConfig::osc_lo);
        t["oscint.hi"] = num(&RunConfig::osc_hi);
        t["oscint.n"] = integer(&RunConfig::osc_n);
        t["oscint.n_fine"] = integer(&RunConfig::osc_fine_n);
        t["oscint.samples"] = integer(&RunConfig::osc_samples);
        t["kernels.p"] = list(&RunConfig::lp_exponents);
        t["kernels.radii"] = list(&RunConfig::lp_radii);
        t["kernels.alpha"] = num(&RunConfig::bracket_alpha);
        t["kernels.beta"] = num(&RunConfig::bracket_beta);
        t["waveop.lo"] = num(&RunConfig::wave_lo);
        t["waveop.hi"] = num(&RunConfig::wave_hi);
        t["waveop.n"] = integer(&RunConfig::wave_n);
        t["waveop.n_fine"] = integer(&RunConfig::wave_fine_n);
        t["waveop.angles"] = integer(&RunConfig::wave_angles);
        t["waveop.kbound_eps"] = num(&RunConfig::kbound_eps);
        t["waveop.d3_eps"] = num(&RunConfig::d3_eps);
        t["waveop.error_ell"] = num(&RunConfig::error_ell);
        t["run.seed"] = [](RunConfig& c, const std::string& v, int l, const std::string& f) {
            const long long n = to_integer(v, l, f);
            if (n < 0) throw config_error(l, f, where(l, f) + ": seed must be non-negative");
            c.seed = static_cast<std::uint64_t>(n);
        };
        t["run.out"] = [](RunConfig& c, const std::string& v, int l, const std::string& f) {
            if (v.empty()) throw config_error(l, f, where(l, f) + ": empty path");
            c.out_dir = v;
        };
        return t;
    }();
    return table;
}

inline const std::vector<std::string>& required_keys() {
    static const std::vector<std::string> k{"potential.family", "potential.coupling", "potential.beta", "grid.R", "grid.n_r", "grid.n_theta"};
    return k;
}

inline void require(bool ok, const std::string& field, const std::string& msg) {
    if (!ok) throw config_error(0, field, field + ": " + msg);
}

inline void check_sweep(double lo, double hi, int n, int fine, const std::string& sec) {
    require(lo > 0.0, sec + ".lo", "must be positive");
    require(hi > lo, sec + ".hi", "must exceed " + sec + ".lo");
    require(n >= 2, sec + ".n", "need at least 2 points");
    require(fine > n, sec + ".n_fine", "must exceed " + sec + ".n");
}

}  // namespace detail

/// Invariants that span several fields or survive command-line overrides.
inline void validate(const RunConfig& c) {
    using detail::require;
    require(c.potential.beta > 0.0, "potential.beta", "must be positive");
    require(c.potential.width > 0.0, "potential.width", "must be positive");
    require(c.critical || c.potential.coupling >= 0.0, "potential.coupling", "must be non-negative or 'critical'");
    require(!c.critical || c.potential.family != discretize::Family::Zero, "potential.coupling", "cannot tune the zero potential");
    require(c.channel >= 0, "potential.channel", "must be non-negative");
    require(c.crossing >= 1, "potential.crossing", "must be at least 1");
    require(c.R > 1.0, "grid.R", "must exceed 1");
    require(c.n_r >= 2, "grid.n_r", "need at least 2 radial nodes");
    require(c.n_theta >= 4, "grid.n_theta", "need at least 4 angular nodes");
    require(c.lambda1 > 0.0 && c.lambda1 < 0.5, "cutoff.lambda1", "must lie in (0, 1/2)");
    require(c.rank_tol > 0.0, "tolerances.rank", "must be positive");
    require(c.rank_tol >= 1e-12 && c.rank_tol <= 1e-4, "tolerances.rank", "must lie in [1e-12, 1e-4]");
    require(c.quad_tol > 0.0, "tolerances.quadrature", "must be positive");
    require(c.bound_eps > 0.0, "tolerances.bound_eps", "must be positive");
    detail::check_sweep(c.osc_lo, c.osc_hi, c.osc_n, c.osc_fine_n, "oscint");
    require(c.osc_samples >= 0, "oscint.samples", "must be non-negative");
    for (double p : c.lp_exponents) require(p >= 1.0, "kernels.p", "exponents must be >= 1");
    require(c.lp_radii.size() >= 2, "kernels.radii", "need at least two radii");
    for (std::size_t i = 0; i < c.lp_radii.size(); ++i)
        require(c.lp_radii[i] > 1.0 && (i == 0 || c.lp_radii[i] > c.lp_radii[i - 1]), "kernels.radii", "must increase and exceed 1");
    require(c.bracket_alpha > 0.0 && c.bracket_beta > 0.0, "kernels.alpha", "exponents must be positive");
    require(c.bracket_alpha + c.bracket_beta > 2.0, "kernels.beta", "alpha + beta must exceed 2");
    detail::check_sweep(c.wave_lo, c.wave_hi, c.wave_n, c.wave_fine_n, "waveop");
    require(c.wave_angles >= 1, "waveop.angles", "must be positive");
    require(c.kbound_eps > 0.0 && c.kbound_eps < 0.5, "waveop.kbound_eps", "must lie in (0, 1/2)");
    require(c.d3_eps > 0.0, "waveop.d3_eps", "must be positive");
    require(c.error_ell > 1.0, "waveop.error_ell", "must exceed 1");
}

/// Sectioned `key = value` text; `#` starts a comment.
inline RunConfig parse(std::istream& in) {
    RunConfig c;
    std::string section, raw;
    std::set<std::string> seen;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (const auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
        const std::string s = detail::trim(raw);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw config_error(line, "", "line " + std::to_string(line) + ": unterminated section header");
            section = detail::trim(std::string_view(s).substr(1, s.size() - 2));
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw config_error(line, "", "line " + std::to_string(line) + ": expected key = value");
        const std::string key = detail::trim(std::string_view(s).substr(0, eq));
        const std::string value = detail::trim(std::string_view(s).substr(eq + 1));
        const std::string field = section.empty() ? key : section + "." + key;
        const auto it = detail::setters().find(field);
        if (it == detail::setters().end()) throw config_error(line, field, detail::where(line, field) + ": unknown key");
        if (!seen.insert(field).second) throw config_error(line, field, detail::where(line, field) + ": duplicate key");
        if (value.empty()) throw config_error(line, field, detail::where(line, field) + ": missing value");
        it->second(c, value, line, field);
    }
    for (const auto& k : detail::required_keys())
        if (!seen.count(k)) throw config_error(0, k, "missing required field " + k);
    validate(c);
    return c;
}

inline RunConfig parse_string(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
}

inline RunConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error(0, "", "cannot open config file '" + path + "'");
    return parse(f);
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double d) {
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, d);
    return std::string(buf, r.ptr);
}

/// Every setting that can change a result, one per line in a fixed order. The output
/// directory is left out.
inline std::string canonical(const RunConfig& c) {
    std::ostringstream os;
    auto kv = [&](const char* k, const std::string& v) { os << k << '=' << v << '\n'; };
    auto d = [&](const char* k, double v) { kv(k, format_double(v)); };
    auto list = [&](const char* k, const std::vector<double>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
        kv(k, s);
    };
    kv("potential.family", discretize::to_string(c.potential.family));
    kv("potential.coupling", c.critical ? "critical" : format_double(c.potential.coupling));
    d("potential.beta", c.potential.beta);
    d("potential.width", c.potential.width);
    list("potential.center", {c.potential.center.x1, c.potential.center.x2});
    d("potential.perturbation", c.potential.perturbation);
    kv("potential.perturbation_mode", std::to_string(c.potential.perturbation_mode));
    kv("potential.channel", std::to_string(c.channel));
    kv("potential.crossing", std::to_string(c.crossing));
    d("grid.R", c.R);
    kv("grid.n_r", std::to_string(c.n_r));
    kv("grid.n_theta", std::to_string(c.n_theta));
    d("cutoff.lambda1", c.lambda1);
    d("tolerances.rank", c.rank_tol);
    d("tolerances.quadrature", c.quad_tol);
    d("tolerances.bound_eps", c.bound_eps);
    d("oscint.lo", c.osc_lo);
    d("oscint.hi", c.osc_hi);
    kv("oscint.n", std::to_string(c.osc_n));
    kv("oscint.n_fine", std::to_string(c.osc_fine_n));
    kv("oscint.samples", std::to_string(c.osc_samples));
    list("kernels.p", c.lp_exponents);
    list("kernels.radii", c.lp_radii);
    d("kernels.alpha", c.bracket_alpha);
    d("kernels.beta", c.bracket_beta);
    d("waveop.lo", c.wave_lo);
    d("waveop.hi", c.wave_hi);
    kv("waveop.n", std::to_string(c.wave_n));
    kv("waveop.n_fine", std::to_string(c.wave_fine_n));
    kv("waveop.angles", std::to_string(c.wave_angles));
    d("waveop.kbound_eps", c.kbound_eps);
    d("waveop.d3_eps", c.d3_eps);
    d("waveop.error_ell", c.error_ell);
    kv("run.seed", std::to_string(c.seed));
    return os.str();
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string config_hash(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical(c))));
    return buf;
}

}  // namespace thresh2d::config
