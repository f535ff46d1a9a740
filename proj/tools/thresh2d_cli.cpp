#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <complex>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "thresh2d/config.hpp"
#include "thresh2d/kernelbounds.hpp"
#include "thresh2d/oscint.hpp"
#include "thresh2d/waveop.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using cplx = std::complex<double>;
using namespace thresh2d;

namespace {

enum Exit { ok = 0, bad_config = 1, uncertain = 2, missing_prerequisite = 3, failure = 4 };

class prerequisite_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

const std::vector<std::string> kTargets{"Js", "Jpp", "Jp", "lp-kernels", "bracket", "swave", "d3", "error"};

struct Context {
    config::RunConfig cfg;
    std::string hash;
    fs::path out;
    int jobs = 0;
};

std::string header(const Context& c) {
    return std::string("# ") + config::tool_name + " " + config::tool_version + " config_hash " + c.hash + "\n";
}

json provenance(const Context& c) {
    json p;
    p["tool"] = config::tool_name;
    p["version"] = config::tool_version;
    p["config_hash"] = c.hash;
    p["grid"] = {{"R", c.cfg.R}, {"n_r", c.cfg.n_r}, {"n_theta", c.cfg.n_theta}};
    p["lambda1"] = c.cfg.lambda1;
    return p;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

void write_json(const Context& c, const std::string& name, const json& body) {
    json j;
    j["provenance"] = provenance(c);
    for (const auto& [k, v] : body.items()) j[k] = v;
    write_file(c.out / name, j.dump(2) + "\n");
}

std::optional<json> read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) return std::nullopt;
    try {
        return json::parse(f);
    } catch (const json::parse_error&) {
        return std::nullopt;
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

json cplx_json(cplx z) { return json::array({z.real(), z.imag()}); }

// ---------------------------------------------------------------------------
// problem setup

struct Problem {
    discretize::PotentialSpec spec;
    std::optional<operators::CriticalCoupling> critical;
    std::unique_ptr<operators::ThresholdOperators> ops;
};

Problem build_problem(const config::RunConfig& cfg) {
    Problem p;
    const auto grid = discretize::build_polar_grid(cfg.R, cfg.n_r, cfg.n_theta);
    p.spec = cfg.potential;
    if (cfg.critical) {
        p.critical = operators::find_critical_coupling(p.spec, grid, cfg.channel, cfg.crossing);
        p.spec.coupling = p.critical->coupling;
    }
    p.ops = std::make_unique<operators::ThresholdOperators>(discretize::sample_potential(p.spec, grid));
    return p;
}

/// The classification artifact, checked against the current config and, if given, the kind.
json require_classification(const Context& c, const std::string& command, std::optional<operators::ThresholdKind> need) {
    const auto path = c.out / "classify.json";
    const std::string run = "run `classify` with this config first";
    const auto j = read_json(path);
    if (!j) throw prerequisite_error(command + " needs the output of `classify` (" + path.string() + " not found); " + run);
    if ((*j)["provenance"].value("config_hash", "") != c.hash)
        throw prerequisite_error(command + ": " + path.string() + " was written by `classify` for a different config; " + run);
    if (j->value("status", "") != "ok") throw prerequisite_error(command + ": the last `classify` run was uncertain; no usable classification");
    if (need && j->value("kind", "") != operators::to_string(*need))
        throw prerequisite_error(command + " needs `classify` to report " + operators::to_string(*need) + ", found " +
                                 j->value("kind", "?"));
    return *j;
}

// ---------------------------------------------------------------------------
// classify

int cmd_classify(const Context& c) {
    const auto p = build_problem(c.cfg);
    json body;
    body["command"] = "classify";
    body["coupling"] = p.spec.coupling;
    if (p.critical)
        body["critical"] = {{"channel", p.critical->channel},
                            {"crossing", p.critical->crossing},
                            {"iterations", p.critical->iterations},
                            {"bracket_width", p.critical->bracket_width}};
    operators::Hierarchy h;
    try {
        h = operators::riesz_hierarchy(*p.ops, c.cfg.rank_tol);
    } catch (const classification_uncertain& e) {
        body["status"] = "uncertain";
        body["message"] = e.what();
        write_json(c, "classify.json", body);
        write_file(c.out / "classify.txt", header(c) + "status: uncertain\nmessage: " + e.what() + "\n");
        std::cerr << "classification uncertain: " << e.what() << "\n";
        return uncertain;
    }
    const auto& r = h.report;
    body["status"] = "ok";
    body["kind"] = operators::to_string(r.kind);
    body["rank_S1"] = r.rank_S1;
    body["rank_S3"] = r.rank_S3;
    body["smallest_sv_QTQ"] = r.smallest_sv_QTQ;
    body["largest_sv_QTQ"] = r.largest_sv_QTQ;
    body["gap_ratio"] = r.gap_ratio;
    body["tol"] = r.tol;
    body["leading_svs"] = r.leading_svs;
    body["d1_scalar"] = r.d1_scalar ? cplx_json(*r.d1_scalar) : json(nullptr);
    body["t_norm"] = r.t_norm;
    body["b"] = r.b;
    body["v_norm2"] = r.v_norm2;
    json moments = json::array();
    for (const auto& m : r.s1_moments) moments.push_back(json::array({m[0], m[1], m[2]}));
    body["s1_moments"] = moments;
    json eig = json::array();
    for (const auto& e : r.eigenfunctions)
        eig.push_back({{"moment0", e.moment0},
                       {"moment1", e.moment1},
                       {"moment2", e.moment2},
                       {"decay_exponent", e.decay_exponent},
                       {"residual", e.residual}});
    body["eigenfunctions"] = eig;
    write_json(c, "classify.json", body);

    std::ostringstream s;
    s << "kind: " << operators::to_string(r.kind) << "\n"
      << "coupling: " << fmt(p.spec.coupling) << (p.critical ? " (critical)" : "") << "\n"
      << "rank_S1: " << r.rank_S1 << "\nrank_S3: " << r.rank_S3 << "\n"
      << "smallest_sv_QTQ: " << fmt(r.smallest_sv_QTQ) << "\nlargest_sv_QTQ: " << fmt(r.largest_sv_QTQ) << "\n"
      << "gap_ratio: " << fmt(r.gap_ratio) << "\n";
    write_file(c.out / "classify.txt", header(c) + s.str());
    std::cout << s.str();
    return ok;
}

// ---------------------------------------------------------------------------
// bounds

constexpr double kStability = 0.05;

int bounds_osc(const Context& c, oscint::Kind kind) {
    const auto& cfg = c.cfg;
    const oscint::CutoffSpec chi(cfg.lambda1);
    oscint::Options opt;
    opt.rel_tol = cfg.quad_tol;
    oscint::HCoefficient h;
    bool h_from_classify = false;
    if (kind == oscint::Kind::Js) {
        if (const auto j = read_json(c.out / "classify.json");
            j && (*j)["provenance"].value("config_hash", "") == c.hash && j->value("status", "") == "ok") {
            h = {j->value("v_norm2", 1.0), j->value("b", 0.0)};
            h_from_classify = true;
        }
    }
    const oscint::SweepSpec coarse{cfg.osc_lo, cfg.osc_hi, cfg.osc_n, cfg.bound_eps};
    const oscint::SweepSpec fine{cfg.osc_lo, cfg.osc_hi, cfg.osc_fine_n, cfg.bound_eps};
    const auto a = oscint::bound_sweep(kind, coarse, chi, h, opt, c.jobs);
    const auto b = oscint::bound_sweep(kind, fine, chi, h, opt, c.jobs);
    const double change = std::abs(b.C - a.C) / a.C;

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u(std::log(cfg.osc_lo), std::log(cfg.osc_hi));
    double spot = 0.0;
    for (int i = 0; i < cfg.osc_samples; ++i) {
        const double r = std::exp(u(rng)), s = std::exp(u(rng));
        const cplx x = oscint::osc_integral(kind, r, s, chi, h, opt), y = oscint::brute_force_integral(kind, r, s, chi, h);
        spot = std::max(spot, std::abs(x - y) / std::max(std::abs(y), 1e-300));
    }
    const double spot_tol = std::max(1e-9, 10.0 * cfg.quad_tol);

    json body;
    body["command"] = "bounds";
    body["target"] = oscint::to_string(kind);
    body["C"] = a.C;
    body["C_refined"] = b.C;
    body["change"] = change;
    body["argmax"] = {{"r", a.r[a.argmax]}, {"s", a.s[a.argmax]}};
    body["spot_checks"] = cfg.osc_samples;
    body["spot_max_rel_error"] = spot;
    if (kind == oscint::Kind::Js) {
        oscint::HCoefficient shifted = h;
        shifted.b += 1.0;
        const double cb = oscint::bound_sweep(kind, coarse, chi, shifted, opt, c.jobs).C;
        body["h"] = {{"v_norm2", h.v_norm2}, {"b", h.b}, {"from_classify", h_from_classify}};
        body["dC_db"] = cb - a.C;
    }
    const bool passed = std::isfinite(a.C) && a.C > 0.0 && change < kStability && spot <= spot_tol;
    body["passed"] = passed;
    const std::string name = "bounds_" + oscint::to_string(kind);
    write_json(c, name + ".json", body);
    std::ostringstream csv;
    csv << header(c);
    oscint::write_csv(csv, a);
    write_file(c.out / (name + ".csv"), csv.str());

    std::cout << "bounds " << oscint::to_string(kind) << ": C = " << fmt(a.C) << " (refined " << fmt(b.C) << ", change "
              << fmt(100.0 * change) << "%), spot error " << fmt(spot);
    if (kind == oscint::Kind::Js) std::cout << ", dC/db = " << fmt(body["dC_db"].get<double>());
    std::cout << ", " << (passed ? "PASS" : "FAIL") << "\n";
    return ok;
}

int bounds_lp(const Context& c) {
    const auto& cfg = c.cfg;
    json body;
    body["command"] = "bounds";
    body["target"] = "lp-kernels";
    body["p"] = cfg.lp_exponents;
    body["radii"] = cfg.lp_radii;
    std::ostringstream csv;
    csv << header(c) << "kernel,R,p,norm\n" << std::setprecision(12);
    bool all = true;
    json kernels = json::object();
    for (const std::string k : {"K1", "K2"}) {
        const auto chk = kernelbounds::lp_kernel_lemma_check(k, cfg.lp_exponents, cfg.lp_radii, 0.1, 0.1, 16, c.jobs);
        for (const auto& r : chk.per_radius)
            for (std::size_t i = 0; i < r.p.size(); ++i) csv << k << ',' << r.R << ',' << r.p[i] << ',' << r.norm[i] << '\n';
        kernels[k] = {{"max_change", chk.max_change}, {"stable", chk.stable}};
        all = all && chk.stable;
        std::cout << "bounds lp-kernels " << k << ": max change";
        for (std::size_t i = 0; i < chk.max_change.size(); ++i)
            std::cout << " p=" << cfg.lp_exponents[i] << ":" << fmt(100.0 * chk.max_change[i]) << "%";
        std::cout << ", " << (chk.stable ? "PASS" : "FAIL") << "\n";
    }
    body["kernels"] = kernels;
    body["passed"] = all;
    write_json(c, "bounds_lp-kernels.json", body);
    write_file(c.out / "bounds_lp-kernels.csv", csv.str());
    return ok;
}

int bounds_bracket(const Context& c) {
    const auto& cfg = c.cfg;
    const auto b = kernelbounds::bracket_decay_check(cfg.bracket_alpha, cfg.bracket_beta, kernelbounds::default_bracket_samples(), 0.05, c.jobs);
    json body;
    body["command"] = "bounds";
    body["target"] = "bracket";
    body["alpha"] = b.alpha;
    body["beta"] = b.beta;
    body["predicted"] = b.predicted;
    body["fitted"] = b.fitted;
    body["at_origin"] = b.at_origin;
    body["passed"] = b.passed;
    write_json(c, "bounds_bracket.json", body);
    std::ostringstream csv;
    csv << header(c) << "x,value\n" << std::setprecision(12);
    for (std::size_t i = 0; i < b.x.size(); ++i) csv << b.x[i] << ',' << b.value[i] << '\n';
    write_file(c.out / "bounds_bracket.csv", csv.str());
    std::cout << "bounds bracket: alpha = " << fmt(b.alpha) << ", beta = " << fmt(b.beta) << ", fitted " << fmt(b.fitted) << " vs "
              << fmt(b.predicted) << ", " << (b.passed ? "PASS" : "FAIL") << "\n";
    return ok;
}

waveop::CheckConfig check_config(const Context& c) {
    const auto& cfg = c.cfg;
    waveop::CheckConfig k;
    k.coarse = {cfg.wave_lo, cfg.wave_hi, cfg.wave_n, cfg.wave_angles};
    k.fine = {cfg.wave_lo, cfg.wave_hi, cfg.wave_fine_n, cfg.wave_angles};
    k.stability = kStability;
    k.radii = cfg.lp_radii;
    k.lp_exponents = cfg.lp_exponents;
    k.seed = cfg.seed;
    k.jobs = c.jobs;
    return k;
}

json term_json(const waveop::TermCheck& t) {
    json j;
    j["term"] = waveop::to_string(t.label);
    j["C"] = t.refinement.coarse;
    j["C_refined"] = t.refinement.fine;
    j["change"] = t.refinement.change;
    j["decay_exponent"] = t.decay.exponent;
    j["identity_error"] = t.identity_error;
    j["route_error"] = t.route_error;
    if (t.admissibility)
        j["admissibility"] = {{"row_slope", t.admissibility->row_slope},
                              {"col_slope", t.admissibility->col_slope},
                              {"admissible", t.admissibility->admissible}};
    if (t.lp) j["lp_max_change"] = t.lp->max_change;
    if (t.geometric) j["geometric_constant"] = *t.geometric;
    if (t.gbounds) j["g_bound_ratios"] = {t.gbounds->ratio[0], t.gbounds->ratio[1], t.gbounds->ratio[2]};
    j["failures"] = t.failures;
    j["passed"] = t.passed();
    return j;
}

int bounds_wave(const Context& c, const std::string& which) {
    const std::string command = "bounds " + which;
    std::optional<operators::ThresholdKind> need;
    if (which == "swave") need = operators::ThresholdKind::SWaveResonance;
    if (which == "d3") need = operators::ThresholdKind::EigenvalueOnly;
    const json cls = require_classification(c, command, need);

    const auto p = build_problem(c.cfg);
    auto h = operators::riesz_hierarchy(*p.ops, c.cfg.rank_tol);
    if (operators::to_string(h.report.kind) != cls.value("kind", ""))
        throw consistency_error(command + ": recomputed classification " + operators::to_string(h.report.kind) +
                                " disagrees with classify.json; rerun `classify`");
    const waveop::Assembler as(*p.ops, std::move(h), oscint::CutoffSpec(c.cfg.lambda1));
    const auto k = check_config(c);

    std::vector<waveop::TermCheck> checks;
    if (which == "swave") {
        checks.push_back(waveop::swave_bound_check(as, waveop::Label::SWaveLeading, k, c.cfg.kbound_eps));
        checks.push_back(waveop::swave_bound_check(as, waveop::Label::QD0Q, k, c.cfg.kbound_eps));
    } else if (which == "d3") {
        checks.push_back(waveop::d3_bound_check(as, k, c.cfg.d3_eps));
    } else {
        checks.push_back(waveop::error_term_check(as, waveop::default_error_operator(*p.ops), c.cfg.error_ell, k));
    }

    json body;
    body["command"] = "bounds";
    body["target"] = which;
    body["kind"] = cls.value("kind", "");
    json terms = json::array();
    bool all = true;
    std::ostringstream csv;
    csv << header(c) << "term,x,y,angle,abs_A,majorant,ratio\n" << std::setprecision(12);
    for (const auto& t : checks) {
        terms.push_back(term_json(t));
        all = all && t.passed();
        const auto& s = t.sweep;
        const std::string label = waveop::to_string(t.label);
        for (std::size_t i = 0; i < s.size(); ++i)
            csv << label << ',' << s.x_radius[i] << ',' << s.y_radius[i] << ',' << s.angle[i] << ',' << std::abs(s.value[i]) << ','
                << s.majorant[i] << ',' << s.ratio[i] << '\n';
        std::cout << command << " " << label << ": C = " << fmt(t.refinement.coarse) << " (refined " << fmt(t.refinement.fine)
                  << ", change " << fmt(100.0 * t.refinement.change) << "%), decay " << fmt(t.decay.exponent) << ", identities "
                  << fmt(t.identity_error) << ", " << (t.passed() ? "PASS" : "FAIL") << "\n";
        for (const auto& f : t.failures) std::cout << "  " << f << "\n";
    }
    body["terms"] = terms;
    body["passed"] = all;
    write_json(c, "bounds_" + which + ".json", body);
    write_file(c.out / ("bounds_" + which + ".csv"), csv.str());
    return ok;
}

int cmd_bounds(const Context& c, const std::string& which) {
    if (which == "Js" || which == "Jpp" || which == "Jp") return bounds_osc(c, oscint::kind_from_string(which));
    if (which == "lp-kernels") return bounds_lp(c);
    if (which == "bracket") return bounds_bracket(c);
    return bounds_wave(c, which);
}

// ---------------------------------------------------------------------------
// report

std::string timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) return config::format_double(v.get<double>());
    return v.dump();
}

int cmd_report(const Context& c) {
    const json cls = require_classification(c, "report", std::nullopt);
    std::vector<std::pair<std::string, json>> entries;
    std::vector<std::string> stale;
    for (const auto& t : kTargets) {
        const auto j = read_json(c.out / ("bounds_" + t + ".json"));
        if (!j) continue;
        if ((*j)["provenance"].value("config_hash", "") != c.hash) {
            stale.push_back(t);
            continue;
        }
        entries.emplace_back(t, *j);
    }

    std::ostringstream m;
    m << "tool: " << config::tool_name << " " << config::tool_version << "\n"
      << "config_hash: " << c.hash << "\n"
      << "timestamp: " << timestamp() << "\n"
      << "grid: R=" << config::format_double(c.cfg.R) << " n_r=" << c.cfg.n_r << " n_theta=" << c.cfg.n_theta << "\n"
      << "lambda1: " << config::format_double(c.cfg.lambda1) << "\n"
      << "entries: classify";
    for (const auto& [t, j] : entries) m << " " << t;
    m << "\n";
    if (!stale.empty()) {
        m << "stale:";
        for (const auto& t : stale) m << " " << t;
        m << "\n";
    }
    m << "classify.kind: " << cls.value("kind", "") << "\n"
      << "classify.coupling: " << scalar(cls["coupling"]) << "\n"
      << "classify.rank_S1: " << scalar(cls["rank_S1"]) << "\n"
      << "classify.rank_S3: " << scalar(cls["rank_S3"]) << "\n"
      << "classify.file: classify.json\n";
    for (const auto& [t, j] : entries) {
        if (j.contains("terms")) {
            for (const auto& term : j["terms"]) {
                const std::string pre = t + "." + term.value("term", "?");
                m << pre << ".C: " << scalar(term["C"]) << "\n" << pre << ".change: " << scalar(term["change"]) << "\n";
            }
        } else {
            for (const char* key : {"C", "change", "dC_db", "fitted", "predicted"})
                if (j.contains(key)) m << t << "." << key << ": " << scalar(j[key]) << "\n";
        }
        m << t << ".passed: " << scalar(j["passed"]) << "\n" << t << ".file: bounds_" << t << ".csv\n";
    }
    write_file(c.out / "manifest.txt", m.str());
    std::cout << m.str();
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-energy threshold numerics for 2D Schroedinger operators"};
    app.fallthrough();
    app.require_subcommand(1);
    std::string config_path, out_dir;
    int jobs = 0;
    std::optional<double> lambda1, tol;
    app.add_option("--config", config_path, "run configuration file")->required();
    app.add_option("--out", out_dir, "output directory (overrides run.out)");
    app.add_option("--jobs", jobs, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
    app.add_option("--lambda1", lambda1, "cutoff scale (overrides cutoff.lambda1)");
    app.add_option("--tol", tol, "rank tolerance (overrides tolerances.rank)");
    auto* classify = app.add_subcommand("classify", "classify the threshold and write classify.json");
    auto* bounds = app.add_subcommand("bounds", "run one bound sweep");
    std::string which;
    bounds->add_option("which", which, "target")->required()->check(CLI::IsMember(kTargets));
    auto* report = app.add_subcommand("report", "merge artifacts into manifest.txt");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int r = app.exit(e);
        return r == 0 ? ok : bad_config;
    }

    Context c;
    try {
        c.cfg = config::load(config_path);
        if (lambda1) c.cfg.lambda1 = *lambda1;
        if (tol) c.cfg.rank_tol = *tol;
        if (!out_dir.empty()) c.cfg.out_dir = out_dir;
        config::validate(c.cfg);
    } catch (const config_error& e) {
        std::cerr << config_path << ": " << e.what() << "\n";
        return bad_config;
    }
    c.hash = config::config_hash(c.cfg);
    c.out = c.cfg.out_dir;
    c.jobs = jobs;
    set_default_jobs(jobs);

    try {
        fs::create_directories(c.out);
        if (classify->parsed()) return cmd_classify(c);
        if (bounds->parsed()) return cmd_bounds(c, which);
        if (report->parsed()) return cmd_report(c);
    } catch (const prerequisite_error& e) {
        std::cerr << "missing prerequisite: " << e.what() << "\n";
        return missing_prerequisite;
    } catch (const classification_uncertain& e) {
        std::cerr << "classification uncertain: " << e.what() << "\n";
        return uncertain;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return failure;
    }
    return ok;
}
