#include "bsdelab/harness.hpp"

#include "bsdelab/benchmarks.hpp"
#include "bsdelab/control_valuation.hpp"
#include "bsdelab/parallel.hpp"
#include "bsdelab/representation.hpp"
#include "bsdelab/viscosity.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace bsdelab {

// ---------------------------------------------------------------------------
// Records and reports

Record make_record(std::string metric, double value, std::string comparator, std::optional<double> tolerance) {
    Record r{std::move(metric), value, tolerance, std::move(comparator), true};
    r.pass = verdict(r);
    return r;
}

Record info_record(std::string metric, double value) { return make_record(std::move(metric), value, "info"); }

bool verdict(const Record& r) {
    if (r.comparator == "info") return true;
    if (!r.tolerance || !std::isfinite(r.value)) return false;
    const double tol = *r.tolerance;
    if (r.comparator == "<=") return r.value <= tol;
    if (r.comparator == ">=") return r.value >= tol;
    if (r.comparator == "<") return r.value < tol;
    if (r.comparator == ">") return r.value > tol;
    if (r.comparator == "==") return r.value == tol;
    return false;
}

bool ExperimentResult::pass() const {
    if (error) return false;
    return std::all_of(records.begin(), records.end(), [](const Record& r) { return r.pass; });
}

bool Report::pass() const {
    return std::all_of(experiments.begin(), experiments.end(), [](const ExperimentResult& e) { return e.pass(); });
}

namespace {

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

Json Report::to_json() const {
    Json j;
    j["format_version"] = format_version;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["threads"] = threads;
    j["pass"] = pass();
    Json exps = Json::array();
    for (const auto& e : experiments) {
        Json je;
        je["type"] = e.type;
        je["name"] = e.name;
        je["pass"] = e.pass();
        Json recs = Json::array();
        for (const auto& r : e.records) {
            Json jr;
            jr["metric"] = r.metric;
            jr["value"] = number_or_null(r.value);
            jr["comparator"] = r.comparator;
            jr["tolerance"] = r.tolerance ? number_or_null(*r.tolerance) : Json(nullptr);
            jr["pass"] = r.pass;
            recs.push_back(std::move(jr));
        }
        je["records"] = std::move(recs);
        je["artifacts"] = e.artifacts;
        je["notes"] = e.notes;
        je["error"] = e.error ? Json(*e.error) : Json(nullptr);
        exps.push_back(std::move(je));
    }
    j["experiments"] = std::move(exps);
    return j;
}

Report Report::from_json(const Json& j) {
    Report r;
    r.format_version = j.at("format_version").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.started_at = j.at("started_at").get<std::string>();
    r.finished_at = j.at("finished_at").get<std::string>();
    r.threads = j.at("threads").get<unsigned>();
    for (const auto& je : j.at("experiments")) {
        ExperimentResult e;
        e.type = je.at("type").get<std::string>();
        e.name = je.at("name").get<std::string>();
        for (const auto& jr : je.at("records")) {
            Record rec;
            rec.metric = jr.at("metric").get<std::string>();
            rec.value = jr.at("value").is_null() ? std::numeric_limits<double>::quiet_NaN() : jr.at("value").get<double>();
            rec.comparator = jr.at("comparator").get<std::string>();
            if (!jr.at("tolerance").is_null()) rec.tolerance = jr.at("tolerance").get<double>();
            rec.pass = jr.at("pass").get<bool>();
            e.records.push_back(std::move(rec));
        }
        e.artifacts = je.at("artifacts").get<std::vector<std::string>>();
        e.notes = je.at("notes").get<std::vector<std::string>>();
        if (!je.at("error").is_null()) e.error = je.at("error").get<std::string>();
        r.experiments.push_back(std::move(e));
    }
    return r;
}

bool verdicts_consistent(const Report& r) {
    for (const auto& e : r.experiments) {
        for (const auto& rec : e.records) {
            if (rec.pass != verdict(rec)) return false;
        }
    }
    return true;
}

std::string config_hash(const Json& config) {
    const std::string s = config.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

const std::vector<std::string>& experiment_types() {
    static const std::vector<std::string> types = {"simulate",       "solve-bsde",     "verify-representation",
                                                   "solve-hjb",      "estimate-value", "check-dpp",
                                                   "check-viscosity", "cross-validate"};
    return types;
}

Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("/", "cannot open config file '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError("/", std::string("invalid JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

using namespace config;

struct Context {
    RandomSource rng;
    std::string out_dir;
};

using Runner = std::function<void(const Context&, ExperimentResult&)>;

struct Planned {
    std::string type;
    std::string name;
    Runner run;
};

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Writes an artifact when an output directory is configured.
template <class Writer>
void artifact(const Context& ctx, ExperimentResult& res, const std::string& file, bool binary, Writer&& write) {
    if (ctx.out_dir.empty()) return;
    const std::filesystem::path path = std::filesystem::path(ctx.out_dir) / file;
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    if (!os) throw Error("cannot write artifact " + path.string());
    write(os);
    res.artifacts.push_back(file);
}

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

struct ProblemRef {
    ControlProblem problem;
    BenchmarkDefaults defaults;
    std::optional<SmoothTestFunction> closed;
    std::string label;
};

ProblemRef resolve_problem(const Json& e, const std::string& path) {
    ProblemRef r;
    if (has(e, "benchmark")) {
        if (has(e, "problem")) throw ConfigError(join(path, "problem"), "give either benchmark or problem, not both");
        const std::string name = string(e, "benchmark", path);
        const BenchmarkCase* found = nullptr;
        for (const auto& c : benchmark_registry()) {
            if (c.name == name) found = &c;
        }
        if (!found) throw ConfigError(join(path, "benchmark"), "unknown benchmark '" + name + "'");
        r.problem = found->problem;
        r.defaults = found->defaults;
        if (found->closed_form) r.closed = found->closed_form->u;
        r.label = name;
        return r;
    }
    if (!has(e, "problem")) throw ConfigError(path, "missing 'benchmark' or 'problem'");
    r.problem = problem_from_json(e.at("problem"), join(path, "problem"));
    r.defaults.window_lower = Vec::Constant(r.problem.n, -1.0);
    r.defaults.window_upper = Vec::Constant(r.problem.n, 1.0);
    r.label = "custom";
    return r;
}

Vec control_of(const Json& e, const std::string& path, const ControlProblem& p) {
    const Vec v = vector(e, "control", path, p.k, p.controls.mesh(2).front());
    if (!p.controls.contains(v)) throw ConfigError(join(path, "control"), "control lies outside U");
    return v;
}

struct Window {
    Vec lower, upper;
};

Window window_of(const Json& e, const std::string& path, const ProblemRef& ref) {
    Window w{ref.defaults.window_lower, ref.defaults.window_upper};
    if (!has(e, "window")) return w;
    const std::string wp = join(path, "window");
    const Json& wj = e.at("window");
    only_keys(wj, wp, {"lower", "upper"});
    w.lower = vector(wj, "lower", wp, ref.problem.n, w.lower);
    w.upper = vector(wj, "upper", wp, ref.problem.n, w.upper);
    for (int a = 0; a < ref.problem.n; ++a) {
        if (!(w.lower[a] < w.upper[a])) throw ConfigError(join(wp, "lower"), "window must have lower < upper");
    }
    return w;
}

Vec window_center(const Window& w) { return 0.5 * (w.lower + w.upper); }

TimeGrid grid_of(const Json& e, const std::string& path, double T, std::size_t default_steps) {
    const std::string gp = join(path, "grid");
    const Json gj = has(e, "grid") ? e.at("grid") : Json::object();
    only_keys(gj, gp, {"t0", "N"});
    const double t0 = number(gj, "t0", gp, 0.0);
    if (t0 < 0.0 || t0 >= T) throw ConfigError(join(gp, "t0"), "must lie in [0, T)");
    const std::size_t N = count(gj, "N", gp, default_steps, 1);
    return make_grid(t0, T, N);
}

// --- simulate ---------------------------------------------------------------

Planned plan_simulate(const Json& e, const std::string& path) {
    only_keys(e, path, {"type", "name", "benchmark", "problem", "x0", "control", "grid", "paths", "antithetic", "export"});
    const ProblemRef ref = resolve_problem(e, path);
    const ControlProblem& p = ref.problem;
    const Vec x0 = vector(e, "x0", path, p.n, Vec::Zero(p.n));
    const Vec v = control_of(e, path, p);
    const TimeGrid grid = grid_of(e, path, p.horizon, 50);
    const std::size_t M = count(e, "paths", path, 1000, 1);
    const bool anti = boolean(e, "antithetic", path, false);
    const bool exp = boolean(e, "export", path, false);
    return {"simulate", "", [=](const Context& ctx, ExperimentResult& res) {
                SimulationOptions so;
                so.antithetic = anti;
                const PathEnsemble ens =
                    simulate(p, grid.t0(), x0, ControlProcess::constant(v), grid, M, ctx.rng, so);
                const std::size_t N = grid.steps();
                std::vector<std::vector<double>> means(N + 1, std::vector<double>(p.n, 0.0));
                std::vector<double> col(M);
                for (std::size_t i = 0; i <= N; ++i) {
                    for (int a = 0; a < p.n; ++a) {
                        for (std::size_t m = 0; m < M; ++m) col[m] = ens.state(m, i)[a];
                        means[i][a] = shifted_mean(col);
                    }
                }
                for (int a = 0; a < p.n; ++a) {
                    res.records.push_back(info_record("mean_terminal_state[" + std::to_string(a) + "]", means[N][a]));
                }
                double max_abs = 0.0;
                for (double s : ens.states()) max_abs = std::max(max_abs, std::abs(s));
                res.records.push_back(info_record("max_abs_state", max_abs));
                artifact(ctx, res, res.name + "_mean.csv", false, [&](std::ostream& os) {
                    os.precision(17);
                    os << "t";
                    for (int a = 0; a < p.n; ++a) os << ",mean_x" << (a + 1);
                    os << '\n';
                    for (std::size_t i = 0; i <= N; ++i) {
                        os << grid.node(i);
                        for (int a = 0; a < p.n; ++a) os << ',' << means[i][a];
                        os << '\n';
                    }
                });
                if (exp) artifact(ctx, res, res.name + ".bin", true, [&](std::ostream& os) { write_ensemble(os, ens); });
            }};
}

// --- solve-bsde -------------------------------------------------------------

Planned plan_solve_bsde(const Json& e, const std::string& path) {
    only_keys(e, path,
              {"type", "name", "benchmark", "problem", "x0", "control", "grid", "paths", "basis", "antithetic",
               "expected", "tolerance"});
    const ProblemRef ref = resolve_problem(e, path);
    const ControlProblem& p = ref.problem;
    const Vec x0 = vector(e, "x0", path, p.n, Vec::Zero(p.n));
    const Vec v = control_of(e, path, p);
    const TimeGrid grid = grid_of(e, path, p.horizon, 100);
    const std::size_t M = count(e, "paths", path, 10000, 2);
    const RegressionBasis basis =
        has(e, "basis") ? basis_from_json(e.at("basis"), join(path, "basis")) : RegressionBasis::polynomial(2);
    const bool anti = boolean(e, "antithetic", path, false);
    if (anti && M % 2) throw ConfigError(join(path, "paths"), "antithetic sampling needs an even path count");
    std::optional<double> expected;
    if (has(e, "expected")) expected = number(e, "expected", path);
    else if (ref.closed) expected = ref.closed->value(grid.t0(), x0);
    const double tol = positive(e, "tolerance", path, 5e-3);
    for (std::size_t i = 0; i < grid.steps(); ++i) {
        if (grid.step(i) * p.generator.lipschitz >= 1.0) throw ConfigError(join(path, "grid"), "dt * K >= 1");
    }
    return {"solve-bsde", "", [=](const Context& ctx, ExperimentResult& res) {
                SimulationOptions so;
                so.antithetic = anti;
                const PathEnsemble ens =
                    simulate(p, grid.t0(), x0, ControlProcess::constant(v), grid, M, ctx.rng, so);
                std::vector<double> terminal(M);
                for (std::size_t m = 0; m < M; ++m) terminal[m] = p.terminal(ens.state(m, grid.steps()));
                BsdeOptions bo;
                bo.paired_paths = anti;
                const BsdeSolution sol = solve_bsde(terminal, p.generator, ens, basis, bo);
                res.records.push_back(info_record("y0", sol.y0));
                res.records.push_back(info_record("y0_std_error", sol.y0_std_error));
                res.records.push_back(info_record(
                    "ridge_steps", static_cast<double>(std::count(sol.ridge_steps.begin(), sol.ridge_steps.end(), true))));
                if (expected) {
                    res.records.push_back(info_record("expected", *expected));
                    res.records.push_back(make_record("abs_error", std::abs(sol.y0 - *expected), "<=", tol));
                }
                res.notes.push_back("basis " + basis.name());
                artifact(ctx, res, res.name + "_y.csv", false, [&](std::ostream& os) {
                    os.precision(17);
                    os << "i,t,mean_y\n";
                    for (std::size_t i = 0; i <= grid.steps(); ++i) {
                        const auto c = sol.Y.col(static_cast<Eigen::Index>(i));
                        os << i << ',' << grid.node(i) << ',' << shifted_mean(std::span<const double>(c.data(), M))
                           << '\n';
                    }
                });
            }};
}

// --- verify-representation --------------------------------------------------

Planned plan_verify_representation(const Json& e, const std::string& path) {
    only_keys(e, path,
              {"type", "name", "generator", "t", "y", "z", "ladder", "paths", "replications", "p_norm", "basis",
               "expect", "slope_range", "grid_steps"});
    if (!has(e, "generator")) throw ConfigError(join(path, "generator"), "missing required key");
    const Vec z = vector(e, "z", path, -1, Vec::Zero(1));
    const GeneratorSpec gen = generator_from_json(e.at("generator"), join(path, "generator"), static_cast<int>(z.size()));
    const double t = number(e, "t", path, 0.0);
    if (t < 0.0) throw ConfigError(join(path, "t"), "must be >= 0");
    const double y = number(e, "y", path, 0.0);
    int first = 3, last = 9;
    if (has(e, "ladder")) {
        const Json& lj = e.at("ladder");
        if (!lj.is_array() || lj.size() != 2 || !lj[0].is_number_integer() || !lj[1].is_number_integer()) {
            throw ConfigError(join(path, "ladder"), "expected [first_exponent, last_exponent]");
        }
        first = lj[0].get<int>();
        last = lj[1].get<int>();
        if (first < 0 || last < first || last > 30) throw ConfigError(join(path, "ladder"), "need 0 <= first <= last <= 30");
    }
    const std::size_t M = count(e, "paths", path, 10000, 4);
    if (M % 2) throw ConfigError(join(path, "paths"), "antithetic probes need an even path count");
    const std::size_t R = count(e, "replications", path, 32, 2);
    const double p_norm = number(e, "p_norm", path, 1.0);
    if (!(p_norm >= 1.0 && p_norm < 2.0)) throw ConfigError(join(path, "p_norm"), "must lie in [1, 2)");
    const RegressionBasis basis =
        has(e, "basis") ? basis_from_json(e.at("basis"), join(path, "basis")) : RegressionBasis::polynomial(2);
    const std::string expect = string(e, "expect", path, "auto");
    if (expect != "auto" && expect != "exact" && expect != "rate") {
        throw ConfigError(join(path, "expect"), "expected one of auto, exact, rate");
    }
    double slope_lo = 0.8, slope_hi = 1.2;
    if (has(e, "slope_range")) {
        const Vec s = vector(e, "slope_range", path, 2);
        slope_lo = s[0];
        slope_hi = s[1];
    }
    LimitOptions lo;
    lo.replications = R;
    lo.probe.grid_steps = count(e, "grid_steps", path, 0);
    return {"verify-representation", "", [=](const Context& ctx, ExperimentResult& res) {
                const auto ladder = geometric_ladder(first, last);
                const RateFit fit = verify_limit(gen, t, y, z, ladder, M, basis, ctx.rng, p_norm, lo);
                res.records.push_back(info_record("target", fit.target));
                for (std::size_t j = 0; j < ladder.size(); ++j) {
                    res.records.push_back(info_record("error(eps=" + fmt(ladder[j]) + ")", fit.errors[j]));
                }
                res.records.push_back(make_record("exact", fit.exact ? 1.0 : 0.0,
                                                  expect == "exact" ? "==" : "info", 1.0));
                if (!fit.exact || expect == "rate") {
                    if (expect != "exact") {
                        res.records.push_back(make_record("slope_lower_check", fit.slope, ">=", slope_lo));
                        res.records.push_back(make_record("slope_upper_check", fit.slope, "<=", slope_hi));
                        res.records.push_back(info_record("slope_ci_low", fit.slope_low));
                        res.records.push_back(info_record("slope_ci_high", fit.slope_high));
                    }
                } else {
                    res.notes.push_back("exact: every error below 1e-12, slope undefined");
                }
                if (fit.almost_every_t_caveat) {
                    res.notes.push_back("generator is discontinuous in t; recovery holds for almost every t only");
                }
                artifact(ctx, res, res.name + "_rate.csv", false, [&](std::ostream& os) { write_rate_csv(os, fit); });
            }};
}

// --- shared solver configuration -------------------------------------------

struct FdSetup {
    double h;
    int mesh_per_axis;
    std::size_t steps;  // 0 = from CFL
};

FdSetup fd_of(const Json& obj, const std::string& path, const ProblemRef& ref) {
    FdSetup s;
    s.h = positive(obj, "h", path, ref.defaults.fd_spacing);
    s.mesh_per_axis = static_cast<int>(count(obj, "mesh_per_axis", path, ref.defaults.mesh_per_axis, 1));
    s.steps = count(obj, "steps", path, 0);
    return s;
}

ValueGrid run_fd(const ProblemRef& ref, const Window& w, const FdSetup& s, std::size_t* steps_used = nullptr) {
    const HjbOperator op(ref.problem, ref.problem.controls.mesh(s.mesh_per_axis));
    const SpaceGrid space = padded_space_grid(op, w.lower, w.upper, s.h);
    const std::size_t N = s.steps ? s.steps : cfl_steps(op, space, 0.0, ref.problem.horizon);
    if (steps_used) *steps_used = N;
    return solve_hjb(op, space, make_grid(0.0, ref.problem.horizon, N));
}

bool in_window(const Vec& x, const Window& w) {
    for (Eigen::Index a = 0; a < x.size(); ++a) {
        if (x[a] < w.lower[a] - 1e-12 || x[a] > w.upper[a] + 1e-12) return false;
    }
    return true;
}

double interior_error(const ValueGrid& u, const SmoothTestFunction& cf, const Window& w) {
    double err = 0.0;
    const SpaceGrid& s = u.space();
    for (std::size_t node = 0; node < s.size(); ++node) {
        if (!s.in_inner_half(node)) continue;
        const Vec x = s.point(node);
        if (!in_window(x, w)) continue;
        for (std::size_t i = 0; i <= u.time().steps(); ++i) {
            err = std::max(err, std::abs(u.at(i, node) - cf.value(u.time().node(i), x)));
        }
    }
    return err;
}

struct McSetup {
    DppConfig cfg;
    double h;
};

McSetup mc_of(const Json& obj, const std::string& path, const ProblemRef& ref) {
    McSetup s;
    const int per_axis = static_cast<int>(count(obj, "mesh_per_axis", path, ref.defaults.mesh_per_axis, 1));
    s.cfg.mesh = ref.problem.controls.mesh(per_axis);
    s.cfg.epochs = count(obj, "epochs", path, ref.defaults.epochs, 1);
    s.cfg.substeps = count(obj, "substeps", path, ref.defaults.substeps, 1);
    s.cfg.paths = count(obj, "paths", path, ref.defaults.paths, 2);
    s.cfg.antithetic = boolean(obj, "antithetic", path, true);
    if (s.cfg.antithetic && s.cfg.paths % 2) {
        throw ConfigError(join(path, "paths"), "antithetic sampling needs an even path count");
    }
    if (has(obj, "basis")) s.cfg.basis = basis_from_json(obj.at("basis"), join(path, "basis"));
    s.h = positive(obj, "h", path, ref.defaults.mc_spacing);
    const double dt = ref.problem.horizon / static_cast<double>(s.cfg.epochs * s.cfg.substeps);
    if (dt * ref.problem.generator.lipschitz >= 1.0) throw ConfigError(join(path, "substeps"), "dt * K >= 1");
    return s;
}

double point_time(const Json& e, const std::string& path, double T) {
    const double t = number(e, "t", path, 0.0);
    if (t < 0.0 || t >= T) throw ConfigError(join(path, "t"), "must lie in [0, T)");
    return t;
}

void write_slice_csv(std::ostream& os, const ValueGrid& u, std::size_t slice) {
    os.precision(17);
    const SpaceGrid& s = u.space();
    for (int a = 0; a < s.dim(); ++a) os << 'x' << (a + 1) << ',';
    os << "u,stderr\n";
    for (std::size_t node = 0; node < s.size(); ++node) {
        const Vec x = s.point(node);
        for (int a = 0; a < s.dim(); ++a) os << x[a] << ',';
        os << u.at(slice, node) << ',' << (u.std_errors().empty() ? 0.0 : u.std_errors()[slice * s.size() + node])
           << '\n';
    }
}

// --- solve-hjb --------------------------------------------------------------

Planned plan_solve_hjb(const Json& e, const std::string& path) {
    only_keys(e, path,
              {"type", "name", "benchmark", "problem", "h", "window", "mesh_per_axis", "steps", "tolerance", "refine",
               "export"});
    const ProblemRef ref = resolve_problem(e, path);
    const Window w = window_of(e, path, ref);
    const FdSetup fd = fd_of(e, path, ref);
    const double tol = positive(e, "tolerance", path, ref.defaults.fd_tolerance);
    const bool refine = boolean(e, "refine", path, false);
    const bool exp = boolean(e, "export", path, false);
    return {"solve-hjb", "", [=](const Context& ctx, ExperimentResult& res) {
                std::size_t N = 0;
                const ValueGrid u = run_fd(ref, w, fd, &N);
                const Vec c = window_center(w);
                res.records.push_back(info_record("time_steps", static_cast<double>(N)));
                res.records.push_back(info_record("space_nodes", static_cast<double>(u.space().size())));
                res.records.push_back(info_record("u_fd_at_window_center", u.interpolate(0.0, c)));
                if (ref.closed) {
                    const double err = interior_error(u, *ref.closed, w);
                    res.records.push_back(make_record("interior_linf_error", err, "<=", tol));
                    if (refine) {
                        FdSetup half = fd;
                        half.h = 0.5 * fd.h;
                        half.steps = fd.steps ? 4 * fd.steps : 0;
                        const double err_half = interior_error(run_fd(ref, w, half), *ref.closed, w);
                        res.records.push_back(info_record("interior_linf_error_half_h", err_half));
                        res.records.push_back(make_record("error_change_half_h", err_half - err, "<", 0.0));
                    }
                }
                if (exp) {
                    artifact(ctx, res, res.name + "_u.csv", false, [&](std::ostream& os) { write_value_csv(os, u); });
                    artifact(ctx, res, res.name + "_u.slab", true, [&](std::ostream& os) { write_value_slab(os, u); });
                }
            }};
}

// --- estimate-value ---------------------------------------------------------

Planned plan_estimate_value(const Json& e, const std::string& path) {
    only_keys(e, path,
              {"type", "name", "benchmark", "problem", "t", "x", "epochs", "substeps", "paths", "mesh_per_axis", "h",
               "window", "basis", "antithetic", "tolerance", "stderr_factor"});
    const ProblemRef ref = resolve_problem(e, path);
    const Window w = window_of(e, path, ref);
    const McSetup mc = mc_of(e, path, ref);
    const double t = point_time(e, path, ref.problem.horizon);
    const Vec x = vector(e, "x", path, ref.problem.n, window_center(w));
    const double tol = positive(e, "tolerance", path, ref.defaults.mc_tolerance);
    const double k = number(e, "stderr_factor", path, 0.0);
    return {"estimate-value", "", [=](const Context& ctx, ExperimentResult& res) {
                const SpaceGrid space = valuation_space_grid(ref.problem, t, mc.cfg.mesh, w.lower, w.upper, mc.h);
                const ValueEstimate est = estimate_value(ref.problem, t, x, mc.cfg, space, ctx.rng);
                res.records.push_back(info_record("u_mc", est.value));
                res.records.push_back(info_record("std_error", est.std_error));
                res.records.push_back(info_record("clamped_solves", static_cast<double>(est.clamped_solves)));
                if (ref.closed) {
                    const double cf = ref.closed->value(t, x);
                    res.records.push_back(info_record("u_closed_form", cf));
                    res.records.push_back(
                        make_record("abs_error", std::abs(est.value - cf), "<=", tol + k * est.std_error));
                }
                artifact(ctx, res, res.name + "_u0.csv", false,
                         [&](std::ostream& os) { write_slice_csv(os, est.grid, 0); });
            }};
}

// --- check-dpp --------------------------------------------------------------

Planned plan_check_dpp(const Json& e, const std::string& path) {
    only_keys(e, path,
              {"type", "name", "benchmark", "problem", "t", "x", "epochs", "substeps", "paths", "mesh_per_axis", "h",
               "window", "basis", "antithetic", "deltas", "residual_tolerance", "stderr_factor"});
    const ProblemRef ref = resolve_problem(e, path);
    const Window w = window_of(e, path, ref);
    const McSetup mc = mc_of(e, path, ref);
    const double t = point_time(e, path, ref.problem.horizon);
    const Vec x = vector(e, "x", path, ref.problem.n, window_center(w));
    std::vector<double> deltas{0.25, 0.5};
    if (has(e, "deltas")) {
        const Json& dj = e.at("deltas");
        if (!dj.is_array() || dj.empty()) throw ConfigError(join(path, "deltas"), "expected a nonempty array");
        deltas.clear();
        for (std::size_t i = 0; i < dj.size(); ++i) {
            const double d = number(Json{{"d", dj[i]}}, "d", join(path, "deltas"));
            if (d < 0.0 || t + d > ref.problem.horizon + 1e-12) {
                throw ConfigError(join(join(path, "deltas"), i), "must lie in [0, T - t]");
            }
            deltas.push_back(d);
        }
    }
    const double abs_tol = number(e, "residual_tolerance", path, 1e-2);
    const double k = number(e, "stderr_factor", path, 3.0);
    return {"check-dpp", "", [=](const Context& ctx, ExperimentResult& res) {
                const SpaceGrid space = valuation_space_grid(ref.problem, t, mc.cfg.mesh, w.lower, w.upper, mc.h);
                const ValueEstimate est = estimate_value(ref.problem, t, x, mc.cfg, space, ctx.rng.child(0));
                res.records.push_back(info_record("u_mc", est.value));
                for (std::size_t j = 0; j < deltas.size(); ++j) {
                    const DppResult r = check_dpp(ref.problem, t, x, deltas[j], mc.cfg, est, ctx.rng.child(1 + j));
                    const std::string tag = "(delta=" + fmt(deltas[j]) + ")";
                    res.records.push_back(info_record("semigroup" + tag, r.semigroup));
                    res.records.push_back(info_record("combined_std_error" + tag, r.combined_std_error));
                    res.records.push_back(
                        make_record("residual" + tag, r.residual, "<=", abs_tol + k * r.combined_std_error));
                }
            }};
}

// --- check-viscosity --------------------------------------------------------

Json viscosity_json(const ViscosityReport& r) {
    Json j;
    j["tolerance"] = r.tolerance;
    j["radius"] = r.radius;
    j["warnings"] = r.warnings;
    Json pts = Json::array();
    for (const auto& rec : r.records) {
        Json p;
        p["phi"] = rec.phi_index;
        p["t"] = rec.t;
        p["x"] = std::vector<double>(rec.x.data(), rec.x.data() + rec.x.size());
        p["kind"] = to_string(rec.kind);
        p["expression"] = rec.expression;
        p["argmax_control"] = std::vector<double>(rec.argmax_control.data(),
                                                  rec.argmax_control.data() + rec.argmax_control.size());
        p["pass"] = rec.pass;
        p["margin"] = rec.margin;
        pts.push_back(std::move(p));
    }
    j["points"] = std::move(pts);
    return j;
}

double max_abs_expression(const ViscosityReport& r) {
    double m = 0.0;
    for (const auto& rec : r.records) m = std::max(m, std::abs(rec.expression));
    return m;
}

Planned plan_check_viscosity(const Json& e, const std::string& path) {
    only_keys(e, path,
              {"type", "name", "benchmark", "points", "radius", "lattice_step", "bump_scale", "ramp", "mesh_per_axis"});
    if (!has(e, "benchmark")) throw ConfigError(join(path, "benchmark"), "missing required key");
    const ProblemRef ref = resolve_problem(e, path);
    if (!ref.closed) throw ConfigError(join(path, "benchmark"), "benchmark has no closed form");
    const std::size_t points = count(e, "points", path, 50, 1);
    ViscosityOptions vo;
    vo.radius = static_cast<int>(count(e, "radius", path, 1, 1));
    vo.lattice_step = positive(e, "lattice_step", path, 1e-2);
    const double bump = positive(e, "bump_scale", path, 1.0);
    const double ramp = positive(e, "ramp", path, 0.1);
    const int per_axis = static_cast<int>(count(e, "mesh_per_axis", path, ref.defaults.mesh_per_axis, 1));
    return {"check-viscosity", "", [=](const Context& ctx, ExperimentResult& res) {
                const ControlProblem& p = ref.problem;
                const HjbOperator op(p, p.controls.mesh(per_axis));
                const SmoothTestFunction& u = *ref.closed;
                const CandidateFn cand = [u](double t, const Vec& x) { return u.value(t, x); };
                NormalStream s(ctx.rng);
                std::vector<SamplePoint> pts(points);
                for (auto& pt : pts) {
                    pt.t = p.horizon * s.next_uniform();
                    pt.x = Vec(p.n);
                    for (int a = 0; a < p.n; ++a) {
                        pt.x[a] = ref.defaults.window_lower[a] +
                                  (ref.defaults.window_upper[a] - ref.defaults.window_lower[a]) * s.next_uniform();
                    }
                }
                const ViscosityReport sup = check_supersolution(cand, op, {u}, pts, vo);
                const ViscosityReport sub = check_subsolution(cand, op, {u}, pts, vo);
                res.records.push_back(info_record("saturation_super_points", static_cast<double>(sup.records.size())));
                res.records.push_back(info_record("saturation_sub_points", static_cast<double>(sub.records.size())));
                res.records.push_back(make_record("saturation_super_max_abs", max_abs_expression(sup), "<=",
                                                  kAnalyticViscosityTolerance));
                res.records.push_back(make_record("saturation_sub_max_abs", max_abs_expression(sub), "<=",
                                                  kAnalyticViscosityTolerance));

                // Perturbed test functions: count points where the predicted sign is observed.
                const SmoothTestFunction down = time_ramp(-ramp, p.horizon);
                const SmoothTestFunction up = time_ramp(ramp, p.horizon);
                const SmoothTestFunction u_down = u.plus(down);
                const SmoothTestFunction u_up = u.plus(up);
                const CandidateFn cand_down = [u_down](double t, const Vec& x) { return u_down.value(t, x); };
                const CandidateFn cand_up = [u_up](double t, const Vec& x) { return u_up.value(t, x); };
                std::size_t bump_super = 0, bump_sub = 0, ramp_super = 0, ramp_sub = 0;
                Json details = Json::array();
                for (const auto& pt : pts) {
                    const ViscosityReport a =
                        check_supersolution(cand, op, {u.plus(quadratic_bump(pt.x, -bump))}, {pt}, vo);
                    const ViscosityReport b =
                        check_subsolution(cand, op, {u.plus(quadratic_bump(pt.x, bump))}, {pt}, vo);
                    const ViscosityReport c = check_supersolution(cand_down, op, {u_down}, {pt}, vo);
                    const ViscosityReport d = check_subsolution(cand_up, op, {u_up}, {pt}, vo);
                    bump_super += a.records.size() == 1 && a.records[0].expression <= 0.0 && a.records[0].pass;
                    bump_sub += b.records.size() == 1 && b.records[0].expression >= 0.0 && b.records[0].pass;
                    ramp_super += c.records.size() == 1 && c.records[0].expression > 0.0 && !c.records[0].pass;
                    ramp_sub += d.records.size() == 1 && d.records[0].expression < 0.0 && !d.records[0].pass;
                    details.push_back({{"bump_super", viscosity_json(a)},
                                       {"bump_sub", viscosity_json(b)},
                                       {"ramp_super", viscosity_json(c)},
                                       {"ramp_sub", viscosity_json(d)}});
                }
                const double n = static_cast<double>(points);
                res.records.push_back(make_record("bump_super_predicted_fraction", bump_super / n, "==", 1.0));
                res.records.push_back(make_record("bump_sub_predicted_fraction", bump_sub / n, "==", 1.0));
                res.records.push_back(make_record("ramp_super_predicted_fraction", ramp_super / n, "==", 1.0));
                res.records.push_back(make_record("ramp_sub_predicted_fraction", ramp_sub / n, "==", 1.0));
                artifact(ctx, res, res.name + "_viscosity.json", false, [&](std::ostream& os) {
                    Json j;
                    j["saturation_super"] = viscosity_json(sup);
                    j["saturation_sub"] = viscosity_json(sub);
                    j["perturbed"] = std::move(details);
                    os << j.dump(2) << '\n';
                });
            }};
}

// --- cross-validate ---------------------------------------------------------

Planned plan_cross_validate(const Json& e, const std::string& path) {
    only_keys(e, path,
              {"type", "name", "benchmark", "problem", "window", "fd", "mc", "x", "tolerance", "fd_tolerance",
               "viscosity_tolerance"});
    const ProblemRef ref = resolve_problem(e, path);
    const Window w = window_of(e, path, ref);
    const Json fdj = has(e, "fd") ? e.at("fd") : Json::object();
    only_keys(fdj, join(path, "fd"), {"h", "mesh_per_axis", "steps"});
    const FdSetup fd = fd_of(fdj, join(path, "fd"), ref);
    const Json mcj = has(e, "mc") ? e.at("mc") : Json::object();
    only_keys(mcj, join(path, "mc"), {"h", "epochs", "substeps", "paths", "mesh_per_axis", "basis", "antithetic"});
    const McSetup mc = mc_of(mcj, join(path, "mc"), ref);
    const Vec x = vector(e, "x", path, ref.problem.n, window_center(w));
    const double tol = positive(e, "tolerance", path, ref.defaults.cross_tolerance);
    const double fd_tol = positive(e, "fd_tolerance", path, ref.defaults.fd_tolerance);
    const double visc_tol = positive(e, "viscosity_tolerance", path, kGridViscosityTolerance);
    return {"cross-validate", "", [=](const Context& ctx, ExperimentResult& res) {
                const ControlProblem& p = ref.problem;
                const ValueGrid u_fd = run_fd(ref, w, fd);
                const SpaceGrid space = valuation_space_grid(p, 0.0, mc.cfg.mesh, w.lower, w.upper, mc.h);
                const ValueEstimate est = estimate_value(p, 0.0, x, mc.cfg, space, ctx.rng);
                const double fd0 = u_fd.interpolate(0.0, x);
                res.records.push_back(info_record("u_fd", fd0));
                res.records.push_back(info_record("u_mc", est.value));
                res.records.push_back(info_record("u_mc_std_error", est.std_error));
                double linf = 0.0;
                for (std::size_t node = 0; node < space.size(); ++node) {
                    const Vec y = space.point(node);
                    if (!in_window(y, w)) continue;
                    linf = std::max(linf, std::abs(u_fd.interpolate(0.0, y) - est.grid.at(0, node)));
                }
                res.records.push_back(make_record("linf_fd_mc_window", linf, "<=", tol));
                if (ref.closed) {
                    const double cf = ref.closed->value(0.0, x);
                    res.records.push_back(info_record("u_closed_form", cf));
                    res.records.push_back(make_record("abs_fd_closed_form", std::abs(fd0 - cf), "<=", fd_tol));
                    res.records.push_back(make_record("abs_mc_closed_form", std::abs(est.value - cf), "<=", tol));

                    const HjbOperator op(p, p.controls.mesh(fd.mesh_per_axis));
                    std::vector<SamplePoint> pts;
                    const SpaceGrid& s = u_fd.space();
                    for (std::size_t i = 0; i < u_fd.time().steps(); ++i) {
                        for (std::size_t node = 0; node < s.size(); ++node) {
                            const Vec y = s.point(node);
                            if (in_window(y, w)) pts.push_back({u_fd.time().node(i), y});
                        }
                    }
                    ViscosityOptions vo;
                    vo.tolerance = visc_tol;
                    const SmoothTestFunction& u = *ref.closed;
                    const Vec c = window_center(w);
                    const ViscosityReport sup = check_supersolution(u_fd, op, {u}, pts, vo);
                    const ViscosityReport sub = check_subsolution(u_fd, op, {u}, pts, vo);
                    const ViscosityReport sup_b = check_supersolution(u_fd, op, {u.plus(quadratic_bump(c, -1.0))}, pts, vo);
                    const ViscosityReport sub_b = check_subsolution(u_fd, op, {u.plus(quadratic_bump(c, 1.0))}, pts, vo);
                    res.records.push_back(info_record("viscosity_super_certificates", static_cast<double>(sup.records.size())));
                    res.records.push_back(info_record("viscosity_sub_certificates", static_cast<double>(sub.records.size())));
                    res.records.push_back(make_record("viscosity_super_saturation_max_abs", max_abs_expression(sup), "<=", visc_tol));
                    res.records.push_back(make_record("viscosity_sub_saturation_max_abs", max_abs_expression(sub), "<=", visc_tol));
                    res.records.push_back(make_record(
                        "viscosity_bump_failures", static_cast<double>(sup_b.failures() + sub_b.failures()), "==", 0.0));
                    res.records.push_back(info_record("viscosity_bump_certificates",
                                                      static_cast<double>(sup_b.records.size() + sub_b.records.size())));
                    artifact(ctx, res, res.name + "_viscosity.json", false, [&](std::ostream& os) {
                        Json j;
                        j["super"] = viscosity_json(sup);
                        j["sub"] = viscosity_json(sub);
                        j["super_bump"] = viscosity_json(sup_b);
                        j["sub_bump"] = viscosity_json(sub_b);
                        os << j.dump(2) << '\n';
                    });
                }
                artifact(ctx, res, res.name + "_u0.csv", false, [&](std::ostream& os) {
                    os.precision(17);
                    for (int a = 0; a < p.n; ++a) os << 'x' << (a + 1) << ',';
                    os << "u_fd,u_mc,u_mc_stderr\n";
                    for (std::size_t node = 0; node < space.size(); ++node) {
                        const Vec y = space.point(node);
                        for (int a = 0; a < p.n; ++a) os << y[a] << ',';
                        os << u_fd.interpolate(0.0, y) << ',' << est.grid.at(0, node) << ','
                           << est.grid.std_errors()[node] << '\n';
                    }
                });
            }};
}

// --- planning ---------------------------------------------------------------

std::vector<Planned> plan(const Json& config, std::optional<std::string> only_type) {
    only_keys(config, "", {"format_version", "seed", "threads", "experiments"});
    if (has(config, "format_version") && count(config, "format_version", "", 1) != kReportFormatVersion) {
        throw ConfigError("/format_version", "unsupported format version");
    }
    if (has(config, "seed")) u64(config, "seed", "");
    if (has(config, "threads")) count(config, "threads", "", 1, 1);
    if (!has(config, "experiments")) throw ConfigError("/experiments", "missing required key");
    const Json& exps = config.at("experiments");
    if (!exps.is_array()) throw ConfigError("/experiments", "expected an array");
    std::vector<Planned> out;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < exps.size(); ++i) {
        const std::string path = join("/experiments", i);
        const Json& e = object(exps[i], path);
        const std::string type = string(e, "type", path);
        Planned p;
        if (type == "simulate") p = plan_simulate(e, path);
        else if (type == "solve-bsde") p = plan_solve_bsde(e, path);
        else if (type == "verify-representation") p = plan_verify_representation(e, path);
        else if (type == "solve-hjb") p = plan_solve_hjb(e, path);
        else if (type == "estimate-value") p = plan_estimate_value(e, path);
        else if (type == "check-dpp") p = plan_check_dpp(e, path);
        else if (type == "check-viscosity") p = plan_check_viscosity(e, path);
        else if (type == "cross-validate") p = plan_cross_validate(e, path);
        else throw ConfigError(join(path, "type"), "unknown experiment type '" + type + "'");
        p.name = string(e, "name", path, type + "-" + std::to_string(i));
        for (char c : p.name) {
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
                throw ConfigError(join(path, "name"), "names may contain only letters, digits, '-', '_' and '.'");
            }
        }
        if (std::find(names.begin(), names.end(), p.name) != names.end()) {
            throw ConfigError(join(path, "name"), "duplicate experiment name '" + p.name + "'");
        }
        names.push_back(p.name);
        if (!only_type || *only_type == type) out.push_back(std::move(p));
    }
    if (out.empty()) throw ConfigError("/experiments", "no experiments selected");
    return out;
}

}  // namespace

void validate_config(const Json& config) { plan(config, std::nullopt); }

RunOutcome run(const Json& config, const RunOptions& opts) {
    RunOutcome out;
    std::vector<Planned> planned;
    try {
        planned = plan(config, opts.only_type);
    } catch (const ConfigError& e) {
        out.exit_code = 2;
        out.message = e.what();
        return out;
    }
    Report& rep = out.report;
    rep.seed = opts.seed ? *opts.seed : (has(config, "seed") ? config.at("seed").get<std::uint64_t>() : 0);
    rep.threads = opts.threads ? *opts.threads
                               : (has(config, "threads") ? config.at("threads").get<unsigned>() : thread_count());
    rep.config_hash = config_hash(config);
    rep.started_at = iso_now();
    const unsigned saved_threads = thread_count();
    set_thread_count(rep.threads);
    if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);

    const RandomSource root{rep.seed, 0};
    for (std::size_t i = 0; i < planned.size(); ++i) {
        ExperimentResult res;
        res.type = planned[i].type;
        res.name = planned[i].name;
        // Streams are keyed by experiment name so filtering does not shift them.
        std::uint64_t key = 0;
        for (unsigned char c : res.name) key = key * 131 + c;
        const Context ctx{root.child(key), opts.out_dir};
        try {
            planned[i].run(ctx, res);
        } catch (const std::exception& e) {
            res.error = e.what();
        }
        rep.experiments.push_back(std::move(res));
    }
    set_thread_count(saved_threads);
    rep.finished_at = iso_now();

    if (!opts.out_dir.empty()) {
        std::ofstream os(std::filesystem::path(opts.out_dir) / "report.json");
        os << rep.to_json().dump(2) << '\n';
    }
    out.exit_code = rep.pass() ? 0 : 1;
    if (out.exit_code != 0) {
        for (const auto& e : rep.experiments) {
            if (e.error) {
                out.message = e.name + ": " + *e.error;
                break;
            }
            for (const auto& r : e.records) {
                if (!r.pass) {
                    out.message = e.name + ": " + r.metric + " = " + fmt(r.value) + " (" + r.comparator + " " +
                                  (r.tolerance ? fmt(*r.tolerance) : "?") + ") FAIL";
                    break;
                }
            }
            if (!out.message.empty()) break;
        }
    }
    return out;
}

RunOutcome run_file(const std::string& path, const RunOptions& opts) {
    Json config;
    try {
        config = load_json_file(path);
    } catch (const ConfigError& e) {
        RunOutcome out;
        out.exit_code = 2;
        out.message = e.what();
        return out;
    }
    return run(config, opts);
}

}  // namespace bsdelab
