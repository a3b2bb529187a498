#include "bsdelab/problem_config.hpp"

#include <cmath>
#include <limits>

namespace bsdelab {

namespace config {

std::string join(const std::string& path, const std::string& key) { return path + "/" + key; }
std::string join(const std::string& path, std::size_t index) { return path + "/" + std::to_string(index); }

const Json& object(const Json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path.empty() ? "/" : path, "expected an object");
    return j;
}

bool has(const Json& obj, const std::string& key) { return obj.is_object() && obj.contains(key); }

void only_keys(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    object(obj, path);
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || item.key() == a;
        if (!ok) throw ConfigError(join(path, item.key()), "unknown key");
    }
}

namespace {

const Json* lookup(const Json& obj, const std::string& key, const std::string& path, bool required) {
    object(obj, path);
    const auto it = obj.find(key);
    if (it == obj.end()) {
        if (required) throw ConfigError(join(path, key), "missing required key");
        return nullptr;
    }
    return &*it;
}

}  // namespace

double number(const Json& obj, const std::string& key, const std::string& path, std::optional<double> fallback) {
    const Json* v = lookup(obj, key, path, !fallback);
    if (!v) return *fallback;
    if (!v->is_number()) throw ConfigError(join(path, key), "expected a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) throw ConfigError(join(path, key), "expected a finite number");
    return x;
}

double positive(const Json& obj, const std::string& key, const std::string& path, std::optional<double> fallback) {
    const double x = number(obj, key, path, fallback);
    if (!(x > 0.0)) throw ConfigError(join(path, key), "must be positive");
    return x;
}

std::size_t count(const Json& obj, const std::string& key, const std::string& path,
                  std::optional<std::size_t> fallback, std::size_t minimum) {
    const Json* v = lookup(obj, key, path, !fallback);
    std::size_t x;
    if (!v) {
        x = *fallback;
    } else {
        if (!v->is_number_integer()) throw ConfigError(join(path, key), "expected an integer");
        if (v->is_number_unsigned()) {
            x = v->get<std::size_t>();
        } else {
            const auto s = v->get<long long>();
            if (s < 0) throw ConfigError(join(path, key), "must be >= " + std::to_string(minimum));
            x = static_cast<std::size_t>(s);
        }
    }
    if (x < minimum) throw ConfigError(join(path, key), "must be >= " + std::to_string(minimum));
    return x;
}

std::uint64_t u64(const Json& obj, const std::string& key, const std::string& path,
                  std::optional<std::uint64_t> fallback) {
    const Json* v = lookup(obj, key, path, !fallback);
    if (!v) return *fallback;
    if (!v->is_number_unsigned()) throw ConfigError(join(path, key), "expected a non-negative integer");
    return v->get<std::uint64_t>();
}

bool boolean(const Json& obj, const std::string& key, const std::string& path, std::optional<bool> fallback) {
    const Json* v = lookup(obj, key, path, !fallback);
    if (!v) return *fallback;
    if (!v->is_boolean()) throw ConfigError(join(path, key), "expected true or false");
    return v->get<bool>();
}

std::string string(const Json& obj, const std::string& key, const std::string& path,
                   std::optional<std::string> fallback) {
    const Json* v = lookup(obj, key, path, !fallback);
    if (!v) return *fallback;
    if (!v->is_string()) throw ConfigError(join(path, key), "expected a string");
    return v->get<std::string>();
}

Vec vector(const Json& obj, const std::string& key, const std::string& path, int dim, std::optional<Vec> fallback) {
    const Json* v = lookup(obj, key, path, !fallback);
    if (!v) return *fallback;
    const std::string p = join(path, key);
    if (!v->is_array()) throw ConfigError(p, "expected an array of numbers");
    const auto size = static_cast<int>(v->size());
    if (dim >= 0 && size != dim) throw ConfigError(p, "expected " + std::to_string(dim) + " entries");
    if (size < 1 || size > kMaxDim) throw ConfigError(p, "length must lie in [1, " + std::to_string(kMaxDim) + "]");
    Vec out(size);
    for (int i = 0; i < size; ++i) {
        const Json& e = (*v)[static_cast<std::size_t>(i)];
        if (!e.is_number() || !std::isfinite(e.get<double>())) {
            throw ConfigError(join(p, static_cast<std::size_t>(i)), "expected a finite number");
        }
        out[i] = e.get<double>();
    }
    return out;
}

}  // namespace config

namespace {

using namespace config;

struct Family {
    std::string name;
    std::string path;
};

Family family_of(const Json& j, const std::string& path) {
    object(j, path);
    return {string(j, "family", path), path};
}

[[noreturn]] void unknown_family(const Family& f) {
    throw ConfigError(join(f.path, "family"), "unknown family '" + f.name + "'");
}

}  // namespace

GeneratorSpec generator_from_json(const Json& j, const std::string& path, int d) {
    const Family f = family_of(j, path);
    GeneratorSpec g;
    if (f.name == "zero") {
        only_keys(j, path, {"family"});
        g.g = [](double, const Vec&, double, const Vec&, const Vec&) { return 0.0; };
    } else if (f.name == "constant") {
        only_keys(j, path, {"family", "c"});
        const double c = number(j, "c", path);
        g.g = [c](double, const Vec&, double, const Vec&, const Vec&) { return c; };
    } else if (f.name == "linear") {
        only_keys(j, path, {"family", "a_y", "a_z", "c"});
        const double ay = number(j, "a_y", path, 0.0);
        const Vec az = vector(j, "a_z", path, d, Vec::Zero(d));
        const double c = number(j, "c", path, 0.0);
        g.g = [ay, az, c](double, const Vec&, double y, const Vec& z, const Vec&) { return ay * y + az.dot(z) + c; };
        g.lipschitz = std::max(std::abs(ay), az.norm());
    } else if (f.name == "abs_z") {
        only_keys(j, path, {"family", "scale"});
        const double s = number(j, "scale", path, 1.0);
        g.g = [s](double, const Vec&, double, const Vec& z, const Vec&) { return s * z.norm(); };
        g.lipschitz = std::abs(s);
    } else if (f.name == "time_jump") {
        only_keys(j, path, {"family", "t_star", "jump"});
        const double ts = number(j, "t_star", path);
        const double jump = number(j, "jump", path, 1.0);
        g.g = [ts, jump](double t, const Vec&, double, const Vec&, const Vec&) { return t >= ts ? jump : 0.0; };
        g.continuous_in_t = false;
    } else {
        unknown_family(f);
    }
    return g;
}

ControlProblem problem_from_json(const Json& j, const std::string& path) {
    only_keys(j, path,
              {"n", "d", "k", "T", "drift", "diffusion", "generator", "terminal", "controls", "coefficient_lipschitz",
               "terminal_lipschitz"});
    ControlProblem p;
    p.n = static_cast<int>(count(j, "n", path, 1, 1));
    p.d = static_cast<int>(count(j, "d", path, static_cast<std::size_t>(p.n), 1));
    p.k = static_cast<int>(count(j, "k", path, 1, 1));
    for (const char* key : {"n", "d", "k"}) {
        if (count(j, key, path, 1) > static_cast<std::size_t>(kMaxDim)) {
            throw ConfigError(join(path, key), "must be <= " + std::to_string(kMaxDim));
        }
    }
    p.horizon = positive(j, "T", path, 1.0);
    const int n = p.n, d = p.d, k = p.k;
    double coeff_lip = 0.0;

    // Drift.
    {
        const std::string dp = join(path, "drift");
        const Json& dj = has(j, "drift") ? j.at("drift") : Json{{"family", "zero"}};
        const Family f = family_of(dj, dp);
        if (f.name == "zero") {
            only_keys(dj, dp, {"family"});
            p.drift = [n](double, const Vec&, const Vec&) -> Vec { return Vec::Zero(n); };
        } else if (f.name == "constant") {
            only_keys(dj, dp, {"family", "value"});
            const Vec b = vector(dj, "value", dp, n);
            p.drift = [b](double, const Vec&, const Vec&) -> Vec { return b; };
        } else if (f.name == "control") {
            only_keys(dj, dp, {"family"});
            if (k != n) throw ConfigError(dp, "family 'control' needs k == n");
            p.drift = [](double, const Vec&, const Vec& v) -> Vec { return v; };
            coeff_lip = std::max(coeff_lip, 1.0);
        } else if (f.name == "linear") {
            only_keys(dj, dp, {"family", "a", "c"});
            const double a = number(dj, "a", dp);
            const Vec c = vector(dj, "c", dp, n, Vec::Zero(n));
            p.drift = [a, c](double, const Vec& x, const Vec&) -> Vec { return a * x + c; };
            coeff_lip = std::max(coeff_lip, std::abs(a));
        } else {
            unknown_family(f);
        }
    }
    // Diffusion.
    {
        const std::string sp = join(path, "diffusion");
        const Json& sj = has(j, "diffusion") ? j.at("diffusion") : Json{{"family", "identity"}};
        const Family f = family_of(sj, sp);
        if (f.name == "zero") {
            only_keys(sj, sp, {"family"});
            p.diffusion = [n, d](double, const Vec&, const Vec&) -> Mat { return Mat::Zero(n, d); };
        } else if (f.name == "identity") {
            only_keys(sj, sp, {"family", "scale"});
            const double s = number(sj, "scale", sp, 1.0);
            p.diffusion = [n, d, s](double, const Vec&, const Vec&) -> Mat { return s * Mat::Identity(n, d); };
        } else {
            unknown_family(f);
        }
    }
    p.generator = generator_from_json(has(j, "generator") ? j.at("generator") : Json{{"family", "zero"}},
                                      join(path, "generator"), d);
    // Terminal.
    {
        const std::string tp = join(path, "terminal");
        const Json& tj = has(j, "terminal") ? j.at("terminal") : Json{{"family", "zero"}};
        const Family f = family_of(tj, tp);
        if (f.name == "zero") {
            only_keys(tj, tp, {"family"});
            p.terminal = [](const Vec&) { return 0.0; };
        } else if (f.name == "constant") {
            only_keys(tj, tp, {"family", "c"});
            const double c = number(tj, "c", tp);
            p.terminal = [c](const Vec&) { return c; };
        } else if (f.name == "linear") {
            only_keys(tj, tp, {"family", "coefficients", "c"});
            const Vec a = vector(tj, "coefficients", tp, n);
            const double c = number(tj, "c", tp, 0.0);
            p.terminal = [a, c](const Vec& x) { return a.dot(x) + c; };
            p.terminal_lipschitz = a.norm();
        } else if (f.name == "quadratic") {
            only_keys(tj, tp, {"family", "scale"});
            const double s = number(tj, "scale", tp, 1.0);
            p.terminal = [s](const Vec& x) { return s * x.squaredNorm(); };
            p.terminal_lipschitz = 2.0 * std::abs(s) * ValidationOptions{}.state_radius * std::sqrt(double(n));
        } else {
            unknown_family(f);
        }
    }
    // Controls.
    {
        const std::string cp = join(path, "controls");
        if (has(j, "controls")) {
            const Json& cj = j.at("controls");
            only_keys(cj, cp, {"lower", "upper", "points"});
            const Vec lo = vector(cj, "lower", cp, k);
            const Vec hi = vector(cj, "upper", cp, k);
            for (int a = 0; a < k; ++a) {
                if (lo[a] > hi[a]) throw ConfigError(join(cp, "lower"), "lower bound exceeds upper bound");
            }
            std::vector<Vec> points;
            if (has(cj, "points")) {
                const Json& pj = cj.at("points");
                const std::string pp = join(cp, "points");
                if (!pj.is_array() || pj.empty()) throw ConfigError(pp, "expected a nonempty array of control points");
                for (std::size_t i = 0; i < pj.size(); ++i) {
                    const Vec v = vector(Json{{"v", pj[i]}}, "v", join(pp, i), k);
                    points.push_back(v);
                }
            }
            try {
                p.controls = ControlSet(lo, hi, std::move(points));
            } catch (const InvalidArgument& e) {
                throw ConfigError(cp, e.what());
            }
        } else {
            p.controls = ControlSet::singleton(Vec::Zero(k));
        }
    }
    p.coefficient_lipschitz = number(j, "coefficient_lipschitz", path, coeff_lip);
    p.terminal_lipschitz = number(j, "terminal_lipschitz", path, p.terminal_lipschitz);
    try {
        p.check_shape();
    } catch (const InvalidArgument& e) {
        throw ConfigError(path, e.what());
    }
    return p;
}

RegressionBasis basis_from_json(const Json& j, const std::string& path) {
    only_keys(j, path, {"kind", "degree", "width"});
    const std::string kind = string(j, "kind", path, "polynomial");
    if (kind == "polynomial") {
        const auto deg = count(j, "degree", path, 2, 0);
        if (deg > 6) throw ConfigError(join(path, "degree"), "must be <= 6");
        return RegressionBasis::polynomial(static_cast<int>(deg));
    }
    if (kind == "local_constant") return RegressionBasis::local_constant(positive(j, "width", path, 0.5));
    throw ConfigError(join(path, "kind"), "unknown basis kind '" + kind + "'");
}

}  // namespace bsdelab
