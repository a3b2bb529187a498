#pragma once

#include "bsdelab/problem.hpp"
#include "bsdelab/regression.hpp"

#include "json.hpp"

#include <optional>
#include <string>

namespace bsdelab {

using Json = nlohmann::json;

/// Typed access to JSON objects. Every failure throws ConfigError carrying the
/// key path (e.g. "/experiments/0/grid/N").
namespace config {

std::string join(const std::string& path, const std::string& key);
std::string join(const std::string& path, std::size_t index);

const Json& object(const Json& j, const std::string& path);
bool has(const Json& obj, const std::string& key);
/// Rejects keys outside `allowed`.
void only_keys(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed);

double number(const Json& obj, const std::string& key, const std::string& path, std::optional<double> fallback = {});
double positive(const Json& obj, const std::string& key, const std::string& path, std::optional<double> fallback = {});
std::size_t count(const Json& obj, const std::string& key, const std::string& path,
                  std::optional<std::size_t> fallback = {}, std::size_t minimum = 0);
std::uint64_t u64(const Json& obj, const std::string& key, const std::string& path,
                  std::optional<std::uint64_t> fallback = {});
bool boolean(const Json& obj, const std::string& key, const std::string& path, std::optional<bool> fallback = {});
std::string string(const Json& obj, const std::string& key, const std::string& path,
                   std::optional<std::string> fallback = {});
/// Array of `dim` numbers (dim < 0 accepts any length in [1, kMaxDim]).
Vec vector(const Json& obj, const std::string& key, const std::string& path, int dim,
           std::optional<Vec> fallback = {});

}  // namespace config

/// Coefficient families accepted in a "problem" object:
///   drift:      zero | constant{value} | control | linear{a, c}        (b = a x + c)
///   diffusion:  zero | identity{scale}                                 (sigma = scale I)
///   generator:  zero | constant{c} | linear{a_y, a_z, c} | abs_z{scale}
///               | time_jump{t_star, jump}                              (jump * 1{t >= t_star})
///   terminal:   zero | constant{c} | linear{coefficients, c} | quadratic{scale}
///   controls:   {lower, upper, points?}
/// plus n, d, k, T and optional coefficient_lipschitz / terminal_lipschitz
/// overriding the constants derived from the families.
ControlProblem problem_from_json(const Json& j, const std::string& path);

/// Generator family object on its own (used by the representation probes).
GeneratorSpec generator_from_json(const Json& j, const std::string& path, int d);

/// {"kind": "polynomial", "degree": p} or {"kind": "local_constant", "width": w}.
RegressionBasis basis_from_json(const Json& j, const std::string& path);

}  // namespace bsdelab
