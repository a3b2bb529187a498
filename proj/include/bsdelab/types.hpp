#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace bsdelab {

/// Upper bound on every state, noise and control dimension. Vectors and
/// matrices below are stack-allocated up to this size.
inline constexpr int kMaxDim = 6;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Precondition violated or input rejected (bad grid, contraction violated, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Non-finite value or blow-up during a computation.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Configuration does not match the documented schema. `key_path()` is a
/// JSON-pointer-like path to the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string key_path, const std::string& what)
        : Error(key_path + ": " + what), key_path_(std::move(key_path)) {}

    const std::string& key_path() const noexcept { return key_path_; }

private:
    std::string key_path_;
};

}  // namespace bsdelab
