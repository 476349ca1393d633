#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace bohmflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Invalid or inconsistent user-supplied configuration (shapes, ranges, files).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A computation produced non-finite values or failed to converge.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Requested capability outside the supported envelope (e.g. jet order > 5).
class UnsupportedError : public std::runtime_error {
public:
    explicit UnsupportedError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bohmflow
