// Shared aliases and error types used across the mhcg library.
#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace mhcg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Fixed-length caption: token indices in [0, |V|).
using TokenSequence = std::vector<int>;

// Invalid or inconsistent configuration; maps to CLI exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unrecoverable runtime failure (non-finite loss or density); exit code 2.
struct RunAbort : std::runtime_error {
    explicit RunAbort(const std::string& msg) : std::runtime_error(msg) {}
};

// Result is mathematically undefined for the given inputs (e.g. a partial
// correlation conditioned on a perfectly correlated regressor).
struct DegenerateResult : std::runtime_error {
    explicit DegenerateResult(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mhcg
