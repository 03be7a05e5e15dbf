#pragma once

#include <functional>

#include <Eigen/Dense>

namespace submeta {

/// Objective returning f(x) and writing the gradient into `grad`.
using ObjectiveFn = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct BfgsOptions {
    double grad_tol = 1e-6;
    int max_iter = 500;
};

struct BfgsResult {
    Eigen::VectorXd x;
    double value = 0.0;
    double grad_norm = 0.0;  // max-norm
    int iterations = 0;
    bool converged = false;
};

/// Unconstrained minimization by BFGS with a backtracking Armijo line search.
BfgsResult minimize_bfgs(const ObjectiveFn& f, Eigen::VectorXd x0, const BfgsOptions& opts = {});

}  // namespace submeta
