#include "submeta/optim.hpp"

#include <cmath>

namespace submeta {

BfgsResult minimize_bfgs(const ObjectiveFn& f, Eigen::VectorXd x0, const BfgsOptions& opts) {
    const Eigen::Index n = x0.size();
    BfgsResult out;
    out.x = std::move(x0);
    Eigen::VectorXd g(n), g_new(n);
    out.value = f(out.x, g);
    if (!std::isfinite(out.value)) return out;
    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);  // inverse Hessian approximation

    for (int it = 0; it < opts.max_iter; ++it) {
        out.grad_norm = g.lpNorm<Eigen::Infinity>();
        out.iterations = it;
        if (out.grad_norm < opts.grad_tol) {
            out.converged = true;
            return out;
        }
        Eigen::VectorXd dir = -h * g;
        double slope = g.dot(dir);
        if (!(slope < 0.0)) {
            h.setIdentity();
            dir = -g;
            slope = -g.squaredNorm();
        }
        double step = 1.0;
        Eigen::VectorXd x_new(n);
        double f_new = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = out.x + step * dir;
            f_new = f(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= out.value + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // No descent along a steepest direction either: stationary up to round-off.
            if (h.isIdentity()) break;
            h.setIdentity();
            continue;
        }
        const Eigen::VectorXd s = x_new - out.x;
        const Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const double rho = 1.0 / sy;
            const Eigen::VectorXd hy = h * y;
            h += ((sy + y.dot(hy)) * rho * rho) * (s * s.transpose())
                 - rho * (hy * s.transpose() + s * hy.transpose());
        }
        out.x = x_new;
        out.value = f_new;
        g = g_new;
    }
    out.grad_norm = g.lpNorm<Eigen::Infinity>();
    out.converged = out.grad_norm < opts.grad_tol;
    return out;
}

}  // namespace submeta
