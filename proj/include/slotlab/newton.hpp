#pragma once

#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "slotlab/derivatives.hpp"
#include "slotlab/errors.hpp"

namespace slotlab {

struct NewtonConfig {
    int max_iters = 60;
    // On-manifold success: ||f(z) - x|| <= residual_tol * (1 + ||x||).
    double residual_tol = 1e-12;
    // Stationary-point success (off-manifold projection): ||J^T r|| <= grad_tol * (1 + ||r||).
    double grad_tol = 1e-13;
    // Step stall: ||step|| <= step_tol * (1 + ||z||) ends the iteration.
    double step_tol = 3e-16;
    double init_damping = 0.0;
    int max_backtracks = 20;
    double fd_step = 1e-6; // Jacobian fallback when the map has no analytic one
};

struct NewtonResult {
    Eigen::VectorXd z;
    int iters = 0;
    double residual_norm = 0.0;
    double grad_norm = 0.0;
    bool on_manifold = false;
};

// Gauss-Newton iterations on 0.5*||f(z) - x||^2. For d_x = d_z and invertible
// Jacobians this is plain Newton on f(z) = x; for d_x > d_z it converges to the
// least-squares projection, which is the left-inverse evaluation off-manifold.
inline NewtonResult newton_left_inverse(const SmoothFn& f, const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& z0,
                                        const NewtonConfig& cfg = {}) {
    if (x.size() != f.out_dim) throw DimensionError("newton_left_inverse: x size mismatch");
    if (z0.size() != f.in_dim) throw DimensionError("newton_left_inverse: z0 size mismatch");

    auto jac_at = [&](const Eigen::VectorXd& z) {
        return f.jac ? f.jac(z) : fd_jacobian(f, z, cfg.fd_step);
    };

    Eigen::VectorXd z = z0;
    Eigen::VectorXd r = f.f(z) - x;
    if (!r.allFinite()) throw NumericError("newton_left_inverse: non-finite residual at z0");
    double rn = r.norm();
    double x_scale = 1.0 + x.norm();

    NewtonResult res;
    for (int it = 0; it < cfg.max_iters; ++it) {
        if (rn <= cfg.residual_tol * x_scale) {
            res.z = z;
            res.iters = it;
            res.residual_norm = rn;
            res.grad_norm = 0.0;
            res.on_manifold = true;
            return res;
        }
        Eigen::MatrixXd J = jac_at(z);
        Eigen::VectorXd g = J.transpose() * r;
        double gn = g.norm();
        if (gn <= cfg.grad_tol * (1.0 + rn)) {
            res.z = z;
            res.iters = it;
            res.residual_norm = rn;
            res.grad_norm = gn;
            res.on_manifold = rn <= 1e-8 * x_scale;
            return res;
        }

        // Solve for the Gauss-Newton step; escalate damping on singular systems.
        Eigen::VectorXd delta;
        double lambda = cfg.init_damping;
        bool solved = false;
        for (int attempt = 0; attempt < 7; ++attempt) {
            if (f.in_dim == f.out_dim && lambda == 0.0) {
                Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
                if (lu.isInvertible()) {
                    delta = lu.solve(r);
                    solved = delta.allFinite();
                }
            } else {
                Eigen::MatrixXd H = J.transpose() * J;
                if (lambda > 0.0)
                    H.diagonal().array() += lambda * (1.0 + H.diagonal().maxCoeff());
                Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
                if (ldlt.info() == Eigen::Success) {
                    delta = ldlt.solve(g);
                    solved = delta.allFinite() &&
                             (H * delta - g).norm() <= 1e-8 * (1.0 + g.norm());
                }
            }
            if (solved) break;
            lambda = lambda == 0.0 ? 1e-10 : lambda * 100.0;
        }
        if (!solved)
            throw NumericError("newton_left_inverse: singular normal equations after retries");

        // Backtracking on the residual norm.
        double t = 1.0;
        Eigen::VectorXd z_new;
        double rn_new = 0.0;
        Eigen::VectorXd r_new;
        bool improved = false;
        for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
            z_new = z - t * delta;
            r_new = f.f(z_new) - x;
            if (r_new.allFinite()) {
                rn_new = r_new.norm();
                if (rn_new < rn) {
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if (!improved) {
            // No descent along the Gauss-Newton direction: accept as stationary
            // if the gradient is already small, otherwise give up loudly.
            if (gn <= 1e-8 * (1.0 + rn)) {
                res.z = z;
                res.iters = it;
                res.residual_norm = rn;
                res.grad_norm = gn;
                res.on_manifold = rn <= 1e-8 * x_scale;
                return res;
            }
            std::ostringstream os;
            os << "newton_left_inverse: no descent at iteration " << it
               << ", residual " << rn;
            throw ConvergenceError(os.str(), rn);
        }
        double step_norm = (t * delta).norm();
        z = z_new;
        r = r_new;
        rn = rn_new;
        if (step_norm <= cfg.step_tol * (1.0 + z.norm())) {
            Eigen::MatrixXd J2 = jac_at(z);
            double gn2 = (J2.transpose() * r).norm();
            res.z = z;
            res.iters = it + 1;
            res.residual_norm = rn;
            res.grad_norm = gn2;
            res.on_manifold = rn <= cfg.residual_tol * x_scale * 10.0 || rn <= 1e-10 * x_scale;
            return res;
        }
    }
    // Final acceptance check after the loop budget.
    if (rn <= cfg.residual_tol * x_scale) {
        res.z = z;
        res.iters = cfg.max_iters;
        res.residual_norm = rn;
        res.on_manifold = true;
        return res;
    }
    Eigen::MatrixXd J = jac_at(z);
    double gn = (J.transpose() * r).norm();
    if (gn <= cfg.grad_tol * (1.0 + rn) * 100.0) {
        res.z = z;
        res.iters = cfg.max_iters;
        res.residual_norm = rn;
        res.grad_norm = gn;
        res.on_manifold = rn <= 1e-8 * x_scale;
        return res;
    }
    std::ostringstream os;
    os << "newton_left_inverse: no convergence in " << cfg.max_iters
       << " iterations, residual " << rn;
    throw ConvergenceError(os.str(), rn);
}

} // namespace slotlab
