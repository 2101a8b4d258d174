#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slotlab/errors.hpp"
#include "slotlab/generator.hpp"
#include "slotlab/linalg.hpp"
#include "slotlab/slots.hpp"

namespace slotlab {

// Central-difference step sizes. Error model: truncation O(h^2) against
// round-off cancellation O(eps/h^order); h1 = 1e-4 balances the two for first
// derivatives at unit scale, h2 = h3 = 1e-3 for orders 2-3 where the stencil
// divides by h^2 and h^3.
struct FdConfig {
    double h1 = 1e-4;
    double h2 = 1e-3;
    double h3 = 1e-3;

    double step(int derivative_order) const {
        if (derivative_order <= 1) return h1;
        if (derivative_order == 2) return h2;
        return h3;
    }
};

// Non-owning differentiable-map view. `f` is required; the analytic channels
// may be empty, in which case callers fall back to finite differences. A view
// must not outlive the object it was built from.
struct SmoothFn {
    int in_dim = 0;
    int out_dim = 0;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> f;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jac;
    std::function<std::vector<Eigen::MatrixXd>(const Eigen::VectorXd&)> hess;
    std::function<Eigen::VectorXd(const std::vector<int>&, const Eigen::VectorXd&)> partial;
};

inline SmoothFn make_fn(int in_dim, int out_dim,
                        std::function<Eigen::VectorXd(const Eigen::VectorXd&)> f) {
    SmoothFn s;
    s.in_dim = in_dim;
    s.out_dim = out_dim;
    s.f = std::move(f);
    return s;
}

// View over a generator; exposes every analytic channel the generator has.
inline SmoothFn generator_fn(const InteractionGenerator& g) {
    SmoothFn s;
    s.in_dim = g.d_z();
    s.out_dim = g.d_x;
    s.f = [&g](const Eigen::VectorXd& z) { return g.eval(z); };
    s.jac = [&g](const Eigen::VectorXd& z) { return g.jacobian(z); };
    if (g.components_polynomial())
        s.hess = [&g](const Eigen::VectorXd& z) { return g.hessians(z); };
    s.partial = [&g](const std::vector<int>& dirs, const Eigen::VectorXd& z) {
        return g.partial(dirs, z);
    };
    return s;
}

namespace detail {

inline Eigen::VectorXd eval_checked(const SmoothFn& fn, const Eigen::VectorXd& z,
                                    const Eigen::VectorXd& offset) {
    Eigen::VectorXd v = fn.f(z);
    if (!v.allFinite()) {
        std::ostringstream os;
        os << "finite-difference stencil produced non-finite values at offset [";
        for (Eigen::Index i = 0; i < offset.size(); ++i)
            os << (i ? "," : "") << offset[i];
        os << "]";
        throw NumericError(os.str());
    }
    return v;
}

} // namespace detail

inline Eigen::MatrixXd fd_jacobian(const SmoothFn& fn, const Eigen::VectorXd& z, double h) {
    Eigen::MatrixXd J(fn.out_dim, fn.in_dim);
    for (int j = 0; j < fn.in_dim; ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(fn.in_dim);
        e[j] = h;
        Eigen::VectorXd fp = detail::eval_checked(fn, z + e, e);
        Eigen::VectorXd fm = detail::eval_checked(fn, z - e, -e);
        J.col(j) = (fp - fm) / (2.0 * h);
    }
    return J;
}

// Central mixed partial along `dirs` (any length >= 1, repeats allowed),
// realized as nested two-point stencils: 2^|dirs| evaluations.
inline Eigen::VectorXd fd_partial(const SmoothFn& fn, const std::vector<int>& dirs,
                                  const Eigen::VectorXd& z, double h) {
    if (dirs.empty()) return detail::eval_checked(fn, z, Eigen::VectorXd::Zero(fn.in_dim));
    std::function<Eigen::VectorXd(std::size_t, const Eigen::VectorXd&, const Eigen::VectorXd&)>
        rec = [&](std::size_t i, const Eigen::VectorXd& at,
                  const Eigen::VectorXd& offset) -> Eigen::VectorXd {
        if (i == dirs.size()) return detail::eval_checked(fn, at, offset);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(fn.in_dim);
        e[dirs[i]] = h;
        return (rec(i + 1, at + e, offset + e) - rec(i + 1, at - e, offset - e)) / (2.0 * h);
    };
    return rec(0, z, Eigen::VectorXd::Zero(fn.in_dim));
}

inline std::vector<Eigen::MatrixXd> fd_hessians(const SmoothFn& fn, const Eigen::VectorXd& z,
                                                double h) {
    std::vector<Eigen::MatrixXd> H(static_cast<std::size_t>(fn.out_dim),
                                   Eigen::MatrixXd::Zero(fn.in_dim, fn.in_dim));
    Eigen::VectorXd f0 = detail::eval_checked(fn, z, Eigen::VectorXd::Zero(fn.in_dim));
    for (int i = 0; i < fn.in_dim; ++i) {
        for (int j = i; j < fn.in_dim; ++j) {
            Eigen::VectorXd v;
            if (i == j) {
                Eigen::VectorXd e = Eigen::VectorXd::Zero(fn.in_dim);
                e[i] = h;
                v = (detail::eval_checked(fn, z + e, e) - 2.0 * f0 +
                     detail::eval_checked(fn, z - e, -e)) /
                    (h * h);
            } else {
                v = fd_partial(fn, {i, j}, z, h);
            }
            for (int o = 0; o < fn.out_dim; ++o) {
                H[static_cast<std::size_t>(o)](i, j) = v[o];
                H[static_cast<std::size_t>(o)](j, i) = v[o];
            }
        }
    }
    return H;
}

enum class DerivScheme { Analytic, Central };

inline std::string scheme_name(DerivScheme s) {
    return s == DerivScheme::Analytic ? "analytic" : "central-difference";
}

// Order-3 tensor per output o: third[o][i](j,k) = d^3 f_o / dz_i dz_j dz_k.
struct DerivativeReport {
    Eigen::VectorXd z;
    int order = 1;
    std::string scheme;
    double step = 0.0;
    Eigen::MatrixXd jacobian;
    std::vector<Eigen::MatrixXd> hessians;
    std::vector<std::vector<Eigen::MatrixXd>> third;
};

inline DerivativeReport derivative_oracle(const SmoothFn& fn, const Eigen::VectorXd& z,
                                          int order, DerivScheme scheme,
                                          const FdConfig& cfg = {}) {
    if (order < 1 || order > 3)
        throw CapabilityError("derivative_oracle: order must be 1, 2, or 3");
    if (z.size() != fn.in_dim) throw DimensionError("derivative_oracle: point size mismatch");
    DerivativeReport rep;
    rep.z = z;
    rep.order = order;
    rep.scheme = scheme_name(scheme);
    rep.step = scheme == DerivScheme::Analytic ? 0.0 : cfg.step(order);

    if (scheme == DerivScheme::Analytic) {
        if (!fn.jac) throw CapabilityError("derivative_oracle: no analytic Jacobian for this map");
        rep.jacobian = fn.jac(z);
        if (order >= 2) {
            if (fn.hess) {
                rep.hessians = fn.hess(z);
            } else if (fn.partial) {
                rep.hessians.assign(static_cast<std::size_t>(fn.out_dim),
                                    Eigen::MatrixXd::Zero(fn.in_dim, fn.in_dim));
                for (int i = 0; i < fn.in_dim; ++i)
                    for (int j = i; j < fn.in_dim; ++j) {
                        Eigen::VectorXd v = fn.partial({i, j}, z);
                        for (int o = 0; o < fn.out_dim; ++o) {
                            rep.hessians[static_cast<std::size_t>(o)](i, j) = v[o];
                            rep.hessians[static_cast<std::size_t>(o)](j, i) = v[o];
                        }
                    }
            } else {
                throw CapabilityError("derivative_oracle: no analytic Hessian for this map");
            }
        }
        if (order >= 3) {
            if (!fn.partial)
                throw CapabilityError("derivative_oracle: no analytic order-3 path for this map");
            rep.third.assign(static_cast<std::size_t>(fn.out_dim),
                             std::vector<Eigen::MatrixXd>(
                                 static_cast<std::size_t>(fn.in_dim),
                                 Eigen::MatrixXd::Zero(fn.in_dim, fn.in_dim)));
            for (int i = 0; i < fn.in_dim; ++i)
                for (int j = i; j < fn.in_dim; ++j)
                    for (int k = j; k < fn.in_dim; ++k) {
                        Eigen::VectorXd v = fn.partial({i, j, k}, z);
                        int idx[3] = {i, j, k};
                        // Write all permutations; the tensor is symmetric.
                        std::sort(idx, idx + 3);
                        do {
                            for (int o = 0; o < fn.out_dim; ++o)
                                rep.third[static_cast<std::size_t>(o)]
                                         [static_cast<std::size_t>(idx[0])](idx[1], idx[2]) = v[o];
                        } while (std::next_permutation(idx, idx + 3));
                    }
        }
        return rep;
    }

    rep.jacobian = fd_jacobian(fn, z, cfg.h1);
    if (order >= 2) rep.hessians = fd_hessians(fn, z, cfg.h2);
    if (order >= 3) {
        rep.third.assign(static_cast<std::size_t>(fn.out_dim),
                         std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(fn.in_dim),
                                                      Eigen::MatrixXd::Zero(fn.in_dim, fn.in_dim)));
        for (int i = 0; i < fn.in_dim; ++i)
            for (int j = i; j < fn.in_dim; ++j)
                for (int k = j; k < fn.in_dim; ++k) {
                    Eigen::VectorXd v = fd_partial(fn, {i, j, k}, z, cfg.h3);
                    int idx[3] = {i, j, k};
                    std::sort(idx, idx + 3);
                    do {
                        for (int o = 0; o < fn.out_dim; ++o)
                            rep.third[static_cast<std::size_t>(o)]
                                     [static_cast<std::size_t>(idx[0])](idx[1], idx[2]) = v[o];
                    } while (std::next_permutation(idx, idx + 3));
                }
    }
    return rep;
}

// Residual of the claim "no interactions above degree n". The main value is the
// largest order-(n+1) mixed partial whose directions span at least two slots.
// For n = 0 that set is empty; the returned slot_exclusivity field then carries
// the per-output product condition: with g_k the largest first-derivative
// magnitude of output i inside slot k, the residual is max_i over slot pairs of
// g_k * g_l, i.e. the product of the two largest per-slot magnitudes.
struct CrossSlotReport {
    double max_cross_partial = 0.0;
    std::optional<double> slot_exclusivity;
};

inline CrossSlotReport cross_slot_residual(const SmoothFn& fn, const SlotStructure& slots,
                                           const Eigen::VectorXd& z, int n,
                                           DerivScheme scheme = DerivScheme::Central,
                                           const FdConfig& cfg = {}) {
    if (n < 0 || n > 2)
        throw CapabilityError("cross_slot_residual: implemented for n in {0,1,2}");
    if (slots.d_z() != fn.in_dim)
        throw DimensionError("cross_slot_residual: slot structure does not match map");
    CrossSlotReport rep;

    if (n == 0) {
        Eigen::MatrixXd J;
        if (scheme == DerivScheme::Analytic) {
            if (!fn.jac) throw CapabilityError("cross_slot_residual: no analytic Jacobian");
            J = fn.jac(z);
        } else {
            J = fd_jacobian(fn, z, cfg.h1);
        }
        double worst = 0.0;
        for (int o = 0; o < fn.out_dim; ++o) {
            std::vector<double> mag(static_cast<std::size_t>(slots.K), 0.0);
            for (int c = 0; c < slots.d_z(); ++c)
                mag[static_cast<std::size_t>(slots.slot_of(c))] =
                    std::max(mag[static_cast<std::size_t>(slots.slot_of(c))],
                             std::abs(J(o, c)));
            std::sort(mag.begin(), mag.end(), std::greater<double>());
            if (mag.size() >= 2) worst = std::max(worst, mag[0] * mag[1]);
        }
        rep.slot_exclusivity = worst;
        return rep;
    }

    auto cross_value = [&](const std::vector<int>& dirs) -> double {
        Eigen::VectorXd v;
        if (scheme == DerivScheme::Analytic) {
            if (!fn.partial)
                throw CapabilityError("cross_slot_residual: no analytic partials for this map");
            v = fn.partial(dirs, z);
        } else {
            v = fd_partial(fn, dirs, z, cfg.step(static_cast<int>(dirs.size())));
        }
        return max_abs(v);
    };

    double worst = 0.0;
    if (n == 1) {
        for (int a = 0; a < slots.d_z(); ++a)
            for (int b = a + 1; b < slots.d_z(); ++b)
                if (slots.slot_of(a) != slots.slot_of(b))
                    worst = std::max(worst, cross_value({a, b}));
    } else {
        for (int a = 0; a < slots.d_z(); ++a)
            for (int b = a; b < slots.d_z(); ++b)
                for (int c = b; c < slots.d_z(); ++c) {
                    int sa = slots.slot_of(a), sb = slots.slot_of(b), sc = slots.slot_of(c);
                    if (sa == sb && sb == sc) continue;
                    worst = std::max(worst, cross_value({a, b, c}));
                }
    }
    rep.max_cross_partial = worst;
    return rep;
}

struct DiffeoReport {
    double min_sigma = 0.0;
    Eigen::VectorXd witness; // point attaining the minimum
    double threshold = 0.0;
    bool pass = false;
};

inline DiffeoReport check_diffeomorphism(const SmoothFn& fn,
                                         const std::vector<Eigen::VectorXd>& points,
                                         double threshold = 1e-6, const FdConfig& cfg = {}) {
    if (points.empty()) throw PreconditionError("check_diffeomorphism: need at least one point");
    DiffeoReport rep;
    rep.threshold = threshold;
    rep.min_sigma = std::numeric_limits<double>::infinity();
    for (const auto& z : points) {
        Eigen::MatrixXd J = fn.jac ? fn.jac(z) : fd_jacobian(fn, z, cfg.h1);
        double s = sigma_min(J);
        if (s < rep.min_sigma) {
            rep.min_sigma = s;
            rep.witness = z;
        }
    }
    rep.pass = rep.min_sigma > threshold;
    return rep;
}

} // namespace slotlab
