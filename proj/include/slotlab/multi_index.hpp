#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "slotlab/errors.hpp"

namespace slotlab {

// Exponent tuple of a monomial; entries are non-negative.
using MultiIndex = std::vector<int>;

inline int order(const MultiIndex& a) {
    int s = 0;
    for (int e : a) s += e;
    return s;
}

inline MultiIndex add(const MultiIndex& a, const MultiIndex& b) {
    if (a.size() != b.size()) throw DimensionError("multi-index add: length mismatch");
    MultiIndex c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
    return c;
}

// z^p by repeated multiplication; p >= 0, and 0^0 = 1.
inline double ipow(double z, int p) {
    double r = 1.0;
    for (int i = 0; i < p; ++i) r *= z;
    return r;
}

// Falling factorial p·(p-1)···(p-k+1); equals the derivative prefactor of z^p taken k times.
inline double falling(int p, int k) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= static_cast<double>(p - i);
    return r;
}

// Monomial evaluation z^alpha = prod z_i^{alpha_i}, with 0^0 = 1.
inline double multi_index_eval(const MultiIndex& a, const Eigen::VectorXd& z) {
    if (static_cast<int>(a.size()) != z.size())
        throw DimensionError("multi_index_eval: exponent tuple length != vector length");
    double r = 1.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < 0) throw PreconditionError("multi_index_eval: negative exponent");
        r *= ipow(z[static_cast<Eigen::Index>(i)], a[i]);
    }
    return r;
}

// Value of the mixed partial of z^alpha taken once along each coordinate listed in
// `dirs` (repeats allowed). Exact, used as the analytic path for interaction tables.
inline double monomial_partial(const MultiIndex& a, const std::vector<int>& dirs,
                               const Eigen::VectorXd& z) {
    MultiIndex rem = a;
    double pref = 1.0;
    for (int d : dirs) {
        if (d < 0 || d >= static_cast<int>(rem.size()))
            throw DimensionError("monomial_partial: direction out of range");
        if (rem[static_cast<std::size_t>(d)] == 0) return 0.0;
        pref *= static_cast<double>(rem[static_cast<std::size_t>(d)]);
        rem[static_cast<std::size_t>(d)] -= 1;
    }
    return pref * multi_index_eval(rem, z);
}

namespace detail {
inline void enumerate_grade(int d, int g, MultiIndex& cur, std::vector<MultiIndex>& out) {
    if (d == 1) {
        cur.push_back(g);
        out.push_back(cur);
        cur.pop_back();
        return;
    }
    // First coordinate descends: within a grade the ordering is lexicographic
    // with earlier coordinates dominating, e.g. (1,0) before (0,1).
    for (int e = g; e >= 0; --e) {
        cur.push_back(e);
        enumerate_grade(d - 1, g - e, cur, out);
        cur.pop_back();
    }
}
} // namespace detail

// All alpha with |alpha| <= n over d coordinates, graded-lexicographic:
// grades ascend, ties broken lexicographically. The ordering fixes the
// coefficient layout used by serialization. Count is C(d+n, n).
inline std::vector<MultiIndex> enumerate_multi_indices(int d, int n) {
    if (d < 1) throw PreconditionError("enumerate_multi_indices: d must be >= 1");
    if (n < 0) throw PreconditionError("enumerate_multi_indices: n must be >= 0");
    std::vector<MultiIndex> out;
    MultiIndex cur;
    for (int g = 0; g <= n; ++g) detail::enumerate_grade(d, g, cur, out);
    return out;
}

// Monomial basis vector (z^alpha for each alpha in the table order).
inline Eigen::VectorXd monomial_basis(const std::vector<MultiIndex>& alphas,
                                      const Eigen::VectorXd& z) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(alphas.size()));
    for (std::size_t i = 0; i < alphas.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = multi_index_eval(alphas[i], z);
    return v;
}

} // namespace slotlab
