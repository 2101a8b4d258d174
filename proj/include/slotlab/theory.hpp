#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slotlab/certificate.hpp"
#include "slotlab/derivatives.hpp"
#include "slotlab/errors.hpp"
#include "slotlab/generator.hpp"
#include "slotlab/linalg.hpp"
#include "slotlab/newton.hpp"
#include "slotlab/rng.hpp"

namespace slotlab {

// Numeric left inverse of f as a map view: every evaluation runs Gauss-Newton
// from the fixed warm start, so the view is pure and thread-safe.
inline SmoothFn make_numeric_inverse(const SmoothFn& f, const Eigen::VectorXd& warm_start,
                                     const NewtonConfig& cfg = {}) {
    SmoothFn g;
    g.in_dim = f.out_dim;
    g.out_dim = f.in_dim;
    g.f = [f, warm_start, cfg](const Eigen::VectorXd& x) {
        return newton_left_inverse(f, x, warm_start, cfg).z;
    };
    return g;
}

// Residual of the differentiated inverse identity at z: for each latent output s,
//   Df(z)^T D2g_s(f(z)) Df(z) + sum_k (d_k g_s)(f(z)) D2f_k(z)
// vanishes when g is a left inverse of f. Returns the max-abs entry per s.
inline Eigen::VectorXd key_relation_residual(const SmoothFn& f, const SmoothFn& g,
                                             const Eigen::VectorXd& z,
                                             const FdConfig& fd = {}) {
    if (!f.jac) throw CapabilityError("key_relation_residual: f needs an analytic Jacobian");
    Eigen::VectorXd x = f.f(z);
    Eigen::MatrixXd Df = f.jac(z);
    std::vector<Eigen::MatrixXd> Hf;
    if (f.hess) {
        Hf = f.hess(z);
    } else {
        SmoothFn fv = f;
        Hf = fd_hessians(fv, z, fd.h2);
    }
    Eigen::MatrixXd Dg = fd_jacobian(g, x, fd.h1);
    std::vector<Eigen::MatrixXd> Hg = fd_hessians(g, x, fd.h2);

    Eigen::VectorXd out(f.in_dim);
    for (int s = 0; s < f.in_dim; ++s) {
        Eigen::MatrixXd R = Df.transpose() * Hg[static_cast<std::size_t>(s)] * Df;
        for (int k = 0; k < f.out_dim; ++k)
            R += Dg(s, k) * Hf[static_cast<std::size_t>(k)];
        out[s] = max_abs(R);
    }
    return out;
}

struct DiagonalityConfig {
    double min_sigma = 0.1;      // points with sigma_min(Df) below this are rejected
    double tol_rel = 1e-4;       // pass threshold on off-diagonal / matrix scale
    double floor_rel = 1e-3;     // converse instances must exceed this
    bool expect_diagonal = true; // false: certify the converse direction
    NewtonConfig newton;
    FdConfig fd;
};

// Square-case diagonality check at x = f(z): with Dg = (Df)^{-1}, the matrix
//   T_s = (Dg)^{-T} D2g_s (Dg)^{-1} = Df^T D2g_s(x) Df
// must be diagonal for coordinate-wise additive f; an f with a genuine cross
// term must violate it by a margin. D2g comes from finite differences of the
// Newton inverse.
inline TheoryCertificate lemma_second_diagonality(const InteractionGenerator& f,
                                                  const Eigen::VectorXd& z,
                                                  const DiagonalityConfig& cfg = {},
                                                  const std::string& id = "square-diagonality") {
    if (f.d_x != f.d_z())
        throw PreconditionError("lemma_second_diagonality: requires d_x = d_z");
    if (f.slots.m != 1)
        throw PreconditionError("lemma_second_diagonality: requires scalar slots (m = 1)");
    if (cfg.expect_diagonal && f.n > 1)
        throw PreconditionError(
            "lemma_second_diagonality: diagonality only claimed for additive maps (n <= 1)");
    SmoothFn ffn = generator_fn(f);
    Eigen::MatrixXd Df = f.jacobian(z);
    double smin = sigma_min(Df);
    if (smin <= cfg.min_sigma) {
        std::ostringstream os;
        os << "lemma_second_diagonality: near-singular Jacobian, sigma_min = " << smin;
        throw NumericError(os.str());
    }
    Eigen::VectorXd x = ffn.f(z);
    SmoothFn g = make_numeric_inverse(ffn, z, cfg.newton);
    std::vector<Eigen::MatrixXd> Hg = fd_hessians(g, x, cfg.fd.h2);

    double max_off = 0.0, max_norm = 0.0;
    for (int s = 0; s < f.d_z(); ++s) {
        Eigen::MatrixXd T = Df.transpose() * Hg[static_cast<std::size_t>(s)] * Df;
        max_off = std::max(max_off, max_offdiag(T));
        max_norm = std::max(max_norm, max_abs(T));
    }
    double rel = max_off / (max_norm + 1e-300);

    TheoryCertificate cert;
    cert.id = id;
    std::ostringstream desc;
    desc << "d=" << f.d_z() << " sigma_min=" << smin;
    cert.description = desc.str();
    cert.info["sigma_min"] = smin;
    cert.info["matrix_scale"] = max_norm;
    if (cfg.expect_diagonal) {
        cert.add_residual("offdiagonal_rel", rel, cfg.tol_rel);
    } else {
        cert.add_floor("offdiagonal_rel", rel, cfg.floor_rel);
    }
    cert.finalize();
    return cert;
}

// Pi = Df (Df^T Df)^{-1} Df^T, the orthogonal projector onto the tangent space
// of the image manifold at f(z).
inline Eigen::MatrixXd tangent_projector(const SmoothFn& f, const Eigen::VectorXd& z) {
    if (!f.jac) throw CapabilityError("tangent_projector: map needs an analytic Jacobian");
    Eigen::MatrixXd Df = f.jac(z);
    double smin = sigma_min(Df);
    double smax = sigma_max(Df);
    if (smin <= kSvdCutoff * std::max(1.0, smax)) {
        std::ostringstream os;
        os << "tangent_projector: Jacobian rank-deficient, sigma_min = " << smin;
        throw NumericError(os.str());
    }
    Eigen::MatrixXd G = Df.transpose() * Df;
    return Df * G.ldlt().solve(Df.transpose());
}

// Embedded-case diagonality at x = f(z): with W = ((Dg(x) Pi)^+), the matrices
// W^T D2g_s(x) W must be diagonal, and W must reproduce Df(z) (the projected
// pseudoinverse identification). g is the Gauss-Newton projection inverse.
inline TheoryCertificate lemma_secondb_check(const InteractionGenerator& f,
                                             const Eigen::VectorXd& z,
                                             const DiagonalityConfig& cfg = {},
                                             const std::string& id = "embedded-diagonality") {
    if (f.d_x <= f.d_z())
        throw PreconditionError("lemma_secondb_check: requires d_x > d_z");
    if (f.slots.m != 1)
        throw PreconditionError("lemma_secondb_check: requires scalar slots (m = 1)");
    if (cfg.expect_diagonal && f.n > 1)
        throw PreconditionError(
            "lemma_secondb_check: diagonality only claimed for additive maps (n <= 1)");
    SmoothFn ffn = generator_fn(f);
    Eigen::MatrixXd Df = f.jacobian(z);
    double smin = sigma_min(Df);
    if (smin <= cfg.min_sigma) {
        std::ostringstream os;
        os << "lemma_secondb_check: ill-conditioned Jacobian, sigma_min = " << smin;
        throw NumericError(os.str());
    }
    Eigen::VectorXd x = ffn.f(z);
    SmoothFn g = make_numeric_inverse(ffn, z, cfg.newton);
    Eigen::MatrixXd Dg = fd_jacobian(g, x, cfg.fd.h1);
    std::vector<Eigen::MatrixXd> Hg = fd_hessians(g, x, cfg.fd.h2);
    Eigen::MatrixXd Pi = tangent_projector(ffn, z);
    Eigen::MatrixXd W = pinv(Dg * Pi);

    double w_err = max_abs(W - Df) / (1.0 + max_abs(Df));
    double max_off = 0.0, max_norm = 0.0;
    for (int s = 0; s < f.d_z(); ++s) {
        Eigen::MatrixXd T = W.transpose() * Hg[static_cast<std::size_t>(s)] * W;
        max_off = std::max(max_off, max_offdiag(T));
        max_norm = std::max(max_norm, max_abs(T));
    }
    double rel = max_off / (max_norm + 1e-300);

    TheoryCertificate cert;
    cert.id = id;
    std::ostringstream desc;
    desc << "d_z=" << f.d_z() << " d_x=" << f.d_x << " sigma_min=" << smin;
    cert.description = desc.str();
    cert.info["sigma_min"] = smin;
    cert.info["matrix_scale"] = max_norm;
    cert.add_residual("projected_pinv_vs_Df_rel", w_err, 1e-5);
    if (cfg.expect_diagonal) {
        cert.add_residual("offdiagonal_rel", rel, cfg.tol_rel);
    } else {
        cert.add_floor("offdiagonal_rel", rel, cfg.floor_rel);
    }
    cert.finalize();
    return cert;
}

// Any right inverse is the pseudoinverse of A restricted to its own range:
// checks B = (A Pi)^+ with Pi the orthogonal projector onto Range(B).
inline TheoryCertificate moore_penrose_check(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                             double tol = 1e-10,
                                             const std::string& id = "right-inverse-pinv") {
    if (A.cols() != B.rows() || A.rows() != B.cols())
        throw DimensionError("moore_penrose_check: incompatible shapes");
    if (A.rows() > A.cols())
        throw PreconditionError("moore_penrose_check: requires d1 <= d2");
    Eigen::MatrixXd AB = A * B;
    double id_err = max_abs(AB - Eigen::MatrixXd::Identity(A.rows(), A.rows()));
    if (id_err > 1e-12)
        throw PreconditionError("moore_penrose_check: A*B is not the identity");

    Eigen::MatrixXd Pi = projector_onto_range(B);
    Eigen::MatrixXd R = pinv(A * Pi);
    double err = max_abs(B - R);

    TheoryCertificate cert;
    cert.id = id;
    std::ostringstream desc;
    desc << "d1=" << A.rows() << " d2=" << A.cols();
    cert.description = desc.str();
    cert.info["ab_identity_err"] = id_err;
    cert.add_residual("pinv_identification", err, tol);
    cert.finalize();
    return cert;
}

struct ConstructMConfig {
    double cutoff = kSvdCutoff;
    // Untested regime below d_x = d_z^3; no guarantee, explicitly opt-in.
    bool allow_sub_cubic_dx = false;
};

struct ConstructMResult {
    Eigen::MatrixXd M;                 // d_x x d_z, A*M = Id, M^T B_s M diagonal
    std::vector<Eigen::MatrixXd> bases; // orthonormal basis per subspace V_i
};

// Builds M column by column inside mutually B-orthogonal subspaces:
// V_1 is fixed from the SVD of B_1 (any choice is valid; this one is
// deterministic), V_{j+1} lives in the null space of the stacked bilinear
// operator T_j v = ((v^{i,k})^T B_s v)_{s,i,k}, and each column solves
// A w^i = e^i inside V_i. The per-column systems are singular exactly on the
// measure-zero set of A where the result does not exist.
inline ConstructMResult construct_M(const Eigen::MatrixXd& A,
                                    const std::vector<Eigen::MatrixXd>& B,
                                    const ConstructMConfig& cfg = {}) {
    const int d_z = static_cast<int>(A.rows());
    const int d_x = static_cast<int>(A.cols());
    if (static_cast<int>(B.size()) != d_z)
        throw DimensionError("construct_M: need one symmetric B_s per latent output");
    for (const auto& Bs : B) {
        if (Bs.rows() != d_x || Bs.cols() != d_x)
            throw DimensionError("construct_M: B_s must be d_x x d_x");
        if (max_abs(Bs - Bs.transpose()) > 1e-12)
            throw PreconditionError("construct_M: B_s must be symmetric");
    }
    long needed = static_cast<long>(d_z) * d_z * d_z;
    if (!cfg.allow_sub_cubic_dx && d_x < needed)
        throw PreconditionError("construct_M: requires d_x >= d_z^3");
    if (d_x < d_z)
        throw PreconditionError("construct_M: requires d_x >= d_z");

    ConstructMResult res;
    // V_1: trailing left singular vectors of B_1 (complement of its dominant
    // range). The choice of V_1 is free, so when A degenerates on that
    // particular subspace (e.g. B_1 = 0 with coordinate-supported A) fall back
    // to the row space of A, where A restricted is always nonsingular. Both
    // branches are deterministic; genuine obstructions surface in the later
    // subspaces regardless of the V_1 choice.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B[0], Eigen::ComputeFullU);
    Eigen::MatrixXd V1 = svd.matrixU().rightCols(d_z);
    {
        Eigen::MatrixXd S = A * V1;
        if (sigma_max(S) <= 0.0 || sigma_min(S) <= cfg.cutoff * sigma_max(S)) {
            Eigen::JacobiSVD<Eigen::MatrixXd> asvd(A, Eigen::ComputeFullV);
            V1 = asvd.matrixV().leftCols(d_z);
        }
    }
    res.bases.push_back(V1);

    for (int j = 1; j < d_z; ++j) {
        Eigen::MatrixXd T(static_cast<Eigen::Index>(d_z) * j * d_z, d_x);
        Eigen::Index row = 0;
        for (int s = 0; s < d_z; ++s)
            for (int i = 0; i < j; ++i)
                for (int k = 0; k < d_z; ++k)
                    T.row(row++) =
                        (B[static_cast<std::size_t>(s)] *
                         res.bases[static_cast<std::size_t>(i)].col(k))
                            .transpose();
        Eigen::MatrixXd N = nullspace(T, cfg.cutoff);
        if (N.cols() < d_z) {
            std::ostringstream os;
            os << "construct_M: constraint null space too small at stage " << j + 1
               << " (dim " << N.cols() << ", need " << d_z << ")";
            throw InfeasibleError(os.str(), -1);
        }
        Eigen::MatrixXd V = N;
        if (N.cols() > d_z) {
            // Excess null directions leave the choice free; take the d_z of
            // them A sees best (right singular vectors of A*N), so feasible
            // instances are not failed on an arbitrary slice. A vanishing on
            // the whole null space still yields a singular per-column system
            // below, which is a genuine obstruction.
            Eigen::JacobiSVD<Eigen::MatrixXd> psvd(A * N, Eigen::ComputeFullV);
            V = N * psvd.matrixV().leftCols(d_z);
        }
        res.bases.push_back(V);
    }

    res.M.resize(d_x, d_z);
    for (int i = 0; i < d_z; ++i) {
        Eigen::MatrixXd S = A * res.bases[static_cast<std::size_t>(i)]; // d_z x d_z
        Eigen::JacobiSVD<Eigen::MatrixXd> ssvd(S);
        double smax = ssvd.singularValues().maxCoeff();
        double smin = ssvd.singularValues().minCoeff();
        if (smax <= 0.0 || smin <= cfg.cutoff * smax) {
            std::ostringstream os;
            os << "construct_M: singular per-column solve for column " << i + 1;
            throw InfeasibleError(os.str(), i);
        }
        Eigen::VectorXd e = Eigen::VectorXd::Zero(d_z);
        e[i] = 1.0;
        Eigen::VectorXd lam = Eigen::FullPivLU<Eigen::MatrixXd>(S).solve(e);
        if (!lam.allFinite()) {
            std::ostringstream os;
            os << "construct_M: singular per-column solve for column " << i + 1;
            throw InfeasibleError(os.str(), i);
        }
        res.M.col(i) = res.bases[static_cast<std::size_t>(i)] * lam;
    }
    return res;
}

// Diagonal matrices Lambda^i (stored as their diagonals) with
// D^s = -sum_i A_{s,i} Lambda^i, obtained as the minimum-norm least-squares
// solution of (A kron Id) lambda = -d over the stacked diagonals.
inline std::vector<Eigen::VectorXd> solve_lambda(const Eigen::MatrixXd& A,
                                                 const std::vector<Eigen::VectorXd>& D,
                                                 double cutoff = kSvdCutoff) {
    const int d_z = static_cast<int>(A.rows());
    const int d_x = static_cast<int>(A.cols());
    if (static_cast<int>(D.size()) != d_z)
        throw DimensionError("solve_lambda: need one diagonal D^s per row of A");
    for (const auto& Ds : D)
        if (Ds.size() != d_z) throw DimensionError("solve_lambda: D^s diagonal length mismatch");
    if (numeric_rank(A, cutoff) < d_z)
        throw NumericError("solve_lambda: A is rank-deficient");

    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d_z) * d_z,
                                              static_cast<Eigen::Index>(d_x) * d_z);
    Eigen::VectorXd d(static_cast<Eigen::Index>(d_z) * d_z);
    for (int s = 0; s < d_z; ++s)
        for (int r = 0; r < d_z; ++r) {
            Eigen::Index ri = static_cast<Eigen::Index>(s) * d_z + r;
            d[ri] = D[static_cast<std::size_t>(s)][r];
            for (int i = 0; i < d_x; ++i) K(ri, static_cast<Eigen::Index>(i) * d_z + r) = A(s, i);
        }
    Eigen::VectorXd lam = lstsq_minnorm(K, Eigen::VectorXd(-d), cutoff);
    std::vector<Eigen::VectorXd> out;
    for (int i = 0; i < d_x; ++i) out.push_back(lam.segment(static_cast<Eigen::Index>(i) * d_z, d_z));
    return out;
}

inline double solve_lambda_residual(const Eigen::MatrixXd& A,
                                    const std::vector<Eigen::VectorXd>& D,
                                    const std::vector<Eigen::VectorXd>& lambda) {
    double worst = 0.0;
    for (int s = 0; s < A.rows(); ++s) {
        Eigen::VectorXd acc = D[static_cast<std::size_t>(s)];
        for (int i = 0; i < A.cols(); ++i)
            acc += A(s, i) * lambda[static_cast<std::size_t>(i)];
        worst = std::max(worst, acc.cwiseAbs().maxCoeff());
    }
    return worst;
}

struct CounterexampleConfig {
    ConstructMConfig construct;
    NewtonConfig projection; // Gauss-Newton settings for the retraction
    std::uint64_t seed = 0;  // sample draws for the identity check
    int identity_samples = 50;
    double identity_radius = 0.1;
    double fd_tol = 1e-3;
    double identity_tol = 1e-8;

    CounterexampleConfig() {
        projection.max_iters = 100;
        projection.residual_tol = 1e-13;
    }
};

// A generator/inverse pair witnessing that first- and second-order data of a
// left inverse can be prescribed freely at a point while the generator stays
// additive: f quadratic additive with Df(0) = M, D2f_i = diag(Lambda^i), and
// g(x) = A(x-x0) + 1/2 (x-x0)^T B_s (x-x0) + h(phi(x)) with h killing the
// prescribed terms along the manifold and phi the Gauss-Newton retraction.
struct CounterexamplePair {
    Eigen::MatrixXd A;
    std::vector<Eigen::MatrixXd> B;
    Eigen::VectorXd x0;
    Eigen::MatrixXd M;
    std::vector<Eigen::VectorXd> lambda_diag; // d_x entries, each of length d_z
    InteractionGenerator f;
    NewtonConfig projection;
    TheoryCertificate certificate;

    int d_z() const { return static_cast<int>(A.rows()); }
    int d_x() const { return static_cast<int>(A.cols()); }

    Eigen::VectorXd quad_terms(const Eigen::VectorXd& v) const {
        Eigen::VectorXd q(d_z());
        for (int s = 0; s < d_z(); ++s)
            q[s] = 0.5 * v.dot(B[static_cast<std::size_t>(s)] * v);
        return q;
    }

    // h on latent coordinates; h(0) = 0, Dh(0) = 0, D2h(0) = 0 by construction.
    Eigen::VectorXd h(const Eigen::VectorXd& z) const {
        Eigen::VectorXd v = f.eval(z) - x0;
        return z - A * v - quad_terms(v);
    }

    // Gauss-Newton retraction: phi(f(z)) = z, smooth off-manifold nearby.
    Eigen::VectorXd phi(const Eigen::VectorXd& x) const {
        SmoothFn ffn = generator_fn(f);
        Eigen::VectorXd z0 = A * (x - x0);
        return newton_left_inverse(ffn, x, z0, projection).z;
    }

    Eigen::VectorXd g(const Eigen::VectorXd& x) const {
        Eigen::VectorXd v = x - x0;
        return A * v + quad_terms(v) + h(phi(x));
    }
};

inline CounterexamplePair build_counterexample(const Eigen::MatrixXd& A,
                                               const std::vector<Eigen::MatrixXd>& B,
                                               const Eigen::VectorXd& x0,
                                               const CounterexampleConfig& cfg = {}) {
    const int d_z = static_cast<int>(A.rows());
    const int d_x = static_cast<int>(A.cols());
    if (x0.size() != d_x) throw DimensionError("build_counterexample: x0 size mismatch");

    CounterexamplePair pair;
    pair.A = A;
    pair.B = B;
    pair.x0 = x0;
    pair.projection = cfg.projection;

    ConstructMResult cm = construct_M(A, B, cfg.construct);
    pair.M = cm.M;

    // Diagonals of M^T B_s M prescribe the quadratic cancellation targets.
    std::vector<Eigen::VectorXd> D;
    for (int s = 0; s < d_z; ++s)
        D.push_back((pair.M.transpose() * B[static_cast<std::size_t>(s)] * pair.M).diagonal());
    pair.lambda_diag = solve_lambda(A, D);

    // Assemble f as an additive quadratic generator: component r maps z_r to
    // M.col(r) z_r + 1/2 lambda(:,r) z_r^2; the constant table entry carries x0.
    SlotStructure slots(d_z, 1);
    std::vector<SlotComponent> comps;
    for (int r = 0; r < d_z; ++r) {
        PolyMap p;
        p.in_dim = 1;
        p.out_dim = d_x;
        p.alphas = {{0}, {1}, {2}};
        p.coef = Eigen::MatrixXd::Zero(d_x, 3);
        p.coef.col(1) = pair.M.col(r);
        for (int i = 0; i < d_x; ++i)
            p.coef(i, 2) = 0.5 * pair.lambda_diag[static_cast<std::size_t>(i)][r];
        comps.push_back(p);
    }
    pair.f = InteractionGenerator::make(slots, d_x, 0, comps);
    pair.f.set_coef(MultiIndex(static_cast<std::size_t>(d_z), 0), x0);

    // ---- certificate ---------------------------------------------------------
    TheoryCertificate cert;
    cert.id = "counterexample-pair";
    std::ostringstream desc;
    desc << "d_z=" << d_z << " d_x=" << d_x << " seed=" << cfg.seed;
    cert.description = desc.str();

    cert.add_residual("AM_minus_identity",
                      max_abs(A * pair.M - Eigen::MatrixXd::Identity(d_z, d_z)), 1e-10);
    double off = 0.0;
    for (int s = 0; s < d_z; ++s)
        off = std::max(off,
                       max_offdiag(pair.M.transpose() * B[static_cast<std::size_t>(s)] * pair.M));
    cert.add_residual("MtBM_offdiagonal", off, 1e-10);
    cert.add_residual("lambda_reconstruction", solve_lambda_residual(A, D, pair.lambda_diag),
                      1e-10);

    // g(f(z)) = z on a sampled ball around the origin.
    Rng rng(cfg.seed ^ 0x5EEDF00Dull);
    double id_err = 0.0;
    for (int t = 0; t < cfg.identity_samples; ++t) {
        Eigen::VectorXd dir = rng.normal_vec(d_z);
        double nrm = dir.norm();
        if (nrm == 0.0) continue;
        double radius = cfg.identity_radius * std::pow(rng.u01(), 1.0 / d_z);
        Eigen::VectorXd z = dir / nrm * radius;
        Eigen::VectorXd back = pair.g(pair.f.eval(z));
        id_err = std::max(id_err, (back - z).cwiseAbs().maxCoeff());
    }
    cert.add_residual("g_of_f_identity", id_err, cfg.identity_tol);

    // FD first and second derivatives of g at x0 against the prescribed A, B_l.
    SmoothFn gfn;
    gfn.in_dim = d_x;
    gfn.out_dim = d_z;
    const CounterexamplePair* pp = &pair;
    gfn.f = [pp](const Eigen::VectorXd& x) { return pp->g(x); };

    double h_base = 1e-3 * (1.0 + x0.norm());
    double jac_rel = 0.0, hess_rel = 0.0;
    for (int attempt = 0; attempt < 2; ++attempt) {
        double h = h_base / (attempt == 0 ? 1.0 : 2.0);
        try {
            Eigen::MatrixXd Dg = fd_jacobian(gfn, x0, h);
            std::vector<Eigen::MatrixXd> Hg = fd_hessians(gfn, x0, h);
            jac_rel = max_abs(Dg - A) / (1.0 + max_abs(A));
            hess_rel = 0.0;
            for (int s = 0; s < d_z; ++s)
                hess_rel = std::max(hess_rel,
                                    max_abs(Hg[static_cast<std::size_t>(s)] -
                                            B[static_cast<std::size_t>(s)]) /
                                        (1.0 + max_abs(B[static_cast<std::size_t>(s)])));
        } catch (const ConvergenceError&) {
            // Retraction diverged inside the stencil: halve the step once.
            if (attempt == 0) continue;
            throw;
        }
        if (jac_rel <= cfg.fd_tol && hess_rel <= cfg.fd_tol) break;
    }
    cert.add_residual("fd_jacobian_vs_A_rel", jac_rel, cfg.fd_tol);
    cert.add_residual("fd_hessian_vs_B_rel", hess_rel, cfg.fd_tol);

    cert.finalize();
    pair.certificate = cert;
    return pair;
}

// Signed-sum polarization identity for k linear forms:
//   sum_{eps in {-1,1}^k} (prod_j eps_j) (sum_j eps_j phi_j(x))^k = 2^k k! prod_j phi_j(x).
inline TheoryCertificate polarization_check(const Eigen::MatrixXd& forms,
                                            const std::vector<Eigen::VectorXd>& points,
                                            double tol_rel = 1e-8,
                                            const std::string& id = "polarization") {
    const int k = static_cast<int>(forms.rows());
    if (k < 1 || k > 5) throw PreconditionError("polarization_check: requires 1 <= k <= 5");
    double factorial = 1.0;
    for (int i = 2; i <= k; ++i) factorial *= i;
    const double scale = std::pow(2.0, k) * factorial;

    double worst = 0.0;
    for (const auto& x : points) {
        if (x.size() != forms.cols())
            throw DimensionError("polarization_check: point dimension mismatch");
        Eigen::VectorXd phi = forms * x;
        double lhs = 0.0;
        for (int mask = 0; mask < (1 << k); ++mask) {
            double sign = 1.0, inner = 0.0;
            for (int j = 0; j < k; ++j) {
                double eps = (mask >> j) & 1 ? 1.0 : -1.0;
                sign *= eps;
                inner += eps * phi[j];
            }
            lhs += sign * ipow(inner, k);
        }
        double rhs = scale;
        for (int j = 0; j < k; ++j) rhs *= phi[j];
        worst = std::max(worst, std::abs(lhs - rhs) / (1.0 + std::abs(rhs)));
    }

    TheoryCertificate cert;
    cert.id = id;
    std::ostringstream desc;
    desc << "k=" << k << " dim=" << forms.cols() << " points=" << points.size();
    cert.description = desc.str();
    cert.add_residual("identity_rel", worst, tol_rel);
    cert.finalize();
    return cert;
}

// Differences of inverses of explicit additive maps produce pure monomial maps:
// the single-variable construction places -2 (a x_t)^k in one output, and the
// multi-variable construction places 2 (sum_i alpha_i x_i)^k in the output
// indexed by the second nonzero coefficient. Inverses are closed-form.
inline TheoryCertificate monomial_from_inverse_sum(int k, int d, const Eigen::VectorXd& alpha,
                                                   const std::vector<Eigen::VectorXd>& points,
                                                   double tol = 1e-10,
                                                   const std::string& id = "inverse-sum-monomial") {
    if (d < 2) throw PreconditionError("monomial_from_inverse_sum: requires d >= 2");
    if (k < 1) throw PreconditionError("monomial_from_inverse_sum: requires k >= 1");
    if (alpha.size() != d) throw DimensionError("monomial_from_inverse_sum: alpha length != d");
    std::vector<int> nz;
    for (int i = 0; i < d; ++i)
        if (alpha[i] != 0.0) nz.push_back(i);
    if (nz.empty()) throw PreconditionError("monomial_from_inverse_sum: alpha is zero");

    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> g1, g2, fwd1, fwd2, predicted;

    if (nz.size() == 1) {
        // Single-variable case: one map embeds (a z_t)^k into output o on top of
        // z_o, the mirrored map negates everything; their inverses' sum isolates
        // the monomial.
        const int t = nz[0];
        const int o = t == 0 ? 1 : 0;
        const double a = alpha[t];
        const double par = k % 2 == 0 ? 1.0 : -1.0; // (-1)^k
        g1 = [=](const Eigen::VectorXd& x) {
            Eigen::VectorXd z = x;
            z[o] = x[o] - ipow(a * x[t], k);
            return z;
        };
        g2 = [=](const Eigen::VectorXd& x) {
            Eigen::VectorXd z = -x;
            z[o] = -x[o] - ipow(a * x[t], k);
            return z;
        };
        fwd1 = [=](const Eigen::VectorXd& z) {
            Eigen::VectorXd x = z;
            x[o] = z[o] + ipow(a * z[t], k);
            return x;
        };
        fwd2 = [=](const Eigen::VectorXd& z) {
            Eigen::VectorXd x = -z;
            x[o] = -z[o] - par * ipow(a * z[t], k);
            return x;
        };
        predicted = [=](const Eigen::VectorXd& x) {
            Eigen::VectorXd p = Eigen::VectorXd::Zero(d);
            p[o] = -2.0 * ipow(a * x[t], k);
            return p;
        };
    } else {
        const int j1 = nz[0], j2 = nz[1];
        auto S = [=](const Eigen::VectorXd& x) {
            double s = 0.0;
            for (int i : nz) s += alpha[i] * x[i];
            return s;
        };
        g1 = [=](const Eigen::VectorXd& x) {
            Eigen::VectorXd z(d);
            double s = S(x);
            for (int i = 0; i < d; ++i) z[i] = x[i];
            for (std::size_t r = 2; r < nz.size(); ++r) z[nz[r]] = alpha[nz[r]] * x[nz[r]];
            z[j1] = s;
            z[j2] = alpha[j2] * x[j2] + ipow(s, k);
            return z;
        };
        g2 = [=](const Eigen::VectorXd& x) {
            Eigen::VectorXd z(d);
            double s = S(x);
            for (int i = 0; i < d; ++i) z[i] = -x[i];
            for (std::size_t r = 2; r < nz.size(); ++r) z[nz[r]] = -alpha[nz[r]] * x[nz[r]];
            z[j1] = -s;
            z[j2] = -alpha[j2] * x[j2] + ipow(s, k);
            return z;
        };
        fwd1 = [=](const Eigen::VectorXd& z) {
            Eigen::VectorXd x = z;
            double rest = 0.0;
            for (std::size_t r = 1; r < nz.size(); ++r) rest += z[nz[r]];
            x[j1] = (ipow(z[j1], k) + z[j1] - rest) / alpha[j1];
            x[j2] = (z[j2] - ipow(z[j1], k)) / alpha[j2];
            for (std::size_t r = 2; r < nz.size(); ++r) x[nz[r]] = z[nz[r]] / alpha[nz[r]];
            return x;
        };
        fwd2 = [=](const Eigen::VectorXd& z) {
            Eigen::VectorXd x = -z;
            double rest = 0.0;
            for (std::size_t r = 1; r < nz.size(); ++r) rest += z[nz[r]];
            double mk = ipow(-z[j1], k);
            x[j1] = (-mk - z[j1] + rest) / alpha[j1];
            x[j2] = (-z[j2] + mk) / alpha[j2];
            for (std::size_t r = 2; r < nz.size(); ++r) x[nz[r]] = -z[nz[r]] / alpha[nz[r]];
            return x;
        };
        predicted = [=](const Eigen::VectorXd& x) {
            Eigen::VectorXd p = Eigen::VectorXd::Zero(d);
            p[j2] = 2.0 * ipow(S(x), k);
            return p;
        };
    }

    double sum_err = 0.0, inv_err = 0.0;
    for (const auto& x : points) {
        if (x.size() != d) throw DimensionError("monomial_from_inverse_sum: point size mismatch");
        Eigen::VectorXd s = g1(x) + g2(x);
        sum_err = std::max(sum_err, (s - predicted(x)).cwiseAbs().maxCoeff());
        inv_err = std::max(inv_err, (g1(fwd1(x)) - x).cwiseAbs().maxCoeff());
        inv_err = std::max(inv_err, (g2(fwd2(x)) - x).cwiseAbs().maxCoeff());
    }

    TheoryCertificate cert;
    cert.id = id;
    std::ostringstream desc;
    desc << "k=" << k << " d=" << d << " nonzeros=" << nz.size() << " points=" << points.size();
    cert.description = desc.str();
    cert.add_residual("sum_vs_predicted", sum_err, tol);
    cert.add_residual("closed_form_inverse_roundtrip", inv_err, tol);
    cert.finalize();
    return cert;
}

} // namespace slotlab
