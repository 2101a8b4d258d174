#pragma once

#include <Eigen/Dense>

#include "slotlab/errors.hpp"

namespace slotlab {

// Relative singular-value cutoff shared by pseudoinverse, null-space, and rank
// decisions. A singular value counts as zero when sigma <= cutoff * sigma_max.
inline constexpr double kSvdCutoff = 1e-10;

inline double sigma_min(const Eigen::MatrixXd& A) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    return svd.singularValues().size() == 0 ? 0.0 : svd.singularValues().minCoeff();
}

inline double sigma_max(const Eigen::MatrixXd& A) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    return svd.singularValues().size() == 0 ? 0.0 : svd.singularValues().maxCoeff();
}

// Moore-Penrose pseudoinverse via SVD with the relative cutoff above.
inline Eigen::MatrixXd pinv(const Eigen::MatrixXd& A, double cutoff = kSvdCutoff) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    if (s.size() == 0) return Eigen::MatrixXd::Zero(A.cols(), A.rows());
    double thresh = cutoff * s.maxCoeff();
    Eigen::VectorXd inv = s;
    for (Eigen::Index i = 0; i < s.size(); ++i) inv[i] = s[i] > thresh ? 1.0 / s[i] : 0.0;
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline int numeric_rank(const Eigen::MatrixXd& A, double cutoff = kSvdCutoff) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s.maxCoeff() == 0.0) return 0;
    double thresh = cutoff * s.maxCoeff();
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] > thresh) ++r;
    return r;
}

// Orthonormal basis of the right null space of A (columns). Always returns the
// trailing right singular vectors, most-null last; deterministic for fixed input.
inline Eigen::MatrixXd nullspace(const Eigen::MatrixXd& A, double cutoff = kSvdCutoff) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    double smax = s.size() == 0 ? 0.0 : s.maxCoeff();
    double thresh = cutoff * smax;
    int rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] > thresh) ++rank;
    Eigen::Index dim = A.cols() - rank;
    return svd.matrixV().rightCols(dim);
}

// Orthonormal basis of the column space of B.
inline Eigen::MatrixXd range_basis(const Eigen::MatrixXd& B, double cutoff = kSvdCutoff) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    double smax = s.size() == 0 ? 0.0 : s.maxCoeff();
    double thresh = cutoff * smax;
    int rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] > thresh) ++rank;
    return svd.matrixU().leftCols(rank);
}

// Orthogonal projector onto the column space of B.
inline Eigen::MatrixXd projector_onto_range(const Eigen::MatrixXd& B,
                                            double cutoff = kSvdCutoff) {
    Eigen::MatrixXd Q = range_basis(B, cutoff);
    return Q * Q.transpose();
}

// Minimum-norm least-squares solution of A x = b (pseudoinverse solve).
inline Eigen::VectorXd lstsq_minnorm(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                     double cutoff = kSvdCutoff) {
    if (A.rows() != b.size()) throw DimensionError("lstsq_minnorm: shape mismatch");
    return pinv(A, cutoff) * b;
}

inline double max_abs(const Eigen::MatrixXd& A) {
    return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff();
}

// Largest off-diagonal magnitude of a square matrix.
inline double max_offdiag(const Eigen::MatrixXd& A) {
    if (A.rows() != A.cols()) throw DimensionError("max_offdiag: matrix not square");
    double r = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            if (i != j) r = std::max(r, std::abs(A(i, j)));
    return r;
}

} // namespace slotlab
