// Multi-index algebra, slot bookkeeping, RNG streams, linear-algebra helpers.

#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "slotlab/linalg.hpp"
#include "slotlab/multi_index.hpp"
#include "slotlab/rng.hpp"
#include "slotlab/slots.hpp"

using namespace slotlab;

namespace {

// Independent count oracle: number of monomials of degree <= n in d variables.
long binomial(int a, int b) {
    long r = 1;
    for (int i = 1; i <= b; ++i) r = r * (a - b + i) / i;
    return r;
}

// Brute-force enumeration oracle over a bounded exponent box.
std::set<MultiIndex> brute_force_indices(int d, int n) {
    std::set<MultiIndex> out;
    MultiIndex cur(static_cast<std::size_t>(d), 0);
    while (true) {
        if (order(cur) <= n) out.insert(cur);
        int p = 0;
        while (p < d) {
            if (cur[static_cast<std::size_t>(p)] < n) {
                ++cur[static_cast<std::size_t>(p)];
                break;
            }
            cur[static_cast<std::size_t>(p)] = 0;
            ++p;
        }
        if (p == d) break;
    }
    return out;
}

} // namespace

TEST_CASE("monomial evaluation follows the product convention") {
    Eigen::VectorXd z(3);
    z << 5, 7, 9;
    CHECK(multi_index_eval({0, 0, 0}, z) == 1.0);

    Eigen::VectorXd z2(2);
    z2 << 3, 2;
    CHECK(multi_index_eval({1, 2}, z2) == 12.0);

    Eigen::VectorXd z3(3);
    z3 << 2, 1, 3;
    CHECK(multi_index_eval({2, 0, 1}, z3) == 12.0);

    // 0^0 = 1: a zero coordinate with zero exponent contributes a factor 1.
    Eigen::VectorXd z4(2);
    z4 << 0, 4;
    CHECK(multi_index_eval({0, 1}, z4) == 4.0);

    CHECK_THROWS_AS(multi_index_eval({1, 2, 3}, z2), DimensionError);
}

TEST_CASE("monomial products multiply exponent tuples") {
    Rng rng(17);
    for (int t = 0; t < 50; ++t) {
        int d = 1 + rng.uniform_int(4);
        MultiIndex a(static_cast<std::size_t>(d)), b(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i) {
            a[static_cast<std::size_t>(i)] = rng.uniform_int(4);
            b[static_cast<std::size_t>(i)] = rng.uniform_int(4);
        }
        Eigen::VectorXd z = rng.uniform_vec(d, 0.2, 2.0);
        double lhs = multi_index_eval(a, z) * multi_index_eval(b, z);
        double rhs = multi_index_eval(add(a, b), z);
        CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("graded-lex enumeration is ordered, complete, and counted") {
    auto one = enumerate_multi_indices(1, 0);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == MultiIndex{0});

    auto two = enumerate_multi_indices(2, 1);
    REQUIRE(two.size() == 3);
    CHECK(two[0] == MultiIndex{0, 0});
    CHECK(two[1] == MultiIndex{1, 0});
    CHECK(two[2] == MultiIndex{0, 1});

    auto ten = enumerate_multi_indices(3, 2);
    CHECK(ten.size() == 10);
    CHECK(static_cast<long>(ten.size()) == binomial(3 + 2, 2));
    auto brute = brute_force_indices(3, 2);
    CHECK(std::set<MultiIndex>(ten.begin(), ten.end()) == brute);

    for (int d = 1; d <= 4; ++d)
        for (int n = 0; n <= 3; ++n) {
            auto e = enumerate_multi_indices(d, n);
            CHECK(static_cast<long>(e.size()) == binomial(d + n, n));
            CHECK(std::set<MultiIndex>(e.begin(), e.end()) == brute_force_indices(d, n));
            // Grades ascend; ties broken lexicographically (earlier coord dominates).
            for (std::size_t i = 1; i < e.size(); ++i) {
                int ga = order(e[i - 1]), gb = order(e[i]);
                CHECK(ga <= gb);
                if (ga == gb) CHECK(e[i - 1] > e[i]);
            }
        }

    CHECK_THROWS_AS(enumerate_multi_indices(0, 1), PreconditionError);
    CHECK_THROWS_AS(enumerate_multi_indices(2, -1), PreconditionError);
}

TEST_CASE("monomial partial derivatives are exact") {
    Eigen::VectorXd z(2);
    z << 2.0, 3.0;
    // d/dz1 d/dz2 of z1^2 z2 = 2 z1 -> 4 at z1=2.
    CHECK(monomial_partial({2, 1}, {0, 1}, z) == 4.0);
    // d^2/dz1^2 of z1^2 z2 = 2 z2.
    CHECK(monomial_partial({2, 1}, {0, 0}, z) == 6.0);
    // Differentiating an absent variable kills the term.
    CHECK(monomial_partial({2, 0}, {1}, z) == 0.0);
}

TEST_CASE("slot structure partitions coordinates") {
    SlotStructure s(3, 2);
    CHECK(s.d_z() == 6);
    CHECK(s.slot_of(0) == 0);
    CHECK(s.slot_of(3) == 1);
    CHECK(s.slot_of(5) == 2);
    CHECK(s.slot_begin(2) == 4);
    CHECK_THROWS_AS(s.slot_of(6), DimensionError);
    CHECK_THROWS_AS(SlotStructure(0, 1), PreconditionError);

    // Every coordinate lands in exactly one slot.
    std::vector<int> counts(3, 0);
    for (int c = 0; c < s.d_z(); ++c) ++counts[static_cast<std::size_t>(s.slot_of(c))];
    for (int k = 0; k < 3; ++k) CHECK(counts[static_cast<std::size_t>(k)] == s.m);
}

TEST_CASE("rng streams are deterministic and decorrelated") {
    Rng a = Rng::stream(42, 7);
    Rng b = Rng::stream(42, 7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c = Rng::stream(42, 8);
    int same = 0;
    Rng a2 = Rng::stream(42, 7);
    for (int i = 0; i < 64; ++i)
        if (a2.next_u64() == c.next_u64()) ++same;
    CHECK(same == 0);

    // Crude moment checks to catch plumbing mistakes, not statistical quality.
    Rng d(123);
    double mean = 0, m2 = 0;
    const int N = 20000;
    for (int i = 0; i < N; ++i) {
        double v = d.normal();
        mean += v;
        m2 += v * v;
    }
    mean /= N;
    m2 /= N;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(m2 - 1.0) < 0.05);

    Rng e(5);
    for (int i = 0; i < 1000; ++i) {
        double u = e.u01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        int k = e.uniform_int(7);
        CHECK(k >= 0);
        CHECK(k < 7);
    }
}

TEST_CASE("pseudoinverse and null space helpers satisfy their identities") {
    Rng rng(99);
    for (int t = 0; t < 20; ++t) {
        int r = 2 + rng.uniform_int(3);
        int c = r + rng.uniform_int(4);
        Eigen::MatrixXd A = rng.normal_mat(r, c);
        Eigen::MatrixXd P = pinv(A);
        CHECK(max_abs(A * P * A - A) < 1e-10);
        CHECK(max_abs(P * A * P - P) < 1e-10);
        CHECK(max_abs((A * P) - (A * P).transpose()) < 1e-10);
        CHECK(max_abs((P * A) - (P * A).transpose()) < 1e-10);

        Eigen::MatrixXd N = nullspace(A);
        CHECK(N.cols() == c - r); // generic full row rank
        if (N.cols() > 0) {
            CHECK(max_abs(A * N) < 1e-10);
            CHECK(max_abs(N.transpose() * N - Eigen::MatrixXd::Identity(N.cols(), N.cols())) <
                  1e-10);
        }

        Eigen::MatrixXd Pr = projector_onto_range(A.transpose());
        CHECK(max_abs(Pr * Pr - Pr) < 1e-10);
        CHECK(max_abs(Pr - Pr.transpose()) < 1e-12);
        // The projector fixes rows of A.
        CHECK(max_abs(Pr * A.transpose() - A.transpose()) < 1e-10);
    }

    // Rank-deficient case: null space picks up the kernel.
    Eigen::MatrixXd B(2, 3);
    B << 1, 2, 3, 2, 4, 6;
    CHECK(numeric_rank(B) == 1);
    CHECK(nullspace(B).cols() == 2);
    CHECK(sigma_min(B) < 1e-12);

    Eigen::VectorXd rhs(2);
    rhs << 1, 2;
    Eigen::MatrixXd C(2, 2);
    C << 1, 0, 0, 2;
    Eigen::VectorXd x = lstsq_minnorm(C, rhs);
    CHECK(x[0] == Catch::Approx(1.0));
    CHECK(x[1] == Catch::Approx(1.0));

    Eigen::MatrixXd D(2, 2);
    D << 1, 2, 3, 4;
    CHECK(max_offdiag(D) == 3.0);
}
