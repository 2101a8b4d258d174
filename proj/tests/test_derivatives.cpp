// Derivative oracles: finite differences vs analytic paths, cross-slot
// residuals, diffeomorphism checks.

#include <catch2/catch_amalgamated.hpp>

#include "slotlab/derivatives.hpp"
#include "slotlab/generator.hpp"
#include "slotlab/rng.hpp"

using namespace slotlab;

namespace {

InteractionGenerator random_poly_generator(int K, int m, int d_x, int n, int comp_degree,
                                           Rng& rng) {
    SlotStructure s(K, m);
    std::vector<SlotComponent> comps;
    for (int k = 0; k < K; ++k) {
        PolyMap p;
        p.in_dim = m;
        p.out_dim = d_x;
        p.alphas = enumerate_multi_indices(m, comp_degree);
        p.coef = rng.normal_mat(d_x, static_cast<int>(p.alphas.size()));
        comps.push_back(p);
    }
    InteractionGenerator g = InteractionGenerator::make(s, d_x, n, comps);
    g.coef = rng.normal_mat(d_x, static_cast<int>(g.alphas.size()));
    return g;
}

} // namespace

TEST_CASE("linear map reports its own matrix as Jacobian everywhere") {
    Eigen::MatrixXd A(3, 2);
    A << 1, 2, 3, 4, 5, 6;
    SmoothFn fn = make_fn(2, 3, [A](const Eigen::VectorXd& z) { return Eigen::VectorXd(A * z); });
    Rng rng(4);
    for (int t = 0; t < 5; ++t) {
        Eigen::VectorXd z = rng.uniform_vec(2, -3, 3);
        auto rep = derivative_oracle(fn, z, 1, DerivScheme::Central);
        CHECK(max_abs(rep.jacobian - A) < 1e-9);
    }
}

TEST_CASE("scalar square has derivative 2z under an h-sweep") {
    SmoothFn fn = make_fn(1, 1, [](const Eigen::VectorXd& z) {
        Eigen::VectorXd v(1);
        v << z[0] * z[0];
        return v;
    });
    Eigen::VectorXd z(1);
    z << 3.0;
    for (double h : {1e-3, 1e-4, 1e-5}) {
        FdConfig cfg;
        cfg.h1 = h;
        auto rep = derivative_oracle(fn, z, 1, DerivScheme::Central, cfg);
        // Central differences are exact for quadratics up to round-off.
        CHECK(std::abs(rep.jacobian(0, 0) - 6.0) < 1e-7);
    }
}

TEST_CASE("analytic and central-difference Jacobians agree on polynomial generators") {
    Rng rng(21);
    for (int t = 0; t < 10; ++t) {
        InteractionGenerator g = random_poly_generator(2, 1, 3, 2, 3, rng);
        SmoothFn fn = generator_fn(g);
        for (int p = 0; p < 10; ++p) {
            Eigen::VectorXd z = rng.uniform_vec(g.d_z(), -1, 1);
            auto a = derivative_oracle(fn, z, 1, DerivScheme::Analytic);
            auto c = derivative_oracle(fn, z, 1, DerivScheme::Central);
            double scale = std::max(1.0, max_abs(a.jacobian));
            CHECK(max_abs(a.jacobian - c.jacobian) / scale < 1e-6);
        }
    }
}

TEST_CASE("analytic and FD Hessians and third derivatives agree on polynomials") {
    Rng rng(22);
    InteractionGenerator g = random_poly_generator(2, 1, 2, 3, 3, rng);
    SmoothFn fn = generator_fn(g);
    Eigen::VectorXd z = rng.uniform_vec(g.d_z(), -1, 1);

    auto a = derivative_oracle(fn, z, 3, DerivScheme::Analytic);
    auto c = derivative_oracle(fn, z, 3, DerivScheme::Central);
    for (int o = 0; o < 2; ++o) {
        CHECK(max_abs(a.hessians[static_cast<std::size_t>(o)] -
                      c.hessians[static_cast<std::size_t>(o)]) < 1e-5);
        for (int i = 0; i < g.d_z(); ++i)
            CHECK(max_abs(a.third[static_cast<std::size_t>(o)][static_cast<std::size_t>(i)] -
                          c.third[static_cast<std::size_t>(o)][static_cast<std::size_t>(i)]) <
                  1e-5);
    }
}

TEST_CASE("cross-slot Hessian blocks of additive generators vanish") {
    Rng rng(23);
    InteractionGenerator g = random_poly_generator(3, 1, 4, 1, 3, rng);
    AdditiveGenerator add(g);
    SmoothFn fn = generator_fn(add);
    for (int p = 0; p < 20; ++p) {
        Eigen::VectorXd z = rng.uniform_vec(add.d_z(), -1.5, 1.5);
        auto rep = cross_slot_residual(fn, add.slots, z, 1, DerivScheme::Central);
        CHECK(rep.max_cross_partial < 1e-6); // FD noise only
        auto repa = cross_slot_residual(fn, add.slots, z, 1, DerivScheme::Analytic);
        CHECK(repa.max_cross_partial == 0.0);
    }
}

TEST_CASE("single interaction term produces the expected mixed partials") {
    SlotStructure s(2, 1);

    SECTION("z1*z2 has unit second-order cross partial") {
        InteractionGenerator g = InteractionGenerator::make(
            s, 1, 2, {PolyMap::zero(1, 1), PolyMap::zero(1, 1)});
        Eigen::VectorXd e1(1);
        e1 << 1.0;
        g.set_coef({1, 1}, e1);
        SmoothFn fn = generator_fn(g);
        Rng rng(3);
        for (int p = 0; p < 5; ++p) {
            Eigen::VectorXd z = rng.uniform_vec(2, -2, 2);
            auto rep = cross_slot_residual(fn, s, z, 1, DerivScheme::Analytic);
            CHECK(rep.max_cross_partial == Catch::Approx(1.0));
            auto repc = cross_slot_residual(fn, s, z, 1, DerivScheme::Central);
            CHECK(repc.max_cross_partial == Catch::Approx(1.0).margin(1e-8));
        }
    }

    SECTION("z1^2*z2 checked at order 3 gives 2") {
        InteractionGenerator g = InteractionGenerator::make(
            s, 1, 3, {PolyMap::zero(1, 1), PolyMap::zero(1, 1)});
        Eigen::VectorXd e1(1);
        e1 << 1.0;
        g.set_coef({2, 1}, e1);
        SmoothFn fn = generator_fn(g);
        Rng rng(9);
        for (int p = 0; p < 5; ++p) {
            Eigen::VectorXd z = rng.uniform_vec(2, -2, 2);
            auto rep = cross_slot_residual(fn, s, z, 2, DerivScheme::Analytic);
            CHECK(rep.max_cross_partial == Catch::Approx(2.0));
            auto repc = cross_slot_residual(fn, s, z, 2, DerivScheme::Central);
            CHECK(repc.max_cross_partial == Catch::Approx(2.0).margin(1e-5));
        }
    }
}

TEST_CASE("order-(n+1) residual vanishes for every generator of degree n") {
    Rng rng(31);
    for (int n : {1, 2}) {
        for (int t = 0; t < 5; ++t) {
            InteractionGenerator g = random_poly_generator(2, 1, 3, n, 3, rng);
            SmoothFn fn = generator_fn(g);
            for (int p = 0; p < 20; ++p) {
                Eigen::VectorXd z = rng.uniform_vec(g.d_z(), -1, 1);
                auto rep = cross_slot_residual(fn, g.slots, z, n, DerivScheme::Analytic);
                CHECK(rep.max_cross_partial == 0.0);
                auto repc = cross_slot_residual(fn, g.slots, z, n, DerivScheme::Central);
                CHECK(repc.max_cross_partial < 2e-4);
            }
        }
    }
}

TEST_CASE("slot-exclusivity residual for n=0") {
    SlotStructure s(2, 1);

    // Pixel-partition style: output 0 sees slot 1 only, output 1 sees slot 2 only.
    InteractionGenerator sep = InteractionGenerator::make(s, 2, 0, [] {
        PolyMap a = PolyMap::zero(1, 2);
        a.alphas = {{0}, {1}, {3}};
        a.coef = Eigen::MatrixXd::Zero(2, 3);
        a.coef(0, 1) = 1.0;
        a.coef(0, 2) = 0.5;
        PolyMap b = PolyMap::zero(1, 2);
        b.alphas = {{0}, {1}};
        b.coef = Eigen::MatrixXd::Zero(2, 2);
        b.coef(1, 1) = 2.0;
        return std::vector<SlotComponent>{a, b};
    }());
    SmoothFn fn = generator_fn(sep);
    Rng rng(41);
    for (int p = 0; p < 10; ++p) {
        Eigen::VectorXd z = rng.uniform_vec(2, -1, 1);
        auto rep = cross_slot_residual(fn, s, z, 0, DerivScheme::Analytic);
        REQUIRE(rep.slot_exclusivity.has_value());
        CHECK(*rep.slot_exclusivity == 0.0);
        CHECK(rep.max_cross_partial == 0.0);
    }

    // An output reading both slots violates the condition.
    InteractionGenerator mixed = InteractionGenerator::make(
        s, 1, 1, {PolyMap::zero(1, 1), PolyMap::zero(1, 1)});
    Eigen::VectorXd c(1);
    c << 1.0;
    mixed.set_coef({1, 0}, c);
    mixed.set_coef({0, 1}, c);
    SmoothFn fn2 = generator_fn(mixed);
    Eigen::VectorXd z0 = Eigen::VectorXd::Zero(2);
    auto rep2 = cross_slot_residual(fn2, s, z0, 0, DerivScheme::Analytic);
    CHECK(*rep2.slot_exclusivity == Catch::Approx(1.0));

    CHECK_THROWS_AS(cross_slot_residual(fn2, s, z0, 3, DerivScheme::Analytic),
                    CapabilityError);
}

TEST_CASE("diffeomorphism check flags rank deficiency with a witness") {
    SlotStructure s(2, 1);

    InteractionGenerator ident = InteractionGenerator::make(s, 2, 0, [] {
        PolyMap a = PolyMap::zero(1, 2);
        a.alphas = {{0}, {1}};
        a.coef = Eigen::MatrixXd::Zero(2, 2);
        a.coef(0, 1) = 1.0;
        PolyMap b = PolyMap::zero(1, 2);
        b.alphas = {{0}, {1}};
        b.coef = Eigen::MatrixXd::Zero(2, 2);
        b.coef(1, 1) = 1.0;
        return std::vector<SlotComponent>{a, b};
    }());
    Rng rng(5);
    std::vector<Eigen::VectorXd> pts;
    for (int i = 0; i < 10; ++i) pts.push_back(rng.uniform_vec(2, -2, 2));
    auto rep = check_diffeomorphism(generator_fn(ident), pts);
    CHECK(rep.min_sigma == Catch::Approx(1.0));
    CHECK(rep.pass);

    // f(z1,z2) = (z1+z2, z1+z2): rank 1, sigma_min = 0.
    InteractionGenerator flat = InteractionGenerator::make(s, 2, 0, [] {
        PolyMap a = PolyMap::zero(1, 2);
        a.alphas = {{0}, {1}};
        a.coef = Eigen::MatrixXd::Zero(2, 2);
        a.coef(0, 1) = 1.0;
        a.coef(1, 1) = 1.0;
        PolyMap b = a;
        return std::vector<SlotComponent>{a, b};
    }());
    auto rep2 = check_diffeomorphism(generator_fn(flat), pts);
    CHECK(rep2.min_sigma < 1e-12);
    CHECK_FALSE(rep2.pass);
    CHECK(rep2.witness.size() == 2);

    // Random wide network generator: full rank at sampled points, and the SVD
    // of an FD Jacobian agrees with the analytic one.
    SlotStructure s2(2, 1);
    Rng nrng(71);
    std::vector<SlotComponent> comps{Network::make({1, 8, 4}, Activation::Tanh, nrng),
                                     Network::make({1, 8, 4}, Activation::Tanh, nrng)};
    InteractionGenerator wide = InteractionGenerator::make(s2, 4, 0, comps);
    SmoothFn wfn = generator_fn(wide);
    auto rep3 = check_diffeomorphism(wfn, pts, 1e-8);
    CHECK(rep3.min_sigma > 1e-8);
    for (int p = 0; p < 3; ++p) {
        Eigen::VectorXd z = pts[static_cast<std::size_t>(p)];
        double fd_sigma = sigma_min(fd_jacobian(wfn, z, 1e-4));
        CHECK(fd_sigma == Catch::Approx(sigma_min(wide.jacobian(z))).margin(1e-6));
    }

    CHECK_THROWS_AS(check_diffeomorphism(wfn, {}), PreconditionError);
}
