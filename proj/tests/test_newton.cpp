// Gauss-Newton / Newton left inverse: exact cases, a bisection oracle,
// off-manifold stationarity, and failure reporting.

#include <catch2/catch_amalgamated.hpp>

#include "slotlab/newton.hpp"

using namespace slotlab;

namespace {

// Independent scalar root finder for monotone f on [lo, hi].
double bisect(const std::function<double(double)>& f, double target, double lo, double hi) {
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (f(mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

TEST_CASE("identity map inverts immediately") {
    SmoothFn f = make_fn(3, 3, [](const Eigen::VectorXd& z) { return z; });
    Eigen::VectorXd x(3);
    x << 1.0, -2.0, 0.5;
    NewtonResult r = newton_left_inverse(f, x, Eigen::VectorXd::Zero(3));
    REQUIRE((r.z - x).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(r.on_manifold);
}

TEST_CASE("scalar cubic agrees with a bisection oracle") {
    SmoothFn f = make_fn(1, 1, [](const Eigen::VectorXd& z) {
        Eigen::VectorXd x(1);
        x[0] = z[0] * z[0] * z[0] + z[0];
        return x;
    });
    Eigen::VectorXd x(1);
    x[0] = 10.0;
    NewtonResult r = newton_left_inverse(f, x, Eigen::VectorXd::Zero(1));
    double oracle = bisect([](double z) { return z * z * z + z; }, 10.0, 0.0, 5.0);
    REQUIRE(std::abs(oracle - 2.0) < 1e-10); // 2^3 + 2 = 10 exactly
    REQUIRE(std::abs(r.z[0] - oracle) < 1e-9);
    REQUIRE(r.on_manifold);
}

TEST_CASE("embedded parabola point on the manifold is recovered exactly") {
    SmoothFn f = make_fn(1, 2, [](const Eigen::VectorXd& z) {
        Eigen::VectorXd x(2);
        x << z[0], z[0] * z[0];
        return x;
    });
    Eigen::VectorXd x(2);
    x << 2.0, 4.0;
    NewtonResult r = newton_left_inverse(f, x, Eigen::VectorXd::Constant(1, 1.0));
    REQUIRE(std::abs(r.z[0] - 2.0) < 1e-9);
}

TEST_CASE("off-manifold target lands on a stationary point of the residual") {
    SmoothFn f = make_fn(1, 2, [](const Eigen::VectorXd& z) {
        Eigen::VectorXd x(2);
        x << z[0], z[0] * z[0];
        return x;
    });
    Eigen::VectorXd x(2);
    x << 2.0, 4.1;
    NewtonResult r = newton_left_inverse(f, x, Eigen::VectorXd::Constant(1, 1.0));
    double z = r.z[0];
    // Gradient of 0.5 ((z-2)^2 + (z^2-4.1)^2) must vanish at the result.
    double grad = (z - 2.0) + (z * z - 4.1) * 2.0 * z;
    REQUIRE(std::abs(grad) < 1e-7);
    REQUIRE_FALSE(r.on_manifold);
}

TEST_CASE("iteration cap reports the last residual") {
    SmoothFn f = make_fn(1, 1, [](const Eigen::VectorXd& z) {
        Eigen::VectorXd x(1);
        x[0] = z[0] * z[0] * z[0] + z[0];
        return x;
    });
    Eigen::VectorXd x(1);
    x[0] = 1e6;
    NewtonConfig cfg;
    cfg.max_iters = 1;
    try {
        newton_left_inverse(f, x, Eigen::VectorXd::Zero(1), cfg);
        FAIL("expected a convergence error");
    } catch (const ConvergenceError& e) {
        REQUIRE(e.last_residual > 0.0);
    }
}

TEST_CASE("input validation") {
    SmoothFn f = make_fn(2, 2, [](const Eigen::VectorXd& z) { return z; });
    REQUIRE_THROWS_AS(newton_left_inverse(f, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2)),
                      DimensionError);
    REQUIRE_THROWS_AS(newton_left_inverse(f, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(1)),
                      DimensionError);
}
