#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "slotlab/theory.hpp"

namespace slotlab {

// One battery case: the certificate already encodes "behaved as expected"
// (floor cases pass by exceeding their floor, the adversarial case passes by
// raising infeasibility), so a suite is ok iff every certificate passes.
// `expectation` preserves what kind of verdict was demanded.
struct SuiteCase {
    std::string expectation; // "pass" | "exceeds-floor" | "infeasible"
    TheoryCertificate cert;
};

struct SuiteReport {
    std::string suite;
    std::uint64_t seed = 0;
    std::vector<SuiteCase> cases;

    int total() const { return static_cast<int>(cases.size()); }
    int passed() const {
        int n = 0;
        for (const auto& c : cases) n += c.cert.verdict ? 1 : 0;
        return n;
    }
    bool ok() const { return passed() == total(); }

    nlohmann::ordered_json to_json(bool include_timing = false) const {
        nlohmann::ordered_json j;
        j["suite"] = suite;
        j["seed"] = seed;
        j["total"] = total();
        j["passed"] = passed();
        j["ok"] = ok();
        j["cases"] = nlohmann::ordered_json::array();
        for (const auto& c : cases) {
            nlohmann::ordered_json cj;
            cj["expectation"] = c.expectation;
            cj["certificate"] = c.cert.to_json(include_timing);
            j["cases"].push_back(cj);
        }
        return j;
    }
};

namespace detail {

inline std::string case_id(const std::string& base, int idx) {
    std::ostringstream os;
    os << base << "-" << std::setw(3) << std::setfill('0') << idx;
    return os.str();
}

// Additive generator on d scalar slots with cubic-plus-linear components:
// f_i(z) = sum_k L_ik z_k + C_ik z_k^3. Invertibility is arranged locally by
// diagonal dominance of L and enforced per point via the sigma_min filter.
// The cubic scale keeps inverse curvature inside the finite-difference
// instrument's accuracy range at the sampled conditioning level.
inline InteractionGenerator random_cubic_additive(int d, int d_x, Rng& rng) {
    Eigen::MatrixXd L = 0.5 * rng.normal_mat(d_x, d);
    for (int i = 0; i < d_x; ++i) L(i, i % d) += 2.0;
    Eigen::MatrixXd C = 0.3 * rng.normal_mat(d_x, d);
    std::vector<SlotComponent> comps;
    for (int k = 0; k < d; ++k) {
        PolyMap p;
        p.in_dim = 1;
        p.out_dim = d_x;
        p.alphas = {{1}, {3}};
        p.coef = Eigen::MatrixXd::Zero(d_x, 2);
        p.coef.col(0) = L.col(k);
        p.coef.col(1) = C.col(k);
        comps.push_back(p);
    }
    return InteractionGenerator::make(SlotStructure(d, 1), d_x, 0, comps);
}

// Adds a unit z1*z2 cross term to output 0 by raising the interaction degree.
inline InteractionGenerator with_cross_term(const InteractionGenerator& base) {
    InteractionGenerator g = InteractionGenerator::make(base.slots, base.d_x, 2, base.components);
    MultiIndex a(static_cast<std::size_t>(base.d_z()), 0);
    a[0] = 1;
    a[1] = 1;
    Eigen::VectorXd c = Eigen::VectorXd::Zero(base.d_x);
    c[0] = 1.0;
    g.set_coef(a, c);
    return g;
}

// Sampling filter for the diagonality batteries. Stricter than the certificate
// minimum: second differences of the numeric inverse lose accuracy like a high
// inverse power of sigma_min, so the batteries certify points with headroom.
constexpr double kBatterySigmaFilter = 0.6;

// Draws a generator, then a point whose Jacobian sigma_min clears the filter;
// redraws the generator when no such point appears. An occasional draw has its
// fold surface running through the sampling region, and redrawing keeps the
// battery on generic instances instead of aborting.
template <typename MakeGen>
inline std::pair<InteractionGenerator, Eigen::VectorXd> sampled_instance(MakeGen&& make, Rng& rng,
                                                                         double min_sigma,
                                                                         int point_tries = 50,
                                                                         int gen_tries = 20) {
    for (int g = 0; g < gen_tries; ++g) {
        InteractionGenerator f = make(rng);
        for (int t = 0; t < point_tries; ++t) {
            Eigen::VectorXd z = rng.normal_vec(f.d_z());
            if (sigma_min(f.jacobian(z)) > min_sigma) return {std::move(f), std::move(z)};
        }
    }
    throw NumericError("sampled_instance: no well-conditioned instance found");
}

// Instrument settings shared by the diagonality batteries: a smaller second
// difference step and a tighter root tolerance hold the truncation error of
// the transported Hessian two orders below the pass tolerance at the sampled
// conditioning level.
inline DiagonalityConfig battery_instrument() {
    DiagonalityConfig cfg;
    cfg.fd.h2 = 3e-4;
    cfg.newton.residual_tol = 1e-13;
    return cfg;
}

} // namespace detail

// Square-case diagonality battery: random cubic-plus-linear additive maps must
// produce diagonal transported Hessians; the same maps with one unit z1*z2
// cross term must violate diagonality by the floor margin.
inline SuiteReport suite_lemma_second(std::uint64_t seed, int n_pass = 100, int n_converse = 50) {
    SuiteReport rep;
    rep.suite = "lemma-second";
    rep.seed = seed;
    for (int i = 0; i < n_pass; ++i) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
        int d = 2 + i % 3;
        DiagonalityConfig cfg = detail::battery_instrument();
        auto [f, z] = detail::sampled_instance(
            [&](Rng& r) { return detail::random_cubic_additive(d, d, r); }, rng,
            detail::kBatterySigmaFilter);
        rep.cases.push_back(
            {"pass", lemma_second_diagonality(f, z, cfg, detail::case_id("square-diagonality", i))});
    }
    for (int i = 0; i < n_converse; ++i) {
        Rng rng = Rng::stream(seed ^ 0xC0FFEEull, static_cast<std::uint64_t>(i));
        int d = 2 + i % 3;
        DiagonalityConfig cfg = detail::battery_instrument();
        cfg.expect_diagonal = false;
        auto [f, z] = detail::sampled_instance(
            [&](Rng& r) { return detail::with_cross_term(detail::random_cubic_additive(d, d, r)); },
            rng, detail::kBatterySigmaFilter);
        rep.cases.push_back({"exceeds-floor", lemma_second_diagonality(
                                                 f, z, cfg, detail::case_id("square-converse", i))});
    }
    return rep;
}

// Embedded-case battery, d_x = 3 d_z: additive maps satisfy the projected
// diagonality, cross-term maps break it.
inline SuiteReport suite_lemma_secondb(std::uint64_t seed, int n_pass = 25, int n_converse = 10) {
    SuiteReport rep;
    rep.suite = "lemma-secondb";
    rep.seed = seed;
    for (int i = 0; i < n_pass + n_converse; ++i) {
        bool converse = i >= n_pass;
        Rng rng = Rng::stream(seed ^ (converse ? 0xBEEFull : 0ull), static_cast<std::uint64_t>(i));
        int d = 2 + i % 2;
        DiagonalityConfig cfg = detail::battery_instrument();
        cfg.tol_rel = 1e-3;
        cfg.expect_diagonal = !converse;
        auto [f, z] = detail::sampled_instance(
            [&](Rng& r) {
                InteractionGenerator g = detail::random_cubic_additive(d, 3 * d, r);
                return converse ? detail::with_cross_term(g) : g;
            },
            rng, detail::kBatterySigmaFilter);
        std::string base = converse ? "embedded-converse" : "embedded-diagonality";
        rep.cases.push_back({converse ? "exceeds-floor" : "pass",
                             lemma_secondb_check(f, z, cfg, detail::case_id(base, i))});
    }
    return rep;
}

// Right-inverse pseudoinverse battery: minimum-norm right inverses and general
// (obliquely shifted) right inverses of random full-rank wide matrices.
inline SuiteReport suite_moore(std::uint64_t seed, int n_minnorm = 100, int n_general = 50) {
    SuiteReport rep;
    rep.suite = "moore";
    rep.seed = seed;
    for (int i = 0; i < n_minnorm + n_general; ++i) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
        int d1 = 1 + rng.uniform_int(4);
        int d2 = d1 + rng.uniform_int(12 - d1 + 1);
        Eigen::MatrixXd A;
        do {
            A = rng.normal_mat(d1, d2);
        } while (numeric_rank(A) < d1);
        Eigen::MatrixXd B = pinv(A);
        std::string base = "moore-minnorm";
        if (i >= n_minnorm) {
            // Shift by a null-space component: still a right inverse, range moves.
            B += (Eigen::MatrixXd::Identity(d2, d2) - B * A) * (0.5 * rng.normal_mat(d2, d1));
            base = "moore-general";
        }
        rep.cases.push_back({"pass", moore_penrose_check(A, B, 1e-10, detail::case_id(base, i))});
    }
    return rep;
}

namespace detail {

inline Eigen::MatrixXd random_symmetric(int n, double scale, Rng& rng) {
    Eigen::MatrixXd G = rng.normal_mat(n, n);
    return scale * 0.5 * (G + G.transpose());
}

// Target pair for the constructive batteries. Rejects draws whose per-column
// systems are badly conditioned: the theorem holds for almost every A, and the
// battery certifies generic instances, not the measure-zero boundary.
struct TargetInstance {
    Eigen::MatrixXd A;
    std::vector<Eigen::MatrixXd> B;
    int redraws = 0;
};

inline TargetInstance random_target(int d_z, int d_x, Rng& rng, double b_scale = 0.3) {
    TargetInstance t;
    for (int attempt = 0;; ++attempt) {
        t.A = rng.normal_mat(d_z, d_x);
        t.B.clear();
        for (int s = 0; s < d_z; ++s) t.B.push_back(random_symmetric(d_x, b_scale, rng));
        try {
            ConstructMResult cm = construct_M(t.A, t.B);
            bool ok = true;
            for (const auto& V : cm.bases) {
                Eigen::MatrixXd S = t.A * V;
                if (sigma_min(S) < 0.05 * sigma_max(S)) ok = false;
            }
            if (ok) return t;
        } catch (const InfeasibleError&) {
        }
        if (attempt >= 50) throw NumericError("random_target: no generic instance found");
        ++t.redraws;
    }
}

inline TheoryCertificate construct_M_certificate(const Eigen::MatrixXd& A,
                                                 const std::vector<Eigen::MatrixXd>& B,
                                                 const std::string& id) {
    ConstructMResult cm = construct_M(A, B);
    TheoryCertificate cert;
    cert.id = id;
    std::ostringstream desc;
    desc << "d_z=" << A.rows() << " d_x=" << A.cols();
    cert.description = desc.str();
    cert.add_residual("AM_minus_identity",
                      max_abs(A * cm.M - Eigen::MatrixXd::Identity(A.rows(), A.rows())), 1e-10);
    double off = 0.0;
    for (const auto& Bs : B) off = std::max(off, max_offdiag(cm.M.transpose() * Bs * cm.M));
    cert.add_residual("MtBM_offdiagonal", off, 1e-10);
    cert.finalize();
    return cert;
}

// The named adversarial pair: A supported on two coordinates, B_1 coupling
// exactly those coordinates. The construction must report infeasibility.
inline TargetInstance adversarial_target(int d_x = 8) {
    TargetInstance t;
    t.A = Eigen::MatrixXd::Zero(2, d_x);
    t.A(0, 0) = 1.0;
    t.A(1, 1) = 1.0;
    t.B.assign(2, Eigen::MatrixXd::Zero(d_x, d_x));
    t.B[0](0, 1) = 1.0;
    t.B[0](1, 0) = 1.0;
    return t;
}

} // namespace detail

// Constructive subspace battery: random generic targets yield exact M; the
// named adversarial target must raise infeasibility (recorded as its own pass).
inline SuiteReport suite_construct_M(std::uint64_t seed, int n_random = 20) {
    SuiteReport rep;
    rep.suite = "construct-M";
    rep.seed = seed;
    {
        // d_z = 1: any solve works and the diagonality condition is vacuous.
        Rng rng = Rng::stream(seed, 9001);
        Eigen::MatrixXd A = rng.normal_mat(1, 3);
        std::vector<Eigen::MatrixXd> B = {detail::random_symmetric(3, 0.3, rng)};
        rep.cases.push_back({"pass", detail::construct_M_certificate(A, B, "construct-M-scalar")});
    }
    for (int i = 0; i < n_random; ++i) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
        int d_z = i % 5 == 4 ? 3 : 2;
        int d_x = d_z == 3 ? 27 : 8 + (i % 3);
        detail::TargetInstance t = detail::random_target(d_z, d_x, rng);
        rep.cases.push_back(
            {"pass", detail::construct_M_certificate(t.A, t.B, detail::case_id("construct-M", i))});
    }
    {
        detail::TargetInstance t = detail::adversarial_target();
        TheoryCertificate cert;
        cert.id = "construct-M-adversarial";
        cert.description = "coordinate-supported A with B_1 coupling the same coordinates";
        bool raised = false;
        try {
            construct_M(t.A, t.B);
        } catch (const InfeasibleError& e) {
            raised = true;
            cert.info["failing_column"] = static_cast<double>(e.column);
        }
        cert.add_residual("infeasibility_raised", raised ? 0.0 : 1.0, 0.5);
        cert.finalize();
        rep.cases.push_back({"infeasible", cert});
    }
    return rep;
}

// Diagonal-solve battery: hand scalar case, zero targets, and random targets
// checked by reconstruction residual.
inline SuiteReport suite_lambda(std::uint64_t seed, int n_random = 100) {
    SuiteReport rep;
    rep.suite = "lambda";
    rep.seed = seed;
    {
        Eigen::MatrixXd A(1, 1);
        A << 2.0;
        std::vector<Eigen::VectorXd> D = {Eigen::VectorXd::Constant(1, 4.0)};
        auto lam = solve_lambda(A, D);
        TheoryCertificate cert;
        cert.id = "lambda-scalar";
        cert.description = "2 lambda = -4";
        cert.add_residual("value_vs_hand", std::abs(lam[0][0] + 2.0), 1e-12);
        cert.add_residual("reconstruction", solve_lambda_residual(A, D, lam), 1e-12);
        cert.finalize();
        rep.cases.push_back({"pass", cert});
    }
    {
        Rng rng = Rng::stream(seed, 7777);
        Eigen::MatrixXd A = rng.normal_mat(2, 8);
        std::vector<Eigen::VectorXd> D(2, Eigen::VectorXd::Zero(2));
        auto lam = solve_lambda(A, D);
        double nrm = 0.0;
        for (const auto& l : lam) nrm = std::max(nrm, l.cwiseAbs().maxCoeff());
        TheoryCertificate cert;
        cert.id = "lambda-zero";
        cert.description = "zero targets give the zero min-norm solution";
        cert.add_residual("solution_norm", nrm, 1e-12);
        cert.finalize();
        rep.cases.push_back({"pass", cert});
    }
    for (int i = 0; i < n_random; ++i) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
        Eigen::MatrixXd A;
        do {
            A = rng.normal_mat(2, 8);
        } while (numeric_rank(A) < 2);
        std::vector<Eigen::VectorXd> D = {rng.normal_vec(2), rng.normal_vec(2)};
        auto lam = solve_lambda(A, D);
        TheoryCertificate cert;
        cert.id = detail::case_id("lambda", i);
        cert.description = "random 2x8 target";
        cert.add_residual("reconstruction", solve_lambda_residual(A, D, lam), 1e-10);
        cert.finalize();
        rep.cases.push_back({"pass", cert});
    }
    return rep;
}

// Prescribed-derivative pair battery: the trivial linear case plus random
// generic targets; each case's certificate is produced by the builder itself.
inline SuiteReport suite_counterexample(std::uint64_t seed, int n_random = 20) {
    SuiteReport rep;
    rep.suite = "counterexample";
    rep.seed = seed;
    {
        // Orthonormal rows, zero curvature targets: g is exactly affine.
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 8);
        A(0, 0) = 1.0;
        A(1, 3) = 1.0;
        std::vector<Eigen::MatrixXd> B(2, Eigen::MatrixXd::Zero(8, 8));
        Eigen::VectorXd x0 = Eigen::VectorXd::Zero(8);
        CounterexampleConfig cfg;
        cfg.seed = seed;
        CounterexamplePair pair = build_counterexample(A, B, x0, cfg);
        pair.certificate.id = "counterexample-linear";
        rep.cases.push_back({"pass", pair.certificate});
    }
    for (int i = 0; i < n_random; ++i) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
        detail::TargetInstance t = detail::random_target(2, 8, rng);
        Eigen::VectorXd x0 = rng.normal_vec(8);
        CounterexampleConfig cfg;
        cfg.seed = seed ^ static_cast<std::uint64_t>(i);
        CounterexamplePair pair = build_counterexample(t.A, t.B, x0, cfg);
        pair.certificate.id = detail::case_id("counterexample", i);
        rep.cases.push_back({"pass", pair.certificate});
    }
    return rep;
}

// Signed-sum identity battery over k = 1..5 with the classic named instances.
inline SuiteReport suite_polarization(std::uint64_t seed, int n_random = 100) {
    SuiteReport rep;
    rep.suite = "polarization";
    rep.seed = seed;
    for (int i = 0; i < n_random; ++i) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
        int k = 1 + i % 5;
        int dim = 2 + rng.uniform_int(3);
        Eigen::MatrixXd forms = rng.normal_mat(k, dim);
        std::vector<Eigen::VectorXd> pts;
        for (int p = 0; p < 10; ++p) pts.push_back(rng.normal_vec(dim));
        rep.cases.push_back(
            {"pass", polarization_check(forms, pts, 1e-8, detail::case_id("polarization", i))});
    }
    return rep;
}

// Inverse-sum monomial battery: named hand cases plus random coefficient
// vectors across degrees, dimensions, and support sizes.
inline SuiteReport suite_monomial(std::uint64_t seed, int n_random = 30, int n_points = 100) {
    SuiteReport rep;
    rep.suite = "monomial";
    rep.seed = seed;
    {
        Rng rng = Rng::stream(seed, 5150);
        Eigen::VectorXd alpha(2);
        alpha << 0.0, 1.0;
        std::vector<Eigen::VectorXd> pts;
        Eigen::VectorXd hand(2);
        hand << 3.0, 5.0;
        pts.push_back(hand);
        for (int p = 0; p < n_points; ++p) pts.push_back(rng.uniform_vec(2, -1.0, 1.0));
        rep.cases.push_back(
            {"pass", monomial_from_inverse_sum(2, 2, alpha, pts, 1e-10, "monomial-single-var")});
    }
    {
        Rng rng = Rng::stream(seed, 5151);
        Eigen::VectorXd alpha(2);
        alpha << 1.0, 1.0;
        std::vector<Eigen::VectorXd> pts;
        for (int p = 0; p < n_points; ++p) pts.push_back(rng.uniform_vec(2, -1.0, 1.0));
        rep.cases.push_back(
            {"pass", monomial_from_inverse_sum(2, 2, alpha, pts, 1e-10, "monomial-pair")});
    }
    for (int i = 0; i < n_random; ++i) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
        int k = 1 + i % 4;
        int d = 2 + rng.uniform_int(4);
        int support = 1 + rng.uniform_int(d);
        Eigen::VectorXd alpha = Eigen::VectorXd::Zero(d);
        std::vector<int> idx(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) idx[static_cast<std::size_t>(j)] = j;
        for (int j = 0; j < support; ++j) {
            int pick = j + rng.uniform_int(d - j);
            std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(pick)]);
            double a = 0.0;
            while (std::abs(a) < 0.1) a = rng.uniform(-1.0, 1.0);
            alpha[idx[static_cast<std::size_t>(j)]] = a;
        }
        std::vector<Eigen::VectorXd> pts;
        for (int p = 0; p < n_points; ++p) pts.push_back(rng.uniform_vec(d, -1.0, 1.0));
        rep.cases.push_back({"pass", monomial_from_inverse_sum(k, d, alpha, pts, 1e-10,
                                                              detail::case_id("monomial", i))});
    }
    return rep;
}

inline std::vector<std::string> theory_suite_names() {
    return {"lemma-second", "lemma-secondb", "moore",        "construct-M",
            "lambda",       "counterexample", "polarization", "monomial"};
}

// Runs one named suite; "all" concatenates every battery in declaration order.
inline std::vector<SuiteReport> run_theory_suites(const std::string& selector,
                                                  std::uint64_t seed) {
    std::vector<SuiteReport> out;
    auto want = [&](const std::string& name) { return selector == "all" || selector == name; };
    if (want("lemma-second")) out.push_back(suite_lemma_second(seed));
    if (want("lemma-secondb")) out.push_back(suite_lemma_secondb(seed));
    if (want("moore")) out.push_back(suite_moore(seed));
    if (want("construct-M")) out.push_back(suite_construct_M(seed));
    if (want("lambda")) out.push_back(suite_lambda(seed));
    if (want("counterexample")) out.push_back(suite_counterexample(seed));
    if (want("polarization")) out.push_back(suite_polarization(seed));
    if (want("monomial")) out.push_back(suite_monomial(seed));
    if (out.empty()) throw ConfigError("unknown theory suite: " + selector);
    return out;
}

} // namespace slotlab
