// Slot matching and scoring. Oracles: brute-force assignment enumeration,
// hand-built equivalence transforms with known permutations, and binomial
// bounds for chance-level readouts.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <sstream>

#include "slotlab/evalkit.hpp"

using namespace slotlab;

namespace {

// Lexicographically first optimal assignment by explicit enumeration.
Assignment brute_force_assignment(const Eigen::MatrixXd& cost) {
    int K = static_cast<int>(cost.rows());
    std::vector<int> p(static_cast<std::size_t>(K));
    for (int i = 0; i < K; ++i) p[static_cast<std::size_t>(i)] = i;
    Assignment best;
    best.cost = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (int i = 0; i < K; ++i) c += cost(i, p[static_cast<std::size_t>(i)]);
        if (c < best.cost) {
            best.cost = c;
            best.perm = p;
        }
    } while (std::next_permutation(p.begin(), p.end()));
    return best;
}

struct ScoredData {
    SlotStructure slots{3, 1};
    Eigen::MatrixXd z;               // ground truth
    std::vector<BinTuple> labels;    // 4 equal-width bins of each coordinate
    std::vector<bool> ood;
};

// Uniform latents with bin labels; a fixed share of rows is tagged as OOD.
ScoredData uniform_scored_data(int n, std::uint64_t seed, int K = 3) {
    ScoredData d;
    d.slots = SlotStructure(K, 1);
    Rng rng(seed);
    d.z = rng.uniform_mat(n, K, -1.0, 1.0);
    for (int i = 0; i < n; ++i) {
        BinTuple t;
        for (int k = 0; k < K; ++k) {
            int b = static_cast<int>((d.z(i, k) + 1.0) / 0.5);
            t.push_back(std::min(b, 3));
        }
        d.labels.push_back(t);
        d.ood.push_back(i % 10 < 3);
    }
    return d;
}

} // namespace

// ---------------------------------------------------------------------------
// SlotEquivalence
// ---------------------------------------------------------------------------

TEST_CASE("equivalence transforms invert exactly") {
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        SlotStructure s(2 + t % 3, 1 + t % 2);
        SlotEquivalence ea = SlotEquivalence::random_affine(s, rng);
        SlotEquivalence em = SlotEquivalence::random_monotone(s, rng);
        Eigen::VectorXd z = rng.normal_vec(s.d_z());
        REQUIRE((ea.invert(ea.apply(z)) - z).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE((em.invert(em.apply(z)) - z).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("equivalence validation rejects malformed transforms") {
    SlotStructure s(2, 1);
    SlotEquivalence e;
    e.slots = s;
    e.perm = {0, 0}; // not a permutation
    e.maps = {AffineSlotMap{Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1)},
              AffineSlotMap{Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1)}};
    REQUIRE_THROWS_AS(e.validate(), ConfigError);
    e.perm = {1, 0};
    e.maps[0] = AffineSlotMap{Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1)};
    REQUIRE_THROWS_AS(e.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Assignment
// ---------------------------------------------------------------------------

TEST_CASE("assignment solves the named instances") {
    Eigen::MatrixXd easy = Eigen::MatrixXd::Ones(3, 3);
    easy.diagonal().setZero();
    Assignment a = hungarian(easy);
    REQUIRE(a.perm == std::vector<int>{0, 1, 2});
    REQUIRE(a.cost == 0.0);

    Eigen::MatrixXd c(3, 3);
    c << 4, 1, 3, 2, 0, 5, 3, 2, 2;
    Assignment b = hungarian(c);
    REQUIRE(b.cost == 5.0);
    REQUIRE(b.perm == std::vector<int>{1, 0, 2});

    Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(4, 4, 2.5);
    Assignment f = hungarian(flat);
    REQUIRE(f.perm == std::vector<int>{0, 1, 2, 3}); // documented tie-break
    REQUIRE(f.cost == 10.0);
}

TEST_CASE("assignment equals brute force over a thousand random matrices") {
    Rng rng(2);
    for (int t = 0; t < 1000; ++t) {
        int K = 2 + rng.uniform_int(5); // up to 6
        Eigen::MatrixXd cost = rng.normal_mat(K, K);
        Assignment fast = hungarian(cost);
        Assignment slow = brute_force_assignment(cost);
        REQUIRE(fast.cost == slow.cost);
        REQUIRE(fast.perm == slow.perm);
    }
}

TEST_CASE("assignment rejects non-finite and non-square inputs") {
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(hungarian(bad), NumericError);
    REQUIRE_THROWS_AS(hungarian(Eigen::MatrixXd::Zero(2, 3)), DimensionError);
}

// ---------------------------------------------------------------------------
// slot_match_and_score
// ---------------------------------------------------------------------------

TEST_CASE("an equivalence-transformed latent scores perfectly and reveals its permutation") {
    ScoredData d = uniform_scored_data(600, 3);
    Rng rng(4);
    SlotEquivalence e = SlotEquivalence::random_affine(d.slots, rng);
    Eigen::MatrixXd zhat = e.apply_rows(d.z);
    EvalReport rep = slot_match_and_score(d.slots, zhat, d.z, d.labels, d.ood);
    REQUIRE(rep.perm == e.perm); // inferred slot k carries true slot perm[k]
    for (double v : rep.r2_id) REQUIRE(v > 1.0 - 1e-6);
    for (double v : rep.r2_ood) REQUIRE(v > 1.0 - 1e-6);
    REQUIRE(rep.readout_acc_id > 0.9);
    REQUIRE(rep.readout_acc_ood > 0.9);
    REQUIRE(rep.has_ood);
}

TEST_CASE("independent noise scores at zero and chance") {
    ScoredData d = uniform_scored_data(1500, 5, 2);
    Rng rng(6);
    Eigen::MatrixXd zhat = rng.normal_mat(1500, 2);
    EvalReport rep = slot_match_and_score(d.slots, zhat, d.z, d.labels, d.ood);
    for (double v : rep.r2_id) REQUIRE(std::abs(v) < 0.05);
    double bound = 3.0 * std::sqrt(0.25 * 0.75 / (2.0 * 1500.0 * 0.7));
    REQUIRE(rep.readout_acc_id < 0.25 + bound + 0.03);
    REQUIRE(rep.readout_acc_ood < 0.25 + bound + 0.05);
}

TEST_CASE("high id accuracy with chance ood accuracy is reported faithfully") {
    // The classic failure: correct on the training region, garbage outside it.
    ScoredData d = uniform_scored_data(1200, 7);
    Rng rng(8);
    Eigen::MatrixXd zhat = d.z;
    for (int i = 0; i < 1200; ++i)
        if (d.ood[static_cast<std::size_t>(i)]) zhat.row(i) = rng.normal_vec(3).transpose();
    EvalReport rep = slot_match_and_score(d.slots, zhat, d.z, d.labels, d.ood);
    REQUIRE(rep.perm == std::vector<int>{0, 1, 2});
    for (double v : rep.r2_id) REQUIRE(v > 1.0 - 1e-6);
    for (double v : rep.r2_ood) REQUIRE(v < 0.1);
    REQUIRE(rep.readout_acc_id > 0.9);
    REQUIRE(rep.readout_acc_ood < 0.4);
}

TEST_CASE("scores are invariant under a further equivalence of the inferred slots") {
    ScoredData d = uniform_scored_data(500, 9);
    Rng rng(10);
    // A correlated but imperfect representation.
    Eigen::MatrixXd zhat = d.z + 0.3 * rng.normal_mat(500, 3);
    EvalReport base = slot_match_and_score(d.slots, zhat, d.z, d.labels, d.ood);
    SlotEquivalence e = SlotEquivalence::random_affine(d.slots, rng);
    EvalReport moved = slot_match_and_score(d.slots, e.apply_rows(zhat), d.z, d.labels, d.ood);
    // Output slot k of the transform carries inferred slot e.perm[k].
    for (int k = 0; k < 3; ++k)
        REQUIRE(moved.perm[static_cast<std::size_t>(k)] ==
                base.perm[static_cast<std::size_t>(e.perm[static_cast<std::size_t>(k)])]);
    std::vector<double> base_r2 = base.r2_id, moved_r2 = moved.r2_id;
    std::sort(base_r2.begin(), base_r2.end());
    std::sort(moved_r2.begin(), moved_r2.end());
    for (std::size_t k = 0; k < 3; ++k)
        REQUIRE(std::abs(base_r2[k] - moved_r2[k]) < 1e-6);
    REQUIRE(std::abs(base.readout_acc_id - moved.readout_acc_id) < 1e-6);
    REQUIRE(std::abs(base.readout_acc_ood - moved.readout_acc_ood) < 1e-6);
}

TEST_CASE("single-class labels are flagged as degenerate") {
    ScoredData d = uniform_scored_data(100, 11);
    for (auto& t : d.labels) t = BinTuple{0, 0, 0};
    EvalReport rep = slot_match_and_score(d.slots, d.z, d.z, d.labels, d.ood);
    REQUIRE(rep.degenerate_labels);
    REQUIRE(rep.readout_acc_id == 1.0);
    REQUIRE_FALSE(rep.warnings.empty());
}

TEST_CASE("constant true slots do not blow up the variance normalization") {
    ScoredData d = uniform_scored_data(200, 12);
    Eigen::MatrixXd z = d.z;
    z.col(1).setConstant(0.4);
    for (auto& t : d.labels) t[1] = 0;
    EvalReport rep = slot_match_and_score(d.slots, z, z, d.labels, d.ood);
    for (double v : rep.r2_id) {
        REQUIRE(std::isfinite(v));
        REQUIRE(v <= 1.0);
    }
}

TEST_CASE("score validation rejects mismatched inputs") {
    ScoredData d = uniform_scored_data(50, 13);
    REQUIRE_THROWS_AS(
        slot_match_and_score(d.slots, d.z.topRows(49), d.z, d.labels, d.ood),
        DimensionError);
    std::vector<bool> all_ood(50, true);
    REQUIRE_THROWS_AS(slot_match_and_score(d.slots, d.z, d.z, d.labels, all_ood), ConfigError);
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

TEST_CASE("eval reports round-trip through json exactly") {
    ScoredData d = uniform_scored_data(300, 14);
    Rng rng(15);
    ScoreConfig cfg;
    cfg.config_hash = 0xDEADBEEFCAFEBABEull;
    cfg.seeds = {1, 2, 3};
    EvalReport rep = slot_match_and_score(d.slots, d.z + 0.1 * rng.normal_mat(300, 3), d.z,
                                          d.labels, d.ood, cfg);
    rep.recon_mse_id = 0.123456789012345;
    rep.recon_mse_ood = 9.87654321e-7;
    std::string text = eval_report_to_json(rep).dump();
    EvalReport back = eval_report_from_json(nlohmann::json::parse(text));
    REQUIRE(back == rep);

    std::ostringstream os;
    write_eval_report_csv(rep, os);
    std::string csv = os.str();
    REQUIRE(csv.rfind("field,value\n", 0) == 0);
    REQUIRE(csv.find("readout_acc_ood,") != std::string::npos);
    REQUIRE(csv.find("cost_convention,id-ridge-regression") != std::string::npos);
}
