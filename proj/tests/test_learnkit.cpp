// Decoders, the cross-slot penalty, training loops, readout, checkpoints.
// Oracles: hand-built product decoder with analytic mixed partials, central
// finite differences for every gradient path, a linear autoencoder whose
// optimum is exactly zero, and binomial bounds for chance-level accuracy.

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "slotlab/learnkit.hpp"

using namespace slotlab;

namespace {

// f(z) = z1 * z2 with d_x = 1: nets zeroed, one interaction coefficient set.
SlotwiseDecoder product_decoder() {
    SlotStructure s(2, 1);
    Rng rng(1);
    SlotwiseDecoder d = SlotwiseDecoder::make(s, 1, 2, {}, Activation::Identity, rng);
    for (auto& net : d.nets) {
        for (auto& W : net.W) W.setZero();
        for (auto& b : net.b) b.setZero();
    }
    for (std::size_t a = 0; a < d.alphas.size(); ++a)
        if (d.alphas[a] == MultiIndex{1, 1}) d.coef(0, static_cast<Eigen::Index>(a)) = 1.0;
    return d;
}

double readout_accuracy(const LinearReadout& ro, const Eigen::MatrixXd& F,
                        const std::vector<int>& labels) {
    int hit = 0;
    for (Eigen::Index i = 0; i < F.rows(); ++i)
        if (ro.predict(F.row(i).transpose()) == labels[static_cast<std::size_t>(i)]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(F.rows());
}

} // namespace

// ---------------------------------------------------------------------------
// Decoder forward semantics
// ---------------------------------------------------------------------------

TEST_CASE("slotwise decoder with zero table is exactly the sum of per-slot nets") {
    SlotStructure s(3, 2);
    Rng rng(11);
    SlotwiseDecoder d = SlotwiseDecoder::make(s, 5, 1, {7}, Activation::Tanh, rng);
    REQUIRE(d.coef.isZero());
    Rng zr(12);
    for (int t = 0; t < 20; ++t) {
        Eigen::VectorXd z = zr.normal_vec(6);
        Eigen::VectorXd expect = Eigen::VectorXd::Zero(5);
        for (int k = 0; k < 3; ++k)
            expect += d.nets[static_cast<std::size_t>(k)].forward(
                Eigen::VectorXd(z.segment(2 * k, 2)));
        REQUIRE((d.apply(z) - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("slotwise decoder table contributes learned monomials") {
    SlotwiseDecoder d = product_decoder();
    Eigen::VectorXd z(2);
    z << 3.0, -5.0;
    REQUIRE(d.apply(z)[0] == -15.0);
}

TEST_CASE("degree-1 decoder has no cross-slot second derivatives") {
    SlotStructure s(2, 1);
    Rng rng(13);
    SlotwiseDecoder d = SlotwiseDecoder::make(s, 4, 1, {9}, Activation::Softplus, rng);
    // Make the table nonzero so the guarantee is structural, not accidental.
    d.coef = 0.5 * rng.normal_mat(4, static_cast<int>(d.alphas.size()));
    SmoothFn fn = decoder_fn(d);
    Rng zr(14);
    for (int t = 0; t < 20; ++t) {
        CrossSlotReport rep = cross_slot_residual(fn, s, zr.normal_vec(2), 1);
        REQUIRE(rep.max_cross_partial < 1e-6);
    }
}

TEST_CASE("degree-2 decoder has no order-3 cross-slot partials") {
    SlotStructure s(2, 1);
    Rng rng(15);
    SlotwiseDecoder d = SlotwiseDecoder::make(s, 3, 2, {6}, Activation::Tanh, rng);
    d.coef = 0.5 * rng.normal_mat(3, static_cast<int>(d.alphas.size()));
    SmoothFn fn = decoder_fn(d);
    Rng zr(16);
    for (int t = 0; t < 10; ++t) {
        CrossSlotReport rep = cross_slot_residual(fn, s, zr.normal_vec(2), 2);
        REQUIRE(rep.max_cross_partial < 1e-5);
    }
}

// ---------------------------------------------------------------------------
// Decoder gradients
// ---------------------------------------------------------------------------

namespace {

// Scalar functional S = sum_ij U_ij dec(Z)_ij for gradient checking.
double functional(const Decoder& dec, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& U) {
    return (dec.apply_batch(Z).array() * U.array()).sum();
}

void check_decoder_gradients(Decoder& dec, int d_z, Rng& rng) {
    Eigen::MatrixXd Z = rng.normal_mat(3, d_z);
    Eigen::MatrixXd U = rng.normal_mat(3, dec.output_dim());
    Eigen::VectorXd pgrad = Eigen::VectorXd::Zero(dec.num_params());
    Eigen::MatrixXd dZ = dec.backward_batch(Z, U, &pgrad);

    Eigen::VectorXd theta = dec.params();
    const double eps = 1e-5;
    for (int probe = 0; probe < 30; ++probe) {
        Eigen::Index p = rng.uniform_int(static_cast<int>(theta.size()));
        Eigen::VectorXd tp = theta, tm = theta;
        tp[p] += eps;
        tm[p] -= eps;
        dec.set_params(tp);
        double fp = functional(dec, Z, U);
        dec.set_params(tm);
        double fm = functional(dec, Z, U);
        dec.set_params(theta);
        double fd = (fp - fm) / (2 * eps);
        REQUIRE(std::abs(fd - pgrad[p]) < 1e-5 * (1.0 + std::abs(fd)));
    }
    for (Eigen::Index i = 0; i < Z.rows(); ++i)
        for (Eigen::Index j = 0; j < Z.cols(); ++j) {
            Eigen::MatrixXd Zp = Z, Zm = Z;
            Zp(i, j) += eps;
            Zm(i, j) -= eps;
            double fd = (functional(dec, Zp, U) - functional(dec, Zm, U)) / (2 * eps);
            REQUIRE(std::abs(fd - dZ(i, j)) < 1e-5 * (1.0 + std::abs(fd)));
        }
}

} // namespace

TEST_CASE("slotwise decoder gradients match central differences") {
    SlotStructure s(2, 2);
    Rng rng(21);
    SlotwiseDecoder d = SlotwiseDecoder::make(s, 3, 2, {5}, Activation::Tanh, rng);
    d.coef = 0.3 * rng.normal_mat(3, static_cast<int>(d.alphas.size()));
    check_decoder_gradients(d, 4, rng);
}

TEST_CASE("dense decoder gradients match central differences") {
    SlotStructure s(2, 1);
    Rng rng(22);
    DenseDecoder d = DenseDecoder::make(s, 4, {6}, Activation::Softplus, rng);
    check_decoder_gradients(d, 2, rng);
}

TEST_CASE("interaction table gradient equals the analytic monomial outer product") {
    SlotStructure s(2, 1);
    Rng rng(23);
    SlotwiseDecoder d = SlotwiseDecoder::make(s, 2, 2, {}, Activation::Identity, rng);
    Eigen::MatrixXd Z = rng.normal_mat(4, 2);
    Eigen::MatrixXd U = rng.normal_mat(4, 2);
    Eigen::VectorXd pgrad = Eigen::VectorXd::Zero(d.num_params());
    d.backward_batch(Z, U, &pgrad);
    // The table block is the trailing segment; its analytic gradient is U^T M.
    Eigen::MatrixXd M(4, static_cast<Eigen::Index>(d.alphas.size()));
    for (int i = 0; i < 4; ++i)
        M.row(i) = monomial_basis(d.alphas, Z.row(i).transpose()).transpose();
    Eigen::MatrixXd dC = U.transpose() * M;
    Eigen::VectorXd tail = pgrad.tail(d.coef.size());
    REQUIRE((tail - Eigen::Map<const Eigen::VectorXd>(dC.data(), dC.size())).cwiseAbs().maxCoeff() <
            1e-12);
}

// ---------------------------------------------------------------------------
// Cross-slot penalty
// ---------------------------------------------------------------------------

TEST_CASE("product decoder yields exact penalty two under the ordered-pair convention") {
    SlotwiseDecoder d = product_decoder();
    Rng rng(31);
    for (int t = 0; t < 5; ++t) {
        Eigen::VectorXd z = rng.normal_vec(2);
        REQUIRE(hessian_penalty(d, z) == Catch::Approx(2.0).margin(1e-6));
        PenaltyConfig sq;
        sq.squared = true;
        REQUIRE(hessian_penalty(d, z, sq) == Catch::Approx(2.0).margin(1e-6));
    }
}

TEST_CASE("degree-1 slotwise decoder has penalty zero up to stencil noise") {
    SlotStructure s(2, 1);
    Rng rng(32);
    SlotwiseDecoder d = SlotwiseDecoder::make(s, 4, 1, {8}, Activation::Tanh, rng);
    d.coef = rng.normal_mat(4, static_cast<int>(d.alphas.size()));
    Rng zr(33);
    for (int t = 0; t < 100; ++t)
        REQUIRE(hessian_penalty(d, zr.normal_vec(2)) <= 1e-6);
}

TEST_CASE("stochastic probes agree with the exact squared penalty") {
    // Bilinear m=1 case: every probe is exact.
    SlotwiseDecoder d = product_decoder();
    Eigen::VectorXd z(2);
    z << 0.4, -0.7;
    PenaltyConfig st;
    st.mode = PenaltyMode::StochasticProbe;
    st.probes = 256;
    st.seed = 7;
    REQUIRE(hessian_penalty(d, z, st) == Catch::Approx(2.0).margin(1e-6));

    // m=2 with distinct entries: the estimator has real variance.
    SlotStructure s2(2, 2);
    Rng rng(34);
    SlotwiseDecoder d2 = SlotwiseDecoder::make(s2, 1, 2, {}, Activation::Identity, rng);
    for (auto& net : d2.nets) {
        for (auto& W : net.W) W.setZero();
        for (auto& b : net.b) b.setZero();
    }
    // f = z11 z21 + 2 z12 z22: block diag(1, 2), squared norm 5, ordered total 10.
    for (std::size_t a = 0; a < d2.alphas.size(); ++a) {
        if (d2.alphas[a] == MultiIndex{1, 0, 1, 0}) d2.coef(0, static_cast<Eigen::Index>(a)) = 1.0;
        if (d2.alphas[a] == MultiIndex{0, 1, 0, 1}) d2.coef(0, static_cast<Eigen::Index>(a)) = 2.0;
    }
    Eigen::VectorXd z4 = Eigen::VectorXd::Zero(4);
    PenaltyConfig ex;
    ex.squared = true;
    REQUIRE(hessian_penalty(d2, z4, ex) == Catch::Approx(10.0).margin(1e-6));
    PenaltyConfig st2;
    st2.mode = PenaltyMode::StochasticProbe;
    st2.probes = 2048;
    st2.seed = 8;
    REQUIRE(hessian_penalty(d2, z4, st2) == Catch::Approx(10.0).epsilon(0.05));
}

TEST_CASE("penalty gradients differentiate through the stencil") {
    SlotStructure s(2, 1);
    Rng rng(35);
    DenseDecoder d = DenseDecoder::make(s, 3, {6}, Activation::Tanh, rng);
    Eigen::VectorXd z = rng.normal_vec(2);
    PenaltyConfig cfg;
    Eigen::VectorXd pgrad = Eigen::VectorXd::Zero(d.num_params());
    Eigen::VectorXd zgrad = Eigen::VectorXd::Zero(2);
    double val = hessian_penalty_grad(d, z, cfg, &pgrad, &zgrad);
    REQUIRE(val == Catch::Approx(hessian_penalty(d, z, cfg)));
    REQUIRE(val > 1e-4); // dense decoders genuinely couple slots

    const double eps = 1e-5;
    Eigen::VectorXd theta = d.params();
    for (int probe = 0; probe < 20; ++probe) {
        Eigen::Index p = rng.uniform_int(static_cast<int>(theta.size()));
        Eigen::VectorXd tp = theta, tm = theta;
        tp[p] += eps;
        tm[p] -= eps;
        d.set_params(tp);
        double fp = hessian_penalty(d, z, cfg);
        d.set_params(tm);
        double fm = hessian_penalty(d, z, cfg);
        d.set_params(theta);
        double fd = (fp - fm) / (2 * eps);
        REQUIRE(std::abs(fd - pgrad[p]) < 1e-4 * (1.0 + std::abs(fd)));
    }
    for (int j = 0; j < 2; ++j) {
        Eigen::VectorXd zp = z, zm = z;
        zp[j] += eps;
        zm[j] -= eps;
        double fd = (hessian_penalty(d, zp, cfg) - hessian_penalty(d, zm, cfg)) / (2 * eps);
        REQUIRE(std::abs(fd - zgrad[j]) < 1e-4 * (1.0 + std::abs(fd)));
    }
}

TEST_CASE("penalty rejects unsupported derivative orders and trivial slot counts") {
    SlotwiseDecoder d = product_decoder();
    PenaltyConfig bad;
    bad.order = 3;
    REQUIRE_THROWS_AS(hessian_penalty(d, Eigen::VectorXd::Zero(2), bad), CapabilityError);
    // Single slot: no cross pairs, penalty identically zero.
    SlotStructure s1(1, 2);
    Rng rng(36);
    DenseDecoder single = DenseDecoder::make(s1, 3, {5}, Activation::Tanh, rng);
    REQUIRE(hessian_penalty(single, Eigen::VectorXd::Zero(2)) == 0.0);
}

// ---------------------------------------------------------------------------
// Autoencoder training
// ---------------------------------------------------------------------------

namespace {

InteractionGenerator linear_generator(const Eigen::MatrixXd& L) {
    int d_x = static_cast<int>(L.rows());
    int d = static_cast<int>(L.cols());
    std::vector<SlotComponent> comps;
    for (int k = 0; k < d; ++k) {
        PolyMap p;
        p.in_dim = 1;
        p.out_dim = d_x;
        p.alphas = {{1}};
        p.coef = L.col(k);
        comps.push_back(p);
    }
    return InteractionGenerator::make(SlotStructure(d, 1), d_x, 0, comps);
}

DatasetSplit linear_dataset(const Eigen::MatrixXd& L, int n, std::uint64_t seed) {
    SlotStructure s(2, 1);
    SlotBinGrid grid(s, uniform_bins(s, {2, 2}, -1.0, 1.0), full_mask({2, 2}));
    return sample_dataset(linear_generator(L), grid, n, 0, seed);
}

} // namespace

TEST_CASE("linear autoencoder reaches the exact-zero optimum") {
    Eigen::MatrixXd L(2, 2);
    L << 1.5, 0.4, -0.3, 1.2;
    DatasetSplit data = linear_dataset(L, 256, 41);
    Rng rng(42);
    Network enc = Network::make({2, 2}, Activation::Identity, rng);
    DenseDecoder dec = DenseDecoder::make(SlotStructure(2, 1), 2, {}, Activation::Identity, rng);
    TrainConfig cfg;
    cfg.adam.lr = 0.02;
    cfg.batch = 64;
    cfg.steps = 2500;
    cfg.seed = 43;
    std::vector<LossLogEntry> log = train_autoencoder(enc, dec, data, cfg);
    REQUIRE(log.size() == 2500);
    REQUIRE(log.back().recon < 1e-6);
}

TEST_CASE("training is deterministic and logs the pre-update loss at step zero") {
    Eigen::MatrixXd L(2, 2);
    L << 1.0, 0.2, 0.1, 0.9;
    DatasetSplit data = linear_dataset(L, 64, 44);
    TrainConfig cfg;
    cfg.batch = 16;
    cfg.steps = 40;
    cfg.seed = 45;

    Rng r1(46);
    Network enc1 = Network::make({2, 3, 2}, Activation::Tanh, r1);
    DenseDecoder dec1 = DenseDecoder::make(SlotStructure(2, 1), 2, {3}, Activation::Tanh, r1);
    Eigen::VectorXd enc_init = enc1.params();
    Eigen::VectorXd dec_init = dec1.params();
    std::vector<LossLogEntry> log1 = train_autoencoder(enc1, dec1, data, cfg);

    Rng r2(46);
    Network enc2 = Network::make({2, 3, 2}, Activation::Tanh, r2);
    DenseDecoder dec2 = DenseDecoder::make(SlotStructure(2, 1), 2, {3}, Activation::Tanh, r2);
    std::vector<LossLogEntry> log2 = train_autoencoder(enc2, dec2, data, cfg);

    REQUIRE(enc1.params() == enc2.params());
    REQUIRE(dec1.params() == dec2.params());
    for (std::size_t i = 0; i < log1.size(); ++i) {
        REQUIRE(log1[i].recon == log2[i].recon);
        REQUIRE(log1[i].total == log2[i].total);
    }

    // Recompute the first batch loss from the initial parameters by hand.
    std::vector<const DatasetRecord*> id;
    for (const auto& r : data.records)
        if (!r.ood) id.push_back(&r);
    Rng br = Rng::stream(cfg.seed, 0);
    Network enc0 = enc1;
    enc0.set_params(enc_init);
    DenseDecoder dec0 = dec1;
    dec0.set_params(dec_init);
    double loss = 0.0;
    for (int i = 0; i < cfg.batch; ++i) {
        const auto& rec = *id[static_cast<std::size_t>(br.uniform_int(static_cast<int>(id.size())))];
        loss += (dec0.apply(enc0.forward(rec.x)) - rec.x).squaredNorm();
    }
    loss /= cfg.batch;
    REQUIRE(log1[0].recon == Catch::Approx(loss).margin(1e-12));
}

TEST_CASE("zero regularizer weight skips the penalty path entirely") {
    Eigen::MatrixXd L(2, 2);
    L << 1.0, 0.0, 0.0, 1.0;
    DatasetSplit data = linear_dataset(L, 64, 47);
    TrainConfig plain;
    plain.steps = 25;
    plain.seed = 48;
    TrainConfig reg = plain;
    reg.lambda_h = 0.0; // identical config: the trajectories must agree bitwise

    Rng r1(49);
    Network enc1 = Network::make({2, 2}, Activation::Identity, r1);
    SlotwiseDecoder dec1 = SlotwiseDecoder::make(SlotStructure(2, 1), 2, 1, {}, Activation::Identity, r1);
    std::vector<LossLogEntry> log1 = train_autoencoder(enc1, dec1, data, plain);
    Rng r2(49);
    Network enc2 = Network::make({2, 2}, Activation::Identity, r2);
    SlotwiseDecoder dec2 = SlotwiseDecoder::make(SlotStructure(2, 1), 2, 1, {}, Activation::Identity, r2);
    std::vector<LossLogEntry> log2 = train_autoencoder(enc2, dec2, data, reg);
    REQUIRE(enc1.params() == enc2.params());
    for (std::size_t i = 0; i < log1.size(); ++i) {
        REQUIRE(log1[i].total == log2[i].total);
        REQUIRE(log1[i].penalty == 0.0);
    }
}

TEST_CASE("divergence reports the failing step") {
    Eigen::MatrixXd L(2, 2);
    L << 1.0, 0.0, 0.0, 1.0;
    DatasetSplit data = linear_dataset(L, 32, 50);
    TrainConfig cfg;
    cfg.steps = 10;
    cfg.divergence_threshold = 1e-12; // initial loss is far above this
    Rng rng(51);
    Network enc = Network::make({2, 2}, Activation::Identity, rng);
    DenseDecoder dec = DenseDecoder::make(SlotStructure(2, 1), 2, {}, Activation::Identity, rng);
    try {
        train_autoencoder(enc, dec, data, cfg);
        FAIL("expected divergence");
    } catch (const ConvergenceError& e) {
        REQUIRE(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("regularized training reduces the penalty on a dense decoder") {
    Eigen::MatrixXd L(2, 2);
    L << 1.3, 0.2, -0.4, 1.1;
    DatasetSplit data = linear_dataset(L, 128, 52);
    Rng rng(53);
    Network enc = Network::make({2, 4, 2}, Activation::Tanh, rng);
    DenseDecoder dec = DenseDecoder::make(SlotStructure(2, 1), 2, {4}, Activation::Tanh, rng);
    TrainConfig cfg;
    cfg.adam.lr = 5e-3;
    cfg.batch = 32;
    cfg.steps = 300;
    cfg.lambda_h = 1.0;
    cfg.seed = 54;
    std::vector<LossLogEntry> log = train_autoencoder(enc, dec, data, cfg);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 20; ++i) {
        early += log[static_cast<std::size_t>(i)].penalty;
        late += log[log.size() - 20 + static_cast<std::size_t>(i)].penalty;
    }
    REQUIRE(late < early);
}

// ---------------------------------------------------------------------------
// Linear readout
// ---------------------------------------------------------------------------

TEST_CASE("separable two-cluster slots reach full accuracy") {
    Rng rng(61);
    Eigen::MatrixXd F(100, 1);
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) {
        int c = i % 2;
        F(i, 0) = (c == 0 ? -1.0 : 1.0) + 0.1 * rng.normal();
        labels.push_back(c);
    }
    LinearReadout ro = train_readout(F, labels, 2);
    REQUIRE(readout_accuracy(ro, F, labels) == 1.0);
}

TEST_CASE("permuting rows together with labels leaves accuracy unchanged") {
    Rng rng(62);
    Eigen::MatrixXd F(60, 2);
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) {
        int c = i % 3;
        F.row(i) = (Eigen::Vector2d(std::cos(2.1 * c), std::sin(2.1 * c)) +
                    0.15 * Eigen::Vector2d(rng.normal(), rng.normal()))
                       .transpose();
        labels.push_back(c);
    }
    LinearReadout a = train_readout(F, labels, 3);
    // Reverse the row order (a slot-order permutation reindexes rows).
    Eigen::MatrixXd Fr = F.colwise().reverse();
    std::vector<int> lr(labels.rbegin(), labels.rend());
    LinearReadout b = train_readout(Fr, lr, 3);
    REQUIRE(readout_accuracy(a, F, labels) == Catch::Approx(readout_accuracy(b, Fr, lr)).margin(1e-12));
}

TEST_CASE("random labels score at chance within the binomial bound") {
    Rng rng(63);
    Eigen::MatrixXd F = rng.normal_mat(1000, 2);
    std::vector<int> labels;
    for (int i = 0; i < 1000; ++i) labels.push_back(rng.uniform_int(4));
    LinearReadout ro = train_readout(F, labels, 4);
    double acc = readout_accuracy(ro, F, labels);
    double bound = 3.0 * std::sqrt(0.25 * 0.75 / 1000.0);
    REQUIRE(acc < 0.25 + bound + 0.02); // slight slack: the fit optimizes the same sample
    REQUIRE(acc > 0.25 - bound);
}

TEST_CASE("readout validates inputs") {
    Eigen::MatrixXd F(3, 1);
    F << 0, 1, 2;
    REQUIRE_THROWS_AS(train_readout(F, {0, 1}, 2), DimensionError);
    REQUIRE_THROWS_AS(train_readout(F, {0, 1, 5}, 2), ConfigError);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("network checkpoints round-trip bitwise") {
    Rng rng(71);
    Network net = Network::make({3, 5, 2}, Activation::Softplus, rng);
    std::stringstream buf;
    write_network(net, buf);
    Network back = read_network(buf);
    REQUIRE(back.act == net.act);
    REQUIRE(back.widths() == net.widths());
    REQUIRE(back.params() == net.params());
}

TEST_CASE("decoder checkpoints round-trip for both kinds") {
    Rng rng(72);
    SlotwiseDecoder sw = SlotwiseDecoder::make(SlotStructure(2, 2), 6, 2, {4}, Activation::Tanh, rng);
    sw.coef = rng.normal_mat(6, static_cast<int>(sw.alphas.size()));
    std::stringstream b1;
    write_decoder(sw, b1);
    std::unique_ptr<Decoder> back1 = read_decoder(b1);
    REQUIRE(back1->kind() == "slotwise");
    REQUIRE(back1->params() == sw.params());
    REQUIRE(back1->slot_structure().K == 2);
    REQUIRE(back1->slot_structure().m == 2);

    DenseDecoder dd = DenseDecoder::make(SlotStructure(3, 1), 4, {5}, Activation::Tanh, rng);
    std::stringstream b2;
    write_decoder(dd, b2);
    std::unique_ptr<Decoder> back2 = read_decoder(b2);
    REQUIRE(back2->kind() == "dense");
    REQUIRE(back2->params() == dd.params());
}

TEST_CASE("decoder checksum is stable and parameter-sensitive") {
    Rng rng(73);
    DenseDecoder d = DenseDecoder::make(SlotStructure(2, 1), 3, {4}, Activation::Tanh, rng);
    std::uint64_t c1 = decoder_checksum(d);
    REQUIRE(decoder_checksum(d) == c1);
    Eigen::VectorXd p = d.params();
    p[0] += 1e-9;
    d.set_params(p);
    REQUIRE(decoder_checksum(d) != c1);
}

TEST_CASE("loss log csv lists one row per step") {
    std::vector<LossLogEntry> log{{0, 1.0, 0.0, 1.0}, {1, 0.5, 0.25, 0.75}};
    std::ostringstream os;
    write_loss_log_csv(log, os);
    std::string s = os.str();
    REQUIRE(s.rfind("step,recon,penalty,total\n", 0) == 0);
    REQUIRE(std::count(s.begin(), s.end(), '\n') == 3);
}
