#pragma once

// Trainable pieces: the decoder interface with its slot-wise constrained and
// unconstrained dense implementations, the cross-slot Hessian penalty with
// gradients through every stencil evaluation, Adam updates, autoencoder and
// linear-readout training loops, and checkpoint serialization.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slotlab/derivatives.hpp"
#include "slotlab/errors.hpp"
#include "slotlab/generator.hpp"
#include "slotlab/multi_index.hpp"
#include "slotlab/network.hpp"
#include "slotlab/rng.hpp"
#include "slotlab/slots.hpp"
#include "slotlab/synthlab.hpp"

namespace slotlab {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct Adam {
    AdamConfig cfg;
    Eigen::VectorXd m1, m2;
    long t = 0;

    explicit Adam(Eigen::Index n, AdamConfig c = {})
        : cfg(c), m1(Eigen::VectorXd::Zero(n)), m2(Eigen::VectorXd::Zero(n)) {
        if (!(cfg.lr > 0.0)) throw ConfigError("Adam: learning rate must be positive");
    }

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
        if (params.size() != m1.size() || grad.size() != m1.size())
            throw DimensionError("Adam::step: size mismatch");
        ++t;
        m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
        m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseProduct(grad).eval();
        double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        params -= (cfg.lr / c1) * m1.cwiseQuotient(((m2 / c2).cwiseSqrt().array() + cfg.eps).matrix());
    }
};

// ---------------------------------------------------------------------------
// Decoders
// ---------------------------------------------------------------------------

// A differentiable map from structured latents to observations. Batched entry
// points take samples as rows; backward_batch recomputes its own forward pass,
// accumulates parameter gradients into `pgrad` (caller zeroes) and returns the
// per-sample input gradients.
struct Decoder {
    virtual ~Decoder() = default;
    virtual SlotStructure slot_structure() const = 0;
    virtual int output_dim() const = 0;
    virtual Eigen::MatrixXd apply_batch(const Eigen::MatrixXd& Z) const = 0;
    virtual Eigen::MatrixXd backward_batch(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& U,
                                           Eigen::VectorXd* pgrad) const = 0;
    virtual int num_params() const = 0;
    virtual Eigen::VectorXd params() const = 0;
    virtual void set_params(const Eigen::VectorXd& p) = 0;
    virtual std::string kind() const = 0;

    int latent_dim() const { return slot_structure().d_z(); }

    Eigen::VectorXd apply(const Eigen::VectorXd& z) const {
        return apply_batch(Eigen::MatrixXd(z.transpose())).row(0).transpose();
    }
};

// Plain dense network on the full latent vector: the unconstrained baseline.
struct DenseDecoder : Decoder {
    SlotStructure slots;
    Network net;

    DenseDecoder() = default;
    DenseDecoder(SlotStructure s, Network n) : slots(s), net(std::move(n)) {
        if (net.in_dim() != slots.d_z())
            throw DimensionError("DenseDecoder: network input dim != d_z");
    }

    static DenseDecoder make(const SlotStructure& s, int d_x, const std::vector<int>& hidden,
                             Activation act, Rng& rng) {
        std::vector<int> widths{s.d_z()};
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        widths.push_back(d_x);
        return DenseDecoder(s, Network::make(widths, act, rng));
    }

    SlotStructure slot_structure() const override { return slots; }
    int output_dim() const override { return net.out_dim(); }
    Eigen::MatrixXd apply_batch(const Eigen::MatrixXd& Z) const override { return net.forward(Z); }

    Eigen::MatrixXd backward_batch(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& U,
                                   Eigen::VectorXd* pgrad) const override {
        Network::Tape tape;
        net.forward_tape(Z, tape);
        return net.backward(tape, U, pgrad);
    }

    int num_params() const override { return net.num_params(); }
    Eigen::VectorXd params() const override { return net.params(); }
    void set_params(const Eigen::VectorXd& p) override { net.set_params(p); }
    std::string kind() const override { return "dense"; }
};

// Sum of per-slot networks plus a learnable polynomial interaction table of
// total degree <= n over the full latent. Cross-slot derivatives of order
// n + 1 vanish by construction: each network sees one slot, and the table has
// no monomial of higher total degree.
struct SlotwiseDecoder : Decoder {
    SlotStructure slots;
    int d_x = 1;
    int n = 0;
    std::vector<Network> nets;      // K nets, m -> d_x
    std::vector<MultiIndex> alphas; // enumerate_multi_indices(d_z, n)
    Eigen::MatrixXd coef;           // d_x x alphas.size(), learnable

    SlotwiseDecoder() = default;

    static SlotwiseDecoder make(const SlotStructure& s, int d_x, int n,
                                const std::vector<int>& hidden, Activation act, Rng& rng) {
        SlotwiseDecoder d;
        d.slots = s;
        d.d_x = d_x;
        d.n = n;
        std::vector<int> widths{s.m};
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        widths.push_back(d_x);
        for (int k = 0; k < s.K; ++k) d.nets.push_back(Network::make(widths, act, rng));
        d.alphas = enumerate_multi_indices(s.d_z(), n);
        d.coef = Eigen::MatrixXd::Zero(d_x, static_cast<Eigen::Index>(d.alphas.size()));
        return d;
    }

    void validate() const {
        if (static_cast<int>(nets.size()) != slots.K)
            throw DimensionError("SlotwiseDecoder: need one network per slot");
        for (const auto& net : nets)
            if (net.in_dim() != slots.m || net.out_dim() != d_x)
                throw DimensionError("SlotwiseDecoder: network shape mismatch");
        if (coef.rows() != d_x || coef.cols() != static_cast<Eigen::Index>(alphas.size()))
            throw DimensionError("SlotwiseDecoder: interaction table shape mismatch");
    }

    SlotStructure slot_structure() const override { return slots; }
    int output_dim() const override { return d_x; }

    Eigen::MatrixXd monomials(const Eigen::MatrixXd& Z) const {
        Eigen::MatrixXd M(Z.rows(), static_cast<Eigen::Index>(alphas.size()));
        for (Eigen::Index i = 0; i < Z.rows(); ++i)
            M.row(i) = monomial_basis(alphas, Z.row(i).transpose()).transpose();
        return M;
    }

    Eigen::MatrixXd apply_batch(const Eigen::MatrixXd& Z) const override {
        if (Z.cols() != slots.d_z())
            throw DimensionError("SlotwiseDecoder: latent width mismatch");
        Eigen::MatrixXd X = monomials(Z) * coef.transpose();
        for (int k = 0; k < slots.K; ++k)
            X += nets[static_cast<std::size_t>(k)].forward(
                Eigen::MatrixXd(Z.middleCols(k * slots.m, slots.m)));
        return X;
    }

    // Parameter layout: per-slot network blocks in slot order, then the
    // interaction table column-major.
    int num_params() const override {
        int s = static_cast<int>(coef.size());
        for (const auto& net : nets) s += net.num_params();
        return s;
    }

    Eigen::VectorXd params() const override {
        Eigen::VectorXd p(num_params());
        Eigen::Index at = 0;
        for (const auto& net : nets) {
            p.segment(at, net.num_params()) = net.params();
            at += net.num_params();
        }
        p.segment(at, coef.size()) = Eigen::Map<const Eigen::VectorXd>(coef.data(), coef.size());
        return p;
    }

    void set_params(const Eigen::VectorXd& p) override {
        if (p.size() != num_params()) throw DimensionError("SlotwiseDecoder: param size mismatch");
        Eigen::Index at = 0;
        for (auto& net : nets) {
            net.set_params(p.segment(at, net.num_params()));
            at += net.num_params();
        }
        Eigen::Map<Eigen::VectorXd>(coef.data(), coef.size()) = p.segment(at, coef.size());
    }

    Eigen::MatrixXd backward_batch(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& U,
                                   Eigen::VectorXd* pgrad) const override {
        if (Z.cols() != slots.d_z() || U.cols() != d_x || U.rows() != Z.rows())
            throw DimensionError("SlotwiseDecoder: backward shape mismatch");
        Eigen::MatrixXd dZ = Eigen::MatrixXd::Zero(Z.rows(), Z.cols());
        Eigen::Index at = 0;
        for (int k = 0; k < slots.K; ++k) {
            const Network& net = nets[static_cast<std::size_t>(k)];
            Network::Tape tape;
            net.forward_tape(Z.middleCols(k * slots.m, slots.m), tape);
            if (pgrad) {
                Eigen::VectorXd seg = Eigen::VectorXd::Zero(net.num_params());
                dZ.middleCols(k * slots.m, slots.m) += net.backward(tape, U, &seg);
                pgrad->segment(at, net.num_params()) += seg;
            } else {
                dZ.middleCols(k * slots.m, slots.m) += net.backward(tape, U, nullptr);
            }
            at += net.num_params();
        }
        // Interaction table: x += coef * basis(z).
        Eigen::MatrixXd M = monomials(Z);
        if (pgrad) {
            Eigen::MatrixXd dC = U.transpose() * M; // d_x x A
            pgrad->segment(at, coef.size()) +=
                Eigen::Map<const Eigen::VectorXd>(dC.data(), dC.size());
        }
        for (Eigen::Index i = 0; i < Z.rows(); ++i) {
            Eigen::VectorXd z = Z.row(i).transpose();
            Eigen::VectorXd cu = coef.transpose() * U.row(i).transpose(); // A
            for (int j = 0; j < Z.cols(); ++j) {
                double acc = 0.0;
                for (std::size_t a = 0; a < alphas.size(); ++a)
                    acc += cu[static_cast<Eigen::Index>(a)] * monomial_partial(alphas[a], {j}, z);
                dZ(i, j) += acc;
            }
        }
        return dZ;
    }

    std::string kind() const override { return "slotwise"; }
};

// Non-owning differentiable-map view over a decoder.
inline SmoothFn decoder_fn(const Decoder& dec) {
    return make_fn(dec.latent_dim(), dec.output_dim(),
                   [&dec](const Eigen::VectorXd& z) { return dec.apply(z); });
}

// ---------------------------------------------------------------------------
// Cross-slot Hessian penalty
// ---------------------------------------------------------------------------

enum class PenaltyMode { ExactFd, StochasticProbe };

// The penalty sums over ordered slot pairs (k, l), k != l, the Frobenius norm
// of the cross-slot second-derivative block of the decoder at z. Ordered
// summation doubles each symmetric block; the FD stencils for (a,b) and (b,a)
// coincide, so blocks are computed once per unordered pair and counted twice.
struct PenaltyConfig {
    PenaltyMode mode = PenaltyMode::ExactFd;
    int order = 2;       // only second-order blocks are implemented
    double h = 1e-3;     // stencil half-width
    bool squared = false; // sum squared Frobenius norms instead (stochastic mode always does)
    int probes = 64;     // stochastic mode: probe pairs per slot pair
    std::uint64_t seed = 0;
};

namespace detail {

// Shared stencil walk. For every unordered cross-slot block this calls
// `emit(block_sq, stencil)` where block_sq is the squared Frobenius norm and
// `stencil` re-yields each second-difference direction pair for the backward
// sweep. Directions are coordinate pairs in exact mode and probe vector pairs
// in stochastic mode (scaled by 1/probes for the mean).
struct StencilTerm {
    Eigen::VectorXd du, dv; // offsets: evaluate at z +- h*du +- h*dv
    Eigen::VectorXd diff;   // second difference (d_x)
    double weight;          // contribution weight of ||diff||^2 inside the block
};

template <typename EmitBlock>
inline void penalty_blocks(const Decoder& dec, const Eigen::VectorXd& z, const PenaltyConfig& cfg,
                           EmitBlock&& emit) {
    SlotStructure s = dec.slot_structure();
    if (z.size() != s.d_z()) throw DimensionError("hessian_penalty: latent size mismatch");
    if (cfg.order != 2)
        throw CapabilityError("hessian_penalty: only second-order blocks are implemented");
    if (!(cfg.h > 0.0)) throw ConfigError("hessian_penalty: stencil width must be positive");
    double inv = 1.0 / (4.0 * cfg.h * cfg.h);
    auto second_diff = [&](const Eigen::VectorXd& du, const Eigen::VectorXd& dv) {
        Eigen::MatrixXd P(4, z.size());
        P.row(0) = (z + cfg.h * du + cfg.h * dv).transpose();
        P.row(1) = (z + cfg.h * du - cfg.h * dv).transpose();
        P.row(2) = (z - cfg.h * du + cfg.h * dv).transpose();
        P.row(3) = (z - cfg.h * du - cfg.h * dv).transpose();
        Eigen::MatrixXd F = dec.apply_batch(P);
        return Eigen::VectorXd(inv * (F.row(0) - F.row(1) - F.row(2) + F.row(3)).transpose());
    };
    Rng rng(0);
    if (cfg.mode == PenaltyMode::StochasticProbe) rng = Rng(mix64(cfg.seed ^ 0x9E3779B97F4A7C15ull));
    for (int k = 0; k < s.K; ++k)
        for (int l = k + 1; l < s.K; ++l) {
            std::vector<StencilTerm> terms;
            double block_sq = 0.0;
            if (cfg.mode == PenaltyMode::ExactFd) {
                for (int a = 0; a < s.m; ++a)
                    for (int b = 0; b < s.m; ++b) {
                        StencilTerm t;
                        t.du = Eigen::VectorXd::Zero(z.size());
                        t.dv = Eigen::VectorXd::Zero(z.size());
                        t.du[k * s.m + a] = 1.0;
                        t.dv[l * s.m + b] = 1.0;
                        t.diff = second_diff(t.du, t.dv);
                        t.weight = 1.0;
                        block_sq += t.diff.squaredNorm();
                        terms.push_back(std::move(t));
                    }
            } else {
                for (int p = 0; p < cfg.probes; ++p) {
                    StencilTerm t;
                    t.du = Eigen::VectorXd::Zero(z.size());
                    t.dv = Eigen::VectorXd::Zero(z.size());
                    for (int a = 0; a < s.m; ++a)
                        t.du[k * s.m + a] = rng.u01() < 0.5 ? -1.0 : 1.0;
                    for (int b = 0; b < s.m; ++b)
                        t.dv[l * s.m + b] = rng.u01() < 0.5 ? -1.0 : 1.0;
                    t.diff = second_diff(t.du, t.dv);
                    t.weight = 1.0 / static_cast<double>(cfg.probes);
                    block_sq += t.weight * t.diff.squaredNorm();
                    terms.push_back(std::move(t));
                }
            }
            emit(block_sq, terms);
        }
}

} // namespace detail

// Penalty value only.
inline double hessian_penalty(const Decoder& dec, const Eigen::VectorXd& z,
                              const PenaltyConfig& cfg = {}) {
    bool squared = cfg.squared || cfg.mode == PenaltyMode::StochasticProbe;
    double total = 0.0;
    detail::penalty_blocks(dec, z, cfg,
                           [&](double block_sq, const std::vector<detail::StencilTerm>&) {
                               total += 2.0 * (squared ? block_sq : std::sqrt(block_sq));
                           });
    return total;
}

// Penalty value with gradients. Stencil evaluations are treated as ordinary
// forward passes: the parameter gradient flows through every stencil point,
// and `zgrad` carries the dependence of the penalty on the latent itself.
inline double hessian_penalty_grad(const Decoder& dec, const Eigen::VectorXd& z,
                                   const PenaltyConfig& cfg, Eigen::VectorXd* pgrad,
                                   Eigen::VectorXd* zgrad) {
    bool squared = cfg.squared || cfg.mode == PenaltyMode::StochasticProbe;
    double total = 0.0;
    if (pgrad && pgrad->size() != dec.num_params())
        throw DimensionError("hessian_penalty_grad: pgrad size mismatch");
    if (zgrad && zgrad->size() != z.size())
        throw DimensionError("hessian_penalty_grad: zgrad size mismatch");
    double inv = 1.0 / (4.0 * cfg.h * cfg.h);
    detail::penalty_blocks(
        dec, z, cfg, [&](double block_sq, const std::vector<detail::StencilTerm>& terms) {
            double norm = std::sqrt(block_sq);
            total += 2.0 * (squared ? block_sq : norm);
            // d(total)/d(diff) per term; the sqrt is flat at an exactly zero
            // block, where the zero subgradient is the stationary choice.
            if (!squared && norm < 1e-300) return;
            for (const auto& t : terms) {
                Eigen::VectorXd ddiff =
                    squared ? Eigen::VectorXd(4.0 * t.weight * t.diff)
                            : Eigen::VectorXd((2.0 * t.weight / norm) * t.diff);
                Eigen::MatrixXd P(4, z.size());
                P.row(0) = (z + cfg.h * t.du + cfg.h * t.dv).transpose();
                P.row(1) = (z + cfg.h * t.du - cfg.h * t.dv).transpose();
                P.row(2) = (z - cfg.h * t.du + cfg.h * t.dv).transpose();
                P.row(3) = (z - cfg.h * t.du - cfg.h * t.dv).transpose();
                Eigen::MatrixXd U(4, dec.output_dim());
                U.row(0) = (inv)*ddiff.transpose();
                U.row(1) = (-inv) * ddiff.transpose();
                U.row(2) = (-inv) * ddiff.transpose();
                U.row(3) = (inv)*ddiff.transpose();
                Eigen::MatrixXd dP = dec.backward_batch(P, U, pgrad);
                if (zgrad) *zgrad += dP.colwise().sum().transpose();
            }
        });
    return total;
}

// ---------------------------------------------------------------------------
// Autoencoder training
// ---------------------------------------------------------------------------

struct TrainConfig {
    AdamConfig adam;
    int batch = 64;
    int steps = 2000;
    double lambda_h = 0.0;
    PenaltyConfig penalty;
    std::uint64_t seed = 0;
    double divergence_threshold = 1e6;

    void validate() const {
        if (batch < 1 || steps < 0) throw ConfigError("TrainConfig: batch/steps must be positive");
        if (!(adam.lr > 0.0)) throw ConfigError("TrainConfig: learning rate must be positive");
        if (!std::isfinite(lambda_h) || lambda_h < 0.0)
            throw ConfigError("TrainConfig: lambda_h must be finite and non-negative");
    }
};

struct LossLogEntry {
    int step = 0;
    double recon = 0.0;
    double penalty = 0.0;
    double total = 0.0;
};

inline void write_loss_log_csv(const std::vector<LossLogEntry>& log, std::ostream& os) {
    os << "step,recon,penalty,total\n";
    char buf[32];
    for (const auto& e : log) {
        os << e.step;
        for (double v : {e.recon, e.penalty, e.total}) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            os << "," << buf;
        }
        os << "\n";
    }
}

// Minimizes mean squared reconstruction error plus lambda_h times the mean
// cross-slot penalty over in-domain batches. Batches are drawn from one RNG
// stream per step; each log entry records the loss of the CURRENT parameters
// on that step's batch, so entry 0 is the pre-training loss.
inline std::vector<LossLogEntry> train_autoencoder(Network& enc, Decoder& dec,
                                                   const DatasetSplit& data,
                                                   const TrainConfig& cfg) {
    cfg.validate();
    if (enc.out_dim() != dec.latent_dim())
        throw DimensionError("train_autoencoder: encoder output dim != decoder latent dim");
    if (enc.in_dim() != dec.output_dim())
        throw DimensionError("train_autoencoder: encoder input dim != decoder output dim");
    std::vector<const DatasetRecord*> id;
    for (const auto& r : data.records)
        if (!r.ood) id.push_back(&r);
    if (id.empty()) throw ConfigError("train_autoencoder: no in-domain records");

    Adam opt_enc(enc.num_params(), cfg.adam);
    Adam opt_dec(dec.num_params(), cfg.adam);
    std::vector<LossLogEntry> log;
    log.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(step));
        int B = cfg.batch;
        Eigen::MatrixXd X(B, enc.in_dim());
        for (int i = 0; i < B; ++i)
            X.row(i) = id[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(id.size())))]
                           ->x.transpose();

        Network::Tape tape;
        Eigen::MatrixXd Z = enc.forward_tape(X, tape);
        Eigen::MatrixXd R = dec.apply_batch(Z) - X;
        double recon = R.squaredNorm() / B;

        Eigen::VectorXd gdec = Eigen::VectorXd::Zero(dec.num_params());
        Eigen::MatrixXd dZ = dec.backward_batch(Z, (2.0 / B) * R, &gdec);

        double pen = 0.0;
        if (cfg.lambda_h > 0.0) {
            Eigen::VectorXd gpen = Eigen::VectorXd::Zero(dec.num_params());
            for (int i = 0; i < B; ++i) {
                Eigen::VectorXd zg = Eigen::VectorXd::Zero(Z.cols());
                pen += hessian_penalty_grad(dec, Z.row(i).transpose(), cfg.penalty, &gpen, &zg);
                dZ.row(i) += (cfg.lambda_h / B) * zg.transpose();
            }
            pen /= B;
            gdec += (cfg.lambda_h / B) * gpen;
        }
        double total = recon + cfg.lambda_h * pen;
        log.push_back({step, recon, pen, total});
        if (!std::isfinite(total) || total > cfg.divergence_threshold) {
            std::ostringstream os;
            os << "train_autoencoder: diverged at step " << step;
            throw ConvergenceError(os.str(), total);
        }

        Eigen::VectorXd genc = Eigen::VectorXd::Zero(enc.num_params());
        enc.backward(tape, dZ, &genc);
        Eigen::VectorXd pe = enc.params(), pd = dec.params();
        opt_enc.step(pe, genc);
        opt_dec.step(pd, gdec);
        enc.set_params(pe);
        dec.set_params(pd);
    }
    return log;
}

// ---------------------------------------------------------------------------
// Shared linear readout
// ---------------------------------------------------------------------------

struct ReadoutConfig {
    double lr = 0.1;
    int steps = 400;
    std::uint64_t seed = 0;
};

// One weight matrix applied independently to every slot; rows of the feature
// matrix are individual slot values.
struct LinearReadout {
    Eigen::MatrixXd W; // classes x m
    Eigen::VectorXd b; // classes

    int classes() const { return static_cast<int>(W.rows()); }

    Eigen::VectorXd logits(const Eigen::VectorXd& slot_value) const {
        return W * slot_value + b;
    }

    int predict(const Eigen::VectorXd& slot_value) const {
        Eigen::Index best = 0;
        logits(slot_value).maxCoeff(&best);
        return static_cast<int>(best);
    }
};

// Full-batch softmax cross-entropy descent from zero initialization: the
// problem is convex, so the run is deterministic without any RNG draw.
inline LinearReadout train_readout(const Eigen::MatrixXd& slot_values,
                                   const std::vector<int>& labels, int n_classes,
                                   const ReadoutConfig& cfg = {}) {
    if (slot_values.rows() != static_cast<Eigen::Index>(labels.size()))
        throw DimensionError("train_readout: feature rows != label count");
    if (slot_values.rows() == 0) throw ConfigError("train_readout: no training rows");
    if (n_classes < 1) throw ConfigError("train_readout: need at least one class");
    for (int l : labels)
        if (l < 0 || l >= n_classes) throw ConfigError("train_readout: label out of range");

    Eigen::Index R = slot_values.rows(), m = slot_values.cols();
    LinearReadout ro;
    ro.W = Eigen::MatrixXd::Zero(n_classes, m);
    ro.b = Eigen::VectorXd::Zero(n_classes);
    Adam opt(n_classes * (m + 1), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    for (int step = 0; step < cfg.steps; ++step) {
        Eigen::MatrixXd L = slot_values * ro.W.transpose();
        L.rowwise() += ro.b.transpose();
        // Row-wise softmax with max subtraction.
        Eigen::MatrixXd P = (L.colwise() - L.rowwise().maxCoeff()).array().exp();
        P.array().colwise() /= P.rowwise().sum().array();
        for (Eigen::Index i = 0; i < R; ++i) P(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
        P /= static_cast<double>(R);
        Eigen::MatrixXd dW = P.transpose() * slot_values;
        Eigen::VectorXd db = P.colwise().sum().transpose();
        Eigen::VectorXd params(n_classes * (m + 1));
        params << Eigen::Map<const Eigen::VectorXd>(ro.W.data(), ro.W.size()), ro.b;
        Eigen::VectorXd grad(n_classes * (m + 1));
        grad << Eigen::Map<const Eigen::VectorXd>(dW.data(), dW.size()), db;
        opt.step(params, grad);
        Eigen::Map<Eigen::VectorXd>(ro.W.data(), ro.W.size()) = params.head(ro.W.size());
        ro.b = params.tail(n_classes);
    }
    return ro;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

inline void write_network(const Network& net, std::ostream& os) {
    os.write("SLNW", 4);
    detail::put_u32(os, kCheckpointFormatVersion);
    std::string act = activation_name(net.act);
    detail::put_u32(os, static_cast<std::uint32_t>(act.size()));
    os.write(act.data(), static_cast<std::streamsize>(act.size()));
    std::vector<int> widths = net.widths();
    detail::put_u32(os, static_cast<std::uint32_t>(widths.size()));
    for (int w : widths) detail::put_u32(os, static_cast<std::uint32_t>(w));
    Eigen::VectorXd p = net.params();
    for (Eigen::Index i = 0; i < p.size(); ++i) detail::put_f64(os, p[i]);
    if (!os) throw IoError("network write: stream failure");
}

inline Network read_network(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SLNW", 4) != 0)
        throw IoError("network read: bad magic");
    if (detail::get_u32(is) != kCheckpointFormatVersion)
        throw IoError("network read: unsupported format version");
    std::uint32_t alen = detail::get_u32(is);
    if (alen > 64) throw IoError("network read: activation name too long");
    std::string act(alen, '\0');
    if (!is.read(act.data(), alen)) throw IoError("network read: truncated stream");
    std::uint32_t nw = detail::get_u32(is);
    if (nw < 2) throw IoError("network read: bad layer count");
    std::vector<int> widths(nw);
    for (auto& w : widths) w = static_cast<int>(detail::get_u32(is));
    Network net;
    net.act = activation_from_name(act);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        net.W.push_back(Eigen::MatrixXd::Zero(widths[l + 1], widths[l]));
        net.b.push_back(Eigen::VectorXd::Zero(widths[l + 1]));
    }
    Eigen::VectorXd p(net.num_params());
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = detail::get_f64(is);
    net.set_params(p);
    return net;
}

inline void write_decoder(const Decoder& dec, std::ostream& os) {
    os.write("SLDC", 4);
    detail::put_u32(os, kCheckpointFormatVersion);
    std::string kind = dec.kind();
    detail::put_u32(os, static_cast<std::uint32_t>(kind.size()));
    os.write(kind.data(), static_cast<std::streamsize>(kind.size()));
    SlotStructure s = dec.slot_structure();
    detail::put_u32(os, static_cast<std::uint32_t>(s.K));
    detail::put_u32(os, static_cast<std::uint32_t>(s.m));
    if (kind == "dense") {
        write_network(static_cast<const DenseDecoder&>(dec).net, os);
    } else if (kind == "slotwise") {
        const auto& sd = static_cast<const SlotwiseDecoder&>(dec);
        detail::put_u32(os, static_cast<std::uint32_t>(sd.d_x));
        detail::put_u32(os, static_cast<std::uint32_t>(sd.n));
        for (const auto& net : sd.nets) write_network(net, os);
        for (Eigen::Index i = 0; i < sd.coef.size(); ++i)
            detail::put_f64(os, sd.coef.data()[i]);
    } else {
        throw IoError("decoder write: unknown decoder kind " + kind);
    }
    if (!os) throw IoError("decoder write: stream failure");
}

inline std::unique_ptr<Decoder> read_decoder(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SLDC", 4) != 0)
        throw IoError("decoder read: bad magic");
    if (detail::get_u32(is) != kCheckpointFormatVersion)
        throw IoError("decoder read: unsupported format version");
    std::uint32_t klen = detail::get_u32(is);
    if (klen > 64) throw IoError("decoder read: kind name too long");
    std::string kind(klen, '\0');
    if (!is.read(kind.data(), klen)) throw IoError("decoder read: truncated stream");
    int K = static_cast<int>(detail::get_u32(is));
    int m = static_cast<int>(detail::get_u32(is));
    SlotStructure s(K, m);
    if (kind == "dense") {
        return std::make_unique<DenseDecoder>(s, read_network(is));
    }
    if (kind == "slotwise") {
        auto d = std::make_unique<SlotwiseDecoder>();
        d->slots = s;
        d->d_x = static_cast<int>(detail::get_u32(is));
        d->n = static_cast<int>(detail::get_u32(is));
        for (int k = 0; k < K; ++k) d->nets.push_back(read_network(is));
        d->alphas = enumerate_multi_indices(s.d_z(), d->n);
        d->coef = Eigen::MatrixXd::Zero(d->d_x, static_cast<Eigen::Index>(d->alphas.size()));
        for (Eigen::Index i = 0; i < d->coef.size(); ++i) d->coef.data()[i] = detail::get_f64(is);
        d->validate();
        return d;
    }
    throw IoError("decoder read: unknown decoder kind " + kind);
}

// Fingerprint of the serialized decoder; replay training asserts it unchanged.
inline std::uint64_t decoder_checksum(const Decoder& dec) {
    std::ostringstream os;
    write_decoder(dec, os);
    return fnv1a(os.str());
}

} // namespace slotlab
