#pragma once

// Latent recovery against a frozen decoder: online gradient search from an
// encoder guess, and offline replay training of the encoder on recombined
// slot values pushed through the decoder.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "slotlab/errors.hpp"
#include "slotlab/learnkit.hpp"
#include "slotlab/rng.hpp"
#include "slotlab/slots.hpp"

namespace slotlab {

// ---------------------------------------------------------------------------
// Gradient search
// ---------------------------------------------------------------------------

// Readout-entropy weights used by the heavier search presets.
inline constexpr double kEntropyPresetLight = 10.0;
inline constexpr double kEntropyPresetHeavy = 50.0;

struct SearchConfig {
    int steps = 500;
    double lr = 1e-3;
    double momentum = 0.9;
    double residual_tol = 0.0; // stop once the reconstruction residual drops this low

    // Optional per-slot readout-entropy term added to the objective. Weight
    // zero skips the term entirely; a positive weight needs a readout whose
    // input width is the slot width.
    double entropy_weight = 0.0;
    const LinearReadout* readout = nullptr;

    void validate() const {
        if (steps < 1) throw ConfigError("SearchConfig: steps must be positive");
        if (!(lr > 0.0)) throw ConfigError("SearchConfig: learning rate must be positive");
        if (!(momentum >= 0.0) || momentum >= 1.0)
            throw ConfigError("SearchConfig: momentum must lie in [0, 1)");
        if (!(residual_tol >= 0.0))
            throw ConfigError("SearchConfig: residual threshold must be nonnegative");
        if (!(entropy_weight >= 0.0))
            throw ConfigError("SearchConfig: entropy weight must be nonnegative");
        if (entropy_weight > 0.0 && readout == nullptr)
            throw ConfigError("SearchConfig: a positive entropy weight needs an attached readout");
    }
};

// Sum over slots of the Shannon entropy of softmax(readout logits). The
// gradient with respect to the latent is accumulated into `grad` when given
// (caller provides a zeroed d_z vector).
inline double slot_entropy(const LinearReadout& ro, const SlotStructure& slots,
                           const Eigen::VectorXd& z, Eigen::VectorXd* grad = nullptr) {
    if (z.size() != slots.d_z()) throw DimensionError("slot_entropy: latent width mismatch");
    if (ro.W.cols() != slots.m)
        throw DimensionError("slot_entropy: readout input width must equal the slot width");
    if (grad && grad->size() != z.size())
        throw DimensionError("slot_entropy: grad buffer size mismatch");
    double total = 0.0;
    for (int k = 0; k < slots.K; ++k) {
        Eigen::VectorXd l = ro.logits(z.segment(k * slots.m, slots.m));
        double lmax = l.maxCoeff();
        Eigen::ArrayXd sh = (l.array() - lmax).exp();
        double Zs = sh.sum();
        Eigen::ArrayXd p = sh / Zs;
        Eigen::ArrayXd logp = (l.array() - lmax) - std::log(Zs);
        double H = -(p * logp).sum();
        total += H;
        if (grad) {
            Eigen::VectorXd dHdl = (-p * (logp + H)).matrix();
            grad->segment(k * slots.m, slots.m) += ro.W.transpose() * dHdl;
        }
    }
    return total;
}

struct SearchResult {
    Eigen::VectorXd z;         // best iterate seen, the initial point included
    double residual = 0.0;     // squared reconstruction error at that iterate
    int best_step = 0;         // 0 means the initialization already won
    bool aborted = false;      // a non-finite objective or gradient cut the run short
    std::vector<double> trace; // residual at every visited iterate, initialization first
};

// Momentum descent on ||x - dec(z)||^2 (plus the optional entropy term) from
// the supplied starting point. Bookkeeping guarantees the returned residual
// never exceeds the initial one.
inline SearchResult search_invert(const Decoder& dec, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& z0, const SearchConfig& cfg = {}) {
    cfg.validate();
    if (x.size() != dec.output_dim()) throw DimensionError("search_invert: target width mismatch");
    if (z0.size() != dec.latent_dim()) throw DimensionError("search_invert: latent width mismatch");

    auto resid = [&](const Eigen::VectorXd& z) { return (dec.apply(z) - x).squaredNorm(); };

    SearchResult res;
    res.z = z0;
    res.residual = resid(z0);
    res.trace.push_back(res.residual);
    if (!std::isfinite(res.residual)) {
        res.aborted = true;
        return res;
    }

    Eigen::VectorXd z = z0;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(z0.size());
    double cur = res.residual;
    for (int t = 1; t <= cfg.steps; ++t) {
        if (cur <= cfg.residual_tol) break;
        Eigen::MatrixXd Zrow = z.transpose();
        Eigen::MatrixXd U = 2.0 * (dec.apply_batch(Zrow) - x.transpose());
        Eigen::VectorXd g = dec.backward_batch(Zrow, U, nullptr).row(0).transpose();
        if (cfg.entropy_weight > 0.0) {
            Eigen::VectorXd eg = Eigen::VectorXd::Zero(z.size());
            slot_entropy(*cfg.readout, dec.slot_structure(), z, &eg);
            g += cfg.entropy_weight * eg;
        }
        if (!g.allFinite()) {
            res.aborted = true;
            break;
        }
        v = cfg.momentum * v - cfg.lr * g;
        z += v;
        cur = resid(z);
        res.trace.push_back(cur);
        if (!std::isfinite(cur)) {
            res.aborted = true;
            break;
        }
        if (cur < res.residual) {
            res.residual = cur;
            res.z = z;
            res.best_step = t;
        }
    }
    return res;
}

// Independent searches over a batch of targets, one row per point.
inline std::vector<SearchResult> search_batch(const Decoder& dec, const Eigen::MatrixXd& X,
                                              const Eigen::MatrixXd& Z0,
                                              const SearchConfig& cfg = {}) {
    if (X.rows() != Z0.rows()) throw DimensionError("search_batch: row count mismatch");
    std::vector<SearchResult> out;
    out.reserve(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        out.push_back(search_invert(dec, X.row(i).transpose(), Z0.row(i).transpose(), cfg));
    return out;
}

inline void write_search_traces_csv(const std::vector<SearchResult>& results, std::ostream& os) {
    os << "point,step,residual\n";
    char buf[64];
    for (std::size_t i = 0; i < results.size(); ++i)
        for (std::size_t t = 0; t < results[i].trace.size(); ++t) {
            std::snprintf(buf, sizeof(buf), "%.17g", results[i].trace[t]);
            os << i << ',' << t << ',' << buf << '\n';
        }
}

// ---------------------------------------------------------------------------
// Recombination sampling
// ---------------------------------------------------------------------------

// Emits latents whose slot-k value is drawn uniformly from a per-slot pool of
// observed values. Recombination across slots is what takes the samples
// outside the training region while keeping every marginal in distribution.
class RecombinationSampler {
public:
    RecombinationSampler(SlotStructure s, std::vector<std::vector<Eigen::VectorXd>> pools,
                         std::uint64_t seed)
        : slots_(s), pools_(std::move(pools)), rng_(seed) {
        if (static_cast<int>(pools_.size()) != slots_.K)
            throw DimensionError("RecombinationSampler: need one pool per slot");
        for (const auto& pool : pools_) {
            if (pool.empty()) throw ConfigError("RecombinationSampler: empty slot pool");
            for (const auto& v : pool)
                if (v.size() != slots_.m)
                    throw DimensionError("RecombinationSampler: pool value width mismatch");
        }
    }

    // Pools built by slicing a matrix of latents (one per row) into slots.
    static RecombinationSampler from_latents(const SlotStructure& s, const Eigen::MatrixXd& Z,
                                             std::uint64_t seed) {
        if (Z.cols() != s.d_z())
            throw DimensionError("RecombinationSampler: latent width mismatch");
        if (Z.rows() == 0) throw ConfigError("RecombinationSampler: no latents to pool");
        std::vector<std::vector<Eigen::VectorXd>> pools(static_cast<std::size_t>(s.K));
        for (int k = 0; k < s.K; ++k)
            for (Eigen::Index i = 0; i < Z.rows(); ++i)
                pools[static_cast<std::size_t>(k)].push_back(
                    Z.row(i).segment(k * s.m, s.m).transpose());
        return RecombinationSampler(s, std::move(pools), seed);
    }

    const SlotStructure& slot_structure() const { return slots_; }
    const std::vector<std::vector<Eigen::VectorXd>>& pools() const { return pools_; }

    Eigen::VectorXd sample() {
        Eigen::VectorXd z(slots_.d_z());
        for (int k = 0; k < slots_.K; ++k) {
            const auto& pool = pools_[static_cast<std::size_t>(k)];
            int j = rng_.uniform_int(static_cast<int>(pool.size()));
            z.segment(k * slots_.m, slots_.m) = pool[static_cast<std::size_t>(j)];
        }
        return z;
    }

    Eigen::MatrixXd sample_batch(int n) {
        if (n < 1) throw ConfigError("RecombinationSampler: batch size must be positive");
        Eigen::MatrixXd Z(n, slots_.d_z());
        for (int i = 0; i < n; ++i) Z.row(i) = sample().transpose();
        return Z;
    }

private:
    SlotStructure slots_;
    std::vector<std::vector<Eigen::VectorXd>> pools_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// Replay training
// ---------------------------------------------------------------------------

// Retrains the encoder to undo the frozen decoder on recombined latents:
// minimizes mean ||z - enc(dec(z))||^2 over a fresh sampler batch per step.
// The decoder is never updated. Batch order comes from the sampler's own
// stream, so reproducibility means passing a freshly seeded sampler; the
// training seed in `cfg` is not consulted. The log entry for each step holds
// the loss before that step's update.
inline std::vector<LossLogEntry> replay_train(const Decoder& dec, Network& enc,
                                              RecombinationSampler& sampler,
                                              const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.lambda_h != 0.0)
        throw ConfigError("replay_train: the cross-slot penalty applies to decoder training only");
    if (enc.in_dim() != dec.output_dim() || enc.out_dim() != dec.latent_dim())
        throw DimensionError("replay_train: encoder/decoder shapes incompatible");
    const SlotStructure& s = sampler.slot_structure();
    if (s.K != dec.slot_structure().K || s.m != dec.slot_structure().m)
        throw DimensionError("replay_train: sampler slot structure mismatch");

    Adam opt(enc.num_params(), cfg.adam);
    Eigen::VectorXd theta = enc.params();
    std::vector<LossLogEntry> log;
    log.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        Eigen::MatrixXd Z = sampler.sample_batch(cfg.batch);
        Eigen::MatrixXd X = dec.apply_batch(Z);
        Network::Tape tape;
        Eigen::MatrixXd R = enc.forward_tape(X, tape) - Z;
        double loss = R.squaredNorm() / cfg.batch;
        log.push_back({step, loss, 0.0, loss});
        if (!std::isfinite(loss) || loss > cfg.divergence_threshold)
            throw ConvergenceError("replay_train: diverged at step " + std::to_string(step), loss);
        Eigen::VectorXd genc = Eigen::VectorXd::Zero(enc.num_params());
        enc.backward(tape, (2.0 / cfg.batch) * R, &genc);
        opt.step(theta, genc);
        enc.set_params(theta);
    }
    return log;
}

// Mean replay objective on a fixed latent set, for held-out monitoring.
inline double replay_loss(const Decoder& dec, const Network& enc, const Eigen::MatrixXd& Z) {
    if (Z.rows() == 0) throw ConfigError("replay_loss: empty latent set");
    Eigen::MatrixXd R = enc.forward(dec.apply_batch(Z)) - Z;
    return R.squaredNorm() / static_cast<double>(Z.rows());
}

} // namespace slotlab
