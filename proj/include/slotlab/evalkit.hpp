#pragma once

// Scoring inferred slot representations against ground truth: equivalence
// transforms for test construction, exact minimum-cost slot assignment,
// matched per-slot regression scores, and a shared bin readout whose OOD
// accuracy is the headline compositional-generalization number.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "slotlab/errors.hpp"
#include "slotlab/learnkit.hpp"
#include "slotlab/rng.hpp"
#include "slotlab/slots.hpp"
#include "slotlab/synthlab.hpp"

namespace slotlab {

// ---------------------------------------------------------------------------
// Slot equivalence transforms
// ---------------------------------------------------------------------------

// Invertible affine map on one slot value.
struct AffineSlotMap {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
};

// Coordinate-wise strictly increasing cubic t -> a t + c t^3 with a > 0,
// c >= 0; inverted numerically to full precision.
struct MonotoneSlotMap {
    Eigen::VectorXd a;
    Eigen::VectorXd c;
};

using SlotMap = std::variant<AffineSlotMap, MonotoneSlotMap>;

namespace detail {

inline double invert_increasing_cubic(double a, double c, double y) {
    if (c == 0.0) return y / a;
    // Bracket the root, bisect, then polish with two Newton steps.
    double hi = std::max(std::abs(y) / a, std::cbrt(std::abs(y) / c)) + 1.0;
    double lo = -hi;
    for (int i = 0; i < 80; ++i) {
        double mid = 0.5 * (lo + hi);
        double f = a * mid + c * mid * mid * mid - y;
        (f < 0.0 ? lo : hi) = mid;
    }
    double t = 0.5 * (lo + hi);
    for (int i = 0; i < 3; ++i) {
        double f = a * t + c * t * t * t - y;
        t -= f / (a + 3.0 * c * t * t);
    }
    return t;
}

} // namespace detail

// Permutation plus per-slot bijections: the transforms under which slot
// representations are considered equivalent. Output slot k carries
// map k applied to input slot perm[k].
struct SlotEquivalence {
    SlotStructure slots;
    std::vector<int> perm;
    std::vector<SlotMap> maps;

    void validate() const {
        if (static_cast<int>(perm.size()) != slots.K || static_cast<int>(maps.size()) != slots.K)
            throw DimensionError("SlotEquivalence: need one source and one map per slot");
        std::vector<bool> seen(static_cast<std::size_t>(slots.K), false);
        for (int p : perm) {
            if (p < 0 || p >= slots.K || seen[static_cast<std::size_t>(p)])
                throw ConfigError("SlotEquivalence: perm is not a permutation");
            seen[static_cast<std::size_t>(p)] = true;
        }
        for (const auto& mv : maps) {
            if (const auto* am = std::get_if<AffineSlotMap>(&mv)) {
                if (am->A.rows() != slots.m || am->A.cols() != slots.m ||
                    am->b.size() != slots.m)
                    throw DimensionError("SlotEquivalence: affine map shape mismatch");
                if (std::abs(am->A.determinant()) < 1e-12)
                    throw ConfigError("SlotEquivalence: affine map not invertible");
            } else {
                const auto& mm = std::get<MonotoneSlotMap>(mv);
                if (mm.a.size() != slots.m || mm.c.size() != slots.m)
                    throw DimensionError("SlotEquivalence: monotone map shape mismatch");
                if ((mm.a.array() <= 0.0).any() || (mm.c.array() < 0.0).any())
                    throw ConfigError("SlotEquivalence: monotone map needs a > 0, c >= 0");
            }
        }
    }

    Eigen::VectorXd apply(const Eigen::VectorXd& z) const {
        if (z.size() != slots.d_z()) throw DimensionError("SlotEquivalence: latent width mismatch");
        Eigen::VectorXd out(z.size());
        for (int k = 0; k < slots.K; ++k) {
            Eigen::VectorXd v = z.segment(perm[static_cast<std::size_t>(k)] * slots.m, slots.m);
            const auto& mv = maps[static_cast<std::size_t>(k)];
            if (const auto* am = std::get_if<AffineSlotMap>(&mv)) {
                out.segment(k * slots.m, slots.m) = am->A * v + am->b;
            } else {
                const auto& mm = std::get<MonotoneSlotMap>(mv);
                for (int j = 0; j < slots.m; ++j)
                    out[k * slots.m + j] = mm.a[j] * v[j] + mm.c[j] * v[j] * v[j] * v[j];
            }
        }
        return out;
    }

    Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& Z) const {
        Eigen::MatrixXd out(Z.rows(), Z.cols());
        for (Eigen::Index i = 0; i < Z.rows(); ++i)
            out.row(i) = apply(Z.row(i).transpose()).transpose();
        return out;
    }

    Eigen::VectorXd invert(const Eigen::VectorXd& zp) const {
        if (zp.size() != slots.d_z())
            throw DimensionError("SlotEquivalence: latent width mismatch");
        Eigen::VectorXd out(zp.size());
        for (int k = 0; k < slots.K; ++k) {
            Eigen::VectorXd w = zp.segment(k * slots.m, slots.m);
            Eigen::VectorXd v(slots.m);
            const auto& mv = maps[static_cast<std::size_t>(k)];
            if (const auto* am = std::get_if<AffineSlotMap>(&mv)) {
                v = am->A.partialPivLu().solve(w - am->b);
            } else {
                const auto& mm = std::get<MonotoneSlotMap>(mv);
                for (int j = 0; j < slots.m; ++j)
                    v[j] = detail::invert_increasing_cubic(mm.a[j], mm.c[j], w[j]);
            }
            out.segment(perm[static_cast<std::size_t>(k)] * slots.m, slots.m) = v;
        }
        return out;
    }

    static SlotEquivalence random_affine(const SlotStructure& s, Rng& rng) {
        SlotEquivalence e;
        e.slots = s;
        e.perm = detail_random_perm(s.K, rng);
        for (int k = 0; k < s.K; ++k) {
            Eigen::MatrixXd G = rng.normal_mat(s.m, s.m);
            Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
            Eigen::MatrixXd Q = qr.householderQ();
            Eigen::VectorXd d(s.m);
            for (int j = 0; j < s.m; ++j) d[j] = rng.uniform(0.7, 1.6);
            AffineSlotMap am;
            am.A = Q * d.asDiagonal();
            am.b = 0.3 * rng.normal_vec(s.m);
            e.maps.emplace_back(std::move(am));
        }
        e.validate();
        return e;
    }

    static SlotEquivalence random_monotone(const SlotStructure& s, Rng& rng) {
        SlotEquivalence e;
        e.slots = s;
        e.perm = detail_random_perm(s.K, rng);
        for (int k = 0; k < s.K; ++k) {
            MonotoneSlotMap mm;
            mm.a = Eigen::VectorXd(s.m);
            mm.c = Eigen::VectorXd(s.m);
            for (int j = 0; j < s.m; ++j) {
                mm.a[j] = rng.uniform(0.6, 1.8);
                mm.c[j] = rng.uniform(0.0, 0.8);
            }
            e.maps.emplace_back(std::move(mm));
        }
        e.validate();
        return e;
    }

private:
    static std::vector<int> detail_random_perm(int K, Rng& rng) {
        std::vector<int> p(static_cast<std::size_t>(K));
        for (int i = 0; i < K; ++i) p[static_cast<std::size_t>(i)] = i;
        for (int i = K - 1; i > 0; --i)
            std::swap(p[static_cast<std::size_t>(i)],
                      p[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
        return p;
    }
};

// ---------------------------------------------------------------------------
// Minimum-cost assignment
// ---------------------------------------------------------------------------

struct Assignment {
    std::vector<int> perm; // row i is assigned column perm[i]
    double cost = 0.0;
};

// Exact minimum-cost row-to-column assignment via a subset dynamic program
// (the slot counts here are single digits, so the classic augmenting-path
// machinery would be overkill). Among all optimal assignments, returns the
// lexicographically smallest permutation; per-row column choices compare the
// exact expressions the table minimized, so the tie-break is bitwise sound.
inline Assignment hungarian(const Eigen::MatrixXd& cost) {
    int K = static_cast<int>(cost.rows());
    if (cost.cols() != K || K < 1) throw DimensionError("hungarian: cost matrix must be square");
    if (!cost.allFinite()) throw NumericError("hungarian: cost matrix has non-finite entries");
    if (K > 24) throw CapabilityError("hungarian: dimension too large for the subset program");

    // g[mask] = least cost of assigning the last popcount(mask) rows to the
    // column set mask.
    std::vector<double> g(std::size_t(1) << K, 0.0);
    for (std::uint32_t mask = 1; mask < (std::uint32_t(1) << K); ++mask) {
        int pc = __builtin_popcount(mask);
        int row = K - pc;
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < K; ++j)
            if (mask & (std::uint32_t(1) << j))
                best = std::min(best, cost(row, j) + g[mask & ~(std::uint32_t(1) << j)]);
        g[mask] = best;
    }

    Assignment out;
    std::uint32_t remaining = (std::uint32_t(1) << K) - 1;
    for (int r = 0; r < K; ++r) {
        for (int j = 0; j < K; ++j) {
            std::uint32_t bit = std::uint32_t(1) << j;
            if ((remaining & bit) && cost(r, j) + g[remaining & ~bit] == g[remaining]) {
                out.perm.push_back(j);
                remaining &= ~bit;
                break;
            }
        }
    }
    for (int r = 0; r < K; ++r) out.cost += cost(r, out.perm[static_cast<std::size_t>(r)]);
    return out;
}

// ---------------------------------------------------------------------------
// Ridge regression helper
// ---------------------------------------------------------------------------

struct RidgeFit {
    Eigen::MatrixXd W; // targets x features
    Eigen::VectorXd b;

    Eigen::VectorXd predict(const Eigen::VectorXd& v) const { return W * v + b; }
    Eigen::MatrixXd predict_rows(const Eigen::MatrixXd& F) const {
        return (F * W.transpose()).rowwise() + b.transpose();
    }
};

// Centered least squares with a ridge term scaled relative to the feature
// second moment, so near-zero regularization stays parameterization-neutral
// while rank-deficient features remain solvable.
inline RidgeFit fit_ridge(const Eigen::MatrixXd& F, const Eigen::MatrixXd& Y,
                          double ridge_rel = 1e-10) {
    if (F.rows() != Y.rows() || F.rows() == 0)
        throw DimensionError("fit_ridge: need matching nonempty rows");
    Eigen::RowVectorXd muF = F.colwise().mean();
    Eigen::RowVectorXd muY = Y.colwise().mean();
    Eigen::MatrixXd Fc = F.rowwise() - muF;
    Eigen::MatrixXd Yc = Y.rowwise() - muY;
    Eigen::MatrixXd G = Fc.transpose() * Fc;
    double lam = ridge_rel * G.trace() / static_cast<double>(F.cols()) + 1e-300;
    G.diagonal().array() += lam;
    Eigen::MatrixXd Wt = G.ldlt().solve(Fc.transpose() * Yc); // features x targets
    RidgeFit fit;
    fit.W = Wt.transpose();
    fit.b = muY.transpose() - fit.W * muF.transpose();
    return fit;
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct EvalReport {
    std::vector<int> perm;      // inferred slot i explains true slot perm[i]
    std::vector<double> r2_id;  // per matched slot, evaluated on the ID rows
    std::vector<double> r2_ood;
    double readout_acc_id = 0.0;
    double readout_acc_ood = 0.0;
    double recon_mse_id = 0.0;  // filled by pipelines that reconstruct
    double recon_mse_ood = 0.0;
    bool has_ood = false;
    bool degenerate_labels = false;
    std::string cost_convention = "id-ridge-regression";
    std::uint64_t config_hash = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> warnings;

    void validate() const {
        auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!in01(readout_acc_id) || !in01(readout_acc_ood))
            throw PreconditionError("EvalReport: accuracies must lie in [0, 1]");
        for (double v : r2_id)
            if (v > 1.0) throw PreconditionError("EvalReport: R^2 cannot exceed 1");
        for (double v : r2_ood)
            if (v > 1.0) throw PreconditionError("EvalReport: R^2 cannot exceed 1");
    }

    bool operator==(const EvalReport& o) const {
        return perm == o.perm && r2_id == o.r2_id && r2_ood == o.r2_ood &&
               readout_acc_id == o.readout_acc_id && readout_acc_ood == o.readout_acc_ood &&
               recon_mse_id == o.recon_mse_id && recon_mse_ood == o.recon_mse_ood &&
               has_ood == o.has_ood && degenerate_labels == o.degenerate_labels &&
               cost_convention == o.cost_convention && config_hash == o.config_hash &&
               seeds == o.seeds && warnings == o.warnings;
    }
};

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
    return nlohmann::json{{"perm", r.perm},
                          {"r2_id", r.r2_id},
                          {"r2_ood", r.r2_ood},
                          {"readout_acc_id", r.readout_acc_id},
                          {"readout_acc_ood", r.readout_acc_ood},
                          {"recon_mse_id", r.recon_mse_id},
                          {"recon_mse_ood", r.recon_mse_ood},
                          {"has_ood", r.has_ood},
                          {"degenerate_labels", r.degenerate_labels},
                          {"cost_convention", r.cost_convention},
                          {"config_hash", r.config_hash},
                          {"seeds", r.seeds},
                          {"warnings", r.warnings}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.perm = j.at("perm").get<std::vector<int>>();
    r.r2_id = j.at("r2_id").get<std::vector<double>>();
    r.r2_ood = j.at("r2_ood").get<std::vector<double>>();
    r.readout_acc_id = j.at("readout_acc_id").get<double>();
    r.readout_acc_ood = j.at("readout_acc_ood").get<double>();
    r.recon_mse_id = j.at("recon_mse_id").get<double>();
    r.recon_mse_ood = j.at("recon_mse_ood").get<double>();
    r.has_ood = j.at("has_ood").get<bool>();
    r.degenerate_labels = j.at("degenerate_labels").get<bool>();
    r.cost_convention = j.at("cost_convention").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::uint64_t>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
}

// Flat one-row export for tabulation next to other runs.
inline void write_eval_report_csv(const EvalReport& r, std::ostream& os) {
    os << "field,value\n";
    char buf[64];
    auto put = [&](const std::string& name, double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << name << ',' << buf << '\n';
    };
    for (std::size_t k = 0; k < r.perm.size(); ++k)
        os << "perm_" << k << ',' << r.perm[k] << '\n';
    for (std::size_t k = 0; k < r.r2_id.size(); ++k) put("r2_id_" + std::to_string(k), r.r2_id[k]);
    for (std::size_t k = 0; k < r.r2_ood.size(); ++k)
        put("r2_ood_" + std::to_string(k), r.r2_ood[k]);
    put("readout_acc_id", r.readout_acc_id);
    put("readout_acc_ood", r.readout_acc_ood);
    put("recon_mse_id", r.recon_mse_id);
    put("recon_mse_ood", r.recon_mse_ood);
    os << "degenerate_labels," << (r.degenerate_labels ? 1 : 0) << '\n';
    os << "cost_convention," << r.cost_convention << '\n';
}

// ---------------------------------------------------------------------------
// Matching and scoring
// ---------------------------------------------------------------------------

struct ScoreConfig {
    double ridge_rel = 1e-10;
    ReadoutConfig readout;
    std::uint64_t config_hash = 0;       // echoed into the report
    std::vector<std::uint64_t> seeds;    // echoed into the report
};

// Matches inferred slots to true slots by ID ridge-regression error, then
// scores the matched pairs: per-slot R^2 on each partition, and a shared bin
// readout trained on the ID alignments and frozen for OOD. Reading out the
// alignment outputs (rather than raw inferred values) keeps every number
// invariant under slot-wise invertible reparameterizations of the inferred
// representation.
inline EvalReport slot_match_and_score(const SlotStructure& slots, const Eigen::MatrixXd& Zhat,
                                       const Eigen::MatrixXd& Ztrue,
                                       const std::vector<BinTuple>& labels,
                                       const std::vector<bool>& ood,
                                       const ScoreConfig& cfg = {}) {
    const Eigen::Index N = Ztrue.rows();
    const int K = slots.K;
    const int m = slots.m;
    if (Zhat.rows() != N || static_cast<Eigen::Index>(labels.size()) != N ||
        static_cast<Eigen::Index>(ood.size()) != N)
        throw DimensionError("slot_match_and_score: record counts disagree");
    if (Zhat.cols() != slots.d_z() || Ztrue.cols() != slots.d_z())
        throw DimensionError("slot_match_and_score: latent width mismatch");
    for (const auto& t : labels)
        if (static_cast<int>(t.size()) != K)
            throw DimensionError("slot_match_and_score: need one label per slot");

    std::vector<Eigen::Index> id_rows, ood_rows;
    for (Eigen::Index i = 0; i < N; ++i) (ood[static_cast<std::size_t>(i)] ? ood_rows : id_rows).push_back(i);
    if (id_rows.empty()) throw ConfigError("slot_match_and_score: no in-domain records");

    auto slot_block = [&](const Eigen::MatrixXd& Z, const std::vector<Eigen::Index>& rows,
                          int k) {
        Eigen::MatrixXd B(static_cast<Eigen::Index>(rows.size()), m);
        for (std::size_t r = 0; r < rows.size(); ++r) B.row(static_cast<Eigen::Index>(r)) = Z.row(rows[r]).segment(k * m, m);
        return B;
    };

    // ID regression error of every inferred-to-true slot pair.
    Eigen::MatrixXd cost(K, K);
    std::vector<std::vector<RidgeFit>> fits(static_cast<std::size_t>(K),
                                            std::vector<RidgeFit>(static_cast<std::size_t>(K)));
    for (int i = 0; i < K; ++i) {
        Eigen::MatrixXd F = slot_block(Zhat, id_rows, i);
        for (int j = 0; j < K; ++j) {
            Eigen::MatrixXd Y = slot_block(Ztrue, id_rows, j);
            RidgeFit fit = fit_ridge(F, Y, cfg.ridge_rel);
            fits[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = fit;
            cost(i, j) = (fit.predict_rows(F) - Y).squaredNorm() /
                         static_cast<double>(id_rows.size());
        }
    }

    EvalReport rep;
    rep.perm = hungarian(cost).perm;
    rep.has_ood = !ood_rows.empty();
    rep.config_hash = cfg.config_hash;
    rep.seeds = cfg.seeds;

    auto r2_on = [&](const std::vector<Eigen::Index>& rows, int i, int j) {
        Eigen::MatrixXd F = slot_block(Zhat, rows, i);
        Eigen::MatrixXd Y = slot_block(Ztrue, rows, j);
        const RidgeFit& fit = fits[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        double ssr = (fit.predict_rows(F) - Y).squaredNorm();
        Eigen::MatrixXd Yc = Y.rowwise() - Y.colwise().mean();
        double n = static_cast<double>(rows.size());
        double var = std::max(Yc.squaredNorm() / n, 1e-12); // floor for constant slots
        return 1.0 - (ssr / n) / var;
    };
    for (int i = 0; i < K; ++i) {
        int j = rep.perm[static_cast<std::size_t>(i)];
        rep.r2_id.push_back(r2_on(id_rows, i, j));
        rep.r2_ood.push_back(rep.has_ood ? r2_on(ood_rows, i, j) : 0.0);
    }

    // Shared readout over the matched alignment outputs. Labels follow the
    // matched true slot.
    auto stack = [&](const std::vector<Eigen::Index>& rows, Eigen::MatrixXd& F,
                     std::vector<int>& y) {
        F.resize(static_cast<Eigen::Index>(rows.size()) * K, m);
        y.clear();
        for (int i = 0; i < K; ++i) {
            int j = rep.perm[static_cast<std::size_t>(i)];
            const RidgeFit& fit = fits[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            Eigen::MatrixXd P = fit.predict_rows(slot_block(Zhat, rows, i));
            for (std::size_t r = 0; r < rows.size(); ++r) {
                F.row(static_cast<Eigen::Index>(i) * static_cast<Eigen::Index>(rows.size()) +
                      static_cast<Eigen::Index>(r)) = P.row(static_cast<Eigen::Index>(r));
                y.push_back(labels[static_cast<std::size_t>(rows[r])][static_cast<std::size_t>(j)]);
            }
        }
    };
    Eigen::MatrixXd Fid, Food;
    std::vector<int> yid, yood;
    stack(id_rows, Fid, yid);
    if (rep.has_ood) stack(ood_rows, Food, yood);

    int n_classes = 1;
    for (int v : yid) n_classes = std::max(n_classes, v + 1);
    for (int v : yood) n_classes = std::max(n_classes, v + 1);
    bool degenerate = true;
    for (int v : yid)
        if (v != yid.front()) degenerate = false;
    if (degenerate) {
        rep.degenerate_labels = true;
        rep.readout_acc_id = 1.0;
        rep.readout_acc_ood = 1.0;
        rep.warnings.push_back("in-domain labels hold a single class; readout accuracy is vacuous");
    } else {
        LinearReadout ro = train_readout(Fid, yid, n_classes, cfg.readout);
        auto acc = [&](const Eigen::MatrixXd& F, const std::vector<int>& y) {
            int hit = 0;
            for (Eigen::Index r = 0; r < F.rows(); ++r)
                if (ro.predict(F.row(r).transpose()) == y[static_cast<std::size_t>(r)]) ++hit;
            return static_cast<double>(hit) / static_cast<double>(F.rows());
        };
        rep.readout_acc_id = acc(Fid, yid);
        rep.readout_acc_ood = rep.has_ood ? acc(Food, yood) : 0.0;
    }
    rep.validate();
    return rep;
}

} // namespace slotlab
