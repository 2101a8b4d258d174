#pragma once

// Experiment orchestration: a single resolved config drives dataset
// generation, the training arms, search and replay, and report assembly.
// Wall-clock numbers live outside the deterministic report so reruns with
// identical configs produce identical bytes.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "slotlab/errors.hpp"
#include "slotlab/evalkit.hpp"
#include "slotlab/inversion.hpp"
#include "slotlab/learnkit.hpp"
#include "slotlab/synthlab.hpp"
#include "slotlab/theory_suites.hpp"

namespace slotlab {

inline constexpr const char* kSlotlabVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Config structs
// ---------------------------------------------------------------------------

struct GeneratorSpec {
    std::string kind = "interaction"; // or "pixel-partition"
    int K = 2;
    int m = 1;
    int n = 2;
    int d_x = 16;
    std::uint64_t seed = 1;
    std::vector<int> group_sizes; // pixel-partition only; empty: split d_x evenly
};

struct GridSpec {
    int bins_per_slot = 4;
    double lo = -1.0;
    double hi = 1.0;
    std::string mask = "l-shaped"; // or "full", or "custom" with explicit tuples
    std::vector<std::vector<int>> id_tuples; // custom mask only
};

struct DataSpec {
    int n_id = 2048;
    int n_ood = 512;
    std::uint64_t seed = 2;
};

struct ArchSpec {
    std::vector<int> enc_hidden{64, 64};
    std::vector<int> dec_hidden{64, 64};
    std::string activation = "tanh";
    int decoder_n = 2; // interaction degree of the structured decoder
    std::uint64_t init_seed = 3;
    // Multiplier on freshly initialized weights. Values well below 1 put
    // training in the small-initialization regime where principal directions
    // of the data are picked up one at a time, which tends to align latent
    // coordinates with the dominant factors of variation.
    double init_scale = 1.0;
    // Separate multiplier for the unconstrained baseline pair; NaN means
    // "same as init_scale". The baseline has no structural pressure toward
    // slot-aligned latents, so its best regime differs from the structured
    // decoder's.
    double baseline_init_scale = std::numeric_limits<double>::quiet_NaN();

    double baseline_scale() const {
        return std::isnan(baseline_init_scale) ? init_scale : baseline_init_scale;
    }
};

struct ReplaySpec {
    int steps = 2000;
    int batch = 64;
    double lr = 1e-3;
    std::uint64_t seed = 5;
    std::uint64_t sampler_seed = 6;
    double divergence_threshold = 1e6;
};

struct EvalSpec {
    double ridge_rel = 1e-10;
    int readout_steps = 400;
    double readout_lr = 0.1;
    bool theory_certs = false;
    std::uint64_t theory_seed = 7;
};

inline const std::vector<std::string>& experiment_arm_names() {
    static const std::vector<std::string> names{"encoder-unconstrained", "constrained",
                                               "constrained-search", "constrained-replay",
                                               "constrained-both"};
    return names;
}

struct ExperimentConfig {
    GeneratorSpec gen;
    GridSpec grid;
    DataSpec data;
    ArchSpec arch;
    TrainConfig train;   // autoencoder stage; lambda_h applies to constrained arms only
    SearchConfig search; // readout attachment happens inside the pipeline
    ReplaySpec replay;
    EvalSpec eval;
    std::vector<std::string> arms = experiment_arm_names();
    std::vector<std::uint64_t> seeds{0};
    std::string outdir = "out";

    void validate() const {
        if (gen.kind != "interaction" && gen.kind != "pixel-partition")
            throw ConfigError("ExperimentConfig: unknown generator kind '" + gen.kind + "'");
        if (gen.K < 1 || gen.m < 1 || gen.n < 0 || gen.d_x < 1)
            throw ConfigError("ExperimentConfig: generator dimensions must be positive");
        if (gen.kind == "pixel-partition" && !gen.group_sizes.empty() &&
            static_cast<int>(gen.group_sizes.size()) != gen.K)
            throw ConfigError("ExperimentConfig: need one pixel group per slot");
        if (grid.bins_per_slot < 1 || !(grid.hi > grid.lo))
            throw ConfigError("ExperimentConfig: malformed grid");
        if (grid.mask != "l-shaped" && grid.mask != "full" && grid.mask != "custom")
            throw ConfigError("ExperimentConfig: unknown mask '" + grid.mask + "'");
        if (grid.mask == "custom" && grid.id_tuples.empty())
            throw ConfigError("ExperimentConfig: custom mask needs explicit id_tuples");
        if (grid.mask != "custom" && !grid.id_tuples.empty())
            throw ConfigError("ExperimentConfig: id_tuples only apply to the custom mask");
        if (data.n_id < 1 || data.n_ood < 0)
            throw ConfigError("ExperimentConfig: sample counts out of range");
        if (arch.activation != "tanh" && arch.activation != "softplus" &&
            arch.activation != "identity")
            throw ConfigError("ExperimentConfig: unknown activation '" + arch.activation + "'");
        if (arch.decoder_n < 0) throw ConfigError("ExperimentConfig: decoder degree negative");
        if (!(arch.init_scale > 0.0))
            throw ConfigError("ExperimentConfig: init_scale must be positive");
        if (!std::isnan(arch.baseline_init_scale) && !(arch.baseline_init_scale > 0.0))
            throw ConfigError("ExperimentConfig: baseline_init_scale must be positive");
        train.validate();
        search.validate();
        if (replay.steps < 0 || replay.batch < 1 || !(replay.lr > 0.0))
            throw ConfigError("ExperimentConfig: malformed replay stage");
        if (eval.readout_steps < 1 || !(eval.readout_lr > 0.0) || !(eval.ridge_rel >= 0.0))
            throw ConfigError("ExperimentConfig: malformed eval stage");
        if (arms.empty()) throw ConfigError("ExperimentConfig: no arms requested");
        for (const auto& a : arms) {
            const auto& known = experiment_arm_names();
            if (std::find(known.begin(), known.end(), a) == known.end())
                throw ConfigError("ExperimentConfig: unknown arm '" + a + "'");
        }
        if (seeds.empty()) throw ConfigError("ExperimentConfig: no seeds requested");
        if (outdir.empty()) throw ConfigError("ExperimentConfig: empty output directory");
    }
};

// ---------------------------------------------------------------------------
// JSON config parsing (unknown keys rejected with a full list)
// ---------------------------------------------------------------------------

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::string& where,
                         std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    std::string unknown;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) unknown += (unknown.empty() ? "" : ", ") + it.key();
    }
    if (!unknown.empty())
        throw ConfigError("config: unknown keys in '" + where + "': " + unknown);
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

} // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    detail::require_keys(j, "<root>",
                         {"generator", "grid", "data", "arch", "train", "search", "replay",
                          "eval", "arms", "seeds", "outdir"});
    ExperimentConfig c;
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        detail::require_keys(g, "generator",
                             {"kind", "K", "m", "n", "d_x", "seed", "group_sizes"});
        detail::get_if(g, "kind", c.gen.kind);
        detail::get_if(g, "K", c.gen.K);
        detail::get_if(g, "m", c.gen.m);
        detail::get_if(g, "n", c.gen.n);
        detail::get_if(g, "d_x", c.gen.d_x);
        detail::get_if(g, "seed", c.gen.seed);
        detail::get_if(g, "group_sizes", c.gen.group_sizes);
    }
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        detail::require_keys(g, "grid", {"bins_per_slot", "lo", "hi", "mask", "id_tuples"});
        detail::get_if(g, "bins_per_slot", c.grid.bins_per_slot);
        detail::get_if(g, "lo", c.grid.lo);
        detail::get_if(g, "hi", c.grid.hi);
        detail::get_if(g, "mask", c.grid.mask);
        detail::get_if(g, "id_tuples", c.grid.id_tuples);
    }
    if (j.contains("data")) {
        const auto& g = j.at("data");
        detail::require_keys(g, "data", {"n_id", "n_ood", "seed"});
        detail::get_if(g, "n_id", c.data.n_id);
        detail::get_if(g, "n_ood", c.data.n_ood);
        detail::get_if(g, "seed", c.data.seed);
    }
    if (j.contains("arch")) {
        const auto& g = j.at("arch");
        detail::require_keys(
            g, "arch",
            {"enc_hidden", "dec_hidden", "activation", "decoder_n", "init_seed", "init_scale",
             "baseline_init_scale"});
        detail::get_if(g, "enc_hidden", c.arch.enc_hidden);
        detail::get_if(g, "dec_hidden", c.arch.dec_hidden);
        detail::get_if(g, "activation", c.arch.activation);
        detail::get_if(g, "decoder_n", c.arch.decoder_n);
        detail::get_if(g, "init_seed", c.arch.init_seed);
        detail::get_if(g, "init_scale", c.arch.init_scale);
        detail::get_if(g, "baseline_init_scale", c.arch.baseline_init_scale);
    }
    if (j.contains("train")) {
        const auto& g = j.at("train");
        detail::require_keys(
            g, "train", {"steps", "batch", "lr", "lambda_h", "seed", "divergence_threshold"});
        detail::get_if(g, "steps", c.train.steps);
        detail::get_if(g, "batch", c.train.batch);
        detail::get_if(g, "lr", c.train.adam.lr);
        detail::get_if(g, "lambda_h", c.train.lambda_h);
        detail::get_if(g, "seed", c.train.seed);
        detail::get_if(g, "divergence_threshold", c.train.divergence_threshold);
    }
    if (j.contains("search")) {
        const auto& g = j.at("search");
        detail::require_keys(g, "search",
                             {"steps", "lr", "momentum", "residual_tol", "entropy_weight"});
        detail::get_if(g, "steps", c.search.steps);
        detail::get_if(g, "lr", c.search.lr);
        detail::get_if(g, "momentum", c.search.momentum);
        detail::get_if(g, "residual_tol", c.search.residual_tol);
        detail::get_if(g, "entropy_weight", c.search.entropy_weight);
    }
    if (j.contains("replay")) {
        const auto& g = j.at("replay");
        detail::require_keys(
            g, "replay", {"steps", "batch", "lr", "seed", "sampler_seed", "divergence_threshold"});
        detail::get_if(g, "steps", c.replay.steps);
        detail::get_if(g, "batch", c.replay.batch);
        detail::get_if(g, "lr", c.replay.lr);
        detail::get_if(g, "seed", c.replay.seed);
        detail::get_if(g, "sampler_seed", c.replay.sampler_seed);
        detail::get_if(g, "divergence_threshold", c.replay.divergence_threshold);
    }
    if (j.contains("eval")) {
        const auto& g = j.at("eval");
        detail::require_keys(g, "eval",
                             {"ridge_rel", "readout_steps", "readout_lr", "theory_certs",
                              "theory_seed"});
        detail::get_if(g, "ridge_rel", c.eval.ridge_rel);
        detail::get_if(g, "readout_steps", c.eval.readout_steps);
        detail::get_if(g, "readout_lr", c.eval.readout_lr);
        detail::get_if(g, "theory_certs", c.eval.theory_certs);
        detail::get_if(g, "theory_seed", c.eval.theory_seed);
    }
    detail::get_if(j, "arms", c.arms);
    detail::get_if(j, "seeds", c.seeds);
    detail::get_if(j, "outdir", c.outdir);
    c.validate();
    return c;
}

// Fully resolved echo: reports embed this so every number is traceable.
inline nlohmann::ordered_json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    j["generator"] = {{"kind", c.gen.kind},   {"K", c.gen.K},
                      {"m", c.gen.m},         {"n", c.gen.n},
                      {"d_x", c.gen.d_x},     {"seed", c.gen.seed},
                      {"group_sizes", c.gen.group_sizes}};
    j["grid"] = {{"bins_per_slot", c.grid.bins_per_slot},
                 {"lo", c.grid.lo},
                 {"hi", c.grid.hi},
                 {"mask", c.grid.mask},
                 {"id_tuples", c.grid.id_tuples}};
    j["data"] = {{"n_id", c.data.n_id}, {"n_ood", c.data.n_ood}, {"seed", c.data.seed}};
    j["arch"] = {{"enc_hidden", c.arch.enc_hidden},
                 {"dec_hidden", c.arch.dec_hidden},
                 {"activation", c.arch.activation},
                 {"decoder_n", c.arch.decoder_n},
                 {"init_seed", c.arch.init_seed},
                 {"init_scale", c.arch.init_scale}};
    if (!std::isnan(c.arch.baseline_init_scale))
        j["arch"]["baseline_init_scale"] = c.arch.baseline_init_scale;
    j["train"] = {{"steps", c.train.steps},
                  {"batch", c.train.batch},
                  {"lr", c.train.adam.lr},
                  {"lambda_h", c.train.lambda_h},
                  {"seed", c.train.seed},
                  {"divergence_threshold", c.train.divergence_threshold}};
    j["search"] = {{"steps", c.search.steps},
                   {"lr", c.search.lr},
                   {"momentum", c.search.momentum},
                   {"residual_tol", c.search.residual_tol},
                   {"entropy_weight", c.search.entropy_weight}};
    j["replay"] = {{"steps", c.replay.steps},
                   {"batch", c.replay.batch},
                   {"lr", c.replay.lr},
                   {"seed", c.replay.seed},
                   {"sampler_seed", c.replay.sampler_seed},
                   {"divergence_threshold", c.replay.divergence_threshold}};
    j["eval"] = {{"ridge_rel", c.eval.ridge_rel},
                 {"readout_steps", c.eval.readout_steps},
                 {"readout_lr", c.eval.readout_lr},
                 {"theory_certs", c.eval.theory_certs},
                 {"theory_seed", c.eval.theory_seed}};
    j["arms"] = c.arms;
    j["seeds"] = c.seeds;
    j["outdir"] = c.outdir;
    return j;
}

inline std::uint64_t experiment_config_hash(const ExperimentConfig& c) {
    return fnv1a(experiment_config_to_json(c).dump());
}

// ---------------------------------------------------------------------------
// World construction
// ---------------------------------------------------------------------------

namespace detail {

// Independent per-stage streams: every stage seed folds the run seed through
// an avalanche so stages never share raw counters.
inline std::uint64_t stage_seed(std::uint64_t base, std::uint64_t run_seed, std::uint64_t tag) {
    return mix64(base ^ mix64(run_seed + 0x9E3779B97F4A7C15ull) ^ (tag * 0xBF58476D1CE4E5B9ull));
}

} // namespace detail

// Additive per-slot cubics (strictly monotone in one pinned output coordinate
// each, hence injective slot-wise) plus dense coefficients on every monomial
// that straddles slots. Cross terms are the whole point: they are what an
// unstructured encoder fails to untangle outside the training region.
inline InteractionGenerator make_interaction_generator(const GeneratorSpec& spec) {
    SlotStructure s(spec.K, spec.m);
    Rng rng(spec.seed);
    std::vector<SlotComponent> comps;
    for (int k = 0; k < spec.K; ++k) {
        PolyMap p;
        p.in_dim = spec.m;
        p.out_dim = spec.d_x;
        for (int j = 0; j < spec.m; ++j) {
            MultiIndex lin(static_cast<std::size_t>(spec.m), 0), cub = lin;
            lin[static_cast<std::size_t>(j)] = 1;
            cub[static_cast<std::size_t>(j)] = 3;
            p.alphas.push_back(lin);
            p.alphas.push_back(cub);
        }
        p.coef = Eigen::MatrixXd::Zero(spec.d_x, static_cast<Eigen::Index>(p.alphas.size()));
        for (int j = 0; j < spec.m; ++j) {
            int anchor = (k * spec.m + j) % spec.d_x;
            for (int r = 0; r < spec.d_x; ++r) {
                double l = 0.5 * rng.normal();
                double cc = 0.15 * rng.normal();
                if (r == anchor) {
                    l = 1.5 + std::abs(rng.normal());
                    cc = 0.2 * std::abs(rng.normal());
                }
                p.coef(r, 2 * j) += l;
                p.coef(r, 2 * j + 1) += cc;
            }
        }
        comps.push_back(std::move(p));
    }
    InteractionGenerator g = InteractionGenerator::make(s, spec.d_x, spec.n, std::move(comps));
    for (const auto& a : g.alphas) {
        if (order(a) < 1) continue;
        int touched = 0;
        for (int k = 0; k < spec.K; ++k) {
            bool any = false;
            for (int j = 0; j < spec.m; ++j) any = any || a[static_cast<std::size_t>(k * spec.m + j)] > 0;
            touched += any ? 1 : 0;
        }
        if (touched >= 2) g.set_coef(a, 0.5 * rng.normal_vec(spec.d_x));
    }
    return g;
}

inline InteractionGenerator build_generator(const GeneratorSpec& spec) {
    if (spec.kind == "pixel-partition") {
        std::vector<int> groups = spec.group_sizes;
        if (groups.empty()) {
            groups.assign(static_cast<std::size_t>(spec.K), spec.d_x / spec.K);
            for (int r = 0; r < spec.d_x % spec.K; ++r) ++groups[static_cast<std::size_t>(r)];
        }
        return make_pixel_partition_generator(spec.K, groups, spec.seed, spec.m);
    }
    return make_interaction_generator(spec);
}

inline SlotBinGrid build_grid(const GeneratorSpec& gen, const GridSpec& grid) {
    SlotStructure s(gen.K, gen.m);
    std::vector<int> per(static_cast<std::size_t>(gen.K), grid.bins_per_slot);
    auto bins = uniform_bins(s, per, grid.lo, grid.hi);
    std::set<BinTuple> mask;
    if (grid.mask == "custom") {
        for (const auto& t : grid.id_tuples) mask.insert(BinTuple(t.begin(), t.end()));
    } else {
        mask = grid.mask == "full" ? full_mask(per) : l_shaped_mask(per);
    }
    return SlotBinGrid(s, std::move(bins), std::move(mask));
}

// ---------------------------------------------------------------------------
// Pipeline pieces
// ---------------------------------------------------------------------------

struct PreparedExperiment {
    InteractionGenerator gen;
    SlotBinGrid grid;
    DatasetSplit data;
    Eigen::MatrixXd X;     // observations, one row per record
    Eigen::MatrixXd Ztrue; // generating latents
    std::vector<BinTuple> labels;
    std::vector<bool> ood;
    std::vector<Eigen::Index> id_rows, ood_rows;
};

inline PreparedExperiment prepare_experiment(const ExperimentConfig& cfg,
                                             std::uint64_t run_seed) {
    PreparedExperiment prep;
    prep.gen = build_generator(cfg.gen);
    prep.grid = build_grid(cfg.gen, cfg.grid);
    prep.data = sample_dataset(prep.gen, prep.grid, cfg.data.n_id, cfg.data.n_ood,
                               detail::stage_seed(cfg.data.seed, run_seed, 1));
    const Eigen::Index N = static_cast<Eigen::Index>(prep.data.records.size());
    prep.X.resize(N, cfg.gen.d_x);
    prep.Ztrue.resize(N, prep.grid.slots.d_z());
    for (Eigen::Index i = 0; i < N; ++i) {
        const DatasetRecord& r = prep.data.records[static_cast<std::size_t>(i)];
        prep.X.row(i) = r.x.transpose();
        prep.Ztrue.row(i) = r.z.transpose();
        prep.labels.push_back(r.bins);
        prep.ood.push_back(r.ood);
        (r.ood ? prep.ood_rows : prep.id_rows).push_back(i);
    }
    return prep;
}

inline Activation activation_from_spec(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "softplus") return Activation::Softplus;
    if (name == "identity") return Activation::Identity;
    throw ConfigError("unknown activation '" + name + "'");
}

struct TrainedPair {
    Network enc{};
    std::unique_ptr<Decoder> dec;
    std::vector<LossLogEntry> log;
};

// Trains one encoder/decoder pair; `constrained` picks the slot-structured
// decoder, otherwise a dense one, and only constrained training keeps the
// configured cross-slot penalty weight.
inline TrainedPair train_pair(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                              bool constrained, std::uint64_t run_seed) {
    Activation act = activation_from_spec(cfg.arch.activation);
    const SlotStructure& s = prep.grid.slots;
    Rng init(detail::stage_seed(cfg.arch.init_seed, run_seed, constrained ? 3 : 2));
    TrainedPair out;
    std::vector<int> enc_widths{cfg.gen.d_x};
    for (int h : cfg.arch.enc_hidden) enc_widths.push_back(h);
    enc_widths.push_back(s.d_z());
    out.enc = Network::make(enc_widths, act, init);
    if (constrained) {
        out.dec = std::make_unique<SlotwiseDecoder>(SlotwiseDecoder::make(
            s, cfg.gen.d_x, cfg.arch.decoder_n, cfg.arch.dec_hidden, act, init));
    } else {
        out.dec = std::make_unique<DenseDecoder>(
            DenseDecoder::make(s, cfg.gen.d_x, cfg.arch.dec_hidden, act, init));
    }
    const double scale = constrained ? cfg.arch.init_scale : cfg.arch.baseline_scale();
    if (scale != 1.0) {
        out.enc.set_params(Eigen::VectorXd(out.enc.params() * scale));
        out.dec->set_params(Eigen::VectorXd(out.dec->params() * scale));
    }
    TrainConfig tc = cfg.train;
    tc.seed = detail::stage_seed(cfg.train.seed, run_seed, constrained ? 5 : 4);
    if (!constrained) tc.lambda_h = 0.0; // the baseline is genuinely unconstrained
    out.log = train_autoencoder(out.enc, *out.dec, prep.data, tc);
    return out;
}

// Scores a latent table against ground truth and fills in reconstruction
// errors through the supplied decoder.
inline EvalReport evaluate_latents(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                                   const Eigen::MatrixXd& Zhat, const Decoder& dec,
                                   std::uint64_t run_seed) {
    ScoreConfig sc;
    sc.ridge_rel = cfg.eval.ridge_rel;
    sc.readout.steps = cfg.eval.readout_steps;
    sc.readout.lr = cfg.eval.readout_lr;
    sc.config_hash = experiment_config_hash(cfg);
    sc.seeds = {run_seed};
    EvalReport rep =
        slot_match_and_score(prep.grid.slots, Zhat, prep.Ztrue, prep.labels, prep.ood, sc);
    Eigen::MatrixXd Xhat = dec.apply_batch(Zhat);
    auto mse_over = [&](const std::vector<Eigen::Index>& rows) {
        if (rows.empty()) return 0.0;
        double acc = 0.0;
        for (Eigen::Index i : rows) acc += (Xhat.row(i) - prep.X.row(i)).squaredNorm();
        return acc / static_cast<double>(rows.size());
    };
    rep.recon_mse_id = mse_over(prep.id_rows);
    rep.recon_mse_ood = mse_over(prep.ood_rows);
    return rep;
}

// Optional search aid: a readout fit on raw in-domain inferred slot values.
// Model slots are matched to true slots first so each slot's values carry the
// bin labels of the true slot it actually tracks.
inline LinearReadout fit_search_readout(const ExperimentConfig& cfg,
                                        const PreparedExperiment& prep,
                                        const Eigen::MatrixXd& Zhat_id) {
    const SlotStructure& s = prep.grid.slots;
    Eigen::MatrixXd Ztrue_id(Zhat_id.rows(), prep.Ztrue.cols());
    std::vector<BinTuple> labels_id;
    for (std::size_t r = 0; r < prep.id_rows.size(); ++r) {
        Ztrue_id.row(static_cast<Eigen::Index>(r)) = prep.Ztrue.row(prep.id_rows[r]);
        labels_id.push_back(prep.labels[static_cast<std::size_t>(prep.id_rows[r])]);
    }
    ScoreConfig sc;
    sc.ridge_rel = cfg.eval.ridge_rel;
    sc.readout.steps = cfg.eval.readout_steps;
    sc.readout.lr = cfg.eval.readout_lr;
    EvalReport match = slot_match_and_score(s, Zhat_id, Ztrue_id, labels_id,
                                            std::vector<bool>(labels_id.size(), false), sc);
    Eigen::MatrixXd F(Zhat_id.rows() * s.K, s.m);
    std::vector<int> y;
    for (int k = 0; k < s.K; ++k)
        for (Eigen::Index r = 0; r < Zhat_id.rows(); ++r) {
            F.row(k * Zhat_id.rows() + r) = Zhat_id.row(r).segment(k * s.m, s.m);
            y.push_back(labels_id[static_cast<std::size_t>(r)]
                                 [static_cast<std::size_t>(match.perm[static_cast<std::size_t>(k)])]);
        }
    ReadoutConfig rc;
    rc.steps = cfg.eval.readout_steps;
    rc.lr = cfg.eval.readout_lr;
    return train_readout(F, y, cfg.grid.bins_per_slot, rc);
}

struct SearchStageResult {
    Eigen::MatrixXd Z; // latents with OOD rows replaced by search outputs
    std::vector<SearchResult> runs; // one per OOD row, in row order
};

// Gradient search on every OOD observation, initialized from the encoder
// latents already in Z.
inline SearchStageResult run_search_stage(const ExperimentConfig& cfg,
                                          const PreparedExperiment& prep, const Decoder& dec,
                                          const Eigen::MatrixXd& Z,
                                          const LinearReadout* readout) {
    SearchStageResult out;
    out.Z = Z;
    SearchConfig scfg = cfg.search;
    scfg.readout = scfg.entropy_weight > 0.0 ? readout : nullptr;
    for (Eigen::Index i : prep.ood_rows) {
        SearchResult r = search_invert(dec, prep.X.row(i).transpose(), Z.row(i).transpose(), scfg);
        out.Z.row(i) = r.z.transpose();
        out.runs.push_back(std::move(r));
    }
    return out;
}

// Replay stage: pools from the in-domain inferred latents, encoder retrained
// against the frozen decoder.
inline Network run_replay_stage(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                                const Decoder& dec, const Network& enc,
                                const Eigen::MatrixXd& Zhat_id, std::uint64_t run_seed,
                                std::vector<LossLogEntry>& log) {
    RecombinationSampler sampler = RecombinationSampler::from_latents(
        prep.grid.slots, Zhat_id, detail::stage_seed(cfg.replay.sampler_seed, run_seed, 6));
    Network out = enc;
    TrainConfig rc;
    rc.adam.lr = cfg.replay.lr;
    rc.batch = cfg.replay.batch;
    rc.steps = cfg.replay.steps;
    rc.seed = detail::stage_seed(cfg.replay.seed, run_seed, 7);
    rc.divergence_threshold = cfg.replay.divergence_threshold;
    log = replay_train(dec, out, sampler, rc);
    return out;
}

// ---------------------------------------------------------------------------
// Per-seed arm execution
// ---------------------------------------------------------------------------

struct ArmOutput {
    std::string arm;
    std::uint64_t run_seed = 0;
    bool failed = false;
    std::string error;
    EvalReport eval;
    std::vector<LossLogEntry> train_log;
    std::vector<LossLogEntry> replay_log;
    std::vector<SearchResult> searches;
    double wall_seconds = 0.0;
};

inline std::vector<ArmOutput> run_seed_arms(const ExperimentConfig& cfg,
                                            std::uint64_t run_seed) {
    using clock = std::chrono::steady_clock;
    auto elapsed = [](clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };

    std::vector<ArmOutput> outputs;
    auto fail_all = [&](const std::string& why) {
        for (const auto& arm : cfg.arms) {
            ArmOutput o;
            o.arm = arm;
            o.run_seed = run_seed;
            o.failed = true;
            o.error = why;
            outputs.push_back(std::move(o));
        }
        return outputs;
    };

    std::unique_ptr<PreparedExperiment> prep;
    try {
        prep = std::make_unique<PreparedExperiment>(prepare_experiment(cfg, run_seed));
    } catch (const Error& e) {
        return fail_all(std::string("data preparation failed: ") + e.what());
    }

    auto wants = [&](const std::string& name) {
        return std::find(cfg.arms.begin(), cfg.arms.end(), name) != cfg.arms.end();
    };
    bool need_constrained = wants("constrained") || wants("constrained-search") ||
                            wants("constrained-replay") || wants("constrained-both");

    // Shared trainings, each attempted once per seed.
    std::unique_ptr<TrainedPair> base, con;
    std::string base_err, con_err;
    if (wants("encoder-unconstrained")) {
        try {
            base = std::make_unique<TrainedPair>(train_pair(cfg, *prep, false, run_seed));
        } catch (const Error& e) {
            base_err = e.what();
        }
    }
    if (need_constrained) {
        try {
            con = std::make_unique<TrainedPair>(train_pair(cfg, *prep, true, run_seed));
        } catch (const Error& e) {
            con_err = e.what();
        }
    }

    Eigen::MatrixXd Zcon, Zcon_id;
    std::unique_ptr<LinearReadout> search_aid;
    if (con) {
        Zcon = con->enc.forward(prep->X);
        Zcon_id.resize(static_cast<Eigen::Index>(prep->id_rows.size()), Zcon.cols());
        for (std::size_t r = 0; r < prep->id_rows.size(); ++r)
            Zcon_id.row(static_cast<Eigen::Index>(r)) = Zcon.row(prep->id_rows[r]);
        if (cfg.search.entropy_weight > 0.0)
            search_aid = std::make_unique<LinearReadout>(
                fit_search_readout(cfg, *prep, Zcon_id));
    }

    // Replay retraining is shared by the two replay arms.
    std::unique_ptr<Network> enc_replay;
    std::vector<LossLogEntry> replay_log;
    std::string replay_err;
    if (con && (wants("constrained-replay") || wants("constrained-both"))) {
        try {
            enc_replay = std::make_unique<Network>(
                run_replay_stage(cfg, *prep, *con->dec, con->enc, Zcon_id, run_seed, replay_log));
        } catch (const Error& e) {
            replay_err = e.what();
        }
    }

    for (const auto& arm : cfg.arms) {
        ArmOutput o;
        o.arm = arm;
        o.run_seed = run_seed;
        auto t0 = clock::now();
        try {
            if (arm == "encoder-unconstrained") {
                if (!base) throw NumericError("training failed: " + base_err);
                Eigen::MatrixXd Z = base->enc.forward(prep->X);
                o.eval = evaluate_latents(cfg, *prep, Z, *base->dec, run_seed);
                o.train_log = base->log;
            } else {
                if (!con) throw NumericError("training failed: " + con_err);
                if (arm == "constrained") {
                    o.eval = evaluate_latents(cfg, *prep, Zcon, *con->dec, run_seed);
                    o.train_log = con->log;
                } else if (arm == "constrained-search") {
                    SearchStageResult sr =
                        run_search_stage(cfg, *prep, *con->dec, Zcon, search_aid.get());
                    o.eval = evaluate_latents(cfg, *prep, sr.Z, *con->dec, run_seed);
                    o.searches = std::move(sr.runs);
                } else if (arm == "constrained-replay") {
                    if (!enc_replay) throw NumericError("replay failed: " + replay_err);
                    Eigen::MatrixXd Z = enc_replay->forward(prep->X);
                    o.eval = evaluate_latents(cfg, *prep, Z, *con->dec, run_seed);
                    o.replay_log = replay_log;
                } else if (arm == "constrained-both") {
                    if (!enc_replay) throw NumericError("replay failed: " + replay_err);
                    Eigen::MatrixXd Z = enc_replay->forward(prep->X);
                    SearchStageResult sr =
                        run_search_stage(cfg, *prep, *con->dec, Z, search_aid.get());
                    o.eval = evaluate_latents(cfg, *prep, sr.Z, *con->dec, run_seed);
                    o.searches = std::move(sr.runs);
                    o.replay_log = replay_log;
                }
            }
        } catch (const Error& e) {
            o.failed = true;
            o.error = e.what();
        }
        o.wall_seconds = elapsed(t0);
        outputs.push_back(std::move(o));
    }
    return outputs;
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

struct ExperimentReport {
    std::string version = kSlotlabVersion;
    nlohmann::ordered_json config_echo;
    std::uint64_t config_hash = 0;
    std::vector<ArmOutput> results; // seed-major, arms in config order
    nlohmann::ordered_json theory;  // {"ran": false} unless certificates were requested
    bool partial = false;
    double total_wall_seconds = 0.0;

    const ArmOutput* find(const std::string& arm, std::uint64_t seed) const {
        for (const auto& r : results)
            if (r.arm == arm && r.run_seed == seed && !r.failed) return &r;
        return nullptr;
    }

    // Mean of a per-arm metric over the seeds where the arm succeeded.
    double mean_metric(const std::string& arm,
                       double (*metric)(const EvalReport&)) const {
        double acc = 0.0;
        int n = 0;
        for (const auto& r : results)
            if (r.arm == arm && !r.failed) {
                acc += metric(r.eval);
                ++n;
            }
        return n > 0 ? acc / n : 0.0;
    }
};

inline double metric_readout_acc_ood(const EvalReport& r) { return r.readout_acc_ood; }
inline double metric_readout_acc_id(const EvalReport& r) { return r.readout_acc_id; }
inline double metric_recon_mse_ood(const EvalReport& r) { return r.recon_mse_ood; }
inline double metric_r2_id_mean(const EvalReport& r) {
    if (r.r2_id.empty()) return 0.0;
    double acc = 0.0;
    for (double v : r.r2_id) acc += v;
    return acc / static_cast<double>(r.r2_id.size());
}

// Deterministic by default: timing only appears when explicitly requested, so
// identical configs and seeds reproduce identical bytes.
inline nlohmann::ordered_json experiment_report_to_json(const ExperimentReport& rep,
                                                        bool include_timing = false) {
    nlohmann::ordered_json j;
    j["version"] = rep.version;
    j["config_hash"] = rep.config_hash;
    j["partial"] = rep.partial;
    j["config"] = rep.config_echo;
    j["results"] = nlohmann::ordered_json::array();
    for (const auto& r : rep.results) {
        nlohmann::ordered_json rj;
        rj["arm"] = r.arm;
        rj["seed"] = r.run_seed;
        rj["failed"] = r.failed;
        rj["error"] = r.error;
        rj["eval"] = r.failed ? nlohmann::json(nullptr) : eval_report_to_json(r.eval);
        if (include_timing) rj["wall_seconds"] = r.wall_seconds;
        j["results"].push_back(std::move(rj));
    }
    nlohmann::ordered_json summary;
    for (const auto& arm : experiment_arm_names()) {
        bool present = false;
        for (const auto& r : rep.results) present = present || r.arm == arm;
        if (!present) continue;
        summary[arm] = {{"mean_readout_acc_id", rep.mean_metric(arm, metric_readout_acc_id)},
                        {"mean_readout_acc_ood", rep.mean_metric(arm, metric_readout_acc_ood)},
                        {"mean_r2_id", rep.mean_metric(arm, metric_r2_id_mean)},
                        {"mean_recon_mse_ood", rep.mean_metric(arm, metric_recon_mse_ood)}};
    }
    j["summary"] = std::move(summary);
    j["theory"] = rep.theory;
    if (include_timing) j["total_wall_seconds"] = rep.total_wall_seconds;
    return j;
}

// Runs every requested arm for every seed. Seeds are dispatched to a small
// worker pool; each seed's work is internally deterministic and lands in a
// preassigned slot, so thread count never changes the report.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, int threads = 1) {
    cfg.validate();
    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    ExperimentReport rep;
    rep.config_echo = experiment_config_to_json(cfg);
    rep.config_hash = experiment_config_hash(cfg);

    std::vector<std::vector<ArmOutput>> per_seed(cfg.seeds.size());
    int T = std::max(1, std::min<int>(threads, static_cast<int>(cfg.seeds.size())));
    if (T == 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
            per_seed[i] = run_seed_arms(cfg, cfg.seeds[i]);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= cfg.seeds.size()) break;
                per_seed[i] = run_seed_arms(cfg, cfg.seeds[i]);
            }
        };
        std::vector<std::thread> pool;
        for (int t = 0; t < T; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& seed_results : per_seed)
        for (auto& r : seed_results) {
            rep.partial = rep.partial || r.failed;
            rep.results.push_back(std::move(r));
        }

    if (cfg.eval.theory_certs) {
        std::vector<SuiteReport> suites = run_theory_suites("all", cfg.eval.theory_seed);
        nlohmann::ordered_json tj;
        tj["ran"] = true;
        tj["suites"] = nlohmann::ordered_json::array();
        bool ok = true;
        for (const auto& s : suites) {
            tj["suites"].push_back(
                {{"suite", s.suite}, {"total", s.total()}, {"passed", s.passed()}, {"ok", s.ok()}});
            ok = ok && s.ok();
        }
        tj["ok"] = ok;
        rep.theory = std::move(tj);
    } else {
        rep.theory = nlohmann::ordered_json{{"ran", false}};
    }
    rep.total_wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    return rep;
}

// Plot-ready flat table: one row per arm per seed.
inline void write_ood_accuracy_csv(const ExperimentReport& rep, std::ostream& os) {
    os << "arm,seed,failed,readout_acc_id,readout_acc_ood,r2_id_mean,recon_mse_ood\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    for (const auto& r : rep.results) {
        os << r.arm << ',' << r.run_seed << ',' << (r.failed ? 1 : 0) << ',';
        put(r.failed ? 0.0 : r.eval.readout_acc_id);
        os << ',';
        put(r.failed ? 0.0 : r.eval.readout_acc_ood);
        os << ',';
        put(r.failed ? 0.0 : metric_r2_id_mean(r.eval));
        os << ',';
        put(r.failed ? 0.0 : r.eval.recon_mse_ood);
        os << '\n';
    }
}

} // namespace slotlab
