// Experiment orchestration: config parsing with strict key checking, world
// construction, per-seed arm execution, and deterministic report assembly.

#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>
#include <string>

#include "slotlab/experiment.hpp"

using namespace slotlab;

namespace {

// Small enough to train in seconds, large enough that every pipeline stage
// has real work to do.
ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.gen.kind = "interaction";
    c.gen.K = 2;
    c.gen.m = 1;
    c.gen.n = 2;
    c.gen.d_x = 6;
    c.gen.seed = 11;
    c.grid.bins_per_slot = 3;
    c.grid.mask = "l-shaped";
    c.data.n_id = 192;
    c.data.n_ood = 48;
    c.data.seed = 12;
    c.arch.enc_hidden = {16};
    c.arch.dec_hidden = {8};
    c.arch.decoder_n = 2;
    c.arch.init_seed = 13;
    c.train.steps = 120;
    c.train.batch = 32;
    c.train.adam.lr = 2e-3;
    c.train.lambda_h = 1e-3;
    c.train.seed = 14;
    c.search.steps = 40;
    c.search.lr = 1e-2;
    c.replay.steps = 120;
    c.replay.batch = 32;
    c.replay.lr = 1e-3;
    c.replay.seed = 15;
    c.replay.sampler_seed = 16;
    c.eval.readout_steps = 120;
    c.seeds = {0};
    c.outdir = "unused";
    return c;
}

} // namespace

TEST_CASE("config json round trip preserves every field") {
    ExperimentConfig c = tiny_config();
    c.arms = {"constrained", "encoder-unconstrained"};
    c.seeds = {3, 9};
    nlohmann::ordered_json j = experiment_config_to_json(c);
    ExperimentConfig back = experiment_config_from_json(j);
    REQUIRE(experiment_config_hash(back) == experiment_config_hash(c));
    REQUIRE(back.gen.d_x == 6);
    REQUIRE(back.arms == c.arms);
    REQUIRE(back.seeds == c.seeds);
    REQUIRE(back.train.adam.lr == c.train.adam.lr);
}

TEST_CASE("defaults fill every omitted config section") {
    ExperimentConfig c = experiment_config_from_json(nlohmann::json::object());
    REQUIRE(c.gen.K == 2);
    REQUIRE(c.grid.bins_per_slot == 4);
    REQUIRE(c.arch.init_scale == 1.0);
    REQUIRE(c.arms.size() == 5);
    REQUIRE(c.seeds == std::vector<std::uint64_t>{0});
}

TEST_CASE("init_scale round-trips and is validated") {
    ExperimentConfig c = tiny_config();
    c.arch.init_scale = 0.1;
    ExperimentConfig back = experiment_config_from_json(experiment_config_to_json(c));
    REQUIRE(back.arch.init_scale == 0.1);
    REQUIRE(std::isnan(back.arch.baseline_init_scale));
    REQUIRE(back.arch.baseline_scale() == 0.1);
    c.arch.baseline_init_scale = 0.25;
    back = experiment_config_from_json(experiment_config_to_json(c));
    REQUIRE(back.arch.baseline_init_scale == 0.25);
    REQUIRE(back.arch.baseline_scale() == 0.25);
    c.arch.init_scale = 0.0;
    REQUIRE_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.arch.baseline_init_scale = -1.0;
    REQUIRE_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("unknown config keys are rejected with a list of offenders") {
    nlohmann::json j{{"generator", {{"K", 2}, {"telescope", 1}, {"zebra", 2}}}};
    try {
        experiment_config_from_json(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("telescope") != std::string::npos);
        REQUIRE(msg.find("zebra") != std::string::npos);
        REQUIRE(msg.find("generator") != std::string::npos);
    }
    nlohmann::json top{{"trai", nlohmann::json::object()}};
    REQUIRE_THROWS_AS(experiment_config_from_json(top), ConfigError);
}

TEST_CASE("config validation rejects malformed requests") {
    auto broken = [](auto mutate) {
        ExperimentConfig c = tiny_config();
        mutate(c);
        return c;
    };
    REQUIRE_THROWS_AS(broken([](auto& c) { c.gen.kind = "volcano"; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.arms = {"sideways"}; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.seeds.clear(); }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.grid.mask = "custom"; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.grid.id_tuples = {{0, 0}}; }).validate(),
                      ConfigError);
    REQUIRE_NOTHROW(broken([](auto& c) {
                        c.grid.mask = "custom";
                        c.grid.id_tuples = {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {2, 0}};
                    }).validate());
}

TEST_CASE("stage seeds decouple stages and run seeds") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t base : {1ull, 2ull})
        for (std::uint64_t run : {0ull, 1ull, 7ull})
            for (std::uint64_t tag : {1ull, 2ull, 3ull})
                seen.insert(detail::stage_seed(base, run, tag));
    REQUIRE(seen.size() == 2u * 3u * 3u);
}

TEST_CASE("prepared experiment is deterministic and splits rows faithfully") {
    ExperimentConfig c = tiny_config();
    PreparedExperiment a = prepare_experiment(c, 4);
    PreparedExperiment b = prepare_experiment(c, 4);
    REQUIRE(a.X == b.X);
    REQUIRE(a.Ztrue == b.Ztrue);
    REQUIRE(a.id_rows.size() == 192);
    REQUIRE(a.ood_rows.size() == 48);
    for (Eigen::Index i : a.id_rows) REQUIRE_FALSE(a.ood[static_cast<std::size_t>(i)]);
    for (Eigen::Index i : a.ood_rows) REQUIRE(a.ood[static_cast<std::size_t>(i)]);
    PreparedExperiment other = prepare_experiment(c, 5);
    REQUIRE(other.X != a.X); // run seed reaches the sampler

    // The generating world ignores the run seed: only sampling varies.
    REQUIRE(generator_hash(a.gen) == generator_hash(other.gen));
}

TEST_CASE("interaction world has genuine cross-slot structure") {
    ExperimentConfig c = tiny_config();
    InteractionGenerator g = build_generator(c.gen);
    REQUIRE(g.d_x == 6);
    double cross = 0.0;
    for (std::size_t i = 0; i < g.alphas.size(); ++i) {
        const MultiIndex& a = g.alphas[i];
        bool s0 = a[0] > 0, s1 = a[1] > 0;
        if (s0 && s1) cross += g.coef.col(static_cast<Eigen::Index>(i)).norm();
    }
    REQUIRE(cross > 0.1);
}

TEST_CASE("pixel partition world splits the observation evenly") {
    ExperimentConfig c = tiny_config();
    c.gen.kind = "pixel-partition";
    c.gen.n = 0;
    c.gen.d_x = 7; // odd on purpose: 4 + 3
    InteractionGenerator g = build_generator(c.gen);
    REQUIRE(g.d_x == 7);
    REQUIRE(g.n == 0);
    REQUIRE(g.components.size() == 2);
}

TEST_CASE("every arm runs and carries a valid evaluation") {
    ExperimentConfig c = tiny_config();
    std::vector<ArmOutput> outs = run_seed_arms(c, 0);
    REQUIRE(outs.size() == 5);
    double recon_plain = -1.0, recon_search = -1.0;
    for (const auto& o : outs) {
        INFO(o.arm << ": " << o.error);
        REQUIRE_FALSE(o.failed);
        REQUIRE_NOTHROW(o.eval.validate());
        REQUIRE(o.eval.has_ood);
        if (o.arm == "constrained") {
            recon_plain = o.eval.recon_mse_ood;
            REQUIRE_FALSE(o.train_log.empty());
        }
        if (o.arm == "constrained-search") {
            recon_search = o.eval.recon_mse_ood;
            REQUIRE(o.searches.size() == 48);
        }
        if (o.arm == "constrained-replay") REQUIRE_FALSE(o.replay_log.empty());
    }
    // Best-iterate search can only improve the out-of-domain reconstruction.
    REQUIRE(recon_search <= recon_plain + 1e-12);
}

TEST_CASE("arm failures are contained and flagged") {
    ExperimentConfig c = tiny_config();
    c.replay.divergence_threshold = 1e-300; // replay aborts at step 0
    ExperimentReport rep = run_experiment(c, 1);
    REQUIRE(rep.partial);
    REQUIRE(rep.results.size() == 5);
    int failed = 0;
    for (const auto& r : rep.results) {
        if (r.arm == "constrained-replay" || r.arm == "constrained-both") {
            REQUIRE(r.failed);
            REQUIRE_FALSE(r.error.empty());
            ++failed;
        } else {
            REQUIRE_FALSE(r.failed);
        }
    }
    REQUIRE(failed == 2);
    REQUIRE(rep.find("constrained-replay", 0) == nullptr);
    REQUIRE(rep.find("constrained", 0) != nullptr);

    // The flat table still carries one row per requested run.
    std::ostringstream os;
    write_ood_accuracy_csv(rep, os);
    std::string csv = os.str();
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 6);
    REQUIRE(csv.find("constrained-replay,0,1,") != std::string::npos);
}

TEST_CASE("report json is deterministic and thread-count invariant") {
    ExperimentConfig c = tiny_config();
    c.train.steps = 60;
    c.replay.steps = 60;
    c.seeds = {0, 1};
    ExperimentReport a = run_experiment(c, 1);
    ExperimentReport b = run_experiment(c, 2);
    std::string ja = experiment_report_to_json(a).dump(2);
    std::string jb = experiment_report_to_json(b).dump(2);
    REQUIRE(ja == jb);
    REQUIRE(a.results.size() == 10);

    // Timing lives outside the canonical serialization.
    REQUIRE(ja.find("wall_seconds") == std::string::npos);
    std::string timed = experiment_report_to_json(a, true).dump(2);
    REQUIRE(timed.find("wall_seconds") != std::string::npos);
}

TEST_CASE("report embeds the resolved config and version") {
    ExperimentConfig c = tiny_config();
    c.train.steps = 30;
    c.replay.steps = 30;
    c.arms = {"constrained"};
    ExperimentReport rep = run_experiment(c, 1);
    REQUIRE(rep.version == std::string(kSlotlabVersion));
    REQUIRE(rep.config_hash == experiment_config_hash(c));
    REQUIRE(rep.config_echo.at("train").at("steps").get<int>() == 30);
    REQUIRE(rep.theory.at("ran").get<bool>() == false);
    nlohmann::ordered_json j = experiment_report_to_json(rep);
    REQUIRE(j.at("summary").contains("constrained"));
    REQUIRE_FALSE(j.at("summary").contains("constrained-search"));
}

TEST_CASE("search readout labels raw slots through the matched permutation") {
    ExperimentConfig c = tiny_config();
    c.eval.readout_steps = 600;
    PreparedExperiment prep = prepare_experiment(c, 2);
    // Perfect inference up to a slot swap: slot 0 reports true slot 1.
    Eigen::MatrixXd Zid(static_cast<Eigen::Index>(prep.id_rows.size()), 2);
    for (std::size_t r = 0; r < prep.id_rows.size(); ++r) {
        Zid(static_cast<Eigen::Index>(r), 0) = prep.Ztrue(prep.id_rows[r], 1);
        Zid(static_cast<Eigen::Index>(r), 1) = prep.Ztrue(prep.id_rows[r], 0);
    }
    LinearReadout ro = fit_search_readout(c, prep, Zid);
    REQUIRE(ro.classes() == 3);
    int hits = 0, total = 0;
    for (std::size_t r = 0; r < prep.id_rows.size(); ++r)
        for (int k = 0; k < 2; ++k) {
            Eigen::VectorXd v(1);
            v[0] = Zid(static_cast<Eigen::Index>(r), k);
            int want = prep.labels[static_cast<std::size_t>(prep.id_rows[r])]
                                  [static_cast<std::size_t>(1 - k)];
            hits += ro.predict(v) == want ? 1 : 0;
            ++total;
        }
    REQUIRE(static_cast<double>(hits) / total > 0.9);
}
