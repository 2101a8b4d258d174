#pragma once

// Command-line front end. Subcommands cover the pipeline stage by stage
// (gen-data, train, search, replay, eval), the certificate batteries
// (verify-theory), and the full multi-arm comparison (run-experiment).
// Exit codes: 0 success, 1 a certificate suite reported failures,
// 2 configuration problem, 3 numeric or runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slotlab/experiment.hpp"

namespace slotlab {
namespace detail_cli {

inline nlohmann::json load_config_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << text;
    if (!os) throw IoError("write failure on " + path);
}

inline Network load_network_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path + " (run the train stage first?)");
    return read_network(is);
}

inline std::unique_ptr<Decoder> load_decoder_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path + " (run the train stage first?)");
    return read_decoder(is);
}

// In-domain rows of an inferred latent table, in record order.
inline Eigen::MatrixXd id_rows_of(const PreparedExperiment& prep, const Eigen::MatrixXd& Z) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(prep.id_rows.size()), Z.cols());
    for (std::size_t r = 0; r < prep.id_rows.size(); ++r)
        out.row(static_cast<Eigen::Index>(r)) = Z.row(prep.id_rows[r]);
    return out;
}

inline int cmd_gen_data(const ExperimentConfig& cfg, const std::string& outdir,
                        std::ostream& out) {
    ensure_dir(outdir);
    InteractionGenerator gen = build_generator(cfg.gen);
    SlotBinGrid grid = build_grid(cfg.gen, cfg.grid);
    DatasetSplit ds = sample_dataset(gen, grid, cfg.data.n_id, cfg.data.n_ood, cfg.data.seed);
    write_dataset_file(ds, outdir + "/dataset.bin");
    {
        std::ofstream os(outdir + "/dataset.csv", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + outdir + "/dataset.csv for writing");
        write_dataset_csv(ds, os);
    }
    nlohmann::ordered_json meta;
    meta["version"] = kSlotlabVersion;
    meta["config_hash"] = experiment_config_hash(cfg);
    meta["generator_hash"] = ds.generator_hash;
    meta["seed"] = ds.seed;
    meta["n_id"] = ds.n_id();
    meta["n_ood"] = ds.n_ood();
    write_text_file(outdir + "/dataset_meta.json", meta.dump(2) + "\n");
    out << "gen-data: " << ds.records.size() << " records (" << ds.n_id() << " in-domain, "
        << ds.n_ood() << " out-of-domain) -> " << outdir << "\n";
    return 0;
}

inline int cmd_verify_theory(const std::string& suite, const std::string& outdir,
                             std::uint64_t seed, bool custom_dims, int d_z, int d_x,
                             std::ostream& out) {
    ensure_dir(outdir);
    if (custom_dims) {
        Rng rng(seed);
        detail::TargetInstance t = detail::random_target(d_z, d_x, rng);
        TheoryCertificate cert = detail::construct_M_certificate(t.A, t.B, "construct-M-custom");
        write_text_file(outdir + "/construct_M_custom.json", cert.to_json().dump(2) + "\n");
        out << "construct-M at d_z=" << d_z << " d_x=" << d_x << ": "
            << (cert.verdict ? "pass" : "FAIL") << "\n";
        return cert.verdict ? 0 : 1;
    }
    std::vector<SuiteReport> suites = run_theory_suites(suite, seed);
    nlohmann::ordered_json agg;
    agg["version"] = kSlotlabVersion;
    agg["seed"] = seed;
    agg["suites"] = nlohmann::ordered_json::array();
    bool ok = true;
    for (const auto& s : suites) {
        write_text_file(outdir + "/" + s.suite + ".json", s.to_json().dump(2) + "\n");
        agg["suites"].push_back(
            {{"suite", s.suite}, {"total", s.total()}, {"passed", s.passed()}, {"ok", s.ok()}});
        ok = ok && s.ok();
        out << s.suite << ": " << s.passed() << "/" << s.total() << (s.ok() ? " ok" : " FAIL")
            << "\n";
    }
    agg["ok"] = ok;
    write_text_file(outdir + "/aggregate.json", agg.dump(2) + "\n");
    out << (ok ? "verify-theory: all suites ok" : "verify-theory: failures present") << "\n";
    return ok ? 0 : 1;
}

inline int cmd_train(const ExperimentConfig& cfg, const std::string& outdir,
                     std::uint64_t run_seed, const std::string& arm, std::ostream& out) {
    if (arm != "constrained" && arm != "encoder-unconstrained")
        throw ConfigError("train: --arm must be 'constrained' or 'encoder-unconstrained'");
    ensure_dir(outdir);
    PreparedExperiment prep = prepare_experiment(cfg, run_seed);
    TrainedPair pair = train_pair(cfg, prep, arm == "constrained", run_seed);
    {
        std::ofstream os(outdir + "/enc.ckpt", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + outdir + "/enc.ckpt for writing");
        write_network(pair.enc, os);
    }
    {
        std::ofstream os(outdir + "/dec.ckpt", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + outdir + "/dec.ckpt for writing");
        write_decoder(*pair.dec, os);
    }
    {
        std::ofstream os(outdir + "/train_log.csv", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + outdir + "/train_log.csv for writing");
        write_loss_log_csv(pair.log, os);
    }
    out << "train[" << arm << "]: " << pair.log.size() << " logged steps, final recon "
        << (pair.log.empty() ? 0.0 : pair.log.back().recon) << " -> " << outdir << "\n";
    return 0;
}

inline int cmd_search(const ExperimentConfig& cfg, const std::string& outdir,
                      std::uint64_t run_seed, std::ostream& out) {
    PreparedExperiment prep = prepare_experiment(cfg, run_seed);
    Network enc = load_network_file(outdir + "/enc.ckpt");
    std::unique_ptr<Decoder> dec = load_decoder_file(outdir + "/dec.ckpt");
    Eigen::MatrixXd Z = enc.forward(prep.X);
    std::unique_ptr<LinearReadout> aid;
    if (cfg.search.entropy_weight > 0.0)
        aid = std::make_unique<LinearReadout>(
            fit_search_readout(cfg, prep, id_rows_of(prep, Z)));
    SearchStageResult sr = run_search_stage(cfg, prep, *dec, Z, aid.get());
    {
        std::ofstream os(outdir + "/search_traces.csv", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + outdir + "/search_traces.csv for writing");
        write_search_traces_csv(sr.runs, os);
    }
    {
        std::ofstream os(outdir + "/latents_searched.csv", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + outdir + "/latents_searched.csv for writing");
        os << "record";
        for (Eigen::Index c = 0; c < sr.Z.cols(); ++c) os << ",z" << c;
        os << "\n";
        char buf[64];
        for (std::size_t i = 0; i < prep.ood_rows.size(); ++i) {
            os << prep.ood_rows[i];
            for (Eigen::Index c = 0; c < sr.Z.cols(); ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", sr.Z(prep.ood_rows[i], c));
                os << "," << buf;
            }
            os << "\n";
        }
    }
    double mean_res = 0.0;
    int aborted = 0;
    for (const auto& r : sr.runs) {
        mean_res += r.residual;
        aborted += r.aborted ? 1 : 0;
    }
    if (!sr.runs.empty()) mean_res /= static_cast<double>(sr.runs.size());
    out << "search: " << sr.runs.size() << " out-of-domain points, mean best residual "
        << mean_res << ", " << aborted << " aborted -> " << outdir << "\n";
    return 0;
}

inline int cmd_replay(const ExperimentConfig& cfg, const std::string& outdir,
                      std::uint64_t run_seed, std::ostream& out) {
    PreparedExperiment prep = prepare_experiment(cfg, run_seed);
    Network enc = load_network_file(outdir + "/enc.ckpt");
    std::unique_ptr<Decoder> dec = load_decoder_file(outdir + "/dec.ckpt");
    Eigen::MatrixXd Zid = id_rows_of(prep, enc.forward(prep.X));
    std::vector<LossLogEntry> log;
    Network enc2 = run_replay_stage(cfg, prep, *dec, enc, Zid, run_seed, log);
    {
        std::ofstream os(outdir + "/enc_replay.ckpt", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + outdir + "/enc_replay.ckpt for writing");
        write_network(enc2, os);
    }
    {
        std::ofstream os(outdir + "/replay_log.csv", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + outdir + "/replay_log.csv for writing");
        write_loss_log_csv(log, os);
    }
    out << "replay: " << log.size() << " logged steps, final recon "
        << (log.empty() ? 0.0 : log.back().recon) << " -> " << outdir << "\n";
    return 0;
}

inline int cmd_eval(const ExperimentConfig& cfg, const std::string& outdir,
                    std::uint64_t run_seed, const std::string& arm, std::ostream& out) {
    const auto& known = experiment_arm_names();
    if (std::find(known.begin(), known.end(), arm) == known.end())
        throw ConfigError("eval: unknown arm '" + arm + "'");
    PreparedExperiment prep = prepare_experiment(cfg, run_seed);
    std::unique_ptr<Decoder> dec = load_decoder_file(outdir + "/dec.ckpt");
    bool use_replay = arm == "constrained-replay" || arm == "constrained-both";
    bool use_search = arm == "constrained-search" || arm == "constrained-both";
    Network enc =
        load_network_file(outdir + (use_replay ? "/enc_replay.ckpt" : "/enc.ckpt"));
    Eigen::MatrixXd Z = enc.forward(prep.X);
    if (use_search) {
        std::unique_ptr<LinearReadout> aid;
        if (cfg.search.entropy_weight > 0.0)
            aid = std::make_unique<LinearReadout>(
                fit_search_readout(cfg, prep, id_rows_of(prep, Z)));
        Z = run_search_stage(cfg, prep, *dec, Z, aid.get()).Z;
    }
    EvalReport rep = evaluate_latents(cfg, prep, Z, *dec, run_seed);
    write_text_file(outdir + "/eval_report.json", eval_report_to_json(rep).dump(2) + "\n");
    {
        std::ofstream os(outdir + "/eval_report.csv", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + outdir + "/eval_report.csv for writing");
        write_eval_report_csv(rep, os);
    }
    out << "eval[" << arm << "]: readout acc id " << rep.readout_acc_id << ", ood "
        << rep.readout_acc_ood << ", recon mse ood " << rep.recon_mse_ood << " -> " << outdir
        << "\n";
    return 0;
}

inline int cmd_run_experiment(const ExperimentConfig& cfg, const std::string& outdir,
                              int threads, std::ostream& out, std::ostream& err) {
    ensure_dir(outdir);
    ensure_dir(outdir + "/logs");
    ExperimentReport rep = run_experiment(cfg, threads);
    write_text_file(outdir + "/report.json", experiment_report_to_json(rep, false).dump(2) + "\n");
    {
        nlohmann::ordered_json tj;
        tj["version"] = rep.version;
        tj["total_wall_seconds"] = rep.total_wall_seconds;
        tj["runs"] = nlohmann::ordered_json::array();
        for (const auto& r : rep.results)
            tj["runs"].push_back(
                {{"arm", r.arm}, {"seed", r.run_seed}, {"wall_seconds", r.wall_seconds}});
        write_text_file(outdir + "/timings.json", tj.dump(2) + "\n");
    }
    {
        std::ofstream os(outdir + "/ood_accuracy.csv", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + outdir + "/ood_accuracy.csv for writing");
        write_ood_accuracy_csv(rep, os);
    }
    for (const auto& r : rep.results) {
        std::string stem = outdir + "/logs/" + r.arm + "-" + std::to_string(r.run_seed);
        if (!r.train_log.empty()) {
            std::ofstream os(stem + "-train.csv", std::ios::binary | std::ios::trunc);
            if (!os) throw IoError("cannot open " + stem + "-train.csv for writing");
            write_loss_log_csv(r.train_log, os);
        }
        if (!r.replay_log.empty()) {
            std::ofstream os(stem + "-replay.csv", std::ios::binary | std::ios::trunc);
            if (!os) throw IoError("cannot open " + stem + "-replay.csv for writing");
            write_loss_log_csv(r.replay_log, os);
        }
        if (!r.searches.empty()) {
            std::ofstream os(stem + "-search.csv", std::ios::binary | std::ios::trunc);
            if (!os) throw IoError("cannot open " + stem + "-search.csv for writing");
            write_search_traces_csv(r.searches, os);
        }
    }
    for (const auto& arm : cfg.arms)
        out << arm << ": mean readout acc id " << rep.mean_metric(arm, metric_readout_acc_id)
            << ", ood " << rep.mean_metric(arm, metric_readout_acc_ood) << "\n";
    if (rep.partial) {
        int failed = 0;
        for (const auto& r : rep.results)
            if (r.failed) {
                ++failed;
                err << "arm failure: " << r.arm << " seed " << r.run_seed << ": " << r.error
                    << "\n";
            }
        out << "run-experiment: PARTIAL, " << failed << " arm runs failed, report in " << outdir
            << "\n";
        return 3;
    }
    out << "run-experiment: complete -> " << outdir << "\n";
    return 0;
}

} // namespace detail_cli

inline int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"slot-structured autoencoders: data synthesis, certification, training, "
                 "inversion, and the multi-arm comparison"};
    app.require_subcommand(1);

    std::string config_path;
    std::string outdir_flag;
    std::string suite = "all";
    std::string arm;
    std::uint64_t seed_override = 0;
    int threads = 1;
    int dz = 2, dx = 8;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        CLI::Option* oc = sub->add_option("--config", config_path, "path to a JSON config file");
        if (needs_config) oc->required();
        sub->add_option("--out", outdir_flag,
                        "output directory (default: the config's outdir)");
        return sub->add_option("--seed-override", seed_override,
                              "replace the stage seed for this invocation");
    };

    CLI::App* c_gen = app.add_subcommand("gen-data", "sample a dataset and write it to disk");
    CLI::Option* o_seed_gen = add_common(c_gen, true);

    CLI::App* c_verify =
        app.add_subcommand("verify-theory", "run certificate batteries and write JSON bundles");
    c_verify->add_option("--suite", suite,
                         "battery to run: lemma-second, lemma-secondb, moore, construct-M, "
                         "lambda, counterexample, polarization, monomial, or all");
    c_verify->add_option("--out", outdir_flag, "output directory (default: out)");
    CLI::Option* o_seed_verify = c_verify->add_option("--seed-override", seed_override,
                                                      "base seed for the batteries");
    CLI::Option* o_dz = c_verify->add_option("--dz", dz, "latent dimension for a single "
                                                         "custom linearization certificate");
    CLI::Option* o_dx = c_verify->add_option("--dx", dx, "observation dimension for the "
                                                         "custom certificate");
    o_dz->needs(o_dx);
    o_dx->needs(o_dz);

    CLI::App* c_train =
        app.add_subcommand("train", "train one encoder/decoder pair and checkpoint it");
    CLI::Option* o_seed_train = add_common(c_train, true);
    c_train->add_option("--arm", arm,
                        "which pair to train: constrained (default) or encoder-unconstrained");

    CLI::App* c_search = app.add_subcommand(
        "search", "gradient-search latents for out-of-domain points against a checkpoint");
    CLI::Option* o_seed_search = add_common(c_search, true);

    CLI::App* c_replay = app.add_subcommand(
        "replay", "retrain the checkpointed encoder on recombined decoder outputs");
    CLI::Option* o_seed_replay = add_common(c_replay, true);

    CLI::App* c_eval =
        app.add_subcommand("eval", "score checkpointed latents against ground truth");
    CLI::Option* o_seed_eval = add_common(c_eval, true);
    c_eval->add_option("--arm", arm, "arm whose pipeline to evaluate (default: constrained)");

    CLI::App* c_run = app.add_subcommand("run-experiment",
                                         "run every requested arm and seed, then write the "
                                         "report, timing sidecar, and plot tables");
    CLI::Option* o_seed_run = add_common(c_run, true);
    c_run->add_option("--threads", threads, "worker threads across seeds")
        ->envname("SLOTLAB_THREADS");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e, out, err);
        return rc == 0 ? 0 : 2;
    }

    auto guarded = [&](auto&& fn) -> int {
        try {
            return fn();
        } catch (const ConfigError& e) {
            err << "config error: " << e.what() << "\n";
            return 2;
        } catch (const DimensionError& e) {
            err << "config error: " << e.what() << "\n";
            return 2;
        } catch (const PreconditionError& e) {
            err << "precondition error: " << e.what() << "\n";
            return 2;
        } catch (const SupportError& e) {
            err << "support error (slot " << e.slot << "): " << e.what() << "\n";
            return 2;
        } catch (const CapabilityError& e) {
            err << "capability error: " << e.what() << "\n";
            return 2;
        } catch (const Error& e) {
            err << "runtime error: " << e.what() << "\n";
            return 3;
        } catch (const std::exception& e) {
            err << "error: " << e.what() << "\n";
            return 3;
        }
    };

    auto load_config = [&]() {
        return experiment_config_from_json(detail_cli::load_config_json(config_path));
    };
    auto resolve_out = [&](const ExperimentConfig& cfg) {
        return outdir_flag.empty() ? cfg.outdir : outdir_flag;
    };

    if (c_gen->parsed())
        return guarded([&] {
            ExperimentConfig cfg = load_config();
            if (o_seed_gen->count()) cfg.data.seed = seed_override;
            return detail_cli::cmd_gen_data(cfg, resolve_out(cfg), out);
        });
    if (c_verify->parsed())
        return guarded([&] {
            std::uint64_t seed = o_seed_verify->count() ? seed_override : 0;
            std::string od = outdir_flag.empty() ? std::string("out") : outdir_flag;
            return detail_cli::cmd_verify_theory(suite, od, seed, o_dz->count() > 0, dz, dx,
                                                 out);
        });
    if (c_train->parsed())
        return guarded([&] {
            ExperimentConfig cfg = load_config();
            std::uint64_t seed = o_seed_train->count() ? seed_override : cfg.seeds.front();
            std::string which = arm.empty() ? std::string("constrained") : arm;
            return detail_cli::cmd_train(cfg, resolve_out(cfg), seed, which, out);
        });
    if (c_search->parsed())
        return guarded([&] {
            ExperimentConfig cfg = load_config();
            std::uint64_t seed = o_seed_search->count() ? seed_override : cfg.seeds.front();
            return detail_cli::cmd_search(cfg, resolve_out(cfg), seed, out);
        });
    if (c_replay->parsed())
        return guarded([&] {
            ExperimentConfig cfg = load_config();
            std::uint64_t seed = o_seed_replay->count() ? seed_override : cfg.seeds.front();
            return detail_cli::cmd_replay(cfg, resolve_out(cfg), seed, out);
        });
    if (c_eval->parsed())
        return guarded([&] {
            ExperimentConfig cfg = load_config();
            std::uint64_t seed = o_seed_eval->count() ? seed_override : cfg.seeds.front();
            std::string which = arm.empty() ? std::string("constrained") : arm;
            return detail_cli::cmd_eval(cfg, resolve_out(cfg), seed, which, out);
        });
    if (c_run->parsed())
        return guarded([&] {
            ExperimentConfig cfg = load_config();
            if (o_seed_run->count()) cfg.seeds = {seed_override};
            return detail_cli::cmd_run_experiment(cfg, resolve_out(cfg), threads, out, err);
        });
    err << "no subcommand selected\n";
    return 2;
}

} // namespace slotlab
