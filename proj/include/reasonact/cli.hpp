#pragma once

// CLI entry point. Exit codes: 0 success, 1 contract/config error, 2 I/O
// error. Every subcommand accepts --config PATH and --seed N; --seed
// overrides the seed recorded in the config file.

#include <CLI11.hpp>

#include <iostream>

#include "reasonact/harness.hpp"

namespace reasonact {

namespace cli_detail {

inline RunConfig load_config(const std::string& path, int64_t seed_override) {
    RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    return cfg;
}

inline void print_report(const EvalReport& rep) {
    std::cout << "protocol: " << rep.protocol << "\ntrials: " << rep.trials
              << "\nsuccess_rate: " << fmt_double(rep.success_rate) << "\n";
    for (const auto& [k, v] : rep.per_category) std::cout << "category." << k << ": " << fmt_double(v) << "\n";
    if (rep.reasoning_accuracy >= 0) std::cout << "reasoning_accuracy: " << fmt_double(rep.reasoning_accuracy) << "\n";
    if (rep.protocol == "swap_trial") std::cout << "swap_triggered: " << rep.swap_triggered << "\n";
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"reasoning-conditioned diffusion policy on a 2D sorting simulator"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, protocol = "in_dist", resume, task = "sorting", prefix, widths_arg = "64,128,256";
    int64_t seed = -1;
    int episodes = -1, trials = 100, calls = 100;
    bool plot = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration file (key=value)");
        sub->add_option("--seed", seed, "seed override");
    };

    auto* gen = app.add_subcommand("gen-data", "generate an expert demonstration dataset");
    add_common(gen);
    gen->add_option("--task", task, "sorting | bimanual");
    gen->add_option("--episodes", episodes, "episode count override");
    gen->add_option("--prefix", prefix, "output file prefix override");

    auto* tr = app.add_subcommand("train", "train per the config");
    add_common(tr);
    tr->add_option("--resume", resume, "checkpoint to resume from");
    tr->add_flag("--plot", plot, "emit a loss-curve SVG next to the metrics");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint under a protocol");
    add_common(ev);
    ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    ev->add_option("--protocol", protocol, "protocol id");
    ev->add_option("--trials", trials, "trial count");

    auto* ab = app.add_subcommand("ablate", "paired runs with and without reasoning injection");
    add_common(ab);
    ab->add_option("--trials", trials, "evaluation trials per arm");

    auto* be = app.add_subcommand("bench", "act() throughput report");
    add_common(be);
    be->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    be->add_option("--calls", calls, "measured calls after warmup");

    auto* sw = app.add_subcommand("scale-sweep", "train several backbone widths under one budget");
    add_common(sw);
    sw->add_option("--widths", widths_arg, "comma-separated widths");
    sw->add_option("--trials", trials, "evaluation trials per arm");

    auto* in = app.add_subcommand("inspect-checkpoint", "list parameter names, shapes and counts");
    add_common(in);
    in->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            RunConfig cfg = cli_detail::load_config(config_path, seed);
            DatasetGenConfig g;
            g.task = task == "bimanual" ? WorldTask::Bimanual : WorldTask::Sorting;
            if (task != "sorting" && task != "bimanual") throw ConfigError("unknown task: " + task);
            g.n_episodes = episodes > 0 ? episodes : 500;
            g.sim.img = cfg.model.img;
            const std::string out = prefix.empty() ? cfg.data_prefix : prefix;
            generate_dataset(g, SplitManifest::default_split(), cfg.seed, out);
            std::cout << "dataset: " << out << ".idx (" << g.n_episodes << " episodes)\n"
                      << "idx_checksum: " << std::hex << file_checksum(out + ".idx") << "\n"
                      << "bin_checksum: " << file_checksum(out + ".bin") << std::dec << "\n";
        } else if (tr->parsed()) {
            RunConfig cfg = cli_detail::load_config(config_path, seed);
            TrainResult res = train<float>(cfg, resume);
            std::cout << "checkpoint: " << res.checkpoint_path << "\nmetrics: " << res.metrics_path
                      << "\nfinal_total: " << fmt_double(res.final_total) << "\n";
            if (res.last_eval >= 0) std::cout << "last_eval: " << fmt_double(res.last_eval) << "\n";
            if (plot) {
                write_loss_svg(res.metrics_path, cfg.out_dir + "/loss.svg");
                std::cout << "plot: " << cfg.out_dir << "/loss.svg\n";
            }
        } else if (ev->parsed()) {
            RunConfig cfg = cli_detail::load_config(config_path, seed);
            auto loaded = PolicyModel<float>::load_checkpoint(checkpoint);
            Protocol proto = protocol_from(protocol);
            Dataset ds = load_dataset(cfg.data_prefix, loaded.model->cfg().d_x);
            EvalConfig ec;
            ec.horizon = loaded.model->cfg().horizon;
            ec.sim.img = loaded.model->cfg().img;
            const std::string emb = protocol_task(proto) == WorldTask::Bimanual ? "bimanual" : "single";
            auto rep = evaluate(model_policy(*loaded.model, emb), proto, trials, cfg.seed, ds.manifest, ec);
            cli_detail::print_report(rep);
        } else if (ab->parsed()) {
            RunConfig cfg = cli_detail::load_config(config_path, seed);
            auto res = ablate_reasoning<float>(cfg, trials);
            std::cout << "film.in_dist: " << fmt_double(res.film_in_dist.success_rate)
                      << "\nfilm.unseen_mix: " << fmt_double(res.film_unseen.success_rate)
                      << "\nclamped.in_dist: " << fmt_double(res.clamped_in_dist.success_rate)
                      << "\nclamped.unseen_mix: " << fmt_double(res.clamped_unseen.success_rate)
                      << "\nfilm_avg: " << fmt_double(res.film_avg)
                      << "\nclamped_avg: " << fmt_double(res.clamped_avg)
                      << "\ndelta: " << fmt_double(res.delta) << "\n";
        } else if (be->parsed()) {
            RunConfig cfg = cli_detail::load_config(config_path, seed);
            auto loaded = PolicyModel<float>::load_checkpoint(checkpoint);
            const std::string emb = loaded.model->embodiment_ids().empty() ? "single"
                                                                           : loaded.model->embodiment_ids().front();
            auto rep = bench(*loaded.model, emb, calls, cfg.seed);
            std::cout << "mean_hz: " << fmt_double(rep.mean_hz) << "\np50_ms: " << fmt_double(rep.p50_ms)
                      << "\np95_ms: " << fmt_double(rep.p95_ms) << "\nstage.encode_ms: " << fmt_double(rep.encode_ms)
                      << "\nstage.reasoning_ms: " << fmt_double(rep.reasoning_ms)
                      << "\nstage.forward_ms: " << fmt_double(rep.forward_ms)
                      << "\nstage.sample_ms: " << fmt_double(rep.sample_ms)
                      << "\nstage.head_ms: " << fmt_double(rep.head_ms)
                      << "\nstage_sum_ms: " << fmt_double(rep.stage_sum_ms)
                      << "\ntotal_ms: " << fmt_double(rep.total_ms) << "\n";
        } else if (sw->parsed()) {
            RunConfig cfg = cli_detail::load_config(config_path, seed);
            std::vector<int> widths;
            std::istringstream in(widths_arg);
            std::string tok;
            while (std::getline(in, tok, ',')) widths.push_back(std::stoi(tok));
            auto rep = scale_sweep<float>(cfg, widths, trials);
            for (const auto& arm : rep.arms)
                std::cout << "width " << arm.width << ": params=" << arm.param_count
                          << " in_dist=" << fmt_double(arm.in_dist) << " unseen_mix=" << fmt_double(arm.unseen)
                          << "\n";
            std::cout << "monotone_unseen: " << (rep.monotone_unseen ? "true" : "false (flagged)") << "\n"
                      << "dataset_checksum: " << std::hex << rep.dataset_checksum << std::dec << "\n";
        } else if (in->parsed()) {
            auto loaded = PolicyModel<float>::load_checkpoint(checkpoint);
            size_t total = 0;
            for (Parameter<float>* p : loaded.model->params().ordered()) {
                std::cout << p->name << " " << shape_str(p->t.shape()) << (p->frozen ? " [frozen]" : "") << "\n";
                total += p->t.numel();
            }
            std::cout << "total_parameters: " << total << "\n";
            if (!loaded.extra_records.empty()) std::cout << "extra_records: " << loaded.extra_records.size() << "\n";
        }
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace reasonact
