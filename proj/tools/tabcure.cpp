// tabcure command line: drives the synthetic-data curation pipeline from a
// single JSON config. Every subcommand is resumable; artifacts land under the
// config's artifact directory together with per-stage manifests.
//
// Exit codes: 0 success, 2 config error, 3 stage failure.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tabcure/pipeline.hpp"

namespace {

using tabcure::pipeline::PipelineConfig;
using tabcure::pipeline::StageRunner;

struct CommonOpts {
    std::string config_path;
    int64_t seed_override = -1;
    int jobs = 0;  // 0 -> hardware concurrency
    std::string stage_from;
};

PipelineConfig resolve_config(const CommonOpts& opts) {
    PipelineConfig cfg;
    if (!opts.config_path.empty()) {
        cfg = tabcure::pipeline::load_config(opts.config_path);
    } else {
        cfg = tabcure::pipeline::config_from_json(tabcure::io::json::object());
    }
    if (opts.seed_override >= 0) {
        tabcure::io::json j = tabcure::pipeline::config_to_json(cfg);
        j["master_seed"] = static_cast<uint64_t>(opts.seed_override);
        cfg = tabcure::pipeline::config_from_json(j);
    }
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "pipeline config file (JSON)");
    cmd->add_option("--seed", opts.seed_override, "override master_seed");
    cmd->add_option("--jobs", opts.jobs, "worker threads (0 = hardware)");
    cmd->add_option("--stage-from", opts.stage_from, "force re-run from this stage");
}

void print_log(const std::vector<std::string>& log) {
    for (const auto& line : log) std::cout << line << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"embedding-guided synthetic data curation for tabular regression"};
    app.require_subcommand(1);

    CommonOpts opts;
    size_t control_count = 32;
    std::string export_what;
    std::string export_out = "export";

    CLI::App* c_ingest = app.add_subcommand("ingest", "preprocess CSV datasets into canonical form");
    CLI::App* c_gensyn = app.add_subcommand("gen-synthetic", "generate synthetic tasks from the prior");
    CLI::App* c_genctl = app.add_subcommand("gen-control", "generate pure-noise control datasets");
    c_genctl->add_option("--count", control_count, "number of control datasets");
    CLI::App* c_pretrain = app.add_subcommand("pretrain", "base-pretrain the PFN on the prior");
    CLI::App* c_embed = app.add_subcommand("embed", "embed synthetic + target datasets");
    CLI::App* c_disting = app.add_subcommand("distinguish", "synthetic vs engineering separability");
    CLI::App* c_curate = app.add_subcommand("curate", "select the most engineering-like tasks");
    CLI::App* c_finetune = app.add_subcommand("finetune", "continued pre-training on selected tasks");
    CLI::App* c_eval = app.add_subcommand("eval", "learning-curve sweeps and test errors");
    CLI::App* c_eff = app.add_subcommand("efficiency", "data-efficiency and win matrix");
    CLI::App* c_export = app.add_subcommand("export", "copy an artifact out of the store");
    c_export->add_option("what", export_what, "embeddings|curves|efficiency|selection|config")
        ->required();
    c_export->add_option("--out", export_out, "output directory");
    CLI::App* c_pipeline = app.add_subcommand("pipeline", "run every stage in order");

    for (CLI::App* cmd : {c_ingest, c_gensyn, c_genctl, c_pretrain, c_embed, c_disting, c_curate,
                          c_finetune, c_eval, c_eff, c_export, c_pipeline})
        add_common(cmd, opts);

    CLI11_PARSE(app, argc, argv);

    try {
        const PipelineConfig cfg = resolve_config(opts);
        std::vector<std::string> log;
        const bool force = !opts.stage_from.empty();
        StageRunner runner{cfg, force, opts.jobs, &log};

        using namespace tabcure::pipeline;
        if (c_pipeline->parsed()) {
            run_pipeline(cfg, opts.jobs, opts.stage_from, &log);
        } else if (c_export->parsed()) {
            for (const auto& f : cmd_export(cfg, export_what, export_out))
                log.push_back("export: wrote " + f);
        } else {
            DirectoryLock lock(cfg.artifact_dir);
            if (c_ingest->parsed()) {
                stage_ingest(runner);
            } else if (c_gensyn->parsed()) {
                stage_gen_synthetic(runner);
            } else if (c_genctl->parsed()) {
                stage_gen_control(runner, control_count);
            } else if (c_pretrain->parsed()) {
                stage_pretrain(runner);
            } else {
                // Downstream commands need the upstream manifests for their
                // input hashes; run upstream stages (no-ops when current).
                const auto ingest_m = stage_ingest(runner);
                const auto synth_m = stage_gen_synthetic(runner);
                const auto pretrain_m = stage_pretrain(runner);
                if (c_embed->parsed()) {
                    stage_embed(runner, pretrain_m, synth_m, ingest_m);
                } else {
                    const auto embed_m = stage_embed(runner, pretrain_m, synth_m, ingest_m);
                    if (c_disting->parsed()) {
                        stage_distinguish(runner, embed_m);
                    } else if (c_curate->parsed()) {
                        stage_curate(runner, embed_m);
                    } else {
                        const auto curate_m = stage_curate(runner, embed_m);
                        const auto finetune_m = stage_finetune(runner, pretrain_m, curate_m);
                        if (c_finetune->parsed()) {
                            // done above
                        } else {
                            const auto eval_m = stage_eval(runner, ingest_m, finetune_m);
                            if (c_eff->parsed()) stage_efficiency(runner, eval_m);
                        }
                    }
                }
            }
        }
        print_log(log);
        return 0;
    } catch (const tabcure::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const tabcure::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
