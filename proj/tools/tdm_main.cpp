#include "tdm/parallel.hpp"
#include "tdm/runner.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"desk-scale lab for reward-based fine-tuning of diffusion and flow models"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    int threads = 0;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--out", out_dir, "override the output directory");
        sub->add_option("--threads", threads, "worker threads (0 = hardware)");
    };

    for (const char* name : {"train-base", "graft", "pgraft", "invnoise", "diagnose", "eval"})
        add_common(app.add_subcommand(name));

    CLI11_PARSE(app, argc, argv);
    const std::string task = app.get_subcommands().front()->get_name();

    tdm::ExperimentConfig cfg;
    try {
        cfg = tdm::load_config(config_path);
        if (cfg.task != task)
            throw tdm::ConfigError("config task '" + cfg.task + "' does not match subcommand '" +
                                   task + "'");
        if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (threads > 0) cfg.threads = threads;
    } catch (const tdm::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }

    if (cfg.threads > 0) tdm::set_default_threads(cfg.threads);
    try {
        const tdm::RunArtifacts art = tdm::run_experiment(cfg);
        std::printf("run %s complete\n  manifest: %s\n  metrics:  %s\n  report:   %s\n",
                    art.hash.c_str(), art.manifest_path.c_str(), art.metrics_csv.c_str(),
                    art.report_path.c_str());
        return 0;
    } catch (const tdm::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const tdm::Error& e) {
        std::fprintf(stderr, "runtime failure in module %s: %s\n", e.module.c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime failure: %s\n", e.what());
        return 1;
    }
}
