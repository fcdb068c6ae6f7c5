#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fractalnet/generator.hpp"
#include "fractalnet/report.hpp"
#include "fractalnet/runner.hpp"

int main(int argc, char** argv) {
    using namespace fractalnet;

    CLI::App app{"fractalnet: fractal architecture generation, training and reporting"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "enumerate the variant grid into a manifest");
    std::string gen_out = "manifest.json";
    std::string gen_space;
    gen->add_option("-o,--out", gen_out, "manifest output file");
    gen->add_option("--space", gen_space, "search-space config file (json), overrides the default grid");

    // run
    auto* run = app.add_subcommand("run", "train every manifest entry");
    std::string run_manifest, run_config, run_out = "campaign";
    int run_parallel = 1;
    bool run_resume = false;
    run->add_option("--manifest", run_manifest, "manifest file from `generate`")->required();
    run->add_option("--config", run_config, "train config file (json)");
    run->add_option("--out", run_out, "output directory");
    run->add_option("--parallel", run_parallel, "worker count");
    run->add_flag("--resume", run_resume, "skip already-completed models");

    // report
    auto* rep = app.add_subcommand("report", "aggregate campaign results");
    std::string rep_in, rep_summary, rep_dist, rep_loss, rep_models;
    rep->add_option("--in", rep_in, "results directory")->required();
    rep->add_option("--summary", rep_summary, "summary output file (json)");
    rep->add_option("--epoch-dist", rep_dist, "epoch-distribution csv output");
    rep->add_option("--loss-curves", rep_loss, "loss-curve csv output");
    rep->add_option("--models", rep_models, "comma-separated model ids for --loss-curves");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            SearchSpace space = gen_space.empty() ? default_search_space() : read_search_space(gen_space);
            auto entries = enumerate(space);
            write_manifest(gen_out, entries);
            size_t feasible = 0;
            for (const auto& e : entries) feasible += e.feasible;
            std::cout << "wrote " << entries.size() << " specs (" << feasible << " feasible) to "
                      << gen_out << "\n";
        } else if (run->parsed()) {
            TrainConfig cfg = run_config.empty() ? TrainConfig{} : read_train_config(run_config);
            auto manifest = read_manifest(run_manifest);
            auto [train, val] = resolve_dataset(cfg.dataset);
            TransformConfig transform = channel_stats(train);
            CampaignOptions opts;
            opts.out_dir = run_out;
            opts.parallelism = run_parallel;
            opts.resume = run_resume;
            auto results = run_campaign(manifest, cfg, train, val, transform, opts);
            std::cout << "campaign complete: " << results.size() << "/" << manifest.size()
                      << " results in " << run_out << "/results\n";
        } else if (rep->parsed()) {
            auto results = read_results_dir(rep_in);
            CampaignSummary s = summarize(rep_in);
            const std::string summary_text = to_json(s).dump(1) + "\n";
            if (rep_summary.empty()) std::cout << summary_text;
            else write_text_file(rep_summary, summary_text);
            if (!rep_dist.empty()) write_text_file(rep_dist, export_epoch_distribution(results));
            if (!rep_loss.empty()) {
                std::vector<std::string> ids;
                if (rep_models.empty()) {
                    for (const auto& r : results) ids.push_back(r.model_id);
                } else {
                    std::string cur;
                    for (char c : rep_models) {
                        if (c == ',') { ids.push_back(cur); cur.clear(); }
                        else cur.push_back(c);
                    }
                    if (!cur.empty()) ids.push_back(cur);
                }
                write_text_file(rep_loss, export_loss_curves(results, ids));
            }
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
