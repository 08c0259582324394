// Command-line front end for the streaming active-learning pipeline:
// validate data, pretrain or train policies, run frozen-policy test passes,
// sweep policy/budget grids, and summarize result directories.

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "grreal/experiment.hpp"

namespace fs = std::filesystem;
using namespace grreal;

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> policy;
    std::optional<int> budget;
    std::optional<std::string> variant;
    std::optional<std::string> target;
    std::optional<std::string> pretrained;
    std::optional<std::string> out;
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--seed", ov.seed, "Override the config seed");
    cmd->add_option("--policy", ov.policy, "Label policy")
        ->check(CLI::IsMember({"grreal", "random", "uncertainty", "udc"}));
    cmd->add_option("--budget", ov.budget, "Override the label budget");
    cmd->add_option("--graph-variant", ov.variant, "Neighbor structure")
        ->check(CLI::IsMember({"downstream", "direct", "none"}));
    cmd->add_option("--target", ov.target, "Prediction target")
        ->check(CLI::IsMember({"temperature", "flow"}));
    cmd->add_option("--pretrained", ov.pretrained, "Policy checkpoint to start from");
}

ExperimentConfig load_with_overrides(const std::string& path, const Overrides& ov) {
    ExperimentConfig cfg = load_experiment_config(path);
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.policy) cfg.policy = *ov.policy;
    if (ov.budget) cfg.budget = *ov.budget;
    if (ov.variant) cfg.variant = graph_variant_from_string(*ov.variant);
    if (ov.target) {
        cfg.target = target_kind_from_string(*ov.target);
        if (cfg.use_synth) cfg.synth.target = cfg.target;
    }
    if (ov.pretrained) cfg.pretrained_policy = *ov.pretrained;
    if (ov.out) cfg.out_dir = *ov.out;
    return cfg;
}

int cmd_ingest_validate(const std::string& features, const std::string& observations,
                        const std::string& edges, const std::string& variant) {
    IngestReport rep;
    const PanelData panel = ingest_panel(features, observations, &rep);
    const RiverGraph graph =
        RiverGraph::from_edges_csv(edges, panel.segment_ids(), graph_variant_from_string(variant));

    std::cout << "segments:          " << rep.n_segments << '\n'
              << "days:              " << rep.n_days << " ("
              << format_iso_date(panel.start_epoch_day()) << ".."
              << format_iso_date(panel.start_epoch_day() + rep.n_days - 1) << ")\n"
              << "features:          " << rep.n_features << '\n'
              << "forward-filled:    " << rep.forward_filled << " segment-days\n"
              << "observations:      " << rep.observations << '\n'
              << "duplicates merged: " << rep.duplicate_rows << '\n'
              << "edges:             " << graph.edges().size() << " (" << variant << ")\n";
    std::cout << "coverage per segment:\n";
    const auto all = panel.labels_in(Period{0, panel.n_days() - 1});
    std::vector<int> counts(static_cast<std::size_t>(rep.n_segments), 0);
    for (const LabeledSample& s : all) ++counts[static_cast<std::size_t>(s.segment)];
    for (int i = 0; i < rep.n_segments; ++i)
        std::cout << "  " << panel.segment_ids()[static_cast<std::size_t>(i)] << ": "
                  << counts[static_cast<std::size_t>(i)] << " labels ("
                  << std::fixed << std::setprecision(1)
                  << 100.0 * counts[static_cast<std::size_t>(i)] / rep.n_days << "%)\n"
                  << std::defaultfloat;
    for (const std::string& w : rep.warnings) std::cout << "warning: " << w << '\n';
    std::cout << "ok\n";
    return 0;
}

int cmd_report(const std::string& dir) {
    if (fs::exists(fs::path(dir) / "sweep.json")) {
        std::ifstream in(fs::path(dir) / "sweep.json");
        nlohmann::json cells;
        in >> cells;
        std::cout << std::left << std::setw(14) << "policy" << std::setw(9) << "budget"
                  << std::setw(6) << "runs" << std::setw(7) << "fails" << std::setw(13)
                  << "mean_rmse" << "std_rmse\n";
        for (const auto& c : cells) {
            std::cout << std::left << std::setw(14) << c.at("policy").get<std::string>()
                      << std::setw(9) << c.at("budget").get<int>() << std::setw(6)
                      << c.at("rmses").size() << std::setw(7) << c.at("failures").size();
            if (c.contains("mean_rmse"))
                std::cout << std::setw(13) << std::setprecision(6)
                          << c.at("mean_rmse").get<double>() << std::setprecision(6)
                          << c.at("std_rmse").get<double>();
            else
                std::cout << std::setw(13) << "-" << "-";
            std::cout << '\n';
        }
        return 0;
    }
    const fs::path result = fs::path(dir) / "result.json";
    if (!fs::exists(result))
        throw data_error(dir + ": no sweep.json or result.json to report on");
    std::ifstream in(result);
    nlohmann::json j;
    in >> j;
    std::cout << "policy:               " << j.at("policy").get<std::string>() << '\n'
              << "budget:               " << j.at("budget").get<int>() << '\n'
              << "seed:                 " << j.at("seed").get<std::uint64_t>() << '\n'
              << "labels used:          " << j.at("labels_used").get<int>() << '\n'
              << "days run:             " << j.at("days_run").get<long>() << '\n'
              << "budget exhausted:     " << (j.at("budget_exhausted").get<bool>() ? "yes" : "no")
              << '\n'
              << std::setprecision(6) << "initial holdout RMSE: "
              << j.at("initial_holdout_rmse").get<double>() << '\n'
              << "final holdout RMSE:   " << j.at("final_holdout_rmse").get<double>() << '\n'
              << "evaluation RMSE:      " << j.at("eval_rmse").get<double>() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming active learning for river networks"};
    app.require_subcommand(1);

    // ingest-validate
    std::string features, observations, edges, iv_variant = "downstream";
    auto* iv = app.add_subcommand("ingest-validate",
                                  "Load and validate the CSV inputs, print a coverage report");
    iv->add_option("--features", features, "features CSV")->required();
    iv->add_option("--observations", observations, "observations CSV")->required();
    iv->add_option("--edges", edges, "edges CSV")->required();
    iv->add_option("--graph-variant", iv_variant, "Neighbor structure")
        ->check(CLI::IsMember({"downstream", "direct", "none"}));

    // shared config + overrides
    std::string config_path;
    Overrides ov;

    auto* pretrain = app.add_subcommand(
        "pretrain", "Train the decision policy on the configured synthetic basin");
    std::string pretrain_out;
    pretrain->add_option("--config", config_path, "experiment config JSON")->required();
    pretrain->add_option("--out", pretrain_out, "output checkpoint path")->required();
    add_override_flags(pretrain, ov);

    auto* train = app.add_subcommand("train", "Run the training stage and save its artifacts");
    std::string train_out;
    train->add_option("--config", config_path, "experiment config JSON")->required();
    train->add_option("--out", train_out, "output directory")->required();
    add_override_flags(train, ov);

    auto* test = app.add_subcommand(
        "test", "Run the full experiment: train, frozen test pass, final training, evaluation");
    test->add_option("--config", config_path, "experiment config JSON")->required();
    test->add_option("--out", ov.out, "output directory (overrides config)");
    add_override_flags(test, ov);

    auto* sweep = app.add_subcommand("sweep", "Run a policy x budget grid with paired seeds");
    std::vector<std::string> sw_policies{"grreal", "random", "uncertainty", "udc"};
    std::vector<int> sw_budgets;
    std::vector<std::uint64_t> sw_seeds;
    std::string sweep_out;
    sweep->add_option("--config", config_path, "experiment config JSON")->required();
    sweep->add_option("--policies", sw_policies, "policies to compare")->delimiter(',');
    sweep->add_option("--budgets", sw_budgets, "budgets to compare")
        ->delimiter(',')
        ->required();
    sweep->add_option("--seeds", sw_seeds, "paired seeds (at least 2)")
        ->delimiter(',')
        ->required();
    sweep->add_option("--out", sweep_out, "output directory")->required();
    add_override_flags(sweep, ov);

    auto* synth_export = app.add_subcommand(
        "synth-export", "Materialize the configured synthetic basin as CSV inputs");
    std::string export_out;
    synth_export->add_option("--config", config_path, "experiment config JSON")->required();
    synth_export->add_option("--out", export_out, "output directory")->required();
    add_override_flags(synth_export, ov);

    auto* report = app.add_subcommand("report", "Summarize a result or sweep directory");
    std::string report_dir;
    report->add_option("--dir", report_dir, "result directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (iv->parsed())
            return cmd_ingest_validate(features, observations, edges, iv_variant);
        if (report->parsed()) return cmd_report(report_dir);

        if (pretrain->parsed()) {
            const ExperimentConfig cfg = load_with_overrides(config_path, ov);
            pretrain_policy(cfg, pretrain_out);
            std::cout << "wrote policy checkpoint " << pretrain_out << '\n';
            return 0;
        }
        if (train->parsed()) {
            const ExperimentConfig cfg = load_with_overrides(config_path, ov);
            const auto summary = train_only(cfg, train_out);
            std::cout << summary.dump(2) << '\n';
            return 0;
        }
        if (test->parsed()) {
            ExperimentConfig cfg = load_with_overrides(config_path, ov);
            if (cfg.out_dir.empty())
                throw config_error("test: set out_dir in the config or pass --out");
            const ResultBundle r = run_experiment(cfg);
            std::cout << "policy " << cfg.policy << ", budget " << cfg.budget << ", seed "
                      << cfg.seed << ": eval RMSE " << std::setprecision(6) << r.eval_rmse
                      << " (" << r.labels_used << " labels)\n"
                      << "results in " << cfg.out_dir << '\n';
            return 0;
        }
        if (sweep->parsed()) {
            ExperimentConfig base = load_with_overrides(config_path, ov);
            base.out_dir.clear();  // per-run directories are derived from sweep_out
            run_sweep(base, sw_policies, sw_budgets, sw_seeds, sweep_out);
            std::cout << "sweep written to " << sweep_out << '\n';
            return cmd_report(sweep_out);
        }
        if (synth_export->parsed()) {
            const ExperimentConfig cfg = load_with_overrides(config_path, ov);
            if (!cfg.use_synth)
                throw config_error("synth-export: config does not use a synthetic basin");
            const SynthBasin basin = generate_basin(cfg.synth);
            fs::create_directories(export_out);
            export_basin(basin, export_out);
            std::cout << "wrote features.csv, observations.csv, edges.csv to " << export_out
                      << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
