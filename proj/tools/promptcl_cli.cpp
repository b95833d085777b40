// Command-line driver: run experiments, sweep the L x D grid, run the
// ablation suite, and render comparison reports from persisted records.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "promptcl/promptcl.hpp"

namespace fs = std::filesystem;
using namespace promptcl;

namespace {

RunConfig load_config(const std::string& path, const std::string& output_override,
                      const std::string& seed_override) {
    RunConfig cfg = config_from_json(nlohmann::json::parse(read_file(path)));
    if (!output_override.empty())
        cfg.output_dir = output_override;
    if (!seed_override.empty()) {
        cfg.seeds.clear();
        std::string token;
        std::istringstream ss(seed_override);
        while (std::getline(ss, token, ','))
            cfg.seeds.push_back(std::stoull(token));
    }
    cfg.validate();
    return cfg;
}

int do_run(const RunConfig& cfg) {
    PreparedExperiment prep = prepare_experiment(cfg);
    RunRecord record = execute_run(cfg, prep);
    persist_record(record, cfg.output_dir);
    std::cout << "run: " << ablation_name(cfg.ablation) << " L=" << cfg.prompt_length
              << " D=" << cfg.prompt_depth << " seeds=" << cfg.seeds.size() << "\n";
    for (size_t t = 0; t < record.aggregate.mean_accuracies.size(); ++t)
        std::cout << "  A_" << t << " = " << format_fixed(record.aggregate.mean_accuracies[t], 2)
                  << "\n";
    std::cout << "  Avg = " << format_fixed(record.aggregate.mean_avg, 2)
              << "  PD = " << format_fixed(record.aggregate.mean_pd, 2) << "\n";
    std::cout << "wrote " << (fs::path(cfg.output_dir) / "record.json").string() << "\n";
    return 0;
}

int do_grid(const RunConfig& cfg) {
    PreparedExperiment prep = prepare_experiment(cfg);
    GridResult grid = run_grid(cfg, prep);
    atomic_write_file(fs::path(cfg.output_dir) / "grid.csv", grid_csv(grid));
    atomic_write_file(fs::path(cfg.output_dir) / "grid.txt", grid_table(grid));
    std::cout << grid_table(grid);
    std::cout << "best cell: L=" << grid.best_length << " D=" << grid.best_depth << "\n";
    std::cout << "wrote " << (fs::path(cfg.output_dir) / "grid.csv").string() << "\n";
    return 0;
}

int do_ablation(const RunConfig& cfg) {
    PreparedExperiment prep = prepare_experiment(cfg);
    AblationResult res = run_ablation_suite(cfg, prep);
    atomic_write_file(fs::path(cfg.output_dir) / "ablation.csv", ablation_csv(res));
    atomic_write_file(fs::path(cfg.output_dir) / "ablation.svg", ablation_plot_svg(res));
    std::vector<ReportRow> rows;
    for (const auto& [ablation, rec] : res.records) {
        rows.push_back(report_row_of(ablation_name(ablation), rec));
        persist_record(rec, fs::path(cfg.output_dir) / ablation_name(ablation));
    }
    std::cout << report_table(rows);
    std::cout << "wrote " << (fs::path(cfg.output_dir) / "ablation.svg").string() << "\n";
    return 0;
}

int do_report(const std::string& records_dir, const std::string& output_dir) {
    std::vector<ReportRow> rows;
    std::vector<fs::path> paths;
    for (const auto& entry : fs::recursive_directory_iterator(records_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(p));
        } catch (const nlohmann::json::exception&) {
            continue;
        }
        if (!j.contains("aggregate"))
            continue;
        RunRecord rec = record_from_json(j);
        std::string name = p.parent_path().filename().string();
        if (name.empty())
            name = p.stem().string();
        rows.push_back(report_row_of(name, rec));
    }
    if (rows.empty()) {
        std::cerr << "report: no records found under " << records_dir << "\n";
        return 1;
    }
    std::cout << report_table(rows);
    if (!output_dir.empty())
        atomic_write_file(fs::path(output_dir) / "report.csv", report_csv(rows));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot class-incremental prompt tuning on a frozen dual encoder"};
    app.require_subcommand(1);

    std::string config_path, output_override, seed_override, records_dir, report_output;

    auto* run = app.add_subcommand("run", "execute one configuration across its seeds");
    run->add_option("--config", config_path, "JSON run configuration")->required();
    run->add_option("--output", output_override, "override output directory");
    run->add_option("--seed", seed_override, "comma-separated seed list override");

    auto* grid = app.add_subcommand("grid", "sweep the L x D grid from the config");
    grid->add_option("--config", config_path, "JSON run configuration")->required();
    grid->add_option("--output", output_override, "override output directory");
    grid->add_option("--seed", seed_override, "comma-separated seed list override");

    auto* ablation = app.add_subcommand("ablation", "run full model plus the three ablations");
    ablation->add_option("--config", config_path, "JSON run configuration")->required();
    ablation->add_option("--output", output_override, "override output directory");
    ablation->add_option("--seed", seed_override, "comma-separated seed list override");

    auto* report = app.add_subcommand("report", "tabulate persisted run records");
    report->add_option("--records", records_dir, "directory containing record JSON files")
        ->required();
    report->add_option("--output", report_output, "directory for report.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (report->parsed())
            return do_report(records_dir, report_output);
        RunConfig cfg = load_config(config_path, output_override, seed_override);
        if (run->parsed())
            return do_run(cfg);
        if (grid->parsed())
            return do_grid(cfg);
        if (ablation->parsed())
            return do_ablation(cfg);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
