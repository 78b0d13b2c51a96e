// trojan-scan: poison / train / scan / repair / bench over one config file.
// Exit codes: 0 success, 1 runtime error, 2 usage or config error.

#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "trojanscan/commands.hpp"
#include "trojanscan/config.hpp"
#include "trojanscan/kernels.hpp"
#include "trojanscan/util.hpp"

namespace {

tscan::RunConfig load_run_config(const std::string& path) {
    tscan::RunConfig config = tscan::load_config(path);
    if (const char* out = std::getenv("TROJAN_SCAN_OUT"); out != nullptr && *out != '\0') {
        config.out_dir = out;
    }
    tscan::set_threads(config.threads);
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"backdoor poisoning workbench: attack, detect, repair"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "print help for every subcommand");
    // --config may come before or after the subcommand name.
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "run configuration file")
        ->required()
        ->envname("TROJAN_SCAN_CONFIG");

    auto* poison = app.add_subcommand("poison", "inject a trigger into the training set");

    auto* train = app.add_subcommand("train", "train a classifier on a dataset file");
    tscan::TrainFlags train_flags;
    train->add_option("--in", train_flags.input, "dataset to train on")->required();
    train->add_option("--mask", train_flags.mask,
                      "poison mask for the input; marks the model trained-on-poisoned");
    train->add_option("--eval", train_flags.eval, "held-out dataset for an accuracy line");
    train->add_option("--name", train_flags.name, "artifact stem (default: model)");

    auto* scan = app.add_subcommand("scan", "scan a dataset or a model for a backdoor");
    tscan::ScanFlags scan_flags;
    scan->add_option("--model", scan_flags.model, "model file to scan with")->required();
    scan->add_option("--dataset", scan_flags.dataset, "dataset file to scan");
    scan->add_flag("--model-level", scan_flags.model_level,
                   "scan the model itself via perturbation search");
    scan->add_option("--vocab", scan_flags.vocab,
                     "vocab file (default: <model stem>.vocab.json)");
    scan->add_option("--mask", scan_flags.mask,
                     "ground-truth poison mask; also writes scan_metrics.json");

    auto* repair = app.add_subcommand("repair", "drop flagged examples from a dataset");
    tscan::RepairFlags repair_flags;
    repair->add_option("--in", repair_flags.input, "dataset the report was produced from")
        ->required();
    repair->add_option("--report", repair_flags.report, "dataset-scan report")->required();
    repair->add_flag("--retrain", repair_flags.retrain, "train a fresh model on the repaired set");

    auto* bench = app.add_subcommand("bench", "full attack -> scan -> repair loop with a report");
    tscan::BenchFlags bench_flags;
    bench->add_option("--seeds", bench_flags.seeds, "number of seeded runs (default: 1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // CLI11 prints its own message; --help lands here with exit code 0.
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const tscan::RunConfig config = load_run_config(config_path);
        if (poison->parsed()) tscan::cmd_poison(config);
        else if (train->parsed()) tscan::cmd_train(config, train_flags);
        else if (scan->parsed()) tscan::cmd_scan(config, scan_flags);
        else if (repair->parsed()) tscan::cmd_repair(config, repair_flags);
        else if (bench->parsed()) tscan::cmd_bench(config, bench_flags);
    } catch (const tscan::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
