#pragma once

// Subcommand bodies behind the CLI. Each takes the parsed config plus its own
// flags, writes artifacts into the output directory, and throws on failure —
// the CLI entry point maps exceptions to exit codes.

#include <string>

#include "trojanscan/config.hpp"

namespace tscan {

struct TrainFlags {
    std::string input;          // dataset to train on (required)
    std::string mask;           // poison-mask JSON; marks the model trained-on-poisoned
    std::string eval;           // held-out dataset for an accuracy line
    std::string name = "model"; // artifact stem: <name>.bin / <name>.vocab.json / <name>.loss.json
};

struct ScanFlags {
    std::string model;       // model file (required)
    std::string dataset;     // dataset-scan input; exclusive with model_level
    bool model_level = false;
    std::string vocab;       // default: <model stem>.vocab.json next to the model
    std::string mask;        // ground-truth mask -> scan_metrics.json (dataset scans only)
};

struct RepairFlags {
    std::string input;  // dataset the report was produced from (required)
    std::string report; // dataset-scan report (required)
    bool retrain = false;
};

struct BenchFlags {
    int seeds = 1; // >1 fans out into out_dir/seed_<s>/ plus an aggregate
};

void cmd_poison(const RunConfig& config);
void cmd_train(const RunConfig& config, const TrainFlags& flags);
void cmd_scan(const RunConfig& config, const ScanFlags& flags);
void cmd_repair(const RunConfig& config, const RepairFlags& flags);
void cmd_bench(const RunConfig& config, const BenchFlags& flags);

} // namespace tscan
