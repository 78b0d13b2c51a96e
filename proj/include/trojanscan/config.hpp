#pragma once

// Run configuration: one flat key=value file drives every subcommand, and one
// master seed plus fixed stage offsets reproduces a whole experiment.

#include <cstdint>
#include <string>

#include "trojanscan/classifier.hpp"
#include "trojanscan/corpus.hpp"
#include "trojanscan/detector.hpp"
#include "trojanscan/perturber.hpp"
#include "trojanscan/poisoner.hpp"

namespace tscan {

// Stage seeds are master seed + offset. Keeping the offsets distinct means no
// two stages ever share an RNG stream, and any stage can be rerun in
// isolation from just the master seed.
inline constexpr uint64_t kSeedSplit = 1;
inline constexpr uint64_t kSeedInitClean = 2;
inline constexpr uint64_t kSeedTrainClean = 3;
inline constexpr uint64_t kSeedPoison = 4;
inline constexpr uint64_t kSeedInitPoisoned = 5;
inline constexpr uint64_t kSeedTrainPoisoned = 6;
inline constexpr uint64_t kSeedDatasetScan = 7;
inline constexpr uint64_t kSeedModelScan = 8;
inline constexpr uint64_t kSeedRepairInit = 9;
inline constexpr uint64_t kSeedRepairTrain = 10;
inline constexpr uint64_t kSeedSynthTrain = 11;
inline constexpr uint64_t kSeedSynthTest = 12;
inline constexpr uint64_t kSeedAsr = 13;

struct RunConfig {
    // data source: "synthetic" or a file path in `format`
    std::string dataset = "synthetic";
    DataFormat format = DataFormat::Jsonl;
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;
    int min_freq = 1;

    // synthetic corpus shape (used when dataset == "synthetic")
    int synth_train = 2000;
    int synth_test = 500;
    int synth_class_tokens = 25;
    int synth_noise_tokens = 50;
    // Lengths vary mildly. The trigger's share of a mean-pooled embedding is
    // inversely proportional to length, so a wide band smears poisoned rows
    // into a stripe in activation space instead of a compact cluster.
    int synth_min_len = 10;
    int synth_max_len = 14;
    double synth_content = 0.6;

    // classifier + training
    int embed_dim = 32;
    int hidden_dim = 64;
    double learning_rate = 0.25;
    int epochs = 20;
    int batch_size = 32;
    double l2 = 0.0;

    // attack (trigger empty = attack not configured)
    std::string trigger;
    TriggerPosition position = TriggerPosition::End;
    int target_label = 1;
    double rate = 0.05;
    int poison_source = -1; // -1 = all non-target classes

    // model scan
    int scan_source = -1; // -1 = enumerate all ordered class pairs
    int scan_target = -1;
    int phrase_length = 2;
    int n_candidates = 5;
    int n_auxiliary = 50;
    int probe_count = 50;
    int search_budget = 3;
    int k_sub = 200;
    double flip_threshold = 0.75;

    // outlier rule + dataset scan
    int min_points = 3;
    double epsilon = 0.0; // 0 = auto (the "auto" keyword in config files)
    double size_threshold = 0.35;
    double separation_threshold = 2.0;
    int k_pca = 10;
    KMeansMode kmeans_mode = KMeansMode::Lloyd;
    int kmeans_batch = 64;
    int kmeans_iters = 100;

    // run control
    uint64_t seed = 1;
    std::string out_dir = "out";
    int threads = 0; // 0 = library default

    bool has_trigger() const { return !trigger.empty(); }
    uint64_t stage_seed(uint64_t offset) const { return seed + offset; }

    TriggerSpec trigger_spec() const; // throws ConfigError("trigger required") when unset
    TrainConfig train_config(uint64_t stage_seed) const;
    ScanConfig scan_config() const;
    OutlierParams outlier_params() const;
    DatasetScanParams dataset_scan_params() const;
    SynthSpec synth_spec(int n_examples) const;
};

// Parses the key=value dialect: one `key = value` per line, `#` starts a
// comment, values may be double-quoted to carry spaces or `#`. Unknown and
// duplicate keys are errors, as are out-of-range values — every complaint is
// a ConfigError and surfaces as exit code 2.
RunConfig parse_config_text(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::string& path);

// Every effective key/value as a JSON object (epsilon echoes as "auto" when
// automatic), for embedding in reports.
std::string config_echo_json(const RunConfig& config);

} // namespace tscan
