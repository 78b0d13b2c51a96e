#include "trojanscan/commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

#include "trojanscan/evaluation.hpp"
#include "trojanscan/kernels.hpp"
#include "trojanscan/util.hpp"

namespace tscan {
namespace {

using nlohmann::json;

std::string join_out(const std::string& out_dir, const std::string& name) {
    return (std::filesystem::path(out_dir) / name).string();
}

void ensure_out_dir(const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string dataset_file_name(const std::string& stem, DataFormat format) {
    return stem + (format == DataFormat::Csv ? ".csv" : ".jsonl");
}

// ---- vocab and mask files ------------------------------------------------

std::string vocab_to_json(const Vocab& vocab) {
    json j;
    j["schema_version"] = 1;
    j["version"] = kVersion;
    j["content_hash"] = hex64(vocab.content_hash());
    json tokens = json::array();
    for (int id = 2; id < vocab.size; ++id) tokens.push_back(vocab.token_of(id));
    j["tokens"] = std::move(tokens);
    return j.dump(2) + "\n";
}

Vocab vocab_from_json(const std::string& text, const std::string& origin) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("tokens") || !j["tokens"].is_array()) {
        throw std::runtime_error("malformed vocab file: " + origin);
    }
    Vocab vocab;
    for (const auto& tok : j["tokens"]) {
        if (!tok.is_string()) throw std::runtime_error("malformed vocab file: " + origin);
        vocab.add_token(tok.get<std::string>());
    }
    return vocab;
}

std::string poison_mask_to_json(const PoisonedDataset& poisoned) {
    const TriggerSpec& t = poisoned.trigger;
    json j;
    j["schema_version"] = 1;
    j["version"] = kVersion;
    j["mask"] = *poisoned.dataset.poison_mask;
    j["source_indices"] = poisoned.source_indices;
    j["insert_positions"] = poisoned.insert_positions;
    j["trigger"] = {{"words", t.words},
                    {"position", position_name(t.position)},
                    {"target_label", t.target_label},
                    {"injection_rate", t.injection_rate}};
    return j.dump(2) + "\n";
}

std::vector<uint8_t> mask_from_file(const std::string& path) {
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("mask") || !j["mask"].is_array()) {
        throw std::runtime_error("malformed mask file: " + path);
    }
    std::vector<uint8_t> mask;
    mask.reserve(j["mask"].size());
    for (const auto& v : j["mask"]) {
        if (!v.is_number_integer()) throw std::runtime_error("malformed mask file: " + path);
        mask.push_back(v.get<int>() != 0 ? 1 : 0);
    }
    return mask;
}

// ---- shared pipeline pieces ------------------------------------------------

std::vector<std::string> raw_corpus(const LabeledDataset& dataset) {
    std::vector<std::string> corpus;
    corpus.reserve(dataset.size());
    for (const auto& ex : dataset.examples) corpus.push_back(ex.raw_text);
    return corpus;
}

// The probe/eval split for a configured data source: the synthetic test set,
// or the test fraction of a dataset file.
LabeledDataset eval_split(const RunConfig& c, uint64_t master_seed) {
    if (c.dataset == "synthetic") {
        return make_synthetic_two_pool(c.synth_spec(c.synth_test), master_seed + kSeedSynthTest);
    }
    LabeledDataset all = load_dataset(c.dataset, c.format);
    SplitResult sp = split(all, c.train_frac, c.val_frac, c.test_frac, master_seed + kSeedSplit);
    return std::move(sp.test);
}

LabeledDataset train_split(const RunConfig& c, uint64_t master_seed) {
    if (c.dataset == "synthetic") {
        return make_synthetic_two_pool(c.synth_spec(c.synth_train), master_seed + kSeedSynthTrain);
    }
    LabeledDataset all = load_dataset(c.dataset, c.format);
    SplitResult sp = split(all, c.train_frac, c.val_frac, c.test_frac, master_seed + kSeedSplit);
    return std::move(sp.train);
}

// Widens the label space to the model's class count; lets a file that happens
// to miss a class still be scanned. Narrowing is left to the scan's own
// class-count check.
void align_classes(LabeledDataset& dataset, int model_classes) {
    if (dataset.n_classes < model_classes) dataset.n_classes = model_classes;
}

double flag_fraction(const std::vector<uint8_t>& flags) {
    if (flags.empty()) return 0.0;
    long long n = 0;
    for (uint8_t f : flags) n += f != 0;
    return double(n) / double(flags.size());
}

struct StageClock {
    using clock = std::chrono::steady_clock;
    clock::time_point start = clock::now();
    clock::time_point last = start;
    std::vector<std::pair<std::string, double>> stages;

    void lap(const std::string& name) {
        const auto now = clock::now();
        stages.emplace_back(name, std::chrono::duration<double>(now - last).count());
        last = now;
    }
    std::string to_json() const {
        json j;
        j["schema_version"] = 1;
        j["version"] = kVersion;
        json arr = json::array();
        double total = 0.0;
        for (const auto& [name, sec] : stages) {
            arr.push_back({{"name", name}, {"seconds", sec}});
            total += sec;
        }
        j["stages"] = std::move(arr);
        j["total_seconds"] = total;
        return j.dump(2) + "\n";
    }
};

void print_line(const std::string& line) { std::cout << line << "\n"; }

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

} // namespace

void cmd_poison(const RunConfig& config) {
    TriggerSpec trigger = config.trigger_spec();
    LabeledDataset dataset = train_split(config, config.seed);
    Vocab vocab = build_vocab(raw_corpus(dataset), config.min_freq);
    ensure_trigger_in_vocab(trigger, vocab);
    attach_vocab(dataset, vocab);

    PoisonedDataset poisoned = poison_dataset(dataset, trigger, config.stage_seed(kSeedPoison),
                                              config.poison_source);

    ensure_out_dir(config.out_dir);
    const std::string data_path =
        join_out(config.out_dir, dataset_file_name("poisoned", config.format));
    save_dataset(poisoned.dataset, data_path, config.format);
    const std::string mask_path = join_out(config.out_dir, "poison_mask.json");
    atomic_write(mask_path, poison_mask_to_json(poisoned));

    // Materialize the held-out clean split too, so `train --eval` and manual
    // stealth checks have a file to point at.
    save_dataset(eval_split(config, config.seed),
                 join_out(config.out_dir, dataset_file_name("clean_test", config.format)),
                 config.format);

    print_line("poisoned " + std::to_string(poisoned.source_indices.size()) + " of " +
               std::to_string(poisoned.dataset.size()) + " examples -> " + data_path);
}

namespace {

// Shared body of `train` and `repair --retrain`: train a model on a dataset
// file and write <name>.bin / <name>.vocab.json / <name>.loss.json.
void train_into(const RunConfig& config, const TrainFlags& flags, uint64_t init_seed,
                uint64_t train_seed) {
    LabeledDataset dataset = load_dataset(flags.input, config.format);
    const bool poisoned_input = !flags.mask.empty();
    if (poisoned_input) {
        std::vector<uint8_t> mask = mask_from_file(flags.mask);
        if (mask.size() != dataset.size()) {
            throw std::runtime_error("mask length does not match dataset: " + flags.mask);
        }
        dataset.poison_mask = std::move(mask);
    }
    Vocab vocab = build_vocab(raw_corpus(dataset), config.min_freq);
    attach_vocab(dataset, vocab);

    ClassifierParams init = init_classifier(vocab.size, config.embed_dim, config.hidden_dim,
                                            dataset.n_classes, init_seed);
    TrainResult result = train(init, dataset, config.train_config(train_seed));
    result.params.vocab_hash = vocab.content_hash();
    result.params.trained_on_poisoned = poisoned_input;

    ensure_out_dir(config.out_dir);
    const std::string model_path = join_out(config.out_dir, flags.name + ".bin");
    save_model(result.params, model_path);
    atomic_write(join_out(config.out_dir, flags.name + ".vocab.json"), vocab_to_json(vocab));

    json log;
    log["schema_version"] = 1;
    log["version"] = kVersion;
    log["epoch_loss"] = result.epoch_loss;
    log["trained_on_poisoned"] = poisoned_input;
    std::string eval_line;
    if (!flags.eval.empty()) {
        LabeledDataset heldout = load_dataset(flags.eval, config.format);
        attach_vocab(heldout, vocab);
        std::vector<int> predicted = batch_predict(result.params, [&] {
            std::vector<std::vector<int>> seqs;
            seqs.reserve(heldout.size());
            for (const auto& ex : heldout.examples) seqs.push_back(ex.token_ids);
            return seqs;
        }());
        long long hits = 0;
        for (size_t i = 0; i < heldout.size(); ++i) {
            hits += predicted[i] == heldout.examples[i].label;
        }
        const double acc = heldout.size() ? double(hits) / double(heldout.size()) : 0.0;
        log["eval_accuracy"] = acc;
        eval_line = ", eval accuracy " + fmt3(acc);
    }
    atomic_write(join_out(config.out_dir, flags.name + ".loss.json"), log.dump(2) + "\n");

    print_line("trained " + model_path + " (final loss " + fmt3(result.epoch_loss.back()) +
               eval_line + ")");
}

} // namespace

void cmd_train(const RunConfig& config, const TrainFlags& flags) {
    const bool poisoned_input = !flags.mask.empty();
    train_into(config, flags,
               config.stage_seed(poisoned_input ? kSeedInitPoisoned : kSeedInitClean),
               config.stage_seed(poisoned_input ? kSeedTrainPoisoned : kSeedTrainClean));
}

void cmd_scan(const RunConfig& config, const ScanFlags& flags) {
    if (flags.model_level == !flags.dataset.empty()) {
        throw ConfigError("exactly one of --dataset and --model-level is required");
    }
    if (flags.model_level && !flags.mask.empty()) {
        throw ConfigError("--mask requires --dataset");
    }
    ClassifierParams params = load_model(flags.model);

    std::string vocab_path = flags.vocab;
    if (vocab_path.empty()) {
        std::filesystem::path sibling(flags.model);
        sibling.replace_extension(".vocab.json");
        vocab_path = sibling.string();
    }
    Vocab vocab = vocab_from_json(read_file(vocab_path), vocab_path);
    if (params.vocab_hash != 0 && params.vocab_hash != vocab.content_hash()) {
        throw std::runtime_error("vocab does not match model: " + vocab_path);
    }

    ensure_out_dir(config.out_dir);
    DetectionReport report;
    if (!flags.dataset.empty()) {
        LabeledDataset dataset = load_dataset(flags.dataset, config.format);
        attach_vocab(dataset, vocab);
        align_classes(dataset, params.C);
        report = scan_dataset(params, dataset, config.dataset_scan_params(),
                              config.stage_seed(kSeedDatasetScan));
    } else {
        LabeledDataset probes = eval_split(config, config.seed);
        attach_vocab(probes, vocab);
        align_classes(probes, params.C);
        report = scan_model(params, vocab, probes, config.scan_config(), config.outlier_params(),
                            config.k_pca, config.stage_seed(kSeedModelScan));
    }
    const std::string report_path = join_out(config.out_dir, "report.json");
    atomic_write(report_path, report_to_json(report));

    if (!flags.mask.empty()) {
        std::vector<uint8_t> truth = mask_from_file(flags.mask);
        if (truth.size() != report.flags.size()) {
            throw std::runtime_error("mask length does not match dataset: " + flags.mask);
        }
        ConfusionCounts counts = confusion(report.flags, truth);
        MetricsBundle m = metrics(counts, 0.0, 0.0);
        json j;
        j["schema_version"] = 1;
        j["version"] = kVersion;
        j["tp"] = counts.tp;
        j["fp"] = counts.fp;
        j["fn"] = counts.fn;
        j["tn"] = counts.tn;
        j["detection_accuracy"] = m.detection_accuracy;
        j["precision"] = m.precision;
        j["recall"] = m.recall;
        j["f1"] = m.f1;
        atomic_write(join_out(config.out_dir, "scan_metrics.json"), j.dump(2) + "\n");
    }

    if (report.mode == "model_scan") {
        print_line("verdict: " + report.verdict + " -> " + report_path);
    } else {
        print_line("flagged " + std::to_string(static_cast<long long>(
                       flag_fraction(report.flags) * double(report.flags.size()) + 0.5)) +
                   " of " + std::to_string(report.flags.size()) + " examples -> " + report_path);
    }
}

void cmd_repair(const RunConfig& config, const RepairFlags& flags) {
    LabeledDataset dataset = load_dataset(flags.input, config.format);
    DetectionReport report = report_from_json(read_file(flags.report));
    LabeledDataset repaired = repair(dataset, report);

    ensure_out_dir(config.out_dir);
    const std::string repaired_path =
        join_out(config.out_dir, dataset_file_name("repaired", config.format));
    save_dataset(repaired, repaired_path, config.format);
    print_line("removed " + std::to_string(dataset.size() - repaired.size()) + " of " +
               std::to_string(dataset.size()) + " examples -> " + repaired_path);

    if (flags.retrain) {
        TrainFlags retrain;
        retrain.input = repaired_path;
        retrain.name = "model_repaired";
        train_into(config, retrain, config.stage_seed(kSeedRepairInit),
                   config.stage_seed(kSeedRepairTrain));
    }
}

namespace {

struct BenchRow {
    uint64_t seed = 0;
    size_t n_train = 0;
    size_t n_test = 0;
    size_t n_poisoned = 0;
    size_t n_removed = 0;
    double asr_poisoned = 0.0;
    double asr_clean_model = 0.0;
    double acc_clean = 0.0;
    double acc_poisoned = 0.0;
    double acc_repaired = 0.0;
    double asr_repaired = 0.0;
    double ds_f1 = 0.0;
    double clean_flagged = 0.0;
    std::string verdict_poisoned;
    std::string verdict_clean;
    std::string report_path;
};

BenchRow run_bench_once(const RunConfig& c, uint64_t seed, const std::string& out) {
    ensure_out_dir(out);
    StageClock clock;
    std::map<std::string, std::string> artifacts;
    auto artifact = [&](const std::string& name, const std::string& file) {
        const std::string path = join_out(out, file);
        artifacts[name] = path;
        return path;
    };

    // data + vocab
    LabeledDataset train_ds;
    LabeledDataset test_ds;
    if (c.dataset == "synthetic") {
        train_ds = make_synthetic_two_pool(c.synth_spec(c.synth_train), seed + kSeedSynthTrain);
        test_ds = make_synthetic_two_pool(c.synth_spec(c.synth_test), seed + kSeedSynthTest);
    } else {
        LabeledDataset all = load_dataset(c.dataset, c.format);
        SplitResult sp = split(all, c.train_frac, c.val_frac, c.test_frac, seed + kSeedSplit);
        train_ds = std::move(sp.train);
        test_ds = std::move(sp.test);
    }
    Vocab vocab = build_vocab(raw_corpus(train_ds), c.min_freq);
    TriggerSpec trigger = c.trigger_spec();
    // One shared vocabulary (clean corpus plus trigger words) keeps every
    // model in the run over the same id space, so activations and ASR numbers
    // are directly comparable.
    ensure_trigger_in_vocab(trigger, vocab);
    attach_vocab(train_ds, vocab);
    attach_vocab(test_ds, vocab);
    atomic_write(artifact("vocab", "vocab.json"), vocab_to_json(vocab));
    clock.lap("data");

    // clean baseline model
    const uint64_t hash = vocab.content_hash();
    ClassifierParams init_clean = init_classifier(vocab.size, c.embed_dim, c.hidden_dim,
                                                  train_ds.n_classes, seed + kSeedInitClean);
    TrainResult clean_tr = train(init_clean, train_ds, c.train_config(seed + kSeedTrainClean));
    ClassifierParams model_clean = std::move(clean_tr.params);
    model_clean.vocab_hash = hash;
    save_model(model_clean, artifact("model_clean", "model_clean.bin"));
    clock.lap("train_clean");

    // poison + backdoored model
    PoisonedDataset poisoned = poison_dataset(train_ds, trigger, seed + kSeedPoison,
                                              c.poison_source);
    save_dataset(poisoned.dataset,
                 artifact("poisoned_dataset", dataset_file_name("poisoned", c.format)), c.format);
    atomic_write(artifact("poison_mask", "poison_mask.json"), poison_mask_to_json(poisoned));
    ClassifierParams init_poisoned = init_classifier(vocab.size, c.embed_dim, c.hidden_dim,
                                                     train_ds.n_classes, seed + kSeedInitPoisoned);
    TrainResult poisoned_tr =
        train(init_poisoned, poisoned.dataset, c.train_config(seed + kSeedTrainPoisoned));
    ClassifierParams model_poisoned = std::move(poisoned_tr.params);
    model_poisoned.vocab_hash = hash;
    model_poisoned.trained_on_poisoned = true;
    save_model(model_poisoned, artifact("model_poisoned", "model_poisoned.bin"));
    clock.lap("train_poisoned");

    // attack metrics
    BenchRow row;
    row.seed = seed;
    row.n_train = train_ds.size();
    row.n_test = test_ds.size();
    row.n_poisoned = poisoned.source_indices.size();
    row.asr_poisoned = attack_success_rate(model_poisoned, test_ds.examples, trigger,
                                           seed + kSeedAsr);
    row.asr_clean_model = attack_success_rate(model_clean, test_ds.examples, trigger,
                                              seed + kSeedAsr);
    std::tie(row.acc_clean, row.acc_poisoned) =
        clean_accuracy_delta(model_clean, model_poisoned, test_ds.examples);
    clock.lap("attack_eval");

    // dataset-level scans: the poisoned set and the clean control
    DetectionReport ds_scan_poisoned = scan_dataset(model_poisoned, poisoned.dataset,
                                                    c.dataset_scan_params(),
                                                    seed + kSeedDatasetScan);
    atomic_write(artifact("scan_dataset_poisoned", "scan_dataset_poisoned.json"),
                 report_to_json(ds_scan_poisoned));
    ConfusionCounts counts = confusion(ds_scan_poisoned.flags, *poisoned.dataset.poison_mask);
    MetricsBundle ds_metrics = metrics(counts, row.asr_poisoned, row.acc_poisoned);
    row.ds_f1 = ds_metrics.f1;
    DetectionReport ds_scan_clean = scan_dataset(model_clean, train_ds, c.dataset_scan_params(),
                                                 seed + kSeedDatasetScan);
    atomic_write(artifact("scan_dataset_clean", "scan_dataset_clean.json"),
                 report_to_json(ds_scan_clean));
    row.clean_flagged = flag_fraction(ds_scan_clean.flags);
    clock.lap("scan_dataset");

    // model-level scans of both models
    DetectionReport m_scan_poisoned = scan_model(model_poisoned, vocab, test_ds, c.scan_config(),
                                                 c.outlier_params(), c.k_pca,
                                                 seed + kSeedModelScan);
    atomic_write(artifact("scan_model_poisoned", "scan_model_poisoned.json"),
                 report_to_json(m_scan_poisoned));
    row.verdict_poisoned = m_scan_poisoned.verdict;
    DetectionReport m_scan_clean = scan_model(model_clean, vocab, test_ds, c.scan_config(),
                                              c.outlier_params(), c.k_pca, seed + kSeedModelScan);
    atomic_write(artifact("scan_model_clean", "scan_model_clean.json"),
                 report_to_json(m_scan_clean));
    row.verdict_clean = m_scan_clean.verdict;
    clock.lap("scan_model");

    // repair + retrain
    LabeledDataset repaired = repair(poisoned.dataset, ds_scan_poisoned);
    row.n_removed = poisoned.dataset.size() - repaired.size();
    save_dataset(repaired, artifact("repaired_dataset", dataset_file_name("repaired", c.format)),
                 c.format);
    ClassifierParams init_repaired = init_classifier(vocab.size, c.embed_dim, c.hidden_dim,
                                                     train_ds.n_classes, seed + kSeedRepairInit);
    TrainResult repaired_tr = train(init_repaired, repaired,
                                    c.train_config(seed + kSeedRepairTrain));
    ClassifierParams model_repaired = std::move(repaired_tr.params);
    model_repaired.vocab_hash = hash;
    save_model(model_repaired, artifact("model_repaired", "model_repaired.bin"));
    row.asr_repaired = attack_success_rate(model_repaired, test_ds.examples, trigger,
                                           seed + kSeedAsr);
    row.acc_repaired = clean_accuracy_delta(model_clean, model_repaired, test_ds.examples).second;
    clock.lap("repair");

    // timings are measured, so they live in their own artifact; the report
    // itself stays byte-stable for a given config.
    atomic_write(artifact("timings", "timings.json"), clock.to_json());

    json body;
    body["config"] = json::parse(config_echo_json(c));
    body["seed"] = seed;
    body["seeds"] = {{"split", seed + kSeedSplit},
                     {"synth_train", seed + kSeedSynthTrain},
                     {"synth_test", seed + kSeedSynthTest},
                     {"init_clean", seed + kSeedInitClean},
                     {"train_clean", seed + kSeedTrainClean},
                     {"poison", seed + kSeedPoison},
                     {"init_poisoned", seed + kSeedInitPoisoned},
                     {"train_poisoned", seed + kSeedTrainPoisoned},
                     {"dataset_scan", seed + kSeedDatasetScan},
                     {"model_scan", seed + kSeedModelScan},
                     {"repair_init", seed + kSeedRepairInit},
                     {"repair_train", seed + kSeedRepairTrain},
                     {"asr", seed + kSeedAsr}};
    body["data"] = {{"n_train", row.n_train},
                    {"n_test", row.n_test},
                    {"n_classes", train_ds.n_classes},
                    {"vocab_size", vocab.size},
                    {"n_poisoned", row.n_poisoned}};
    body["attack"] = {{"asr_poisoned_model", row.asr_poisoned},
                      {"asr_clean_model", row.asr_clean_model},
                      {"clean_accuracy_clean_model", row.acc_clean},
                      {"clean_accuracy_poisoned_model", row.acc_poisoned},
                      {"accuracy_drop", row.acc_clean - row.acc_poisoned}};
    body["dataset_scan"] = {{"tp", counts.tp},
                            {"fp", counts.fp},
                            {"fn", counts.fn},
                            {"tn", counts.tn},
                            {"detection_accuracy", ds_metrics.detection_accuracy},
                            {"precision", ds_metrics.precision},
                            {"recall", ds_metrics.recall},
                            {"f1", ds_metrics.f1},
                            {"clean_control_flagged_fraction", row.clean_flagged}};
    body["model_scan"] = {{"verdict_poisoned_model", row.verdict_poisoned},
                          {"verdict_clean_model", row.verdict_clean}};
    body["repair"] = {{"n_removed", row.n_removed},
                      {"asr_after_repair", row.asr_repaired},
                      {"clean_accuracy_after_repair", row.acc_repaired}};
    body["training"] = {{"clean_final_loss", clean_tr.epoch_loss.back()},
                        {"poisoned_final_loss", poisoned_tr.epoch_loss.back()},
                        {"repaired_final_loss", repaired_tr.epoch_loss.back()}};

    row.report_path = join_out(out, "report.json");
    atomic_write(row.report_path, experiment_report(artifacts, body.dump()));

    print_line("bench seed " + std::to_string(seed) + ": asr " + fmt3(row.asr_poisoned) +
               ", clean drop " + fmt3(row.acc_clean - row.acc_poisoned) + ", dataset-scan f1 " +
               fmt3(row.ds_f1) + ", verdicts " + row.verdict_poisoned + "/" + row.verdict_clean +
               ", repaired asr " + fmt3(row.asr_repaired));
    print_line("report: " + row.report_path);
    return row;
}

} // namespace

void cmd_bench(const RunConfig& config, const BenchFlags& flags) {
    if (flags.seeds < 1) throw ConfigError("--seeds must be at least 1");
    if (flags.seeds == 1) {
        run_bench_once(config, config.seed, config.out_dir);
        return;
    }
    std::vector<BenchRow> rows;
    rows.reserve(static_cast<size_t>(flags.seeds));
    for (int k = 0; k < flags.seeds; ++k) {
        const uint64_t seed = config.seed + static_cast<uint64_t>(k);
        const std::string sub = join_out(config.out_dir, "seed_" + std::to_string(seed));
        rows.push_back(run_bench_once(config, seed, sub));
    }

    json agg;
    agg["schema_version"] = 1;
    agg["version"] = kVersion;
    agg["n_seeds"] = flags.seeds;
    json per_seed = json::array();
    double asr_sum = 0.0, f1_sum = 0.0, drop_sum = 0.0, repaired_sum = 0.0, flagged_sum = 0.0;
    int trojan_hits = 0, clean_hits = 0;
    for (const BenchRow& r : rows) {
        per_seed.push_back({{"seed", r.seed},
                            {"asr_poisoned_model", r.asr_poisoned},
                            {"accuracy_drop", r.acc_clean - r.acc_poisoned},
                            {"dataset_scan_f1", r.ds_f1},
                            {"clean_control_flagged_fraction", r.clean_flagged},
                            {"verdict_poisoned_model", r.verdict_poisoned},
                            {"verdict_clean_model", r.verdict_clean},
                            {"asr_after_repair", r.asr_repaired},
                            {"report", r.report_path}});
        asr_sum += r.asr_poisoned;
        f1_sum += r.ds_f1;
        drop_sum += r.acc_clean - r.acc_poisoned;
        repaired_sum += r.asr_repaired;
        flagged_sum += r.clean_flagged;
        trojan_hits += r.verdict_poisoned == "trojan";
        clean_hits += r.verdict_clean == "clean";
    }
    const double n = double(rows.size());
    agg["per_seed"] = std::move(per_seed);
    agg["mean"] = {{"asr_poisoned_model", asr_sum / n},
                   {"dataset_scan_f1", f1_sum / n},
                   {"accuracy_drop", drop_sum / n},
                   {"asr_after_repair", repaired_sum / n},
                   {"clean_control_flagged_fraction", flagged_sum / n}};
    agg["verdict_counts"] = {{"poisoned_model_trojan", trojan_hits},
                             {"clean_model_clean", clean_hits}};
    const std::string agg_path = join_out(config.out_dir, "aggregate.json");
    atomic_write(agg_path, agg.dump(2) + "\n");
    print_line("aggregate: " + agg_path);
}

} // namespace tscan
