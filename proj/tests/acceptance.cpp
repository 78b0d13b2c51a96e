// Acceptance gate: eight end-to-end criteria, one [PASS]/[FAIL] line each.
// Runs the real library (no mocks) against independent oracles and the full
// attack -> scan -> repair pipeline at its default scale. Exits nonzero if
// any criterion fails, so CI can gate on this binary alone.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "trojanscan/classifier.hpp"
#include "trojanscan/commands.hpp"
#include "trojanscan/config.hpp"
#include "trojanscan/corpus.hpp"
#include "trojanscan/detector.hpp"
#include "trojanscan/evaluation.hpp"
#include "trojanscan/poisoner.hpp"
#include "trojanscan/rng.hpp"

#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace tscan;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// The attack/defense criteria all run on the same configuration the tool
// ships with; only the trigger phrase is filled in.
RunConfig acceptance_config(uint64_t seed) {
    RunConfig c;
    c.trigger = "zeta quirk";
    c.seed = seed;
    return c;
}

// One full seeded attack: clean and backdoored model trained on the synthetic
// corpus, with the accuracy/flip numbers the criteria below read off.
struct AttackRun {
    RunConfig config;
    Vocab vocab;
    TriggerSpec trigger;
    LabeledDataset train_clean;
    LabeledDataset test_set;
    PoisonedDataset poisoned;
    ClassifierParams model_clean;
    ClassifierParams model_poisoned;
    double acc_clean = 0.0;
    double acc_poisoned = 0.0;
    double asr = 0.0;
};

AttackRun run_attack(uint64_t seed) {
    AttackRun r;
    r.config = acceptance_config(seed);
    const RunConfig& c = r.config;

    r.train_clean = make_synthetic_two_pool(c.synth_spec(c.synth_train), seed + kSeedSynthTrain);
    r.test_set = make_synthetic_two_pool(c.synth_spec(c.synth_test), seed + kSeedSynthTest);
    std::vector<std::string> corpus;
    corpus.reserve(r.train_clean.size());
    for (const auto& e : r.train_clean.examples) corpus.push_back(e.raw_text);
    r.vocab = build_vocab(corpus, c.min_freq);
    r.trigger = c.trigger_spec();
    ensure_trigger_in_vocab(r.trigger, r.vocab);
    attach_vocab(r.train_clean, r.vocab);
    attach_vocab(r.test_set, r.vocab);

    ClassifierParams init_clean = init_classifier(r.vocab.size, c.embed_dim, c.hidden_dim,
                                                  r.train_clean.n_classes, seed + kSeedInitClean);
    r.model_clean = train(init_clean, r.train_clean, c.train_config(seed + kSeedTrainClean)).params;

    r.poisoned = poison_dataset(r.train_clean, r.trigger, seed + kSeedPoison, c.poison_source);
    ClassifierParams init_poisoned =
        init_classifier(r.vocab.size, c.embed_dim, c.hidden_dim, r.train_clean.n_classes,
                        seed + kSeedInitPoisoned);
    r.model_poisoned =
        train(init_poisoned, r.poisoned.dataset, c.train_config(seed + kSeedTrainPoisoned)).params;

    std::tie(r.acc_clean, r.acc_poisoned) =
        clean_accuracy_delta(r.model_clean, r.model_poisoned, r.test_set.examples);
    r.asr = attack_success_rate(r.model_poisoned, r.test_set.examples, r.trigger, seed + kSeedAsr);
    return r;
}

Mat random_mat(int n, int d, uint64_t seed, double scale = 1.0) {
    SplitMix64 rng(seed);
    Mat x(n, d);
    for (double& v : x.data) v = scale * (2.0 * rng.next_double() - 1.0);
    return x;
}

// --- 1: kernels vs independent oracles ------------------------------------

Outcome criterion_kernels() {
    // PCA against a cyclic-Jacobi eigensolver. Power iteration converges
    // geometrically in the eigenvalue ratio, so matrices are redrawn until
    // the top-(k+1) spectrum has clear gaps; without that the two solvers
    // agree in subspace but not coordinatewise at 1e-6.
    int pca_ok = 0;
    uint64_t draw = 1000;
    for (int trial = 0; trial < 50; ++trial) {
        Mat x;
        int k = 0;
        oracle::EigenDecomposition eig;
        for (;;) {
            SplitMix64 rng(draw++);
            int n = 8 + static_cast<int>(rng.next_below(43));  // 8..50
            int d = 2 + static_cast<int>(rng.next_below(19));  // 2..20
            k = 1 + static_cast<int>(rng.next_below(
                        static_cast<uint64_t>(std::min(5, d - 1))));
            x = random_mat(n, d, draw++);
            eig = oracle::jacobi_eigen(oracle::covariance(x));
            bool gapped = eig.values[static_cast<size_t>(k) - 1] > 1e-4;
            for (int i = 0; i < k && gapped; ++i)
                gapped = eig.values[static_cast<size_t>(i) + 1] <=
                         0.97 * eig.values[static_cast<size_t>(i)];
            if (gapped) break;
        }
        PcaModel pca = fit_pca(x, k);
        bool match = true;
        for (int c = 0; c < k && match; ++c) {
            match = std::abs(pca.explained_variance[static_cast<size_t>(c)] -
                             eig.values[static_cast<size_t>(c)]) <= 1e-6;
            for (int j = 0; j < x.cols && match; ++j)
                match = std::abs(pca.components.at(c, j) - eig.vectors.at(c, j)) <= 1e-6;
        }
        pca_ok += match;
    }

    // Density outliers against a brute-force O(n^2) neighborhood count,
    // at the epsilon the production rule actually used (half the sets
    // exercise the auto-epsilon path).
    int outlier_ok = 0;
    for (int trial = 0; trial < 100; ++trial) {
        SplitMix64 rng(2000 + static_cast<uint64_t>(trial));
        int n = 5 + static_cast<int>(rng.next_below(56)); // 5..60
        int d = 1 + static_cast<int>(rng.next_below(6));  // 1..6
        Mat x = random_mat(n, d, 3000 + static_cast<uint64_t>(trial), 2.0);
        OutlierParams params;
        params.min_points = 3;
        params.epsilon = (trial % 2 == 0) ? 0.0 : 0.5 + 1.5 * rng.next_double();
        OutlierResult got = detect_outliers(x, params);
        std::vector<int> got_flags(got.flags.begin(), got.flags.end());
        bool match = got.neighbor_count == oracle::neighbor_counts(x, got.epsilon_used) &&
                     got_flags == oracle::outlier_flags(x, got.epsilon_used, params.min_points);
        outlier_ok += match;
    }

    // Lloyd's invariant, checked exhaustively: every row sits with its
    // nearest final centroid, ties to the lowest index.
    int lloyd_ok = 0;
    for (int trial = 0; trial < 20; ++trial) {
        SplitMix64 rng(4000 + static_cast<uint64_t>(trial));
        int n = 10 + static_cast<int>(rng.next_below(51)); // 10..60
        int d = 2 + static_cast<int>(rng.next_below(5));   // 2..6
        int k = 2 + static_cast<int>(rng.next_below(4));   // 2..5
        Mat x = random_mat(n, d, 5000 + static_cast<uint64_t>(trial), 3.0);
        KMeansModel km = kmeans(x, k, KMeansMode::Lloyd, 64, 100, 6000 + trial);
        bool match = true;
        for (int i = 0; i < n && match; ++i) {
            int best = 0;
            double best_d = 1e300;
            for (int c = 0; c < k; ++c) {
                double s = 0.0;
                for (int j = 0; j < d; ++j) {
                    double t = x.at(i, j) - km.centroids.at(c, j);
                    s += t * t;
                }
                if (s < best_d) {
                    best_d = s;
                    best = c;
                }
            }
            match = km.assignments[static_cast<size_t>(i)] == best;
        }
        lloyd_ok += match;
    }

    Outcome out;
    out.ok = pca_ok == 50 && outlier_ok == 100 && lloyd_ok == 20;
    out.detail = "pca-vs-jacobi " + std::to_string(pca_ok) + "/50, outliers " +
                 std::to_string(outlier_ok) + "/100 exact, lloyd nearest-centroid " +
                 std::to_string(lloyd_ok) + "/20";
    return out;
}

// --- 2: analytic gradients vs finite differences ---------------------------

Outcome criterion_gradients() {
    ClassifierParams p = init_classifier(8, 4, 5, 3, 7);
    LabeledDataset d;
    d.n_classes = 3;
    d.examples = {
        {"", {2, 3, 4}, 0},
        {"", {5, 6, 7, 2}, 1},
        {"", {3, 3, 6}, 2}, // repeated token: embedding row gets two pulls
        {"", {7}, 1},
    };
    std::vector<const Example*> batch;
    for (const auto& e : d.examples) batch.push_back(&e);
    const double l2 = 0.01;

    Gradients g = batch_gradients(p, batch, l2);
    std::vector<double*> coords;
    std::vector<const double*> grads;
    auto add = [&](Mat& m, const Mat& gm) {
        for (size_t i = 0; i < m.data.size(); ++i) {
            coords.push_back(&m.data[i]);
            grads.push_back(&gm.data[i]);
        }
    };
    add(p.embedding, g.embedding);
    add(p.W1, g.W1);
    for (size_t i = 0; i < p.b1.size(); ++i) {
        coords.push_back(&p.b1[i]);
        grads.push_back(&g.b1[i]);
    }
    add(p.W2, g.W2);
    for (size_t i = 0; i < p.b2.size(); ++i) {
        coords.push_back(&p.b2[i]);
        grads.push_back(&g.b2[i]);
    }

    const double delta = 1e-4;
    double worst = 0.0;
    for (size_t i = 0; i < coords.size(); ++i) {
        double saved = *coords[i];
        *coords[i] = saved + delta;
        double up = batch_loss(p, batch, l2);
        *coords[i] = saved - delta;
        double down = batch_loss(p, batch, l2);
        *coords[i] = saved;
        double fd = (up - down) / (2.0 * delta);
        double rel = std::abs(fd - *grads[i]) /
                     std::max({std::abs(fd), std::abs(*grads[i]), 1e-8});
        worst = std::max(worst, rel);
    }

    char err[32];
    std::snprintf(err, sizeof err, "%.2e", worst);
    Outcome out;
    out.ok = coords.size() >= 50 && worst <= 1e-4;
    out.detail = std::to_string(coords.size()) + " coordinates, max relative error " + err +
                 " <= 1e-4";
    return out;
}

// --- 3: the attack works and stays stealthy --------------------------------

Outcome criterion_attack(const AttackRun& run) {
    double drop = std::abs(run.acc_clean - run.acc_poisoned);
    Outcome out;
    out.ok = drop <= 0.03 && run.asr >= 0.9;
    out.detail = "clean accuracy " + fmt(run.acc_clean) + " vs poisoned " +
                 fmt(run.acc_poisoned) + " (|delta| " + fmt(drop) + " <= 0.030), asr " +
                 fmt(run.asr) + " >= 0.900";
    return out;
}

// --- 4: dataset scan finds the poison, leaves clean data alone -------------

Outcome criterion_dataset_scan() {
    ConfusionCounts pooled;
    long long control_flagged = 0, control_total = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        AttackRun run = run_attack(seed);
        const RunConfig& c = run.config;

        DetectionReport rep = scan_dataset(run.model_poisoned, run.poisoned.dataset,
                                           c.dataset_scan_params(), seed + kSeedDatasetScan);
        ConfusionCounts counts = confusion(rep.flags, *run.poisoned.dataset.poison_mask);
        pooled.tp += counts.tp;
        pooled.fp += counts.fp;
        pooled.fn += counts.fn;
        pooled.tn += counts.tn;

        DetectionReport control = scan_dataset(run.model_clean, run.train_clean,
                                               c.dataset_scan_params(), seed + kSeedDatasetScan);
        for (uint8_t f : control.flags) control_flagged += f != 0;
        control_total += static_cast<long long>(control.flags.size());
    }
    double f1 = metrics(pooled, 0.0, 0.0).f1;
    double control_frac = static_cast<double>(control_flagged) / static_cast<double>(control_total);

    Outcome out;
    out.ok = f1 >= 0.9 && control_frac <= 0.05;
    out.detail = "pooled f1 " + fmt(f1) + " >= 0.900 (tp " + std::to_string(pooled.tp) + ", fp " +
                 std::to_string(pooled.fp) + ", fn " + std::to_string(pooled.fn) +
                 "), clean control flagged " + fmt(control_frac) + " <= 0.050, 5 seeds";
    return out;
}

// --- 5: model scan separates backdoored from clean --------------------------

Outcome criterion_model_scan() {
    int trojan_hits = 0, clean_hits = 0;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        AttackRun run = run_attack(seed);
        const RunConfig& c = run.config;
        DetectionReport rep =
            scan_model(run.model_poisoned, run.vocab, run.test_set, c.scan_config(),
                       c.outlier_params(), c.k_pca, seed + kSeedModelScan);
        trojan_hits += rep.verdict == "trojan";
        DetectionReport crep =
            scan_model(run.model_clean, run.vocab, run.test_set, c.scan_config(),
                       c.outlier_params(), c.k_pca, seed + kSeedModelScan);
        clean_hits += crep.verdict == "clean";
    }
    Outcome out;
    out.ok = trojan_hits >= 9 && clean_hits >= 9;
    out.detail = "poisoned model convicted " + std::to_string(trojan_hits) +
                 "/10, clean model acquitted " + std::to_string(clean_hits) + "/10 (need >= 9)";
    return out;
}

// --- 6: scan-guided repair disables the backdoor ----------------------------

Outcome criterion_repair() {
    double worst_asr = 0.0, worst_drop = 0.0;
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        AttackRun run = run_attack(seed);
        const RunConfig& c = run.config;
        DetectionReport rep = scan_dataset(run.model_poisoned, run.poisoned.dataset,
                                           c.dataset_scan_params(), seed + kSeedDatasetScan);
        LabeledDataset repaired = repair(run.poisoned.dataset, rep);
        ClassifierParams init =
            init_classifier(run.vocab.size, c.embed_dim, c.hidden_dim,
                            run.train_clean.n_classes, seed + kSeedRepairInit);
        ClassifierParams model =
            train(init, repaired, c.train_config(seed + kSeedRepairTrain)).params;
        double asr =
            attack_success_rate(model, run.test_set.examples, run.trigger, seed + kSeedAsr);
        double acc = clean_accuracy_delta(run.model_clean, model, run.test_set.examples).second;
        worst_asr = std::max(worst_asr, asr);
        worst_drop = std::max(worst_drop, std::abs(run.acc_clean - acc));
    }
    Outcome out;
    out.ok = worst_asr <= 0.1 && worst_drop <= 0.03;
    out.detail = "max asr after repair " + fmt(worst_asr) + " <= 0.100, max |accuracy delta| " +
                 fmt(worst_drop) + " <= 0.030, 3 seeds";
    return out;
}

// --- 7: the bench loop is byte-deterministic --------------------------------

// timings.json is measured wall-clock and deliberately lives outside the
// report; everything else must match byte for byte across reruns.
std::map<std::string, std::string> snapshot_dir(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().filename() == "timings.json") continue;
        std::ifstream f(entry.path(), std::ios::binary);
        files[fs::relative(entry.path(), dir).string()] =
            std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    return files;
}

Outcome criterion_determinism() {
    fs::path dir = fs::temp_directory_path() / "tscan_acceptance_bench";
    fs::remove_all(dir);
    RunConfig c = acceptance_config(1);
    c.out_dir = dir.string();

    // the bench narrates to stdout; keep the acceptance output as the
    // one-line-per-criterion report
    std::ostringstream sink;
    std::streambuf* saved = std::cout.rdbuf(sink.rdbuf());
    std::map<std::string, std::string> first, second;
    try {
        cmd_bench(c, BenchFlags{});
        first = snapshot_dir(dir);
        cmd_bench(c, BenchFlags{});
        second = snapshot_dir(dir);
    } catch (...) {
        std::cout.rdbuf(saved);
        fs::remove_all(dir);
        throw;
    }
    std::cout.rdbuf(saved);
    fs::remove_all(dir);

    size_t mismatched = 0;
    for (const auto& [name, bytes] : first) {
        auto it = second.find(name);
        if (it == second.end() || it->second != bytes) ++mismatched;
    }
    Outcome out;
    out.ok = !first.empty() && first.size() == second.size() && mismatched == 0;
    out.detail = std::to_string(first.size()) + " artifacts byte-identical across two runs" +
                 (mismatched ? (", " + std::to_string(mismatched) + " differ") : "");
    return out;
}

// --- 8: minibatch k-means agrees with lloyd on easy data --------------------

Outcome criterion_minibatch() {
    SplitMix64 rng(77);
    int per = 60, d = 3;
    Mat x(2 * per, d);
    std::vector<int> truth(static_cast<size_t>(2 * per));
    for (int i = 0; i < 2 * per; ++i) {
        int c = i < per ? 0 : 1;
        truth[static_cast<size_t>(i)] = c;
        for (int j = 0; j < d; ++j) x.at(i, j) = 8.0 * c + (rng.next_double() - 0.5);
    }
    KMeansModel lloyd = kmeans(x, 2, KMeansMode::Lloyd, 64, 100, 79);
    KMeansModel mini = kmeans(x, 2, KMeansMode::MiniBatch, 16, 100, 81);
    double lloyd_purity = oracle::cluster_purity(lloyd.assignments, truth, 2, 2);
    double mini_purity = oracle::cluster_purity(mini.assignments, truth, 2, 2);

    Outcome out;
    out.ok = lloyd_purity == 1.0 && mini_purity == 1.0;
    out.detail = "purity lloyd " + fmt(lloyd_purity) + ", minibatch " + fmt(mini_purity) +
                 " (both must be 1.000)";
    return out;
}

} // namespace

int main() {
    struct Criterion {
        std::string name;
        double time_limit;
        std::function<Outcome()> run;
    };

    // criterion 3 shares its pipeline with nothing else; materialized here so
    // its one-seed run isn't re-trained inside the lambda boilerplate below
    const std::vector<Criterion> criteria = {
        {"kernel-vs-oracle equivalence", 30.0, criterion_kernels},
        {"gradient check", 10.0, criterion_gradients},
        {"attack reproduction", 60.0, [] { return criterion_attack(run_attack(1)); }},
        {"dataset-scan defense", 120.0, criterion_dataset_scan},
        {"model-scan defense", 300.0, criterion_model_scan},
        {"repair efficacy", 120.0, criterion_repair},
        {"bench determinism", 600.0, criterion_determinism},
        {"minibatch/lloyd consistency", 5.0, criterion_minibatch},
    };

    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const Criterion& c = criteria[i];
        auto t0 = std::chrono::steady_clock::now();
        Outcome result;
        try {
            result = c.run();
        } catch (const std::exception& e) {
            result.ok = false;
            result.detail = std::string("exception: ") + e.what();
        }
        double elapsed = seconds_since(t0);
        bool in_time = elapsed < c.time_limit;
        bool ok = result.ok && in_time;
        failures += !ok;
        std::printf("[%s] %zu/8 %s — %s (%.1f s, limit %.0f s)\n", ok ? "PASS" : "FAIL", i + 1,
                    c.name.c_str(), result.detail.c_str(), elapsed, c.time_limit);
        std::fflush(stdout);
    }
    if (failures == 0) {
        std::printf("acceptance: all 8 criteria passed\n");
    } else {
        std::printf("acceptance: %d of 8 criteria FAILED\n", failures);
    }
    return failures == 0 ? 0 : 1;
}
