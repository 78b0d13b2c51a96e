#pragma once

// Defense core: penultimate activations -> PCA -> K-means -> density-based
// outlier rule, in two modes. dataset_scan flags poisoned training examples
// per class; model_scan issues a trojan/clean verdict from searched
// perturbation phrases judged against a random-phrase reference population.

#include <cstdint>
#include <string>
#include <vector>

#include "trojanscan/classifier.hpp"
#include "trojanscan/corpus.hpp"
#include "trojanscan/kernels.hpp"
#include "trojanscan/mat.hpp"
#include "trojanscan/perturber.hpp"

namespace tscan {

struct ActivationMatrix {
    Mat data;                     // n x H
    std::vector<size_t> row_meta; // example index or phrase index per row
};

ActivationMatrix extract_activations(const ClassifierParams& p, const LabeledDataset& dataset,
                                     const std::vector<size_t>& indices);
ActivationMatrix extract_phrase_activations(const ClassifierParams& p,
                                            const std::vector<ProbeSummary>& probes,
                                            const std::vector<Phrase>& phrases);

// --- PCA -----------------------------------------------------------------

struct PcaModel {
    std::vector<double> mean;                // d
    Mat components;                          // k x d, rows orthonormal
    std::vector<double> explained_variance;  // k, non-increasing
};

// Top-k eigenpairs of the sample covariance (divisor n-1) by power iteration
// with deflation; each component's sign is fixed so its first nonzero
// coordinate is positive. Directions without variance throw "degenerate
// covariance" unless allow_degenerate, which pads with arbitrary orthonormal
// zero-variance components instead (scans use this so a collapsed model
// degrades to "no structure" rather than an error).
PcaModel fit_pca(const Mat& x, int k, bool allow_degenerate = false);

Mat pca_transform(const PcaModel& pca, const Mat& x);
Mat pca_inverse_transform(const PcaModel& pca, const Mat& reduced);

// --- K-means ---------------------------------------------------------------

enum class KMeansMode { Lloyd, MiniBatch };

KMeansMode parse_kmeans_mode(const std::string& name);
std::string kmeans_mode_name(KMeansMode mode);

struct KMeansModel {
    Mat centroids; // K x k
    std::vector<int> assignments;
    double inertia = 0.0;
    KMeansMode mode = KMeansMode::Lloyd;
    // Inertia after every full assignment pass; non-increasing in lloyd mode.
    std::vector<double> inertia_log;
};

// Init: K distinct rows, uniform without replacement. Lloyd alternates
// nearest-centroid assignment (ties -> lowest index) with mean updates until
// assignments repeat or max_iters; an emptied cluster is reseeded to the row
// farthest from its assigned centroid. MiniBatch samples batch_size rows per
// iteration (without replacement, so batch_size = n is a full pass) and
// nudges each drawn row's centroid by the cumulative-count learning rate,
// finishing with one full assignment pass. batch_size is ignored by lloyd.
KMeansModel kmeans(const Mat& x, int k_clusters, KMeansMode mode, int batch_size, int max_iters,
                   uint64_t seed);

// --- outliers ----------------------------------------------------------

struct OutlierParams {
    int min_points = 3;
    double epsilon = 0.0; // <= 0 means auto: 1.5 x median k-th-NN distance
};

struct OutlierResult {
    std::vector<uint8_t> flags;        // row i has < min_points neighbors within eps
    std::vector<int> neighbor_count;   // other rows within eps, per row
    std::vector<double> kth_distance;  // distance to the min_points-th nearest other row
    double epsilon_used = 0.0;
};

OutlierResult detect_outliers(const Mat& reduced, const OutlierParams& params);

// --- scans ---------------------------------------------------------------

struct DatasetScanParams {
    int k_pca = 10;
    KMeansMode kmeans_mode = KMeansMode::Lloyd;
    int kmeans_batch = 64;
    int kmeans_iters = 100;
    double size_threshold = 0.35;      // flag only clusters at most this fraction
    double separation_threshold = 2.0; // ... at least this many within-cluster RMS apart
};

struct ClassScanInfo {
    int label = 0;
    int n = 0;
    bool skipped = false;
    int small_size = 0;
    int large_size = 0;
    double size_fraction = 0.0;
    double centroid_distance = 0.0;
    double mean_rms = 0.0;
    bool flagged = false;
};

struct PairScanInfo {
    int source = 0;
    int target = 0;
    double epsilon_used = 0.0;
    int n_evidence = 0;
};

struct PhraseScanInfo {
    int source = 0;
    int target = 0;
    PhraseOrigin origin = PhraseOrigin::Candidate;
    int index = 0; // within its origin group for the pair
    std::vector<int> token_ids;
    std::vector<std::string> tokens;
    double flip_rate = 0.0;
    double score = 0.0; // kth-NN distance / epsilon
    bool outlier = false;
    bool evidence = false;
};

struct DetectionReport {
    std::string mode;           // "dataset_scan" | "model_scan"
    std::string verdict;        // model_scan: "trojan" | "clean"
    std::vector<uint8_t> flags; // dataset_scan: per example
    std::vector<double> scores; // dataset_scan: 1 - own-cluster fraction
    std::vector<ClassScanInfo> class_scans;
    std::vector<PairScanInfo> pair_scans;
    std::vector<PhraseScanInfo> phrase_scans;
    std::vector<std::string> warnings;
    uint64_t seed = 0;

    // Knob echo, serialized under "params".
    DatasetScanParams dataset_params;
    ScanConfig scan_config;
    OutlierParams outlier_params;
    int model_k_pca = 10;
};

// Per class: activations -> PCA -> 2-means; the smaller cluster is flagged
// poisoned when it is small enough and far enough from the other. Rows are
// put in a canonical value order first, so the flags (as a set of example
// identities) do not depend on dataset order. Classes with fewer than 4
// examples are skipped with a warning.
DetectionReport scan_dataset(const ClassifierParams& model, const LabeledDataset& dataset,
                             const DatasetScanParams& params, uint64_t seed);

// For each ordered class pair (or the single configured pair): search
// candidate phrases, sample auxiliaries, and flag candidates that are both
// activation outliers and above the flip threshold. Verdict is trojan iff
// any candidate qualifies; auxiliaries are never evidence. Probes are drawn
// from probe_source per pair.
DetectionReport scan_model(const ClassifierParams& model, const Vocab& vocab,
                           const LabeledDataset& probe_source, const ScanConfig& scan,
                           const OutlierParams& outliers, int k_pca, uint64_t seed);

// Drops flagged examples, preserving order. Refuses to reduce any class
// below 2 surviving examples.
LabeledDataset repair(const LabeledDataset& dataset, const DetectionReport& report);

// Stable JSON (sorted keys, versioned schema). report_from_json restores the
// fields repair and the tests need and rejects unknown schema versions.
std::string report_to_json(const DetectionReport& report);
DetectionReport report_from_json(const std::string& text);

} // namespace tscan
