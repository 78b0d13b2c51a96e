#pragma once

// Data-parallel kernels shared by the detector, the perturbation search, and
// batch inference. Every kernel comes in two variants: a plain serial
// reference (suffix _serial) and an OpenMP version (suffix _parallel) that
// splits work across *independent output elements only* — each element is
// still accumulated in a fixed serial order, so both variants produce
// bit-identical results. Tests assert that equality; bench/ measures the gap.
//
// The unsuffixed entry points dispatch on the process-wide execution mode.

#include <vector>

#include "trojanscan/classifier.hpp"
#include "trojanscan/mat.hpp"

namespace tscan {

enum class ExecMode { Serial, Parallel };

ExecMode exec_mode();
void set_exec_mode(ExecMode mode);

// threads = 0 keeps the OpenMP default. Any positive value pins the team
// size; 1 is equivalent to serial mode but still runs the parallel code path.
void set_threads(int threads);

// --- batch inference ---------------------------------------------------

// Penultimate (post-ReLU hidden) activations for each token sequence,
// one row per sequence.
Mat batch_penultimate_serial(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs);
Mat batch_penultimate_parallel(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs);
Mat batch_penultimate(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs);

std::vector<int> batch_predict_serial(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs);
std::vector<int> batch_predict_parallel(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs);
std::vector<int> batch_predict(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs);

// --- linear algebra ----------------------------------------------------

// Sample covariance (divisor n-1) of an already column-centered matrix.
// Output is d x d; each entry is an ordered dot product down the rows.
Mat covariance_serial(const Mat& centered);
Mat covariance_parallel(const Mat& centered);
Mat covariance(const Mat& centered);

// --- clustering --------------------------------------------------------

// Nearest centroid per row (squared Euclidean, ties -> lowest index).
// Optionally reports the squared distance to the winner.
void nearest_centroid_serial(const Mat& x, const Mat& centroids, std::vector<int>& assign,
                             std::vector<double>* d2_out = nullptr);
void nearest_centroid_parallel(const Mat& x, const Mat& centroids, std::vector<int>& assign,
                               std::vector<double>* d2_out = nullptr);
void nearest_centroid(const Mat& x, const Mat& centroids, std::vector<int>& assign,
                      std::vector<double>* d2_out = nullptr);

// Per-cluster mean of assigned rows (rows scanned in index order so the sums
// are reproducible). Clusters with no members get a zero row and count 0.
void cluster_means_serial(const Mat& x, const std::vector<int>& assign, int k, Mat& means,
                          std::vector<int>& counts);
void cluster_means_parallel(const Mat& x, const std::vector<int>& assign, int k, Mat& means,
                            std::vector<int>& counts);
void cluster_means(const Mat& x, const std::vector<int>& assign, int k, Mat& means,
                   std::vector<int>& counts);

// --- neighborhoods -----------------------------------------------------

// For each row, how many *other* rows lie within distance eps (inclusive).
std::vector<int> neighbor_counts_serial(const Mat& x, double eps);
std::vector<int> neighbor_counts_parallel(const Mat& x, double eps);
std::vector<int> neighbor_counts(const Mat& x, double eps);

// For each row, the Euclidean distance to its k-th nearest other row.
// Requires k <= n-1.
std::vector<double> kth_nn_distance_serial(const Mat& x, int k);
std::vector<double> kth_nn_distance_parallel(const Mat& x, int k);
std::vector<double> kth_nn_distance(const Mat& x, int k);

// --- phrase evaluation -------------------------------------------------

// Appending a phrase to a probe only shifts the embedding mean, so each
// probe can be reduced once to (sum of non-pad embedding rows, non-pad
// count) and every phrase evaluated against the summaries in O(E) each.
// Summing probe tokens first and phrase tokens second reproduces the exact
// float sequence of a direct forward pass on the concatenated ids.
struct ProbeSummary {
    std::vector<double> sum;
    int count = 0;
};

std::vector<ProbeSummary> make_probe_summaries_serial(const ClassifierParams& p,
                                                      const std::vector<std::vector<int>>& seqs);
std::vector<ProbeSummary> make_probe_summaries_parallel(const ClassifierParams& p,
                                                        const std::vector<std::vector<int>>& seqs);
std::vector<ProbeSummary> make_probe_summaries(const ClassifierParams& p,
                                               const std::vector<std::vector<int>>& seqs);

struct PhraseEval {
    double flip_rate = 0.0;        // fraction of probes predicted target
    double mean_target_prob = 0.0; // greedy search objective
};

// Evaluate one phrase appended to every probe. Serial by design: it is the
// inner loop of the kernels below.
PhraseEval eval_phrase(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                       const std::vector<int>& phrase, int target);

// Objective for substituting each pool token at `position` of `phrase`,
// evaluated over all probes. One output per pool entry.
std::vector<double> eval_candidates_serial(const ClassifierParams& p,
                                           const std::vector<ProbeSummary>& probes,
                                           const std::vector<int>& phrase, int position,
                                           const std::vector<int>& pool, int target);
std::vector<double> eval_candidates_parallel(const ClassifierParams& p,
                                             const std::vector<ProbeSummary>& probes,
                                             const std::vector<int>& phrase, int position,
                                             const std::vector<int>& pool, int target);
std::vector<double> eval_candidates(const ClassifierParams& p,
                                    const std::vector<ProbeSummary>& probes,
                                    const std::vector<int>& phrase, int position,
                                    const std::vector<int>& pool, int target);

// One activation row per phrase: the mean penultimate vector over all probes
// with the phrase appended.
Mat phrase_rows_serial(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                       const std::vector<std::vector<int>>& phrases);
Mat phrase_rows_parallel(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                         const std::vector<std::vector<int>>& phrases);
Mat phrase_rows(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                const std::vector<std::vector<int>>& phrases);

} // namespace tscan
