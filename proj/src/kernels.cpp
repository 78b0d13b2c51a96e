#include "trojanscan/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tscan {

namespace {

std::atomic<ExecMode> g_exec_mode{ExecMode::Parallel};

void check_seqs(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs) {
    if (seqs.empty()) throw std::runtime_error("empty batch");
    for (const auto& seq : seqs) {
        if (seq.empty()) throw std::runtime_error("empty token sequence");
        for (int id : seq) {
            if (id < 0 || id >= p.V) throw std::runtime_error("token id out of range");
        }
    }
}

// Penultimate of one sequence into out[H]; assumes ids already validated.
void row_penultimate(const ClassifierParams& p, const std::vector<int>& seq, double* out,
                     std::vector<double>& mean_buf) {
    mean_buf.assign(static_cast<size_t>(p.E), 0.0);
    int count = 0;
    for (int id : seq) {
        if (id == kPadId) continue;
        const double* row = p.embedding.row(id);
        for (int e = 0; e < p.E; ++e) mean_buf[static_cast<size_t>(e)] += row[e];
        ++count;
    }
    if (count > 0) {
        for (auto& v : mean_buf) v /= count;
    }
    penultimate_from_mean(p, mean_buf.data(), out);
}

} // namespace

ExecMode exec_mode() { return g_exec_mode.load(); }
void set_exec_mode(ExecMode mode) { g_exec_mode.store(mode); }

void set_threads(int threads) {
    if (threads < 0) throw std::runtime_error("thread count must be non-negative");
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

// --- batch inference ---------------------------------------------------

Mat batch_penultimate_serial(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs) {
    check_seqs(p, seqs);
    Mat out(static_cast<int>(seqs.size()), p.H);
    std::vector<double> mean_buf;
    for (size_t i = 0; i < seqs.size(); ++i)
        row_penultimate(p, seqs[i], out.row(static_cast<int>(i)), mean_buf);
    return out;
}

Mat batch_penultimate_parallel(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs) {
    check_seqs(p, seqs);
    Mat out(static_cast<int>(seqs.size()), p.H);
    const int n = out.rows;
#pragma omp parallel
    {
        std::vector<double> mean_buf;
#pragma omp for schedule(static)
        for (int i = 0; i < n; ++i) row_penultimate(p, seqs[static_cast<size_t>(i)], out.row(i), mean_buf);
    }
    return out;
}

Mat batch_penultimate(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs) {
    return exec_mode() == ExecMode::Parallel ? batch_penultimate_parallel(p, seqs)
                                             : batch_penultimate_serial(p, seqs);
}

std::vector<int> batch_predict_serial(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs) {
    check_seqs(p, seqs);
    std::vector<int> labels(seqs.size(), 0);
    std::vector<double> mean_buf, pen(static_cast<size_t>(p.H)), probs(static_cast<size_t>(p.C));
    for (size_t i = 0; i < seqs.size(); ++i) {
        row_penultimate(p, seqs[i], pen.data(), mean_buf);
        labels[i] = logits_to_probs(p, pen.data(), probs.data());
    }
    return labels;
}

std::vector<int> batch_predict_parallel(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs) {
    check_seqs(p, seqs);
    std::vector<int> labels(seqs.size(), 0);
    const int n = static_cast<int>(seqs.size());
#pragma omp parallel
    {
        std::vector<double> mean_buf, pen(static_cast<size_t>(p.H)), probs(static_cast<size_t>(p.C));
#pragma omp for schedule(static)
        for (int i = 0; i < n; ++i) {
            row_penultimate(p, seqs[static_cast<size_t>(i)], pen.data(), mean_buf);
            labels[static_cast<size_t>(i)] = logits_to_probs(p, pen.data(), probs.data());
        }
    }
    return labels;
}

std::vector<int> batch_predict(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs) {
    return exec_mode() == ExecMode::Parallel ? batch_predict_parallel(p, seqs)
                                             : batch_predict_serial(p, seqs);
}

// --- linear algebra ----------------------------------------------------

namespace {

double covariance_entry(const Mat& x, int a, int b) {
    double s = 0.0;
    for (int i = 0; i < x.rows; ++i) s += x.at(i, a) * x.at(i, b);
    return s / (x.rows - 1);
}

} // namespace

Mat covariance_serial(const Mat& centered) {
    if (centered.rows < 2) throw std::runtime_error("covariance needs at least 2 rows");
    Mat out(centered.cols, centered.cols);
    for (int a = 0; a < centered.cols; ++a)
        for (int b = 0; b < centered.cols; ++b) out.at(a, b) = covariance_entry(centered, a, b);
    return out;
}

Mat covariance_parallel(const Mat& centered) {
    if (centered.rows < 2) throw std::runtime_error("covariance needs at least 2 rows");
    const int d = centered.cols;
    Mat out(d, d);
#pragma omp parallel for schedule(static)
    for (int e = 0; e < d * d; ++e) out.data[static_cast<size_t>(e)] = covariance_entry(centered, e / d, e % d);
    return out;
}

Mat covariance(const Mat& centered) {
    return exec_mode() == ExecMode::Parallel ? covariance_parallel(centered)
                                             : covariance_serial(centered);
}

// --- clustering --------------------------------------------------------

namespace {

void nearest_one(const Mat& x, const Mat& centroids, int i, std::vector<int>& assign,
                 std::vector<double>* d2_out) {
    const double* row = x.row(i);
    int best = 0;
    double best_d2 = dist2(row, centroids.row(0), x.cols);
    for (int c = 1; c < centroids.rows; ++c) {
        double d2 = dist2(row, centroids.row(c), x.cols);
        if (d2 < best_d2) {
            best_d2 = d2;
            best = c;
        }
    }
    assign[static_cast<size_t>(i)] = best;
    if (d2_out) (*d2_out)[static_cast<size_t>(i)] = best_d2;
}

void check_centroids(const Mat& x, const Mat& centroids) {
    if (centroids.rows < 1) throw std::runtime_error("no centroids");
    if (centroids.cols != x.cols) throw std::runtime_error("centroid dimension mismatch");
}

} // namespace

void nearest_centroid_serial(const Mat& x, const Mat& centroids, std::vector<int>& assign,
                             std::vector<double>* d2_out) {
    check_centroids(x, centroids);
    assign.assign(static_cast<size_t>(x.rows), 0);
    if (d2_out) d2_out->assign(static_cast<size_t>(x.rows), 0.0);
    for (int i = 0; i < x.rows; ++i) nearest_one(x, centroids, i, assign, d2_out);
}

void nearest_centroid_parallel(const Mat& x, const Mat& centroids, std::vector<int>& assign,
                               std::vector<double>* d2_out) {
    check_centroids(x, centroids);
    assign.assign(static_cast<size_t>(x.rows), 0);
    if (d2_out) d2_out->assign(static_cast<size_t>(x.rows), 0.0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < x.rows; ++i) nearest_one(x, centroids, i, assign, d2_out);
}

void nearest_centroid(const Mat& x, const Mat& centroids, std::vector<int>& assign,
                      std::vector<double>* d2_out) {
    if (exec_mode() == ExecMode::Parallel)
        nearest_centroid_parallel(x, centroids, assign, d2_out);
    else
        nearest_centroid_serial(x, centroids, assign, d2_out);
}

namespace {

void mean_one_cluster(const Mat& x, const std::vector<int>& assign, int c, Mat& means,
                      std::vector<int>& counts) {
    double* out = means.row(c);
    for (int j = 0; j < x.cols; ++j) out[j] = 0.0;
    int count = 0;
    for (int i = 0; i < x.rows; ++i) {
        if (assign[static_cast<size_t>(i)] != c) continue;
        const double* row = x.row(i);
        for (int j = 0; j < x.cols; ++j) out[j] += row[j];
        ++count;
    }
    if (count > 0) {
        for (int j = 0; j < x.cols; ++j) out[j] /= count;
    }
    counts[static_cast<size_t>(c)] = count;
}

} // namespace

void cluster_means_serial(const Mat& x, const std::vector<int>& assign, int k, Mat& means,
                          std::vector<int>& counts) {
    means = Mat(k, x.cols);
    counts.assign(static_cast<size_t>(k), 0);
    for (int c = 0; c < k; ++c) mean_one_cluster(x, assign, c, means, counts);
}

void cluster_means_parallel(const Mat& x, const std::vector<int>& assign, int k, Mat& means,
                            std::vector<int>& counts) {
    means = Mat(k, x.cols);
    counts.assign(static_cast<size_t>(k), 0);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < k; ++c) mean_one_cluster(x, assign, c, means, counts);
}

void cluster_means(const Mat& x, const std::vector<int>& assign, int k, Mat& means,
                   std::vector<int>& counts) {
    if (exec_mode() == ExecMode::Parallel)
        cluster_means_parallel(x, assign, k, means, counts);
    else
        cluster_means_serial(x, assign, k, means, counts);
}

// --- neighborhoods -----------------------------------------------------

namespace {

int count_neighbors(const Mat& x, int i, double eps2) {
    const double* row = x.row(i);
    int count = 0;
    for (int j = 0; j < x.rows; ++j) {
        if (j == i) continue;
        if (dist2(row, x.row(j), x.cols) <= eps2) ++count;
    }
    return count;
}

double kth_nn_one(const Mat& x, int i, int k, std::vector<double>& d2_buf) {
    d2_buf.clear();
    const double* row = x.row(i);
    for (int j = 0; j < x.rows; ++j) {
        if (j == i) continue;
        d2_buf.push_back(dist2(row, x.row(j), x.cols));
    }
    std::nth_element(d2_buf.begin(), d2_buf.begin() + (k - 1), d2_buf.end());
    return std::sqrt(d2_buf[static_cast<size_t>(k - 1)]);
}

} // namespace

std::vector<int> neighbor_counts_serial(const Mat& x, double eps) {
    const double eps2 = eps * eps;
    std::vector<int> counts(static_cast<size_t>(x.rows), 0);
    for (int i = 0; i < x.rows; ++i) counts[static_cast<size_t>(i)] = count_neighbors(x, i, eps2);
    return counts;
}

std::vector<int> neighbor_counts_parallel(const Mat& x, double eps) {
    const double eps2 = eps * eps;
    std::vector<int> counts(static_cast<size_t>(x.rows), 0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < x.rows; ++i) counts[static_cast<size_t>(i)] = count_neighbors(x, i, eps2);
    return counts;
}

std::vector<int> neighbor_counts(const Mat& x, double eps) {
    return exec_mode() == ExecMode::Parallel ? neighbor_counts_parallel(x, eps)
                                             : neighbor_counts_serial(x, eps);
}

std::vector<double> kth_nn_distance_serial(const Mat& x, int k) {
    if (k < 1 || k > x.rows - 1) throw std::runtime_error("kth_nn_distance: k out of range");
    std::vector<double> out(static_cast<size_t>(x.rows), 0.0);
    std::vector<double> d2_buf;
    for (int i = 0; i < x.rows; ++i) out[static_cast<size_t>(i)] = kth_nn_one(x, i, k, d2_buf);
    return out;
}

std::vector<double> kth_nn_distance_parallel(const Mat& x, int k) {
    if (k < 1 || k > x.rows - 1) throw std::runtime_error("kth_nn_distance: k out of range");
    std::vector<double> out(static_cast<size_t>(x.rows), 0.0);
#pragma omp parallel
    {
        std::vector<double> d2_buf;
#pragma omp for schedule(static)
        for (int i = 0; i < x.rows; ++i) out[static_cast<size_t>(i)] = kth_nn_one(x, i, k, d2_buf);
    }
    return out;
}

std::vector<double> kth_nn_distance(const Mat& x, int k) {
    return exec_mode() == ExecMode::Parallel ? kth_nn_distance_parallel(x, k)
                                             : kth_nn_distance_serial(x, k);
}

// --- phrase evaluation -------------------------------------------------

namespace {

ProbeSummary summarize_probe(const ClassifierParams& p, const std::vector<int>& seq) {
    ProbeSummary s;
    s.sum.assign(static_cast<size_t>(p.E), 0.0);
    for (int id : seq) {
        if (id == kPadId) continue;
        const double* row = p.embedding.row(id);
        for (int e = 0; e < p.E; ++e) s.sum[static_cast<size_t>(e)] += row[e];
        ++s.count;
    }
    return s;
}

void check_phrase(const ClassifierParams& p, const std::vector<int>& phrase) {
    if (phrase.empty()) throw std::runtime_error("empty phrase");
    for (int id : phrase) {
        if (id < 0 || id >= p.V) throw std::runtime_error("token id out of range");
    }
}

// Scratch buffers for evaluating phrases against probe summaries.
struct EvalScratch {
    std::vector<double> mean, pen, probs;
};

// Penultimate of (probe ++ phrase). Adds the phrase rows one at a time after
// the probe's sum, matching the float sequence of a direct forward pass.
void probe_plus_phrase(const ClassifierParams& p, const ProbeSummary& probe,
                       const std::vector<int>& phrase, EvalScratch& s) {
    s.mean.assign(probe.sum.begin(), probe.sum.end());
    int count = probe.count;
    for (int id : phrase) {
        if (id == kPadId) continue;
        const double* row = p.embedding.row(id);
        for (int e = 0; e < p.E; ++e) s.mean[static_cast<size_t>(e)] += row[e];
        ++count;
    }
    if (count > 0) {
        for (auto& v : s.mean) v /= count;
    } else {
        std::fill(s.mean.begin(), s.mean.end(), 0.0);
    }
    s.pen.resize(static_cast<size_t>(p.H));
    penultimate_from_mean(p, s.mean.data(), s.pen.data());
}

PhraseEval eval_phrase_impl(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                            const std::vector<int>& phrase, int target, EvalScratch& s) {
    s.probs.resize(static_cast<size_t>(p.C));
    int flips = 0;
    double prob_sum = 0.0;
    for (const auto& probe : probes) {
        probe_plus_phrase(p, probe, phrase, s);
        int label = logits_to_probs(p, s.pen.data(), s.probs.data());
        if (label == target) ++flips;
        prob_sum += s.probs[static_cast<size_t>(target)];
    }
    PhraseEval ev;
    ev.flip_rate = static_cast<double>(flips) / static_cast<double>(probes.size());
    ev.mean_target_prob = prob_sum / static_cast<double>(probes.size());
    return ev;
}

void check_eval_inputs(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                       const std::vector<int>& phrase, int target) {
    if (probes.empty()) throw std::runtime_error("empty probe set");
    if (target < 0 || target >= p.C) throw std::runtime_error("target class out of range");
    check_phrase(p, phrase);
}

} // namespace

std::vector<ProbeSummary> make_probe_summaries_serial(const ClassifierParams& p,
                                                      const std::vector<std::vector<int>>& seqs) {
    check_seqs(p, seqs);
    std::vector<ProbeSummary> out(seqs.size());
    for (size_t i = 0; i < seqs.size(); ++i) out[i] = summarize_probe(p, seqs[i]);
    return out;
}

std::vector<ProbeSummary> make_probe_summaries_parallel(const ClassifierParams& p,
                                                        const std::vector<std::vector<int>>& seqs) {
    check_seqs(p, seqs);
    std::vector<ProbeSummary> out(seqs.size());
    const int n = static_cast<int>(seqs.size());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = summarize_probe(p, seqs[static_cast<size_t>(i)]);
    return out;
}

std::vector<ProbeSummary> make_probe_summaries(const ClassifierParams& p,
                                               const std::vector<std::vector<int>>& seqs) {
    return exec_mode() == ExecMode::Parallel ? make_probe_summaries_parallel(p, seqs)
                                             : make_probe_summaries_serial(p, seqs);
}

PhraseEval eval_phrase(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                       const std::vector<int>& phrase, int target) {
    check_eval_inputs(p, probes, phrase, target);
    EvalScratch s;
    return eval_phrase_impl(p, probes, phrase, target, s);
}

std::vector<double> eval_candidates_serial(const ClassifierParams& p,
                                           const std::vector<ProbeSummary>& probes,
                                           const std::vector<int>& phrase, int position,
                                           const std::vector<int>& pool, int target) {
    check_eval_inputs(p, probes, phrase, target);
    if (position < 0 || static_cast<size_t>(position) >= phrase.size())
        throw std::runtime_error("phrase position out of range");
    std::vector<double> objective(pool.size(), 0.0);
    EvalScratch s;
    std::vector<int> trial = phrase;
    for (size_t j = 0; j < pool.size(); ++j) {
        if (pool[j] < 0 || pool[j] >= p.V) throw std::runtime_error("token id out of range");
        trial[static_cast<size_t>(position)] = pool[j];
        objective[j] = eval_phrase_impl(p, probes, trial, target, s).mean_target_prob;
    }
    return objective;
}

std::vector<double> eval_candidates_parallel(const ClassifierParams& p,
                                             const std::vector<ProbeSummary>& probes,
                                             const std::vector<int>& phrase, int position,
                                             const std::vector<int>& pool, int target) {
    check_eval_inputs(p, probes, phrase, target);
    if (position < 0 || static_cast<size_t>(position) >= phrase.size())
        throw std::runtime_error("phrase position out of range");
    for (int id : pool) {
        if (id < 0 || id >= p.V) throw std::runtime_error("token id out of range");
    }
    std::vector<double> objective(pool.size(), 0.0);
    const int m = static_cast<int>(pool.size());
#pragma omp parallel
    {
        EvalScratch s;
        std::vector<int> trial = phrase;
#pragma omp for schedule(static)
        for (int j = 0; j < m; ++j) {
            trial[static_cast<size_t>(position)] = pool[static_cast<size_t>(j)];
            objective[static_cast<size_t>(j)] = eval_phrase_impl(p, probes, trial, target, s).mean_target_prob;
        }
    }
    return objective;
}

std::vector<double> eval_candidates(const ClassifierParams& p,
                                    const std::vector<ProbeSummary>& probes,
                                    const std::vector<int>& phrase, int position,
                                    const std::vector<int>& pool, int target) {
    return exec_mode() == ExecMode::Parallel
               ? eval_candidates_parallel(p, probes, phrase, position, pool, target)
               : eval_candidates_serial(p, probes, phrase, position, pool, target);
}

namespace {

void phrase_row_one(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                    const std::vector<int>& phrase, double* out, EvalScratch& s) {
    for (int h = 0; h < p.H; ++h) out[h] = 0.0;
    for (const auto& probe : probes) {
        probe_plus_phrase(p, probe, phrase, s);
        for (int h = 0; h < p.H; ++h) out[h] += s.pen[static_cast<size_t>(h)];
    }
    for (int h = 0; h < p.H; ++h) out[h] /= static_cast<double>(probes.size());
}

} // namespace

Mat phrase_rows_serial(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                       const std::vector<std::vector<int>>& phrases) {
    if (probes.empty()) throw std::runtime_error("empty probe set");
    if (phrases.empty()) throw std::runtime_error("empty phrase set");
    for (const auto& ph : phrases) check_phrase(p, ph);
    Mat out(static_cast<int>(phrases.size()), p.H);
    EvalScratch s;
    for (size_t i = 0; i < phrases.size(); ++i)
        phrase_row_one(p, probes, phrases[i], out.row(static_cast<int>(i)), s);
    return out;
}

Mat phrase_rows_parallel(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                         const std::vector<std::vector<int>>& phrases) {
    if (probes.empty()) throw std::runtime_error("empty probe set");
    if (phrases.empty()) throw std::runtime_error("empty phrase set");
    for (const auto& ph : phrases) check_phrase(p, ph);
    Mat out(static_cast<int>(phrases.size()), p.H);
    const int n = out.rows;
#pragma omp parallel
    {
        EvalScratch s;
#pragma omp for schedule(static)
        for (int i = 0; i < n; ++i) phrase_row_one(p, probes, phrases[static_cast<size_t>(i)], out.row(i), s);
    }
    return out;
}

Mat phrase_rows(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                const std::vector<std::vector<int>>& phrases) {
    return exec_mode() == ExecMode::Parallel ? phrase_rows_parallel(p, probes, phrases)
                                             : phrase_rows_serial(p, probes, phrases);
}

} // namespace tscan
