#include "trojanscan/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "trojanscan/rng.hpp"
#include "trojanscan/util.hpp"

namespace tscan {

ActivationMatrix extract_activations(const ClassifierParams& p, const LabeledDataset& dataset,
                                     const std::vector<size_t>& indices) {
    if (indices.empty()) throw std::runtime_error("no examples to extract");
    std::vector<std::vector<int>> seqs;
    seqs.reserve(indices.size());
    for (size_t idx : indices) {
        if (idx >= dataset.size()) throw std::runtime_error("example index out of range");
        seqs.push_back(dataset.examples[idx].token_ids);
    }
    ActivationMatrix out;
    out.data = batch_penultimate(p, seqs);
    out.row_meta = indices;
    return out;
}

ActivationMatrix extract_phrase_activations(const ClassifierParams& p,
                                            const std::vector<ProbeSummary>& probes,
                                            const std::vector<Phrase>& phrases) {
    if (phrases.empty()) throw std::runtime_error("no phrases to extract");
    std::vector<std::vector<int>> ids;
    ids.reserve(phrases.size());
    for (const auto& ph : phrases) ids.push_back(ph.token_ids);
    ActivationMatrix out;
    out.data = phrase_rows(p, probes, ids);
    out.row_meta.resize(phrases.size());
    std::iota(out.row_meta.begin(), out.row_meta.end(), size_t{0});
    return out;
}

// --- PCA -----------------------------------------------------------------

namespace {

constexpr double kConvergeEps = 1e-10;
constexpr int kMaxPowerIters = 1000;
constexpr double kSignEps = 1e-9;

double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
}

// v -= sum over earlier components of (component . v) component
void project_out(const Mat& components, int count, std::vector<double>& v) {
    const int d = components.cols;
    for (int c = 0; c < count; ++c) {
        const double* u = components.row(c);
        double coef = dot(u, v.data(), d);
        for (int j = 0; j < d; ++j) v[static_cast<size_t>(j)] -= coef * u[j];
    }
}

void fix_sign(double* v, int d) {
    for (int j = 0; j < d; ++j) {
        if (std::abs(v[j]) > kSignEps) {
            if (v[j] < 0.0) {
                for (int t = 0; t < d; ++t) v[t] = -v[t];
            }
            return;
        }
    }
}

// Orthonormal completion for zero-variance directions: standard basis
// vectors with everything found so far projected out.
void fill_degenerate(PcaModel& m, int from, int k) {
    const int d = m.components.cols;
    int c = from;
    std::vector<double> v(static_cast<size_t>(d));
    for (int basis = 0; basis < d && c < k; ++basis) {
        std::fill(v.begin(), v.end(), 0.0);
        v[static_cast<size_t>(basis)] = 1.0;
        project_out(m.components, c, v);
        double n = vec_norm(v);
        if (n < 0.5) continue; // basis vector (mostly) inside the found span
        for (int j = 0; j < d; ++j) v[static_cast<size_t>(j)] /= n;
        fix_sign(v.data(), d);
        std::copy(v.begin(), v.end(), m.components.row(c));
        m.explained_variance[static_cast<size_t>(c)] = 0.0;
        ++c;
    }
    if (c < k) throw std::runtime_error("degenerate covariance"); // cannot happen for k <= d
}

} // namespace

PcaModel fit_pca(const Mat& x, int k, bool allow_degenerate) {
    if (x.rows < 2) throw std::runtime_error("pca needs at least 2 rows");
    const int d = x.cols;
    if (k < 1 || k > std::min(x.rows - 1, d)) throw std::runtime_error("pca k out of range");

    PcaModel m;
    m.mean.assign(static_cast<size_t>(d), 0.0);
    for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int i = 0; i < x.rows; ++i) s += x.at(i, j);
        m.mean[static_cast<size_t>(j)] = s / x.rows;
    }
    Mat centered(x.rows, d);
    for (int i = 0; i < x.rows; ++i) {
        for (int j = 0; j < d; ++j) centered.at(i, j) = x.at(i, j) - m.mean[static_cast<size_t>(j)];
    }
    Mat deflated = covariance(centered);

    double trace = 0.0;
    for (int j = 0; j < d; ++j) trace += deflated.at(j, j);
    // An eigenvalue this far below the total variance is numerically zero.
    const double zero_var = 1e-12 * std::max(trace, 1e-30);

    m.components = Mat(k, d);
    m.explained_variance.assign(static_cast<size_t>(k), 0.0);

    // fit_pca takes no seed: the start vectors come from a fixed stream, so
    // the decomposition is a pure function of the input.
    SplitMix64 rng(0x50434153ull);
    std::vector<double> v(static_cast<size_t>(d)), w(static_cast<size_t>(d));

    for (int c = 0; c < k; ++c) {
        // Random start with earlier components projected out; retry the
        // (measure-zero) case of starting inside their span.
        double n = 0.0;
        do {
            for (auto& e : v) e = rng.next_double(-1.0, 1.0);
            project_out(m.components, c, v);
            n = vec_norm(v);
        } while (n < 1e-6);
        for (auto& e : v) e /= n;

        bool dead = false;
        for (int iter = 0; iter < kMaxPowerIters; ++iter) {
            for (int a = 0; a < d; ++a) w[static_cast<size_t>(a)] = dot(deflated.row(a), v.data(), d);
            project_out(m.components, c, w);
            double wn = vec_norm(w);
            if (wn <= zero_var) {
                dead = true; // no variance left in this direction
                break;
            }
            for (auto& e : w) e /= wn;
            double diff = 0.0;
            for (int j = 0; j < d; ++j) {
                double t = w[static_cast<size_t>(j)] - v[static_cast<size_t>(j)];
                diff += t * t;
            }
            v = w;
            if (std::sqrt(diff) < kConvergeEps) break;
        }

        double lambda = 0.0;
        if (!dead) {
            for (int a = 0; a < d; ++a) w[static_cast<size_t>(a)] = dot(deflated.row(a), v.data(), d);
            lambda = dot(v.data(), w.data(), d); // Rayleigh quotient
        }
        if (dead || lambda <= zero_var) {
            if (!allow_degenerate) throw std::runtime_error("degenerate covariance");
            fill_degenerate(m, c, k);
            break;
        }

        fix_sign(v.data(), d);
        std::copy(v.begin(), v.end(), m.components.row(c));
        m.explained_variance[static_cast<size_t>(c)] = lambda;
        // Deflate: remove this eigenpair so the next dominant one surfaces.
        for (int a = 0; a < d; ++a) {
            for (int b = 0; b < d; ++b)
                deflated.at(a, b) -= lambda * v[static_cast<size_t>(a)] * v[static_cast<size_t>(b)];
        }
    }

    // Deflation returns eigenvalues largest-first; clamp sub-tolerance
    // inversions from unconverged near-ties so the invariant holds exactly.
    for (size_t c = 1; c < m.explained_variance.size(); ++c)
        m.explained_variance[c] = std::min(m.explained_variance[c], m.explained_variance[c - 1]);
    return m;
}

Mat pca_transform(const PcaModel& pca, const Mat& x) {
    const int d = static_cast<int>(pca.mean.size());
    if (x.cols != d) throw std::runtime_error("pca dimension mismatch");
    const int k = pca.components.rows;
    Mat out(x.rows, k);
    std::vector<double> centered(static_cast<size_t>(d));
    for (int i = 0; i < x.rows; ++i) {
        const double* row = x.row(i);
        for (int j = 0; j < d; ++j) centered[static_cast<size_t>(j)] = row[j] - pca.mean[static_cast<size_t>(j)];
        for (int c = 0; c < k; ++c) out.at(i, c) = dot(pca.components.row(c), centered.data(), d);
    }
    return out;
}

Mat pca_inverse_transform(const PcaModel& pca, const Mat& reduced) {
    const int k = pca.components.rows;
    if (reduced.cols != k) throw std::runtime_error("pca dimension mismatch");
    const int d = static_cast<int>(pca.mean.size());
    Mat out(reduced.rows, d);
    for (int i = 0; i < reduced.rows; ++i) {
        double* row = out.row(i);
        for (int j = 0; j < d; ++j) row[j] = pca.mean[static_cast<size_t>(j)];
        for (int c = 0; c < k; ++c) {
            double coef = reduced.at(i, c);
            const double* comp = pca.components.row(c);
            for (int j = 0; j < d; ++j) row[j] += coef * comp[j];
        }
    }
    return out;
}

// --- K-means ---------------------------------------------------------------

KMeansMode parse_kmeans_mode(const std::string& name) {
    if (name == "lloyd") return KMeansMode::Lloyd;
    if (name == "minibatch") return KMeansMode::MiniBatch;
    throw ConfigError("unknown kmeans mode: " + name);
}

std::string kmeans_mode_name(KMeansMode mode) {
    return mode == KMeansMode::Lloyd ? "lloyd" : "minibatch";
}

namespace {

double ordered_sum(const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e;
    return s;
}

// Reseed each empty cluster to the yet-unused row farthest from its assigned
// centroid (ties -> lowest row index).
void reseed_empty(const Mat& x, const std::vector<double>& d2, const std::vector<int>& counts,
                  Mat& centroids) {
    std::vector<int> order(static_cast<size_t>(x.rows));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return d2[static_cast<size_t>(a)] > d2[static_cast<size_t>(b)]; });
    size_t next = 0;
    for (int c = 0; c < centroids.rows; ++c) {
        if (counts[static_cast<size_t>(c)] > 0) continue;
        if (next >= order.size()) break;
        const double* donor = x.row(order[next++]);
        std::copy(donor, donor + x.cols, centroids.row(c));
    }
}

} // namespace

KMeansModel kmeans(const Mat& x, int k_clusters, KMeansMode mode, int batch_size, int max_iters,
                   uint64_t seed) {
    if (k_clusters < 1) throw std::runtime_error("kmeans needs at least one cluster");
    if (k_clusters > x.rows) throw std::runtime_error("kmeans: more clusters than rows");
    if (max_iters < 1) throw std::runtime_error("kmeans: max_iters must be positive");

    SplitMix64 rng(seed);
    KMeansModel m;
    m.mode = mode;
    m.centroids = Mat(k_clusters, x.cols);
    {
        auto init = sample_without_replacement(static_cast<size_t>(x.rows),
                                               static_cast<size_t>(k_clusters), rng);
        for (int c = 0; c < k_clusters; ++c) {
            const double* src = x.row(static_cast<int>(init[static_cast<size_t>(c)]));
            std::copy(src, src + x.cols, m.centroids.row(c));
        }
    }

    std::vector<double> d2;
    if (mode == KMeansMode::Lloyd) {
        nearest_centroid(x, m.centroids, m.assignments, &d2);
        m.inertia_log.push_back(ordered_sum(d2));
        for (int iter = 0; iter < max_iters; ++iter) {
            Mat means;
            std::vector<int> counts;
            cluster_means(x, m.assignments, k_clusters, means, counts);
            if (std::find(counts.begin(), counts.end(), 0) != counts.end())
                reseed_empty(x, d2, counts, means);
            m.centroids = std::move(means);

            std::vector<int> prev = std::move(m.assignments);
            nearest_centroid(x, m.centroids, m.assignments, &d2);
            m.inertia_log.push_back(ordered_sum(d2));
            if (m.assignments == prev) break;
        }
    } else {
        if (batch_size < 1 || batch_size > x.rows)
            throw std::runtime_error("kmeans: batch size must be in [1, n]");
        std::vector<long long> counts(static_cast<size_t>(k_clusters), 0);
        Mat batch(batch_size, x.cols);
        std::vector<int> cached;
        for (int iter = 0; iter < max_iters; ++iter) {
            auto picks = sample_without_replacement(static_cast<size_t>(x.rows),
                                                    static_cast<size_t>(batch_size), rng);
            for (int b = 0; b < batch_size; ++b) {
                const double* src = x.row(static_cast<int>(picks[static_cast<size_t>(b)]));
                std::copy(src, src + x.cols, batch.row(b));
            }
            // Assignments are cached against the batch-start centroids, then
            // the updates are applied one drawn row at a time.
            nearest_centroid(batch, m.centroids, cached, nullptr);
            for (int b = 0; b < batch_size; ++b) {
                int c = cached[static_cast<size_t>(b)];
                double eta = 1.0 / static_cast<double>(++counts[static_cast<size_t>(c)]);
                double* centroid = m.centroids.row(c);
                const double* row = batch.row(b);
                for (int j = 0; j < x.cols; ++j) centroid[j] += eta * (row[j] - centroid[j]);
            }
        }
        nearest_centroid(x, m.centroids, m.assignments, &d2);
        m.inertia_log.push_back(ordered_sum(d2));
    }
    m.inertia = m.inertia_log.back();
    return m;
}

// --- outliers ----------------------------------------------------------

OutlierResult detect_outliers(const Mat& reduced, const OutlierParams& params) {
    if (params.min_points < 1) throw std::runtime_error("min_points must be positive");
    if (reduced.rows < params.min_points + 1)
        throw std::runtime_error("too few rows for outlier detection");

    OutlierResult r;
    r.kth_distance = kth_nn_distance(reduced, params.min_points);
    if (params.epsilon > 0.0) {
        r.epsilon_used = params.epsilon;
    } else {
        std::vector<double> sorted = r.kth_distance;
        std::sort(sorted.begin(), sorted.end());
        size_t n = sorted.size();
        double median = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        r.epsilon_used = 1.5 * median;
    }
    r.neighbor_count = neighbor_counts(reduced, r.epsilon_used);
    r.flags.resize(static_cast<size_t>(reduced.rows));
    for (size_t i = 0; i < r.flags.size(); ++i)
        r.flags[i] = r.neighbor_count[i] < params.min_points ? 1 : 0;
    return r;
}

// --- scans ---------------------------------------------------------------

namespace {

void validate_dataset_scan_params(const DatasetScanParams& p) {
    if (p.k_pca < 1) throw ConfigError("pca dimension must be positive");
    if (p.kmeans_iters < 1) throw ConfigError("kmeans iterations must be positive");
    if (p.kmeans_batch < 1) throw ConfigError("kmeans batch size must be positive");
    if (p.size_threshold <= 0.0 || p.size_threshold > 0.5)
        throw ConfigError("size threshold must be in (0, 0.5]");
    if (p.separation_threshold < 1.0)
        throw ConfigError("separation threshold must be at least 1");
}

bool row_less(const Mat& m, int a, int b) {
    const double* ra = m.row(a);
    const double* rb = m.row(b);
    for (int j = 0; j < m.cols; ++j) {
        if (ra[j] != rb[j]) return ra[j] < rb[j];
    }
    return false;
}

} // namespace

DetectionReport scan_dataset(const ClassifierParams& model, const LabeledDataset& dataset,
                             const DatasetScanParams& params, uint64_t seed) {
    validate_dataset_scan_params(params);
    if (dataset.examples.empty()) throw std::runtime_error("empty dataset");
    if (model.C != dataset.n_classes)
        throw std::runtime_error("model and dataset class counts differ");

    DetectionReport rep;
    rep.mode = "dataset_scan";
    rep.seed = seed;
    rep.dataset_params = params;
    rep.flags.assign(dataset.size(), 0);
    rep.scores.assign(dataset.size(), 0.0);

    for (int y = 0; y < dataset.n_classes; ++y) {
        std::vector<size_t> indices;
        for (size_t i = 0; i < dataset.size(); ++i) {
            if (dataset.examples[i].label == y) indices.push_back(i);
        }
        ClassScanInfo info;
        info.label = y;
        info.n = static_cast<int>(indices.size());
        if (indices.size() < 4) {
            info.skipped = true;
            rep.warnings.push_back("class " + std::to_string(y) +
                                   " has fewer than 4 examples; skipped");
            rep.class_scans.push_back(info);
            continue;
        }

        ActivationMatrix acts = extract_activations(model, dataset, indices);
        const int n = acts.data.rows;

        // Canonical value order: the flagged set then depends only on the
        // multiset of activations, not on dataset order.
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return row_less(acts.data, a, b); });
        Mat canon(n, acts.data.cols);
        for (int r = 0; r < n; ++r) {
            const double* src = acts.data.row(order[static_cast<size_t>(r)]);
            std::copy(src, src + acts.data.cols, canon.row(r));
        }

        int k = std::min({params.k_pca, n - 1, canon.cols});
        PcaModel pca = fit_pca(canon, k, /*allow_degenerate=*/true);
        Mat red = pca_transform(pca, canon);

        KMeansModel km = kmeans(red, 2, params.kmeans_mode, std::min(params.kmeans_batch, n),
                                params.kmeans_iters, seed + static_cast<uint64_t>(y));

        int sizes[2] = {0, 0};
        for (int a : km.assignments) ++sizes[a];
        const int small = sizes[0] <= sizes[1] ? 0 : 1;
        info.small_size = sizes[small];
        info.large_size = sizes[1 - small];
        info.size_fraction = static_cast<double>(sizes[small]) / static_cast<double>(n);
        info.centroid_distance =
            std::sqrt(dist2(km.centroids.row(0), km.centroids.row(1), red.cols));

        double sum_d2[2] = {0.0, 0.0};
        for (int r = 0; r < n; ++r) {
            int c = km.assignments[static_cast<size_t>(r)];
            sum_d2[c] += dist2(red.row(r), km.centroids.row(c), red.cols);
        }
        double rms[2];
        for (int c = 0; c < 2; ++c)
            rms[c] = sizes[c] > 0 ? std::sqrt(sum_d2[c] / sizes[c]) : 0.0;
        info.mean_rms = 0.5 * (rms[0] + rms[1]);

        info.flagged = sizes[small] >= 1 &&
                       info.size_fraction <= params.size_threshold &&
                       info.centroid_distance >= params.separation_threshold * info.mean_rms;

        for (int r = 0; r < n; ++r) {
            size_t orig = indices[static_cast<size_t>(order[static_cast<size_t>(r)])];
            int c = km.assignments[static_cast<size_t>(r)];
            rep.scores[orig] = 1.0 - static_cast<double>(sizes[c]) / static_cast<double>(n);
            if (info.flagged && c == small) rep.flags[orig] = 1;
        }
        rep.class_scans.push_back(info);
    }
    return rep;
}

DetectionReport scan_model(const ClassifierParams& model, const Vocab& vocab,
                           const LabeledDataset& probe_source, const ScanConfig& scan,
                           const OutlierParams& outliers, int k_pca, uint64_t seed) {
    if (model.C != probe_source.n_classes)
        throw std::runtime_error("model and dataset class counts differ");
    if (k_pca < 1) throw ConfigError("pca dimension must be positive");
    if (outliers.min_points < 1) throw ConfigError("min_points must be positive");
    if (vocab.size <= 2) throw std::runtime_error("vocabulary too small for phrase sampling");

    const bool enumerate = scan.source_class < 0 || scan.target_class < 0;
    {
        ScanConfig check = scan;
        if (enumerate) {
            check.source_class = 0;
            check.target_class = 1;
        }
        validate_scan_config(check);
    }
    if (!enumerate &&
        (scan.source_class >= model.C || scan.target_class >= model.C))
        throw ConfigError("scan class out of range");

    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(model.C));
    for (size_t i = 0; i < probe_source.size(); ++i)
        by_class[static_cast<size_t>(probe_source.examples[i].label)].push_back(i);

    DetectionReport rep;
    rep.mode = "model_scan";
    rep.seed = seed;
    rep.scan_config = scan;
    rep.outlier_params = outliers;
    rep.model_k_pca = k_pca;

    bool any_evidence = false;
    bool any_pair = false;

    for (int s = 0; s < model.C; ++s) {
        for (int t = 0; t < model.C; ++t) {
            if (s == t) continue;
            if (!enumerate && (s != scan.source_class || t != scan.target_class)) continue;

            const uint64_t pair_seed =
                seed + static_cast<uint64_t>(s * model.C + t) * 10007ull;
            const auto& pool = by_class[static_cast<size_t>(s)];
            if (pool.empty()) {
                rep.warnings.push_back("no probes for class " + std::to_string(s) + "; pair (" +
                                       std::to_string(s) + ", " + std::to_string(t) +
                                       ") skipped");
                continue;
            }

            // Fixed random subset of source-class examples as the probe set.
            std::vector<size_t> chosen;
            if (pool.size() <= static_cast<size_t>(scan.probe_count)) {
                chosen = pool;
            } else {
                SplitMix64 prng(pair_seed + 1);
                for (size_t p : sample_without_replacement(
                         pool.size(), static_cast<size_t>(scan.probe_count), prng))
                    chosen.push_back(pool[p]);
                std::sort(chosen.begin(), chosen.end());
            }
            std::vector<std::vector<int>> seqs;
            seqs.reserve(chosen.size());
            for (size_t idx : chosen) seqs.push_back(probe_source.examples[idx].token_ids);
            auto summaries = make_probe_summaries(model, seqs);

            ScanConfig pair_cfg = scan;
            pair_cfg.source_class = s;
            pair_cfg.target_class = t;

            std::vector<Phrase> phrases;
            for (int i = 0; i < scan.n_candidates; ++i)
                phrases.push_back(find_perturbation(model, vocab, summaries, pair_cfg,
                                                    pair_seed + 10 + static_cast<uint64_t>(i)));
            for (auto& aux : sample_auxiliary_phrases(vocab, scan.phrase_length, scan.n_auxiliary,
                                                      pair_seed + 500009)) {
                aux.flip_rate = flip_rate(model, summaries, aux.token_ids, t);
                phrases.push_back(std::move(aux));
            }

            // One row per distinct phrase, first occurrence kept (candidates
            // precede auxiliaries). Identical phrases map to identical
            // activation rows, and identical rows satisfy each other's
            // neighborhood counts — five copies of one converged candidate
            // would vouch for themselves and never look like outliers.
            {
                std::set<std::vector<int>> seen;
                std::vector<Phrase> uniq;
                uniq.reserve(phrases.size());
                for (auto& ph : phrases)
                    if (seen.insert(ph.token_ids).second) uniq.push_back(std::move(ph));
                phrases = std::move(uniq);
            }

            ActivationMatrix rows = extract_phrase_activations(model, summaries, phrases);
            int k = std::min({k_pca, rows.data.rows - 1, rows.data.cols});
            PcaModel pca = fit_pca(rows.data, k, /*allow_degenerate=*/true);
            Mat red = pca_transform(pca, rows.data);
            OutlierResult outl = detect_outliers(red, outliers);

            any_pair = true;
            PairScanInfo pinfo;
            pinfo.source = s;
            pinfo.target = t;
            pinfo.epsilon_used = outl.epsilon_used;

            int cand_index = 0, aux_index = 0;
            for (size_t j = 0; j < phrases.size(); ++j) {
                const Phrase& ph = phrases[j];
                PhraseScanInfo e;
                e.source = s;
                e.target = t;
                e.origin = ph.origin;
                e.index = ph.origin == PhraseOrigin::Candidate ? cand_index++ : aux_index++;
                e.token_ids = ph.token_ids;
                for (int id : ph.token_ids) e.tokens.push_back(vocab.token_of(id));
                e.flip_rate = ph.flip_rate;
                e.outlier = outl.flags[j] != 0;
                e.score = outl.epsilon_used > 0.0 ? outl.kth_distance[j] / outl.epsilon_used : 0.0;
                e.evidence = ph.origin == PhraseOrigin::Candidate && e.outlier &&
                             ph.flip_rate >= scan.flip_threshold;
                if (e.evidence) {
                    any_evidence = true;
                    ++pinfo.n_evidence;
                }
                rep.phrase_scans.push_back(std::move(e));
            }
            rep.pair_scans.push_back(pinfo);
        }
    }
    if (!any_pair) throw std::runtime_error("no probes available for model scan");
    rep.verdict = any_evidence ? "trojan" : "clean";
    return rep;
}

LabeledDataset repair(const LabeledDataset& dataset, const DetectionReport& report) {
    if (report.mode != "dataset_scan")
        throw std::runtime_error("repair requires a dataset scan report");
    if (report.flags.size() != dataset.size())
        throw std::runtime_error("report does not match dataset: flag count differs");

    LabeledDataset out;
    out.n_classes = dataset.n_classes;
    if (dataset.poison_mask) out.poison_mask = std::vector<uint8_t>();
    std::vector<size_t> survivors(static_cast<size_t>(dataset.n_classes), 0);
    for (size_t i = 0; i < dataset.size(); ++i) {
        if (report.flags[i]) continue;
        out.examples.push_back(dataset.examples[i]);
        if (dataset.poison_mask) out.poison_mask->push_back((*dataset.poison_mask)[i]);
        ++survivors[static_cast<size_t>(dataset.examples[i].label)];
    }
    for (size_t count : survivors) {
        if (count < 2) throw std::runtime_error("refusing to remove entire dataset");
    }
    return out;
}

// --- report serialization ----------------------------------------------

namespace {

constexpr int kReportSchemaVersion = 1;

nlohmann::json epsilon_json(const OutlierParams& p) {
    if (p.epsilon > 0.0) return p.epsilon;
    return "auto";
}

} // namespace

std::string report_to_json(const DetectionReport& report) {
    nlohmann::json j;
    j["schema_version"] = kReportSchemaVersion;
    j["version"] = kVersion;
    j["mode"] = report.mode;
    j["seed"] = report.seed;
    j["warnings"] = report.warnings;

    if (report.mode == "dataset_scan") {
        const auto& p = report.dataset_params;
        j["params"] = {{"k_pca", p.k_pca},
                       {"kmeans_mode", kmeans_mode_name(p.kmeans_mode)},
                       {"kmeans_batch", p.kmeans_batch},
                       {"kmeans_iters", p.kmeans_iters},
                       {"size_threshold", p.size_threshold},
                       {"separation_threshold", p.separation_threshold}};
        nlohmann::json classes = nlohmann::json::array();
        for (const auto& c : report.class_scans) {
            nlohmann::json e{{"label", c.label}, {"n", c.n}, {"skipped", c.skipped}};
            if (!c.skipped) {
                e["small_size"] = c.small_size;
                e["large_size"] = c.large_size;
                e["size_fraction"] = c.size_fraction;
                e["centroid_distance"] = c.centroid_distance;
                e["mean_rms"] = c.mean_rms;
                e["flagged"] = c.flagged;
            }
            classes.push_back(std::move(e));
        }
        j["classes"] = std::move(classes);

        nlohmann::json flags = nlohmann::json::array();
        size_t n_flagged = 0;
        for (size_t i = 0; i < report.flags.size(); ++i) {
            flags.push_back({{"id", i},
                             {"flagged", report.flags[i] != 0},
                             {"score", report.scores[i]}});
            if (report.flags[i]) ++n_flagged;
        }
        j["flags"] = std::move(flags);
        j["summary"] = {{"n_examples", report.flags.size()}, {"n_flagged", n_flagged}};
    } else {
        const auto& sc = report.scan_config;
        j["params"] = {{"source_class", sc.source_class},
                       {"target_class", sc.target_class},
                       {"phrase_length", sc.phrase_length},
                       {"n_candidates", sc.n_candidates},
                       {"n_auxiliary", sc.n_auxiliary},
                       {"probe_count", sc.probe_count},
                       {"search_budget", sc.search_budget},
                       {"k_sub", sc.k_sub},
                       {"flip_threshold", sc.flip_threshold},
                       {"k_pca", report.model_k_pca},
                       {"min_points", report.outlier_params.min_points},
                       {"epsilon", epsilon_json(report.outlier_params)}};
        j["verdict"] = report.verdict;

        nlohmann::json pairs = nlohmann::json::array();
        size_t cursor = 0;
        for (const auto& pr : report.pair_scans) {
            nlohmann::json pj{{"source", pr.source},
                              {"target", pr.target},
                              {"epsilon_used", pr.epsilon_used},
                              {"n_evidence", pr.n_evidence}};
            nlohmann::json phrases = nlohmann::json::array();
            for (; cursor < report.phrase_scans.size(); ++cursor) {
                const auto& ph = report.phrase_scans[cursor];
                if (ph.source != pr.source || ph.target != pr.target) break;
                phrases.push_back(
                    {{"kind", ph.origin == PhraseOrigin::Candidate ? "candidate" : "auxiliary"},
                     {"index", ph.index},
                     {"ids", ph.token_ids},
                     {"tokens", ph.tokens},
                     {"flip_rate", ph.flip_rate},
                     {"outlier", ph.outlier},
                     {"score", ph.score},
                     {"evidence", ph.evidence}});
            }
            pj["phrases"] = std::move(phrases);
            pairs.push_back(std::move(pj));
        }
        j["pairs"] = std::move(pairs);
    }
    return j.dump(2) + "\n";
}

DetectionReport report_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw std::runtime_error("malformed report JSON");
    if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
        j["schema_version"].get<int>() != kReportSchemaVersion)
        throw std::runtime_error("unsupported report schema version");
    DetectionReport rep;
    rep.mode = j.value("mode", "");
    rep.seed = j.value("seed", uint64_t{0});
    rep.verdict = j.value("verdict", "");
    if (j.contains("warnings")) rep.warnings = j["warnings"].get<std::vector<std::string>>();
    if (j.contains("flags")) {
        for (const auto& f : j["flags"]) {
            rep.flags.push_back(f.at("flagged").get<bool>() ? 1 : 0);
            rep.scores.push_back(f.at("score").get<double>());
        }
    }
    return rep;
}

} // namespace tscan
