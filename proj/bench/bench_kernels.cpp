// Times every kernel in serial and OpenMP form over identical inputs and
// checks that the outputs are bit-identical: the parallel path may only
// reorder independent work, never change a single float.
//
// Usage: bench_kernels [n_rows] [repeats]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "trojanscan/classifier.hpp"
#include "trojanscan/kernels.hpp"
#include "trojanscan/mat.hpp"
#include "trojanscan/rng.hpp"

namespace {

using tscan::ClassifierParams;
using tscan::Mat;
using tscan::SplitMix64;

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

bool bits_equal(const Mat& a, const Mat& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Report {
    bool all_equal = true;

    void row(const std::string& name, double serial_ms, double parallel_ms, bool equal) {
        all_equal = all_equal && equal;
        std::printf("%-22s %10.2f ms %10.2f ms %7.2fx  %s\n", name.c_str(), serial_ms,
                    parallel_ms, parallel_ms > 0 ? serial_ms / parallel_ms : 0.0,
                    equal ? "bit-identical" : "MISMATCH");
    }
};

template <typename F>
double time_best(int repeats, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const double t0 = now_ms();
        fn();
        const double t1 = now_ms();
        if (t1 - t0 < best) best = t1 - t0;
    }
    return best;
}

Mat random_points(int n, int d, SplitMix64& rng) {
    Mat x(n, d);
    for (double& v : x.data) v = rng.next_double(-1.0, 1.0);
    return x;
}

} // namespace

int main(int argc, char** argv) {
    const int n = argc > 1 ? std::atoi(argv[1]) : 2000;
    const int repeats = argc > 2 ? std::atoi(argv[2]) : 3;
    if (n < 10 || repeats < 1) {
        std::fprintf(stderr, "usage: bench_kernels [n_rows >= 10] [repeats >= 1]\n");
        return 2;
    }

    SplitMix64 rng(7);
    const int V = 500, E = 32, H = 64, C = 2, d = 16;
    ClassifierParams params = tscan::init_classifier(V, E, H, C, 1);

    std::vector<std::vector<int>> seqs(static_cast<size_t>(n));
    for (auto& s : seqs) {
        const size_t len = 8 + rng.next_below(9);
        s.resize(len);
        for (int& id : s) id = static_cast<int>(rng.next_below(V));
    }
    Mat points = random_points(n, d, rng);
    Mat centroids = random_points(8, d, rng);

    std::printf("%-22s %13s %13s %8s  %s\n", "kernel", "serial", "parallel", "speedup",
                "outputs");
    Report report;

    {
        Mat a, b;
        const double ts = time_best(repeats, [&] { a = tscan::batch_penultimate_serial(params, seqs); });
        const double tp = time_best(repeats, [&] { b = tscan::batch_penultimate_parallel(params, seqs); });
        report.row("batch_penultimate", ts, tp, bits_equal(a, b));
    }
    {
        std::vector<int> a, b;
        const double ts = time_best(repeats, [&] { a = tscan::batch_predict_serial(params, seqs); });
        const double tp = time_best(repeats, [&] { b = tscan::batch_predict_parallel(params, seqs); });
        report.row("batch_predict", ts, tp, a == b);
    }
    {
        // covariance wants centered data; benching it raw is fine numerically
        Mat a, b;
        const double ts = time_best(repeats, [&] { a = tscan::covariance_serial(points); });
        const double tp = time_best(repeats, [&] { b = tscan::covariance_parallel(points); });
        report.row("covariance", ts, tp, bits_equal(a, b));
    }
    {
        std::vector<int> a, b;
        const double ts =
            time_best(repeats, [&] { tscan::nearest_centroid_serial(points, centroids, a); });
        const double tp =
            time_best(repeats, [&] { tscan::nearest_centroid_parallel(points, centroids, b); });
        report.row("nearest_centroid", ts, tp, a == b);

        Mat ma, mb;
        std::vector<int> ca, cb;
        const double ms = time_best(repeats, [&] { tscan::cluster_means_serial(points, a, 8, ma, ca); });
        const double mp = time_best(repeats, [&] { tscan::cluster_means_parallel(points, b, 8, mb, cb); });
        report.row("cluster_means", ms, mp, bits_equal(ma, mb) && ca == cb);
    }
    {
        std::vector<int> a, b;
        const double ts = time_best(repeats, [&] { a = tscan::neighbor_counts_serial(points, 0.5); });
        const double tp = time_best(repeats, [&] { b = tscan::neighbor_counts_parallel(points, 0.5); });
        report.row("neighbor_counts", ts, tp, a == b);
    }
    {
        std::vector<double> a, b;
        const double ts = time_best(repeats, [&] { a = tscan::kth_nn_distance_serial(points, 3); });
        const double tp = time_best(repeats, [&] { b = tscan::kth_nn_distance_parallel(points, 3); });
        report.row("kth_nn_distance", ts, tp, bits_equal(a, b));
    }
    {
        std::vector<std::vector<int>> probe_ids(seqs.begin(),
                                                seqs.begin() + std::min<size_t>(seqs.size(), 50));
        const auto probes = tscan::make_probe_summaries(params, probe_ids);
        std::vector<int> phrase = {2, 3};
        std::vector<int> pool(200);
        for (size_t i = 0; i < pool.size(); ++i) pool[i] = 2 + static_cast<int>(i);
        std::vector<double> a, b;
        const double ts = time_best(repeats, [&] {
            a = tscan::eval_candidates_serial(params, probes, phrase, 1, pool, 1);
        });
        const double tp = time_best(repeats, [&] {
            b = tscan::eval_candidates_parallel(params, probes, phrase, 1, pool, 1);
        });
        report.row("eval_candidates", ts, tp, bits_equal(a, b));
    }

    if (!report.all_equal) {
        std::fprintf(stderr, "serial/parallel outputs diverged\n");
        return 1;
    }
    return 0;
}
