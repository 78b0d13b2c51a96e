#pragma once

// Scoring and reporting: confusion counts over flagged-vs-truth poison masks,
// the derived metric bundle, and the versioned experiment report JSON.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tscan {

struct ConfusionCounts {
    long long tp = 0; // flagged and actually poisoned
    long long fp = 0; // flagged but clean
    long long fn = 0; // missed poison
    long long tn = 0; // clean and unflagged
    long long total() const { return tp + fp + fn + tn; }
};

// Tallies flags against ground truth. Both vectors use nonzero = positive.
ConfusionCounts confusion(const std::vector<uint8_t>& flags, const std::vector<uint8_t>& truth);

struct MetricsBundle {
    double detection_accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double asr = 0.0;
    double clean_accuracy = 0.0;
};

// Derives the bundle from counts; asr and clean_accuracy are passed through.
// Zero denominators yield 0 rather than NaN, and f1 is the harmonic mean of
// precision and recall (0 when both are 0).
MetricsBundle metrics(const ConfusionCounts& counts, double asr, double clean_accuracy);

// Assembles the versioned experiment report. body_json must parse as a JSON
// object; its keys are merged with an "artifacts" section mapping each name
// to its path. Every artifact path must already exist on disk — the report
// is written last so a crash never leaves a report pointing at nothing.
// Output has sorted keys and a trailing newline, so identical inputs give
// identical bytes.
std::string experiment_report(const std::map<std::string, std::string>& artifacts,
                              const std::string& body_json);

// Reads a report back, rejecting unknown schema versions. Returns the raw
// document text after validation.
std::string load_versioned_report(const std::string& path);

} // namespace tscan
