#pragma once

// Universal-perturbation search: greedy coordinate descent over phrase token
// slots, maximizing the mean target-class probability across a fixed probe
// set. Candidates found this way, plus random auxiliary phrases, form the
// population the detector screens for outliers.

#include <cstdint>
#include <string>
#include <vector>

#include "trojanscan/classifier.hpp"
#include "trojanscan/corpus.hpp"
#include "trojanscan/kernels.hpp"
#include "trojanscan/rng.hpp"

namespace tscan {

enum class PhraseOrigin { Candidate, Auxiliary };

struct Phrase {
    std::vector<int> token_ids; // fixed length L within one scan
    PhraseOrigin origin = PhraseOrigin::Candidate;
    double flip_rate = 0.0;     // filled after evaluation
};

struct ScanConfig {
    int source_class = 0;
    int target_class = 1;
    int phrase_length = 2;
    int n_candidates = 5;  // independent search restarts
    int n_auxiliary = 50;  // reference population size
    int probe_count = 50;  // source-class samples used to evaluate phrases
    int search_budget = 3; // full coordinate passes per restart
    int k_sub = 200;       // pool size: the k_sub most frequent tokens
    double flip_threshold = 0.75;
};

// Throws ConfigError on any out-of-range field.
void validate_scan_config(const ScanConfig& config);

// length ids drawn uniformly from the non-reserved vocabulary [2, V).
std::vector<int> random_phrase(const Vocab& vocab, int length, SplitMix64& rng);

// m independent random phrases; the in-distribution reference population.
std::vector<Phrase> sample_auxiliary_phrases(const Vocab& vocab, int length, int m,
                                             uint64_t seed);

// Fraction of probes predicted as `target` with the phrase appended.
double flip_rate(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                 const std::vector<int>& phrase, int target);

// Greedy token search from a random start. Each pass sweeps every position,
// substituting the pool token that maximizes the mean target probability
// (strict improvement only; pool scanned in ascending id order so ties are
// deterministic). Returns the best (flip_rate, objective) phrase seen —
// never worse than the random initialization. search_budget = 0 returns the
// initialization with its measured flip rate.
Phrase find_perturbation(const ClassifierParams& p, const Vocab& vocab,
                         const std::vector<ProbeSummary>& probes, const ScanConfig& config,
                         uint64_t seed);

} // namespace tscan
