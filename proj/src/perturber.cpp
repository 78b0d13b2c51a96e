#include "trojanscan/perturber.hpp"

#include <stdexcept>

#include "trojanscan/util.hpp"

namespace tscan {

void validate_scan_config(const ScanConfig& config) {
    if (config.source_class < 0 || config.target_class < 0)
        throw ConfigError("scan classes must be non-negative");
    if (config.source_class == config.target_class)
        throw ConfigError("source and target class must differ");
    if (config.phrase_length < 1) throw ConfigError("phrase length must be at least 1");
    if (config.n_candidates < 1) throw ConfigError("need at least 1 candidate phrase");
    if (config.n_auxiliary < 20)
        throw ConfigError("need at least 20 auxiliary phrases for outlier statistics");
    if (config.probe_count < 1) throw ConfigError("probe count must be positive");
    if (config.search_budget < 0) throw ConfigError("search budget must be non-negative");
    if (config.k_sub < 1) throw ConfigError("substitution pool size must be positive");
    if (config.flip_threshold <= 0.0 || config.flip_threshold >= 1.0)
        throw ConfigError("flip threshold must be in (0, 1)");
}

std::vector<int> random_phrase(const Vocab& vocab, int length, SplitMix64& rng) {
    if (vocab.size <= 2) throw std::runtime_error("vocabulary too small for phrase sampling");
    if (length < 1) throw std::runtime_error("phrase length must be at least 1");
    std::vector<int> ids(static_cast<size_t>(length));
    for (auto& id : ids)
        id = 2 + static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab.size - 2)));
    return ids;
}

std::vector<Phrase> sample_auxiliary_phrases(const Vocab& vocab, int length, int m,
                                             uint64_t seed) {
    if (m < 1) throw std::runtime_error("need at least one auxiliary phrase");
    SplitMix64 rng(seed);
    std::vector<Phrase> out;
    out.reserve(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i)
        out.push_back(Phrase{random_phrase(vocab, length, rng), PhraseOrigin::Auxiliary, 0.0});
    return out;
}

double flip_rate(const ClassifierParams& p, const std::vector<ProbeSummary>& probes,
                 const std::vector<int>& phrase, int target) {
    return eval_phrase(p, probes, phrase, target).flip_rate;
}

namespace {

bool lex_better(const PhraseEval& a, const PhraseEval& b) {
    if (a.flip_rate != b.flip_rate) return a.flip_rate > b.flip_rate;
    return a.mean_target_prob > b.mean_target_prob;
}

} // namespace

Phrase find_perturbation(const ClassifierParams& p, const Vocab& vocab,
                         const std::vector<ProbeSummary>& probes, const ScanConfig& config,
                         uint64_t seed) {
    validate_scan_config(config);
    if (probes.empty()) throw std::runtime_error("empty probe set");
    if (config.target_class >= p.C) throw std::runtime_error("target class out of range");

    SplitMix64 rng(seed);
    std::vector<int> cur = random_phrase(vocab, config.phrase_length, rng);
    PhraseEval cur_ev = eval_phrase(p, probes, cur, config.target_class);

    std::vector<int> best = cur;
    PhraseEval best_ev = cur_ev;

    // Most frequent tokens own the lowest non-reserved ids.
    const int pool_size = std::min(config.k_sub, vocab.size - 2);
    std::vector<int> pool(static_cast<size_t>(pool_size));
    for (int i = 0; i < pool_size; ++i) pool[static_cast<size_t>(i)] = 2 + i;

    for (int pass = 0; pass < config.search_budget && best_ev.flip_rate < 1.0; ++pass) {
        bool changed = false;
        for (size_t pos = 0; pos < cur.size() && best_ev.flip_rate < 1.0; ++pos) {
            auto objective =
                eval_candidates(p, probes, cur, static_cast<int>(pos), pool, config.target_class);
            size_t arg = 0;
            for (size_t j = 1; j < objective.size(); ++j) {
                if (objective[j] > objective[arg]) arg = j;
            }
            // "Pool plus the current token": only a strict improvement over
            // the current phrase displaces its token.
            if (objective[arg] > cur_ev.mean_target_prob) {
                cur[pos] = pool[arg];
                cur_ev = eval_phrase(p, probes, cur, config.target_class);
                changed = true;
                if (lex_better(cur_ev, best_ev)) {
                    best = cur;
                    best_ev = cur_ev;
                }
            }
        }
        if (!changed) break;
    }
    return Phrase{best, PhraseOrigin::Candidate, best_ev.flip_rate};
}

} // namespace tscan
