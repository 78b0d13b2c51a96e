#include "trojanscan/poisoner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "trojanscan/kernels.hpp"
#include "trojanscan/util.hpp"

namespace tscan {

TriggerPosition parse_position(const std::string& name) {
    if (name == "start") return TriggerPosition::Start;
    if (name == "end") return TriggerPosition::End;
    if (name == "random") return TriggerPosition::Random;
    throw ConfigError("unknown trigger position: " + name);
}

std::string position_name(TriggerPosition pos) {
    switch (pos) {
        case TriggerPosition::Start: return "start";
        case TriggerPosition::End: return "end";
        default: return "random";
    }
}

TriggerSpec make_trigger(const std::string& phrase, TriggerPosition position, int target_label,
                         double injection_rate) {
    TriggerSpec t;
    t.words = normalize_tokens(phrase);
    if (t.words.empty()) throw ConfigError("trigger has no tokens: \"" + phrase + "\"");
    if (target_label < 0) throw ConfigError("target label must be non-negative");
    if (injection_rate <= 0.0 || injection_rate >= 1.0)
        throw ConfigError("injection rate must be in (0, 1)");
    t.position = position;
    t.target_label = target_label;
    t.injection_rate = injection_rate;
    return t;
}

void ensure_trigger_in_vocab(TriggerSpec& trigger, Vocab& vocab) {
    trigger.token_ids.clear();
    for (const auto& w : trigger.words) {
        int id = vocab.lookup(w);
        if (id == kUnkId) id = vocab.add_token(w);
        trigger.token_ids.push_back(id);
    }
}

Example inject(const Example& ex, const TriggerSpec& trigger, SplitMix64& rng,
               int* insert_pos_out) {
    if (trigger.token_ids.empty())
        throw std::runtime_error("trigger not resolved against a vocabulary");
    if (ex.token_ids.empty()) throw std::runtime_error("dataset not tokenized");

    Example out;
    out.label = trigger.target_label;

    std::string trigger_text;
    for (const auto& w : trigger.words) {
        if (!trigger_text.empty()) trigger_text.push_back(' ');
        trigger_text += w;
    }

    TokenSpans spans = normalize_tokens_spans(ex.raw_text);
    const size_t n_tokens = spans.tokens.size();
    if (n_tokens == 0) {
        // Untokenizable original (token_ids is the UNK placeholder): the
        // trigger becomes the whole token sequence.
        out.token_ids = trigger.token_ids;
        out.raw_text = ex.raw_text.empty() ? trigger_text
                       : trigger.position == TriggerPosition::Start
                           ? trigger_text + " " + ex.raw_text
                           : ex.raw_text + " " + trigger_text;
        if (insert_pos_out) *insert_pos_out = 0;
        return out;
    }
    if (ex.token_ids.size() != n_tokens)
        throw std::runtime_error("example token ids out of sync with raw text");

    size_t pos = 0;
    switch (trigger.position) {
        case TriggerPosition::Start: pos = 0; break;
        case TriggerPosition::End: pos = n_tokens; break;
        case TriggerPosition::Random: pos = rng.next_below(n_tokens + 1); break;
    }

    out.token_ids.reserve(n_tokens + trigger.token_ids.size());
    out.token_ids.assign(ex.token_ids.begin(), ex.token_ids.begin() + static_cast<long>(pos));
    out.token_ids.insert(out.token_ids.end(), trigger.token_ids.begin(), trigger.token_ids.end());
    out.token_ids.insert(out.token_ids.end(), ex.token_ids.begin() + static_cast<long>(pos),
                         ex.token_ids.end());

    // Splice the words at the boundary of the word that produced token[pos],
    // leaving every other byte of the original text untouched.
    out.raw_text = ex.raw_text;
    if (pos < n_tokens) {
        out.raw_text.insert(spans.word_spans[spans.token_word[pos]].first, trigger_text + " ");
    } else {
        out.raw_text.insert(spans.word_spans[spans.token_word[n_tokens - 1]].second,
                            " " + trigger_text);
    }
    if (insert_pos_out) *insert_pos_out = static_cast<int>(pos);
    return out;
}

PoisonedDataset poison_dataset(const LabeledDataset& dataset, const TriggerSpec& trigger,
                               uint64_t seed, int source_class) {
    if (dataset.poison_mask) throw std::runtime_error("dataset already poisoned");
    if (dataset.examples.empty()) throw std::runtime_error("empty dataset");
    if (trigger.target_label >= dataset.n_classes)
        throw std::runtime_error("target label out of range");
    if (source_class >= 0) {
        if (source_class >= dataset.n_classes)
            throw std::runtime_error("source class out of range");
        if (source_class == trigger.target_label)
            throw std::runtime_error("source class equals target label");
    }
    if (trigger.token_ids.empty())
        throw std::runtime_error("trigger not resolved against a vocabulary");

    std::vector<size_t> eligible;
    for (size_t i = 0; i < dataset.size(); ++i) {
        int lab = dataset.examples[i].label;
        if (lab == trigger.target_label) continue;
        if (source_class >= 0 && lab != source_class) continue;
        eligible.push_back(i);
    }
    if (eligible.empty()) throw std::runtime_error("nothing to poison");

    // Round half up, so any rate covering at least half an example poisons one.
    auto n_poison = static_cast<size_t>(
        std::floor(trigger.injection_rate * static_cast<double>(eligible.size()) + 0.5));
    if (n_poison == 0) throw std::runtime_error("injection rate selects no examples");

    SplitMix64 rng(seed);
    std::vector<size_t> chosen;
    for (size_t p : sample_without_replacement(eligible.size(), n_poison, rng))
        chosen.push_back(eligible[p]);
    std::sort(chosen.begin(), chosen.end());

    PoisonedDataset out;
    out.dataset = dataset;
    out.dataset.poison_mask = std::vector<uint8_t>(dataset.size(), 0);
    out.trigger = trigger;
    for (size_t idx : chosen) {
        int pos = 0;
        out.dataset.examples[idx] = inject(dataset.examples[idx], trigger, rng, &pos);
        (*out.dataset.poison_mask)[idx] = 1;
        out.source_indices.push_back(idx);
        out.insert_positions.push_back(pos);
    }
    return out;
}

double attack_success_rate(const ClassifierParams& p, const std::vector<Example>& test,
                           const TriggerSpec& trigger, uint64_t seed) {
    if (test.empty()) throw std::runtime_error("empty test set");
    SplitMix64 rng(seed);
    std::vector<std::vector<int>> seqs;
    for (const auto& ex : test) {
        if (ex.label == trigger.target_label) continue;
        seqs.push_back(inject(ex, trigger, rng).token_ids);
    }
    if (seqs.empty()) throw std::runtime_error("no examples eligible for attack evaluation");
    auto labels = batch_predict(p, seqs);
    size_t hits = 0;
    for (int lab : labels) {
        if (lab == trigger.target_label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::pair<double, double> clean_accuracy_delta(const ClassifierParams& clean_model,
                                               const ClassifierParams& poisoned_model,
                                               const std::vector<Example>& clean_test) {
    if (clean_test.empty()) throw std::runtime_error("empty test set");
    std::vector<std::vector<int>> seqs;
    std::vector<int> labels;
    seqs.reserve(clean_test.size());
    for (const auto& ex : clean_test) {
        seqs.push_back(ex.token_ids);
        labels.push_back(ex.label);
    }
    auto pred_clean = batch_predict(clean_model, seqs);
    auto pred_poisoned = batch_predict(poisoned_model, seqs);
    size_t hits_clean = 0, hits_poisoned = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (pred_clean[i] == labels[i]) ++hits_clean;
        if (pred_poisoned[i] == labels[i]) ++hits_poisoned;
    }
    auto n = static_cast<double>(labels.size());
    return {static_cast<double>(hits_clean) / n, static_cast<double>(hits_poisoned) / n};
}

} // namespace tscan
