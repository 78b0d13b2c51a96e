#pragma once

// The attack side: splice a trigger phrase into a fraction of the training
// examples and relabel them, then measure how well the backdoor took hold.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trojanscan/classifier.hpp"
#include "trojanscan/corpus.hpp"
#include "trojanscan/rng.hpp"

namespace tscan {

enum class TriggerPosition { Start, End, Random };

TriggerPosition parse_position(const std::string& name);
std::string position_name(TriggerPosition pos);

struct TriggerSpec {
    std::vector<std::string> words; // normalized trigger tokens
    std::vector<int> token_ids;     // empty until ensure_trigger_in_vocab
    TriggerPosition position = TriggerPosition::End;
    int target_label = 0;
    double injection_rate = 0.05;
};

// Normalizes the phrase into trigger words. Throws on a phrase with no
// surviving tokens, a negative target label, or a rate outside (0, 1).
TriggerSpec make_trigger(const std::string& phrase, TriggerPosition position, int target_label,
                         double injection_rate);

// Resolves trigger words to ids, appending novel words to the vocabulary —
// the victim trainer would see them in the poisoned corpus anyway.
void ensure_trigger_in_vocab(TriggerSpec& trigger, Vocab& vocab);

// Copy of the example with the trigger block spliced into token_ids at the
// policy position, the trigger words spliced into raw_text at the matching
// word boundary (so re-tokenizing reproduces the new ids), and the label set
// to the target. insert_pos_out reports the token splice index so tests can
// reverse it. A text with no tokens at all comes back as just the trigger.
Example inject(const Example& ex, const TriggerSpec& trigger, SplitMix64& rng,
               int* insert_pos_out = nullptr);

struct PoisonedDataset {
    LabeledDataset dataset; // poison_mask populated
    TriggerSpec trigger;
    std::vector<size_t> source_indices; // ascending indices of modified examples
    std::vector<int> insert_positions;  // token splice point per source index
};

// Poisons round-half-up(rate * n_eligible) examples drawn uniformly without
// replacement from the eligible ones (label != target, further restricted to
// source_class when >= 0). Unmodified examples stay bit-identical. Rejects
// datasets that already carry a poison mask.
PoisonedDataset poison_dataset(const LabeledDataset& dataset, const TriggerSpec& trigger,
                               uint64_t seed, int source_class = -1);

// Fraction of non-target-label examples predicted as the target once the
// trigger is injected (labels untouched). The seed drives the random
// position policy; start/end ignore it.
double attack_success_rate(const ClassifierParams& p, const std::vector<Example>& test,
                           const TriggerSpec& trigger, uint64_t seed);

// Accuracies of both models on the same clean inputs: (clean, poisoned).
// The stealth requirement is that these stay close.
std::pair<double, double> clean_accuracy_delta(const ClassifierParams& clean_model,
                                               const ClassifierParams& poisoned_model,
                                               const std::vector<Example>& clean_test);

} // namespace tscan
