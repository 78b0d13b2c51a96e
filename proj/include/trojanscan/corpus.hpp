#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tscan {

inline constexpr int kUnkId = 0;
inline constexpr int kPadId = 1;

// Token table with two reserved ids: 0 = UNK, 1 = PAD. Real tokens start at
// id 2 and are assigned in descending corpus frequency, ties broken
// lexicographically, so building is deterministic without a seed.
struct Vocab {
    std::map<std::string, int> token_to_id;                  // ids >= 2 only
    std::vector<std::string> id_to_token = {"<unk>", "<pad>"};
    int size = 2;

    int lookup(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnkId : it->second;
    }
    const std::string& token_of(int id) const { return id_to_token[static_cast<size_t>(id)]; }

    // Appends a token with the next free id; returns its id. Existing tokens
    // are returned unchanged.
    int add_token(const std::string& token);

    // FNV-1a over the non-reserved tokens in id order; stored in model files
    // to detect vocab/model mismatches.
    uint64_t content_hash() const;
};

struct Example {
    std::string raw_text;
    std::vector<int> token_ids; // empty until attach_vocab
    int label = 0;
};

struct LabeledDataset {
    std::vector<Example> examples;
    int n_classes = 0;
    // Ground-truth poison markers, used only for evaluation. Same length as
    // examples when present.
    std::optional<std::vector<uint8_t>> poison_mask;

    size_t size() const { return examples.size(); }
};

enum class DataFormat { Jsonl, Csv };

DataFormat parse_format(const std::string& name);
std::string format_name(DataFormat f);

// Lowercases ASCII, splits on Unicode whitespace, strips leading/trailing
// ASCII punctuation from each piece, and drops pieces that become empty.
std::vector<std::string> normalize_tokens(const std::string& text);

// Same normalization, but also reporting the byte span of every
// whitespace-delimited word and which word each surviving token came from
// (punctuation-only words produce no token). Lets callers splice new words
// into the raw text at a boundary that matches a token position.
struct TokenSpans {
    std::vector<std::string> tokens;
    std::vector<std::pair<size_t, size_t>> word_spans; // byte [begin, end) per word
    std::vector<size_t> token_word;                    // tokens[i] <- word_spans[token_word[i]]
};

TokenSpans normalize_tokens_spans(const std::string& text);

Vocab build_vocab(const std::vector<std::string>& corpus, int min_freq);

// Never returns an empty sequence: text with no surviving tokens maps to
// {UNK}.
std::vector<int> tokenize(const std::string& text, const Vocab& vocab);

// Tokenizes every example in place.
void attach_vocab(LabeledDataset& dataset, const Vocab& vocab);

LabeledDataset load_dataset(const std::string& path, DataFormat format);
void save_dataset(const LabeledDataset& dataset, const std::string& path, DataFormat format);

struct SplitResult {
    LabeledDataset train;
    LabeledDataset val;
    LabeledDataset test;
};

// Deterministic seeded shuffle; part sizes are floor(f*N) with the remainder
// going to train.
SplitResult split(const LabeledDataset& dataset, double train_frac, double val_frac,
                  double test_frac, uint64_t seed);

// Desk-scale stand-in for the full text corpora: two disjoint content-token
// pools (one per class) mixed with shared noise tokens.
struct SynthSpec {
    int n_examples = 2000;
    int class_tokens = 25;  // per-class pool size
    int noise_tokens = 50;  // shared pool size
    int min_len = 8;
    int max_len = 16;
    double content_fraction = 0.6;
};

LabeledDataset make_synthetic_two_pool(const SynthSpec& spec, uint64_t seed);

} // namespace tscan
