#include "trojanscan/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "trojanscan/rng.hpp"
#include "trojanscan/util.hpp"

namespace tscan {

namespace {

bool is_unicode_space(uint32_t cp) {
    switch (cp) {
        case ' ': case '\t': case '\n': case '\r': case '\f': case '\v':
        case 0x0085: case 0x00A0: case 0x1680:
        case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

// Minimal UTF-8 decode; invalid bytes fall through as single code points so
// normalization never throws on arbitrary input.
uint32_t decode_utf8(const std::string& s, size_t& i) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) { i += 1; return c; }
    int extra = 0;
    uint32_t cp = 0;
    if ((c & 0xE0) == 0xC0) { cp = c & 0x1F; extra = 1; }
    else if ((c & 0xF0) == 0xE0) { cp = c & 0x0F; extra = 2; }
    else if ((c & 0xF8) == 0xF0) { cp = c & 0x07; extra = 3; }
    else { i += 1; return c; }
    if (i + extra >= s.size()) { i += 1; return c; }
    for (int k = 1; k <= extra; ++k) {
        unsigned char cc = static_cast<unsigned char>(s[i + k]);
        if ((cc & 0xC0) != 0x80) { i += 1; return c; }
        cp = (cp << 6) | (cc & 0x3F);
    }
    i += extra + 1;
    return cp;
}

bool is_ascii_punct(char c) {
    unsigned char u = static_cast<unsigned char>(c);
    return u < 0x80 && std::ispunct(u);
}

} // namespace

std::vector<std::string> normalize_tokens(const std::string& text) {
    return normalize_tokens_spans(text).tokens;
}

TokenSpans normalize_tokens_spans(const std::string& text) {
    TokenSpans out;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        size_t word_begin = i;
        if (is_unicode_space(decode_utf8(text, i))) continue;
        size_t word_end = i;
        while (i < n) {
            size_t probe = i;
            if (is_unicode_space(decode_utf8(text, i))) {
                word_end = probe;
                break;
            }
            word_end = i;
        }
        out.word_spans.emplace_back(word_begin, word_end);

        // ASCII punctuation bytes never occur inside multi-byte UTF-8
        // sequences, so byte-wise end trimming is safe.
        size_t b = word_begin, e = word_end;
        while (b < e && is_ascii_punct(text[b])) ++b;
        while (e > b && is_ascii_punct(text[e - 1])) --e;
        if (e > b) {
            std::string tok;
            tok.reserve(e - b);
            for (size_t k = b; k < e; ++k) {
                char c = text[k];
                if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
                tok.push_back(c);
            }
            out.token_word.push_back(out.word_spans.size() - 1);
            out.tokens.push_back(std::move(tok));
        }
    }
    return out;
}

int Vocab::add_token(const std::string& token) {
    auto it = token_to_id.find(token);
    if (it != token_to_id.end()) return it->second;
    int id = static_cast<int>(id_to_token.size());
    token_to_id.emplace(token, id);
    id_to_token.push_back(token);
    size = static_cast<int>(id_to_token.size());
    return id;
}

uint64_t Vocab::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 2; i < id_to_token.size(); ++i) {
        const std::string& tok = id_to_token[i];
        h = fnv1a64(tok.data(), tok.size(), h);
        h = fnv1a64("\n", 1, h);
    }
    return h;
}

Vocab build_vocab(const std::vector<std::string>& corpus, int min_freq) {
    if (corpus.empty()) throw std::runtime_error("empty corpus");
    std::map<std::string, long long> freq;
    for (const auto& doc : corpus) {
        for (auto& tok : normalize_tokens(doc)) ++freq[tok];
    }
    std::vector<std::pair<std::string, long long>> kept;
    for (const auto& [tok, f] : freq) {
        if (f >= min_freq) kept.emplace_back(tok, f);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, f] : kept) {
        (void)f;
        v.token_to_id.emplace(tok, static_cast<int>(v.id_to_token.size()));
        v.id_to_token.push_back(tok);
    }
    v.size = static_cast<int>(v.id_to_token.size());
    return v;
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
    std::vector<int> ids;
    for (const auto& tok : normalize_tokens(text)) ids.push_back(vocab.lookup(tok));
    if (ids.empty()) ids.push_back(kUnkId);
    return ids;
}

void attach_vocab(LabeledDataset& dataset, const Vocab& vocab) {
    for (auto& ex : dataset.examples) ex.token_ids = tokenize(ex.raw_text, vocab);
}

DataFormat parse_format(const std::string& name) {
    if (name == "jsonl") return DataFormat::Jsonl;
    if (name == "csv") return DataFormat::Csv;
    throw ConfigError("unknown dataset format: " + name);
}

std::string format_name(DataFormat f) { return f == DataFormat::Jsonl ? "jsonl" : "csv"; }

namespace {

void check_labels(LabeledDataset& ds, const std::string& path) {
    if (ds.examples.empty()) throw std::runtime_error(path + ": empty dataset");
    int max_label = 0;
    for (const auto& ex : ds.examples) {
        if (ex.label < 0) throw std::runtime_error(path + ": negative label");
        max_label = std::max(max_label, ex.label);
    }
    std::vector<char> seen(static_cast<size_t>(max_label) + 1, 0);
    for (const auto& ex : ds.examples) seen[static_cast<size_t>(ex.label)] = 1;
    for (char s : seen) {
        if (!s) throw std::runtime_error(path + ": labels not contiguous");
    }
    ds.n_classes = max_label + 1;
    if (ds.n_classes < 2) throw std::runtime_error(path + ": dataset needs at least 2 classes");
}

LabeledDataset load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    LabeledDataset ds;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j.contains("label") ||
            !j["text"].is_string() || !j["label"].is_number_integer()) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed JSONL line");
        }
        Example ex;
        ex.raw_text = j["text"].get<std::string>();
        ex.label = j["label"].get<int>();
        ds.examples.push_back(std::move(ex));
    }
    check_labels(ds, path);
    return ds;
}

// RFC-4180 field reader; quoted fields may contain commas, quotes, and
// newlines.
struct CsvReader {
    std::istream& in;
    size_t lineno = 1;

    // Returns one record (possibly spanning lines) or nullopt at EOF.
    std::optional<std::vector<std::string>> next_record(const std::string& path) {
        if (in.peek() == EOF) return std::nullopt;
        std::vector<std::string> fields;
        std::string field;
        bool quoted = false;
        bool started = false;
        int c;
        while ((c = in.get()) != EOF) {
            started = true;
            if (quoted) {
                if (c == '"') {
                    if (in.peek() == '"') { field.push_back('"'); in.get(); }
                    else quoted = false;
                } else {
                    if (c == '\n') ++lineno;
                    field.push_back(static_cast<char>(c));
                }
            } else if (c == '"') {
                if (!field.empty())
                    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": stray quote in CSV field");
                quoted = true;
            } else if (c == ',') {
                fields.push_back(std::move(field));
                field.clear();
            } else if (c == '\r') {
                if (in.peek() == '\n') in.get();
                ++lineno;
                break;
            } else if (c == '\n') {
                ++lineno;
                break;
            } else {
                field.push_back(static_cast<char>(c));
            }
        }
        if (quoted) throw std::runtime_error(path + ": unterminated quoted CSV field");
        if (!started) return std::nullopt;
        fields.push_back(std::move(field));
        return fields;
    }
};

LabeledDataset load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    CsvReader reader{in};
    auto header = reader.next_record(path);
    if (!header || header->size() != 2 || (*header)[0] != "text" || (*header)[1] != "label")
        throw std::runtime_error(path + ":1: CSV header must be \"text,label\"");
    LabeledDataset ds;
    for (;;) {
        size_t record_line = reader.lineno;
        auto rec = reader.next_record(path);
        if (!rec) break;
        if (rec->size() == 1 && (*rec)[0].empty()) continue; // trailing blank line
        if (rec->size() != 2)
            throw std::runtime_error(path + ":" + std::to_string(record_line) + ": expected 2 CSV fields");
        Example ex;
        ex.raw_text = (*rec)[0];
        const std::string& lab = (*rec)[1];
        try {
            size_t pos = 0;
            ex.label = std::stoi(lab, &pos);
            if (pos != lab.size()) throw std::invalid_argument(lab);
        } catch (const std::exception&) {
            throw std::runtime_error(path + ":" + std::to_string(record_line) + ": malformed label \"" + lab + "\"");
        }
        ds.examples.push_back(std::move(ex));
    }
    check_labels(ds, path);
    return ds;
}

std::string csv_quote(const std::string& s) {
    bool needs = s.find_first_of(",\"\r\n") != std::string::npos;
    if (!needs) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

} // namespace

LabeledDataset load_dataset(const std::string& path, DataFormat format) {
    return format == DataFormat::Jsonl ? load_jsonl(path) : load_csv(path);
}

void save_dataset(const LabeledDataset& dataset, const std::string& path, DataFormat format) {
    std::ostringstream out;
    if (format == DataFormat::Jsonl) {
        for (const auto& ex : dataset.examples) {
            nlohmann::json j;
            j["text"] = ex.raw_text;
            j["label"] = ex.label;
            out << j.dump() << '\n';
        }
    } else {
        out << "text,label\n";
        for (const auto& ex : dataset.examples) {
            out << csv_quote(ex.raw_text) << ',' << ex.label << '\n';
        }
    }
    atomic_write(path, out.str());
}

SplitResult split(const LabeledDataset& dataset, double train_frac, double val_frac,
                  double test_frac, uint64_t seed) {
    if (train_frac <= 0 || val_frac <= 0 || test_frac <= 0)
        throw std::runtime_error("split fraction must be positive");
    double sum = train_frac + val_frac + test_frac;
    if (sum < 1.0 - 1e-9 || sum > 1.0 + 1e-9)
        throw std::runtime_error("split fractions must sum to 1");

    const size_t n = dataset.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    SplitMix64 rng(seed);
    shuffle(order, rng);

    size_t n_train = static_cast<size_t>(train_frac * static_cast<double>(n));
    size_t n_val = static_cast<size_t>(val_frac * static_cast<double>(n));
    size_t n_test = static_cast<size_t>(test_frac * static_cast<double>(n));
    n_train += n - (n_train + n_val + n_test); // remainder to train

    auto take = [&](size_t begin, size_t count) {
        LabeledDataset part;
        part.n_classes = dataset.n_classes;
        if (dataset.poison_mask) part.poison_mask = std::vector<uint8_t>();
        for (size_t i = begin; i < begin + count; ++i) {
            part.examples.push_back(dataset.examples[order[i]]);
            if (dataset.poison_mask) part.poison_mask->push_back((*dataset.poison_mask)[order[i]]);
        }
        return part;
    };
    SplitResult r;
    r.train = take(0, n_train);
    r.val = take(n_train, n_val);
    r.test = take(n_train + n_val, n_test);
    return r;
}

LabeledDataset make_synthetic_two_pool(const SynthSpec& spec, uint64_t seed) {
    SplitMix64 rng(seed);
    LabeledDataset ds;
    ds.n_classes = 2;
    for (int i = 0; i < spec.n_examples; ++i) {
        int label = i % 2;
        int len = spec.min_len + static_cast<int>(rng.next_below(
                      static_cast<uint64_t>(spec.max_len - spec.min_len + 1)));
        // Exactly round(len * content_fraction) content slots at random
        // positions. A per-token coin would make the content/noise ratio
        // itself a random variable, and that ratio noise swamps everything
        // else in the classifier's activation geometry.
        const int n_content = static_cast<int>(std::llround(len * spec.content_fraction));
        std::vector<uint8_t> is_content(static_cast<size_t>(len), 0);
        const std::vector<size_t> slots =
            sample_without_replacement(static_cast<size_t>(len),
                                       static_cast<size_t>(n_content), rng);
        for (size_t s : slots) is_content[s] = 1;
        std::string text;
        for (int t = 0; t < len; ++t) {
            if (!text.empty()) text.push_back(' ');
            if (is_content[static_cast<size_t>(t)]) {
                int w = static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.class_tokens)));
                text += (label == 0 ? "neg" : "pos") + std::to_string(w);
            } else {
                int w = static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.noise_tokens)));
                text += "filler" + std::to_string(w);
            }
        }
        ds.examples.push_back(Example{std::move(text), {}, label});
    }
    return ds;
}

std::vector<size_t> sample_without_replacement(size_t n, size_t k, SplitMix64& rng) {
    std::vector<size_t> pool(n);
    for (size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<size_t> out;
    out.reserve(k);
    for (size_t i = 0; i < k && i < n; ++i) {
        size_t j = i + static_cast<size_t>(rng.next_below(n - i));
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

} // namespace tscan
