#include "doctest.h"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "trojanscan/corpus.hpp"
#include "trojanscan/rng.hpp"

using namespace tscan;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
}

// order-insensitive fingerprint of a dataset
std::multiset<std::pair<std::string, int>> as_multiset(const LabeledDataset& d) {
    std::multiset<std::pair<std::string, int>> out;
    for (const auto& e : d.examples) out.insert({e.raw_text, e.label});
    return out;
}

} // namespace

TEST_CASE("vocab ids follow frequency then lexicographic order") {
    Vocab v = build_vocab({"a b", "a c"}, 1);
    CHECK(v.lookup("a") == 2);
    CHECK(v.lookup("b") == 3);
    CHECK(v.lookup("c") == 4);
    CHECK(v.size == 5);
}

TEST_CASE("min_freq drops rare tokens") {
    Vocab v = build_vocab({"a b", "a c"}, 2);
    CHECK(v.lookup("a") == 2);
    CHECK(v.lookup("b") == kUnkId);
    CHECK(v.lookup("c") == kUnkId);
    CHECK(v.size == 3);
}

TEST_CASE("vocab over a generated corpus counts every distinct token") {
    SplitMix64 rng(3);
    std::vector<std::string> docs;
    for (int i = 0; i < 1000; ++i) {
        std::string doc;
        for (int t = 0; t < 6; ++t) {
            if (t) doc += ' ';
            doc += "tok" + std::to_string(rng.next_below(50));
        }
        docs.push_back(doc);
    }
    // 1000 docs of 6 draws each: every one of the 50 tokens appears
    Vocab v = build_vocab(docs, 1);
    CHECK(v.size == 52);
    CHECK_THROWS_WITH(build_vocab({}, 1), "empty corpus");
}

TEST_CASE("tokenize lowercases, strips punctuation, and maps OOV to UNK") {
    Vocab v;
    for (const char* t : {"the", "movie", "was", "bad"}) v.add_token(t);
    CHECK(v.lookup("the") == 2);
    CHECK(tokenize("The movie, was bad", v) == std::vector<int>{2, 3, 4, 5});
    CHECK(tokenize("xylophone", v) == std::vector<int>{kUnkId});
    CHECK(tokenize("", v) == std::vector<int>{kUnkId});
    CHECK(tokenize("...", v) == std::vector<int>{kUnkId});
}

TEST_CASE("vocab add_token returns existing ids unchanged") {
    Vocab v = build_vocab({"a b"}, 1);
    int before = v.size;
    CHECK(v.add_token("a") == v.lookup("a"));
    CHECK(v.size == before);
    int id = v.add_token("zeta");
    CHECK(id == before);
    CHECK(v.lookup("zeta") == id);
}

TEST_CASE("content hash changes when the token list changes") {
    Vocab a = build_vocab({"a b"}, 1);
    Vocab b = build_vocab({"a b"}, 1);
    CHECK(a.content_hash() == b.content_hash());
    b.add_token("c");
    CHECK(a.content_hash() != b.content_hash());
}

TEST_CASE("split sizes are floored with the remainder going to train") {
    LabeledDataset d;
    d.n_classes = 2;
    for (int i = 0; i < 10; ++i) d.examples.push_back({"e" + std::to_string(i), {}, i % 2});
    SplitResult r = split(d, 0.8, 0.1, 0.1, 17);
    CHECK(r.train.size() == 8);
    CHECK(r.val.size() == 1);
    CHECK(r.test.size() == 1);
}

TEST_CASE("split is deterministic and partitions the dataset") {
    LabeledDataset d;
    d.n_classes = 2;
    for (int i = 0; i < 100; ++i) d.examples.push_back({"e" + std::to_string(i), {}, i % 2});

    SplitResult a = split(d, 0.5, 0.25, 0.25, 7);
    SplitResult b = split(d, 0.5, 0.25, 0.25, 7);
    CHECK(as_multiset(a.train) == as_multiset(b.train));
    CHECK(as_multiset(a.val) == as_multiset(b.val));
    CHECK(as_multiset(a.test) == as_multiset(b.test));

    auto all = as_multiset(a.train);
    for (const auto& e : a.val.examples) all.insert({e.raw_text, e.label});
    for (const auto& e : a.test.examples) all.insert({e.raw_text, e.label});
    CHECK(all == as_multiset(d));
}

TEST_CASE("different seeds give different orderings almost surely") {
    LabeledDataset d;
    d.n_classes = 2;
    for (int i = 0; i < 10; ++i) d.examples.push_back({"e" + std::to_string(i), {}, i % 2});
    std::set<std::vector<std::string>> orders;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        SplitResult r = split(d, 0.8, 0.1, 0.1, seed);
        std::vector<std::string> order;
        for (const auto& e : r.train.examples) order.push_back(e.raw_text);
        orders.insert(order);
    }
    CHECK(orders.size() >= 99);
}

TEST_CASE("jsonl round-trips and preserves order") {
    auto path = temp_file("tscan_corpus_rt.jsonl");
    LabeledDataset d;
    d.n_classes = 2;
    d.examples.push_back({"good film", {}, 1});
    d.examples.push_back({"bad \"quoted\" film", {}, 0});
    save_dataset(d, path.string(), DataFormat::Jsonl);
    LabeledDataset back = load_dataset(path.string(), DataFormat::Jsonl);
    REQUIRE(back.size() == 2);
    CHECK(back.examples[0].raw_text == "good film");
    CHECK(back.examples[0].label == 1);
    CHECK(back.examples[1].raw_text == "bad \"quoted\" film");
    CHECK(back.n_classes == 2);
    std::filesystem::remove(path);
}

TEST_CASE("csv round-trips including commas and quotes") {
    auto path = temp_file("tscan_corpus_rt.csv");
    LabeledDataset d;
    d.n_classes = 2;
    d.examples.push_back({"plain text", {}, 0});
    d.examples.push_back({"has, comma and \"quote\"", {}, 1});
    d.examples.push_back({"line\nbreak", {}, 1});
    save_dataset(d, path.string(), DataFormat::Csv);
    LabeledDataset back = load_dataset(path.string(), DataFormat::Csv);
    REQUIRE(back.size() == 3);
    CHECK(back.examples[1].raw_text == "has, comma and \"quote\"");
    CHECK(back.examples[2].raw_text == "line\nbreak");
    std::filesystem::remove(path);
}

TEST_CASE("malformed input names the offending line") {
    auto path = temp_file("tscan_corpus_bad.jsonl");
    write_file(path, "{\"text\":\"ok\",\"label\":0}\nnot json\n");
    try {
        load_dataset(path.string(), DataFormat::Jsonl);
        FAIL("expected a parse error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("gapped label sets are rejected") {
    auto path = temp_file("tscan_corpus_gap.jsonl");
    write_file(path, "{\"text\":\"a\",\"label\":0}\n{\"text\":\"b\",\"label\":2}\n");
    CHECK_THROWS_WITH(load_dataset(path.string(), DataFormat::Jsonl),
                      doctest::Contains("labels not contiguous"));
    std::filesystem::remove(path);
}

TEST_CASE("missing dataset file is an error") {
    CHECK_THROWS(load_dataset("/nonexistent/nowhere.jsonl", DataFormat::Jsonl));
}

TEST_CASE("format names parse both ways") {
    CHECK(parse_format("jsonl") == DataFormat::Jsonl);
    CHECK(parse_format("csv") == DataFormat::Csv);
    CHECK(format_name(DataFormat::Csv) == "csv");
    CHECK_THROWS(parse_format("parquet"));
}

TEST_CASE("synthetic two-pool corpus is balanced, disjoint, and length-bounded") {
    SynthSpec spec;
    spec.n_examples = 200;
    LabeledDataset d = make_synthetic_two_pool(spec, 5);
    REQUIRE(d.size() == 200);
    CHECK(d.n_classes == 2);

    int per_class[2] = {0, 0};
    for (const auto& e : d.examples) ++per_class[e.label];
    CHECK(per_class[0] == 100);
    CHECK(per_class[1] == 100);

    // class pools never leak across labels
    for (const auto& e : d.examples) {
        const char* own = e.label == 0 ? "neg" : "pos";
        const char* other = e.label == 0 ? "pos" : "neg";
        size_t n_tokens = 0;
        for (const std::string& tok : normalize_tokens(e.raw_text)) {
            ++n_tokens;
            CHECK(tok.find(other) != 0);
            bool content = tok.find(own) == 0;
            bool noise = tok.find("filler") == 0;
            CHECK((content || noise));
        }
        CHECK(n_tokens >= static_cast<size_t>(spec.min_len));
        CHECK(n_tokens <= static_cast<size_t>(spec.max_len));
    }

    LabeledDataset again = make_synthetic_two_pool(spec, 5);
    CHECK(as_multiset(again) == as_multiset(d));
}

TEST_CASE("attach_vocab tokenizes every example in place") {
    LabeledDataset d;
    d.n_classes = 2;
    d.examples.push_back({"a b", {}, 0});
    d.examples.push_back({"b c", {}, 1});
    Vocab v = build_vocab({"a b", "b c"}, 1);
    attach_vocab(d, v);
    CHECK(d.examples[0].token_ids == tokenize("a b", v));
    CHECK(d.examples[1].token_ids == tokenize("b c", v));
}

TEST_CASE("token spans let callers splice words at token boundaries") {
    TokenSpans spans = normalize_tokens_spans("  Hello, (brave) new world!  ");
    REQUIRE(spans.tokens.size() == 4);
    CHECK(spans.tokens[0] == "hello");
    CHECK(spans.tokens[1] == "brave");
    // every token points at a word whose raw span contains it
    const std::string text = "  Hello, (brave) new world!  ";
    for (size_t i = 0; i < spans.tokens.size(); ++i) {
        auto [b, e] = spans.word_spans[spans.token_word[i]];
        std::string raw = text.substr(b, e - b);
        for (char& c : raw) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        CHECK(raw.find(spans.tokens[i]) != std::string::npos);
    }
}
