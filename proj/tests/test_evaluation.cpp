#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "trojanscan/evaluation.hpp"
#include "trojanscan/rng.hpp"

#include "json.hpp"

using namespace tscan;

TEST_CASE("confusion tallies the four quadrants") {
    ConfusionCounts c = confusion({1, 0, 1}, {1, 0, 1});
    CHECK(c.tp == 2);
    CHECK(c.tn == 1);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);

    c = confusion({1, 1}, {0, 0});
    CHECK(c.fp == 2);
    CHECK(c.tp + c.fn + c.tn == 0);

    CHECK_THROWS_WITH(confusion({1}, {1, 0}), "confusion: length mismatch");
    CHECK_THROWS(confusion({}, {}));
}

TEST_CASE("confusion agrees with an independent per-item tally") {
    SplitMix64 rng(5);
    std::vector<uint8_t> flags, truth;
    for (int i = 0; i < 1000; ++i) {
        flags.push_back(rng.next() & 1);
        truth.push_back(rng.next() & 1);
    }
    ConfusionCounts c = confusion(flags, truth);

    long long tp = 0, fp = 0, fn = 0, tn = 0;
    for (int i = 0; i < 1000; ++i) {
        if (flags[static_cast<size_t>(i)]) {
            if (truth[static_cast<size_t>(i)])
                ++tp;
            else
                ++fp;
        } else {
            if (truth[static_cast<size_t>(i)])
                ++fn;
            else
                ++tn;
        }
    }
    CHECK(c.tp == tp);
    CHECK(c.fp == fp);
    CHECK(c.fn == fn);
    CHECK(c.tn == tn);
    CHECK(c.total() == 1000);
}

TEST_CASE("metrics compute the pinned worked example") {
    ConfusionCounts c{9, 1, 1, 89};
    MetricsBundle m = metrics(c, 0.5, 0.9);
    CHECK(m.detection_accuracy == doctest::Approx(0.98));
    CHECK(m.precision == doctest::Approx(0.9));
    CHECK(m.recall == doctest::Approx(0.9));
    CHECK(m.f1 == doctest::Approx(0.9));
    CHECK(m.asr == 0.5);
    CHECK(m.clean_accuracy == 0.9);
}

TEST_CASE("zero denominators yield zero, not NaN") {
    ConfusionCounts c{0, 0, 0, 10};
    MetricsBundle m = metrics(c, 0.0, 1.0);
    CHECK(m.precision == 0.0);
    CHECK(m.recall == 0.0);
    CHECK(m.f1 == 0.0);
    CHECK(m.detection_accuracy == 1.0);

    CHECK_THROWS_WITH(metrics(ConfusionCounts{}, 0.0, 0.0), "metrics: no evaluated items");
}

TEST_CASE("f1 sits between precision and recall on fuzzed counts") {
    SplitMix64 rng(7);
    for (int i = 0; i < 500; ++i) {
        ConfusionCounts c;
        c.tp = static_cast<long long>(rng.next_below(20));
        c.fp = static_cast<long long>(rng.next_below(20));
        c.fn = static_cast<long long>(rng.next_below(20));
        c.tn = static_cast<long long>(rng.next_below(20));
        if (c.total() == 0) c.tn = 1;
        MetricsBundle m = metrics(c, 0.0, 1.0);
        CHECK(m.detection_accuracy >= 0.0);
        CHECK(m.detection_accuracy <= 1.0);
        if (m.f1 == 0.0) continue;
        CHECK(m.f1 >= std::min(m.precision, m.recall) - 1e-12);
        CHECK(m.f1 <= std::max(m.precision, m.recall) + 1e-12);
    }
}

TEST_CASE("experiment reports are byte-stable and reference real artifacts") {
    auto dir = std::filesystem::temp_directory_path();
    auto artifact = dir / "tscan_eval_artifact.json";
    {
        std::ofstream f(artifact);
        f << "{}\n";
    }

    std::map<std::string, std::string> artifacts{{"model", artifact.string()}};
    std::string body = "{\"seed\": 1, \"metrics\": {\"f1\": 0.9}}";
    std::string a = experiment_report(artifacts, body);
    std::string b = experiment_report(artifacts, body);
    CHECK(a == b);

    nlohmann::json doc = nlohmann::json::parse(a);
    CHECK(doc["schema_version"] == 1);
    CHECK(doc["artifacts"]["model"] == artifact.string());
    CHECK(doc["seed"] == 1);

    // missing artifacts are named in the error
    std::map<std::string, std::string> missing{{"vocab", (dir / "tscan_eval_gone.json").string()}};
    try {
        experiment_report(missing, body);
        FAIL("expected a missing-artifact error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("missing artifact: vocab") != std::string::npos);
    }

    CHECK_THROWS_WITH(experiment_report(artifacts, "not json"), "malformed report body");
    std::filesystem::remove(artifact);
}

TEST_CASE("versioned reports reject unknown schema versions") {
    auto path = std::filesystem::temp_directory_path() / "tscan_eval_versioned.json";
    {
        std::ofstream f(path);
        f << "{\"schema_version\": 1, \"payload\": 3}\n";
    }
    std::string text = load_versioned_report(path.string());
    CHECK(text.find("payload") != std::string::npos);

    {
        std::ofstream f(path);
        f << "{\"schema_version\": 2}\n";
    }
    try {
        load_versioned_report(path.string());
        FAIL("expected a version error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("unsupported report schema version") != std::string::npos);
    }

    {
        std::ofstream f(path);
        f << "{no}\n";
    }
    CHECK_THROWS(load_versioned_report(path.string()));
    std::filesystem::remove(path);
}
