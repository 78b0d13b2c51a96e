#include "trojanscan/evaluation.hpp"

#include <filesystem>
#include <stdexcept>

#include "json.hpp"

#include "trojanscan/util.hpp"

namespace tscan {

using nlohmann::json;

ConfusionCounts confusion(const std::vector<uint8_t>& flags, const std::vector<uint8_t>& truth) {
    if (flags.empty() || flags.size() != truth.size()) {
        throw std::invalid_argument("confusion: length mismatch");
    }
    ConfusionCounts c;
    for (size_t i = 0; i < flags.size(); ++i) {
        const bool f = flags[i] != 0;
        const bool t = truth[i] != 0;
        if (f && t) ++c.tp;
        else if (f && !t) ++c.fp;
        else if (!f && t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

MetricsBundle metrics(const ConfusionCounts& counts, double asr, double clean_accuracy) {
    const long long total = counts.total();
    if (total <= 0) throw std::invalid_argument("metrics: no evaluated items");
    MetricsBundle m;
    m.detection_accuracy = double(counts.tp + counts.tn) / double(total);
    const long long pd = counts.tp + counts.fp;
    const long long rd = counts.tp + counts.fn;
    m.precision = pd > 0 ? double(counts.tp) / double(pd) : 0.0;
    m.recall = rd > 0 ? double(counts.tp) / double(rd) : 0.0;
    const double pr = m.precision + m.recall;
    m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
    m.asr = asr;
    m.clean_accuracy = clean_accuracy;
    return m;
}

std::string experiment_report(const std::map<std::string, std::string>& artifacts,
                              const std::string& body_json) {
    json body = json::parse(body_json, nullptr, false);
    if (body.is_discarded() || !body.is_object()) {
        throw std::invalid_argument("malformed report body");
    }
    json files(json::value_t::object);
    for (const auto& [name, path] : artifacts) {
        if (!std::filesystem::exists(path)) {
            throw std::runtime_error("missing artifact: " + name);
        }
        files[name] = path;
    }
    json doc = std::move(body);
    doc["artifacts"] = std::move(files);
    doc["schema_version"] = 1;
    doc["version"] = kVersion;
    // json objects are backed by std::map, so dump order is sorted-by-key and
    // byte-stable regardless of insertion order.
    return doc.dump(2) + "\n";
}

std::string load_versioned_report(const std::string& path) {
    const std::string text = read_file(path);
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw std::runtime_error("malformed report JSON: " + path);
    }
    if (!doc.contains("schema_version") || !doc["schema_version"].is_number_integer() ||
        doc["schema_version"].get<int>() != 1) {
        throw std::runtime_error("unsupported report schema version: " + path);
    }
    return text;
}

} // namespace tscan
