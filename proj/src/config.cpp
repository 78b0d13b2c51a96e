#include "trojanscan/config.hpp"

#include <cctype>
#include <set>
#include <sstream>

#include "json.hpp"

#include "trojanscan/util.hpp"

namespace tscan {
namespace {

std::string trim(const std::string& s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

struct Parser {
    const std::string& origin;
    int line_no = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + what);
    }

    long long to_int(const std::string& key, const std::string& value) const {
        size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(value, &used);
        } catch (const std::exception&) {
            fail("bad integer for " + key + ": '" + value + "'");
        }
        if (used != value.size()) fail("bad integer for " + key + ": '" + value + "'");
        return v;
    }

    double to_double(const std::string& key, const std::string& value) const {
        size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(value, &used);
        } catch (const std::exception&) {
            fail("bad number for " + key + ": '" + value + "'");
        }
        if (used != value.size()) fail("bad number for " + key + ": '" + value + "'");
        return v;
    }

    uint64_t to_u64(const std::string& key, const std::string& value) const {
        size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(value, &used);
        } catch (const std::exception&) {
            fail("bad seed for " + key + ": '" + value + "'");
        }
        if (used != value.size() || (!value.empty() && value[0] == '-'))
            fail("bad seed for " + key + ": '" + value + "'");
        return v;
    }
};

void apply_key(RunConfig& c, Parser& p, const std::string& key, const std::string& value) {
    if (key == "dataset") c.dataset = value;
    else if (key == "format") c.format = parse_format(value);
    else if (key == "train_frac") c.train_frac = p.to_double(key, value);
    else if (key == "val_frac") c.val_frac = p.to_double(key, value);
    else if (key == "test_frac") c.test_frac = p.to_double(key, value);
    else if (key == "min_freq") c.min_freq = static_cast<int>(p.to_int(key, value));
    else if (key == "synth_train") c.synth_train = static_cast<int>(p.to_int(key, value));
    else if (key == "synth_test") c.synth_test = static_cast<int>(p.to_int(key, value));
    else if (key == "synth_class_tokens") c.synth_class_tokens = static_cast<int>(p.to_int(key, value));
    else if (key == "synth_noise_tokens") c.synth_noise_tokens = static_cast<int>(p.to_int(key, value));
    else if (key == "synth_min_len") c.synth_min_len = static_cast<int>(p.to_int(key, value));
    else if (key == "synth_max_len") c.synth_max_len = static_cast<int>(p.to_int(key, value));
    else if (key == "synth_content") c.synth_content = p.to_double(key, value);
    else if (key == "embed_dim") c.embed_dim = static_cast<int>(p.to_int(key, value));
    else if (key == "hidden_dim") c.hidden_dim = static_cast<int>(p.to_int(key, value));
    else if (key == "learning_rate") c.learning_rate = p.to_double(key, value);
    else if (key == "epochs") c.epochs = static_cast<int>(p.to_int(key, value));
    else if (key == "batch_size") c.batch_size = static_cast<int>(p.to_int(key, value));
    else if (key == "l2") c.l2 = p.to_double(key, value);
    else if (key == "trigger") c.trigger = value;
    else if (key == "position") c.position = parse_position(value);
    else if (key == "target_label") c.target_label = static_cast<int>(p.to_int(key, value));
    else if (key == "rate") c.rate = p.to_double(key, value);
    else if (key == "poison_source") c.poison_source = static_cast<int>(p.to_int(key, value));
    else if (key == "scan_source") c.scan_source = static_cast<int>(p.to_int(key, value));
    else if (key == "scan_target") c.scan_target = static_cast<int>(p.to_int(key, value));
    else if (key == "phrase_length") c.phrase_length = static_cast<int>(p.to_int(key, value));
    else if (key == "n_candidates") c.n_candidates = static_cast<int>(p.to_int(key, value));
    else if (key == "n_auxiliary") c.n_auxiliary = static_cast<int>(p.to_int(key, value));
    else if (key == "probe_count") c.probe_count = static_cast<int>(p.to_int(key, value));
    else if (key == "search_budget") c.search_budget = static_cast<int>(p.to_int(key, value));
    else if (key == "k_sub") c.k_sub = static_cast<int>(p.to_int(key, value));
    else if (key == "flip_threshold") c.flip_threshold = p.to_double(key, value);
    else if (key == "min_points") c.min_points = static_cast<int>(p.to_int(key, value));
    else if (key == "epsilon") {
        if (value == "auto") {
            c.epsilon = 0.0;
        } else {
            c.epsilon = p.to_double(key, value);
            if (c.epsilon <= 0.0) p.fail("epsilon must be 'auto' or a positive number");
        }
    } else if (key == "size_threshold") c.size_threshold = p.to_double(key, value);
    else if (key == "separation_threshold") c.separation_threshold = p.to_double(key, value);
    else if (key == "k_pca") c.k_pca = static_cast<int>(p.to_int(key, value));
    else if (key == "kmeans_mode") c.kmeans_mode = parse_kmeans_mode(value);
    else if (key == "kmeans_batch") c.kmeans_batch = static_cast<int>(p.to_int(key, value));
    else if (key == "kmeans_iters") c.kmeans_iters = static_cast<int>(p.to_int(key, value));
    else if (key == "seed") c.seed = p.to_u64(key, value);
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "threads") c.threads = static_cast<int>(p.to_int(key, value));
    else p.fail("unknown config key: " + key);
}

void validate(const RunConfig& c, const std::string& origin) {
    auto fail = [&](const std::string& what) { throw ConfigError(origin + ": " + what); };
    if (c.dataset.empty()) fail("dataset must be 'synthetic' or a file path");
    if (c.train_frac <= 0.0 || c.val_frac <= 0.0 || c.test_frac <= 0.0)
        fail("split fractions must be positive");
    const double frac_sum = c.train_frac + c.val_frac + c.test_frac;
    if (frac_sum < 1.0 - 1e-9 || frac_sum > 1.0 + 1e-9) fail("split fractions must sum to 1");
    if (c.min_freq < 1) fail("min_freq must be at least 1");
    if (c.synth_train < 2 || c.synth_test < 2) fail("synthetic corpus sizes must be at least 2");
    if (c.synth_class_tokens < 1 || c.synth_noise_tokens < 1)
        fail("synthetic token pools must be non-empty");
    if (c.synth_min_len < 1 || c.synth_max_len < c.synth_min_len)
        fail("synthetic lengths must satisfy 1 <= min <= max");
    if (c.synth_content < 0.0 || c.synth_content > 1.0)
        fail("synth_content must be in [0, 1]");
    if (c.embed_dim < 1 || c.hidden_dim < 1) fail("classifier dimensions must be positive");
    if (c.learning_rate <= 0.0 || c.learning_rate > 1.0) fail("learning rate must be in (0, 1]");
    if (c.epochs < 1) fail("epochs must be at least 1");
    if (c.batch_size < 1) fail("batch size must be at least 1");
    if (c.l2 < 0.0) fail("l2 must be non-negative");
    if (c.target_label < 0) fail("target label must be non-negative");
    if (c.rate <= 0.0 || c.rate >= 1.0) fail("injection rate must be in (0, 1)");
    if (c.poison_source < -1) fail("poison_source must be -1 or a class index");
    if (c.scan_source < -1 || c.scan_target < -1)
        fail("scan classes must be -1 or class indices");
    // Reuse the scan validator; enumerate mode (-1) checks a stand-in pair.
    ScanConfig probe = c.scan_config();
    if (probe.source_class < 0 || probe.target_class < 0) {
        probe.source_class = 0;
        probe.target_class = 1;
    }
    validate_scan_config(probe);
    if (c.min_points < 1) fail("min_points must be positive");
    if (c.size_threshold <= 0.0 || c.size_threshold > 0.5)
        fail("size threshold must be in (0, 0.5]");
    if (c.separation_threshold < 1.0) fail("separation threshold must be at least 1");
    if (c.k_pca < 1) fail("pca dimension must be positive");
    if (c.kmeans_batch < 1) fail("kmeans batch size must be positive");
    if (c.kmeans_iters < 1) fail("kmeans iterations must be positive");
    if (c.out_dir.empty()) fail("out_dir must not be empty");
    if (c.threads < 0) fail("thread count must be non-negative");
    if (c.has_trigger()) {
        // Surface trigger problems at config time, not mid-pipeline.
        make_trigger(c.trigger, c.position, c.target_label, c.rate);
    }
}

} // namespace

TriggerSpec RunConfig::trigger_spec() const {
    if (!has_trigger()) throw ConfigError("trigger required");
    return make_trigger(trigger, position, target_label, rate);
}

TrainConfig RunConfig::train_config(uint64_t stage_seed) const {
    TrainConfig t;
    t.learning_rate = learning_rate;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.seed = stage_seed;
    t.l2 = l2;
    return t;
}

ScanConfig RunConfig::scan_config() const {
    ScanConfig s;
    s.source_class = scan_source;
    s.target_class = scan_target;
    s.phrase_length = phrase_length;
    s.n_candidates = n_candidates;
    s.n_auxiliary = n_auxiliary;
    s.probe_count = probe_count;
    s.search_budget = search_budget;
    s.k_sub = k_sub;
    s.flip_threshold = flip_threshold;
    return s;
}

OutlierParams RunConfig::outlier_params() const {
    OutlierParams o;
    o.min_points = min_points;
    o.epsilon = epsilon;
    return o;
}

DatasetScanParams RunConfig::dataset_scan_params() const {
    DatasetScanParams d;
    d.k_pca = k_pca;
    d.kmeans_mode = kmeans_mode;
    d.kmeans_batch = kmeans_batch;
    d.kmeans_iters = kmeans_iters;
    d.size_threshold = size_threshold;
    d.separation_threshold = separation_threshold;
    return d;
}

SynthSpec RunConfig::synth_spec(int n_examples) const {
    SynthSpec s;
    s.n_examples = n_examples;
    s.class_tokens = synth_class_tokens;
    s.noise_tokens = synth_noise_tokens;
    s.min_len = synth_min_len;
    s.max_len = synth_max_len;
    s.content_fraction = synth_content;
    return s;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig config;
    Parser parser{origin};
    std::set<std::string> seen;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        ++parser.line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos) parser.fail("expected key = value");
        const std::string key = trim(stripped.substr(0, eq));
        if (key.empty()) parser.fail("expected key = value");
        std::string value = trim(stripped.substr(eq + 1));
        if (!value.empty() && value.front() == '"') {
            // Quoted values carry spaces and '#' literally; no escapes.
            const size_t close = value.find('"', 1);
            if (close == std::string::npos) parser.fail("unterminated quote");
            const std::string rest = trim(value.substr(close + 1));
            if (!rest.empty() && rest[0] != '#') parser.fail("trailing text after quote");
            value = value.substr(1, close - 1);
        } else {
            // Unquoted values end at an inline comment.
            const size_t hash = value.find('#');
            if (hash != std::string::npos) value = trim(value.substr(0, hash));
        }
        if (!seen.insert(key).second) parser.fail("duplicate config key: " + key);
        try {
            apply_key(config, parser, key, value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            // parse_format / parse_position / parse_kmeans_mode complaints get
            // the file:line prefix too.
            parser.fail(e.what());
        }
    }
    validate(config, origin);
    return config;
}

RunConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return parse_config_text(text, path);
}

std::string config_echo_json(const RunConfig& c) {
    nlohmann::json j;
    j["dataset"] = c.dataset;
    j["format"] = format_name(c.format);
    j["train_frac"] = c.train_frac;
    j["val_frac"] = c.val_frac;
    j["test_frac"] = c.test_frac;
    j["min_freq"] = c.min_freq;
    j["synth_train"] = c.synth_train;
    j["synth_test"] = c.synth_test;
    j["synth_class_tokens"] = c.synth_class_tokens;
    j["synth_noise_tokens"] = c.synth_noise_tokens;
    j["synth_min_len"] = c.synth_min_len;
    j["synth_max_len"] = c.synth_max_len;
    j["synth_content"] = c.synth_content;
    j["embed_dim"] = c.embed_dim;
    j["hidden_dim"] = c.hidden_dim;
    j["learning_rate"] = c.learning_rate;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["l2"] = c.l2;
    j["trigger"] = c.trigger;
    j["position"] = position_name(c.position);
    j["target_label"] = c.target_label;
    j["rate"] = c.rate;
    j["poison_source"] = c.poison_source;
    j["scan_source"] = c.scan_source;
    j["scan_target"] = c.scan_target;
    j["phrase_length"] = c.phrase_length;
    j["n_candidates"] = c.n_candidates;
    j["n_auxiliary"] = c.n_auxiliary;
    j["probe_count"] = c.probe_count;
    j["search_budget"] = c.search_budget;
    j["k_sub"] = c.k_sub;
    j["flip_threshold"] = c.flip_threshold;
    j["min_points"] = c.min_points;
    if (c.epsilon > 0.0) j["epsilon"] = c.epsilon;
    else j["epsilon"] = "auto";
    j["size_threshold"] = c.size_threshold;
    j["separation_threshold"] = c.separation_threshold;
    j["k_pca"] = c.k_pca;
    j["kmeans_mode"] = kmeans_mode_name(c.kmeans_mode);
    j["kmeans_batch"] = c.kmeans_batch;
    j["kmeans_iters"] = c.kmeans_iters;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["threads"] = c.threads;
    return j.dump();
}

} // namespace tscan
