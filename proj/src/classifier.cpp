#include "trojanscan/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <stdexcept>

#include "trojanscan/rng.hpp"
#include "trojanscan/util.hpp"

namespace tscan {

namespace {

void fill_xavier(Mat& m, int fan_in, int fan_out, SplitMix64& rng) {
    double s = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& w : m.data) w = rng.next_double(-s, s);
}

void check_ids(const ClassifierParams& p, std::span<const int> ids) {
    if (ids.empty()) throw std::runtime_error("empty token sequence");
    for (int id : ids) {
        if (id < 0 || id >= p.V) throw std::runtime_error("token id out of range");
    }
}

} // namespace

ClassifierParams init_classifier(int V, int E, int H, int C, uint64_t seed) {
    if (V < 1 || E < 1 || H < 1 || C < 1)
        throw std::runtime_error("classifier dimension must be positive");
    ClassifierParams p;
    p.V = V; p.E = E; p.H = H; p.C = C;
    p.embedding = Mat(V, E);
    p.W1 = Mat(E, H);
    p.b1.assign(static_cast<size_t>(H), 0.0);
    p.W2 = Mat(H, C);
    p.b2.assign(static_cast<size_t>(C), 0.0);
    SplitMix64 rng(seed);
    fill_xavier(p.embedding, V, E, rng);
    fill_xavier(p.W1, E, H, rng);
    fill_xavier(p.W2, H, C, rng);
    return p;
}

std::vector<double> embedding_mean(const ClassifierParams& p, std::span<const int> token_ids) {
    check_ids(p, token_ids);
    std::vector<double> mean(static_cast<size_t>(p.E), 0.0);
    int count = 0;
    for (int id : token_ids) {
        if (id == kPadId) continue;
        const double* row = p.embedding.row(id);
        for (int j = 0; j < p.E; ++j) mean[static_cast<size_t>(j)] += row[j];
        ++count;
    }
    if (count > 0) {
        for (auto& v : mean) v /= count;
    }
    return mean;
}

void penultimate_from_mean(const ClassifierParams& p, const double* mean, double* out) {
    for (int h = 0; h < p.H; ++h) out[h] = p.b1[static_cast<size_t>(h)];
    for (int e = 0; e < p.E; ++e) {
        double m = mean[e];
        if (m == 0.0) continue;
        const double* w = p.W1.row(e);
        for (int h = 0; h < p.H; ++h) out[h] += m * w[h];
    }
    for (int h = 0; h < p.H; ++h) out[h] = out[h] > 0.0 ? out[h] : 0.0;
}

int logits_to_probs(const ClassifierParams& p, const double* penultimate, double* probs) {
    for (int c = 0; c < p.C; ++c) probs[c] = p.b2[static_cast<size_t>(c)];
    for (int h = 0; h < p.H; ++h) {
        double a = penultimate[h];
        if (a == 0.0) continue;
        const double* w = p.W2.row(h);
        for (int c = 0; c < p.C; ++c) probs[c] += a * w[c];
    }
    double max_logit = probs[0];
    for (int c = 1; c < p.C; ++c) max_logit = std::max(max_logit, probs[c]);
    double sum = 0.0;
    for (int c = 0; c < p.C; ++c) {
        probs[c] = std::exp(probs[c] - max_logit);
        sum += probs[c];
    }
    int argmax = 0;
    for (int c = 0; c < p.C; ++c) {
        probs[c] /= sum;
        if (probs[c] > probs[argmax]) argmax = c;
    }
    return argmax;
}

Prediction forward(const ClassifierParams& p, std::span<const int> token_ids) {
    Prediction pr;
    auto mean = embedding_mean(p, token_ids);
    pr.penultimate.assign(static_cast<size_t>(p.H), 0.0);
    penultimate_from_mean(p, mean.data(), pr.penultimate.data());
    pr.probs.assign(static_cast<size_t>(p.C), 0.0);
    pr.label = logits_to_probs(p, pr.penultimate.data(), pr.probs.data());
    pr.confidence = pr.probs[static_cast<size_t>(pr.label)];
    return pr;
}

Prediction predict(const ClassifierParams& p, const Vocab& vocab, const std::string& text) {
    auto ids = tokenize(text, vocab);
    return forward(p, ids);
}

namespace {

double squared_param_norm(const ClassifierParams& p) {
    double s = 0.0;
    for (double w : p.embedding.data) s += w * w;
    for (double w : p.W1.data) s += w * w;
    for (double w : p.b1) s += w * w;
    for (double w : p.W2.data) s += w * w;
    for (double w : p.b2) s += w * w;
    return s;
}

// Cross-entropy of one example via log-sum-exp, plus logits/probs needed for
// the backward pass.
struct ForwardScratch {
    std::vector<double> mean, pre, act, probs;
    int nonpad = 0;
};

double example_ce(const ClassifierParams& p, const Example& ex, ForwardScratch& s) {
    s.mean.assign(static_cast<size_t>(p.E), 0.0);
    s.nonpad = 0;
    for (int id : ex.token_ids) {
        if (id == kPadId) continue;
        const double* row = p.embedding.row(id);
        for (int j = 0; j < p.E; ++j) s.mean[static_cast<size_t>(j)] += row[j];
        ++s.nonpad;
    }
    if (s.nonpad > 0) {
        for (auto& v : s.mean) v /= s.nonpad;
    }
    s.pre.assign(static_cast<size_t>(p.H), 0.0);
    for (int h = 0; h < p.H; ++h) s.pre[static_cast<size_t>(h)] = p.b1[static_cast<size_t>(h)];
    for (int e = 0; e < p.E; ++e) {
        double m = s.mean[static_cast<size_t>(e)];
        if (m == 0.0) continue;
        const double* w = p.W1.row(e);
        for (int h = 0; h < p.H; ++h) s.pre[static_cast<size_t>(h)] += m * w[h];
    }
    s.act.resize(static_cast<size_t>(p.H));
    for (int h = 0; h < p.H; ++h)
        s.act[static_cast<size_t>(h)] = std::max(0.0, s.pre[static_cast<size_t>(h)]);

    std::vector<double> logits(static_cast<size_t>(p.C));
    for (int c = 0; c < p.C; ++c) logits[static_cast<size_t>(c)] = p.b2[static_cast<size_t>(c)];
    for (int h = 0; h < p.H; ++h) {
        double a = s.act[static_cast<size_t>(h)];
        if (a == 0.0) continue;
        const double* w = p.W2.row(h);
        for (int c = 0; c < p.C; ++c) logits[static_cast<size_t>(c)] += a * w[c];
    }
    double max_logit = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (int c = 0; c < p.C; ++c) lse += std::exp(logits[static_cast<size_t>(c)] - max_logit);
    lse = max_logit + std::log(lse);
    s.probs.resize(static_cast<size_t>(p.C));
    for (int c = 0; c < p.C; ++c)
        s.probs[static_cast<size_t>(c)] = std::exp(logits[static_cast<size_t>(c)] - lse);
    return lse - logits[static_cast<size_t>(ex.label)];
}

void check_batch(const ClassifierParams& p, std::span<const Example* const> batch) {
    if (batch.empty()) throw std::runtime_error("empty batch");
    for (const Example* ex : batch) {
        if (ex->token_ids.empty()) throw std::runtime_error("dataset not tokenized");
        check_ids(p, ex->token_ids);
        if (ex->label < 0 || ex->label >= p.C)
            throw std::runtime_error("dim mismatch between classifier and dataset");
    }
}

} // namespace

double batch_loss(const ClassifierParams& p, std::span<const Example* const> batch, double l2) {
    check_batch(p, batch);
    ForwardScratch s;
    double loss = 0.0;
    for (const Example* ex : batch) loss += example_ce(p, *ex, s);
    loss /= static_cast<double>(batch.size());
    if (l2 != 0.0) loss += l2 * squared_param_norm(p);
    return loss;
}

Gradients batch_gradients(const ClassifierParams& p, std::span<const Example* const> batch,
                          double l2, double* loss_out) {
    check_batch(p, batch);
    Gradients g;
    g.embedding = Mat(p.V, p.E);
    g.W1 = Mat(p.E, p.H);
    g.b1.assign(static_cast<size_t>(p.H), 0.0);
    g.W2 = Mat(p.H, p.C);
    g.b2.assign(static_cast<size_t>(p.C), 0.0);

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    ForwardScratch s;
    double loss = 0.0;
    std::vector<double> dlogits(static_cast<size_t>(p.C));
    std::vector<double> dact(static_cast<size_t>(p.H));
    std::vector<double> dmean(static_cast<size_t>(p.E));

    for (const Example* ex : batch) {
        loss += example_ce(p, *ex, s);

        for (int c = 0; c < p.C; ++c)
            dlogits[static_cast<size_t>(c)] = s.probs[static_cast<size_t>(c)] * inv_b;
        dlogits[static_cast<size_t>(ex->label)] -= inv_b;

        // W2, b2
        for (int h = 0; h < p.H; ++h) {
            double a = s.act[static_cast<size_t>(h)];
            double* gw = g.W2.row(h);
            for (int c = 0; c < p.C; ++c) gw[c] += a * dlogits[static_cast<size_t>(c)];
        }
        for (int c = 0; c < p.C; ++c) g.b2[static_cast<size_t>(c)] += dlogits[static_cast<size_t>(c)];

        // back through W2 and ReLU
        for (int h = 0; h < p.H; ++h) {
            double d = dot(p.W2.row(h), dlogits.data(), p.C);
            dact[static_cast<size_t>(h)] = s.pre[static_cast<size_t>(h)] > 0.0 ? d : 0.0;
        }

        // W1, b1
        for (int e = 0; e < p.E; ++e) {
            double m = s.mean[static_cast<size_t>(e)];
            if (m != 0.0) {
                double* gw = g.W1.row(e);
                for (int h = 0; h < p.H; ++h) gw[h] += m * dact[static_cast<size_t>(h)];
            }
        }
        for (int h = 0; h < p.H; ++h) g.b1[static_cast<size_t>(h)] += dact[static_cast<size_t>(h)];

        // back through W1 into the token mean, then the embedding rows
        if (s.nonpad > 0) {
            for (int e = 0; e < p.E; ++e)
                dmean[static_cast<size_t>(e)] = dot(p.W1.row(e), dact.data(), p.H);
            double scale = 1.0 / s.nonpad;
            for (int id : ex->token_ids) {
                if (id == kPadId) continue;
                double* ge = g.embedding.row(id);
                for (int e = 0; e < p.E; ++e) ge[e] += scale * dmean[static_cast<size_t>(e)];
            }
        }
    }

    loss *= inv_b;
    if (l2 != 0.0) {
        loss += l2 * squared_param_norm(p);
        double two_l2 = 2.0 * l2;
        for (size_t i = 0; i < g.embedding.data.size(); ++i) g.embedding.data[i] += two_l2 * p.embedding.data[i];
        for (size_t i = 0; i < g.W1.data.size(); ++i) g.W1.data[i] += two_l2 * p.W1.data[i];
        for (size_t i = 0; i < g.b1.size(); ++i) g.b1[i] += two_l2 * p.b1[i];
        for (size_t i = 0; i < g.W2.data.size(); ++i) g.W2.data[i] += two_l2 * p.W2.data[i];
        for (size_t i = 0; i < g.b2.size(); ++i) g.b2[i] += two_l2 * p.b2[i];
    }
    if (loss_out) *loss_out = loss;
    return g;
}

TrainResult train(const ClassifierParams& init, const LabeledDataset& dataset,
                  const TrainConfig& config) {
    if (dataset.examples.empty()) throw std::runtime_error("empty training dataset");
    if (config.learning_rate <= 0.0 || config.learning_rate > 1.0)
        throw std::runtime_error("learning rate must be in (0, 1]");
    if (config.epochs < 1) throw std::runtime_error("epochs must be positive");
    if (config.batch_size < 1 || static_cast<size_t>(config.batch_size) > dataset.size())
        throw std::runtime_error("batch size must be in [1, dataset size]");
    if (init.C != dataset.n_classes)
        throw std::runtime_error("dim mismatch between classifier and dataset");

    TrainResult result;
    result.params = init;
    ClassifierParams& p = result.params;

    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(config.seed);

    std::vector<const Example*> batch;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_loss = 0.0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(config.batch_size)) {
            size_t end = std::min(order.size(), begin + static_cast<size_t>(config.batch_size));
            batch.clear();
            for (size_t i = begin; i < end; ++i) batch.push_back(&dataset.examples[order[i]]);
            double loss = 0.0;
            Gradients g = batch_gradients(p, batch, config.l2, &loss);
            epoch_loss += loss * static_cast<double>(batch.size());

            double lr = config.learning_rate;
            for (size_t i = 0; i < p.embedding.data.size(); ++i) p.embedding.data[i] -= lr * g.embedding.data[i];
            for (size_t i = 0; i < p.W1.data.size(); ++i) p.W1.data[i] -= lr * g.W1.data[i];
            for (size_t i = 0; i < p.b1.size(); ++i) p.b1[i] -= lr * g.b1[i];
            for (size_t i = 0; i < p.W2.data.size(); ++i) p.W2.data[i] -= lr * g.W2.data[i];
            for (size_t i = 0; i < p.b2.size(); ++i) p.b2[i] -= lr * g.b2[i];
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(dataset.size()));
    }
    return result;
}

double accuracy(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs,
                const std::vector<int>& labels) {
    if (seqs.empty() || seqs.size() != labels.size())
        throw std::runtime_error("accuracy: bad inputs");
    size_t hits = 0;
    for (size_t i = 0; i < seqs.size(); ++i) {
        if (forward(p, seqs[i]).label == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(seqs.size());
}

// ---------------------------------------------------------------------------
// Model file, version 1. All integers and doubles little-endian:
//   bytes 0-3   magic "TSCN"
//   u32         format version (1)
//   u8          trained-on-poisoned flag
//   u8[3]       reserved (zero)
//   u64         vocab content hash
//   u32 x4      V, E, H, C
//   f64 x V*E   embedding, row-major
//   f64 x E*H   W1
//   f64 x H     b1
//   f64 x H*C   W2
//   f64 x C     b2
//   u64         FNV-1a of all preceding bytes
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'S', 'C', 'N'};
constexpr uint32_t kModelVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<uint64_t>(d)); }

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("model file truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

} // namespace

void save_model(const ClassifierParams& p, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kModelVersion);
    out.push_back(p.trained_on_poisoned ? 1 : 0);
    out.append(3, '\0');
    put_u64(out, p.vocab_hash);
    put_u32(out, static_cast<uint32_t>(p.V));
    put_u32(out, static_cast<uint32_t>(p.E));
    put_u32(out, static_cast<uint32_t>(p.H));
    put_u32(out, static_cast<uint32_t>(p.C));
    for (double d : p.embedding.data) put_f64(out, d);
    for (double d : p.W1.data) put_f64(out, d);
    for (double d : p.b1) put_f64(out, d);
    for (double d : p.W2.data) put_f64(out, d);
    for (double d : p.b2) put_f64(out, d);
    put_u64(out, fnv1a64(out.data(), out.size()));
    atomic_write(path, out);
}

ClassifierParams load_model(const std::string& path) {
    std::string buf = read_file(path);
    if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw std::runtime_error("not a model file: " + path);
    ByteReader r{buf, 4};
    uint32_t version = r.u32();
    if (version != kModelVersion) throw std::runtime_error("unsupported model version");
    if (buf.size() < 8) throw std::runtime_error("model file truncated");
    uint64_t stored_hash = 0;
    {
        ByteReader tail{buf, buf.size() - 8};
        stored_hash = tail.u64();
    }
    if (fnv1a64(buf.data(), buf.size() - 8) != stored_hash)
        throw std::runtime_error("model file corrupt: " + path);

    ClassifierParams p;
    r.need(4);
    p.trained_on_poisoned = buf[r.pos] != 0;
    r.pos += 4;
    p.vocab_hash = r.u64();
    p.V = static_cast<int>(r.u32());
    p.E = static_cast<int>(r.u32());
    p.H = static_cast<int>(r.u32());
    p.C = static_cast<int>(r.u32());
    if (p.V < 1 || p.E < 1 || p.H < 1 || p.C < 1)
        throw std::runtime_error("model file corrupt: bad dimensions");
    p.embedding = Mat(p.V, p.E);
    p.W1 = Mat(p.E, p.H);
    p.b1.resize(static_cast<size_t>(p.H));
    p.W2 = Mat(p.H, p.C);
    p.b2.resize(static_cast<size_t>(p.C));
    for (auto& d : p.embedding.data) d = r.f64();
    for (auto& d : p.W1.data) d = r.f64();
    for (auto& d : p.b1) d = r.f64();
    for (auto& d : p.W2.data) d = r.f64();
    for (auto& d : p.b2) d = r.f64();
    if (r.pos != buf.size() - 8) throw std::runtime_error("model file corrupt: size mismatch");
    return p;
}

} // namespace tscan
