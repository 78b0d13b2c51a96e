#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trojanscan/corpus.hpp"
#include "trojanscan/mat.hpp"

namespace tscan {

// Embedding-average text classifier with one hidden ReLU layer. Small enough
// to train on a desk, but it exposes the penultimate-layer activations the
// detection pipeline works on.
struct ClassifierParams {
    int V = 0, E = 0, H = 0, C = 0;
    Mat embedding; // V x E
    Mat W1;        // E x H
    std::vector<double> b1;
    Mat W2;        // H x C
    std::vector<double> b2;

    // File metadata, not learned state.
    uint64_t vocab_hash = 0;
    bool trained_on_poisoned = false;

    bool same_weights(const ClassifierParams& o) const {
        return V == o.V && E == o.E && H == o.H && C == o.C && embedding == o.embedding &&
               W1 == o.W1 && b1 == o.b1 && W2 == o.W2 && b2 == o.b2;
    }
};

struct TrainConfig {
    double learning_rate = 0.5;
    int epochs = 20;
    int batch_size = 32;
    uint64_t seed = 0;
    double l2 = 0.0;
};

struct Prediction {
    std::vector<double> probs;
    int label = 0;
    double confidence = 0.0;
    std::vector<double> penultimate;
};

ClassifierParams init_classifier(int V, int E, int H, int C, uint64_t seed);

// --- forward-pass pieces, shared by the batch kernels ---

// Mean of embedding rows with PAD excluded; all-PAD input yields the zero
// vector.
std::vector<double> embedding_mean(const ClassifierParams& p, std::span<const int> token_ids);

void penultimate_from_mean(const ClassifierParams& p, const double* mean, double* out);

// Fills probs (softmax with max subtraction) and returns the argmax label,
// ties broken by lowest index.
int logits_to_probs(const ClassifierParams& p, const double* penultimate, double* probs);

Prediction forward(const ClassifierParams& p, std::span<const int> token_ids);

Prediction predict(const ClassifierParams& p, const Vocab& vocab, const std::string& text);

// --- training ---

struct Gradients {
    Mat embedding;
    Mat W1;
    std::vector<double> b1;
    Mat W2;
    std::vector<double> b2;
};

// Mean cross-entropy over the batch plus l2 * squared norm of all parameters.
double batch_loss(const ClassifierParams& p, std::span<const Example* const> batch, double l2);

// Analytic gradient of batch_loss; exposed so it can be checked against
// finite differences.
Gradients batch_gradients(const ClassifierParams& p, std::span<const Example* const> batch,
                          double l2, double* loss_out = nullptr);

struct TrainResult {
    ClassifierParams params;
    std::vector<double> epoch_loss; // epoch-mean training loss, one per epoch
};

// Mini-batch SGD. Single-threaded by design: the shuffle order and all
// arithmetic are fixed, so two runs with the same seed produce bit-identical
// parameters.
TrainResult train(const ClassifierParams& init, const LabeledDataset& dataset,
                  const TrainConfig& config);

double accuracy(const ClassifierParams& p, const std::vector<std::vector<int>>& seqs,
                const std::vector<int>& labels);

// Binary model file, little-endian; layout documented in classifier.cpp and
// the README.
void save_model(const ClassifierParams& p, const std::string& path);
ClassifierParams load_model(const std::string& path);

} // namespace tscan
