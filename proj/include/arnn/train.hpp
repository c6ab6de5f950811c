#pragma once
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "arnn/model.hpp"
#include "arnn/rng.hpp"

namespace arnn {

struct TrainConfig {
    int batch_size = 50;
    double lr0 = 1e-3;
    double decay_factor = 0.1;
    int decay_every = 10;   // epochs per decay step
    int epochs = 30;
    double dropout_p = 0.3; // applied to the model while training
    double split = 0.75;    // train fraction; remainder is the test set
    uint64_t seed = 42;

    void validate() const;
};

// First/second moment accumulators, one pair per parameter tensor, in the
// same order as the parameter list they were built from.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<Matrix> m1, m2;

    static AdamState make(const std::vector<NamedParam>& params);
};

struct Metrics {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Derives the ratio metrics from confusion counts; empty denominators give 0.
Metrics metrics_from_counts(long tp, long fp, long fn, long tn);

struct BceResult {
    double loss = 0.0;
    double d_logit = 0.0; // gradient of the loss with respect to the logit
};

// -[y ln p + (1-y) ln(1-p)] with p clamped to [1e-12, 1-1e-12] inside the
// logs; the gradient uses the stable logit form p - y.
BceResult bce_loss(double prob, int label);

// lr0 * decay_factor^floor(epoch / decay_every); epoch counts from 0.
double lr_at(int epoch, const TrainConfig& config);

// Bias-corrected Adam update over the given parameter list. Gradients are
// left untouched; the caller zeroes them.
void adam_step(const std::vector<NamedParam>& params, AdamState& adam, double lr);

// Seeded shuffle, then prefix/suffix cut: test gets floor((1-split)*N)
// segments, train the rest. Warns on stderr when the test side is empty.
// The index form exists so callers can carry per-segment metadata (file
// paths, ...) through the same partition.
std::pair<std::vector<size_t>, std::vector<size_t>>
split_indices(size_t count, double split, Rng& rng);
std::pair<std::vector<Segment>, std::vector<Segment>>
split_train_test(const std::vector<Segment>& dataset, double split, Rng& rng);
std::pair<std::vector<Segment>, std::vector<Segment>>
split_train_test(const std::vector<Segment>& dataset, double split, uint64_t seed);

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;    // mean per-segment loss over the epoch
    double test_accuracy = 0.0; // zero when the test split is empty
    double test_f1 = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> log;
    Metrics final_test;
    size_t train_count = 0;
    size_t test_count = 0;
};

// Full optimization loop: internal seeded split, per-epoch seeded shuffle,
// mini-batches of batch_size (last batch may be smaller), gradients averaged
// over each batch, one Adam step per batch at lr_at(epoch). The model's
// dropout rate is set to config.dropout_p for the run. All randomness comes
// from one Rng seeded with config.seed, so the result is bit-reproducible.
// on_epoch, when set, is invoked after every epoch with the fresh stats.
TrainResult train(ArnnModel& model, const std::vector<Segment>& dataset,
                  const TrainConfig& config,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

// Confusion counts at threshold 0.5 plus derived accuracy/precision/recall/f1
// for the positive class.
Metrics evaluate(const ArnnModel& model, const std::vector<Segment>& test_set);

// CSV with header epoch,lr,train_loss,test_accuracy,test_f1.
void write_train_log(const std::string& path, const std::vector<EpochStats>& log);

} // namespace arnn
