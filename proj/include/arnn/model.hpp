#pragma once
#include <string>
#include <vector>

#include "arnn/cell.hpp"
#include "arnn/numerics.hpp"

namespace arnn {

// Classifier-level shape parameters. Each segment of n samples is cut into
// l windows of m = n/l samples; the cell consumes one window per step.
struct ModelConfig {
    int c = 1;           // channels
    int n = 1;           // segment length in samples
    int l = 1;           // local windows (recurrent steps)
    int s = 1;           // state vectors
    double dropout_p = 0.0;

    int m() const { return n / l; }
    void validate() const;
    CellConfig cell_config() const;
};

// One labeled recording: (c, n) values, label 1 for seizure activity.
struct Segment {
    Matrix data;   // (c, n)
    int label = 0; // 0 or 1
};

// Cell parameters plus a classification head: the final state block is
// mean-pooled over its s rows and mapped to one logit.
struct ArnnModel {
    ModelConfig config;
    CellParams cell;
    Param head_w; // (1, m)
    Param head_b; // (1, 1)

    static ArnnModel make(const ModelConfig& cfg); // all parameters zero
    static ArnnModel init(const ModelConfig& cfg, Rng& rng);

    // Cell tensors in their canonical order, then head_w, head_b. This is
    // also the checkpoint serialization order.
    std::vector<NamedParam> named_params();
    void zero_grads();
};

// Cut x (c, n) into l column blocks of width m, in time order. Concatenating
// the blocks restores x exactly.
std::vector<Matrix> window_segment(const Matrix& x, int l);

struct ForwardResult {
    double logit = 0.0;
    double prob = 0.0;                // sigmoid(logit)
    std::vector<CellState> states;    // c_0 .. c_l
};

// Per-forward intermediates for the backward pass.
struct ModelTape {
    std::vector<CellCache> caches; // one per window
    Matrix feature;                // (1, m) pooled feature after dropout
    Matrix feature_mask;           // dropout mask, empty in eval mode
    bool valid = false;
};

ForwardResult forward(const ArnnModel& model, const Matrix& x, bool training, Rng& rng);
ForwardResult forward_cached(const ArnnModel& model, const Matrix& x, bool training,
                             Rng& rng, ModelTape& tape);

// Accumulates gradients for every parameter (cell, c0, head) given the loss
// gradient with respect to the logit.
void backward(ArnnModel& model, const ModelTape& tape, double d_logit);

// 1 iff prob >= threshold (the boundary counts as positive).
int predict(const ArnnModel& model, const Matrix& x, double threshold = 0.5);

// Checkpoint layout: "ARNN" magic, version byte 0x01, four little-endian
// 32-bit fields [c, n, l, s], then every tensor of named_params() row-major
// as little-endian IEEE-754 doubles, no padding. Dropout is not part of the
// file; loaded models carry dropout_p = 0.
void save_model(const ArnnModel& model, const std::string& path);
ArnnModel load_model(const std::string& path);

} // namespace arnn
