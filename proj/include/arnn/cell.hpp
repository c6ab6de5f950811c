#pragma once
#include <vector>

#include "arnn/numerics.hpp"

namespace arnn {

// Shape parameters of one recurrent cell. Channel rows are the tokens; each
// token carries the m samples of the current local window. d_k (the attention
// scale) equals m.
struct CellConfig {
    int c = 1;          // channels (tokens per window)
    int m = 1;          // window length = token feature dimension
    int s = 1;          // state vectors
    double dropout_p = 0.0;

    int d_k() const { return m; }
    void validate() const;
};

// Recurrent memory: a block of s state vectors of dimension m.
struct CellState {
    Matrix vectors; // (s, m)

    CellState() = default;
    explicit CellState(Matrix v) : vectors(std::move(v)) {}
    CellState(int s, int m) : vectors(s, m) {}
};

// All learnable tensors of one cell, each with a gradient accumulator.
struct CellParams {
    Param Wx_q, Wx_k, Wx_v; // (m, m) input projections
    Param Ws_q, Ws_k, Ws_v; // (m, m) state projections
    Param W_o;              // (s, 2c+s) fusion projection
    Param W_z, W_i, W_f;    // (m, m) gate weights
    Param b_z, b_i, b_f;    // (1, m) gate biases
    Param ln_gain, ln_bias; // (1, m)
    Param c0;               // (s, m) learnable initial state

    static CellParams make(const CellConfig& cfg);
    // Projection/gate/fusion weights from uniform(-1/sqrt(m), +1/sqrt(m)),
    // gate biases zero (the -1/+1 gate shifts live in the update formula),
    // ln_gain 1, ln_bias 0, c0 from uniform(-0.02, 0.02).
    static CellParams init(const CellConfig& cfg, Rng& rng);

    // Canonical order; also the checkpoint tensor order (head tensors are
    // appended by the model).
    std::vector<NamedParam> named();
    void zero_grads();
    void check_shapes(const CellConfig& cfg) const;
};

struct QkvProjections {
    Matrix Qx, Kx, Vx; // (c, m)
    Matrix Qs, Ks, Vs; // (s, m)
};

struct AttentionOutputs {
    Matrix u_x;  // (c, m) self-attention over window tokens
    Matrix u_xs; // (c, m) window queries against state keys/values
    Matrix u_sx; // (s, m) state queries against window keys/values
};

// Everything the backward pass needs from one forward step.
struct CellCache {
    Matrix x_hat;          // (c, m) input window
    Matrix state_in;       // (s, m)
    QkvProjections qkv;
    Matrix attn_x;         // (c, c) self-attention weights
    Matrix attn_xs;        // (c, s)
    Matrix attn_sx;        // (s, c)
    AttentionOutputs u;
    Matrix stacked;        // (2c+s, m)
    LayerNormCache ln;
    Matrix h_ln;           // (s, m) normalized hidden state, pre-dropout
    Matrix drop_mask;      // (s, m) or empty in eval mode
    Matrix h_p;            // (s, m) hidden state fed to the gate
    Matrix z, i_gate, f_gate; // (s, m) gate activations
};

// Softmax attention weights for one (Q, K) pair: softmax_rows(Q K^T / sqrt(d_k)).
Matrix attention_weights(const Matrix& q, const Matrix& k, int d_k);

QkvProjections project_qkv(const Matrix& x_hat, const CellState& state,
                           const CellParams& params);

// u_x = softmax(Qx Kx^T / sqrt(d_k)) Vx over the c channel tokens, unmasked.
Matrix self_attention(const Matrix& qx, const Matrix& kx, const Matrix& vx, int d_k);

// Generic direction of the state/input cross-attention pair.
Matrix cross_attention(const Matrix& qa, const Matrix& kb, const Matrix& vb, int d_k);

// Stack [u_x; u_xs; u_sx] along the token axis, project with W_o to (s, m),
// layer-normalize over the feature axis, dropout in training mode.
Matrix fuse_hidden(const AttentionOutputs& u, const CellParams& params,
                   const CellConfig& cfg, bool training, Rng& rng);

// z = tanh(h W_z^T + b_z); i = sigmoid(h W_i^T + b_i - 1);
// f = sigmoid(h W_f^T + b_f + 1); new state = state .* f + z .* i.
// The -1/+1 shifts bias the cell toward remembering at initialization.
CellState recurrent_gate(const Matrix& h_p, const CellState& state,
                         const CellParams& params);

// One full recurrent step: projections, three attentions, fusion, gate.
CellState cell_step(const Matrix& x_hat, const CellState& state,
                    const CellParams& params, const CellConfig& cfg,
                    bool training, Rng& rng);

// Forward with all intermediates captured for backpropagation.
CellState cell_step_cached(const Matrix& x_hat, const CellState& state,
                           const CellParams& params, const CellConfig& cfg,
                           bool training, Rng& rng, CellCache& cache);

// Accumulates parameter gradients for one step and returns the gradient with
// respect to the incoming state. Gradients of the window input are not
// computed (inputs are not trained).
Matrix cell_backward(const Matrix& d_state_next, const CellCache& cache,
                     CellParams& params, const CellConfig& cfg);

} // namespace arnn
