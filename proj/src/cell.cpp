#include "arnn/cell.hpp"

#include <cmath>
#include <string>

#include "arnn/errors.hpp"

namespace arnn {

void CellConfig::validate() const {
    if (c < 1) throw ConfigError("cell: channel count must be >= 1, got " + std::to_string(c));
    if (m < 1) throw ConfigError("cell: window length must be >= 1, got " + std::to_string(m));
    if (s < 1) throw ConfigError("cell: state vector count must be >= 1, got " + std::to_string(s));
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
        throw ConfigError("cell: dropout must lie in [0, 1), got " + std::to_string(dropout_p));
}

CellParams CellParams::make(const CellConfig& cfg) {
    cfg.validate();
    const int c = cfg.c, m = cfg.m, s = cfg.s;
    return CellParams{
        Param(m, m), Param(m, m), Param(m, m), // Wx_q, Wx_k, Wx_v
        Param(m, m), Param(m, m), Param(m, m), // Ws_q, Ws_k, Ws_v
        Param(s, 2 * c + s),                   // W_o
        Param(m, m), Param(m, m), Param(m, m), // W_z, W_i, W_f
        Param(1, m), Param(1, m), Param(1, m), // b_z, b_i, b_f
        Param(1, m), Param(1, m),              // ln_gain, ln_bias
        Param(s, m)};                          // c0
}

CellParams CellParams::init(const CellConfig& cfg, Rng& rng) {
    CellParams p = make(cfg);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.m));
    auto fill_uniform = [&rng](Matrix& w, double lo, double hi) {
        for (double& v : w.data) v = rng.uniform(lo, hi);
    };
    fill_uniform(p.Wx_q.value, -bound, bound);
    fill_uniform(p.Wx_k.value, -bound, bound);
    fill_uniform(p.Wx_v.value, -bound, bound);
    fill_uniform(p.Ws_q.value, -bound, bound);
    fill_uniform(p.Ws_k.value, -bound, bound);
    fill_uniform(p.Ws_v.value, -bound, bound);
    fill_uniform(p.W_o.value, -bound, bound);
    fill_uniform(p.W_z.value, -bound, bound);
    fill_uniform(p.W_i.value, -bound, bound);
    fill_uniform(p.W_f.value, -bound, bound);
    // Gate biases stay zero; the remember-by-default shifts are part of the
    // gate formula itself.
    for (double& v : p.ln_gain.value.data) v = 1.0;
    fill_uniform(p.c0.value, -0.02, 0.02);
    return p;
}

std::vector<NamedParam> CellParams::named() {
    return {
        {"Wx_q", &Wx_q}, {"Wx_k", &Wx_k}, {"Wx_v", &Wx_v},
        {"Ws_q", &Ws_q}, {"Ws_k", &Ws_k}, {"Ws_v", &Ws_v},
        {"W_o", &W_o},
        {"W_z", &W_z}, {"W_i", &W_i}, {"W_f", &W_f},
        {"b_z", &b_z}, {"b_i", &b_i}, {"b_f", &b_f},
        {"ln_gain", &ln_gain}, {"ln_bias", &ln_bias},
        {"c0", &c0}};
}

void CellParams::zero_grads() {
    for (NamedParam np : named()) np.param->zero_grad();
}

void CellParams::check_shapes(const CellConfig& cfg) const {
    auto expect = [](const Matrix& m, int r, int c, const char* name) {
        if (m.rows != r || m.cols != c)
            throw DimensionError(std::string("cell: ") + name + " has shape " + shape_str(m) +
                                 ", expected (" + std::to_string(r) + ", " + std::to_string(c) + ")");
    };
    const int c = cfg.c, m = cfg.m, s = cfg.s;
    expect(Wx_q.value, m, m, "Wx_q");
    expect(Wx_k.value, m, m, "Wx_k");
    expect(Wx_v.value, m, m, "Wx_v");
    expect(Ws_q.value, m, m, "Ws_q");
    expect(Ws_k.value, m, m, "Ws_k");
    expect(Ws_v.value, m, m, "Ws_v");
    expect(W_o.value, s, 2 * c + s, "W_o");
    expect(W_z.value, m, m, "W_z");
    expect(W_i.value, m, m, "W_i");
    expect(W_f.value, m, m, "W_f");
    expect(b_z.value, 1, m, "b_z");
    expect(b_i.value, 1, m, "b_i");
    expect(b_f.value, 1, m, "b_f");
    expect(ln_gain.value, 1, m, "ln_gain");
    expect(ln_bias.value, 1, m, "ln_bias");
    expect(c0.value, s, m, "c0");
}

Matrix attention_weights(const Matrix& q, const Matrix& k, int d_k) {
    if (d_k < 1)
        throw DimensionError("attention: d_k must be >= 1, got " + std::to_string(d_k));
    if (q.cols != k.cols)
        throw DimensionError("attention: query cols " + std::to_string(q.cols) +
                             " != key cols " + std::to_string(k.cols));
    Matrix score = matmul_nt(q, k);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_k));
    for (double& v : score.data) v *= inv_scale;
    return softmax_rows(score);
}

QkvProjections project_qkv(const Matrix& x_hat, const CellState& state,
                           const CellParams& params) {
    QkvProjections p;
    p.Qx = matmul(x_hat, params.Wx_q.value);
    p.Kx = matmul(x_hat, params.Wx_k.value);
    p.Vx = matmul(x_hat, params.Wx_v.value);
    p.Qs = matmul(state.vectors, params.Ws_q.value);
    p.Ks = matmul(state.vectors, params.Ws_k.value);
    p.Vs = matmul(state.vectors, params.Ws_v.value);
    return p;
}

Matrix self_attention(const Matrix& qx, const Matrix& kx, const Matrix& vx, int d_k) {
    return matmul(attention_weights(qx, kx, d_k), vx);
}

Matrix cross_attention(const Matrix& qa, const Matrix& kb, const Matrix& vb, int d_k) {
    return matmul(attention_weights(qa, kb, d_k), vb);
}

Matrix fuse_hidden(const AttentionOutputs& u, const CellParams& params,
                   const CellConfig& cfg, bool training, Rng& rng) {
    Matrix stacked = vstack({&u.u_x, &u.u_xs, &u.u_sx});
    if (stacked.rows != 2 * cfg.c + cfg.s)
        throw DimensionError("fuse: stacked attention block has " +
                             std::to_string(stacked.rows) + " rows, expected " +
                             std::to_string(2 * cfg.c + cfg.s));
    Matrix h = matmul(params.W_o.value, stacked);
    h = layer_norm(h, params.ln_gain, params.ln_bias);
    return dropout(h, cfg.dropout_p, training, rng);
}

CellState recurrent_gate(const Matrix& h_p, const CellState& state,
                         const CellParams& params) {
    if (!h_p.same_shape(state.vectors))
        throw DimensionError("gate: hidden " + shape_str(h_p) + " vs state " +
                             shape_str(state.vectors));
    Matrix z = tanh_m(add_row_broadcast(matmul_nt(h_p, params.W_z.value), params.b_z.value));
    Matrix pre_i = add_row_broadcast(matmul_nt(h_p, params.W_i.value), params.b_i.value);
    for (double& v : pre_i.data) v -= 1.0;
    Matrix i = sigmoid(pre_i);
    Matrix pre_f = add_row_broadcast(matmul_nt(h_p, params.W_f.value), params.b_f.value);
    for (double& v : pre_f.data) v += 1.0;
    Matrix f = sigmoid(pre_f);
    return CellState(add(hadamard(state.vectors, f), hadamard(z, i)));
}

CellState cell_step(const Matrix& x_hat, const CellState& state,
                    const CellParams& params, const CellConfig& cfg,
                    bool training, Rng& rng) {
    CellCache scratch;
    return cell_step_cached(x_hat, state, params, cfg, training, rng, scratch);
}

CellState cell_step_cached(const Matrix& x_hat, const CellState& state,
                           const CellParams& params, const CellConfig& cfg,
                           bool training, Rng& rng, CellCache& cache) {
    params.check_shapes(cfg);
    if (x_hat.rows != cfg.c || x_hat.cols != cfg.m)
        throw DimensionError("cell: window has shape " + shape_str(x_hat) + ", expected (" +
                             std::to_string(cfg.c) + ", " + std::to_string(cfg.m) + ")");
    if (state.vectors.rows != cfg.s || state.vectors.cols != cfg.m)
        throw DimensionError("cell: state has shape " + shape_str(state.vectors) +
                             ", expected (" + std::to_string(cfg.s) + ", " +
                             std::to_string(cfg.m) + ")");

    cache.x_hat = x_hat;
    cache.state_in = state.vectors;
    cache.qkv = project_qkv(x_hat, state, params);
    const int d_k = cfg.d_k();

    cache.attn_x = attention_weights(cache.qkv.Qx, cache.qkv.Kx, d_k);
    cache.attn_xs = attention_weights(cache.qkv.Qx, cache.qkv.Ks, d_k);
    cache.attn_sx = attention_weights(cache.qkv.Qs, cache.qkv.Kx, d_k);
    cache.u.u_x = matmul(cache.attn_x, cache.qkv.Vx);
    cache.u.u_xs = matmul(cache.attn_xs, cache.qkv.Vs);
    cache.u.u_sx = matmul(cache.attn_sx, cache.qkv.Vx);

    cache.stacked = vstack({&cache.u.u_x, &cache.u.u_xs, &cache.u.u_sx});
    Matrix pre_ln = matmul(params.W_o.value, cache.stacked);
    cache.h_ln = layer_norm_fwd(pre_ln, params.ln_gain.value, params.ln_bias.value, &cache.ln);
    cache.h_p = dropout_fwd(cache.h_ln, cfg.dropout_p, training, rng, cache.drop_mask);

    cache.z = tanh_m(add_row_broadcast(matmul_nt(cache.h_p, params.W_z.value), params.b_z.value));
    Matrix pre_i = add_row_broadcast(matmul_nt(cache.h_p, params.W_i.value), params.b_i.value);
    for (double& v : pre_i.data) v -= 1.0;
    cache.i_gate = sigmoid(pre_i);
    Matrix pre_f = add_row_broadcast(matmul_nt(cache.h_p, params.W_f.value), params.b_f.value);
    for (double& v : pre_f.data) v += 1.0;
    cache.f_gate = sigmoid(pre_f);

    return CellState(add(hadamard(cache.state_in, cache.f_gate),
                         hadamard(cache.z, cache.i_gate)));
}

Matrix cell_backward(const Matrix& d_state_next, const CellCache& cache,
                     CellParams& params, const CellConfig& cfg) {
    if (d_state_next.rows != cfg.s || d_state_next.cols != cfg.m)
        throw DimensionError("cell backward: upstream gradient has shape " +
                             shape_str(d_state_next) + ", expected (" +
                             std::to_string(cfg.s) + ", " + std::to_string(cfg.m) + ")");
    if (cache.h_p.size() == 0)
        throw StateError("cell backward: cache was not produced by a cached forward step");

    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_k()));

    // next = state_in .* f + z .* i
    Matrix d_state_in = hadamard(d_state_next, cache.f_gate);
    Matrix d_f = hadamard(d_state_next, cache.state_in);
    Matrix d_z = hadamard(d_state_next, cache.i_gate);
    Matrix d_i = hadamard(d_state_next, cache.z);

    // Gate preactivations; the constant -1/+1 shifts drop out of the gradient.
    Matrix d_pre_z = tanh_backward(cache.z, d_z);
    Matrix d_pre_i = sigmoid_backward(cache.i_gate, d_i);
    Matrix d_pre_f = sigmoid_backward(cache.f_gate, d_f);

    // pre = h_p W^T + b for each gate.
    Matrix d_h = matmul(d_pre_z, params.W_z.value);
    add_in_place(d_h, matmul(d_pre_i, params.W_i.value));
    add_in_place(d_h, matmul(d_pre_f, params.W_f.value));
    add_in_place(params.W_z.grad, matmul_tn(d_pre_z, cache.h_p));
    add_in_place(params.W_i.grad, matmul_tn(d_pre_i, cache.h_p));
    add_in_place(params.W_f.grad, matmul_tn(d_pre_f, cache.h_p));
    add_in_place(params.b_z.grad, column_sums(d_pre_z));
    add_in_place(params.b_i.grad, column_sums(d_pre_i));
    add_in_place(params.b_f.grad, column_sums(d_pre_f));

    // Dropout, then layer norm.
    Matrix d_h_ln = dropout_bwd(d_h, cache.drop_mask);
    Matrix d_pre_ln = layer_norm_bwd(d_h_ln, cache.ln, params.ln_gain.value,
                                     params.ln_gain.grad, params.ln_bias.grad);

    // pre_ln = W_o stacked.
    add_in_place(params.W_o.grad, matmul_nt(d_pre_ln, cache.stacked));
    Matrix d_stacked = matmul_tn(params.W_o.value, d_pre_ln);

    // Split the stacked gradient back into the three attention outputs.
    const int c = cfg.c, s = cfg.s, m = cfg.m;
    Matrix d_u_x(c, m), d_u_xs(c, m), d_u_sx(s, m);
    for (int r = 0; r < c; ++r)
        for (int j = 0; j < m; ++j) d_u_x(r, j) = d_stacked(r, j);
    for (int r = 0; r < c; ++r)
        for (int j = 0; j < m; ++j) d_u_xs(r, j) = d_stacked(c + r, j);
    for (int r = 0; r < s; ++r)
        for (int j = 0; j < m; ++j) d_u_sx(r, j) = d_stacked(2 * c + r, j);

    Matrix d_Qx(c, m), d_Kx(c, m), d_Vx(c, m);
    Matrix d_Qs(s, m), d_Ks(s, m), d_Vs(s, m);

    // One attention block: out = attn V, attn = softmax(Q K^T * inv_scale).
    auto backprop_attention = [&](const Matrix& d_out, const Matrix& attn,
                                  const Matrix& q, const Matrix& k, const Matrix& v,
                                  Matrix& dq, Matrix& dk, Matrix& dv) {
        add_in_place(dv, matmul_tn(attn, d_out));
        Matrix d_attn = matmul_nt(d_out, v);
        Matrix d_score = softmax_rows_backward(attn, d_attn);
        add_scaled_in_place(dq, matmul(d_score, k), inv_scale);
        add_scaled_in_place(dk, matmul_tn(d_score, q), inv_scale);
    };

    backprop_attention(d_u_x, cache.attn_x, cache.qkv.Qx, cache.qkv.Kx, cache.qkv.Vx,
                       d_Qx, d_Kx, d_Vx);
    backprop_attention(d_u_xs, cache.attn_xs, cache.qkv.Qx, cache.qkv.Ks, cache.qkv.Vs,
                       d_Qx, d_Ks, d_Vs);
    backprop_attention(d_u_sx, cache.attn_sx, cache.qkv.Qs, cache.qkv.Kx, cache.qkv.Vx,
                       d_Qs, d_Kx, d_Vx);

    // Projection weights; window inputs are data, so their gradient is skipped.
    add_in_place(params.Wx_q.grad, matmul_tn(cache.x_hat, d_Qx));
    add_in_place(params.Wx_k.grad, matmul_tn(cache.x_hat, d_Kx));
    add_in_place(params.Wx_v.grad, matmul_tn(cache.x_hat, d_Vx));
    add_in_place(params.Ws_q.grad, matmul_tn(cache.state_in, d_Qs));
    add_in_place(params.Ws_k.grad, matmul_tn(cache.state_in, d_Ks));
    add_in_place(params.Ws_v.grad, matmul_tn(cache.state_in, d_Vs));

    // State feeds the s-side projections as well as the gate's pass-through.
    add_in_place(d_state_in, matmul_nt(d_Qs, params.Ws_q.value));
    add_in_place(d_state_in, matmul_nt(d_Ks, params.Ws_k.value));
    add_in_place(d_state_in, matmul_nt(d_Vs, params.Ws_v.value));
    return d_state_in;
}

} // namespace arnn
