#pragma once
#include <string>
#include <vector>

#include "arnn/errors.hpp"
#include "arnn/rng.hpp"

namespace arnn {

// Dense row-major matrix of 64-bit reals. The universal value carrier:
// inputs, activations, parameters and gradients are all Matrix.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data; // length rows*cols, row-major

    Matrix() = default;
    Matrix(int r, int c);                              // zero-filled
    Matrix(int r, int c, std::vector<double> values);  // length-checked

    static Matrix filled(int r, int c, double value);

    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    double* row_ptr(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row_ptr(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
    std::size_t size() const { return data.size(); }

    void set_zero();
    bool all_finite() const;
    double max_abs() const;
};

std::string shape_str(const Matrix& m);

// Trainable tensor: value plus an additively accumulated gradient.
struct Param {
    Matrix value;
    Matrix grad;

    Param() = default;
    Param(int r, int c) : value(r, c), grad(r, c) {}
    explicit Param(Matrix v) : value(std::move(v)) { grad = Matrix(value.rows, value.cols); }

    void zero_grad() { grad.set_zero(); }
};

// Name + pointer pair; the canonical ordering of these lists defines the
// checkpoint layout, the optimizer update order and the init draw order.
struct NamedParam {
    const char* name;
    Param* param;
};

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b);    // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b); // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b); // a^T * b
Matrix transpose(const Matrix& a);

// ---------------------------------------------------------------------------
// Elementwise / structural helpers
// ---------------------------------------------------------------------------

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
void add_in_place(Matrix& dst, const Matrix& src);
void add_scaled_in_place(Matrix& dst, const Matrix& src, double s);

// dst rows += row (row is (1, dst.cols)); used for bias broadcast.
Matrix add_row_broadcast(const Matrix& a, const Matrix& row);
Matrix column_sums(const Matrix& a);   // (1, cols)
Matrix mean_over_rows(const Matrix& a); // (1, cols)

// Stack blocks along the row (token) axis.
Matrix vstack(const std::vector<const Matrix*>& blocks);

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Row-wise softmax with per-row max subtraction; every output row sums to 1.
Matrix softmax_rows(const Matrix& a);

// Given y = softmax_rows(x) and dL/dy, returns dL/dx.
Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy);

// ---------------------------------------------------------------------------
// Layer normalization (population variance, eps = 1e-5)
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
    Matrix xhat;                 // standardized input
    std::vector<double> inv_std; // per row
};

// Each row standardized to mean 0 / variance 1, then gain/bias applied.
// gain and bias are (1, a.cols).
Matrix layer_norm(const Matrix& a, const Param& gain, const Param& bias);
Matrix layer_norm_fwd(const Matrix& a, const Matrix& gain, const Matrix& bias,
                      LayerNormCache* cache);
// Accumulates dGain/dBias, returns dX.
Matrix layer_norm_bwd(const Matrix& dy, const LayerNormCache& cache,
                      const Matrix& gain, Matrix& dgain, Matrix& dbias);

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

double sigmoid_scalar(double x);
Matrix sigmoid(const Matrix& a);
Matrix tanh_m(const Matrix& a);
// dX given the activation *output* y and upstream dy.
Matrix sigmoid_backward(const Matrix& y, const Matrix& dy);
Matrix tanh_backward(const Matrix& y, const Matrix& dy);

// ---------------------------------------------------------------------------
// Dropout (inverted): survivors scaled by 1/(1-p); eval mode is the identity.
// ---------------------------------------------------------------------------

Matrix dropout(const Matrix& a, double p, bool training, Rng& rng);
// Cached variant: mask holds per-entry scale (0 or 1/(1-p)); in eval mode the
// mask is left empty and backward is a pass-through.
Matrix dropout_fwd(const Matrix& a, double p, bool training, Rng& rng, Matrix& mask);
Matrix dropout_bwd(const Matrix& dy, const Matrix& mask);

} // namespace arnn
