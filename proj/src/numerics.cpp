#include "arnn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>

namespace arnn {

Matrix::Matrix(int r, int c) : rows(r), cols(c) {
    if (r <= 0 || c <= 0)
        throw DimensionError("Matrix: dimensions must be positive, got (" +
                             std::to_string(r) + "," + std::to_string(c) + ")");
    data.assign(static_cast<std::size_t>(r) * c, 0.0);
}

Matrix::Matrix(int r, int c, std::vector<double> values) : rows(r), cols(c) {
    if (r <= 0 || c <= 0)
        throw DimensionError("Matrix: dimensions must be positive, got (" +
                             std::to_string(r) + "," + std::to_string(c) + ")");
    if (values.size() != static_cast<std::size_t>(r) * c)
        throw DimensionError("Matrix: data length " + std::to_string(values.size()) +
                             " does not match shape (" + std::to_string(r) + "," +
                             std::to_string(c) + ")");
    data = std::move(values);
}

Matrix Matrix::filled(int r, int c, double value) {
    Matrix m(r, c);
    std::fill(m.data.begin(), m.data.end(), value);
    return m;
}

void Matrix::set_zero() {
    std::fill(data.begin(), data.end(), 0.0);
}

bool Matrix::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

double Matrix::max_abs() const {
    double m = 0.0;
    for (double v : data) m = std::max(m, std::abs(v));
    return m;
}

std::string shape_str(const Matrix& m) {
    return "(" + std::to_string(m.rows) + "," + std::to_string(m.cols) + ")";
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw DimensionError("matmul: inner dimensions differ: " + shape_str(a) +
                             " * " + shape_str(b));
    Matrix out(a.rows, b.cols);
    const int n = b.cols;
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = b.row_ptr(k);
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw DimensionError("matmul_nt: inner dimensions differ: " + shape_str(a) +
                             " * " + shape_str(b) + "^T");
    Matrix out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = b.row_ptr(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            orow[j] = acc;
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw DimensionError("matmul_tn: inner dimensions differ: " + shape_str(a) +
                             "^T * " + shape_str(b));
    Matrix out(a.cols, b.cols);
    const int n = b.cols;
    for (int k = 0; k < a.rows; ++k) {
        const double* arow = a.row_ptr(k);
        const double* brow = b.row_ptr(k);
        for (int i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            double* orow = out.row_ptr(i);
            for (int j = 0; j < n; ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise / structural helpers
// ---------------------------------------------------------------------------

static void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch: " + shape_str(a) +
                             " vs " + shape_str(b));
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.data) v *= s;
    return out;
}

void add_in_place(Matrix& dst, const Matrix& src) {
    require_same_shape(dst, src, "add_in_place");
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

void add_scaled_in_place(Matrix& dst, const Matrix& src, double s) {
    require_same_shape(dst, src, "add_scaled_in_place");
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += s * src.data[i];
}

Matrix add_row_broadcast(const Matrix& a, const Matrix& row) {
    if (row.rows != 1 || row.cols != a.cols)
        throw DimensionError("add_row_broadcast: row must be (1," +
                             std::to_string(a.cols) + "), got " + shape_str(row));
    Matrix out = a;
    for (int i = 0; i < out.rows; ++i) {
        double* orow = out.row_ptr(i);
        for (int j = 0; j < out.cols; ++j) orow[j] += row.data[static_cast<std::size_t>(j)];
    }
    return out;
}

Matrix column_sums(const Matrix& a) {
    Matrix out(1, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        for (int j = 0; j < a.cols; ++j) out.data[static_cast<std::size_t>(j)] += arow[j];
    }
    return out;
}

Matrix mean_over_rows(const Matrix& a) {
    Matrix out = column_sums(a);
    const double inv = 1.0 / a.rows;
    for (double& v : out.data) v *= inv;
    return out;
}

Matrix vstack(const std::vector<const Matrix*>& blocks) {
    if (blocks.empty()) throw DimensionError("vstack: no blocks");
    const int cols = blocks.front()->cols;
    int rows = 0;
    for (const Matrix* b : blocks) {
        if (b->cols != cols)
            throw DimensionError("vstack: column mismatch: " + shape_str(*blocks.front()) +
                                 " vs " + shape_str(*b));
        rows += b->rows;
    }
    Matrix out(rows, cols);
    double* dst = out.data.data();
    for (const Matrix* b : blocks) {
        std::copy(b->data.begin(), b->data.end(), dst);
        dst += b->data.size();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

Matrix softmax_rows(const Matrix& a) {
    Matrix out(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* x = a.row_ptr(i);
        double* y = out.row_ptr(i);
        double mx = x[0];
        for (int j = 1; j < a.cols; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < a.cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < a.cols; ++j) y[j] *= inv;
    }
    return out;
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
    require_same_shape(y, dy, "softmax_rows_backward");
    Matrix dx(y.rows, y.cols);
    for (int i = 0; i < y.rows; ++i) {
        const double* yr = y.row_ptr(i);
        const double* dr = dy.row_ptr(i);
        double* xr = dx.row_ptr(i);
        double dot = 0.0;
        for (int j = 0; j < y.cols; ++j) dot += yr[j] * dr[j];
        for (int j = 0; j < y.cols; ++j) xr[j] = yr[j] * (dr[j] - dot);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Layer normalization
// ---------------------------------------------------------------------------

Matrix layer_norm(const Matrix& a, const Param& gain, const Param& bias) {
    return layer_norm_fwd(a, gain.value, bias.value, nullptr);
}

Matrix layer_norm_fwd(const Matrix& a, const Matrix& gain, const Matrix& bias,
                      LayerNormCache* cache) {
    if (gain.rows != 1 || gain.cols != a.cols || bias.rows != 1 || bias.cols != a.cols)
        throw DimensionError("layer_norm: gain/bias must be (1," + std::to_string(a.cols) +
                             "), got gain " + shape_str(gain) + " bias " + shape_str(bias));
    Matrix out(a.rows, a.cols);
    if (cache) {
        cache->xhat = Matrix(a.rows, a.cols);
        cache->inv_std.assign(static_cast<std::size_t>(a.rows), 0.0);
    }
    const int m = a.cols;
    for (int i = 0; i < a.rows; ++i) {
        const double* x = a.row_ptr(i);
        double* y = out.row_ptr(i);
        double mean = 0.0;
        for (int j = 0; j < m; ++j) mean += x[j];
        mean /= m;
        double var = 0.0;
        for (int j = 0; j < m; ++j) {
            const double d = x[j] - mean;
            var += d * d;
        }
        var /= m;
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        for (int j = 0; j < m; ++j) {
            const double xh = (x[j] - mean) * inv_std;
            if (cache) cache->xhat(i, j) = xh;
            y[j] = gain.data[static_cast<std::size_t>(j)] * xh +
                   bias.data[static_cast<std::size_t>(j)];
        }
        if (cache) cache->inv_std[static_cast<std::size_t>(i)] = inv_std;
    }
    return out;
}

Matrix layer_norm_bwd(const Matrix& dy, const LayerNormCache& cache,
                      const Matrix& gain, Matrix& dgain, Matrix& dbias) {
    const Matrix& xhat = cache.xhat;
    require_same_shape(dy, xhat, "layer_norm_bwd");
    Matrix dx(dy.rows, dy.cols);
    const int m = dy.cols;
    for (int i = 0; i < dy.rows; ++i) {
        const double* dr = dy.row_ptr(i);
        const double* xh = xhat.row_ptr(i);
        double* xr = dx.row_ptr(i);
        const double inv_std = cache.inv_std[static_cast<std::size_t>(i)];
        // dxhat = dy .* gain; dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat.*xhat))
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (int j = 0; j < m; ++j) {
            const double dxh = dr[j] * gain.data[static_cast<std::size_t>(j)];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
            xr[j] = dxh; // stash dxhat
        }
        const double k = inv_std / m;
        for (int j = 0; j < m; ++j)
            xr[j] = k * (m * xr[j] - sum_dxh - xh[j] * sum_dxh_xh);
        for (int j = 0; j < m; ++j) {
            dgain.data[static_cast<std::size_t>(j)] += dr[j] * xh[j];
            dbias.data[static_cast<std::size_t>(j)] += dr[j];
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& a) {
    Matrix out = a;
    for (double& v : out.data) v = sigmoid_scalar(v);
    return out;
}

Matrix tanh_m(const Matrix& a) {
    Matrix out = a;
    for (double& v : out.data) v = std::tanh(v);
    return out;
}

Matrix sigmoid_backward(const Matrix& y, const Matrix& dy) {
    require_same_shape(y, dy, "sigmoid_backward");
    Matrix dx(y.rows, y.cols);
    for (std::size_t i = 0; i < y.data.size(); ++i)
        dx.data[i] = dy.data[i] * y.data[i] * (1.0 - y.data[i]);
    return dx;
}

Matrix tanh_backward(const Matrix& y, const Matrix& dy) {
    require_same_shape(y, dy, "tanh_backward");
    Matrix dx(y.rows, y.cols);
    for (std::size_t i = 0; i < y.data.size(); ++i)
        dx.data[i] = dy.data[i] * (1.0 - y.data[i] * y.data[i]);
    return dx;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

Matrix dropout(const Matrix& a, double p, bool training, Rng& rng) {
    Matrix mask;
    return dropout_fwd(a, p, training, rng, mask);
}

Matrix dropout_fwd(const Matrix& a, double p, bool training, Rng& rng, Matrix& mask) {
    if (p < 0.0 || p >= 1.0)
        throw ParameterError("dropout: probability must be in [0,1), got " +
                             std::to_string(p));
    if (!training) {
        mask = Matrix();
        return a;
    }
    mask = Matrix(a.rows, a.cols);
    Matrix out(a.rows, a.cols);
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double s = (rng.uniform() < p) ? 0.0 : keep_scale;
        mask.data[i] = s;
        out.data[i] = a.data[i] * s;
    }
    return out;
}

Matrix dropout_bwd(const Matrix& dy, const Matrix& mask) {
    if (mask.size() == 0) return dy; // eval mode pass-through
    return hadamard(dy, mask);
}

} // namespace arnn
