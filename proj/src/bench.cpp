#include "arnn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "arnn/cell.hpp"
#include "arnn/data.hpp"
#include "arnn/errors.hpp"
#include "arnn/model.hpp"
#include "arnn/rng.hpp"

namespace arnn {

Matrix full_attention_forward(const Matrix& x, const FullAttentionWeights& w) {
    const int c = x.rows, n = x.cols;
    auto expect_nn = [n](const Matrix& m, const char* name) {
        if (m.rows != n || m.cols != n)
            throw DimensionError(std::string("full attention: ") + name + " has shape " +
                                 shape_str(m) + ", expected (" + std::to_string(n) + ", " +
                                 std::to_string(n) + ")");
    };
    expect_nn(w.wq, "wq");
    expect_nn(w.wk, "wk");
    expect_nn(w.wv, "wv");

    // Deliberately plain loops from the definitions; never reuses the cell's
    // matmul or softmax.
    auto project = [&](const Matrix& wt) {
        Matrix out(c, n);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < n; ++k) acc += x(i, k) * wt(k, j);
                out(i, j) = acc;
            }
        return out;
    };
    Matrix q = project(w.wq);
    Matrix key = project(w.wk);
    Matrix v = project(w.wv);

    Matrix attn(c, c);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) acc += q(i, k) * key(j, k);
            attn(i, j) = acc * inv_scale;
        }
    for (int i = 0; i < c; ++i) {
        double row_max = attn(i, 0);
        for (int j = 1; j < c; ++j) row_max = std::max(row_max, attn(i, j));
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            attn(i, j) = std::exp(attn(i, j) - row_max);
            denom += attn(i, j);
        }
        for (int j = 0; j < c; ++j) attn(i, j) /= denom;
    }

    Matrix out(c, n);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < c; ++k) acc += attn(i, k) * v(k, j);
            out(i, j) = acc;
        }
    return out;
}

Matrix arnn_attention_forward(const Matrix& x, int l, const WindowAttentionWeights& w) {
    if (l < 1 || x.cols % l != 0)
        throw ConfigError("windowed attention: segment length " + std::to_string(x.cols) +
                          " is not divisible by window count " + std::to_string(l));
    const int c = x.rows, m = x.cols / l;
    auto expect_mm = [m](const Matrix& mat, const char* name) {
        if (mat.rows != m || mat.cols != m)
            throw DimensionError(std::string("windowed attention: ") + name + " has shape " +
                                 shape_str(mat) + ", expected (" + std::to_string(m) + ", " +
                                 std::to_string(m) + ")");
    };
    expect_mm(w.wq, "wq");
    expect_mm(w.wk, "wk");
    expect_mm(w.wv, "wv");

    std::vector<Matrix> windows = window_segment(x, l);
    Matrix out(c, x.cols);
    for (int p = 0; p < l; ++p) {
        Matrix q = matmul(windows[static_cast<size_t>(p)], w.wq);
        Matrix k = matmul(windows[static_cast<size_t>(p)], w.wk);
        Matrix v = matmul(windows[static_cast<size_t>(p)], w.wv);
        Matrix u = self_attention(q, k, v, m);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < m; ++j) out(i, p * m + j) = u(i, j);
    }
    return out;
}

namespace {

void check_counts(int c, int n) {
    if (c < 1) throw ConfigError("flops: channels must be >= 1, got " + std::to_string(c));
    if (n < 1) throw ConfigError("flops: length must be >= 1, got " + std::to_string(n));
}

void check_windows(int n, int l) {
    if (l < 1 || n % l != 0)
        throw ConfigError("flops: segment length " + std::to_string(n) +
                          " is not divisible by window count " + std::to_string(l));
}

} // namespace

double flops_full(int c, int n) {
    check_counts(c, n);
    const double cd = c, nd = n;
    return 6.0 * cd * nd * nd + 4.0 * cd * cd * nd;
}

double flops_arnn(int c, int n, int l) {
    check_counts(c, n);
    check_windows(n, l);
    return flops_full(c, n) / static_cast<double>(l);
}

double flops_arnn_kernel(int c, int n, int l) {
    check_counts(c, n);
    check_windows(n, l);
    const double cd = c, nd = n, ld = l;
    return 6.0 * cd * nd * nd / ld + 4.0 * cd * cd * nd;
}

double flops_arnn_cross(int c, int n, int l, int s) {
    check_counts(c, n);
    check_windows(n, l);
    if (s < 1) throw ConfigError("flops: state count must be >= 1, got " + std::to_string(s));
    return 8.0 * static_cast<double>(c) * static_cast<double>(s) * static_cast<double>(n);
}

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
    return m;
}

// Keeps results alive through the optimizer so timed kernels are not elided.
volatile double g_bench_sink = 0.0;

template <typename Fn>
std::vector<double> time_repeats(int repeats, Fn&& run) {
    for (int i = 0; i < 2; ++i) {
        Matrix out = run();
        g_bench_sink = g_bench_sink + out.data[0];
    }
    std::vector<double> ms;
    ms.reserve(static_cast<size_t>(repeats));
    for (int i = 0; i < repeats; ++i) {
        const auto start = std::chrono::steady_clock::now();
        Matrix out = run();
        const auto stop = std::chrono::steady_clock::now();
        g_bench_sink = g_bench_sink + out.data[0];
        ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    return ms;
}

BenchRecord make_record(const std::string& mechanism, const BenchPoint& p, double flops,
                        std::vector<double> ms) {
    std::sort(ms.begin(), ms.end());
    BenchRecord rec;
    rec.mechanism = mechanism;
    rec.c = p.c;
    rec.n = p.n;
    rec.l = p.l;
    rec.s = p.s;
    rec.flops = flops;
    rec.repeats = static_cast<int>(ms.size());
    rec.min_ms = ms.front();
    rec.max_ms = ms.back();
    const size_t mid = ms.size() / 2;
    rec.median_ms = ms.size() % 2 == 1 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
    return rec;
}

} // namespace

std::vector<BenchRecord> sweep(const std::vector<BenchPoint>& grid, int repeats,
                               uint64_t seed) {
    if (repeats < 5)
        throw ParameterError("bench: repeats must be >= 5, got " + std::to_string(repeats));
    Rng rng(seed);
    std::vector<BenchRecord> records;
    records.reserve(grid.size() * 2);

    for (const BenchPoint& p : grid) {
        if (p.s < 1)
            throw ConfigError("bench: state count must be >= 1, got " + std::to_string(p.s));
        check_counts(p.c, p.n);
        check_windows(p.n, p.l);
        const int m = p.n / p.l;

        Matrix x = random_matrix(p.c, p.n, rng);
        WindowAttentionWeights ww{random_matrix(m, m, rng), random_matrix(m, m, rng),
                                  random_matrix(m, m, rng)};
        FullAttentionWeights fw{random_matrix(p.n, p.n, rng), random_matrix(p.n, p.n, rng),
                                random_matrix(p.n, p.n, rng)};

        records.push_back(make_record(
            "arnn", p, flops_arnn(p.c, p.n, p.l),
            time_repeats(repeats, [&] { return arnn_attention_forward(x, p.l, ww); })));
        records.push_back(make_record(
            "full_attention", p, flops_full(p.c, p.n),
            time_repeats(repeats, [&] { return full_attention_forward(x, fw); })));
    }
    return records;
}

std::vector<BenchPoint> default_grid() {
    std::vector<BenchPoint> grid;
    for (int l : {2, 4, 8, 16, 32, 64}) grid.push_back(BenchPoint{16, 1024, l, 32});
    return grid;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records) {
    std::string contents = "mechanism,c,n,l,s,flops,median_ms,repeats\n";
    char row[192];
    for (const BenchRecord& r : records) {
        std::snprintf(row, sizeof(row), "%s,%d,%d,%d,%d,%.0f,%.9g,%d\n", r.mechanism.c_str(),
                      r.c, r.n, r.l, r.s, r.flops, r.median_ms, r.repeats);
        contents += row;
    }
    write_text_atomic(path, contents);
}

} // namespace arnn
