#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "arnn/numerics.hpp"

namespace arnn {

// Reference attention over the whole segment as one window: every channel
// token carries all n samples and the projection weights are (n, n). Written
// with its own plain loops and its own softmax, sharing no code with the cell,
// so it can serve as an independent oracle for the windowed path.
struct FullAttentionWeights {
    Matrix wq, wk, wv; // each (n, n)
};

Matrix full_attention_forward(const Matrix& x, const FullAttentionWeights& w);

// The windowed self-attention path: x is cut into l windows of m = n/l
// columns; each window is projected with the shared (m, m) weights and
// attends over its channel tokens. Output windows are concatenated back to
// (c, n). This is the kernel the complexity claims and timing sweeps cover.
struct WindowAttentionWeights {
    Matrix wq, wk, wv; // each (m, m)
};

Matrix arnn_attention_forward(const Matrix& x, int l, const WindowAttentionWeights& w);

// Multiply-add convention: 1 MAC = 2 FLOPs; only matrix products count
// (softmax and normalization are excluded). All counts are exact integers
// returned as doubles (well below 2^53).
//
// flops_full: projections 3 * 2cn^2 plus scores/apply 2 * 2c^2n.
double flops_full(int c, int n);

// flops_arnn: the 1/l complexity model used in the mechanism comparison;
// both full-attention terms scaled by 1/l, so flops_arnn * l is constant
// in l at fixed (c, n).
double flops_arnn(int c, int n, int l);

// flops_arnn_kernel: exact count for arnn_attention_forward as executed.
// Projections shrink to 6cn^2/l, but every one of the l windows still pays
// 4c^2m for scores/apply, which sums to 4c^2n regardless of l. Agrees with
// flops_arnn at l = 1 and in the dominant quadratic term at every l.
double flops_arnn_kernel(int c, int n, int l);

// Score/apply cost of the two window-state cross-attention products,
// 2l * (2csm + 2csm) = 8csn; reported separately because the mechanism
// comparison columns cover the self-attention path only.
double flops_arnn_cross(int c, int n, int l, int s);

struct BenchPoint {
    int c = 1, n = 1, l = 1, s = 1;
};

struct BenchRecord {
    std::string mechanism; // "arnn" or "full_attention"
    int c = 0, n = 0, l = 0, s = 0;
    double flops = 0.0;
    double median_ms = 0.0;
    double min_ms = 0.0; // spread across repeats, for the printed summary
    double max_ms = 0.0;
    int repeats = 0;
};

// Times both mechanisms at every grid point: 2 warm-up passes, then r timed
// passes on fixed seeded inputs, single-threaded, median recorded. r >= 5.
std::vector<BenchRecord> sweep(const std::vector<BenchPoint>& grid, int repeats,
                               uint64_t seed);

// c=16, s=32, n=1024, l in {2,4,8,16,32,64}.
std::vector<BenchPoint> default_grid();

// Columns: mechanism,c,n,l,s,flops,median_ms,repeats.
void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records);

} // namespace arnn
