#include "arnn/model.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "arnn/errors.hpp"

namespace arnn {

void ModelConfig::validate() const {
    if (c < 1) throw ConfigError("model: channel count must be >= 1, got " + std::to_string(c));
    if (n < 1) throw ConfigError("model: segment length must be >= 1, got " + std::to_string(n));
    if (l < 1) throw ConfigError("model: window count must be >= 1, got " + std::to_string(l));
    if (s < 1) throw ConfigError("model: state vector count must be >= 1, got " + std::to_string(s));
    if (n % l != 0)
        throw ConfigError("model: segment length " + std::to_string(n) +
                          " is not divisible by window count " + std::to_string(l));
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
        throw ConfigError("model: dropout must lie in [0, 1), got " + std::to_string(dropout_p));
}

CellConfig ModelConfig::cell_config() const {
    validate();
    return CellConfig{c, m(), s, dropout_p};
}

ArnnModel ArnnModel::make(const ModelConfig& cfg) {
    CellConfig cc = cfg.cell_config();
    return ArnnModel{cfg, CellParams::make(cc), Param(1, cfg.m()), Param(1, 1)};
}

ArnnModel ArnnModel::init(const ModelConfig& cfg, Rng& rng) {
    CellConfig cc = cfg.cell_config();
    ArnnModel model{cfg, CellParams::init(cc, rng), Param(1, cfg.m()), Param(1, 1)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.m()));
    for (double& v : model.head_w.value.data) v = rng.uniform(-bound, bound);
    return model;
}

std::vector<NamedParam> ArnnModel::named_params() {
    std::vector<NamedParam> all = cell.named();
    all.push_back({"head_w", &head_w});
    all.push_back({"head_b", &head_b});
    return all;
}

void ArnnModel::zero_grads() {
    for (NamedParam np : named_params()) np.param->zero_grad();
}

std::vector<Matrix> window_segment(const Matrix& x, int l) {
    if (l < 1)
        throw ConfigError("window: window count must be >= 1, got " + std::to_string(l));
    if (x.cols % l != 0)
        throw ConfigError("window: segment length " + std::to_string(x.cols) +
                          " is not divisible by window count " + std::to_string(l));
    const int m = x.cols / l;
    std::vector<Matrix> windows;
    windows.reserve(static_cast<size_t>(l));
    for (int p = 0; p < l; ++p) {
        Matrix w(x.rows, m);
        for (int r = 0; r < x.rows; ++r)
            for (int j = 0; j < m; ++j) w(r, j) = x(r, p * m + j);
        windows.push_back(std::move(w));
    }
    return windows;
}

namespace {

void check_segment_shape(const ArnnModel& model, const Matrix& x) {
    if (x.rows != model.config.c || x.cols != model.config.n)
        throw DimensionError("model: segment has shape " + shape_str(x) + ", expected (" +
                             std::to_string(model.config.c) + ", " +
                             std::to_string(model.config.n) + ")");
}

double head_logit(const ArnnModel& model, const Matrix& feature) {
    Matrix out = matmul_nt(feature, model.head_w.value);
    return out(0, 0) + model.head_b.value(0, 0);
}

} // namespace

ForwardResult forward(const ArnnModel& model, const Matrix& x, bool training, Rng& rng) {
    check_segment_shape(model, x);
    const CellConfig cc = model.config.cell_config();
    std::vector<Matrix> windows = window_segment(x, model.config.l);

    ForwardResult result;
    result.states.reserve(windows.size() + 1);
    result.states.emplace_back(model.cell.c0.value);
    for (const Matrix& w : windows)
        result.states.push_back(
            cell_step(w, result.states.back(), model.cell, cc, training, rng));

    Matrix feature = mean_over_rows(result.states.back().vectors); // (1, m)
    feature = dropout(feature, model.config.dropout_p, training, rng);
    result.logit = head_logit(model, feature);
    result.prob = sigmoid_scalar(result.logit);
    return result;
}

ForwardResult forward_cached(const ArnnModel& model, const Matrix& x, bool training,
                             Rng& rng, ModelTape& tape) {
    check_segment_shape(model, x);
    const CellConfig cc = model.config.cell_config();
    std::vector<Matrix> windows = window_segment(x, model.config.l);

    tape = ModelTape{};
    tape.caches.resize(windows.size());

    ForwardResult result;
    result.states.reserve(windows.size() + 1);
    result.states.emplace_back(model.cell.c0.value);
    for (size_t p = 0; p < windows.size(); ++p)
        result.states.push_back(cell_step_cached(windows[p], result.states.back(),
                                                 model.cell, cc, training, rng,
                                                 tape.caches[p]));

    Matrix pooled = mean_over_rows(result.states.back().vectors);
    tape.feature = dropout_fwd(pooled, model.config.dropout_p, training, rng,
                               tape.feature_mask);
    result.logit = head_logit(model, tape.feature);
    result.prob = sigmoid_scalar(result.logit);
    tape.valid = true;
    return result;
}

void backward(ArnnModel& model, const ModelTape& tape, double d_logit) {
    if (!tape.valid)
        throw StateError("model backward called without a cached forward pass");
    const CellConfig cc = model.config.cell_config();
    const int s = model.config.s, m = model.config.m();

    add_scaled_in_place(model.head_w.grad, tape.feature, d_logit);
    model.head_b.grad(0, 0) += d_logit;

    Matrix d_feature = scale(model.head_w.value, d_logit); // (1, m)
    d_feature = dropout_bwd(d_feature, tape.feature_mask);

    // Mean pooling spreads the feature gradient evenly over the s state rows.
    Matrix d_state(s, m);
    for (int r = 0; r < s; ++r)
        for (int j = 0; j < m; ++j) d_state(r, j) = d_feature(0, j) / s;

    for (size_t p = tape.caches.size(); p-- > 0;)
        d_state = cell_backward(d_state, tape.caches[p], model.cell, cc);

    add_in_place(model.cell.c0.grad, d_state);
}

int predict(const ArnnModel& model, const Matrix& x, double threshold) {
    Rng rng(0); // eval mode draws nothing
    return forward(model, x, false, rng).prob >= threshold ? 1 : 0;
}

namespace {

constexpr char kMagic[4] = {'A', 'R', 'N', 'N'};
constexpr unsigned char kVersion = 0x01;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    const uint64_t bits = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& buf, size_t pos) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    return v;
}

double get_f64(const std::string& buf, size_t pos) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

} // namespace

void save_model(const ArnnModel& model, const std::string& path) {
    model.config.validate();

    std::string buf;
    buf.append(kMagic, 4);
    buf.push_back(static_cast<char>(kVersion));
    put_u32(buf, static_cast<uint32_t>(model.config.c));
    put_u32(buf, static_cast<uint32_t>(model.config.n));
    put_u32(buf, static_cast<uint32_t>(model.config.l));
    put_u32(buf, static_cast<uint32_t>(model.config.s));
    // named_params returns mutable pointers; this traversal only reads values.
    ArnnModel& readable = const_cast<ArnnModel&>(model);
    for (NamedParam np : readable.named_params())
        for (double v : np.param->value.data) put_f64(buf, v);

    // Write to a sibling temp file, then rename: readers never see a torn file.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("checkpoint: cannot open " + tmp + " for writing");
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw DataError("checkpoint: write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("checkpoint: cannot move " + tmp + " to " + path + ": " + ec.message());
}

ArnnModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    constexpr size_t header_size = 4 + 1 + 4 * 4;
    if (buf.size() < header_size)
        throw FormatError("checkpoint: file is " + std::to_string(buf.size()) +
                          " bytes, header alone needs " + std::to_string(header_size));
    if (buf.compare(0, 4, kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic bytes (expected ARNN)");
    if (static_cast<unsigned char>(buf[4]) != kVersion)
        throw FormatError("checkpoint: unsupported version " +
                          std::to_string(static_cast<unsigned>(static_cast<unsigned char>(buf[4]))));

    constexpr uint32_t dim_cap = 1u << 24;
    uint32_t dims[4];
    for (int i = 0; i < 4; ++i) {
        dims[i] = get_u32(buf, 5 + 4 * static_cast<size_t>(i));
        if (dims[i] < 1 || dims[i] > dim_cap)
            throw FormatError("checkpoint: dimension field " + std::to_string(i) +
                              " out of range: " + std::to_string(dims[i]));
    }
    ModelConfig cfg{static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                    static_cast<int>(dims[2]), static_cast<int>(dims[3]), 0.0};
    if (cfg.n % cfg.l != 0)
        throw FormatError("checkpoint: declared n=" + std::to_string(cfg.n) +
                          " is not divisible by l=" + std::to_string(cfg.l));

    ArnnModel model = ArnnModel::make(cfg);
    size_t total_doubles = 0;
    for (NamedParam np : model.named_params()) total_doubles += np.param->value.size();
    const size_t expected = header_size + 8 * total_doubles;
    if (buf.size() != expected)
        throw FormatError("checkpoint: file is " + std::to_string(buf.size()) +
                          " bytes, dims (c=" + std::to_string(cfg.c) + ", n=" +
                          std::to_string(cfg.n) + ", l=" + std::to_string(cfg.l) + ", s=" +
                          std::to_string(cfg.s) + ") require " + std::to_string(expected));

    size_t pos = header_size;
    for (NamedParam np : model.named_params())
        for (double& v : np.param->value.data) {
            v = get_f64(buf, pos);
            pos += 8;
        }
    return model;
}

} // namespace arnn
