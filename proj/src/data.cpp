#include "arnn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

#include "arnn/errors.hpp"

namespace fs = std::filesystem;

namespace arnn {

namespace {

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

double parse_field(const std::string& file, int line_no, const char* begin, const char* end) {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end)
        throw DataError(file + ": line " + std::to_string(line_no) +
                        " has a non-numeric field '" + std::string(begin, end) + "'");
    return value;
}

// One time-sample row: c comma-separated values.
void parse_row(const std::string& file, int line_no, const std::string& line,
               std::vector<double>& out) {
    out.clear();
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        size_t end = comma == std::string::npos ? line.size() : comma;
        out.push_back(parse_field(file, line_no, line.data() + start, line.data() + end));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
}

Matrix load_segment_file(const std::string& path, int expected_c, int expected_n) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open");

    std::vector<std::vector<double>> rows;
    std::string line;
    std::vector<double> fields;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        parse_row(path, line_no, line, fields);
        if (!rows.empty() && fields.size() != rows.front().size())
            throw DataError(path + ": line " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(rows.front().size()));
        rows.push_back(fields);
    }
    if (rows.empty()) throw DataError(path + ": no data rows");

    const int n = static_cast<int>(rows.size());
    const int c = static_cast<int>(rows.front().size());
    if (expected_c > 0 && (c != expected_c || n != expected_n))
        throw DataError(path + ": segment is " + std::to_string(n) + " rows x " +
                        std::to_string(c) + " channels, dataset declared " +
                        std::to_string(expected_n) + " x " + std::to_string(expected_c));

    // File rows are time samples; the in-memory layout is (channels, samples).
    Matrix seg(c, n);
    for (int t = 0; t < n; ++t)
        for (int ch = 0; ch < c; ++ch) seg(ch, t) = rows[static_cast<size_t>(t)][static_cast<size_t>(ch)];
    return seg;
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.15g", v);
    return buf;
}

} // namespace

void write_text_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) throw DataError(tmp + ": cannot open for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw DataError(tmp + ": write failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError(path + ": rename failed: " + ec.message());
}

LoadedDataset load_manifest(const std::string& dir) {
    const std::string manifest_path = (fs::path(dir) / "manifest.csv").string();
    std::ifstream in(manifest_path);
    if (!in) throw DataError(manifest_path + ": cannot open");

    LoadedDataset out;
    std::string line;
    int line_no = 0;

    if (!std::getline(in, line))
        throw DataError(manifest_path + ": empty file");
    ++line_no;
    if (strip_cr(line) != "path,label")
        throw DataError(manifest_path + ": line 1 must be the header 'path,label', got '" +
                        strip_cr(line) + "'");

    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const size_t comma = line.rfind(',');
        if (comma == std::string::npos || comma == 0 || comma + 1 == line.size())
            throw DataError(manifest_path + ": line " + std::to_string(line_no) +
                            " is not 'path,label': '" + line + "'");
        const std::string path = line.substr(0, comma);
        const std::string label_text = line.substr(comma + 1);
        int label = -1;
        auto [ptr, ec] = std::from_chars(label_text.data(),
                                         label_text.data() + label_text.size(), label);
        if (ec != std::errc{} || ptr != label_text.data() + label_text.size() ||
            (label != 0 && label != 1))
            throw DataError(manifest_path + ": line " + std::to_string(line_no) +
                            " has label '" + label_text + "', expected 0 or 1");

        const std::string full = (fs::path(dir) / path).string();
        Matrix seg = load_segment_file(full, out.manifest.c, out.manifest.n);
        if (out.manifest.c == 0) {
            out.manifest.c = seg.rows;
            out.manifest.n = seg.cols;
        }
        out.manifest.paths.push_back(path);
        out.manifest.labels.push_back(label);
        out.segments.push_back(Segment{std::move(seg), label});
    }
    if (out.segments.empty())
        throw DataError(manifest_path + ": manifest lists no segments");
    return out;
}

void write_segments(const std::string& dir, const std::vector<Segment>& segments) {
    if (segments.empty()) throw DataError("write: no segments to write");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError(dir + ": cannot create directory: " + ec.message());

    std::string manifest = "path,label\n";
    for (size_t i = 0; i < segments.size(); ++i) {
        const Matrix& seg = segments[i].data;
        if (seg.size() == 0) throw DataError("write: segment " + std::to_string(i) + " is empty");

        char name[32];
        std::snprintf(name, sizeof(name), "seg_%04zu.csv", i);

        std::string contents;
        contents.reserve(static_cast<size_t>(seg.rows) * static_cast<size_t>(seg.cols) * 20);
        for (int t = 0; t < seg.cols; ++t) {
            for (int ch = 0; ch < seg.rows; ++ch) {
                if (ch > 0) contents.push_back(',');
                contents += format_value(seg(ch, t));
            }
            contents.push_back('\n');
        }
        write_text_atomic((fs::path(dir) / name).string(), contents);
        manifest += name;
        manifest += ',';
        manifest += std::to_string(segments[i].label);
        manifest += '\n';
    }
    // Manifest last: a dataset directory is only valid once everything else landed.
    write_text_atomic((fs::path(dir) / "manifest.csv").string(), manifest);
}

Matrix minmax_normalize(const Matrix& segment) {
    Matrix out(segment.rows, segment.cols);
    for (int ch = 0; ch < segment.rows; ++ch) {
        const double* row = segment.row_ptr(ch);
        double lo = row[0], hi = row[0];
        for (int t = 1; t < segment.cols; ++t) {
            lo = std::min(lo, row[t]);
            hi = std::max(hi, row[t]);
        }
        double* dst = out.row_ptr(ch);
        if (hi > lo) {
            const double inv = 1.0 / (hi - lo);
            for (int t = 0; t < segment.cols; ++t) dst[t] = (row[t] - lo) * inv;
        }
        // Constant channel: stays all zeros.
    }
    return out;
}

void normalize_dataset(std::vector<Segment>& segments) {
    for (Segment& seg : segments) seg.data = minmax_normalize(seg.data);
}

void SynthConfig::validate() const {
    if (c < 1) throw ParameterError("synth: channels must be >= 1, got " + std::to_string(c));
    if (n < 2) throw ParameterError("synth: length must be >= 2, got " + std::to_string(n));
    if (count_per_class < 1)
        throw ParameterError("synth: count must be >= 1, got " + std::to_string(count_per_class));
    if (!(band_lo > 0.0 && band_lo < band_hi && band_hi < 0.5))
        throw ParameterError("synth: burst band must satisfy 0 < lo < hi < 0.5, got [" +
                             std::to_string(band_lo) + ", " + std::to_string(band_hi) + "]");
    if (!(amplitude_ratio > 1.0))
        throw ParameterError("synth: amplitude ratio must be > 1, got " +
                             std::to_string(amplitude_ratio));
    if (!(noise_level > 0.0))
        throw ParameterError("synth: noise level must be > 0, got " +
                             std::to_string(noise_level));
}

namespace {

// AR(1) background with stationary standard deviation = noise_level.
void fill_colored_noise(Matrix& seg, double noise_level, Rng& rng) {
    constexpr double alpha = 0.9;
    const double drive = noise_level * std::sqrt(1.0 - alpha * alpha);
    for (int ch = 0; ch < seg.rows; ++ch) {
        double* row = seg.row_ptr(ch);
        double prev = noise_level * rng.normal();
        row[0] = prev;
        for (int t = 1; t < seg.cols; ++t) {
            prev = alpha * prev + drive * rng.normal();
            row[t] = prev;
        }
    }
}

double channel_rms(const Matrix& seg, int ch) {
    const double* row = seg.row_ptr(ch);
    double acc = 0.0;
    for (int t = 0; t < seg.cols; ++t) acc += row[t] * row[t];
    return std::sqrt(acc / seg.cols);
}

} // namespace

SynthDataset synth_generate(const SynthConfig& config) {
    config.validate();
    Rng rng(config.seed);
    SynthDataset out;
    out.segments.reserve(static_cast<size_t>(2 * config.count_per_class));

    const int min_channels = (config.c + 1) / 2;
    std::vector<int> channel_order(static_cast<size_t>(config.c));

    for (int label = 0; label <= 1; ++label) {
        for (int k = 0; k < config.count_per_class; ++k) {
            Segment seg{Matrix(config.c, config.n), label};
            fill_colored_noise(seg.data, config.noise_level, rng);

            if (label == 1) {
                // Burst channels: a fresh subset of at least half the channels.
                const int subset =
                    min_channels + static_cast<int>(rng.below(
                                       static_cast<uint64_t>(config.c - min_channels + 1)));
                std::iota(channel_order.begin(), channel_order.end(), 0);
                rng.shuffle(channel_order);

                std::vector<double> amp(static_cast<size_t>(subset));
                for (int j = 0; j < subset; ++j)
                    amp[static_cast<size_t>(j)] =
                        config.amplitude_ratio * channel_rms(seg.data, channel_order[static_cast<size_t>(j)]);

                const int bursts = 1 + static_cast<int>(rng.below(3));
                for (int b = 0; b < bursts; ++b) {
                    const double freq = rng.uniform(config.band_lo, config.band_hi);
                    const int length = std::max(
                        1, static_cast<int>(std::lround(rng.uniform(0.10, 0.25) * config.n)));
                    const int onset = static_cast<int>(
                        rng.below(static_cast<uint64_t>(config.n - length + 1)));
                    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

                    for (int j = 0; j < subset; ++j) {
                        double* row = seg.data.row_ptr(channel_order[static_cast<size_t>(j)]);
                        for (int t = 0; t < length; ++t)
                            row[onset + t] += amp[static_cast<size_t>(j)] *
                                              std::sin(2.0 * std::numbers::pi * freq * t + phase);
                    }
                    out.bursts.push_back(SynthBurst{static_cast<int>(out.segments.size()),
                                                    onset, length, freq, subset});
                }
            }
            out.segments.push_back(std::move(seg));
        }
    }
    return out;
}

} // namespace arnn
