#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "arnn/model.hpp"
#include "arnn/rng.hpp"

namespace arnn {

// Index of one on-disk dataset: per-segment file names with labels, plus the
// segment shape declared by the first loaded file.
struct DatasetManifest {
    std::vector<std::string> paths; // relative to the manifest directory
    std::vector<int> labels;
    int c = 0;
    int n = 0;
};

struct LoadedDataset {
    DatasetManifest manifest;
    std::vector<Segment> segments; // aligned with manifest entries
};

// Reads dir/manifest.csv (header "path,label") and every referenced segment
// CSV (n rows of c comma-separated samples; rows are time). Segments come
// back as (c, n) matrices. Any malformed file aborts the whole load with the
// file and line named; there is no partial result.
LoadedDataset load_manifest(const std::string& dir);

// Writes contents to path via a sibling temp file and rename, so a crash
// never leaves a truncated file behind.
void write_text_atomic(const std::string& path, const std::string& contents);

// Writes seg_NNNN.csv files and manifest.csv into dir (created if needed).
// Each file lands via temp-file rename, and the manifest is written last, so
// an interrupted write never leaves a loadable half-dataset.
void write_segments(const std::string& dir, const std::vector<Segment>& segments);

// Per-channel (x - min) / (max - min) into [0, 1]; a constant channel maps
// to all zeros.
Matrix minmax_normalize(const Matrix& segment);
void normalize_dataset(std::vector<Segment>& segments);

// Synthetic two-class task: every segment is AR(1) colored noise; class 1
// additionally carries 1-3 sinusoidal bursts confined to a high-frequency
// band, shared in phase across a random subset of at least half the channels.
struct SynthConfig {
    int c = 16;
    int n = 1024;
    int count_per_class = 100;
    double band_lo = 0.30;        // burst frequency band, cycles per sample
    double band_hi = 0.45;        // must satisfy 0 < lo < hi < 0.5
    double amplitude_ratio = 4.0; // burst amplitude over channel noise RMS, > 1
    double noise_level = 1.0;     // background RMS
    uint64_t seed = 42;

    void validate() const;
};

struct SynthBurst {
    int segment = 0; // index into the returned segment list
    int onset = 0;
    int length = 0;
    double freq = 0.0;
    int channel_count = 0;
};

struct SynthDataset {
    std::vector<Segment> segments; // count_per_class of label 0, then of label 1
    std::vector<SynthBurst> bursts;
};

SynthDataset synth_generate(const SynthConfig& config);

} // namespace arnn
