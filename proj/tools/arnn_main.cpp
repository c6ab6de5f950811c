#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "arnn/bench.hpp"
#include "arnn/data.hpp"
#include "arnn/errors.hpp"
#include "arnn/gradcheck.hpp"
#include "arnn/model.hpp"
#include "arnn/train.hpp"

using namespace arnn;

namespace {

struct SynthOpts {
    std::string out_dir;
    SynthConfig cfg;
};

int run_synth(const SynthOpts& o) {
    std::printf("synth: out=%s channels=%d length=%d count_per_class=%d band=[%g,%g] "
                "ratio=%g noise=%g seed=%" PRIu64 "\n",
                o.out_dir.c_str(), o.cfg.c, o.cfg.n, o.cfg.count_per_class, o.cfg.band_lo,
                o.cfg.band_hi, o.cfg.amplitude_ratio, o.cfg.noise_level, o.cfg.seed);
    SynthDataset ds = synth_generate(o.cfg);
    write_segments(o.out_dir, ds.segments);
    std::printf("wrote %zu segment files + manifest.csv under %s\n", ds.segments.size(),
                o.out_dir.c_str());
    return 0;
}

struct TrainOpts {
    std::string data_dir;
    int windows = 16;
    int states = 32;
    int epochs = 30;
    int batch = 50;
    double lr = 1e-3;
    double dropout = 0.3;
    double split = 0.75;
    uint64_t seed = 42;
    std::string out_path = "model.arnn";
    std::string log_path = "log.csv";
};

int run_train(const TrainOpts& o) {
    std::printf("train: data=%s windows=%d states=%d epochs=%d batch=%d lr=%g dropout=%g "
                "split=%g out=%s log=%s seed=%" PRIu64 "\n",
                o.data_dir.c_str(), o.windows, o.states, o.epochs, o.batch, o.lr, o.dropout,
                o.split, o.out_path.c_str(), o.log_path.c_str(), o.seed);

    LoadedDataset data = load_manifest(o.data_dir);
    std::printf("loaded %zu segments of shape (%d, %d); applying per-channel min-max "
                "normalization\n",
                data.segments.size(), data.manifest.c, data.manifest.n);
    normalize_dataset(data.segments);

    ModelConfig mc{data.manifest.c, data.manifest.n, o.windows, o.states, o.dropout};
    mc.validate();
    Rng init_rng(o.seed);
    ArnnModel model = ArnnModel::init(mc, init_rng);

    TrainConfig tc;
    tc.batch_size = o.batch;
    tc.lr0 = o.lr;
    tc.epochs = o.epochs;
    tc.dropout_p = o.dropout;
    tc.split = o.split;
    tc.seed = o.seed;

    TrainResult result = train(model, data.segments, tc, [](const EpochStats& e) {
        std::printf("epoch %3d  lr %-8g  train_loss %.6f  test_acc %.4f  test_f1 %.4f\n",
                    e.epoch, e.lr, e.train_loss, e.test_accuracy, e.test_f1);
        std::fflush(stdout);
    });

    save_model(model, o.out_path);
    write_train_log(o.log_path, result.log);
    const Metrics& m = result.final_test;
    std::printf("checkpoint: %s\nlog: %s (%zu rows)\n", o.out_path.c_str(), o.log_path.c_str(),
                result.log.size());
    std::printf("final test: accuracy=%.6f precision=%.6f recall=%.6f f1=%.6f "
                "(tp=%ld fp=%ld fn=%ld tn=%ld; %zu train / %zu test segments)\n",
                m.accuracy, m.precision, m.recall, m.f1, m.tp, m.fp, m.fn, m.tn,
                result.train_count, result.test_count);
    return 0;
}

struct EvalOpts {
    std::string model_path;
    std::string data_dir;
    std::string predictions_path;
    double split = 0.75;
    uint64_t seed = 42;
    bool all = false;
};

int run_eval(const EvalOpts& o) {
    std::printf("eval: model=%s data=%s predictions=%s subset=%s split=%g seed=%" PRIu64 "\n",
                o.model_path.c_str(), o.data_dir.c_str(),
                o.predictions_path.empty() ? "(none)" : o.predictions_path.c_str(),
                o.all ? "all" : "test-split", o.split, o.seed);

    ArnnModel model = load_model(o.model_path);
    LoadedDataset data = load_manifest(o.data_dir);
    if (data.manifest.c != model.config.c || data.manifest.n != model.config.n)
        throw DimensionError(
            "eval: checkpoint expects segments of shape (" + std::to_string(model.config.c) +
            ", " + std::to_string(model.config.n) + "), dataset provides (" +
            std::to_string(data.manifest.c) + ", " + std::to_string(data.manifest.n) + ")");
    normalize_dataset(data.segments);

    std::vector<size_t> idx;
    if (o.all) {
        idx.resize(data.segments.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
    } else {
        // Same seeded partition the training run used, so metrics line up
        // with the final logged epoch when flags match.
        Rng rng(o.seed);
        idx = split_indices(data.segments.size(), o.split, rng).second;
        if (idx.empty())
            throw DataError("eval: derived test split is empty; pass --all to evaluate "
                            "every segment");
    }

    long tp = 0, fp = 0, fn = 0, tn = 0;
    std::string predictions = "path,label,prob,pred\n";
    char row[512];
    Rng dummy(0);
    for (size_t i : idx) {
        const Segment& seg = data.segments[i];
        const double prob = forward(model, seg.data, false, dummy).prob;
        const int pred = prob >= 0.5 ? 1 : 0;
        if (seg.label == 1)
            pred == 1 ? ++tp : ++fn;
        else
            pred == 1 ? ++fp : ++tn;
        std::snprintf(row, sizeof(row), "%s,%d,%.17g,%d\n", data.manifest.paths[i].c_str(),
                      seg.label, prob, pred);
        predictions += row;
    }

    Metrics m = metrics_from_counts(tp, fp, fn, tn);
    std::printf("evaluated %zu segments\n", idx.size());
    std::printf("accuracy=%.6f precision=%.6f recall=%.6f f1=%.6f\n", m.accuracy, m.precision,
                m.recall, m.f1);
    std::printf("confusion: tp=%ld fp=%ld fn=%ld tn=%ld\n", m.tp, m.fp, m.fn, m.tn);
    if (!o.predictions_path.empty()) {
        write_text_atomic(o.predictions_path, predictions);
        std::printf("predictions: %s (%zu rows)\n", o.predictions_path.c_str(), idx.size());
    }
    return 0;
}

struct GradcheckOpts {
    std::string config_name = "small";
    double eps = 1e-5;
    double tol = 1e-4;
    uint64_t seed = 42;
    std::string corrupt;
};

int run_gradcheck(const GradcheckOpts& o) {
    std::printf("gradcheck: config=%s eps=%g tol=%g corrupt=%s seed=%" PRIu64 "\n",
                o.config_name.c_str(), o.eps, o.tol,
                o.corrupt.empty() ? "(none)" : o.corrupt.c_str(), o.seed);

    const ModelConfig mc = o.config_name == "small" ? ModelConfig{2, 16, 4, 3, 0.0}
                                                    : ModelConfig{4, 64, 8, 8, 0.0};
    std::printf("model: c=%d n=%d l=%d s=%d\n", mc.c, mc.n, mc.l, mc.s);

    Rng rng(o.seed);
    ArnnModel model = ArnnModel::init(mc, rng);
    Matrix x(mc.c, mc.n);
    for (double& v : x.data) v = rng.uniform(0.0, 1.0);
    const int label = static_cast<int>(rng.below(2));

    GradCheckReport report = gradcheck_model(model, x, label, o.eps, o.corrupt);

    std::printf("%-10s %8s %14s %14s %14s\n", "tensor", "entries", "worst_rel", "analytic", "fd");
    std::vector<std::string> offenders;
    for (const TensorCheck& t : report.tensors) {
        std::printf("%-10s %8d %14.6e %14.6e %14.6e\n", t.name.c_str(), t.entries, t.worst_rel,
                    t.analytic, t.fd);
        if (t.worst_rel > o.tol) offenders.push_back(t.name);
    }
    std::printf("worst relative error: %.6e (tolerance %g)\n", report.worst_rel, o.tol);
    if (!offenders.empty()) {
        std::string joined;
        for (const std::string& name : offenders) {
            if (!joined.empty()) joined += ", ";
            joined += name;
        }
        std::fprintf(stderr, "gradcheck failed for: %s\n", joined.c_str());
        return 1;
    }
    std::printf("gradcheck passed\n");
    return 0;
}

struct BenchOpts {
    std::string grid_path;
    std::string out_path = "bench.csv";
    bool use_default_grid = false;
    int repeats = 5;
    uint64_t seed = 42;
};

std::vector<BenchPoint> parse_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line) || (line != "c,n,l,s" && line != "c,n,l,s\r"))
        throw DataError(path + ": line 1 must be the header 'c,n,l,s'");

    std::vector<BenchPoint> grid;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        int fields[4];
        size_t start = 0;
        for (int f = 0; f < 4; ++f) {
            const size_t comma = line.find(',', start);
            const size_t end = (f == 3) ? line.size() : comma;
            if ((f < 3 && comma == std::string::npos) || (f == 3 && comma != std::string::npos))
                throw DataError(path + ": line " + std::to_string(line_no) +
                                " must have exactly 4 fields c,n,l,s: '" + line + "'");
            auto [ptr, ec] = std::from_chars(line.data() + start, line.data() + end, fields[f]);
            if (ec != std::errc{} || ptr != line.data() + end)
                throw DataError(path + ": line " + std::to_string(line_no) +
                                " has a non-integer field: '" + line + "'");
            start = end + 1;
        }
        grid.push_back(BenchPoint{fields[0], fields[1], fields[2], fields[3]});
    }
    if (grid.empty()) throw DataError(path + ": grid lists no points");
    return grid;
}

int run_bench(const BenchOpts& o) {
    std::printf("bench: grid=%s repeats=%d out=%s seed=%" PRIu64 "\n",
                o.grid_path.empty() ? "(default)" : o.grid_path.c_str(), o.repeats,
                o.out_path.c_str(), o.seed);

    const std::vector<BenchPoint> grid =
        o.grid_path.empty() ? default_grid() : parse_grid(o.grid_path);
    std::printf("%zu grid points, single-threaded, 2 warm-ups + %d timed repeats each\n",
                grid.size(), o.repeats);

    std::vector<BenchRecord> records = sweep(grid, o.repeats, o.seed);
    write_bench_csv(o.out_path, records);

    std::printf("%-15s %4s %6s %4s %4s %14s %12s %12s %12s\n", "mechanism", "c", "n", "l", "s",
                "flops", "median_ms", "min_ms", "max_ms");
    for (const BenchRecord& r : records)
        std::printf("%-15s %4d %6d %4d %4d %14.0f %12.4f %12.4f %12.4f\n", r.mechanism.c_str(),
                    r.c, r.n, r.l, r.s, r.flops, r.median_ms, r.min_ms, r.max_ms);
    std::printf("csv: %s\n", o.out_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attentive recurrent classifier for multi-channel time series"};
    app.require_subcommand(1);

    SynthOpts so;
    CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic burst dataset");
    synth->add_option("--out", so.out_dir, "Output directory")->required();
    synth->add_option("--channels", so.cfg.c, "Channels per segment")->capture_default_str();
    synth->add_option("--length", so.cfg.n, "Samples per segment")->capture_default_str();
    synth->add_option("--count", so.cfg.count_per_class, "Segments per class")
        ->capture_default_str();
    synth->add_option("--band-lo", so.cfg.band_lo, "Burst band lower edge, cycles/sample")
        ->capture_default_str();
    synth->add_option("--band-hi", so.cfg.band_hi, "Burst band upper edge, cycles/sample")
        ->capture_default_str();
    synth->add_option("--ratio", so.cfg.amplitude_ratio, "Burst amplitude over noise RMS")
        ->capture_default_str();
    synth->add_option("--noise", so.cfg.noise_level, "Background noise RMS")
        ->capture_default_str();
    synth->add_option("--seed", so.cfg.seed, "Random seed")->capture_default_str();

    TrainOpts to;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a classifier on a dataset directory");
    train_cmd->add_option("--data", to.data_dir, "Dataset directory with manifest.csv")
        ->required();
    train_cmd->add_option("--windows", to.windows, "Local windows per segment (l)")
        ->capture_default_str();
    train_cmd->add_option("--states", to.states, "State vectors (s)")->capture_default_str();
    train_cmd->add_option("--epochs", to.epochs, "Training epochs")->capture_default_str();
    train_cmd->add_option("--batch", to.batch, "Mini-batch size")->capture_default_str();
    train_cmd->add_option("--lr", to.lr, "Initial learning rate")->capture_default_str();
    train_cmd->add_option("--dropout", to.dropout, "Dropout probability")->capture_default_str();
    train_cmd->add_option("--split", to.split, "Train fraction")->capture_default_str();
    train_cmd->add_option("--seed", to.seed, "Random seed")->capture_default_str();
    train_cmd->add_option("--out", to.out_path, "Checkpoint path")->capture_default_str();
    train_cmd->add_option("--log", to.log_path, "Per-epoch CSV log path")->capture_default_str();

    EvalOpts eo;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--model", eo.model_path, "Checkpoint path")->required();
    eval_cmd->add_option("--data", eo.data_dir, "Dataset directory")->required();
    eval_cmd->add_option("--predictions", eo.predictions_path,
                         "Write per-segment CSV (path,label,prob,pred)");
    eval_cmd->add_option("--split", eo.split, "Train fraction used by the training run")
        ->capture_default_str();
    eval_cmd->add_option("--seed", eo.seed, "Seed used by the training run")
        ->capture_default_str();
    eval_cmd->add_flag("--all", eo.all, "Evaluate every segment instead of the test split");

    GradcheckOpts go;
    CLI::App* grad_cmd =
        app.add_subcommand("gradcheck", "Finite-difference check of the backward pass");
    grad_cmd->add_option("--config", go.config_name, "Model size")
        ->check(CLI::IsMember({"small", "default"}))
        ->capture_default_str();
    grad_cmd->add_option("--eps", go.eps, "Finite-difference step")->capture_default_str();
    grad_cmd->add_option("--tol", go.tol, "Relative error tolerance")->capture_default_str();
    grad_cmd->add_option("--seed", go.seed, "Random seed")->capture_default_str();
    grad_cmd->add_option("--corrupt", go.corrupt,
                         "Perturb this tensor's analytic gradient (negative control)");

    BenchOpts bo;
    CLI::App* bench_cmd = app.add_subcommand("bench", "Time the attention mechanisms");
    CLI::Option* grid_opt =
        bench_cmd->add_option("--grid", bo.grid_path, "Grid CSV with header c,n,l,s")
            ->check(CLI::ExistingFile);
    bench_cmd->add_flag("--default-grid", bo.use_default_grid, "c=16 n=1024 l in {2..64} s=32")
        ->excludes(grid_opt);
    bench_cmd->add_option("--repeats", bo.repeats, "Timed repeats per point (>= 5)")
        ->capture_default_str();
    bench_cmd->add_option("--out", bo.out_path, "Output CSV path")->capture_default_str();
    bench_cmd->add_option("--seed", bo.seed, "Random seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1; // flag/usage problems are validation errors
    }

    try {
        if (app.got_subcommand(synth)) return run_synth(so);
        if (app.got_subcommand(train_cmd)) return run_train(to);
        if (app.got_subcommand(eval_cmd)) return run_eval(eo);
        if (app.got_subcommand(grad_cmd)) return run_gradcheck(go);
        if (app.got_subcommand(bench_cmd)) return run_bench(bo);
        std::cerr << "error: no subcommand selected\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
