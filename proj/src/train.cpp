#include "arnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>

#include "arnn/data.hpp"
#include "arnn/errors.hpp"

namespace arnn {

void TrainConfig::validate() const {
    if (batch_size < 1)
        throw ConfigError("train: batch size must be >= 1, got " + std::to_string(batch_size));
    // Zero is allowed as a degenerate no-learning rate so a fixed-point run
    // (parameters provably untouched) stays expressible; negative is not.
    if (!(lr0 >= 0.0))
        throw ConfigError("train: learning rate must be >= 0, got " + std::to_string(lr0));
    if (!(decay_factor > 0.0 && decay_factor <= 1.0))
        throw ConfigError("train: decay factor must lie in (0, 1], got " +
                          std::to_string(decay_factor));
    if (decay_every < 1)
        throw ConfigError("train: decay interval must be >= 1, got " + std::to_string(decay_every));
    if (epochs < 0)
        throw ConfigError("train: epoch count must be >= 0, got " + std::to_string(epochs));
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
        throw ConfigError("train: dropout must lie in [0, 1), got " + std::to_string(dropout_p));
    if (!(split > 0.0 && split < 1.0))
        throw ConfigError("train: train fraction must lie in (0, 1), got " + std::to_string(split));
}

AdamState AdamState::make(const std::vector<NamedParam>& params) {
    AdamState state;
    state.m1.reserve(params.size());
    state.m2.reserve(params.size());
    for (const NamedParam& np : params) {
        state.m1.emplace_back(np.param->value.rows, np.param->value.cols);
        state.m2.emplace_back(np.param->value.rows, np.param->value.cols);
    }
    return state;
}

Metrics metrics_from_counts(long tp, long fp, long fn, long tn) {
    if (tp < 0 || fp < 0 || fn < 0 || tn < 0)
        throw ParameterError("metrics: confusion counts must be non-negative");
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.tn = tn;
    const long total = tp + fp + fn + tn;
    m.accuracy = total > 0 ? static_cast<double>(tp + tn) / static_cast<double>(total) : 0.0;
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

BceResult bce_loss(double prob, int label) {
    if (label != 0 && label != 1)
        throw ParameterError("bce: label must be 0 or 1, got " + std::to_string(label));
    const double p = std::clamp(prob, 1e-12, 1.0 - 1e-12);
    BceResult r;
    r.loss = label == 1 ? -std::log(p) : -std::log(1.0 - p);
    r.d_logit = prob - static_cast<double>(label);
    return r;
}

double lr_at(int epoch, const TrainConfig& config) {
    if (epoch < 0)
        throw ParameterError("lr: epoch must be >= 0, got " + std::to_string(epoch));
    return config.lr0 * std::pow(config.decay_factor, epoch / config.decay_every);
}

void adam_step(const std::vector<NamedParam>& params, AdamState& adam, double lr) {
    if (params.size() != adam.m1.size() || params.size() != adam.m2.size())
        throw StateError("adam: optimizer state holds " + std::to_string(adam.m1.size()) +
                         " tensors, parameter list has " + std::to_string(params.size()));
    adam.t += 1;
    const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i].param;
        if (!p.value.same_shape(adam.m1[i]))
            throw DimensionError(std::string("adam: moment shape ") + shape_str(adam.m1[i]) +
                                 " does not match parameter " + params[i].name + " " +
                                 shape_str(p.value));
        for (size_t j = 0; j < p.value.data.size(); ++j) {
            const double g = p.grad.data[j];
            double& m1 = adam.m1[i].data[j];
            double& m2 = adam.m2[i].data[j];
            m1 = adam.beta1 * m1 + (1.0 - adam.beta1) * g;
            m2 = adam.beta2 * m2 + (1.0 - adam.beta2) * g * g;
            p.value.data[j] -= lr * (m1 / bc1) / (std::sqrt(m2 / bc2) + adam.eps);
        }
    }
}

std::pair<std::vector<size_t>, std::vector<size_t>>
split_indices(size_t count, double split, Rng& rng) {
    if (count == 0) throw DataError("split: dataset is empty");
    if (!(split > 0.0 && split < 1.0))
        throw ParameterError("split: train fraction must lie in (0, 1), got " +
                             std::to_string(split));
    const size_t n_test =
        static_cast<size_t>(std::floor((1.0 - split) * static_cast<double>(count)));
    const size_t n_train = count - n_test;
    if (n_test == 0)
        std::cerr << "warning: test split is empty (" << count << " segments at train fraction "
                  << split << ")\n";

    std::vector<size_t> order(count);
    std::iota(order.begin(), order.end(), size_t{0});
    rng.shuffle(order);

    std::pair<std::vector<size_t>, std::vector<size_t>> out;
    out.first.assign(order.begin(), order.begin() + static_cast<ptrdiff_t>(n_train));
    out.second.assign(order.begin() + static_cast<ptrdiff_t>(n_train), order.end());
    return out;
}

std::pair<std::vector<Segment>, std::vector<Segment>>
split_train_test(const std::vector<Segment>& dataset, double split, Rng& rng) {
    auto [train_idx, test_idx] = split_indices(dataset.size(), split, rng);
    std::pair<std::vector<Segment>, std::vector<Segment>> out;
    out.first.reserve(train_idx.size());
    out.second.reserve(test_idx.size());
    for (size_t i : train_idx) out.first.push_back(dataset[i]);
    for (size_t i : test_idx) out.second.push_back(dataset[i]);
    return out;
}

std::pair<std::vector<Segment>, std::vector<Segment>>
split_train_test(const std::vector<Segment>& dataset, double split, uint64_t seed) {
    Rng rng(seed);
    return split_train_test(dataset, split, rng);
}

TrainResult train(ArnnModel& model, const std::vector<Segment>& dataset,
                  const TrainConfig& config,
                  const std::function<void(const EpochStats&)>& on_epoch) {
    config.validate();
    model.config.validate();
    for (size_t i = 0; i < dataset.size(); ++i) {
        const Segment& seg = dataset[i];
        if (seg.data.rows != model.config.c || seg.data.cols != model.config.n)
            throw DimensionError("train: segment " + std::to_string(i) + " has shape " +
                                 shape_str(seg.data) + ", expected (" +
                                 std::to_string(model.config.c) + ", " +
                                 std::to_string(model.config.n) + ")");
        if (seg.label != 0 && seg.label != 1)
            throw DataError("train: segment " + std::to_string(i) + " has label " +
                            std::to_string(seg.label) + ", expected 0 or 1");
    }
    model.config.dropout_p = config.dropout_p;

    Rng rng(config.seed);
    auto [train_set, test_set] = split_train_test(dataset, config.split, rng);

    std::vector<NamedParam> params = model.named_params();
    AdamState adam = AdamState::make(params);

    TrainResult result;
    result.train_count = train_set.size();
    result.test_count = test_set.size();

    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(epoch, config);
        rng.shuffle(order);
        double loss_sum = 0.0;
        size_t done = 0;
        while (done < order.size()) {
            const size_t batch =
                std::min(static_cast<size_t>(config.batch_size), order.size() - done);
            model.zero_grads();
            for (size_t b = 0; b < batch; ++b) {
                const Segment& seg = train_set[order[done + b]];
                ModelTape tape;
                ForwardResult out = forward_cached(model, seg.data, true, rng, tape);
                BceResult bce = bce_loss(out.prob, seg.label);
                loss_sum += bce.loss;
                backward(model, tape, bce.d_logit / static_cast<double>(batch));
            }
            adam_step(params, adam, lr);
            done += batch;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_loss = loss_sum / static_cast<double>(order.size());
        if (!test_set.empty()) {
            result.final_test = evaluate(model, test_set);
            stats.test_accuracy = result.final_test.accuracy;
            stats.test_f1 = result.final_test.f1;
        }
        result.log.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    return result;
}

Metrics evaluate(const ArnnModel& model, const std::vector<Segment>& test_set) {
    if (test_set.empty()) throw DataError("evaluate: test set is empty");
    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < test_set.size(); ++i) {
        const Segment& seg = test_set[i];
        if (seg.label != 0 && seg.label != 1)
            throw DataError("evaluate: segment " + std::to_string(i) + " has label " +
                            std::to_string(seg.label) + ", expected 0 or 1");
        const int pred = predict(model, seg.data, 0.5);
        if (seg.label == 1)
            pred == 1 ? ++tp : ++fn;
        else
            pred == 1 ? ++fp : ++tn;
    }
    return metrics_from_counts(tp, fp, fn, tn);
}

void write_train_log(const std::string& path, const std::vector<EpochStats>& log) {
    std::string contents = "epoch,lr,train_loss,test_accuracy,test_f1\n";
    char row[160];
    for (const EpochStats& e : log) {
        std::snprintf(row, sizeof(row), "%d,%g,%.10g,%.10g,%.10g\n", e.epoch, e.lr,
                      e.train_loss, e.test_accuracy, e.test_f1);
        contents += row;
    }
    write_text_atomic(path, contents);
}

} // namespace arnn
