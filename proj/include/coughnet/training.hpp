#pragma once

// Mini-batch Adam training with early stopping on validation loss, and
// evaluation into confusion matrices.

#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "coughnet/adam.hpp"
#include "coughnet/datasets.hpp"
#include "coughnet/error.hpp"
#include "coughnet/metrics.hpp"
#include "coughnet/model.hpp"
#include "coughnet/parallel.hpp"

namespace coughnet {

struct TrainConfig {
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    nn::AdamConfig adam;
    double min_delta = 1e-4;
    // Gradient workers per batch. Results are bit-identical for a fixed value;
    // different values change the floating-point summation order.
    std::size_t threads = 1;

    void validate() const {
        if (max_epochs < 1) fail(ErrorCode::InvalidArgument, "max_epochs must be >= 1");
        if (patience < 1) fail(ErrorCode::InvalidArgument, "patience must be >= 1");
        if (batch_size < 1) fail(ErrorCode::InvalidArgument, "batch_size must be >= 1");
        if (!(min_delta >= 0.0)) fail(ErrorCode::InvalidArgument, "min_delta must be >= 0");
        if (!(adam.lr > 0.0)) fail(ErrorCode::InvalidArgument, "learning rate must be positive");
    }
};

enum class StopReason { PatienceExhausted, MaxEpochs };

inline std::string_view to_string(StopReason r) {
    return r == StopReason::PatienceExhausted ? "patience_exhausted" : "max_epochs";
}

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0; // from training-mode (dropout) forward passes
    double val_loss = 0.0;
    double val_acc = 0.0;

    bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    StopReason stop_reason = StopReason::MaxEpochs;

    std::string to_csv() const {
        std::ostringstream os;
        os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
        char buf[160];
        for (const auto& e : epochs) {
            std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.train_acc, e.val_loss,
                          e.val_acc);
            os << buf;
        }
        return os.str();
    }

    bool operator==(const TrainHistory&) const = default;
};

/// Tracks the best validation loss. Any strict improvement becomes the new
/// best (so the returned snapshot is always the minimum seen); only an
/// improvement larger than min_delta resets the patience counter.
class EarlyStopping {
public:
    EarlyStopping(std::size_t patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

    struct Decision {
        bool improved = false;
        bool stop = false;
    };

    Decision observe(double val_loss) {
        ++epoch_;
        Decision d;
        if (val_loss < best_) {
            d.improved = true;
            if (best_ - val_loss > min_delta_) {
                stale_ = 0;
            } else {
                ++stale_;
            }
            best_ = val_loss;
            best_epoch_ = epoch_;
        } else {
            ++stale_;
        }
        d.stop = stale_ >= patience_;
        return d;
    }

    double best_loss() const { return best_; }
    std::size_t best_epoch() const { return best_epoch_; }

private:
    std::size_t patience_;
    double min_delta_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0;
    std::size_t epoch_ = 0;
    std::size_t stale_ = 0;
};

template <typename Real>
struct BatchGradient {
    std::vector<Tensor<Real>> grads; // mean over the batch
    double loss_sum = 0.0;
    std::size_t correct = 0;
};

/// Mean per-sample gradient of a batch in training mode. Samples are split
/// into `threads` contiguous chunks whose partial sums are reduced in chunk
/// order, so the result depends only on the thread count.
template <typename Real>
BatchGradient<Real> batch_gradient(const Model<Real>& model, const Batch& batch, DropoutKey key,
                                   std::size_t threads = 1) {
    const std::size_t n = batch.size();
    if (n == 0) fail(ErrorCode::EmptySplit, "empty batch");
    threads = std::max<std::size_t>(1, std::min(threads, n));
    struct Partial {
        std::vector<Tensor<Real>> grads;
        double loss = 0.0;
        std::size_t correct = 0;
    };
    std::vector<Partial> partials(threads);
    auto run_chunk = [&](std::size_t t) {
        Partial& part = partials[t];
        part.grads = zero_gradients(model);
        const std::size_t lo = n * t / threads, hi = n * (t + 1) / threads;
        ForwardCache<Real> cache;
        for (std::size_t j = lo; j < hi; ++j) {
            DropoutKey k = key;
            k.sample = batch.indices[j];
            const auto logits = forward(model, batch.images[j].get(), nn::Mode::Train, &k, &cache);
            auto loss = nn::softmax_cross_entropy(logits, batch.labels[j]);
            part.loss += loss.loss;
            std::vector<double> probs(loss.probs.values().begin(), loss.probs.values().end());
            part.correct += argmax(probs) == batch.labels[j] ? 1 : 0;
            backward(model, cache, std::move(loss.dlogits), part.grads);
        }
    };
    if (threads == 1) {
        run_chunk(0);
    } else {
        parallel_for(threads, threads, run_chunk);
    }
    BatchGradient<Real> out{std::move(partials[0].grads), partials[0].loss, partials[0].correct};
    for (std::size_t t = 1; t < threads; ++t) {
        for (std::size_t p = 0; p < out.grads.size(); ++p) out.grads[p] += partials[t].grads[p];
        out.loss_sum += partials[t].loss;
        out.correct += partials[t].correct;
    }
    const Real inv = Real(1) / static_cast<Real>(n);
    for (auto& g : out.grads) g *= inv;
    return out;
}

struct Evaluation {
    ConfusionMatrix confusion;
    MetricsReport report;
    double mean_loss = 0.0;
    std::vector<int> predictions;
};

/// Inference-mode predictions over a split.
template <typename Real>
Evaluation evaluate(const Model<Real>& model, std::span<const Sample> samples, std::size_t threads = 1) {
    if (samples.empty()) fail(ErrorCode::EmptySplit, "cannot evaluate an empty split");
    std::vector<double> losses(samples.size());
    std::vector<int> predicted(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const auto logits = forward(model, samples[i].image, nn::Mode::Infer);
        const auto r = nn::softmax_cross_entropy(logits, samples[i].label);
        losses[i] = r.loss;
        predicted[i] = argmax(std::vector<double>(r.probs.values().begin(), r.probs.values().end()));
    });
    std::vector<std::pair<int, int>> pairs;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        pairs.emplace_back(samples[i].label, predicted[i]);
        loss_sum += losses[i];
    }
    Evaluation ev;
    ev.confusion = confusion_matrix(pairs, model.spec.n_classes(), model.spec.class_names);
    ev.report = derive_metrics(ev.confusion);
    ev.mean_loss = loss_sum / static_cast<double>(samples.size());
    ev.predictions = std::move(predicted);
    return ev;
}

template <typename Real>
struct TrainResult {
    Model<Real> model;
    TrainHistory history;
};

/// Trains a freshly initialized model and returns the parameters from the
/// epoch with the lowest validation loss.
template <typename Real>
TrainResult<Real> train(const ModelSpec& spec, const FeatureProfile& profile, std::span<const Sample> train_set,
                        std::span<const Sample> val_set, const TrainConfig& config,
                        const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    config.validate();
    if (train_set.empty()) fail(ErrorCode::EmptySplit, "training split is empty");
    if (val_set.empty()) fail(ErrorCode::EmptySplit, "validation split is empty");
    spec.propagate();

    TrainResult<Real> result{make_model<Real>(spec, profile, config.seed), {}};
    Model<Real>& model = result.model;
    nn::AdamState<Real> adam(config.adam, model.params);
    EarlyStopping stopping(config.patience, config.min_delta);
    std::vector<Tensor<Real>> best_params = model.params;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto batches = make_batches(train_set, config.batch_size, config.seed, epoch);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            auto g = batch_gradient(model, batches[b], DropoutKey{config.seed, epoch, b, 0}, config.threads);
            if (!std::isfinite(g.loss_sum)) {
                fail(ErrorCode::NonFiniteLoss,
                     "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
            }
            loss_sum += g.loss_sum;
            correct += g.correct;
            try {
                nn::adam_step<Real>(model.params, g.grads, adam);
            } catch (const Error& e) {
                fail(e.code(), "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
            }
        }
        const auto val = evaluate(model, val_set, config.threads);
        if (!std::isfinite(val.mean_loss)) {
            fail(ErrorCode::NonFiniteLoss, "non-finite validation loss at epoch " + std::to_string(epoch));
        }
        const EpochRecord rec{epoch, loss_sum / static_cast<double>(train_set.size()),
                              static_cast<double>(correct) / static_cast<double>(train_set.size()), val.mean_loss,
                              val.report.accuracy};
        result.history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        const auto d = stopping.observe(val.mean_loss);
        if (d.improved) best_params = model.params;
        if (d.stop) {
            result.history.stop_reason = StopReason::PatienceExhausted;
            break;
        }
    }
    model.params = std::move(best_params);
    result.history.best_epoch = stopping.best_epoch();
    model.meta.epochs_trained = static_cast<std::uint32_t>(result.history.epochs.size());
    model.meta.best_epoch = static_cast<std::uint32_t>(stopping.best_epoch());
    model.meta.best_val_loss = stopping.best_loss();
    return result;
}

} // namespace coughnet
