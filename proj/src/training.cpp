#include "mixlink/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mixlink/ops.hpp"

namespace mixlink {

void TrainConfig::validate() const {
    if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
    if (epochs <= 0) throw std::invalid_argument("epochs must be positive");
    if (learning_rate < 0) throw std::invalid_argument("learning_rate must be non-negative");
    if (!(decay_factor > 0 && decay_factor < 1))
        throw std::invalid_argument("decay_factor must lie in (0, 1)");
    double prev = 0.0;
    for (double m : milestones) {
        if (!(m > prev && m < 1.0))
            throw std::invalid_argument("milestones must be strictly increasing within (0, 1)");
        prev = m;
    }
    if (dropout_rate < 0 || dropout_rate >= 1)
        throw std::invalid_argument("dropout_rate must lie in [0, 1)");
}

void sgd_nesterov_step(ParamStore& params, double lr, double momentum, double weight_decay,
                       bool nesterov) {
    for (std::size_t i = 0; i < params.entries().size(); ++i) {
        auto& param = *params.entries()[i].second;
        if (!param.has_grad()) continue;
        auto& grad = param.grad();
        if (grad.size() != param.size())
            throw std::invalid_argument("gradient shape mismatch for " + params.entries()[i].first);
        auto& velocity = params.velocity(i);
        for (std::size_t j = 0; j < param.size(); ++j) {
            const double g = grad[j] + weight_decay * param.data[j];
            velocity[j] = momentum * velocity[j] + g;
            const double update = nesterov ? g + momentum * velocity[j] : velocity[j];
            param.data[j] -= lr * update;
        }
    }
}

double lr_schedule(int epoch, int total_epochs, const TrainConfig& config) {
    if (epoch < 0 || epoch >= total_epochs)
        throw std::invalid_argument("epoch " + std::to_string(epoch) + " outside [0, " +
                                    std::to_string(total_epochs) + ")");
    double lr = config.learning_rate;
    for (double m : config.milestones)
        if (epoch >= static_cast<int>(m * total_epochs)) lr *= config.decay_factor;
    return lr;
}

ToyDataset make_toy_dataset(int classes, int per_class_train, int size, double noise_sigma,
                            std::uint64_t seed, int per_class_test, int channels) {
    if (classes < 2) throw std::invalid_argument("need at least 2 classes");
    if (per_class_train <= 0 || size <= 0) throw std::invalid_argument("empty dataset requested");
    if (per_class_test < 0) per_class_test = std::max(1, per_class_train / 2);

    ToyDataset data;
    data.classes = classes;
    data.sample_shape = {1, channels, size, size};
    const std::size_t elems = static_cast<std::size_t>(channels) * size * size;

    // Disjoint row stripes (row % classes == c) with a per-class amplitude
    // ramp. Unequal template energies keep the correlation baseline honest
    // to beat.
    for (int c = 0; c < classes; ++c) {
        std::vector<double> pattern(elems, 0.0);
        const double amplitude =
            classes == 1 ? 1.0 : 0.15 + 0.85 * static_cast<double>(c) / (classes - 1);
        for (int ch = 0; ch < channels; ++ch)
            for (int r = 0; r < size; ++r) {
                if (r % classes != c) continue;
                for (int col = 0; col < size; ++col)
                    pattern[(static_cast<std::size_t>(ch) * size + r) * size + col] = amplitude;
            }
        data.patterns.push_back(std::move(pattern));
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    auto emit = [&](std::vector<std::vector<double>>& images, std::vector<int>& labels,
                    int per_class) {
        for (int c = 0; c < classes; ++c)
            for (int i = 0; i < per_class; ++i) {
                std::vector<double> img = data.patterns[c];
                if (noise_sigma > 0)
                    for (auto& v : img) v += noise(rng);
                images.push_back(std::move(img));
                labels.push_back(c);
            }
    };
    emit(data.train_images, data.train_labels, per_class_train);
    emit(data.test_images, data.test_labels, per_class_test);
    return data;
}

double nearest_pattern_accuracy(const ToyDataset& data, bool test_split) {
    const auto& images = test_split ? data.test_images : data.train_images;
    const auto& labels = test_split ? data.test_labels : data.train_labels;
    if (images.empty()) return 0.0;
    int correct = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < data.classes; ++c) {
            double score = 0.0;
            for (std::size_t j = 0; j < images[i].size(); ++j)
                score += images[i][j] * data.patterns[c][j];
            if (score > best_score) {
                best_score = score;
                best = c;
            }
        }
        if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / images.size();
}

namespace {

TensorPtr assemble_batch(const std::vector<std::vector<double>>& images,
                         const std::vector<std::size_t>& order, std::size_t start,
                         std::size_t count, Shape sample_shape) {
    Shape s{static_cast<int>(count), sample_shape.c, sample_shape.h, sample_shape.w};
    auto batch = Tensor::make(s);
    const std::size_t elems = sample_shape.count();
    for (std::size_t i = 0; i < count; ++i)
        std::copy(images[order[start + i]].begin(), images[order[start + i]].end(),
                  batch->data.begin() + i * elems);
    return batch;
}

} // namespace

double evaluate_accuracy(LayerGraph& graph, const std::vector<std::vector<double>>& images,
                         const std::vector<int>& labels, Shape sample_shape, int batch_size) {
    if (images.empty()) return 0.0;
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    int correct = 0;
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const std::size_t count = std::min<std::size_t>(batch_size, images.size() - start);
        auto batch = assemble_batch(images, order, start, count, sample_shape);
        auto logits = graph.forward(batch, Mode::Eval);
        const int K = logits->shape.c;
        for (std::size_t i = 0; i < count; ++i) {
            int best = 0;
            for (int k = 1; k < K; ++k)
                if (logits->data[i * K + k] > logits->data[i * K + best]) best = k;
            if (best == labels[order[start + i]]) ++correct;
        }
    }
    return static_cast<double>(correct) / images.size();
}

TrainHistory train_loop(LayerGraph& graph, const ToyDataset& data, const TrainConfig& config) {
    config.validate();
    if (data.train_images.empty()) throw std::invalid_argument("empty training split");

    TrainHistory history;
    graph.ctx->dropout_rate = config.dropout_rate;

    if (config.learning_rate == 0.0) {
        // Zero step size: no updates of any kind; the history is the
        // constant initial evaluation.
        EpochStats base;
        base.lr = 0.0;
        std::vector<std::size_t> order(data.train_images.size());
        std::iota(order.begin(), order.end(), 0);
        auto batch =
            assemble_batch(data.train_images, order, 0, order.size(), data.sample_shape);
        auto logits = graph.forward(batch, Mode::Eval);
        base.loss =
            softmax_cross_entropy(logits, std::span<const int>(data.train_labels))->data[0];
        base.train_accuracy = evaluate_accuracy(graph, data.train_images, data.train_labels,
                                                data.sample_shape, config.batch_size);
        base.test_accuracy = evaluate_accuracy(graph, data.test_images, data.test_labels,
                                               data.sample_shape, config.batch_size);
        for (int e = 0; e < config.epochs; ++e) {
            base.epoch = e;
            history.epochs.push_back(base);
        }
        return history;
    }

    std::mt19937_64 shuffle_rng(config.seed ^ 0x5bf0a8f2c69e3d17ull);
    std::mt19937_64 dropout_rng(config.seed ^ 0xd1b54a32d192ed03ull);
    std::vector<std::size_t> order(data.train_images.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, config.epochs, config);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t count =
                std::min<std::size_t>(config.batch_size, order.size() - start);
            auto batch = assemble_batch(data.train_images, order, start, count, data.sample_shape);
            std::vector<int> labels(count);
            for (std::size_t i = 0; i < count; ++i) labels[i] = data.train_labels[order[start + i]];

            auto logits = graph.forward(batch, Mode::Train, &dropout_rng);
            auto loss = softmax_cross_entropy(logits, std::span<const int>(labels));
            const double loss_value = loss->data[0];
            if (!std::isfinite(loss_value)) {
                history.diverged = true;
                return history;
            }
            loss_sum += loss_value;
            ++batches;

            graph.params.zero_grads();
            loss->backward();
            sgd_nesterov_step(graph.params, lr, config.momentum, config.weight_decay,
                              config.nesterov);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.loss = loss_sum / static_cast<double>(batches);
        stats.train_accuracy = evaluate_accuracy(graph, data.train_images, data.train_labels,
                                                 data.sample_shape, config.batch_size);
        stats.test_accuracy = evaluate_accuracy(graph, data.test_images, data.test_labels,
                                                data.sample_shape, config.batch_size);
        history.epochs.push_back(stats);
    }
    return history;
}

} // namespace mixlink
