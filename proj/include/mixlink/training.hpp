#ifndef MIXLINK_TRAINING_HPP
#define MIXLINK_TRAINING_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mixlink/blocks.hpp"
#include "mixlink/tensor.hpp"

// The published optimization recipe (SGD with Nesterov momentum, weight
// decay, stepped learning-rate schedule) plus a synthetic desk-scale task
// that proves built networks train end to end.

namespace mixlink {

struct TrainConfig {
    int batch_size = 64;
    int epochs = 100;
    double learning_rate = 0.1;
    std::vector<double> milestones = {0.5, 0.75}; // fractions of total epochs
    double decay_factor = 0.1;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    bool nesterov = true;
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// One optimizer step over every parameter with a gradient:
///   g <- grad + wd * param
///   v <- momentum * v + g
///   param <- param - lr * (g + momentum * v)   (Nesterov, no dampening)
/// With nesterov off the update term is v alone.
void sgd_nesterov_step(ParamStore& params, double lr, double momentum, double weight_decay,
                       bool nesterov = true);

/// Piecewise-constant decay: the initial rate divided by the decay factor's
/// inverse at each milestone fraction of the run.
double lr_schedule(int epoch, int total_epochs, const TrainConfig& config);

/// Synthetic dataset: class c draws a fixed orthogonal spatial pattern
/// (disjoint row stripes, per-class amplitude ramp) plus i.i.d. Gaussian
/// noise. Linearly separable at sigma = 0.
struct ToyDataset {
    int classes = 0;
    Shape sample_shape;
    std::vector<std::vector<double>> train_images;
    std::vector<int> train_labels;
    std::vector<std::vector<double>> test_images;
    std::vector<int> test_labels;
    std::vector<std::vector<double>> patterns; // one per class
};

ToyDataset make_toy_dataset(int classes, int per_class_train, int size, double noise_sigma,
                            std::uint64_t seed, int per_class_test = -1, int channels = 3);

/// Template-matching baseline: argmax_c <image, pattern_c>. The network
/// must beat this on the test split.
double nearest_pattern_accuracy(const ToyDataset& data, bool test_split);

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    bool diverged = false;

    double final_train_accuracy() const { return epochs.empty() ? 0.0 : epochs.back().train_accuracy; }
    double final_test_accuracy() const { return epochs.empty() ? 0.0 : epochs.back().test_accuracy; }
};

/// Runs the recipe over the toy dataset. Deterministic given the seed.
/// learning_rate == 0 short-circuits to a constant history of the initial
/// evaluation (no updates of any kind). Divergence (non-finite loss)
/// aborts with the partial history marked.
TrainHistory train_loop(LayerGraph& graph, const ToyDataset& data, const TrainConfig& config);

/// Accuracy of the graph on one split, eval mode, batched.
double evaluate_accuracy(LayerGraph& graph, const std::vector<std::vector<double>>& images,
                         const std::vector<int>& labels, Shape sample_shape, int batch_size);

} // namespace mixlink

#endif
