#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "unmix/tensor.hpp"

namespace unmix {

/// Per-channel moments. Variance is stored; std is derived where needed.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> var;

    std::size_t channels() const { return mean.size(); }
    bool operator==(const ChannelStats&) const = default;
};

/// Per-instance, per-channel moments (B×C).
struct InstanceStats {
    Matrix mean;
    Matrix var;
};

/// Row-stochastic B×K matrix of component assignment probabilities.
struct AssignmentMatrix {
    Matrix probs;
};

/// Moments over the spatial axis of each (b, c) map. Population variance.
InstanceStats instance_stats(const FeatureBatch& batch);

/// Moments over batch and spatial axes, per channel. Population variance.
ChannelStats batch_stats(const FeatureBatch& batch);

/// Mean and variance of the weighted mixture whose k-th component has the
/// given per-channel moments (law of total variance). Weights must sum to 1.
ChannelStats mixture_moments(const Matrix& means, const Matrix& vars,
                             std::span<const double> weights);

/// Uniform-weight shorthand used by the normalization layer.
ChannelStats mixture_moments(const Matrix& means, const Matrix& vars);

/// Cosine similarity; 0 when either vector has norm below 1e-12.
double cosine_sim(std::span<const double> u, std::span<const double> v);

/// Row-wise softmax of sims / tau with max-subtraction. Throws if tau <= 0.
AssignmentMatrix assignment_probs(const Matrix& sims, double tau);

/// Batch-size-dependent momentum 1 - (1 - lambda0)^(B / B0).
double momentum_lambda(std::size_t batch_size, std::size_t reference_batch = 64,
                       double reference_lambda = 0.1);

}  // namespace unmix
