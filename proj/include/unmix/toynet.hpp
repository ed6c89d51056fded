#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "unmix/normalizers.hpp"
#include "unmix/streams.hpp"
#include "unmix/tensor.hpp"

namespace unmix {

/// Pointwise affine map over channels (a 1×1 convolution on 1-D feature
/// maps), followed by a normalization slot and ReLU.
struct HiddenBlock {
    Matrix weight;             // out×in
    std::vector<double> bias;  // out
    SourceStats norm;          // running stats + gamma/beta

    bool operator==(const HiddenBlock&) const = default;
};

/// Hidden blocks, then global average pooling over L and a linear head.
struct ToyModel {
    std::size_t input_channels = 0;
    std::vector<HiddenBlock> blocks;
    Matrix head_weight;             // M×width
    std::vector<double> head_bias;  // M

    std::size_t slots() const { return blocks.size(); }
    std::size_t classes() const { return head_weight.rows(); }
    bool operator==(const ToyModel&) const = default;
};

struct TrainConfig {
    std::size_t epochs = 30;
    double learning_rate = 0.05;
    std::size_t batch_size = 64;
    double bn_momentum = 0.1;
    std::uint64_t seed = 0;
    double min_accuracy = 0.95;  // training-set accuracy required on return
};

class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, double accuracy)
        : std::runtime_error(what), accuracy_(accuracy) {}
    double accuracy() const { return accuracy_; }

private:
    double accuracy_;
};

/// Freshly initialized model (He-normal weights, unit gamma, zero beta,
/// running stats 0/1).
ToyModel init_model(std::size_t input_channels, std::span<const std::size_t> widths,
                    std::size_t classes, std::uint64_t seed);

/// Mini-batch SGD on cross-entropy with batch-statistics normalization;
/// running statistics tracked by EMA. Throws TrainingError when the final
/// training-set accuracy is below cfg.min_accuracy.
ToyModel train_source(const SynthDataset& data, std::span<const std::size_t> widths,
                      const TrainConfig& cfg);

/// Flat view of every trainable parameter (weights, biases, gamma, beta,
/// head), in a fixed order.
std::vector<double> flatten_params(const ToyModel& model);
void assign_params(ToyModel& model, std::span<const double> params);

/// Mean cross-entropy with train-mode (batch statistics) normalization.
/// Fills `grad` (same layout as flatten_params) when non-null.
double train_loss(const ToyModel& model, const FeatureBatch& x,
                  std::span<const std::size_t> labels, std::vector<double>* grad);

/// One normalizer state per slot, seeded per slot from `seed`.
std::vector<NormState> make_norm_states(const ToyModel& model, const NormConfig& config,
                                        std::uint64_t seed);

/// Inference pass with the chosen normalizer in every slot; stateful
/// normalizers advance `states`. `estimates`, when given, receives the
/// statistics each slot normalized with (see apply_norm).
Matrix forward_eval(const ToyModel& model, const FeatureBatch& x, const NormConfig& config,
                    std::vector<NormState>& states, std::vector<ChannelStats>* estimates = nullptr);

std::vector<std::size_t> predict(const Matrix& logits);
double error_rate(const Matrix& logits, std::span<const std::size_t> labels);

/// Model plus the data recipe it was trained on, so that held-out test
/// sets of the same distribution can be regenerated.
struct Checkpoint {
    ToyModel model;
    SynthSpec data;
    bool operator==(const Checkpoint&) const = default;
};

/// "unmix-model v1" text format; lossless for every double.
void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& in);

}  // namespace unmix
