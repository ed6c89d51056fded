#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "unmix/stats.hpp"
#include "unmix/tensor.hpp"

namespace unmix {

inline constexpr double kNormEps = 1e-6;

/// Stored statistics and affine parameters of one BN layer.
struct SourceStats {
    std::vector<double> mean;
    std::vector<double> var;
    std::vector<double> gamma;
    std::vector<double> beta;

    std::size_t channels() const { return mean.size(); }
    bool operator==(const SourceStats&) const = default;
};

void validate(const SourceStats& src);

struct UnMixOptions {
    std::size_t components = 16;
    double alpha = 0.5;
    double tau = 0.07;
    double lambda = 0.1;
    double eps = kNormEps;
};

/// K statistics components of an UnMix-TNS layer. Hyperparameters are fixed
/// for the lifetime of the state; only comp_mean / comp_var evolve.
struct UnMixState {
    Matrix comp_mean;  // K×C
    Matrix comp_var;   // K×C, >= 0
    std::size_t components = 0;
    double alpha = 0.0;
    double tau = 0.07;
    double lambda = 0.1;
    double eps = kNormEps;

    std::size_t channels() const { return comp_mean.cols(); }
    bool operator==(const UnMixState&) const = default;
};

/// Per-instance normalization statistics after blending with the components.
struct RefinedStats {
    Matrix mean;  // B×C
    Matrix var;   // B×C
};

/// Splits the stored statistics into K components whose mixture matches
/// them in expectation: mean_k = μ + σ·sqrt(αK/(K-1))·ζ_k, var_k = (1-α)σ².
/// K = 1 requires α = 0.
UnMixState init_unmix(const SourceStats& src, const UnMixOptions& options, std::uint64_t seed);

/// B×K cosine similarity between instance means and component means.
Matrix component_similarity(const UnMixState& state, const InstanceStats& inst);

/// Convex blend of instance and component statistics, then uniform mixture
/// composition over the K blended pairs.
RefinedStats refine_statistics(const UnMixState& state, const InstanceStats& inst,
                               const AssignmentMatrix& assign);

struct UnMixStep {
    FeatureBatch output;
    UnMixState state;
};

/// Normalizes `batch` and returns the component state advanced by one
/// online update. Similarities are taken against the pre-update components.
UnMixStep unmix_forward(const UnMixState& state, const FeatureBatch& batch,
                        std::span<const double> gamma, std::span<const double> beta);

/// In-place variant; `state` is advanced.
FeatureBatch unmix_forward_inplace(UnMixState& state, const FeatureBatch& batch,
                                   std::span<const double> gamma, std::span<const double> beta);

/// Shared affine normalization: gamma·(z - mean)/sqrt(var + eps) + beta per channel.
FeatureBatch normalize_channels(const FeatureBatch& batch, std::span<const double> mean,
                                std::span<const double> var, std::span<const double> gamma,
                                std::span<const double> beta, double eps = kNormEps);

FeatureBatch tbn_forward(const FeatureBatch& batch, std::span<const double> gamma,
                         std::span<const double> beta, double eps = kNormEps);

FeatureBatch source_bn_forward(const FeatureBatch& batch, const SourceStats& src,
                               double eps = kNormEps);

/// Convex blend (1-a)·source + a·batch of both mean and variance.
ChannelStats alpha_bn_stats(const FeatureBatch& batch, const SourceStats& src, double alpha_bn);

FeatureBatch alpha_bn_forward(const FeatureBatch& batch, const SourceStats& src,
                              double alpha_bn, double eps = kNormEps);

/// Global EMA statistics (simplified stand-in for robust BN; no memory bank).
struct EmaState {
    std::vector<double> mean;
    std::vector<double> var;
    double momentum = 0.1;

    bool operator==(const EmaState&) const = default;
};

EmaState init_ema(const SourceStats& src, double momentum);

struct EmaStep {
    FeatureBatch output;
    EmaState state;
};

/// Normalizes with the current EMA, then moves it toward the batch statistics.
EmaStep ema_bn_forward(const EmaState& state, const FeatureBatch& batch,
                       std::span<const double> gamma, std::span<const double> beta,
                       double eps = kNormEps);

// ---------------------------------------------------------------------------
// Pluggable interface used by the network and the experiment harness.

enum class NormKind { source_bn, tbn, alpha_bn, ema_bn, unmix_tns };

std::string_view to_string(NormKind kind);
NormKind parse_norm_kind(std::string_view text);

struct NormConfig {
    NormKind kind = NormKind::source_bn;
    double alpha_bn = 0.5;
    double ema_momentum = 0.1;
    UnMixOptions unmix;
};

/// Per-slot mutable state; monostate for the stateless kinds.
using NormState = std::variant<std::monostate, EmaState, UnMixState>;

NormState make_norm_state(const NormConfig& config, const SourceStats& src, std::uint64_t seed);

/// Normalizes one slot's input with the configured kind, advancing `state`.
/// When `estimate` is non-null it receives the channel statistics the
/// normalizer held for this batch (mixture moments for UnMix-TNS).
FeatureBatch apply_norm(const NormConfig& config, NormState& state, const SourceStats& src,
                        const FeatureBatch& batch, ChannelStats* estimate = nullptr);

}  // namespace unmix
