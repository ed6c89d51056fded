#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "unmix/normalizers.hpp"
#include "unmix/stats.hpp"
#include "unmix/streams.hpp"
#include "unmix/toynet.hpp"

namespace unmix {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Everything a single online run needs besides the model.
struct ExperimentConfig {
    Scenario scenario = Scenario::single;
    NormConfig norm;
    /// When set, UnMix-TNS lambda and the EMA-BN momentum follow
    /// momentum_lambda(batch_size) instead of the explicit values in `norm`.
    bool auto_momentum = true;
    double delta = 0.1;
    bool iid = false;  // uniform shuffle instead of the Dirichlet order
    std::size_t batch_size = 64;
    std::size_t slot_size = 0;  // 0 = batch_size
    std::size_t test_per_class = 2000;
    std::size_t domains = 1;
    double severity = 1.0;
    bool clean = false;  // identity shift (evaluate on source distribution)
    std::uint64_t domain_seed = 7;
    std::uint64_t seed = 0;
    bool record_timing = false;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const ExperimentConfig& cfg);

/// Flat `key value` view used for hashing, trace headers and config files.
std::map<std::string, std::string> to_key_values(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

/// The normalizer settings a run actually uses (momentum resolved).
NormConfig effective_norm(const ExperimentConfig& cfg);

/// Test-domain shifts the config describes.
std::vector<DomainShift> experiment_domains(const ExperimentConfig& cfg, std::size_t dims);

struct TraceRecord {
    std::size_t t = 0;
    long domain = -1;  // -1 for mixed-domain batches
    Scenario scenario = Scenario::single;
    NormKind norm = NormKind::source_bn;
    double batch_error = 0.0;
    double cumulative_error = 0.0;
    std::vector<double> bias_l2;  // one per normalization slot
    double wall_time_us = 0.0;

    bool operator==(const TraceRecord&) const = default;
};

struct MetricsTrace {
    std::string config_hash;
    std::string code_version = kCodeVersion;
    std::map<std::string, std::string> config;
    std::vector<TraceRecord> records;

    double final_error() const { return records.empty() ? 0.0 : records.back().cumulative_error; }
    /// Mean bias_l2 of one slot over records [begin, end).
    double mean_bias(std::size_t slot, std::size_t begin, std::size_t end) const;
    bool operator==(const MetricsTrace&) const = default;
};

/// JSON Lines: a header object, then one object per batch. wall_time_us is
/// written only when `with_timing` is set so that traces stay reproducible.
void write_trace(std::ostream& out, const MetricsTrace& trace, bool with_timing = false);
MetricsTrace read_trace(std::istream& in);

/// Per-slot moments of the features entering each normalization slot when
/// the whole dataset is normalized as one batch (the i.i.d. limit).
std::vector<ChannelStats> compute_true_stats(const ToyModel& model, const FeatureBatch& data);

/// Ground truth for the label-shift bias analysis: per-layer overall means,
/// per-layer component means and the time-varying component weights h^t.
struct BiasOracle {
    std::vector<std::vector<double>> true_mean;  // layer → C
    std::vector<Matrix> component_means;         // layer → K'×C
    Matrix schedule;                             // T×K', rows sum to 1
};

void validate(const BiasOracle& oracle);

/// μ* − Σ_k h^t(k)·μ*_k per layer.
std::vector<std::vector<double>> tbn_bias_closed_form(const BiasOracle& oracle, std::size_t t);

/// Online evaluation of one normalizer on a (possibly label-correlated)
/// shifted stream, with per-batch error and per-slot bias against μ*.
MetricsTrace run_experiment(const Checkpoint& ckpt, const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Controlled bias study: features drawn directly from known Gaussian
// components under a piecewise-constant component schedule.

struct BiasStudyConfig {
    std::size_t components = 4;        // K' of the true mixture
    std::size_t channels = 4;
    std::size_t batch_size = 64;
    std::size_t steps_per_segment = 200;
    double separation = 2.0;           // std of the random component means
    double component_std = 1.0;
    /// h weights per segment; empty selects uniform, one-hot, skewed, uniform.
    std::vector<std::vector<double>> segments;
    UnMixOptions unmix;                // lambda follows batch_size when auto
    bool auto_momentum = true;
    std::uint64_t seed = 0;
};

struct BiasStudyStep {
    std::size_t t = 0;
    std::size_t segment = 0;
    std::vector<double> tbn_bias;     // μ* − batch mean
    std::vector<double> closed_form;  // μ* − Σ h μ*_k
    double tbn_l2 = 0.0;
    double unmix_l2 = 0.0;            // ‖mixture mean − μ*‖
};

struct SegmentCheck {
    std::size_t segment = 0;
    std::vector<double> weights;
    std::vector<double> mean_measured;
    std::vector<double> closed_form;
    std::vector<double> standard_error;  // analytic SE of the segment mean
    double max_abs_z = 0.0;
};

struct BiasStudyResult {
    BiasOracle oracle;
    std::vector<BiasStudyStep> steps;
    std::vector<SegmentCheck> segments;
};

BiasStudyResult run_bias_study(const BiasStudyConfig& cfg);
void write_bias_study(std::ostream& out, const BiasStudyResult& result);

// ---------------------------------------------------------------------------

enum class SweepAxis { delta, batch_size, components };

std::string_view to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view text);

/// Copy of `base` with one axis set; K = 1 also sets alpha to 0.
ExperimentConfig with_axis_value(const ExperimentConfig& base, SweepAxis axis, double value);

struct SweepPoint {
    SweepAxis axis = SweepAxis::delta;
    double value = 0.0;
    std::uint64_t seed = 0;
    NormKind norm = NormKind::source_bn;
    MetricsTrace trace;
};

/// Runs every (value, seed, norm) combination in that nesting order.
std::vector<SweepPoint> sweep(const Checkpoint& ckpt, SweepAxis axis, std::span<const double> values,
                              const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                              std::span<const NormKind> norms);

/// Delimited summary: one row per point with final error and mean bias.
void write_sweep_summary(std::ostream& out, const std::vector<SweepPoint>& points);

}  // namespace unmix
