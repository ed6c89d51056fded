#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unmix/tensor.hpp"

namespace unmix {

/// Parameters of a synthetic Gaussian-class dataset.
struct SynthSpec {
    std::size_t classes = 5;
    std::size_t dims = 8;      // C0
    std::size_t spatial = 4;   // L0
    std::size_t per_class = 1000;
    double spread = 1.0;       // per-entry noise std around the class mean
    double separation = 2.0;   // distance scale of the class-mean layout
    std::uint64_t seed = 0;

    bool operator==(const SynthSpec&) const = default;
};

struct SynthDataset {
    FeatureBatch samples;             // N×C0×L0
    std::vector<std::size_t> labels;  // in [0, classes)
    Matrix class_means;               // M×C0
    Matrix class_vars;                // M×C0

    std::size_t size() const { return labels.size(); }
    std::size_t classes() const { return class_means.rows(); }
};

/// Class means sit at separation·e_m when M <= C0, otherwise evenly on a
/// circle of radius `separation` in the first two dims. Samples are grouped
/// by class; the layout depends only on (M, C0, separation).
SynthDataset synth_source(const SynthSpec& spec);

/// Per-input-channel affine corruption with additive Gaussian noise.
struct DomainShift {
    std::vector<double> scale;
    std::vector<double> offset;
    double noise_std = 0.0;
    std::string id;

    static DomainShift identity(std::size_t dims, std::string id = "clean");
    bool operator==(const DomainShift&) const = default;
};

/// x' = scale ⊙ x + offset + noise_std·η. The identity shift copies x.
FeatureBatch apply_shift(const FeatureBatch& x, const DomainShift& shift, std::uint64_t seed);

/// `count` deterministic shifts of increasing index, magnitudes set by severity.
std::vector<DomainShift> make_domains(std::size_t count, std::size_t dims, double severity,
                                      std::uint64_t seed);

/// Label-correlated stream order. The stream is cut into slots; each slot
/// draws class proportions π ~ Dir(δ·1) and fills its positions by drawing
/// a class from π (restricted to classes with samples left) and taking a
/// random remaining sample of it. When π puts no mass on any remaining
/// class, the slot falls back to the remaining pool in label order.
std::vector<std::size_t> dirichlet_order(std::span<const std::size_t> labels, double delta,
                                         std::size_t slot_size, std::uint64_t seed);

/// Uniformly shuffled order (the i.i.d. reference stream).
std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed);

enum class Scenario { single, continual, mixed };

std::string_view to_string(Scenario scenario);
Scenario parse_scenario(std::string_view text);

/// Domain index of every sample in every batch. single/continual use
/// contiguous equal segments per domain; mixed draws each sample's domain
/// independently and uniformly.
std::vector<std::vector<std::size_t>> schedule_domains(Scenario scenario, std::size_t domains,
                                                       std::size_t n_batches,
                                                       std::size_t batch_size,
                                                       std::uint64_t seed);

/// Versioned text formats ("unmix-dataset v1", "unmix-order v1").
void write_dataset(std::ostream& out, const SynthDataset& ds);
SynthDataset read_dataset(std::istream& in);
void write_order(std::ostream& out, std::span<const std::size_t> order);
std::vector<std::size_t> read_order(std::istream& in);

}  // namespace unmix
