#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace unmix {

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Seedable, splittable generator. Wraps mt19937_64; children obtained via
/// split() draw from statistically independent streams, so a component can
/// consume randomness without perturbing its siblings.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed, 0)) {}

    std::uint64_t seed() const { return seed_; }

    /// Child generator for a named sub-stream. Does not advance this one.
    Rng split(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream + 1)); }

    double uniform();  // in (0, 1)
    double normal();
    std::size_t below(std::size_t n);  // uniform integer in [0, n)

    /// Gamma(shape, 1) via Marsaglia-Tsang squeeze/rejection. Returned in
    /// log space so that tiny shapes (δ = 0.01) do not underflow to zero.
    double log_gamma_variate(double shape);

    /// Symmetric Dirichlet(concentration·1_M) draw.
    std::vector<double> dirichlet(std::size_t categories, double concentration);

    std::mt19937_64& engine() { return engine_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace unmix
