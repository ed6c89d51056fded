#include "unmix/streams.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "unmix/io.hpp"
#include "unmix/rng.hpp"

namespace unmix {

SynthDataset synth_source(const SynthSpec& spec) {
    const std::size_t M = spec.classes, C = spec.dims, L = spec.spatial;
    if (M < 2) throw std::invalid_argument("synth_source: need at least 2 classes");
    if (C == 0 || L == 0 || spec.per_class == 0)
        throw std::invalid_argument("synth_source: dims, spatial and per_class must be >= 1");
    if (M > C && C < 2)
        throw std::invalid_argument("synth_source: circle layout needs at least 2 dims");
    if (!(spec.spread >= 0.0)) throw std::invalid_argument("synth_source: spread must be >= 0");

    SynthDataset ds;
    ds.class_means = Matrix(M, C);
    ds.class_vars = Matrix(M, C, spec.spread * spec.spread);
    for (std::size_t m = 0; m < M; ++m) {
        if (M <= C) {
            ds.class_means(m, m) = spec.separation;
        } else {
            const double angle = 2.0 * M_PI * static_cast<double>(m) / static_cast<double>(M);
            ds.class_means(m, 0) = spec.separation * std::cos(angle);
            ds.class_means(m, 1) = spec.separation * std::sin(angle);
        }
    }

    const std::size_t N = M * spec.per_class;
    ds.samples = FeatureBatch(N, C, L);
    ds.labels.resize(N);
    Rng rng(spec.seed);
    for (std::size_t n = 0; n < N; ++n) {
        const std::size_t m = n / spec.per_class;
        ds.labels[n] = m;
        for (std::size_t c = 0; c < C; ++c)
            for (auto& v : ds.samples.map(n, c)) v = ds.class_means(m, c) + spec.spread * rng.normal();
    }
    return ds;
}

DomainShift DomainShift::identity(std::size_t dims, std::string id) {
    return DomainShift{std::vector<double>(dims, 1.0), std::vector<double>(dims, 0.0), 0.0,
                       std::move(id)};
}

FeatureBatch apply_shift(const FeatureBatch& x, const DomainShift& shift, std::uint64_t seed) {
    const std::size_t C = x.channels();
    if (shift.scale.size() != C || shift.offset.size() != C)
        throw std::invalid_argument("apply_shift: shift '" + shift.id + "' has " +
                                    std::to_string(shift.scale.size()) + " dims, input has " +
                                    std::to_string(C));
    for (double s : shift.scale)
        if (!(s > 0.0)) throw std::invalid_argument("apply_shift: scale must be positive");
    if (!(shift.noise_std >= 0.0))
        throw std::invalid_argument("apply_shift: noise_std must be >= 0");

    FeatureBatch out = x;
    Rng rng(seed);
    for (std::size_t b = 0; b < x.batch(); ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            for (auto& v : out.map(b, c)) {
                v = shift.scale[c] * v + shift.offset[c];
                if (shift.noise_std > 0.0) v += shift.noise_std * rng.normal();
            }
        }
    }
    return out;
}

std::vector<DomainShift> make_domains(std::size_t count, std::size_t dims, double severity,
                                      std::uint64_t seed) {
    std::vector<DomainShift> out;
    const Rng root(seed);
    for (std::size_t d = 0; d < count; ++d) {
        Rng rng = root.split(d);
        DomainShift shift;
        shift.id = "shift-" + std::to_string(d);
        shift.scale.resize(dims);
        shift.offset.resize(dims);
        for (std::size_t c = 0; c < dims; ++c) {
            shift.scale[c] = std::exp(0.1 * severity * rng.normal());
            shift.offset[c] = 0.75 * severity * rng.normal();
        }
        shift.noise_std = 0.25 * severity;
        out.push_back(std::move(shift));
    }
    return out;
}

std::vector<std::size_t> dirichlet_order(std::span<const std::size_t> labels, double delta,
                                         std::size_t slot_size, std::uint64_t seed) {
    if (!(delta > 0.0)) throw std::invalid_argument("dirichlet_order: delta must be positive");
    if (slot_size == 0) throw std::invalid_argument("dirichlet_order: slot_size must be >= 1");
    const std::size_t N = labels.size();
    if (N == 0) return {};
    const std::size_t M = *std::max_element(labels.begin(), labels.end()) + 1;

    Rng rng(seed);
    Rng pool_rng = rng.split(0);
    std::vector<std::vector<std::size_t>> pools(M);
    for (std::size_t i = 0; i < N; ++i) pools[labels[i]].push_back(i);
    for (auto& pool : pools)
        for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[pool_rng.below(i)]);

    std::vector<std::size_t> order;
    order.reserve(N);
    std::vector<double> masked(M);
    while (order.size() < N) {
        const std::vector<double> pi = rng.dirichlet(M, delta);
        const std::size_t fill = std::min(slot_size, N - order.size());
        for (std::size_t pos = 0; pos < fill; ++pos) {
            double mass = 0.0;
            for (std::size_t m = 0; m < M; ++m) {
                masked[m] = pools[m].empty() ? 0.0 : pi[m];
                mass += masked[m];
            }
            std::size_t cls = M;
            if (mass > 0.0) {
                double u = rng.uniform() * mass;
                for (std::size_t m = 0; m < M; ++m) {
                    if (masked[m] == 0.0) continue;
                    cls = m;
                    if (u < masked[m]) break;
                    u -= masked[m];
                }
            } else {
                for (std::size_t m = 0; m < M && cls == M; ++m)
                    if (!pools[m].empty()) cls = m;
            }
            order.push_back(pools[cls].back());
            pools[cls].pop_back();
        }
    }
    return order;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::string_view to_string(Scenario scenario) {
    switch (scenario) {
        case Scenario::single: return "single";
        case Scenario::continual: return "continual";
        case Scenario::mixed: return "mixed";
    }
    return "unknown";
}

Scenario parse_scenario(std::string_view text) {
    if (text == "single") return Scenario::single;
    if (text == "continual") return Scenario::continual;
    if (text == "mixed") return Scenario::mixed;
    throw std::invalid_argument("unknown scenario '" + std::string(text) +
                                "' (expected single|continual|mixed)");
}

std::vector<std::vector<std::size_t>> schedule_domains(Scenario scenario, std::size_t domains,
                                                       std::size_t n_batches,
                                                       std::size_t batch_size,
                                                       std::uint64_t seed) {
    if (domains == 0) throw std::invalid_argument("schedule_domains: no domains");
    if (batch_size == 0) throw std::invalid_argument("schedule_domains: batch_size must be >= 1");
    std::vector<std::vector<std::size_t>> out(n_batches);
    if (scenario == Scenario::mixed) {
        Rng rng(seed);
        for (auto& batch : out) {
            batch.resize(batch_size);
            for (auto& d : batch) d = rng.below(domains);
        }
        return out;
    }
    // Contiguous segments; the first n_batches % domains segments get one extra batch.
    const std::size_t base = n_batches / domains, extra = n_batches % domains;
    std::size_t t = 0;
    for (std::size_t d = 0; d < domains; ++d) {
        const std::size_t len = base + (d < extra ? 1 : 0);
        for (std::size_t i = 0; i < len; ++i, ++t) out[t].assign(batch_size, d);
    }
    return out;
}

void write_dataset(std::ostream& out, const SynthDataset& ds) {
    out << "unmix-dataset v1\n";
    out << "shape " << ds.samples.batch() << ' ' << ds.samples.channels() << ' '
        << ds.samples.length() << ' ' << ds.classes() << '\n';
    io::write_array(out, "labels", ds.labels);
    io::write_array(out, "class_means", ds.class_means.data());
    io::write_array(out, "class_vars", ds.class_vars.data());
    io::write_array(out, "samples", ds.samples.data());
}

SynthDataset read_dataset(std::istream& in) {
    if (io::read_header(in, "unmix-dataset") != 1)
        throw std::runtime_error("unsupported dataset version");
    std::size_t N = 0, C = 0, L = 0, M = 0;
    {
        std::istringstream ss(io::read_field(in, "shape"));
        if (!(ss >> N >> C >> L >> M)) throw std::runtime_error("dataset: malformed shape");
    }
    SynthDataset ds;
    ds.labels = io::read_indices(in, "labels", N);
    for (auto y : ds.labels)
        if (y >= M) throw std::runtime_error("dataset: label out of range");
    ds.class_means = Matrix(M, C);
    ds.class_means.data() = io::read_doubles(in, "class_means", M * C);
    ds.class_vars = Matrix(M, C);
    ds.class_vars.data() = io::read_doubles(in, "class_vars", M * C);
    ds.samples = FeatureBatch(N, C, L, io::read_doubles(in, "samples", N * C * L));
    return ds;
}

void write_order(std::ostream& out, std::span<const std::size_t> order) {
    out << "unmix-order v1\n";
    io::write_array(out, "order", order);
}

std::vector<std::size_t> read_order(std::istream& in) {
    if (io::read_header(in, "unmix-order") != 1)
        throw std::runtime_error("unsupported order version");
    return io::read_indices(in, "order");
}

}  // namespace unmix
