#include "unmix/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace unmix {

void validate(const FeatureBatch& batch) {
    if (batch.batch() == 0 || batch.channels() == 0 || batch.length() == 0)
        throw std::invalid_argument("FeatureBatch: every dimension must be >= 1");
    for (double v : batch.data())
        if (!std::isfinite(v)) throw std::invalid_argument("FeatureBatch: non-finite entry");
}

FeatureBatch gather(const FeatureBatch& source, std::span<const std::size_t> indices) {
    FeatureBatch out(indices.size(), source.channels(), source.length());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= source.batch())
            throw std::out_of_range("gather: index " + std::to_string(indices[i]) +
                                    " out of range");
        auto src = source.sample(indices[i]);
        std::copy(src.begin(), src.end(), out.sample(i).begin());
    }
    return out;
}

InstanceStats instance_stats(const FeatureBatch& batch) {
    const std::size_t B = batch.batch(), C = batch.channels();
    const double inv_len = 1.0 / static_cast<double>(batch.length());
    InstanceStats out{Matrix(B, C), Matrix(B, C)};
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            auto map = batch.map(b, c);
            double sum = 0.0;
            for (double v : map) sum += v;
            const double mean = sum * inv_len;
            double sq = 0.0;
            for (double v : map) sq += (v - mean) * (v - mean);
            out.mean(b, c) = mean;
            out.var(b, c) = sq * inv_len;
        }
    }
    return out;
}

ChannelStats batch_stats(const FeatureBatch& batch) {
    const std::size_t B = batch.batch(), C = batch.channels();
    const double inv_n = 1.0 / static_cast<double>(B * batch.length());
    ChannelStats out{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (double v : batch.map(b, c)) out.mean[c] += v;
    for (auto& m : out.mean) m *= inv_n;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (double v : batch.map(b, c)) out.var[c] += (v - out.mean[c]) * (v - out.mean[c]);
    for (auto& s : out.var) s *= inv_n;
    return out;
}

ChannelStats mixture_moments(const Matrix& means, const Matrix& vars,
                             std::span<const double> weights) {
    const std::size_t K = means.rows(), C = means.cols();
    if (vars.rows() != K || vars.cols() != C)
        throw std::invalid_argument("mixture_moments: means/vars shape mismatch");
    if (weights.size() != K)
        throw std::invalid_argument("mixture_moments: expected " + std::to_string(K) +
                                    " weights, got " + std::to_string(weights.size()));
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("mixture_moments: negative weight");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("mixture_moments: weights sum to " + std::to_string(total));

    ChannelStats out{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < C; ++c) out.mean[c] += weights[k] * means(k, c);
    // Within-component plus between-component spread; the centered form of
    // E[var] + E[mean^2] - E[mean]^2 cannot go negative.
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t c = 0; c < C; ++c) {
            const double d = means(k, c) - out.mean[c];
            out.var[c] += weights[k] * (vars(k, c) + d * d);
        }
    }
    return out;
}

ChannelStats mixture_moments(const Matrix& means, const Matrix& vars) {
    std::vector<double> uniform(means.rows(), 1.0 / static_cast<double>(means.rows()));
    // Uniform 1/K weights may sum to 1 ± a few ulps; well inside the 1e-9 check.
    return mixture_moments(means, vars, uniform);
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw std::invalid_argument("cosine_sim: length mismatch");
    double dot = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    const double nu = std::sqrt(uu), nv = std::sqrt(vv);
    if (nu < 1e-12 || nv < 1e-12) return 0.0;
    return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

AssignmentMatrix assignment_probs(const Matrix& sims, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("assignment_probs: tau must be positive");
    AssignmentMatrix out{Matrix(sims.rows(), sims.cols())};
    for (std::size_t b = 0; b < sims.rows(); ++b) {
        auto in = sims.row(b);
        auto p = out.probs.row(b);
        const double top = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t k = 0; k < in.size(); ++k) {
            p[k] = std::exp((in[k] - top) / tau);
            total += p[k];
        }
        for (auto& x : p) x /= total;
    }
    return out;
}

double momentum_lambda(std::size_t batch_size, std::size_t reference_batch,
                       double reference_lambda) {
    if (batch_size == 0 || reference_batch == 0)
        throw std::invalid_argument("momentum_lambda: batch sizes must be >= 1");
    if (!(reference_lambda > 0.0 && reference_lambda < 1.0))
        throw std::invalid_argument("momentum_lambda: lambda0 must lie in (0, 1)");
    if (batch_size == reference_batch) return reference_lambda;
    const double ratio = static_cast<double>(batch_size) / static_cast<double>(reference_batch);
    // -expm1(ratio·log1p(-λ0)) keeps precision for small B.
    return -std::expm1(ratio * std::log1p(-reference_lambda));
}

}  // namespace unmix
