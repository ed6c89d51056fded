#include "unmix/normalizers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "unmix/rng.hpp"

namespace unmix {

namespace {

void check_affine(std::size_t channels, std::span<const double> gamma,
                  std::span<const double> beta) {
    if (gamma.size() != channels || beta.size() != channels)
        throw std::invalid_argument("affine parameters have " + std::to_string(gamma.size()) +
                                    "/" + std::to_string(beta.size()) + " entries, expected " +
                                    std::to_string(channels));
}

void check_channels(std::size_t expected, const FeatureBatch& batch) {
    if (batch.channels() != expected)
        throw std::invalid_argument("channel mismatch: batch has " +
                                    std::to_string(batch.channels()) + ", normalizer expects " +
                                    std::to_string(expected));
}

}  // namespace

void validate(const SourceStats& src) {
    const std::size_t C = src.mean.size();
    if (C == 0) throw std::invalid_argument("SourceStats: no channels");
    if (src.var.size() != C || src.gamma.size() != C || src.beta.size() != C)
        throw std::invalid_argument("SourceStats: field lengths differ");
    for (std::size_t c = 0; c < C; ++c) {
        if (!std::isfinite(src.mean[c]) || !std::isfinite(src.var[c]) ||
            !std::isfinite(src.gamma[c]) || !std::isfinite(src.beta[c]))
            throw std::invalid_argument("SourceStats: non-finite entry");
        if (src.var[c] < 0.0) throw std::invalid_argument("SourceStats: negative variance");
    }
}

UnMixState init_unmix(const SourceStats& src, const UnMixOptions& options, std::uint64_t seed) {
    validate(src);
    const std::size_t K = options.components;
    if (K == 0) throw std::invalid_argument("init_unmix: K must be >= 1");
    if (!(options.alpha >= 0.0 && options.alpha < 1.0))
        throw std::invalid_argument("init_unmix: alpha must lie in [0, 1)");
    if (K == 1 && options.alpha > 0.0)
        throw std::invalid_argument("init_unmix: K = 1 requires alpha = 0");
    if (!(options.tau > 0.0)) throw std::invalid_argument("init_unmix: tau must be positive");
    if (!(options.lambda >= 0.0 && options.lambda < 1.0))
        throw std::invalid_argument("init_unmix: lambda must lie in [0, 1)");
    if (!(options.eps > 0.0)) throw std::invalid_argument("init_unmix: eps must be positive");

    const std::size_t C = src.channels();
    UnMixState state;
    state.comp_mean = Matrix(K, C);
    state.comp_var = Matrix(K, C);
    state.components = K;
    state.alpha = options.alpha;
    state.tau = options.tau;
    state.lambda = options.lambda;
    state.eps = options.eps;

    const double spread =
        K > 1 ? std::sqrt(options.alpha * static_cast<double>(K) / static_cast<double>(K - 1))
              : 0.0;
    Rng rng(seed);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t c = 0; c < C; ++c) {
            const double sigma = std::sqrt(src.var[c]);
            const double zeta = rng.normal();
            state.comp_mean(k, c) = src.mean[c] + sigma * spread * zeta;
            state.comp_var(k, c) = (1.0 - options.alpha) * src.var[c];
        }
    }
    return state;
}

Matrix component_similarity(const UnMixState& state, const InstanceStats& inst) {
    const std::size_t B = inst.mean.rows(), K = state.components;
    Matrix sims(B, K);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k)
            sims(b, k) = cosine_sim(inst.mean.row(b), state.comp_mean.row(k));
    return sims;
}

RefinedStats refine_statistics(const UnMixState& state, const InstanceStats& inst,
                               const AssignmentMatrix& assign) {
    const std::size_t B = inst.mean.rows(), C = inst.mean.cols(), K = state.components;
    const double inv_k = 1.0 / static_cast<double>(K);
    RefinedStats out{Matrix(B, C), Matrix(B, C)};
    std::vector<double> blended(K);
    for (std::size_t b = 0; b < B; ++b) {
        auto p = assign.probs.row(b);
        for (std::size_t c = 0; c < C; ++c) {
            const double mu_i = inst.mean(b, c), var_i = inst.var(b, c);
            double mean = 0.0, var = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                blended[k] = (1.0 - p[k]) * state.comp_mean(k, c) + p[k] * mu_i;
                mean += blended[k];
                var += (1.0 - p[k]) * state.comp_var(k, c) + p[k] * var_i;
            }
            mean *= inv_k;
            double spread = 0.0;
            for (std::size_t k = 0; k < K; ++k) spread += (blended[k] - mean) * (blended[k] - mean);
            out.mean(b, c) = mean;
            out.var(b, c) = (var + spread) * inv_k;
        }
    }
    return out;
}

FeatureBatch unmix_forward_inplace(UnMixState& state, const FeatureBatch& batch,
                                   std::span<const double> gamma, std::span<const double> beta) {
    check_channels(state.channels(), batch);
    check_affine(batch.channels(), gamma, beta);
    const std::size_t B = batch.batch(), C = batch.channels(), K = state.components;

    const InstanceStats inst = instance_stats(batch);
    const AssignmentMatrix assign = assignment_probs(component_similarity(state, inst), state.tau);
    const RefinedStats refined = refine_statistics(state, inst, assign);

    FeatureBatch out(B, C, batch.length());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const double scale = gamma[c] / std::sqrt(refined.var(b, c) + state.eps);
            const double shift = beta[c] - refined.mean(b, c) * scale;
            auto src = batch.map(b, c);
            auto dst = out.map(b, c);
            for (std::size_t l = 0; l < src.size(); ++l) dst[l] = src[l] * scale + shift;
        }
    }

    if (state.lambda == 0.0) return out;
    const double rate = state.lambda / static_cast<double>(B);
    for (std::size_t k = 0; k < K; ++k) {
        auto mean_k = state.comp_mean.row(k);
        auto var_k = state.comp_var.row(k);
        for (std::size_t c = 0; c < C; ++c) {
            double dmean = 0.0, dvar = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double p = assign.probs(b, k);
                dmean += p * (inst.mean(b, c) - mean_k[c]);
                dvar += p * (inst.var(b, c) - var_k[c]);
            }
            mean_k[c] += rate * dmean;
            var_k[c] = std::max(0.0, var_k[c] + rate * dvar);
        }
    }
    return out;
}

UnMixStep unmix_forward(const UnMixState& state, const FeatureBatch& batch,
                        std::span<const double> gamma, std::span<const double> beta) {
    UnMixStep step{FeatureBatch{}, state};
    step.output = unmix_forward_inplace(step.state, batch, gamma, beta);
    return step;
}

FeatureBatch normalize_channels(const FeatureBatch& batch, std::span<const double> mean,
                                std::span<const double> var, std::span<const double> gamma,
                                std::span<const double> beta, double eps) {
    const std::size_t C = batch.channels();
    check_affine(C, gamma, beta);
    if (mean.size() != C || var.size() != C)
        throw std::invalid_argument("normalize_channels: statistics length mismatch");
    FeatureBatch out(batch.batch(), C, batch.length());
    for (std::size_t c = 0; c < C; ++c) {
        const double scale = gamma[c] / std::sqrt(var[c] + eps);
        const double shift = beta[c] - mean[c] * scale;
        for (std::size_t b = 0; b < batch.batch(); ++b) {
            auto src = batch.map(b, c);
            auto dst = out.map(b, c);
            for (std::size_t l = 0; l < src.size(); ++l) dst[l] = src[l] * scale + shift;
        }
    }
    return out;
}

FeatureBatch tbn_forward(const FeatureBatch& batch, std::span<const double> gamma,
                         std::span<const double> beta, double eps) {
    const ChannelStats stats = batch_stats(batch);
    return normalize_channels(batch, stats.mean, stats.var, gamma, beta, eps);
}

FeatureBatch source_bn_forward(const FeatureBatch& batch, const SourceStats& src, double eps) {
    check_channels(src.channels(), batch);
    return normalize_channels(batch, src.mean, src.var, src.gamma, src.beta, eps);
}

ChannelStats alpha_bn_stats(const FeatureBatch& batch, const SourceStats& src, double alpha_bn) {
    if (!(alpha_bn >= 0.0 && alpha_bn <= 1.0))
        throw std::invalid_argument("alpha_bn must lie in [0, 1]");
    check_channels(src.channels(), batch);
    ChannelStats stats = batch_stats(batch);
    for (std::size_t c = 0; c < stats.channels(); ++c) {
        stats.mean[c] = (1.0 - alpha_bn) * src.mean[c] + alpha_bn * stats.mean[c];
        stats.var[c] = (1.0 - alpha_bn) * src.var[c] + alpha_bn * stats.var[c];
    }
    return stats;
}

FeatureBatch alpha_bn_forward(const FeatureBatch& batch, const SourceStats& src,
                              double alpha_bn, double eps) {
    // The endpoints reuse the exact source / batch paths so that a = 0 and
    // a = 1 reproduce those normalizers without blending round-off.
    if (alpha_bn == 0.0) {
        check_channels(src.channels(), batch);
        return source_bn_forward(batch, src, eps);
    }
    if (alpha_bn == 1.0) {
        check_channels(src.channels(), batch);
        return tbn_forward(batch, src.gamma, src.beta, eps);
    }
    const ChannelStats stats = alpha_bn_stats(batch, src, alpha_bn);
    return normalize_channels(batch, stats.mean, stats.var, src.gamma, src.beta, eps);
}

EmaState init_ema(const SourceStats& src, double momentum) {
    validate(src);
    if (!(momentum >= 0.0 && momentum <= 1.0))
        throw std::invalid_argument("EMA momentum must lie in [0, 1]");
    return EmaState{src.mean, src.var, momentum};
}

EmaStep ema_bn_forward(const EmaState& state, const FeatureBatch& batch,
                       std::span<const double> gamma, std::span<const double> beta, double eps) {
    check_channels(state.mean.size(), batch);
    EmaStep step{normalize_channels(batch, state.mean, state.var, gamma, beta, eps), state};
    if (state.momentum == 0.0) return step;
    const ChannelStats stats = batch_stats(batch);
    if (state.momentum == 1.0) {
        step.state.mean = stats.mean;
        step.state.var = stats.var;
        return step;
    }
    for (std::size_t c = 0; c < stats.channels(); ++c) {
        step.state.mean[c] += state.momentum * (stats.mean[c] - state.mean[c]);
        step.state.var[c] += state.momentum * (stats.var[c] - state.var[c]);
    }
    return step;
}

std::string_view to_string(NormKind kind) {
    switch (kind) {
        case NormKind::source_bn: return "source";
        case NormKind::tbn: return "tbn";
        case NormKind::alpha_bn: return "alpha-bn";
        case NormKind::ema_bn: return "ema-bn";
        case NormKind::unmix_tns: return "unmix";
    }
    return "unknown";
}

NormKind parse_norm_kind(std::string_view text) {
    if (text == "source" || text == "source_bn" || text == "source-bn") return NormKind::source_bn;
    if (text == "tbn") return NormKind::tbn;
    if (text == "alpha-bn" || text == "alpha_bn") return NormKind::alpha_bn;
    if (text == "ema-bn" || text == "ema_bn") return NormKind::ema_bn;
    if (text == "unmix" || text == "unmix_tns" || text == "unmix-tns") return NormKind::unmix_tns;
    throw std::invalid_argument("unknown normalizer '" + std::string(text) +
                                "' (expected source|tbn|alpha-bn|ema-bn|unmix)");
}

NormState make_norm_state(const NormConfig& config, const SourceStats& src, std::uint64_t seed) {
    switch (config.kind) {
        case NormKind::ema_bn: return init_ema(src, config.ema_momentum);
        case NormKind::unmix_tns: return init_unmix(src, config.unmix, seed);
        default: validate(src); return std::monostate{};
    }
}

FeatureBatch apply_norm(const NormConfig& config, NormState& state, const SourceStats& src,
                        const FeatureBatch& batch, ChannelStats* estimate) {
    const auto expect_state = [&](bool ok) {
        if (!ok)
            throw std::invalid_argument("normalizer state does not match kind '" +
                                        std::string(to_string(config.kind)) + "'");
    };
    switch (config.kind) {
        case NormKind::source_bn:
            expect_state(std::holds_alternative<std::monostate>(state));
            if (estimate) *estimate = ChannelStats{src.mean, src.var};
            return source_bn_forward(batch, src);
        case NormKind::tbn: {
            expect_state(std::holds_alternative<std::monostate>(state));
            check_channels(src.channels(), batch);
            ChannelStats stats = batch_stats(batch);
            auto out = normalize_channels(batch, stats.mean, stats.var, src.gamma, src.beta);
            if (estimate) *estimate = std::move(stats);
            return out;
        }
        case NormKind::alpha_bn: {
            expect_state(std::holds_alternative<std::monostate>(state));
            if (estimate) *estimate = alpha_bn_stats(batch, src, config.alpha_bn);
            return alpha_bn_forward(batch, src, config.alpha_bn);
        }
        case NormKind::ema_bn: {
            auto* ema = std::get_if<EmaState>(&state);
            expect_state(ema != nullptr);
            if (estimate) *estimate = ChannelStats{ema->mean, ema->var};
            auto step = ema_bn_forward(*ema, batch, src.gamma, src.beta);
            *ema = std::move(step.state);
            return std::move(step.output);
        }
        case NormKind::unmix_tns: {
            auto* unmix = std::get_if<UnMixState>(&state);
            expect_state(unmix != nullptr);
            if (estimate) *estimate = mixture_moments(unmix->comp_mean, unmix->comp_var);
            return unmix_forward_inplace(*unmix, batch, src.gamma, src.beta);
        }
    }
    throw std::logic_error("apply_norm: unhandled kind");
}

}  // namespace unmix
