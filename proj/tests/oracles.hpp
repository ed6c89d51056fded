#pragma once

// Straight-line scalar reimplementations used as test oracles. They share no
// code with the library beyond the container types.

#include <algorithm>
#include <cmath>
#include <vector>

#include "unmix/normalizers.hpp"

namespace oracle {

struct UnMixResult {
    std::vector<double> out;        // B·C·L
    std::vector<double> comp_mean;  // K·C
    std::vector<double> comp_var;   // K·C
};

// One UnMix-TNS step written with plain index loops over flat arrays.
inline UnMixResult unmix_step(const std::vector<double>& z, std::size_t B, std::size_t C,
                              std::size_t L, const std::vector<double>& cm,
                              const std::vector<double>& cv, std::size_t K, double tau,
                              double lambda, double eps, const std::vector<double>& gamma,
                              const std::vector<double>& beta) {
    std::vector<double> im(B * C), iv(B * C);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0;
            for (std::size_t l = 0; l < L; ++l) s += z[(b * C + c) * L + l];
            const double m = s / L;
            double q = 0;
            for (std::size_t l = 0; l < L; ++l) {
                const double d = z[(b * C + c) * L + l] - m;
                q += d * d;
            }
            im[b * C + c] = m;
            iv[b * C + c] = q / L;
        }

    std::vector<double> p(B * K);
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> sim(K);
        for (std::size_t k = 0; k < K; ++k) {
            double dot = 0, nu = 0, nv = 0;
            for (std::size_t c = 0; c < C; ++c) {
                dot += im[b * C + c] * cm[k * C + c];
                nu += im[b * C + c] * im[b * C + c];
                nv += cm[k * C + c] * cm[k * C + c];
            }
            nu = std::sqrt(nu);
            nv = std::sqrt(nv);
            sim[k] = (nu < 1e-12 || nv < 1e-12) ? 0.0 : dot / (nu * nv);
        }
        double mx = sim[0];
        for (double s : sim) mx = std::max(mx, s);
        double total = 0;
        for (std::size_t k = 0; k < K; ++k) total += p[b * K + k] = std::exp((sim[k] - mx) / tau);
        for (std::size_t k = 0; k < K; ++k) p[b * K + k] /= total;
    }

    UnMixResult r;
    r.out.resize(B * C * L);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            double mean = 0;
            std::vector<double> hat_m(K), hat_v(K);
            for (std::size_t k = 0; k < K; ++k) {
                const double w = p[b * K + k];
                hat_m[k] = (1 - w) * cm[k * C + c] + w * im[b * C + c];
                hat_v[k] = (1 - w) * cv[k * C + c] + w * iv[b * C + c];
                mean += hat_m[k] / K;
            }
            double var = 0;
            for (std::size_t k = 0; k < K; ++k)
                var += hat_v[k] / K + hat_m[k] * hat_m[k] / K;
            var -= mean * mean;
            if (var < 0) var = 0;
            for (std::size_t l = 0; l < L; ++l) {
                const std::size_t i = (b * C + c) * L + l;
                r.out[i] = gamma[c] * (z[i] - mean) / std::sqrt(var + eps) + beta[c];
            }
        }

    r.comp_mean = cm;
    r.comp_var = cv;
    if (lambda != 0.0) {
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t c = 0; c < C; ++c) {
                double dm = 0, dv = 0;
                for (std::size_t b = 0; b < B; ++b) {
                    dm += p[b * K + k] * (im[b * C + c] - cm[k * C + c]);
                    dv += p[b * K + k] * (iv[b * C + c] - cv[k * C + c]);
                }
                r.comp_mean[k * C + c] = cm[k * C + c] + lambda / B * dm;
                r.comp_var[k * C + c] = std::max(0.0, cv[k * C + c] + lambda / B * dv);
            }
    }
    return r;
}

// gamma·(z - mean)/sqrt(var + eps) + beta with per-channel mean/var.
inline std::vector<double> normalize(const std::vector<double>& z, std::size_t B, std::size_t C,
                                     std::size_t L, const std::vector<double>& mean,
                                     const std::vector<double>& var,
                                     const std::vector<double>& gamma,
                                     const std::vector<double>& beta, double eps) {
    std::vector<double> out(z.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t l = 0; l < L; ++l) {
                const std::size_t i = (b * C + c) * L + l;
                out[i] = gamma[c] * (z[i] - mean[c]) / std::sqrt(var[c] + eps) + beta[c];
            }
    return out;
}

inline void channel_moments(const std::vector<double>& z, std::size_t B, std::size_t C,
                            std::size_t L, std::vector<double>& mean, std::vector<double>& var) {
    mean.assign(C, 0.0);
    var.assign(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < L; ++l) s += z[(b * C + c) * L + l];
        mean[c] = s / (B * L);
        double q = 0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < L; ++l) {
                const double d = z[(b * C + c) * L + l] - mean[c];
                q += d * d;
            }
        var[c] = q / (B * L);
    }
}

}  // namespace oracle
