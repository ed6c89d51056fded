#include "unmix/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "unmix/io.hpp"
#include "unmix/rng.hpp"

namespace unmix {

namespace {

FeatureBatch linear(const FeatureBatch& x, const Matrix& weight, std::span<const double> bias) {
    const std::size_t B = x.batch(), in = x.channels(), out_ch = weight.rows(), L = x.length();
    if (weight.cols() != in)
        throw std::invalid_argument("linear: input has " + std::to_string(in) +
                                    " channels, weight expects " + std::to_string(weight.cols()));
    FeatureBatch out(B, out_ch, L);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t o = 0; o < out_ch; ++o) {
            auto dst = out.map(b, o);
            std::fill(dst.begin(), dst.end(), bias[o]);
            for (std::size_t i = 0; i < in; ++i) {
                const double w = weight(o, i);
                auto src = x.map(b, i);
                for (std::size_t l = 0; l < L; ++l) dst[l] += w * src[l];
            }
        }
    }
    return out;
}

void relu_inplace(FeatureBatch& x) {
    for (auto& v : x.data()) v = std::max(v, 0.0);
}

Matrix pool_and_head(const ToyModel& model, const FeatureBatch& h, Matrix* pooled_out = nullptr) {
    const std::size_t B = h.batch(), W = h.channels(), M = model.classes();
    Matrix pooled(B, W);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < W; ++o) {
            auto map = h.map(b, o);
            pooled(b, o) = std::accumulate(map.begin(), map.end(), 0.0) /
                           static_cast<double>(map.size());
        }
    Matrix logits(B, M);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t m = 0; m < M; ++m) {
            double z = model.head_bias[m];
            for (std::size_t o = 0; o < W; ++o) z += model.head_weight(m, o) * pooled(b, o);
            logits(b, m) = z;
        }
    if (pooled_out) *pooled_out = std::move(pooled);
    return logits;
}

struct BlockCache {
    FeatureBatch input;
    FeatureBatch xhat;
    FeatureBatch output;  // post-ReLU
    std::vector<double> inv_std;
    ChannelStats stats;
};

}  // namespace

ToyModel init_model(std::size_t input_channels, std::span<const std::size_t> widths,
                    std::size_t classes, std::uint64_t seed) {
    if (input_channels == 0 || classes < 2 || widths.empty())
        throw std::invalid_argument("init_model: need inputs, >= 2 classes and >= 1 hidden block");
    ToyModel model;
    model.input_channels = input_channels;
    Rng rng(seed);
    std::size_t fan_in = input_channels;
    for (std::size_t width : widths) {
        if (width == 0) throw std::invalid_argument("init_model: zero-width block");
        HiddenBlock block;
        block.weight = Matrix(width, fan_in);
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& w : block.weight.data()) w = scale * rng.normal();
        block.bias.assign(width, 0.0);
        block.norm = SourceStats{std::vector<double>(width, 0.0), std::vector<double>(width, 1.0),
                                 std::vector<double>(width, 1.0), std::vector<double>(width, 0.0)};
        model.blocks.push_back(std::move(block));
        fan_in = width;
    }
    model.head_weight = Matrix(classes, fan_in);
    const double scale = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& w : model.head_weight.data()) w = scale * rng.normal();
    model.head_bias.assign(classes, 0.0);
    return model;
}

std::vector<double> flatten_params(const ToyModel& model) {
    std::vector<double> p;
    const auto append = [&p](const std::vector<double>& v) { p.insert(p.end(), v.begin(), v.end()); };
    for (const auto& block : model.blocks) {
        append(block.weight.data());
        append(block.bias);
        append(block.norm.gamma);
        append(block.norm.beta);
    }
    append(model.head_weight.data());
    append(model.head_bias);
    return p;
}

void assign_params(ToyModel& model, std::span<const double> params) {
    std::size_t at = 0;
    const auto take = [&](std::vector<double>& v) {
        if (at + v.size() > params.size()) throw std::invalid_argument("assign_params: too few values");
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(at), v.size(), v.begin());
        at += v.size();
    };
    for (auto& block : model.blocks) {
        take(block.weight.data());
        take(block.bias);
        take(block.norm.gamma);
        take(block.norm.beta);
    }
    take(model.head_weight.data());
    take(model.head_bias);
    if (at != params.size()) throw std::invalid_argument("assign_params: too many values");
}

namespace {

/// Train-mode forward; optionally folds batch stats into the running stats.
double train_step(const ToyModel& model, const FeatureBatch& x,
                  std::span<const std::size_t> labels, std::vector<double>* grad,
                  std::vector<BlockCache>* caches_out) {
    const std::size_t B = x.batch();
    if (labels.size() != B) throw std::invalid_argument("train_loss: label count mismatch");
    std::vector<BlockCache> caches(model.blocks.size());
    FeatureBatch h = x;
    for (std::size_t j = 0; j < model.blocks.size(); ++j) {
        const auto& block = model.blocks[j];
        auto& cache = caches[j];
        cache.input = std::move(h);
        FeatureBatch pre = linear(cache.input, block.weight, block.bias);
        cache.stats = batch_stats(pre);
        const std::size_t C = pre.channels();
        cache.inv_std.resize(C);
        cache.xhat = FeatureBatch(B, C, pre.length());
        cache.output = FeatureBatch(B, C, pre.length());
        for (std::size_t c = 0; c < C; ++c) {
            cache.inv_std[c] = 1.0 / std::sqrt(cache.stats.var[c] + kNormEps);
            for (std::size_t b = 0; b < B; ++b) {
                auto src = pre.map(b, c);
                auto xh = cache.xhat.map(b, c);
                auto out = cache.output.map(b, c);
                for (std::size_t l = 0; l < src.size(); ++l) {
                    xh[l] = (src[l] - cache.stats.mean[c]) * cache.inv_std[c];
                    out[l] = std::max(0.0, block.norm.gamma[c] * xh[l] + block.norm.beta[c]);
                }
            }
        }
        h = cache.output;
    }
    Matrix pooled;
    const Matrix logits = pool_and_head(model, h, &pooled);
    const std::size_t M = model.classes();

    double loss = 0.0;
    Matrix dlogits(B, M);
    for (std::size_t b = 0; b < B; ++b) {
        auto row = logits.row(b);
        const double top = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double z : row) total += std::exp(z - top);
        const double log_norm = top + std::log(total);
        loss += log_norm - row[labels[b]];
        for (std::size_t m = 0; m < M; ++m)
            dlogits(b, m) = (std::exp(row[m] - log_norm) - (m == labels[b] ? 1.0 : 0.0)) /
                            static_cast<double>(B);
    }
    loss /= static_cast<double>(B);

    if (grad) {
        // Gradients are accumulated block-by-block in reverse, then laid out
        // in flatten_params order.
        const std::size_t W = pooled.cols();
        std::vector<std::vector<double>> block_grads(model.blocks.size());
        std::vector<double> g_head_w(M * W, 0.0), g_head_b(M, 0.0);
        Matrix dpooled(B, W);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t m = 0; m < M; ++m) {
                const double d = dlogits(b, m);
                g_head_b[m] += d;
                for (std::size_t o = 0; o < W; ++o) {
                    g_head_w[m * W + o] += d * pooled(b, o);
                    dpooled(b, o) += d * model.head_weight(m, o);
                }
            }
        FeatureBatch dh(B, W, h.length());
        const double inv_len = 1.0 / static_cast<double>(h.length());
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < W; ++o)
                for (auto& v : dh.map(b, o)) v = dpooled(b, o) * inv_len;

        for (std::size_t jj = model.blocks.size(); jj-- > 0;) {
            const auto& block = model.blocks[jj];
            const auto& cache = caches[jj];
            const std::size_t C = block.weight.rows(), in = block.weight.cols(),
                              L = cache.input.length();
            const double n = static_cast<double>(B * L);
            std::vector<double> g_gamma(C, 0.0), g_beta(C, 0.0), g_w(C * in, 0.0), g_b(C, 0.0);
            FeatureBatch dpre(B, C, L);
            for (std::size_t c = 0; c < C; ++c) {
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    auto out = cache.output.map(b, c);
                    auto xh = cache.xhat.map(b, c);
                    auto d = dh.map(b, c);
                    for (std::size_t l = 0; l < L; ++l) {
                        const double dy = out[l] > 0.0 ? d[l] : 0.0;
                        g_gamma[c] += dy * xh[l];
                        g_beta[c] += dy;
                        const double dxhat = dy * block.norm.gamma[c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xh[l];
                    }
                }
                for (std::size_t b = 0; b < B; ++b) {
                    auto out = cache.output.map(b, c);
                    auto xh = cache.xhat.map(b, c);
                    auto d = dh.map(b, c);
                    auto dp = dpre.map(b, c);
                    for (std::size_t l = 0; l < L; ++l) {
                        const double dxhat = (out[l] > 0.0 ? d[l] : 0.0) * block.norm.gamma[c];
                        dp[l] = cache.inv_std[c] / n *
                                (n * dxhat - sum_dxhat - xh[l] * sum_dxhat_xhat);
                    }
                }
            }
            FeatureBatch dinput(B, in, L);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < C; ++o) {
                    auto dp = dpre.map(b, o);
                    for (std::size_t l = 0; l < L; ++l) g_b[o] += dp[l];
                    for (std::size_t i = 0; i < in; ++i) {
                        auto src = cache.input.map(b, i);
                        auto di = dinput.map(b, i);
                        const double w = block.weight(o, i);
                        double acc = 0.0;
                        for (std::size_t l = 0; l < L; ++l) {
                            acc += dp[l] * src[l];
                            di[l] += w * dp[l];
                        }
                        g_w[o * in + i] += acc;
                    }
                }
            auto& bg = block_grads[jj];
            bg.insert(bg.end(), g_w.begin(), g_w.end());
            bg.insert(bg.end(), g_b.begin(), g_b.end());
            bg.insert(bg.end(), g_gamma.begin(), g_gamma.end());
            bg.insert(bg.end(), g_beta.begin(), g_beta.end());
            dh = std::move(dinput);
        }
        grad->clear();
        for (const auto& bg : block_grads) grad->insert(grad->end(), bg.begin(), bg.end());
        grad->insert(grad->end(), g_head_w.begin(), g_head_w.end());
        grad->insert(grad->end(), g_head_b.begin(), g_head_b.end());
    }
    if (caches_out) *caches_out = std::move(caches);
    return loss;
}

}  // namespace

double train_loss(const ToyModel& model, const FeatureBatch& x,
                  std::span<const std::size_t> labels, std::vector<double>* grad) {
    return train_step(model, x, labels, grad, nullptr);
}

ToyModel train_source(const SynthDataset& data, std::span<const std::size_t> widths,
                      const TrainConfig& cfg) {
    validate(data.samples);
    if (data.labels.size() != data.samples.batch())
        throw std::invalid_argument("train_source: label count mismatch");
    if (!(cfg.learning_rate > 0.0))
        throw std::invalid_argument("train_source: learning_rate must be positive");
    if (cfg.batch_size == 0) throw std::invalid_argument("train_source: batch_size must be >= 1");
    if (!(cfg.bn_momentum > 0.0 && cfg.bn_momentum <= 1.0))
        throw std::invalid_argument("train_source: bn_momentum must lie in (0, 1]");

    Rng rng(cfg.seed);
    ToyModel model = init_model(data.samples.channels(), widths, data.classes(), rng.split(0).seed());
    Rng shuffle_rng = rng.split(1);
    const std::size_t N = data.size();
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> params = flatten_params(model), grad;
    std::vector<std::size_t> batch_labels;
    std::vector<BlockCache> caches;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        for (std::size_t start = 0; start < N; start += cfg.batch_size) {
            const std::size_t stop = std::min(N, start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            const FeatureBatch x = gather(data.samples, idx);
            batch_labels.resize(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) batch_labels[i] = data.labels[idx[i]];

            train_step(model, x, batch_labels, &grad, &caches);
            for (std::size_t j = 0; j < model.blocks.size(); ++j) {
                auto& norm = model.blocks[j].norm;
                const auto& stats = caches[j].stats;
                for (std::size_t c = 0; c < norm.channels(); ++c) {
                    norm.mean[c] += cfg.bn_momentum * (stats.mean[c] - norm.mean[c]);
                    norm.var[c] += cfg.bn_momentum * (stats.var[c] - norm.var[c]);
                }
            }
            for (std::size_t p = 0; p < params.size(); ++p) params[p] -= cfg.learning_rate * grad[p];
            assign_params(model, params);
        }
    }

    std::vector<NormState> states = make_norm_states(model, NormConfig{}, 0);
    const Matrix logits = forward_eval(model, data.samples, NormConfig{}, states);
    const double accuracy = 1.0 - error_rate(logits, data.labels);
    if (accuracy < cfg.min_accuracy)
        throw TrainingError("train_source: training accuracy " + std::to_string(accuracy) +
                                " below required " + std::to_string(cfg.min_accuracy),
                            accuracy);
    return model;
}

std::vector<NormState> make_norm_states(const ToyModel& model, const NormConfig& config,
                                        std::uint64_t seed) {
    std::vector<NormState> states;
    states.reserve(model.slots());
    for (std::size_t j = 0; j < model.slots(); ++j)
        states.push_back(make_norm_state(config, model.blocks[j].norm, mix_seed(seed, j)));
    return states;
}

Matrix forward_eval(const ToyModel& model, const FeatureBatch& x, const NormConfig& config,
                    std::vector<NormState>& states, std::vector<ChannelStats>* estimates) {
    if (x.channels() != model.input_channels)
        throw std::invalid_argument("forward_eval: input has " + std::to_string(x.channels()) +
                                    " channels, model expects " +
                                    std::to_string(model.input_channels));
    if (states.size() != model.slots())
        throw std::invalid_argument("forward_eval: expected " + std::to_string(model.slots()) +
                                    " normalizer states, got " + std::to_string(states.size()));
    if (estimates) estimates->assign(model.slots(), ChannelStats{});
    FeatureBatch h = x;
    for (std::size_t j = 0; j < model.slots(); ++j) {
        const auto& block = model.blocks[j];
        const FeatureBatch pre = linear(h, block.weight, block.bias);
        h = apply_norm(config, states[j], block.norm, pre, estimates ? &(*estimates)[j] : nullptr);
        relu_inplace(h);
    }
    return pool_and_head(model, h);
}

std::vector<std::size_t> predict(const Matrix& logits) {
    std::vector<std::size_t> out(logits.rows());
    for (std::size_t b = 0; b < logits.rows(); ++b) {
        auto row = logits.row(b);
        out[b] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

double error_rate(const Matrix& logits, std::span<const std::size_t> labels) {
    if (labels.size() != logits.rows())
        throw std::invalid_argument("error_rate: label count mismatch");
    if (labels.empty()) return 0.0;
    const auto pred = predict(logits);
    std::size_t wrong = 0;
    for (std::size_t b = 0; b < labels.size(); ++b) wrong += pred[b] != labels[b];
    return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    const ToyModel& m = ckpt.model;
    out << "unmix-model v1\n";
    out << "data " << ckpt.data.classes << ' ' << ckpt.data.dims << ' ' << ckpt.data.spatial << ' '
        << ckpt.data.per_class << ' ' << io::format_double(ckpt.data.spread) << ' '
        << io::format_double(ckpt.data.separation) << ' ' << ckpt.data.seed << '\n';
    out << "input_channels " << m.input_channels << '\n';
    out << "blocks " << m.blocks.size() << '\n';
    for (const auto& block : m.blocks) {
        out << "block " << block.weight.rows() << ' ' << block.weight.cols() << '\n';
        io::write_array(out, "weight", block.weight.data());
        io::write_array(out, "bias", block.bias);
        io::write_array(out, "running_mean", block.norm.mean);
        io::write_array(out, "running_var", block.norm.var);
        io::write_array(out, "gamma", block.norm.gamma);
        io::write_array(out, "beta", block.norm.beta);
    }
    out << "head " << m.head_weight.rows() << ' ' << m.head_weight.cols() << '\n';
    io::write_array(out, "head_weight", m.head_weight.data());
    io::write_array(out, "head_bias", m.head_bias);
}

Checkpoint load_checkpoint(std::istream& in) {
    if (io::read_header(in, "unmix-model") != 1)
        throw std::runtime_error("unsupported model checkpoint version");
    Checkpoint ckpt;
    {
        std::istringstream ss(io::read_field(in, "data"));
        std::string spread, separation;
        auto& d = ckpt.data;
        if (!(ss >> d.classes >> d.dims >> d.spatial >> d.per_class >> spread >> separation >> d.seed))
            throw std::runtime_error("checkpoint: malformed data line");
        d.spread = io::parse_double(spread);
        d.separation = io::parse_double(separation);
    }
    ToyModel& m = ckpt.model;
    m.input_channels = std::stoul(io::read_field(in, "input_channels"));
    const std::size_t n_blocks = std::stoul(io::read_field(in, "blocks"));
    std::size_t expected_in = m.input_channels;
    for (std::size_t j = 0; j < n_blocks; ++j) {
        std::istringstream ss(io::read_field(in, "block"));
        std::size_t rows = 0, cols = 0;
        if (!(ss >> rows >> cols) || cols != expected_in)
            throw std::runtime_error("checkpoint: block " + std::to_string(j) + " has bad shape");
        HiddenBlock block;
        block.weight = Matrix(rows, cols);
        block.weight.data() = io::read_doubles(in, "weight", rows * cols);
        block.bias = io::read_doubles(in, "bias", rows);
        block.norm.mean = io::read_doubles(in, "running_mean", rows);
        block.norm.var = io::read_doubles(in, "running_var", rows);
        block.norm.gamma = io::read_doubles(in, "gamma", rows);
        block.norm.beta = io::read_doubles(in, "beta", rows);
        validate(block.norm);
        m.blocks.push_back(std::move(block));
        expected_in = rows;
    }
    std::istringstream ss(io::read_field(in, "head"));
    std::size_t rows = 0, cols = 0;
    if (!(ss >> rows >> cols) || cols != expected_in)
        throw std::runtime_error("checkpoint: head has bad shape");
    m.head_weight = Matrix(rows, cols);
    m.head_weight.data() = io::read_doubles(in, "head_weight", rows * cols);
    m.head_bias = io::read_doubles(in, "head_bias", rows);
    return ckpt;
}

}  // namespace unmix
