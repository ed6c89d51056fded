#include "unmix/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "unmix/io.hpp"
#include "unmix/rng.hpp"

namespace unmix {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& field, const std::string& message) {
    if (!ok) throw std::invalid_argument(field + ": " + message);
}

double l2_gap(std::span<const double> a, std::span<const double> b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sq);
}

std::string yes_no(bool v) { return v ? "true" : "false"; }

}  // namespace

void validate(const ExperimentConfig& cfg) {
    require(cfg.batch_size >= 1, "batch_size", "must be >= 1");
    require(cfg.delta > 0.0, "delta", "must be positive");
    require(cfg.test_per_class >= 1, "test_per_class", "must be >= 1");
    require(cfg.domains >= 1, "domains", "must be >= 1");
    require(cfg.severity >= 0.0, "severity", "must be >= 0");
    require(cfg.norm.unmix.components >= 1, "k", "must be >= 1");
    require(cfg.norm.unmix.alpha >= 0.0 && cfg.norm.unmix.alpha < 1.0, "alpha", "must lie in [0, 1)");
    require(!(cfg.norm.unmix.components == 1 && cfg.norm.unmix.alpha > 0.0), "alpha",
            "must be 0 when k = 1");
    require(cfg.norm.unmix.tau > 0.0, "tau", "must be positive");
    require(cfg.norm.unmix.lambda >= 0.0 && cfg.norm.unmix.lambda < 1.0, "lambda",
            "must lie in [0, 1)");
    require(cfg.norm.alpha_bn >= 0.0 && cfg.norm.alpha_bn <= 1.0, "alpha_bn", "must lie in [0, 1]");
    require(cfg.norm.ema_momentum >= 0.0 && cfg.norm.ema_momentum <= 1.0, "ema_momentum",
            "must lie in [0, 1]");
}

std::map<std::string, std::string> to_key_values(const ExperimentConfig& cfg) {
    using io::format_double;
    return {
        {"scenario", std::string(to_string(cfg.scenario))},
        {"norm", std::string(to_string(cfg.norm.kind))},
        {"alpha_bn", format_double(cfg.norm.alpha_bn)},
        {"ema_momentum", format_double(cfg.norm.ema_momentum)},
        {"k", std::to_string(cfg.norm.unmix.components)},
        {"alpha", format_double(cfg.norm.unmix.alpha)},
        {"tau", format_double(cfg.norm.unmix.tau)},
        {"lambda", format_double(cfg.norm.unmix.lambda)},
        {"eps", format_double(cfg.norm.unmix.eps)},
        {"auto_momentum", yes_no(cfg.auto_momentum)},
        {"delta", format_double(cfg.delta)},
        {"iid", yes_no(cfg.iid)},
        {"batch_size", std::to_string(cfg.batch_size)},
        {"slot_size", std::to_string(cfg.slot_size)},
        {"test_per_class", std::to_string(cfg.test_per_class)},
        {"domains", std::to_string(cfg.domains)},
        {"severity", format_double(cfg.severity)},
        {"clean", yes_no(cfg.clean)},
        {"domain_seed", std::to_string(cfg.domain_seed)},
        {"seed", std::to_string(cfg.seed)},
    };
}

std::string config_hash(const ExperimentConfig& cfg) {
    std::string text;
    for (const auto& [k, v] : to_key_values(cfg)) text += k + "=" + v + "\n";
    return io::hex64(io::fnv1a(text));
}

NormConfig effective_norm(const ExperimentConfig& cfg) {
    NormConfig norm = cfg.norm;
    if (cfg.auto_momentum) {
        const double lam = momentum_lambda(cfg.batch_size);
        norm.unmix.lambda = lam;
        norm.ema_momentum = lam;
    }
    return norm;
}

std::vector<DomainShift> experiment_domains(const ExperimentConfig& cfg, std::size_t dims) {
    if (cfg.clean) return std::vector<DomainShift>(cfg.domains, DomainShift::identity(dims));
    return make_domains(cfg.domains, dims, cfg.severity, cfg.domain_seed);
}

double MetricsTrace::mean_bias(std::size_t slot, std::size_t begin, std::size_t end) const {
    end = std::min(end, records.size());
    if (begin >= end) return 0.0;
    double total = 0.0;
    for (std::size_t i = begin; i < end; ++i) total += records[i].bias_l2.at(slot);
    return total / static_cast<double>(end - begin);
}

void write_trace(std::ostream& out, const MetricsTrace& trace, bool with_timing) {
    json header = {{"format", "unmix-trace"},
                   {"version", 1},
                   {"config_hash", trace.config_hash},
                   {"code_version", trace.code_version},
                   {"config", trace.config}};
    out << header.dump() << '\n';
    for (const auto& r : trace.records) {
        json rec = {{"t", r.t},
                    {"domain", r.domain},
                    {"scenario", std::string(to_string(r.scenario))},
                    {"norm", std::string(to_string(r.norm))},
                    {"batch_error", r.batch_error},
                    {"cumulative_error", r.cumulative_error},
                    {"bias_l2", r.bias_l2}};
        if (with_timing) rec["wall_time_us"] = r.wall_time_us;
        out << rec.dump() << '\n';
    }
}

MetricsTrace read_trace(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("trace: empty input");
    const json header = json::parse(line);
    if (header.value("format", "") != "unmix-trace" || header.value("version", 0) != 1)
        throw std::runtime_error("trace: not an unmix-trace v1 stream");
    MetricsTrace trace;
    trace.config_hash = header.at("config_hash").get<std::string>();
    trace.code_version = header.at("code_version").get<std::string>();
    trace.config = header.at("config").get<std::map<std::string, std::string>>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        TraceRecord r;
        r.t = j.at("t").get<std::size_t>();
        r.domain = j.at("domain").get<long>();
        r.scenario = parse_scenario(j.at("scenario").get<std::string>());
        r.norm = parse_norm_kind(j.at("norm").get<std::string>());
        r.batch_error = j.at("batch_error").get<double>();
        r.cumulative_error = j.at("cumulative_error").get<double>();
        r.bias_l2 = j.at("bias_l2").get<std::vector<double>>();
        r.wall_time_us = j.value("wall_time_us", 0.0);
        trace.records.push_back(std::move(r));
    }
    return trace;
}

std::vector<ChannelStats> compute_true_stats(const ToyModel& model, const FeatureBatch& data) {
    NormConfig config;
    config.kind = NormKind::tbn;
    std::vector<NormState> states = make_norm_states(model, config, 0);
    std::vector<ChannelStats> stats;
    forward_eval(model, data, config, states, &stats);
    return stats;
}

void validate(const BiasOracle& oracle) {
    if (oracle.true_mean.size() != oracle.component_means.size())
        throw std::invalid_argument("BiasOracle: layer count mismatch");
    for (std::size_t j = 0; j < oracle.true_mean.size(); ++j) {
        if (oracle.component_means[j].cols() != oracle.true_mean[j].size())
            throw std::invalid_argument("BiasOracle: channel mismatch in layer " + std::to_string(j));
        if (oracle.component_means[j].rows() != oracle.schedule.cols())
            throw std::invalid_argument("BiasOracle: schedule width differs from component count");
    }
    for (std::size_t t = 0; t < oracle.schedule.rows(); ++t) {
        double total = 0.0;
        for (double h : oracle.schedule.row(t)) {
            if (h < 0.0) throw std::invalid_argument("BiasOracle: negative schedule weight");
            total += h;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw std::invalid_argument("BiasOracle: schedule row " + std::to_string(t) +
                                        " does not sum to 1");
    }
}

std::vector<std::vector<double>> tbn_bias_closed_form(const BiasOracle& oracle, std::size_t t) {
    if (t >= oracle.schedule.rows())
        throw std::out_of_range("tbn_bias_closed_form: t beyond schedule");
    auto h = oracle.schedule.row(t);
    std::vector<std::vector<double>> out;
    for (std::size_t j = 0; j < oracle.true_mean.size(); ++j) {
        std::vector<double> bias = oracle.true_mean[j];
        const Matrix& comp = oracle.component_means[j];
        for (std::size_t k = 0; k < comp.rows(); ++k)
            for (std::size_t c = 0; c < comp.cols(); ++c) bias[c] -= h[k] * comp(k, c);
        out.push_back(std::move(bias));
    }
    return out;
}

MetricsTrace run_experiment(const Checkpoint& ckpt, const ExperimentConfig& cfg) {
    validate(cfg);
    const ToyModel& model = ckpt.model;

    SynthSpec test_spec = ckpt.data;
    test_spec.per_class = cfg.test_per_class;
    test_spec.seed = mix_seed(cfg.seed, 101);
    const SynthDataset test = synth_source(test_spec);
    const std::size_t N = test.size(), B = cfg.batch_size;
    const std::size_t slot = cfg.slot_size ? cfg.slot_size : B;

    const auto domains = experiment_domains(cfg, test_spec.dims);
    const std::size_t D = domains.size();
    std::vector<FeatureBatch> shifted;
    for (std::size_t d = 0; d < D; ++d)
        shifted.push_back(apply_shift(test.samples, domains[d], mix_seed(cfg.seed, 200 + d)));

    // Bias references: per domain, or over the union of domains when mixed.
    std::vector<std::vector<ChannelStats>> truth;
    if (cfg.scenario == Scenario::mixed) {
        FeatureBatch all(N * D, test_spec.dims, test_spec.spatial);
        for (std::size_t d = 0; d < D; ++d)
            std::copy(shifted[d].data().begin(), shifted[d].data().end(),
                      all.data().begin() + static_cast<std::ptrdiff_t>(d * shifted[d].size()));
        truth.push_back(compute_true_stats(model, all));
    } else {
        for (const auto& x : shifted) truth.push_back(compute_true_stats(model, x));
    }

    const NormConfig norm = effective_norm(cfg);
    const std::uint64_t init_seed = mix_seed(cfg.seed, 400);
    const auto make_order = [&](std::uint64_t stream) {
        return cfg.iid ? shuffled_order(N, mix_seed(cfg.seed, stream))
                       : dirichlet_order(test.labels, cfg.delta, slot, mix_seed(cfg.seed, stream));
    };

    MetricsTrace trace;
    trace.config_hash = config_hash(cfg);
    trace.config = to_key_values(cfg);

    const std::size_t per_pass = (N + B - 1) / B;
    const bool mixed = cfg.scenario == Scenario::mixed;
    const std::size_t n_batches = mixed ? per_pass : D * per_pass;
    const auto schedule = schedule_domains(cfg.scenario, D, n_batches, B, mix_seed(cfg.seed, 500));

    std::vector<std::vector<std::size_t>> orders;
    if (mixed) {
        orders.push_back(make_order(300));
    } else {
        for (std::size_t d = 0; d < D; ++d) orders.push_back(make_order(300 + d));
    }

    std::vector<NormState> states = make_norm_states(model, norm, init_seed);
    std::vector<ChannelStats> estimates;
    std::vector<std::size_t> labels;
    double error_sum = 0.0;
    long current_domain = -1;

    for (std::size_t t = 0; t < n_batches; ++t) {
        const long domain = mixed ? -1 : static_cast<long>(schedule[t][0]);
        const std::size_t local = mixed ? t : t - static_cast<std::size_t>(domain) * per_pass;
        const auto& order = orders[mixed ? 0 : static_cast<std::size_t>(domain)];
        const std::size_t begin = local * B, end = std::min(N, begin + B);

        if (cfg.scenario == Scenario::single && domain != current_domain && current_domain != -1)
            states = make_norm_states(model, norm, init_seed);
        current_domain = domain;

        FeatureBatch x(end - begin, test_spec.dims, test_spec.spatial);
        labels.resize(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t src_domain = mixed ? schedule[t][i - begin] : static_cast<std::size_t>(domain);
            auto src = shifted[src_domain].sample(order[i]);
            std::copy(src.begin(), src.end(), x.sample(i - begin).begin());
            labels[i - begin] = test.labels[order[i]];
        }

        const auto start = std::chrono::steady_clock::now();
        const Matrix logits = forward_eval(model, x, norm, states, &estimates);
        const auto stop = std::chrono::steady_clock::now();

        TraceRecord rec;
        rec.t = t;
        rec.domain = domain;
        rec.scenario = cfg.scenario;
        rec.norm = cfg.norm.kind;
        rec.batch_error = error_rate(logits, labels);
        error_sum += rec.batch_error;
        rec.cumulative_error = error_sum / static_cast<double>(t + 1);
        const auto& ref = truth[mixed ? 0 : static_cast<std::size_t>(domain)];
        for (std::size_t j = 0; j < model.slots(); ++j)
            rec.bias_l2.push_back(l2_gap(estimates[j].mean, ref[j].mean));
        if (cfg.record_timing)
            rec.wall_time_us = std::chrono::duration<double, std::micro>(stop - start).count();
        trace.records.push_back(std::move(rec));
    }
    return trace;
}

BiasStudyResult run_bias_study(const BiasStudyConfig& cfg) {
    const std::size_t K = cfg.components, C = cfg.channels, B = cfg.batch_size;
    if (K == 0 || C == 0 || B == 0 || cfg.steps_per_segment == 0)
        throw std::invalid_argument("bias study: components, channels, batch_size and steps must be >= 1");
    if (!(cfg.component_std >= 0.0))
        throw std::invalid_argument("bias study: component_std must be >= 0");

    std::vector<std::vector<double>> segments = cfg.segments;
    if (segments.empty()) {
        std::vector<double> uniform(K, 1.0 / static_cast<double>(K));
        std::vector<double> one_hot(K, 0.0);
        one_hot[0] = 1.0;
        std::vector<double> skewed(K, K > 1 ? 0.3 / static_cast<double>(K - 1) : 0.0);
        skewed[0] = K > 1 ? 0.7 : 1.0;
        segments = {uniform, one_hot, skewed, uniform};
    }
    for (const auto& h : segments)
        if (h.size() != K) throw std::invalid_argument("bias study: segment weight count != components");

    Rng rng(cfg.seed);
    Rng mean_rng = rng.split(0), draw_rng = rng.split(1);

    BiasStudyResult result;
    BiasOracle& oracle = result.oracle;
    Matrix comp(K, C);
    for (auto& v : comp.data()) v = cfg.separation * mean_rng.normal();
    std::vector<double> mu_star(C, 0.0);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < C; ++c) mu_star[c] += comp(k, c) / static_cast<double>(K);
    oracle.true_mean = {mu_star};
    oracle.component_means = {comp};
    const std::size_t T = segments.size() * cfg.steps_per_segment;
    oracle.schedule = Matrix(T, K);
    for (std::size_t t = 0; t < T; ++t) {
        const auto& h = segments[t / cfg.steps_per_segment];
        std::copy(h.begin(), h.end(), oracle.schedule.row(t).begin());
    }
    validate(oracle);

    // UnMix-TNS starts from a generic prior (zero mean, variance of the
    // component-mean spread plus within-component noise).
    const double prior_var = cfg.separation * cfg.separation + cfg.component_std * cfg.component_std;
    const SourceStats prior{std::vector<double>(C, 0.0), std::vector<double>(C, prior_var),
                            std::vector<double>(C, 1.0), std::vector<double>(C, 0.0)};
    UnMixOptions options = cfg.unmix;
    if (cfg.auto_momentum) options.lambda = momentum_lambda(B);
    UnMixState state = init_unmix(prior, options, rng.split(2).seed());

    FeatureBatch x(B, C, 1);
    for (std::size_t t = 0; t < T; ++t) {
        auto h = oracle.schedule.row(t);
        for (std::size_t b = 0; b < B; ++b) {
            double u = draw_rng.uniform();
            std::size_t k = 0;
            while (k + 1 < K && u >= h[k]) u -= h[k++];
            for (std::size_t c = 0; c < C; ++c)
                x(b, c, 0) = comp(k, c) + cfg.component_std * draw_rng.normal();
        }
        BiasStudyStep step;
        step.t = t;
        step.segment = t / cfg.steps_per_segment;
        const ChannelStats measured = batch_stats(x);
        step.tbn_bias.resize(C);
        for (std::size_t c = 0; c < C; ++c) step.tbn_bias[c] = mu_star[c] - measured.mean[c];
        step.closed_form = tbn_bias_closed_form(oracle, t)[0];
        step.tbn_l2 = l2_gap(measured.mean, mu_star);
        step.unmix_l2 = l2_gap(mixture_moments(state.comp_mean, state.comp_var).mean, mu_star);
        unmix_forward_inplace(state, x, prior.gamma, prior.beta);
        result.steps.push_back(std::move(step));
    }

    const double var_within = cfg.component_std * cfg.component_std;
    const double n = static_cast<double>(cfg.steps_per_segment);
    for (std::size_t s = 0; s < segments.size(); ++s) {
        SegmentCheck check;
        check.segment = s;
        check.weights = segments[s];
        check.mean_measured.assign(C, 0.0);
        for (std::size_t i = 0; i < cfg.steps_per_segment; ++i) {
            const auto& step = result.steps[s * cfg.steps_per_segment + i];
            for (std::size_t c = 0; c < C; ++c) check.mean_measured[c] += step.tbn_bias[c] / n;
        }
        check.closed_form = result.steps[s * cfg.steps_per_segment].closed_form;
        check.standard_error.resize(C);
        for (std::size_t c = 0; c < C; ++c) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                m1 += segments[s][k] * comp(k, c);
                m2 += segments[s][k] * comp(k, c) * comp(k, c);
            }
            const double var_h = var_within + std::max(0.0, m2 - m1 * m1);
            check.standard_error[c] = std::sqrt(var_h / (static_cast<double>(B) * n));
            const double gap = std::abs(check.mean_measured[c] - check.closed_form[c]);
            const double z = check.standard_error[c] > 0.0
                                 ? gap / check.standard_error[c]
                                 : (gap > 1e-12 ? std::numeric_limits<double>::infinity() : 0.0);
            check.max_abs_z = std::max(check.max_abs_z, z);
        }
        result.segments.push_back(std::move(check));
    }
    return result;
}

void write_bias_study(std::ostream& out, const BiasStudyResult& result) {
    out << json{{"format", "unmix-bias-trace"},
                {"version", 1},
                {"code_version", kCodeVersion},
                {"true_mean", result.oracle.true_mean[0]},
                {"components", result.oracle.component_means[0].rows()}}
               .dump()
        << '\n';
    for (const auto& s : result.steps)
        out << json{{"t", s.t},
                    {"segment", s.segment},
                    {"tbn_bias", s.tbn_bias},
                    {"closed_form", s.closed_form},
                    {"tbn_l2", s.tbn_l2},
                    {"unmix_l2", s.unmix_l2}}
                   .dump()
            << '\n';
    for (const auto& c : result.segments)
        out << json{{"summary_segment", c.segment},
                    {"weights", c.weights},
                    {"mean_measured", c.mean_measured},
                    {"closed_form", c.closed_form},
                    {"standard_error", c.standard_error},
                    {"max_abs_z", c.max_abs_z}}
                   .dump()
            << '\n';
}

std::string_view to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::delta: return "delta";
        case SweepAxis::batch_size: return "batch_size";
        case SweepAxis::components: return "k";
    }
    return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view text) {
    if (text == "delta") return SweepAxis::delta;
    if (text == "batch_size" || text == "batch-size") return SweepAxis::batch_size;
    if (text == "k" || text == "K" || text == "components") return SweepAxis::components;
    throw std::invalid_argument("unknown sweep axis '" + std::string(text) +
                                "' (expected delta|batch-size|k)");
}

ExperimentConfig with_axis_value(const ExperimentConfig& base, SweepAxis axis, double value) {
    ExperimentConfig cfg = base;
    const auto as_count = [&](const char* field) {
        if (!(value >= 1.0) || value != std::floor(value))
            throw std::invalid_argument(std::string(field) + ": sweep value must be a positive integer");
        return static_cast<std::size_t>(value);
    };
    switch (axis) {
        case SweepAxis::delta: cfg.delta = value; break;
        case SweepAxis::batch_size: cfg.batch_size = as_count("batch_size"); break;
        case SweepAxis::components:
            cfg.norm.unmix.components = as_count("k");
            if (cfg.norm.unmix.components == 1) cfg.norm.unmix.alpha = 0.0;  // single component has no spread
            break;
    }
    return cfg;
}

std::vector<SweepPoint> sweep(const Checkpoint& ckpt, SweepAxis axis, std::span<const double> values,
                              const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                              std::span<const NormKind> norms) {
    std::vector<SweepPoint> points;
    for (double value : values) {
        for (std::uint64_t seed : seeds) {
            for (NormKind kind : norms) {
                ExperimentConfig cfg = with_axis_value(base, axis, value);
                cfg.seed = seed;
                cfg.norm.kind = kind;
                points.push_back(SweepPoint{axis, value, seed, kind, run_experiment(ckpt, cfg)});
            }
        }
    }
    return points;
}

void write_sweep_summary(std::ostream& out, const std::vector<SweepPoint>& points) {
    out << "# unmix-sweep v1 code_version=" << kCodeVersion << '\n';
    out << "axis,value,seed,norm,config_hash,batches,final_error,mean_bias_l2\n";
    for (const auto& p : points) {
        const auto& tr = p.trace;
        double bias = 0.0;
        std::size_t n = 0;
        for (const auto& r : tr.records)
            for (double b : r.bias_l2) {
                bias += b;
                ++n;
            }
        out << to_string(p.axis) << ',' << io::format_double(p.value) << ',' << p.seed << ','
            << to_string(p.norm) << ',' << tr.config_hash << ',' << tr.records.size() << ','
            << io::format_double(tr.final_error()) << ','
            << io::format_double(n ? bias / static_cast<double>(n) : 0.0) << '\n';
    }
}

}  // namespace unmix
