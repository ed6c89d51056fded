#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "unmix/harness.hpp"
#include "unmix/rng.hpp"

using namespace unmix;

namespace {

const Checkpoint& checkpoint() {
    static const Checkpoint ckpt = [] {
        Checkpoint c;
        const std::vector<std::size_t> widths{32, 32};
        c.model = train_source(synth_source(c.data), widths, TrainConfig{});
        return c;
    }();
    return ckpt;
}

ExperimentConfig small_config(NormKind kind) {
    ExperimentConfig cfg;
    cfg.norm.kind = kind;
    cfg.test_per_class = 256;
    return cfg;
}

}  // namespace

TEST(BiasClosedForm, UniformOneHotAndHandExample) {
    BiasOracle oracle;
    Matrix comp(2, 1);
    comp(0, 0) = 0.0;
    comp(1, 0) = 2.0;
    oracle.true_mean = {{1.0}};
    oracle.component_means = {comp};
    oracle.schedule = Matrix(3, 2);
    oracle.schedule(0, 0) = 0.5;
    oracle.schedule(0, 1) = 0.5;
    oracle.schedule(1, 0) = 1.0;
    oracle.schedule(2, 0) = 0.75;
    oracle.schedule(2, 1) = 0.25;
    EXPECT_NO_THROW(validate(oracle));
    EXPECT_DOUBLE_EQ(tbn_bias_closed_form(oracle, 0)[0][0], 0.0);
    EXPECT_DOUBLE_EQ(tbn_bias_closed_form(oracle, 1)[0][0], 1.0 - 0.0);
    // Direct evaluation: 1 - (0.75 * 0 + 0.25 * 2) = 0.5.
    EXPECT_DOUBLE_EQ(tbn_bias_closed_form(oracle, 2)[0][0], 1.0 - (0.75 * 0.0 + 0.25 * 2.0));
    EXPECT_DOUBLE_EQ(tbn_bias_closed_form(oracle, 2)[0][0], 0.5);
    EXPECT_THROW(tbn_bias_closed_form(oracle, 3), std::out_of_range);

    oracle.schedule(1, 1) = 0.5;
    EXPECT_THROW(validate(oracle), std::invalid_argument);
}

TEST(BiasStudy, MeasuredBiasMatchesClosedForm) {
    BiasStudyConfig cfg;
    auto result = run_bias_study(cfg);
    ASSERT_EQ(result.segments.size(), 4u);
    for (const auto& seg : result.segments) EXPECT_LT(seg.max_abs_z, 3.0) << "segment " << seg.segment;
    // Uniform segments: closed form is zero and the measurement agrees.
    for (std::size_t s : {0u, 3u})
        for (std::size_t c = 0; c < cfg.channels; ++c) {
            EXPECT_NEAR(result.segments[s].closed_form[c], 0.0, 1e-12);
            EXPECT_LT(std::abs(result.segments[s].mean_measured[c]),
                      3 * result.segments[s].standard_error[c]);
        }
    // One-hot segment: bias is far from zero.
    double norm = 0;
    for (double v : result.segments[1].closed_form) norm += v * v;
    EXPECT_GT(std::sqrt(norm), 0.5);
}

TEST(BiasStudy, UnMixBiasSmallerThanTbnUnderSkew) {
    auto result = run_bias_study(BiasStudyConfig{});
    const std::size_t n = 200;
    double tbn = 0, um = 0;
    for (std::size_t i = n + n / 2; i < 2 * n; ++i) {
        tbn += result.steps[i].tbn_l2;
        um += result.steps[i].unmix_l2;
    }
    EXPECT_LT(um, tbn);
}

TEST(TrueStats, DeterministicDuplicationInvariantAndNearSource) {
    const auto& ckpt = checkpoint();
    SynthSpec spec = ckpt.data;
    spec.seed = 77;
    auto ds = synth_source(spec);
    auto a = compute_true_stats(ckpt.model, ds.samples);
    EXPECT_EQ(a, compute_true_stats(ckpt.model, ds.samples));

    FeatureBatch twice(2 * ds.size(), spec.dims, spec.spatial);
    std::copy(ds.samples.data().begin(), ds.samples.data().end(), twice.data().begin());
    std::copy(ds.samples.data().begin(), ds.samples.data().end(),
              twice.data().begin() + static_cast<std::ptrdiff_t>(ds.samples.size()));
    auto b = compute_true_stats(ckpt.model, twice);
    for (std::size_t j = 0; j < a.size(); ++j)
        for (std::size_t c = 0; c < a[j].channels(); ++c) {
            EXPECT_NEAR(a[j].mean[c], b[j].mean[c], 1e-12);
            EXPECT_NEAR(a[j].var[c], b[j].var[c], 1e-10);
        }

    for (std::size_t j = 0; j < a.size(); ++j) {
        const auto& stored = ckpt.model.blocks[j].norm;
        double diff = 0, scale = 0;
        for (std::size_t c = 0; c < stored.channels(); ++c) {
            diff += std::pow(stored.mean[c] - a[j].mean[c], 2);
            scale += a[j].mean[c] * a[j].mean[c] + a[j].var[c];
        }
        EXPECT_LE(std::sqrt(diff), 0.05 * std::sqrt(scale));
    }
}

TEST(RunExperiment, SourceOnCleanStreamMatchesTestError) {
    const auto& ckpt = checkpoint();
    ExperimentConfig cfg = small_config(NormKind::source_bn);
    cfg.clean = true;
    cfg.test_per_class = 64;  // 320 samples, five full batches
    auto trace = run_experiment(ckpt, cfg);
    ASSERT_EQ(trace.records.size(), 5u);

    SynthSpec spec = ckpt.data;
    spec.per_class = 64;
    spec.seed = mix_seed(cfg.seed, 101);
    auto test = synth_source(spec);
    auto states = make_norm_states(ckpt.model, NormConfig{}, 0);
    const double direct = error_rate(forward_eval(ckpt.model, test.samples, NormConfig{}, states), test.labels);
    EXPECT_NEAR(trace.final_error(), direct, 1e-12);
    for (const auto& r : trace.records) EXPECT_EQ(r.bias_l2, trace.records[0].bias_l2);
}

TEST(RunExperiment, CumulativeErrorIsRunningMean) {
    auto trace = run_experiment(checkpoint(), small_config(NormKind::unmix_tns));
    double sum = 0;
    for (std::size_t t = 0; t < trace.records.size(); ++t) {
        const auto& r = trace.records[t];
        sum += r.batch_error;
        EXPECT_NEAR(r.cumulative_error, sum / (t + 1), 1e-12);
        EXPECT_EQ(r.t, t);
        ASSERT_EQ(r.bias_l2.size(), 2u);
        for (double b : r.bias_l2) EXPECT_GE(b, 0.0);
    }
}

TEST(RunExperiment, DeterministicTraceText) {
    for (auto kind : {NormKind::tbn, NormKind::unmix_tns, NormKind::ema_bn}) {
        auto cfg = small_config(kind);
        cfg.seed = 5;
        std::ostringstream a, b;
        write_trace(a, run_experiment(checkpoint(), cfg));
        write_trace(b, run_experiment(checkpoint(), cfg));
        EXPECT_EQ(a.str(), b.str());
    }
}

TEST(RunExperiment, UnMixBeatsTbnOnCorrelatedStream) {
    ExperimentConfig cfg;
    cfg.norm.kind = NormKind::tbn;
    const double tbn = run_experiment(checkpoint(), cfg).final_error();
    cfg.norm.kind = NormKind::unmix_tns;
    const double unmix = run_experiment(checkpoint(), cfg).final_error();
    EXPECT_LT(unmix + 0.10, tbn);
}

TEST(RunExperiment, UnMixBiasShrinksOverStream) {
    const std::size_t seeds = 5;
    std::vector<double> first(2, 0.0), last(2, 0.0);
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        ExperimentConfig cfg;
        cfg.norm.kind = NormKind::unmix_tns;
        cfg.seed = seed;
        auto trace = run_experiment(checkpoint(), cfg);
        const std::size_t T = trace.records.size(), q = T / 4;
        for (std::size_t slot = 0; slot < 2; ++slot) {
            first[slot] += trace.mean_bias(slot, 0, q) / seeds;
            last[slot] += trace.mean_bias(slot, T - q, T) / seeds;
        }
        EXPECT_LT(trace.mean_bias(0, T - q, T), trace.mean_bias(0, 0, q)) << "seed " << seed;
    }
    for (std::size_t slot = 0; slot < 2; ++slot) EXPECT_LT(last[slot], first[slot]) << "slot " << slot;
}

TEST(RunExperiment, ScenariosShapeTheStream) {
    const auto& ckpt = checkpoint();
    auto cfg = small_config(NormKind::unmix_tns);
    cfg.domains = 3;
    cfg.scenario = Scenario::continual;
    auto cont = run_experiment(ckpt, cfg);
    const std::size_t per = (5 * 256 + 63) / 64;
    ASSERT_EQ(cont.records.size(), 3 * per);
    for (std::size_t t = 0; t < cont.records.size(); ++t) EXPECT_EQ(cont.records[t].domain, static_cast<long>(t / per));

    cfg.scenario = Scenario::single;
    auto single = run_experiment(ckpt, cfg);
    // Reset at the boundary: the second domain starts from the initial state,
    // so its first batch differs from the continual run's.
    EXPECT_EQ(single.records[0].batch_error, cont.records[0].batch_error);
    EXPECT_EQ(single.records[0].bias_l2, cont.records[0].bias_l2);
    EXPECT_NE(single.records[per].bias_l2, cont.records[per].bias_l2);

    cfg.scenario = Scenario::mixed;
    auto mixed = run_experiment(ckpt, cfg);
    ASSERT_EQ(mixed.records.size(), per);
    for (const auto& r : mixed.records) EXPECT_EQ(r.domain, -1);
}

TEST(RunExperiment, ConfigValidationNamesField) {
    auto expect_field = [](ExperimentConfig cfg, const std::string& field) {
        try {
            run_experiment(checkpoint(), cfg);
            ADD_FAILURE() << "no error for " << field;
        } catch (const std::invalid_argument& e) {
            EXPECT_EQ(std::string(e.what()).rfind(field + ":", 0), 0u) << e.what();
        }
    };
    ExperimentConfig cfg;
    cfg.batch_size = 0;
    expect_field(cfg, "batch_size");
    cfg = {};
    cfg.delta = 0;
    expect_field(cfg, "delta");
    cfg = {};
    cfg.norm.unmix.tau = -1;
    expect_field(cfg, "tau");
    cfg = {};
    cfg.norm.unmix.components = 1;
    expect_field(cfg, "alpha");
    cfg = {};
    cfg.norm.alpha_bn = 2;
    expect_field(cfg, "alpha_bn");
}

TEST(Trace, RoundTripIsLossless) {
    auto cfg = small_config(NormKind::unmix_tns);
    cfg.record_timing = true;
    auto trace = run_experiment(checkpoint(), cfg);
    std::stringstream ss;
    write_trace(ss, trace, true);
    EXPECT_EQ(read_trace(ss), trace);

    std::stringstream plain;
    write_trace(plain, trace, false);
    auto back = read_trace(plain);
    ASSERT_EQ(back.records.size(), trace.records.size());
    EXPECT_EQ(back.records[3].bias_l2, trace.records[3].bias_l2);
    EXPECT_EQ(back.records[3].wall_time_us, 0.0);
    EXPECT_EQ(back.config_hash, config_hash(cfg));

    std::stringstream bad("{\"format\":\"other\",\"version\":1}\n");
    EXPECT_THROW(read_trace(bad), std::runtime_error);
}

TEST(Trace, HashTracksConfig) {
    ExperimentConfig a, b;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.seed = 1;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Sweep, SingleValueEqualsDirectRun) {
    auto base = small_config(NormKind::unmix_tns);
    const std::vector<double> values{16};
    const std::vector<std::uint64_t> seeds{3};
    const std::vector<NormKind> norms{NormKind::unmix_tns};
    auto points = sweep(checkpoint(), SweepAxis::batch_size, values, base, seeds, norms);
    ASSERT_EQ(points.size(), 1u);
    auto direct = base;
    direct.batch_size = 16;
    direct.seed = 3;
    EXPECT_EQ(points[0].trace, run_experiment(checkpoint(), direct));

    std::ostringstream csv;
    write_sweep_summary(csv, points);
    EXPECT_EQ(csv.str().rfind("# unmix-sweep v1", 0), 0u);
    EXPECT_THROW(with_axis_value(base, SweepAxis::components, 2.5), std::invalid_argument);
    EXPECT_EQ(with_axis_value(base, SweepAxis::components, 1).norm.unmix.alpha, 0.0);
    EXPECT_EQ(with_axis_value(base, SweepAxis::components, 4).norm.unmix.alpha, base.norm.unmix.alpha);
    EXPECT_EQ(parse_sweep_axis("batch-size"), SweepAxis::batch_size);
    EXPECT_THROW(parse_sweep_axis("tau"), std::invalid_argument);
}

TEST(Sweep, TbnErrorFallsAsDeltaGrows) {
    ExperimentConfig base;
    base.norm.kind = NormKind::tbn;
    const std::vector<double> deltas{0.01, 0.1, 1.0, 100.0};
    const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    const std::vector<NormKind> norms{NormKind::tbn};
    auto points = sweep(checkpoint(), SweepAxis::delta, deltas, base, seeds, norms);
    std::vector<double> mean(deltas.size(), 0.0);
    for (const auto& p : points)
        for (std::size_t i = 0; i < deltas.size(); ++i)
            if (p.value == deltas[i]) mean[i] += p.trace.final_error() / seeds.size();
    for (std::size_t i = 1; i < mean.size(); ++i) EXPECT_LE(mean[i], mean[i - 1]) << "delta " << deltas[i];
}
