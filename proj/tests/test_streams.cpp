#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "unmix/io.hpp"
#include "unmix/streams.hpp"

using namespace unmix;

namespace {

std::vector<std::size_t> balanced_labels(std::size_t M, std::size_t per_class) {
    std::vector<std::size_t> labels;
    for (std::size_t m = 0; m < M; ++m) labels.insert(labels.end(), per_class, m);
    return labels;
}

std::vector<std::vector<double>> slot_histograms(const std::vector<std::size_t>& order,
                                                 const std::vector<std::size_t>& labels,
                                                 std::size_t M, std::size_t slot) {
    std::vector<std::vector<double>> out;
    for (std::size_t s = 0; s + slot <= order.size(); s += slot) {
        std::vector<double> h(M, 0.0);
        for (std::size_t i = s; i < s + slot; ++i) h[labels[order[i]]] += 1.0;
        out.push_back(std::move(h));
    }
    return out;
}

double mean_tv(double delta, std::size_t seeds) {
    const std::size_t M = 10, slot = 64;
    auto labels = balanced_labels(M, 640);
    double total = 0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        auto order = dirichlet_order(labels, delta, slot, seed);
        for (auto& h : slot_histograms(order, labels, M, slot)) {
            double tv = 0;
            for (double c : h) tv += std::abs(c / slot - 1.0 / M);
            total += 0.5 * tv;
            ++n;
        }
    }
    return total / n;
}

}  // namespace

TEST(SynthSource, ZeroSpreadSamplesSitOnClassMeans) {
    SynthSpec spec;
    spec.classes = 2;
    spec.spread = 0.0;
    spec.per_class = 20;
    auto ds = synth_source(spec);
    ASSERT_EQ(ds.size(), 40u);
    for (std::size_t n = 0; n < ds.size(); ++n)
        for (std::size_t c = 0; c < spec.dims; ++c)
            for (double v : ds.samples.map(n, c)) EXPECT_EQ(v, ds.class_means(ds.labels[n], c));
}

TEST(SynthSource, EmpiricalClassMeans) {
    SynthSpec spec;
    spec.per_class = 10000;
    spec.seed = 3;
    auto ds = synth_source(spec);
    const double n = static_cast<double>(spec.per_class * spec.spatial);
    for (std::size_t m = 0; m < spec.classes; ++m)
        for (std::size_t c = 0; c < spec.dims; ++c) {
            double s = 0;
            for (std::size_t i = 0; i < ds.size(); ++i)
                if (ds.labels[i] == m)
                    for (double v : ds.samples.map(i, c)) s += v;
            EXPECT_NEAR(s / n, ds.class_means(m, c), 3 * spec.spread / std::sqrt(n));
        }
}

TEST(SynthSource, DeterministicAndCircleLayout) {
    SynthSpec spec;
    spec.per_class = 10;
    auto a = synth_source(spec), b = synth_source(spec);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.labels, b.labels);

    spec.classes = 12;
    spec.dims = 3;
    auto ds = synth_source(spec);
    for (std::size_t m = 0; m < 12; ++m)
        EXPECT_NEAR(std::hypot(ds.class_means(m, 0), ds.class_means(m, 1)), spec.separation, 1e-12);
    spec.classes = 1;
    EXPECT_THROW(synth_source(spec), std::invalid_argument);
}

TEST(ApplyShift, IdentityIsExact) {
    SynthSpec spec;
    spec.per_class = 5;
    auto ds = synth_source(spec);
    auto y = apply_shift(ds.samples, DomainShift::identity(spec.dims), 1);
    EXPECT_EQ(y, ds.samples);
}

TEST(ApplyShift, ScaleOnly) {
    FeatureBatch x(1, 1, 2, std::vector<double>{1.0, -1.0});
    DomainShift s{{2.0}, {0.0}, 0.0, "scale"};
    auto y = apply_shift(x, s, 0);
    EXPECT_EQ(y(0, 0, 0), 2.0);
    EXPECT_EQ(y(0, 0, 1), -2.0);
}

TEST(ApplyShift, NoiseStd) {
    FeatureBatch x(100000, 1, 1, 0.5);
    DomainShift s{{1.0}, {0.0}, 0.1, "noise"};
    auto y = apply_shift(x, s, 4);
    double sq = 0;
    for (double v : y.data()) sq += (v - 0.5) * (v - 0.5);
    EXPECT_NEAR(std::sqrt(sq / y.size()), 0.1, 0.002);
}

TEST(ApplyShift, RejectsBadShift) {
    FeatureBatch x(1, 2, 1, 1.0);
    DomainShift wrong{{1.0}, {0.0}, 0.0, "short"};
    EXPECT_THROW(apply_shift(x, wrong, 0), std::invalid_argument);
    DomainShift neg{{1.0, -1.0}, {0.0, 0.0}, 0.0, "neg"};
    EXPECT_THROW(apply_shift(x, neg, 0), std::invalid_argument);
}

TEST(MakeDomains, DeterministicAndPositiveScale) {
    auto a = make_domains(3, 8, 1.0, 7), b = make_domains(3, 8, 1.0, 7);
    EXPECT_EQ(a, b);
    for (auto& d : a) {
        for (double s : d.scale) EXPECT_GT(s, 0.0);
        EXPECT_GT(d.noise_std, 0.0);
    }
    EXPECT_NE(a[0], a[1]);
    auto clean = make_domains(1, 8, 0.0, 7)[0];
    EXPECT_EQ(clean.scale, DomainShift::identity(8).scale);
    EXPECT_EQ(clean.offset, DomainShift::identity(8).offset);
}

TEST(DirichletOrder, IsPermutation) {
    std::vector<std::size_t> labels{0, 1, 1, 2, 0, 2, 2, 2, 1, 0, 3};
    for (double delta : {0.01, 0.1, 1.0, 1e6})
        for (std::size_t slot : {1u, 3u, 64u}) {
            auto order = dirichlet_order(labels, delta, slot, 5);
            std::sort(order.begin(), order.end());
            std::vector<std::size_t> want(labels.size());
            std::iota(want.begin(), want.end(), 0);
            EXPECT_EQ(order, want);
        }
}

TEST(DirichletOrder, LargeDeltaSlotsLookUniform) {
    // Pool depletion skews the last few slots; a long stream keeps that tail small.
    const std::size_t M = 10, slot = 100;
    auto labels = balanced_labels(M, 10000);
    std::size_t pass = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto order = dirichlet_order(labels, 1e6, slot, seed);
        for (auto& h : slot_histograms(order, labels, M, slot)) {
            double chi2 = 0;
            const double e = static_cast<double>(slot) / M;
            for (double c : h) chi2 += (c - e) * (c - e) / e;
            pass += chi2 < 21.666;  // 99th percentile, 9 degrees of freedom
            ++total;
        }
    }
    EXPECT_GE(static_cast<double>(pass) / total, 0.95);
}

TEST(DirichletOrder, SmallDeltaClumpsClasses) {
    const std::size_t M = 10, slot = 64;
    auto labels = balanced_labels(M, 640);
    double total = 0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto order = dirichlet_order(labels, 0.01, slot, seed);
        for (auto& h : slot_histograms(order, labels, M, slot)) {
            double H = 0;
            for (double c : h)
                if (c > 0) H -= (c / slot) * std::log(c / slot);
            total += H / std::log(static_cast<double>(M));
            ++n;
        }
    }
    EXPECT_LT(total / n, 0.5);
}

TEST(DirichletOrder, TotalVariationDecreasesWithDelta) {
    const double tiny = mean_tv(0.01, 5), mid = mean_tv(1.0, 5), huge = mean_tv(1e6, 5);
    EXPECT_GT(tiny, mid);
    EXPECT_GT(mid, huge);
}

TEST(DirichletOrder, DeterministicAndValidated) {
    auto labels = balanced_labels(4, 50);
    EXPECT_EQ(dirichlet_order(labels, 0.1, 8, 3), dirichlet_order(labels, 0.1, 8, 3));
    EXPECT_NE(dirichlet_order(labels, 0.1, 8, 3), dirichlet_order(labels, 0.1, 8, 4));
    EXPECT_THROW(dirichlet_order(labels, 0.0, 8, 0), std::invalid_argument);
    EXPECT_THROW(dirichlet_order(labels, -1.0, 8, 0), std::invalid_argument);
    EXPECT_THROW(dirichlet_order(labels, 0.1, 0, 0), std::invalid_argument);
    EXPECT_TRUE(dirichlet_order({}, 0.1, 8, 0).empty());
}

TEST(ShuffledOrder, IsPermutation) {
    auto order = shuffled_order(1000, 2);
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 1000; ++i) EXPECT_EQ(sorted[i], i);
    EXPECT_NE(order, sorted);
}

TEST(ScheduleDomains, SingleAndContinual) {
    auto single = schedule_domains(Scenario::single, 1, 10, 4, 0);
    ASSERT_EQ(single.size(), 10u);
    for (auto& b : single)
        for (auto d : b) EXPECT_EQ(d, 0u);

    auto cont = schedule_domains(Scenario::continual, 3, 9, 2, 0);
    for (std::size_t t = 0; t < 9; ++t)
        for (auto d : cont[t]) EXPECT_EQ(d, t / 3);
}

TEST(ScheduleDomains, MixedFrequencies) {
    auto mixed = schedule_domains(Scenario::mixed, 3, 100, 100, 9);
    std::vector<double> count(3, 0.0);
    bool some_batch_mixed = false;
    for (auto& b : mixed) {
        for (auto d : b) count[d] += 1;
        some_batch_mixed |= std::any_of(b.begin(), b.end(), [&](std::size_t d) { return d != b[0]; });
    }
    for (double c : count) EXPECT_NEAR(c / 10000.0, 1.0 / 3.0, 0.02);
    EXPECT_TRUE(some_batch_mixed);
}

TEST(ScheduleDomains, ScenarioNames) {
    for (auto s : {Scenario::single, Scenario::continual, Scenario::mixed})
        EXPECT_EQ(parse_scenario(to_string(s)), s);
    EXPECT_THROW(parse_scenario("episodic"), std::invalid_argument);
    EXPECT_THROW(schedule_domains(Scenario::single, 0, 3, 1, 0), std::invalid_argument);
}

TEST(StreamFormats, DatasetRoundTrip) {
    SynthSpec spec;
    spec.per_class = 7;
    spec.seed = 12;
    auto ds = synth_source(spec);
    std::stringstream ss;
    write_dataset(ss, ds);
    EXPECT_EQ(ss.str().rfind("unmix-dataset v1", 0), 0u);
    auto back = read_dataset(ss);
    EXPECT_EQ(back.samples, ds.samples);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.class_means, ds.class_means);
    EXPECT_EQ(back.class_vars, ds.class_vars);
}

TEST(StreamFormats, OrderRoundTripAndBadHeader) {
    auto order = dirichlet_order(balanced_labels(3, 10), 0.1, 4, 1);
    std::stringstream ss;
    write_order(ss, order);
    EXPECT_EQ(read_order(ss), order);

    std::stringstream bad("unmix-order v9\n");
    EXPECT_THROW(read_order(bad), std::runtime_error);
    std::stringstream wrong("something else\n");
    EXPECT_THROW(read_order(wrong), std::runtime_error);
}

TEST(Io, DoubleTextIsLossless) {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, 5e-324, 0.0})
        EXPECT_EQ(io::parse_double(io::format_double(v)), v);
    EXPECT_THROW(io::parse_double("abc"), std::invalid_argument);
    EXPECT_EQ(io::fnv1a(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(io::hex64(0xabcull), "0000000000000abc");
}
