// Python bindings for the core operations; arrays are float64 numpy.

#include <fstream>
#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "unmix/harness.hpp"

namespace py = pybind11;
using namespace unmix;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

FeatureBatch to_batch(const Array& a) {
    if (a.ndim() != 3) throw std::invalid_argument("expected a (B, C, L) array");
    return FeatureBatch(a.shape(0), a.shape(1), a.shape(2), std::vector<double>(a.data(), a.data() + a.size()));
}

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    Matrix m(a.shape(0), a.shape(1));
    std::copy(a.data(), a.data() + a.size(), m.data().begin());
    return m;
}

std::vector<double> to_vector(const Array& a) {
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
    return {a.data(), a.data() + a.size()};
}

Array from_batch(const FeatureBatch& x) {
    Array out({x.batch(), x.channels(), x.length()});
    std::copy(x.data().begin(), x.data().end(), out.mutable_data());
    return out;
}

Array from_matrix(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

Array from_vector(const std::vector<double>& v) {
    Array out(v.size());
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::tuple from_stats(const ChannelStats& s) { return py::make_tuple(from_vector(s.mean), from_vector(s.var)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "UnMix-TNS test-time normalization core";

    m.def("instance_stats", [](const Array& x) {
        auto s = instance_stats(to_batch(x));
        return py::make_tuple(from_matrix(s.mean), from_matrix(s.var));
    }, py::arg("x"), "Per-(b, c) mean and population variance over the spatial axis.");
    m.def("batch_stats", [](const Array& x) { return from_stats(batch_stats(to_batch(x))); }, py::arg("x"));
    m.def("mixture_moments", [](const Array& means, const Array& vars, std::optional<Array> weights) {
        if (!weights) return from_stats(mixture_moments(to_matrix(means), to_matrix(vars)));
        return from_stats(mixture_moments(to_matrix(means), to_matrix(vars), to_vector(*weights)));
    }, py::arg("means"), py::arg("vars"), py::arg("weights") = py::none());
    m.def("cosine_sim", [](const Array& u, const Array& v) { return cosine_sim(to_vector(u), to_vector(v)); },
          py::arg("u"), py::arg("v"));
    m.def("assignment_probs", [](const Array& sims, double tau) {
        return from_matrix(assignment_probs(to_matrix(sims), tau).probs);
    }, py::arg("sims"), py::arg("tau"));
    m.def("momentum_lambda", &momentum_lambda, py::arg("batch_size"), py::arg("reference_batch") = 64,
          py::arg("reference_lambda") = 0.1);

    py::class_<SourceStats>(m, "SourceStats")
        .def(py::init([](const Array& mean, const Array& var, std::optional<Array> gamma, std::optional<Array> beta) {
            SourceStats s{to_vector(mean), to_vector(var), {}, {}};
            s.gamma = gamma ? to_vector(*gamma) : std::vector<double>(s.mean.size(), 1.0);
            s.beta = beta ? to_vector(*beta) : std::vector<double>(s.mean.size(), 0.0);
            validate(s);
            return s;
        }), py::arg("mean"), py::arg("var"), py::arg("gamma") = py::none(), py::arg("beta") = py::none())
        .def_property_readonly("mean", [](const SourceStats& s) { return from_vector(s.mean); })
        .def_property_readonly("var", [](const SourceStats& s) { return from_vector(s.var); })
        .def_property_readonly("gamma", [](const SourceStats& s) { return from_vector(s.gamma); })
        .def_property_readonly("beta", [](const SourceStats& s) { return from_vector(s.beta); });

    py::class_<UnMixState>(m, "UnMixState")
        .def_property_readonly("comp_mean", [](const UnMixState& s) { return from_matrix(s.comp_mean); })
        .def_property_readonly("comp_var", [](const UnMixState& s) { return from_matrix(s.comp_var); })
        .def_readonly("components", &UnMixState::components)
        .def_readonly("alpha", &UnMixState::alpha)
        .def_readonly("tau", &UnMixState::tau)
        .def_readonly("lam", &UnMixState::lambda)
        .def("__eq__", [](const UnMixState& a, const UnMixState& b) { return a == b; });

    m.def("init_unmix", [](const SourceStats& src, std::size_t components, double alpha, double tau, double lam,
                           std::uint64_t seed) {
        UnMixOptions o;
        o.components = components;
        o.alpha = alpha;
        o.tau = tau;
        o.lambda = lam;
        return init_unmix(src, o, seed);
    }, py::arg("src"), py::arg("components") = 16, py::arg("alpha") = 0.5, py::arg("tau") = 0.07,
       py::arg("lam") = 0.1, py::arg("seed") = 0);
    m.def("unmix_forward", [](const UnMixState& state, const Array& x, const Array& gamma, const Array& beta) {
        auto step = unmix_forward(state, to_batch(x), to_vector(gamma), to_vector(beta));
        return py::make_tuple(from_batch(step.output), std::move(step.state));
    }, py::arg("state"), py::arg("x"), py::arg("gamma"), py::arg("beta"),
       "Returns (output, advanced_state); the input state is unchanged.");
    m.def("tbn_forward", [](const Array& x, const Array& gamma, const Array& beta) {
        return from_batch(tbn_forward(to_batch(x), to_vector(gamma), to_vector(beta)));
    }, py::arg("x"), py::arg("gamma"), py::arg("beta"));
    m.def("source_bn_forward", [](const Array& x, const SourceStats& src) {
        return from_batch(source_bn_forward(to_batch(x), src));
    }, py::arg("x"), py::arg("src"));
    m.def("alpha_bn_forward", [](const Array& x, const SourceStats& src, double alpha_bn) {
        return from_batch(alpha_bn_forward(to_batch(x), src, alpha_bn));
    }, py::arg("x"), py::arg("src"), py::arg("alpha_bn"));
    m.def("dirichlet_order", [](const std::vector<std::size_t>& labels, double delta, std::size_t slot_size,
                                std::uint64_t seed) { return dirichlet_order(labels, delta, slot_size, seed); },
          py::arg("labels"), py::arg("delta"), py::arg("slot_size"), py::arg("seed"));

    py::class_<Checkpoint>(m, "Checkpoint")
        .def("save", [](const Checkpoint& c, const std::string& path) {
            std::ofstream out(path);
            if (!out) throw std::runtime_error("cannot write '" + path + "'");
            save_checkpoint(out, c);
        }, py::arg("path"))
        .def("__eq__", [](const Checkpoint& a, const Checkpoint& b) { return a == b; });
    m.def("load_checkpoint", [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open '" + path + "'");
        return load_checkpoint(in);
    }, py::arg("path"));
    m.def("train_source", [](std::size_t per_class, std::size_t epochs, std::vector<std::size_t> widths,
                             std::uint64_t seed) {
        Checkpoint c;
        c.data.per_class = per_class;
        c.data.seed = seed;
        TrainConfig t;
        t.epochs = epochs;
        t.seed = seed;
        c.model = train_source(synth_source(c.data), widths, t);
        return c;
    }, py::arg("per_class") = 1000, py::arg("epochs") = 30, py::arg("widths") = std::vector<std::size_t>{32, 32},
       py::arg("seed") = 0, py::call_guard<py::gil_scoped_release>());
    m.def("run_experiment", [](const Checkpoint& ckpt, const std::string& norm, const std::string& scenario,
                               double delta, std::size_t batch_size, std::size_t components, bool iid,
                               std::size_t test_per_class, std::size_t domains, std::uint64_t seed) {
        ExperimentConfig cfg;
        cfg.norm.kind = parse_norm_kind(norm);
        cfg.scenario = parse_scenario(scenario);
        cfg.delta = delta;
        cfg.batch_size = batch_size;
        cfg.norm.unmix.components = components;
        if (components == 1) cfg.norm.unmix.alpha = 0.0;
        cfg.iid = iid;
        cfg.test_per_class = test_per_class;
        cfg.domains = domains;
        cfg.seed = seed;
        MetricsTrace trace;
        {
            py::gil_scoped_release release;
            trace = run_experiment(ckpt, cfg);
        }
        std::vector<double> batch_error, cumulative;
        std::vector<long> domain;
        for (const auto& r : trace.records) {
            batch_error.push_back(r.batch_error);
            cumulative.push_back(r.cumulative_error);
            domain.push_back(r.domain);
        }
        std::ostringstream text;
        write_trace(text, trace);
        py::dict out;
        out["final_error"] = trace.final_error();
        out["batch_error"] = from_vector(batch_error);
        out["cumulative_error"] = from_vector(cumulative);
        out["domain"] = domain;
        out["config_hash"] = trace.config_hash;
        out["trace"] = text.str();
        return out;
    }, py::arg("checkpoint"), py::arg("norm") = "unmix", py::arg("scenario") = "single", py::arg("delta") = 0.1,
       py::arg("batch_size") = 64, py::arg("components") = 16, py::arg("iid") = false,
       py::arg("test_per_class") = 2000, py::arg("domains") = 1, py::arg("seed") = 0,
       "Online run; returns final error, per-batch arrays and the JSONL trace text.");
}
