// Command-line front end: train-source, run, bias-trace, sweep.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unmix/harness.hpp"
#include "unmix/toynet.hpp"

namespace {

using namespace unmix;

/// Flag-level mirror of ExperimentConfig, filled by CLI11.
struct RunFlags {
    std::string scenario = "single";
    std::string norm = "unmix";
    std::size_t k = 16;
    double alpha = 0.5;
    double tau = 0.07;
    double lambda = -1.0;  // < 0: follow the batch-size schedule
    double alpha_bn = 0.5;
    double ema_momentum = -1.0;
    double delta = 0.1;
    bool iid = false;
    std::size_t batch_size = 64;
    std::size_t slot_size = 0;
    std::size_t test_per_class = 2000;
    std::size_t domains = 1;
    double severity = 1.0;
    bool clean = false;
    std::uint64_t domain_seed = 7;
    std::uint64_t seed = 0;
    std::string model;
    std::string out;

    ExperimentConfig to_config() const {
        ExperimentConfig cfg;
        cfg.scenario = parse_scenario(scenario);
        cfg.norm.kind = parse_norm_kind(norm);
        cfg.norm.unmix.components = k;
        cfg.norm.unmix.alpha = alpha;
        cfg.norm.unmix.tau = tau;
        cfg.norm.alpha_bn = alpha_bn;
        cfg.auto_momentum = lambda < 0.0 && ema_momentum < 0.0;
        if (lambda >= 0.0) cfg.norm.unmix.lambda = lambda;
        if (ema_momentum >= 0.0) cfg.norm.ema_momentum = ema_momentum;
        if (!cfg.auto_momentum) {
            // One explicit value fixes the other kind's momentum too.
            if (lambda < 0.0) cfg.norm.unmix.lambda = momentum_lambda(batch_size);
            if (ema_momentum < 0.0) cfg.norm.ema_momentum = momentum_lambda(batch_size);
        }
        cfg.delta = delta;
        cfg.iid = iid;
        cfg.batch_size = batch_size;
        cfg.slot_size = slot_size;
        cfg.test_per_class = test_per_class;
        cfg.domains = domains;
        cfg.severity = severity;
        cfg.clean = clean;
        cfg.domain_seed = domain_seed;
        cfg.seed = seed;
        return cfg;
    }
};

void add_run_options(CLI::App* app, RunFlags& f, bool need_out) {
    app->add_option("--model", f.model, "Checkpoint written by train-source")->required();
    app->add_option("--scenario", f.scenario, "single|continual|mixed")
        ->check(CLI::IsMember({"single", "continual", "mixed"}));
    app->add_option("--norm", f.norm, "source|tbn|alpha-bn|ema-bn|unmix")
        ->check(CLI::IsMember({"source", "tbn", "alpha-bn", "ema-bn", "unmix"}));
    app->add_option("--k", f.k, "UnMix-TNS components");
    app->add_option("--alpha", f.alpha, "UnMix-TNS component spread at init");
    app->add_option("--tau", f.tau, "Softmax temperature");
    app->add_option("--lambda", f.lambda, "Fixed component momentum (default: batch-size schedule)");
    app->add_option("--alpha-bn", f.alpha_bn, "Source/batch blend for alpha-bn");
    app->add_option("--ema-momentum", f.ema_momentum, "Fixed EMA-BN momentum");
    app->add_option("--delta", f.delta, "Dirichlet concentration");
    app->add_flag("--iid", f.iid, "Uniformly shuffled stream instead of Dirichlet order");
    app->add_option("--batch-size", f.batch_size);
    app->add_option("--slot-size", f.slot_size, "Dirichlet slot length (0 = batch size)");
    app->add_option("--test-per-class", f.test_per_class);
    app->add_option("--domains", f.domains, "Number of shifted test domains");
    app->add_option("--severity", f.severity, "Shift magnitude");
    app->add_flag("--clean", f.clean, "Evaluate on the unshifted source distribution");
    app->add_option("--domain-seed", f.domain_seed);
    app->add_option("--seed", f.seed);
    auto* out = app->add_option("--out", f.out, "Output path");
    if (need_out) out->required();
    app->add_option("--config")->description("Flat key=value file; flags override it");
}

/// Appends `--key value` for config-file entries not given on the command line.
std::vector<std::string> merge_config(CLI::App& app, std::vector<std::string> args) {
    if (args.empty()) return args;
    CLI::App* sub = nullptr;
    try {
        sub = app.get_subcommand(args[0]);
    } catch (const CLI::OptionNotFound&) {
        return args;
    }
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    std::set<std::string> given;
    for (const auto& a : args)
        if (a.rfind("--", 0) == 0) given.insert(a.substr(0, a.find('=')));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
        const auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
            return s;
        };
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        std::replace(key.begin(), key.end(), '_', '-');
        const std::string flag = "--" + key;
        if (given.count(flag)) continue;
        const CLI::Option* opt = sub->get_option_no_throw(flag);
        if (!opt || flag == "--config")
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (opt->get_expected_max() == 0) {
            if (value == "true" || value == "1") args.push_back(flag);
            else if (value != "false" && value != "0")
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": '" + key +
                                         "' expects true or false");
        } else {
            args.push_back(flag);
            args.push_back(value);
        }
    }
    return args;
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::istringstream is(item);
        T v{};
        if (!(is >> v)) throw std::invalid_argument(std::string(what) + ": bad entry '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument(std::string(what) + ": empty list");
    return out;
}

Checkpoint load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model '" + path + "'");
    return load_checkpoint(in);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"UnMix-TNS test-time normalization simulator"};
    app.require_subcommand(1);

    // train-source
    SynthSpec data;
    TrainConfig train;
    std::string widths_text = "32,32", train_out;
    auto* train_cmd = app.add_subcommand("train-source", "Train the source classifier and write a checkpoint");
    train_cmd->add_option("--classes", data.classes);
    train_cmd->add_option("--dims", data.dims);
    train_cmd->add_option("--spatial", data.spatial);
    train_cmd->add_option("--per-class", data.per_class);
    train_cmd->add_option("--spread", data.spread);
    train_cmd->add_option("--separation", data.separation);
    train_cmd->add_option("--widths", widths_text, "Comma-separated hidden widths");
    train_cmd->add_option("--epochs", train.epochs);
    train_cmd->add_option("--lr", train.learning_rate);
    train_cmd->add_option("--train-batch", train.batch_size);
    train_cmd->add_option("--bn-momentum", train.bn_momentum);
    train_cmd->add_option("--min-accuracy", train.min_accuracy);
    train_cmd->add_option("--seed", data.seed);
    train_cmd->add_option("--out", train_out)->required();
    train_cmd->add_option("--config")->description("Flat key=value file; flags override it");

    RunFlags run_flags;
    bool record_timing = false;
    auto* run_cmd = app.add_subcommand("run", "Online evaluation of one normalizer; writes a trace");
    add_run_options(run_cmd, run_flags, true);
    run_cmd->add_flag("--record-timing", record_timing, "Include per-batch wall time in the trace");

    BiasStudyConfig bias;
    std::string bias_out;
    auto* bias_cmd = app.add_subcommand("bias-trace", "Controlled component-schedule bias study");
    bias_cmd->add_option("--components", bias.components, "Components of the true mixture");
    bias_cmd->add_option("--channels", bias.channels);
    bias_cmd->add_option("--batch-size", bias.batch_size);
    bias_cmd->add_option("--steps", bias.steps_per_segment, "Batches per schedule segment");
    bias_cmd->add_option("--separation", bias.separation);
    bias_cmd->add_option("--k", bias.unmix.components);
    bias_cmd->add_option("--alpha", bias.unmix.alpha);
    bias_cmd->add_option("--tau", bias.unmix.tau);
    bias_cmd->add_option("--seed", bias.seed);
    bias_cmd->add_option("--out", bias_out)->required();
    bias_cmd->add_option("--config")->description("Flat key=value file; flags override it");

    RunFlags sweep_flags;
    std::string axis_text, values_text, seeds_text = "0", norms_text = "tbn,unmix", trace_dir;
    auto* sweep_cmd = app.add_subcommand("sweep", "Ablation grid over delta, batch size or K");
    add_run_options(sweep_cmd, sweep_flags, true);
    sweep_cmd->add_option("--axis", axis_text, "delta|batch-size|k")->required();
    sweep_cmd->add_option("--values", values_text, "Comma-separated axis values")->required();
    sweep_cmd->add_option("--seeds", seeds_text, "Comma-separated seeds");
    sweep_cmd->add_option("--norms", norms_text, "Comma-separated normalizers");
    sweep_cmd->add_option("--trace-dir", trace_dir, "Also write every trace into this directory");

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = merge_config(app, std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*train_cmd) {
            const auto widths = parse_list<std::size_t>(widths_text, "--widths");
            train.seed = data.seed;
            const SynthDataset ds = synth_source(data);
            Checkpoint ckpt{train_source(ds, widths, train), data};
            auto out = open_out(train_out);
            save_checkpoint(out, ckpt);
            std::vector<NormState> states = make_norm_states(ckpt.model, NormConfig{}, 0);
            const double err = error_rate(forward_eval(ckpt.model, ds.samples, NormConfig{}, states), ds.labels);
            std::cout << "trained " << ckpt.model.slots() << " blocks; training error " << err << '\n';
        } else if (*run_cmd) {
            ExperimentConfig cfg = run_flags.to_config();
            cfg.record_timing = record_timing;
            const MetricsTrace trace = run_experiment(load_model(run_flags.model), cfg);
            auto out = open_out(run_flags.out);
            write_trace(out, trace, record_timing);
            std::cout << to_string(cfg.norm.kind) << " final cumulative error "
                      << trace.final_error() << " over " << trace.records.size() << " batches\n";
        } else if (*bias_cmd) {
            const BiasStudyResult result = run_bias_study(bias);
            auto out = open_out(bias_out);
            write_bias_study(out, result);
            for (const auto& s : result.segments)
                std::cout << "segment " << s.segment << " max |z| " << s.max_abs_z << '\n';
        } else if (*sweep_cmd) {
            const ExperimentConfig base = sweep_flags.to_config();
            const SweepAxis axis = parse_sweep_axis(axis_text);
            const auto values = parse_list<double>(values_text, "--values");
            const auto seeds = parse_list<std::uint64_t>(seeds_text, "--seeds");
            std::vector<NormKind> norms;
            std::stringstream ss(norms_text);
            for (std::string item; std::getline(ss, item, ',');) norms.push_back(parse_norm_kind(item));
            const auto points = sweep(load_model(sweep_flags.model), axis, values, base, seeds, norms);
            auto out = open_out(sweep_flags.out);
            write_sweep_summary(out, points);
            if (!trace_dir.empty()) {
                std::filesystem::create_directories(trace_dir);
                for (const auto& p : points) {
                    std::ostringstream name;
                    name << to_string(axis) << '-' << p.value << "-seed" << p.seed << '-'
                         << to_string(p.norm) << ".jsonl";
                    auto tf = open_out((std::filesystem::path(trace_dir) / name.str()).string());
                    write_trace(tf, p.trace);
                }
            }
            write_sweep_summary(std::cout, points);
        }
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
