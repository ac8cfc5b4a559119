#pragma once

// splitquant command-line front end. `run_cli` is kept separate from main()
// so the test suite can drive every subcommand in-process.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "splitquant/splitquant.hpp"

namespace splitquant::cli {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kArgument = 2,
    kIo = 3,
    kParse = 4,
    kValidation = 5,
    kNumeric = 6,
};

inline constexpr const char *kExitCodeHelp =
    "Exit codes: 0 success, 1 internal error, 2 argument error, 3 I/O error,\n"
    "            4 model/dataset parse error, 5 graph validation error,\n"
    "            6 numeric degeneracy (non-finite outputs)";

/// JSON config files: top-level keys are option names; nested objects
/// address subcommands, e.g. {"experiment": {"seeds": [1, 2], "bits": [2]}}.
class JsonConfig : public CLI::Config {
  public:
    std::string to_config(const CLI::App *app, bool default_also, bool, std::string) const override {
        nlohmann::json j = nlohmann::json::object();
        for (const CLI::Option *opt : app->get_options({})) {
            if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
            const std::string name = opt->get_lnames().front();
            if (opt->count() > 0) {
                auto res = opt->results();
                j[name] = res.size() == 1 ? nlohmann::json(res.front()) : nlohmann::json(res);
            } else if (default_also && !opt->get_default_str().empty()) {
                j[name] = opt->get_default_str();
            }
        }
        return j.dump(2);
    }

    std::vector<CLI::ConfigItem> from_config(std::istream &input) const override {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(input);
        } catch (const nlohmann::json::exception &e) {
            throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
        }
        std::vector<CLI::ConfigItem> items;
        collect(j, {}, items);
        return items;
    }

  private:
    static std::string scalar(const nlohmann::json &v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static void collect(const nlohmann::json &j, std::vector<std::string> parents, std::vector<CLI::ConfigItem> &items) {
        if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
        for (const auto &[key, v] : j.items()) {
            if (v.is_object()) {
                auto sub = parents;
                sub.push_back(key);
                collect(v, sub, items);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (v.is_array())
                for (const auto &e : v) item.inputs.push_back(scalar(e));
            else
                item.inputs.push_back(scalar(v));
            items.push_back(std::move(item));
        }
    }
};

struct QuantFlags {
    int bits = 8;
    bool symmetric = false;
    std::string act_calib = "minmax";
    double percentile = 99.0;
    bool weights_only = false;

    QuantConfig to_config() const {
        QuantConfig c = QuantConfig::for_bits(bits);
        c.symmetric = symmetric;
        if (act_calib == "minmax")
            c.activation_calibration = CalibMethod::MinMax;
        else if (act_calib == "percentile")
            c.activation_calibration = CalibMethod::Percentile;
        else
            throw ArgumentError("--act-calib must be 'minmax' or 'percentile'");
        if (!(percentile > 50.0 && percentile <= 100.0)) throw ArgumentError("--percentile must be in (50, 100]");
        c.percentile = percentile;
        c.weights_only = weights_only;
        return c;
    }
};

struct DataFlags {
    std::string dataset;
    std::optional<std::uint64_t> teacher_seed;
    std::size_t samples = 500;
    std::string calib_dataset;
    std::size_t calib_samples = 64;
};

inline void add_data_flags(CLI::App *cmd, DataFlags &d) {
    auto *ds = cmd->add_option("--dataset", d.dataset, "Labelled dataset manifest (sqd-1)");
    auto *ts = cmd->add_option("--teacher-seed", d.teacher_seed,
                               "Generate a teacher-labelled dataset from the model with this seed");
    ds->excludes(ts);
    cmd->add_option("--samples", d.samples, "Samples for the generated dataset")->capture_default_str();
    cmd->add_option("--calib-dataset", d.calib_dataset, "Calibration dataset manifest (features only are used)");
    cmd->add_option("--calib-samples", d.calib_samples,
                    "Generated calibration samples when no --calib-dataset is given")
        ->capture_default_str();
}

inline void add_quant_flags(CLI::App *cmd, QuantFlags &q) {
    cmd->add_option("--bits", q.bits, "Integer bit-width: 2, 4 or 8")->capture_default_str();
    cmd->add_flag("--symmetric", q.symmetric, "Symmetric quantization (zero-point 0)");
    cmd->add_option("--act-calib", q.act_calib, "Activation calibration: minmax | percentile")->capture_default_str();
    cmd->add_option("--percentile", q.percentile, "Percentile for --act-calib percentile")->capture_default_str();
    cmd->add_flag("--weights-only", q.weights_only, "Quantize weights and biases only");
}

inline LabeledDataset resolve_dataset(const Graph &g, const DataFlags &d) {
    if (!d.dataset.empty()) return load_dataset(d.dataset);
    return generate_teacher_dataset(g, d.teacher_seed.value_or(0), d.samples);
}

inline std::vector<Tensor> resolve_calibration(const Graph &g, const DataFlags &d) {
    if (!d.calib_dataset.empty()) return load_dataset(d.calib_dataset).features;
    if (d.calib_samples == 0) return {};
    return generate_teacher_dataset(g, d.teacher_seed.value_or(0) + 1, d.calib_samples).features;
}

inline Graph load_valid_model(const std::string &path) {
    Graph g = load_model(path);
    if (auto diags = validate(g); !diags.empty())
        throw GraphError(diags.front().node, "model failed validation (" + diags.front().rule + "): " +
                                                 diags.front().message);
    return g;
}

inline void require_finite(const std::vector<ExecResult> &outs) {
    for (const auto &o : outs)
        for (const auto &t : o.values)
            for (float v : t.values())
                if (!std::isfinite(v)) throw NumericError("non-finite value in model output");
}

inline nlohmann::json data_echo(const DataFlags &d, const LabeledDataset &ds) {
    return {{"dataset", ds.source}, {"samples", ds.size()}, {"calib_dataset", d.calib_dataset},
            {"calib_samples", d.calib_samples}};
}

/// Evaluate `g` on the resolved dataset; FP32 when `quant` is empty.
inline EvalReport evaluate(const Graph &g, const DataFlags &d, const std::optional<QuantConfig> &quant,
                           Graph *quantized_out = nullptr) {
    const LabeledDataset ds = resolve_dataset(g, d);
    if (ds.size() == 0) throw ArgumentError("dataset is empty");
    const auto eval_in = detail::as_inputs(g, ds.features);
    const auto reference = run_fp32(g, eval_in);
    require_finite(reference);
    EvalReport rep;
    rep.seed = d.teacher_seed.value_or(0);
    if (!quant) {
        rep.mode = "fp32";
        rep.config = {{"data", data_echo(d, ds)}};
        rep.accuracy = accuracy_of(reference, ds.labels);
        return rep;
    }
    const auto calib_features = quant->weights_only ? std::vector<Tensor>{} : resolve_calibration(g, d);
    const auto calib_in = detail::as_inputs(g, calib_features);
    const auto run = fake_quant_run(g, *quant, calib_in, eval_in);
    require_finite(run.outputs);
    rep.mode = "quant";
    rep.config = {{"quant", to_json(*quant)}, {"data", data_echo(d, ds)}};
    rep.layers = layer_entries(run.records);
    rep.error = output_error(reference, run.outputs);
    rep.accuracy = accuracy_of(run.outputs, ds.labels);
    if (quantized_out) *quantized_out = run.quantized_graph;
    return rep;
}

inline std::vector<std::string> split_list(const std::string &s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

struct ExperimentRow {
    std::uint64_t seed;
    int bits;
    ExperimentResult result;
};

inline void print_table(std::ostream &out, const std::vector<int> &bits, const std::vector<ExperimentRow> &rows,
                        bool per_seed) {
    out << std::fixed << std::setprecision(4);
    if (per_seed) {
        out << "seed\tbits\tacc_fp32\tacc_baseline\tacc_splitquant\tdiff\tmse_baseline\tmse_splitquant\n";
        for (const auto &r : rows)
            out << r.seed << '\t' << r.bits << '\t' << r.result.acc_fp32 << '\t' << r.result.acc_baseline << '\t'
                << r.result.acc_splitquant << '\t' << r.result.acc_splitquant - r.result.acc_baseline << '\t'
                << std::scientific << r.result.mse_baseline << '\t' << r.result.mse_splitquant << std::fixed << '\n';
        out << '\n';
    }
    out << "bits\tacc_fp32\tacc_baseline\tacc_splitquant\tdiff\n";
    for (int b : bits) {
        double fp = 0, base = 0, sq = 0;
        std::size_t n = 0;
        for (const auto &r : rows)
            if (r.bits == b) {
                fp += r.result.acc_fp32;
                base += r.result.acc_baseline;
                sq += r.result.acc_splitquant;
                ++n;
            }
        const double k = static_cast<double>(n);
        out << b << '\t' << fp / k << '\t' << base / k << '\t' << sq / k << '\t' << (sq - base) / k << '\n';
    }
}

/// Runs one CLI invocation. `args` excludes the program name.
inline int run_cli(std::vector<std::string> args, std::ostream &out, std::ostream &err) {
    CLI::App app{"splitquant: layer-splitting preprocessing and quantization simulation", "splitquant"};
    app.footer(kExitCodeHelp);
    app.require_subcommand(1);
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON config file (keys mirror long option names)");

    // transform
    std::string model_in, model_out;
    TransformConfig tcfg;
    bool transform_weights_only = false;
    auto *transform = app.add_subcommand("transform", "Split layers; writes the rewritten model and prints a report");
    transform->add_option("--model", model_in, "Input model manifest")->required();
    transform->add_option("--out", model_out, "Output model manifest")->required();
    transform->add_flag("--split-weights,!--no-split-weights", tcfg.split_weights, "Split Linear/Conv2d layers");
    transform->add_flag("--split-activations,!--no-split-activations", tcfg.split_activations,
                        "Split ReLU/GELU layers");
    transform->add_flag("--fold-bn,!--no-fold-bn", tcfg.fold_batchnorm, "Fold BatchNorm into preceding layers");
    transform->add_flag("--weights-only", transform_weights_only, "Weight-only target: implies --no-split-activations");
    transform->add_option("--seed", tcfg.kmeans_seed, "k-means seed")->capture_default_str();

    // quantize / eval
    std::string q_model, q_out;
    DataFlags q_data;
    QuantFlags q_flags;
    auto *quantize = app.add_subcommand("quantize", "Fake-quantize a model and print an evaluation report");
    quantize->add_option("--model", q_model, "Model manifest")->required();
    quantize->add_option("--out", q_out, "Write the model with fake-quantized weights here");
    add_data_flags(quantize, q_data);
    add_quant_flags(quantize, q_flags);

    std::string e_model;
    DataFlags e_data;
    QuantFlags e_flags;
    bool e_fp32 = false;
    auto *eval = app.add_subcommand("eval", "Evaluate a model (FP32 or fake-quantized) and print a report");
    eval->add_option("--model", e_model, "Model manifest")->required();
    eval->add_flag("--fp32", e_fp32, "Skip quantization");
    add_data_flags(eval, e_data);
    add_quant_flags(eval, e_flags);

    // experiment
    std::string seeds_arg = "0", bits_arg = "2,4,8";
    ExperimentConfig xcfg;
    bool per_seed = false, x_json = false;
    auto *experiment = app.add_subcommand("experiment", "Baseline vs split A/B table over seeds and bit-widths");
    experiment->add_option("--seeds", seeds_arg, "Comma-separated seeds")->capture_default_str();
    experiment->add_option("--bits", bits_arg, "Comma-separated bit-widths")->capture_default_str();
    experiment->add_flag("--weights-only", xcfg.weights_only, "Weight-only quantization (no activation splits)");
    experiment->add_option("--depth", xcfg.depth, "MLP depth")->capture_default_str();
    experiment->add_option("--width", xcfg.width, "MLP width")->capture_default_str();
    experiment->add_option("--outlier-fraction", xcfg.outlier_fraction, "Fraction of weights scaled")
        ->capture_default_str();
    experiment->add_option("--outlier-scale", xcfg.outlier_scale, "Outlier multiplier")->capture_default_str();
    experiment->add_option("--samples", xcfg.eval_samples, "Evaluation samples")->capture_default_str();
    experiment->add_option("--calib-samples", xcfg.calib_samples, "Calibration samples")->capture_default_str();
    experiment->add_flag("--per-seed", per_seed, "Also print per-seed rows");
    experiment->add_flag("--json", x_json, "Emit JSON (rows and per-run reports) instead of a table");

    // inspect
    std::string i_model;
    auto *inspect = app.add_subcommand("inspect", "Print model structure, parameter ranges and diagnostics");
    inspect->add_option("--model", i_model, "Model manifest")->required();

    // generate
    std::string g_out, g_dataset;
    std::uint64_t g_seed = 0;
    std::size_t g_depth = 3, g_width = 64, g_samples = 500;
    double g_frac = 0.01, g_scale = 50.0;
    auto *generate = app.add_subcommand("generate", "Write a seeded outlier MLP (and optionally a teacher dataset)");
    generate->add_option("--out", g_out, "Output model manifest")->required();
    generate->add_option("--seed", g_seed)->capture_default_str();
    generate->add_option("--depth", g_depth)->capture_default_str();
    generate->add_option("--width", g_width)->capture_default_str();
    generate->add_option("--outlier-fraction", g_frac)->capture_default_str();
    generate->add_option("--outlier-scale", g_scale)->capture_default_str();
    generate->add_option("--dataset-out", g_dataset, "Also write a teacher-labelled dataset here");
    generate->add_option("--samples", g_samples, "Dataset size")->capture_default_str();

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kArgument;
    }

    try {
        if (transform->parsed()) {
            if (transform_weights_only) tcfg.split_activations = false;
            const Graph g = load_valid_model(model_in);
            const TransformResult res = apply_splitquant(g, tcfg);
            save_model(res.graph, model_out);
            out << transform_report(res, tcfg).dump(2) << '\n';
        } else if (quantize->parsed()) {
            const Graph g = load_valid_model(q_model);
            Graph quantized;
            const EvalReport rep = evaluate(g, q_data, q_flags.to_config(), &quantized);
            if (!q_out.empty()) save_model(quantized, q_out);
            out << to_json(rep).dump(2) << '\n';
        } else if (eval->parsed()) {
            const Graph g = load_valid_model(e_model);
            std::optional<QuantConfig> qc;
            if (!e_fp32) qc = e_flags.to_config();
            out << to_json(evaluate(g, e_data, qc)).dump(2) << '\n';
        } else if (experiment->parsed()) {
            std::vector<std::uint64_t> seeds;
            std::vector<int> bits;
            try {
                for (const auto &s : split_list(seeds_arg)) seeds.push_back(std::stoull(s));
                for (const auto &b : split_list(bits_arg)) bits.push_back(std::stoi(b));
            } catch (const std::logic_error &) {
                throw ArgumentError("--seeds/--bits must be comma-separated integers");
            }
            if (seeds.empty()) throw ArgumentError("--seeds is empty");
            if (bits.empty()) throw ArgumentError("--bits is empty");
            for (int b : bits) QuantConfig::for_bits(b);
            std::vector<ExperimentRow> rows;
            for (auto s : seeds)
                for (int b : bits) {
                    ExperimentConfig c = xcfg;
                    c.seed = s;
                    c.bits = b;
                    rows.push_back({s, b, run_experiment(c)});
                }
            if (x_json) {
                nlohmann::json j = nlohmann::json::array();
                for (const auto &r : rows)
                    j.push_back({{"seed", r.seed},
                                 {"bits", r.bits},
                                 {"acc_fp32", r.result.acc_fp32},
                                 {"acc_baseline", r.result.acc_baseline},
                                 {"acc_splitquant", r.result.acc_splitquant},
                                 {"mse_baseline", r.result.mse_baseline},
                                 {"mse_splitquant", r.result.mse_splitquant},
                                 {"baseline_report", to_json(r.result.baseline)},
                                 {"splitquant_report", to_json(r.result.splitquant)}});
                out << j.dump(2) << '\n';
            } else {
                print_table(out, bits, rows, per_seed);
            }
        } else if (inspect->parsed()) {
            const Graph g = load_model(i_model);
            const auto diags = validate(g);
            nlohmann::json layers = nlohmann::json::array();
            for (const auto &l : g.layers) {
                nlohmann::json lj{{"id", l.id}, {"kind", std::string(kind_name(l.kind))}, {"inputs", l.inputs}};
                for (const auto &[name, t] : l.params)
                    lj["params"][name] = {{"shape", t.shape()}, {"range", to_json(ValueRange::of(t.values()))}};
                if (l.generated) lj["generated"] = true;
                layers.push_back(std::move(lj));
            }
            nlohmann::json dj = nlohmann::json::array();
            for (const auto &d : diags) dj.push_back({{"node", d.node}, {"rule", d.rule}, {"message", d.message}});
            nlohmann::json inputs = nlohmann::json::array();
            for (const auto &in : g.inputs) inputs.push_back({{"name", in.name}, {"shape", in.shape}});
            out << nlohmann::json{{"inputs", inputs}, {"outputs", g.outputs}, {"layers", layers}, {"diagnostics", dj}}
                       .dump(2)
                << '\n';
            if (!diags.empty()) return kValidation;
        } else if (generate->parsed()) {
            const Graph g = generate_outlier_mlp(g_seed, g_depth, g_width, g_frac, g_scale);
            save_model(g, g_out);
            if (!g_dataset.empty()) save_dataset(generate_teacher_dataset(g, g_seed + 1, g_samples), g_dataset);
        }
    } catch (const IoError &e) {
        err << "error: " << e.what() << '\n';
        return kIo;
    } catch (const FormatError &e) {
        err << "error: " << e.what() << '\n';
        return kParse;
    } catch (const GraphError &e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const NumericError &e) {
        err << "error: " << e.what() << '\n';
        return kNumeric;
    } catch (const ArgumentError &e) {
        err << "error: " << e.what() << '\n';
        return kArgument;
    } catch (const CalibrationError &e) {
        err << "error: " << e.what() << '\n';
        return kArgument;
    } catch (const DimensionError &e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const std::exception &e) {
        err << "internal error: " << e.what() << '\n';
        return kInternal;
    }
    return kOk;
}

}  // namespace splitquant::cli
