#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitquant/model_io.hpp"
#include "splitquant/quant.hpp"
#include "splitquant/transform.hpp"

namespace splitquant {

struct ErrorMetrics {
    double mse = 0.0;
    double max_abs = 0.0;
    std::optional<double> sqnr_db;  // absent when the error power is zero
};

/// Pooled over every element of every tensor pair.
inline ErrorMetrics output_error(std::span<const Tensor> reference, std::span<const Tensor> candidate) {
    if (reference.size() != candidate.size())
        throw DimensionError("output_error: " + std::to_string(reference.size()) + " reference tensors vs " +
                             std::to_string(candidate.size()) + " candidates");
    ErrorMetrics m;
    double signal = 0.0, noise = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < reference.size(); ++t) {
        const Tensor &r = reference[t];
        const Tensor &c = candidate[t];
        if (r.shape() != c.shape())
            throw DimensionError("output_error shape mismatch: " + to_string(r.shape()) + " vs " + to_string(c.shape()));
        for (std::size_t i = 0; i < r.size(); ++i) {
            const double d = static_cast<double>(r[i]) - static_cast<double>(c[i]);
            signal += static_cast<double>(r[i]) * static_cast<double>(r[i]);
            noise += d * d;
            m.max_abs = std::max(m.max_abs, std::abs(d));
        }
        count += r.size();
    }
    m.mse = count ? noise / static_cast<double>(count) : 0.0;
    if (noise > 0.0) m.sqnr_db = 10.0 * std::log10(signal / noise);
    return m;
}

inline ErrorMetrics output_error(const std::vector<ExecResult> &reference, const std::vector<ExecResult> &candidate) {
    std::vector<Tensor> r, c;
    for (const auto &e : reference) r.insert(r.end(), e.values.begin(), e.values.end());
    for (const auto &e : candidate) c.insert(c.end(), e.values.begin(), e.values.end());
    return output_error(std::span<const Tensor>(r), std::span<const Tensor>(c));
}

struct LabeledDataset {
    std::vector<Tensor> features;
    std::vector<int> labels;
    int num_classes = 0;
    std::string source;

    std::size_t size() const { return features.size(); }
};

/// Index of the largest element; ties resolve to the lowest index.
inline int argmax(const Tensor &t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.size(); ++i)
        if (t[i] > t[best]) best = i;
    return static_cast<int>(best);
}

namespace detail {

inline const std::string &single_input(const Graph &g) {
    if (g.inputs.size() != 1) throw ArgumentError("classifier graph must have exactly one input");
    return g.inputs[0].name;
}

inline std::vector<NamedTensors> as_inputs(const Graph &g, std::span<const Tensor> features) {
    const std::string &name = single_input(g);
    std::vector<NamedTensors> out;
    out.reserve(features.size());
    for (const auto &f : features) out.push_back({{name, f}});
    return out;
}

inline void check_classifier_output(const ExecResult &r) {
    if (r.values.size() != 1 || r.values[0].rank() != 1)
        throw DimensionError("classifier graph must produce one rank-1 logit vector");
}

}  // namespace detail

inline double accuracy_of(const std::vector<ExecResult> &outputs, std::span<const int> labels) {
    if (outputs.empty()) throw ArgumentError("accuracy over an empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        detail::check_classifier_output(outputs[i]);
        correct += argmax(outputs[i].values[0]) == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(outputs.size());
}

inline std::vector<ExecResult> run_fp32(const Graph &g, std::span<const NamedTensors> inputs) {
    std::vector<ExecResult> out;
    out.reserve(inputs.size());
    for (const auto &in : inputs) out.push_back(execute(g, in));
    return out;
}

/// Quantization setup for accuracy(); absent means FP32.
struct QuantSetup {
    QuantConfig config;
    std::vector<Tensor> calibration;
};

/// Argmax classification accuracy of `g` on `d`.
inline double accuracy(const Graph &g, const LabeledDataset &d, const std::optional<QuantSetup> &quant = std::nullopt) {
    if (d.size() == 0) throw ArgumentError("accuracy over an empty dataset");
    const auto eval = detail::as_inputs(g, d.features);
    if (!quant) return accuracy_of(run_fp32(g, eval), d.labels);
    const auto calib = detail::as_inputs(g, quant->calibration);
    return accuracy_of(fake_quant_execute(g, quant->config, calib, eval), d.labels);
}

/// Linear/GELU MLP: `depth` Linear layers of width x width (standard-normal
/// weights and biases), GELU between them, logits = last Linear. In each
/// weight matrix exactly floor(outlier_fraction * numel) seeded positions are
/// multiplied by `outlier_scale`.
inline Graph generate_outlier_mlp(std::uint64_t seed, std::size_t depth, std::size_t width, double outlier_fraction,
                                  double outlier_scale) {
    if (depth < 1 || depth > 6) throw ArgumentError("depth must be in [1, 6]");
    if (width < 1) throw ArgumentError("width must be >= 1");
    if (!(outlier_fraction >= 0.0 && outlier_fraction <= 0.1)) throw ArgumentError("outlier_fraction must be in [0, 0.1]");
    if (!std::isfinite(outlier_scale)) throw ArgumentError("outlier_scale must be finite");

    std::mt19937_64 rng(detail::mix_seed(seed));
    std::normal_distribution<float> normal(0.0f, 1.0f);
    Graph g;
    g.inputs.push_back({"x", {width}});
    std::string prev = "x";
    for (std::size_t d = 0; d < depth; ++d) {
        Layer fc;
        fc.id = "fc" + std::to_string(d);
        fc.kind = LayerKind::Linear;
        fc.inputs = {prev};
        Tensor w({width, width});
        for (auto &v : w.values()) v = normal(rng);
        const auto n_out = static_cast<std::size_t>(std::floor(outlier_fraction * static_cast<double>(w.size())));
        std::vector<std::size_t> idx(w.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < n_out; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
            w[idx[i]] = static_cast<float>(w[idx[i]] * outlier_scale);
        }
        Tensor b({width});
        for (auto &v : b.values()) v = normal(rng);
        fc.params.emplace("weight", std::move(w));
        fc.params.emplace("bias", std::move(b));
        prev = fc.id;
        g.layers.push_back(std::move(fc));
        if (d + 1 < depth) {
            Layer act;
            act.id = "act" + std::to_string(d);
            act.kind = LayerKind::GELU;
            act.inputs = {prev};
            prev = act.id;
            g.layers.push_back(std::move(act));
        }
    }
    g.outputs = {prev};
    return g;
}

/// Standard-normal inputs labelled by the FP32 argmax of `g` itself.
inline LabeledDataset generate_teacher_dataset(const Graph &g, std::uint64_t seed, std::size_t n_samples) {
    if (n_samples == 0) throw ArgumentError("n_samples must be >= 1");
    const std::string &name = detail::single_input(g);
    const Shape shape = g.inputs[0].shape;
    std::mt19937_64 rng(detail::mix_seed(seed ^ 0x5eedda7aull));
    std::normal_distribution<float> normal(0.0f, 1.0f);
    LabeledDataset d;
    d.source = "teacher:seed=" + std::to_string(seed);
    for (std::size_t i = 0; i < n_samples; ++i) {
        Tensor x(shape);
        for (auto &v : x.values()) v = normal(rng);
        const auto out = execute(g, {{name, x}});
        detail::check_classifier_output(out);
        d.num_classes = static_cast<int>(out.values[0].size());
        d.labels.push_back(argmax(out.values[0]));
        d.features.push_back(std::move(x));
    }
    return d;
}

// Dataset fixture: "sqd-1" manifest + blob, reusing the model tensor directory.
inline constexpr const char *kDatasetFormatVersion = "sqd-1";

inline void save_dataset(const LabeledDataset &d, const std::filesystem::path &path) {
    io::BlobWriter blob;
    for (std::size_t i = 0; i < d.features.size(); ++i) blob.add("features/" + std::to_string(i), d.features[i]);
    const auto blob_path = io::blob_path_for(path);
    io::json doc{{"format", kDatasetFormatVersion}, {"blob", blob_path.filename().string()},
                 {"num_classes", d.num_classes},    {"source", d.source},
                 {"labels", d.labels},              {"tensors", blob.directory()}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << doc.dump(2) << '\n';
    blob.write(blob_path);
}

inline LabeledDataset load_dataset(const std::filesystem::path &path) {
    const io::json doc = io::read_manifest(path, kDatasetFormatVersion);
    LabeledDataset d;
    try {
        io::BlobReader blob(doc.at("tensors"), io::read_bytes(path.parent_path() / doc.at("blob").get<std::string>()));
        d.labels = doc.at("labels").get<std::vector<int>>();
        d.num_classes = doc.at("num_classes").get<int>();
        d.source = doc.value("source", path.string());
        for (std::size_t i = 0; i < d.labels.size(); ++i) d.features.push_back(blob.get("features/" + std::to_string(i)));
    } catch (const io::json::exception &e) {
        throw ManifestParseError(path.string() + ": " + e.what());
    }
    for (int l : d.labels)
        if (l < 0 || l >= d.num_classes) throw ManifestParseError(path.string() + ": label outside class count");
    return d;
}

struct LayerReportEntry {
    std::string layer_id;
    TensorRole role = TensorRole::Weight;
    double range_width = 0.0;
    float scale = 1.0f;
    std::int32_t zero_point = 0;
    bool degenerate = false;
    // split weight branches only
    std::optional<double> cluster_range_width;
    std::optional<double> materialized_range_width;
    std::optional<double> original_range_width;
};

struct EvalReport {
    std::string mode;  // "fp32" or "quant"
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::vector<LayerReportEntry> layers;
    std::optional<ErrorMetrics> error;
    std::optional<double> accuracy;
};

/// Per-tensor scale report, cross-referenced with split plans when present.
inline std::vector<LayerReportEntry> layer_entries(const std::vector<TensorQuantRecord> &records,
                                                   const std::vector<SplitPlan> &plans = {}) {
    std::map<std::string, std::pair<const SplitPlan *, const SplitBranch *>> branches;
    for (const auto &p : plans)
        if (p.mode == SplitMode::WeightCluster)
            for (const auto &b : p.branches) branches[b.layer_id] = {&p, &b};
    std::vector<LayerReportEntry> out;
    for (const auto &r : records) {
        LayerReportEntry e{r.layer_id, r.role, r.range.width(), r.params.scale, r.params.zero_point, r.params.degenerate,
                           {}, {}, {}};
        if (r.role != TensorRole::Activation)
            if (auto it = branches.find(r.layer_id); it != branches.end()) {
                e.cluster_range_width = it->second.second->cluster_range.width();
                e.materialized_range_width = r.range.width();
                e.original_range_width = it->second.first->original_range.width();
            }
        out.push_back(std::move(e));
    }
    return out;
}

inline nlohmann::json to_json(const ErrorMetrics &m) {
    nlohmann::json j{{"mse", m.mse}, {"max_abs", m.max_abs}};
    j["sqnr_db"] = m.sqnr_db ? nlohmann::json(*m.sqnr_db) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json to_json(const EvalReport &r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto &e : r.layers) {
        nlohmann::json j{{"layer", e.layer_id},
                         {"role", std::string(role_name(e.role))},
                         {"range_width", e.range_width},
                         {"scale", e.scale},
                         {"zero_point", e.zero_point},
                         {"degenerate", e.degenerate}};
        if (e.cluster_range_width) j["cluster_range_width"] = *e.cluster_range_width;
        if (e.materialized_range_width) j["materialized_range_width"] = *e.materialized_range_width;
        if (e.original_range_width) j["original_range_width"] = *e.original_range_width;
        layers.push_back(std::move(j));
    }
    nlohmann::json j{{"mode", r.mode}, {"config", r.config}, {"seed", r.seed}, {"layers", layers}};
    j["error"] = r.error ? to_json(*r.error) : nlohmann::json(nullptr);
    j["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json to_json(const QuantConfig &c) {
    return {{"bits", c.bits},
            {"qmin", c.range.qmin},
            {"qmax", c.range.qmax},
            {"symmetric", c.symmetric},
            {"activation_calibration", c.activation_calibration == CalibMethod::MinMax ? "minmax" : "percentile"},
            {"percentile", c.percentile},
            {"weights_only", c.weights_only}};
}

inline nlohmann::json to_json(const TransformConfig &c) {
    return {{"split_weights", c.split_weights},
            {"split_activations", c.split_activations},
            {"fold_batchnorm", c.fold_batchnorm},
            {"kmeans_seed", c.kmeans_seed}};
}

inline nlohmann::json to_json(const ValueRange &r) { return {{"min", r.min}, {"max", r.max}, {"width", r.width()}}; }

/// Transform report: one entry per applied plan plus skip diagnostics.
inline nlohmann::json transform_report(const TransformResult &t, const TransformConfig &cfg) {
    nlohmann::json plans = nlohmann::json::array();
    for (const auto &p : t.plans) {
        nlohmann::json j{{"layer", p.target}, {"mode", std::string(mode_name(p.mode))}, {"combined", p.combined_id}};
        nlohmann::json branches = nlohmann::json::array();
        if (p.mode == SplitMode::WeightCluster) {
            j["k"] = p.assignment.k;
            j["centroids"] = p.assignment.centroids;
            j["objective"] = p.assignment.objective;
            j["original_range"] = to_json(p.original_range);
            for (const auto &b : p.branches) {
                nlohmann::json bj{{"layer", b.layer_id},
                                  {"owned_scalars", b.owned_scalars},
                                  {"cluster_range", to_json(b.cluster_range)},
                                  {"materialized_weight_range", to_json(b.weight_range)}};
                bj["materialized_bias_range"] = b.bias_range ? to_json(*b.bias_range) : nlohmann::json(nullptr);
                branches.push_back(std::move(bj));
            }
        } else {
            j["chunks"] = p.chunks;
            for (const auto &b : p.branches)
                branches.push_back({{"layer", b.layer_id}, {"start", b.chunk_start}, {"length", b.chunk_length}});
        }
        j["branches"] = branches;
        plans.push_back(std::move(j));
    }
    nlohmann::json diags = nlohmann::json::array();
    for (const auto &d : t.diagnostics) diags.push_back({{"node", d.node}, {"rule", d.rule}, {"message", d.message}});
    return {{"config", to_json(cfg)}, {"plans", plans}, {"diagnostics", diags}};
}

struct ExperimentConfig {
    std::uint64_t seed = 0;
    int bits = 2;
    bool weights_only = false;
    std::size_t depth = 3;
    std::size_t width = 64;
    double outlier_fraction = 0.01;
    double outlier_scale = 50.0;
    std::size_t eval_samples = 500;
    std::size_t calib_samples = 64;
};

inline nlohmann::json to_json(const ExperimentConfig &c) {
    return {{"seed", c.seed},
            {"bits", c.bits},
            {"weights_only", c.weights_only},
            {"depth", c.depth},
            {"width", c.width},
            {"outlier_fraction", c.outlier_fraction},
            {"outlier_scale", c.outlier_scale},
            {"eval_samples", c.eval_samples},
            {"calib_samples", c.calib_samples}};
}

struct ExperimentResult {
    double acc_fp32 = 0.0;
    double acc_baseline = 0.0;
    double acc_splitquant = 0.0;
    double acc_splitquant_fp32 = 0.0;  // transformed graph, no quantization
    double mse_baseline = 0.0;
    double mse_splitquant = 0.0;
    EvalReport baseline;
    EvalReport splitquant;
};

/// A/B run on a seeded outlier MLP: FP32 vs fake-quantized baseline vs
/// fake-quantized after the split transform, on the same teacher-labelled
/// evaluation set and the same calibration inputs.
inline ExperimentResult run_experiment(const ExperimentConfig &cfg) {
    const Graph g = generate_outlier_mlp(cfg.seed, cfg.depth, cfg.width, cfg.outlier_fraction, cfg.outlier_scale);
    const LabeledDataset eval = generate_teacher_dataset(g, detail::mix_seed(cfg.seed) + 1, cfg.eval_samples);
    const LabeledDataset calib = generate_teacher_dataset(g, detail::mix_seed(cfg.seed) + 2, cfg.calib_samples);

    TransformConfig tcfg;
    tcfg.split_activations = !cfg.weights_only;
    tcfg.kmeans_seed = cfg.seed;
    const TransformResult split = apply_splitquant(g, tcfg);

    QuantConfig qcfg = QuantConfig::for_bits(cfg.bits);
    qcfg.weights_only = cfg.weights_only;

    const auto eval_in = detail::as_inputs(g, eval.features);
    const auto calib_in = detail::as_inputs(g, calib.features);
    const auto reference = run_fp32(g, eval_in);
    const auto base = fake_quant_run(g, qcfg, calib_in, eval_in);
    const auto sq = fake_quant_run(split.graph, qcfg, calib_in, eval_in);

    ExperimentResult r;
    r.acc_fp32 = accuracy_of(reference, eval.labels);
    r.acc_splitquant_fp32 = accuracy_of(run_fp32(split.graph, eval_in), eval.labels);
    r.acc_baseline = accuracy_of(base.outputs, eval.labels);
    r.acc_splitquant = accuracy_of(sq.outputs, eval.labels);
    const ErrorMetrics eb = output_error(reference, base.outputs);
    const ErrorMetrics es = output_error(reference, sq.outputs);
    r.mse_baseline = eb.mse;
    r.mse_splitquant = es.mse;

    const nlohmann::json echo{{"experiment", to_json(cfg)}, {"quant", to_json(qcfg)}, {"transform", to_json(tcfg)}};
    r.baseline = {"quant", echo, cfg.seed, layer_entries(base.records), eb, r.acc_baseline};
    r.splitquant = {"quant", echo, cfg.seed, layer_entries(sq.records, split.plans), es, r.acc_splitquant};
    return r;
}

}  // namespace splitquant
