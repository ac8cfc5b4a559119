#pragma once

// Function-preserving graph rewrites that narrow per-tensor value ranges:
//  - weight layers (Linear/Conv2d) are split into up to three copies, one per
//    k-means cluster of the layer's weight+bias scalars, with zeros written
//    wherever a scalar belongs to another cluster; outputs are summed back.
//  - activation layers (ReLU/GELU) are split into three chunks along the
//    last axis and concatenated back.
//  - BatchNorm is folded into a preceding single-consumer Linear/Conv2d.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "splitquant/cluster.hpp"
#include "splitquant/graph.hpp"

namespace splitquant {

struct ValueRange {
    float min = 0.0f;
    float max = 0.0f;

    double width() const { return static_cast<double>(max) - static_cast<double>(min); }

    static ValueRange of(std::span<const float> xs) {
        ValueRange r{xs[0], xs[0]};
        for (float x : xs) {
            r.min = std::min(r.min, x);
            r.max = std::max(r.max, x);
        }
        return r;
    }
};

enum class SplitMode { WeightCluster, ActivationChunk };

inline std::string_view mode_name(SplitMode m) {
    return m == SplitMode::WeightCluster ? "weight_cluster" : "activation_chunk";
}

/// One emitted branch of a split.
struct SplitBranch {
    std::string layer_id;
    // WeightCluster: the cluster's own scalars vs the materialized tensors,
    // which also contain the injected zeros.
    ValueRange cluster_range;
    ValueRange weight_range;
    std::optional<ValueRange> bias_range;
    std::size_t owned_scalars = 0;
    // ActivationChunk: [start, start + length) along the last axis
    std::size_t chunk_start = 0;
    std::size_t chunk_length = 0;
};

struct SplitPlan {
    std::string target;
    SplitMode mode = SplitMode::WeightCluster;
    std::string combined_id;  // node that now carries the original output
    // WeightCluster
    ClusterAssignment assignment;
    ValueRange original_range;  // over weight and bias scalars jointly
    ValueRange original_weight_range;
    std::optional<ValueRange> original_bias_range;
    std::vector<SplitBranch> branches;
    // ActivationChunk
    std::vector<std::size_t> chunks;
};

struct TransformConfig {
    bool split_weights = true;
    bool split_activations = true;
    bool fold_batchnorm = true;
    std::uint64_t kmeans_seed = 0;
};

struct TransformResult {
    Graph graph;
    std::vector<SplitPlan> plans;
    std::vector<Diagnostic> diagnostics;
};

namespace detail {

inline const char *const kBranchSuffix3[] = {".lo", ".mid", ".hi"};
inline const char *const kBranchSuffix2[] = {".lo", ".hi"};

inline std::size_t layer_index(const Graph &g, const std::string &id) {
    for (std::size_t i = 0; i < g.layers.size(); ++i)
        if (g.layers[i].id == id) return i;
    throw GraphError(id, "no such layer");
}

// Replace layers[at] with `replacement` (in place, keeping declaration order tidy).
inline void splice(Graph &g, std::size_t at, std::vector<Layer> replacement) {
    g.layers.erase(g.layers.begin() + static_cast<long>(at));
    g.layers.insert(g.layers.begin() + static_cast<long>(at), std::make_move_iterator(replacement.begin()),
                    std::make_move_iterator(replacement.end()));
}

}  // namespace detail

/// Split a Linear or Conv2d layer by clustering its weight and bias scalars
/// jointly into (at most) three groups.
inline TransformResult split_weight_layer(const Graph &g, const std::string &layer_id, std::uint64_t seed) {
    TransformResult res{g, {}, {}};
    const std::size_t at = detail::layer_index(g, layer_id);
    const Layer &orig = g.layers[at];
    if (!is_weight_layer(orig.kind))
        throw KindError(layer_id, "expected Linear or Conv2d, got " + std::string(kind_name(orig.kind)));
    const Tensor *w = orig.param("weight");
    if (!w) throw GraphError(layer_id, "missing parameter 'weight'");
    const Tensor *b = orig.param("bias");

    std::vector<double> scalars(w->values().begin(), w->values().end());
    if (b) scalars.insert(scalars.end(), b->values().begin(), b->values().end());
    if (detail::count_distinct(scalars) < 2) {
        res.diagnostics.push_back({layer_id, "split-skipped", "all weight/bias scalars are identical"});
        return res;
    }

    SplitPlan plan;
    plan.target = layer_id;
    plan.mode = SplitMode::WeightCluster;
    plan.assignment = kmeans_1d(std::span<const double>(scalars), 3, seed);
    plan.original_weight_range = ValueRange::of(w->values());
    if (b) plan.original_bias_range = ValueRange::of(b->values());
    {
        std::vector<float> all(w->values().begin(), w->values().end());
        if (b) all.insert(all.end(), b->values().begin(), b->values().end());
        plan.original_range = ValueRange::of(all);
    }

    const int k = plan.assignment.k;
    const auto &labels = plan.assignment.labels;
    const std::size_t nw = w->size();
    std::vector<Layer> replacement;
    std::vector<std::string> branch_ids;
    for (int j = 0; j < k; ++j) {
        Layer part;
        part.id = layer_id + (k == 3 ? detail::kBranchSuffix3[j] : k == 2 ? detail::kBranchSuffix2[j] : ".lo");
        part.kind = orig.kind;
        part.inputs = orig.inputs;
        part.attrs = orig.attrs;
        part.generated = true;

        SplitBranch br;
        br.layer_id = part.id;
        bool first = true;
        auto own = [&](float v) {
            if (first) br.cluster_range = {v, v};
            br.cluster_range.min = std::min(br.cluster_range.min, v);
            br.cluster_range.max = std::max(br.cluster_range.max, v);
            first = false;
            ++br.owned_scalars;
        };

        Tensor pw(w->shape());
        for (std::size_t i = 0; i < nw; ++i)
            if (labels[i] == j) {
                pw[i] = (*w)[i];
                own(pw[i]);
            }
        br.weight_range = ValueRange::of(pw.values());
        part.params.emplace("weight", std::move(pw));
        if (b) {
            Tensor pb(b->shape());
            bool any = false;
            for (std::size_t i = 0; i < b->size(); ++i)
                if (labels[nw + i] == j) {
                    pb[i] = (*b)[i];
                    own(pb[i]);
                    any = true;
                }
            if (any) {
                br.bias_range = ValueRange::of(pb.values());
                part.params.emplace("bias", std::move(pb));
            }
        }
        branch_ids.push_back(part.id);
        plan.branches.push_back(br);
        replacement.push_back(std::move(part));
    }

    // left-leaning chain of binary adds: ((lo + mid) + hi)
    std::string acc = branch_ids[0];
    for (std::size_t j = 1; j < branch_ids.size(); ++j) {
        Layer add;
        add.id = layer_id + ".add" + std::to_string(j - 1);
        add.kind = LayerKind::Add;
        add.inputs = {acc, branch_ids[j]};
        add.generated = true;
        acc = add.id;
        replacement.push_back(std::move(add));
    }
    plan.combined_id = acc;

    detail::splice(res.graph, at, std::move(replacement));
    res.graph.rewire(layer_id, acc);
    res.plans.push_back(std::move(plan));
    return res;
}

inline TransformResult split_linear(const Graph &g, const std::string &layer_id, std::uint64_t seed) {
    const Layer *l = g.find(layer_id);
    if (!l) throw GraphError(layer_id, "no such layer");
    if (l->kind != LayerKind::Linear) throw KindError(layer_id, "expected Linear, got " + std::string(kind_name(l->kind)));
    return split_weight_layer(g, layer_id, seed);
}

inline TransformResult split_conv(const Graph &g, const std::string &layer_id, std::uint64_t seed) {
    const Layer *l = g.find(layer_id);
    if (!l) throw GraphError(layer_id, "no such layer");
    if (l->kind != LayerKind::Conv2d) throw KindError(layer_id, "expected Conv2d, got " + std::string(kind_name(l->kind)));
    return split_weight_layer(g, layer_id, seed);
}

/// Chunk lengths for splitting n elements three ways, largest first.
inline std::vector<std::size_t> activation_chunks(std::size_t n) {
    if (n < 3) return {n};
    const std::size_t l0 = (n + 2) / 3;
    const std::size_t l1 = (n - l0 + 1) / 2;
    return {l0, l1, n - l0 - l1};
}

/// Split a ReLU/GELU into three last-axis chunks joined by a Concat.
inline TransformResult split_activation(const Graph &g, const std::string &layer_id) {
    TransformResult res{g, {}, {}};
    const std::size_t at = detail::layer_index(g, layer_id);
    const Layer orig = g.layers[at];
    if (!is_activation(orig.kind))
        throw KindError(layer_id, "expected ReLU or GELU, got " + std::string(kind_name(orig.kind)));
    const auto shapes = infer_shapes(g);
    const Shape &shape = shapes.at(layer_id);
    const std::size_t n = shape.back();
    if (n < 3) {
        res.diagnostics.push_back({layer_id, "split-skipped", "last-axis length " + std::to_string(n) + " < 3"});
        return res;
    }
    const long axis = static_cast<long>(shape.size()) - 1;

    SplitPlan plan;
    plan.target = layer_id;
    plan.mode = SplitMode::ActivationChunk;
    plan.chunks = activation_chunks(n);

    std::vector<Layer> replacement;
    Layer cat;
    cat.id = layer_id + ".cat";
    cat.kind = LayerKind::Concat;
    cat.attrs.axis = axis;
    cat.generated = true;
    std::size_t start = 0;
    for (std::size_t j = 0; j < plan.chunks.size(); ++j) {
        const std::string base = layer_id + detail::kBranchSuffix3[j];
        Layer sl;
        sl.id = base + ".slice";
        sl.kind = LayerKind::Slice;
        sl.inputs = orig.inputs;
        sl.attrs.axis = axis;
        sl.attrs.start = start;
        sl.attrs.length = plan.chunks[j];
        sl.generated = true;
        Layer act;
        act.id = base;
        act.kind = orig.kind;
        act.inputs = {sl.id};
        act.generated = true;
        cat.inputs.push_back(act.id);

        SplitBranch br;
        br.layer_id = act.id;
        br.chunk_start = start;
        br.chunk_length = plan.chunks[j];
        plan.branches.push_back(br);
        start += plan.chunks[j];
        replacement.push_back(std::move(sl));
        replacement.push_back(std::move(act));
    }
    plan.combined_id = cat.id;
    replacement.push_back(std::move(cat));

    detail::splice(res.graph, at, std::move(replacement));
    res.graph.rewire(layer_id, plan.combined_id);
    res.plans.push_back(std::move(plan));
    return res;
}

/// Fold every BatchNorm whose sole input is a Linear/Conv2d with no other
/// consumer: W' = s * W, b' = s * (b - mean) + beta, s = gamma / sqrt(var + eps),
/// applied per output channel. Other BatchNorms are left in place.
inline TransformResult fold_batchnorm(const Graph &g) {
    TransformResult res{g, {}, {}};
    Graph &out = res.graph;
    const auto shapes = infer_shapes(g);
    for (auto i : topological_order(g)) {
        const std::string bn_id = g.layers[i].id;
        const Layer *bn = out.find(bn_id);
        if (!bn || bn->kind != LayerKind::BatchNorm) continue;
        if (bn->inputs.size() != 1) continue;
        const std::string prod_id = bn->inputs[0];
        Layer *prod = out.find(prod_id);
        if (!prod || !is_weight_layer(prod->kind)) {
            res.diagnostics.push_back({bn_id, "fold-skipped", "input is not a Linear/Conv2d layer"});
            continue;
        }
        if (out.consumers(prod_id).size() != 1 || out.is_output(prod_id)) {
            res.diagnostics.push_back({bn_id, "fold-skipped", "producer '" + prod_id + "' has other consumers"});
            continue;
        }
        const Shape &prod_shape = shapes.at(prod_id);
        if (prod->kind == LayerKind::Linear && batchnorm_channel_axis(prod_shape) != prod_shape.size() - 1) {
            res.diagnostics.push_back({bn_id, "fold-skipped", "normalized axis is not the Linear output axis"});
            continue;
        }
        const Tensor *gamma = bn->param("gamma");
        const Tensor *beta = bn->param("beta");
        const Tensor *mean = bn->param("running_mean");
        const Tensor *var = bn->param("running_var");
        const Tensor *w = prod->param("weight");
        if (!gamma || !beta || !mean || !var || !w || gamma->size() != w->dim(0)) {
            res.diagnostics.push_back({bn_id, "fold-skipped", "parameters do not match producer channels"});
            continue;
        }
        const std::size_t c = w->dim(0);
        const std::size_t per_channel = w->size() / c;
        Tensor nw(w->shape());
        Tensor nb({c});
        const Tensor *b = prod->param("bias");
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float s = (*gamma)[ch] / std::sqrt((*var)[ch] + bn->attrs.epsilon);
            for (std::size_t t = 0; t < per_channel; ++t) nw[ch * per_channel + t] = s * (*w)[ch * per_channel + t];
            const float bias = b ? (*b)[ch] : 0.0f;
            nb[ch] = s * (bias - (*mean)[ch]) + (*beta)[ch];
        }
        prod->params.insert_or_assign("weight", std::move(nw));
        prod->params.insert_or_assign("bias", std::move(nb));
        out.layers.erase(out.layers.begin() + static_cast<long>(detail::layer_index(out, bn_id)));
        out.rewire(bn_id, prod_id);
    }
    return res;
}

/// Full pipeline: optional BatchNorm folding, then weight-layer splits, then
/// activation splits. Layers emitted by an earlier run are skipped. Works on
/// a copy; per-layer failures become diagnostics.
inline TransformResult apply_splitquant(const Graph &g, const TransformConfig &cfg) {
    if (auto diags = validate(g); !diags.empty())
        throw GraphError(diags.front().node, "invalid graph: " + diags.front().message);
    TransformResult res{g, {}, {}};
    auto absorb = [&](TransformResult step) {
        res.graph = std::move(step.graph);
        for (auto &p : step.plans) res.plans.push_back(std::move(p));
        for (auto &d : step.diagnostics) res.diagnostics.push_back(std::move(d));
    };
    if (cfg.fold_batchnorm) absorb(fold_batchnorm(res.graph));

    auto targets = [&](auto pred) {
        std::vector<std::string> ids;
        for (auto i : topological_order(res.graph)) {
            const Layer &l = res.graph.layers[i];
            if (!l.generated && pred(l.kind)) ids.push_back(l.id);
        }
        return ids;
    };
    if (cfg.split_weights)
        for (const auto &id : targets(is_weight_layer)) {
            try {
                absorb(split_weight_layer(res.graph, id, cfg.kmeans_seed));
            } catch (const Error &e) {
                res.diagnostics.push_back({id, "split-failed", e.what()});
            }
        }
    if (cfg.split_activations)
        for (const auto &id : targets(is_activation)) {
            try {
                absorb(split_activation(res.graph, id));
            } catch (const Error &e) {
                res.diagnostics.push_back({id, "split-failed", e.what()});
            }
        }
    return res;
}

}  // namespace splitquant
