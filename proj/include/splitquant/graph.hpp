#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "splitquant/tensor.hpp"

namespace splitquant {

enum class LayerKind { Linear, Conv2d, ReLU, GELU, BatchNorm, Add, Concat, Slice };

inline std::string_view kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Linear: return "Linear";
        case LayerKind::Conv2d: return "Conv2d";
        case LayerKind::ReLU: return "ReLU";
        case LayerKind::GELU: return "GELU";
        case LayerKind::BatchNorm: return "BatchNorm";
        case LayerKind::Add: return "Add";
        case LayerKind::Concat: return "Concat";
        case LayerKind::Slice: return "Slice";
    }
    return "?";
}

inline std::optional<LayerKind> parse_kind(std::string_view name) {
    for (auto k : {LayerKind::Linear, LayerKind::Conv2d, LayerKind::ReLU, LayerKind::GELU, LayerKind::BatchNorm,
                   LayerKind::Add, LayerKind::Concat, LayerKind::Slice})
        if (kind_name(k) == name) return k;
    return std::nullopt;
}

inline bool is_weight_layer(LayerKind k) { return k == LayerKind::Linear || k == LayerKind::Conv2d; }
inline bool is_activation(LayerKind k) { return k == LayerKind::ReLU || k == LayerKind::GELU; }

/// Kind-specific attributes. Only the fields relevant to a layer's kind are
/// meaningful (and serialized).
struct LayerAttrs {
    std::size_t stride = 1;   // Conv2d
    std::size_t padding = 0;  // Conv2d
    long axis = -1;           // Concat, Slice
    std::size_t start = 0;    // Slice
    std::size_t length = 0;   // Slice
    float epsilon = 1e-5f;    // BatchNorm

    friend bool operator==(const LayerAttrs &, const LayerAttrs &) = default;
};

struct Layer {
    std::string id;
    LayerKind kind = LayerKind::Linear;
    std::vector<std::string> inputs;
    LayerAttrs attrs;
    // weight, bias; BatchNorm: gamma, beta, running_mean, running_var
    std::map<std::string, Tensor> params;
    // set on layers emitted by a rewrite; rewrites skip them on re-application
    bool generated = false;

    const Tensor *param(const std::string &name) const {
        auto it = params.find(name);
        return it == params.end() ? nullptr : &it->second;
    }

    friend bool operator==(const Layer &, const Layer &) = default;
};

struct GraphInput {
    std::string name;
    Shape shape;

    friend bool operator==(const GraphInput &, const GraphInput &) = default;
};

struct Graph {
    std::vector<Layer> layers;
    std::vector<GraphInput> inputs;
    std::vector<std::string> outputs;

    const Layer *find(std::string_view id) const {
        for (const auto &l : layers)
            if (l.id == id) return &l;
        return nullptr;
    }
    Layer *find(std::string_view id) {
        for (auto &l : layers)
            if (l.id == id) return &l;
        return nullptr;
    }

    const GraphInput *find_input(std::string_view name) const {
        for (const auto &in : inputs)
            if (in.name == name) return &in;
        return nullptr;
    }

    /// Ids of layers that read `id`.
    std::vector<std::string> consumers(std::string_view id) const {
        std::vector<std::string> out;
        for (const auto &l : layers)
            if (std::find(l.inputs.begin(), l.inputs.end(), id) != l.inputs.end()) out.push_back(l.id);
        return out;
    }

    bool is_output(std::string_view id) const {
        return std::find(outputs.begin(), outputs.end(), id) != outputs.end();
    }

    /// Point every reference to `from` (layer inputs and graph outputs) at `to`.
    void rewire(const std::string &from, const std::string &to) {
        for (auto &l : layers)
            for (auto &in : l.inputs)
                if (in == from) in = to;
        for (auto &o : outputs)
            if (o == from) o = to;
    }

    friend bool operator==(const Graph &, const Graph &) = default;
};

struct Diagnostic {
    std::string node;
    std::string rule;
    std::string message;
};

/// Layer indices in dependency order (stable w.r.t. declaration order).
/// Throws GraphError on cycles, unknown references or duplicate ids.
inline std::vector<std::size_t> topological_order(const Graph &g) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        if (!index.emplace(g.layers[i].id, i).second) throw GraphError(g.layers[i].id, "duplicate layer id");
        if (g.find_input(g.layers[i].id)) throw GraphError(g.layers[i].id, "layer id collides with a graph input");
    }
    std::vector<std::size_t> pending(g.layers.size(), 0);
    std::vector<std::vector<std::size_t>> users(g.layers.size());
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        for (const auto &in : g.layers[i].inputs) {
            if (auto it = index.find(in); it != index.end()) {
                ++pending[i];
                users[it->second].push_back(i);
            } else if (!g.find_input(in)) {
                throw GraphError(g.layers[i].id, "unknown input '" + in + "'");
            }
        }
    }
    // min-index ready set keeps the order deterministic
    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < pending.size(); ++i)
        if (pending[i] == 0) ready.insert(i);
    std::vector<std::size_t> order;
    order.reserve(g.layers.size());
    while (!ready.empty()) {
        const std::size_t i = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(i);
        for (auto u : users[i])
            if (--pending[u] == 0) ready.insert(u);
    }
    if (order.size() != g.layers.size()) {
        for (std::size_t i = 0; i < pending.size(); ++i)
            if (pending[i] > 0) throw GraphError(g.layers[i].id, "graph contains a cycle");
    }
    return order;
}

namespace detail {

inline void check_arity(const Layer &l) {
    const std::size_t n = l.inputs.size();
    switch (l.kind) {
        case LayerKind::Add:
            if (n < 2) throw GraphError(l.id, "Add requires at least 2 inputs");
            break;
        case LayerKind::Concat:
            if (n < 1) throw GraphError(l.id, "Concat requires at least 1 input");
            break;
        default:
            if (n != 1) throw GraphError(l.id, std::string(kind_name(l.kind)) + " requires exactly 1 input");
    }
}

inline const Tensor &require_param(const Layer &l, const std::string &name) {
    const Tensor *t = l.param(name);
    if (!t) throw GraphError(l.id, "missing parameter '" + name + "'");
    return *t;
}

// Static parameter rules, independent of input shapes.
inline void check_params(const Layer &l) {
    switch (l.kind) {
        case LayerKind::Linear: {
            const Tensor &w = require_param(l, "weight");
            if (w.rank() != 2) throw GraphError(l.id, "Linear weight must be 2-D, got " + to_string(w.shape()));
            if (const Tensor *b = l.param("bias"); b && (b->rank() != 1 || b->dim(0) != w.dim(0)))
                throw GraphError(l.id, "Linear bias must be 1-D [" + std::to_string(w.dim(0)) + "]");
            break;
        }
        case LayerKind::Conv2d: {
            const Tensor &w = require_param(l, "weight");
            if (w.rank() != 4) throw GraphError(l.id, "Conv2d weight must be 4-D, got " + to_string(w.shape()));
            if (const Tensor *b = l.param("bias"); b && (b->rank() != 1 || b->dim(0) != w.dim(0)))
                throw GraphError(l.id, "Conv2d bias must be 1-D [" + std::to_string(w.dim(0)) + "]");
            if (l.attrs.stride < 1) throw GraphError(l.id, "Conv2d stride must be >= 1");
            break;
        }
        case LayerKind::BatchNorm: {
            const Tensor &gamma = require_param(l, "gamma");
            for (const char *name : {"gamma", "beta", "running_mean", "running_var"}) {
                const Tensor &p = require_param(l, name);
                if (p.rank() != 1 || p.dim(0) != gamma.size())
                    throw GraphError(l.id, std::string("BatchNorm parameter '") + name +
                                               "' must be 1-D with the channel count");
            }
            if (!(l.attrs.epsilon >= 0.0f)) throw GraphError(l.id, "BatchNorm epsilon must be >= 0");
            break;
        }
        default:
            break;
    }
}

inline Shape output_shape(const Layer &l, const std::vector<const Shape *> &in) {
    switch (l.kind) {
        case LayerKind::Linear: {
            const Tensor &w = *l.param("weight");
            if (in[0]->back() != w.dim(1))
                throw GraphError(l.id, "input " + to_string(*in[0]) + " does not match weight " + to_string(w.shape()));
            Shape s = *in[0];
            s.back() = w.dim(0);
            return s;
        }
        case LayerKind::Conv2d:
            try {
                return conv2d_output_shape(*in[0], l.param("weight")->shape(), {l.attrs.stride, l.attrs.padding});
            } catch (const DimensionError &e) {
                throw GraphError(l.id, e.what());
            }
        case LayerKind::BatchNorm: {
            const std::size_t c = (*in[0])[batchnorm_channel_axis(*in[0])];
            if (c != l.param("gamma")->size())
                throw GraphError(l.id, "channel count " + std::to_string(c) + " does not match parameters");
            return *in[0];
        }
        case LayerKind::ReLU:
        case LayerKind::GELU:
            return *in[0];
        case LayerKind::Add:
            for (const Shape *s : in)
                if (*s != *in[0])
                    throw GraphError(l.id, "Add inputs differ in shape: " + to_string(*in[0]) + " vs " + to_string(*s));
            return *in[0];
        case LayerKind::Slice: {
            try {
                const std::size_t ax = normalize_axis(l.attrs.axis, in[0]->size());
                if (l.attrs.length == 0 || l.attrs.start + l.attrs.length > (*in[0])[ax])
                    throw GraphError(l.id, "slice out of bounds for " + to_string(*in[0]));
                Shape s = *in[0];
                s[ax] = l.attrs.length;
                return s;
            } catch (const DimensionError &e) {
                throw GraphError(l.id, e.what());
            }
        }
        case LayerKind::Concat: {
            try {
                const std::size_t ax = normalize_axis(l.attrs.axis, in[0]->size());
                Shape s = *in[0];
                s[ax] = 0;
                for (const Shape *p : in) {
                    bool ok = p->size() == s.size();
                    for (std::size_t i = 0; ok && i < s.size(); ++i)
                        if (i != ax && (*p)[i] != s[i]) ok = false;
                    if (!ok) throw GraphError(l.id, "Concat inputs differ off-axis");
                    s[ax] += (*p)[ax];
                }
                return s;
            } catch (const DimensionError &e) {
                throw GraphError(l.id, e.what());
            }
        }
    }
    throw GraphError(l.id, "unknown layer kind");
}

}  // namespace detail

/// Static output shape of every layer, keyed by id (graph inputs included).
inline std::map<std::string, Shape> infer_shapes(const Graph &g) {
    std::map<std::string, Shape> shapes;
    for (const auto &in : g.inputs) shapes[in.name] = in.shape;
    for (auto i : topological_order(g)) {
        const Layer &l = g.layers[i];
        detail::check_arity(l);
        detail::check_params(l);
        std::vector<const Shape *> in;
        for (const auto &name : l.inputs) in.push_back(&shapes.at(name));
        shapes[l.id] = detail::output_shape(l, in);
    }
    return shapes;
}

/// Structural and shape diagnostics; empty iff the graph is well formed.
inline std::vector<Diagnostic> validate(const Graph &g) {
    std::vector<Diagnostic> out;
    std::set<std::string> ids;
    for (const auto &in : g.inputs) {
        if (!ids.insert(in.name).second) out.push_back({in.name, "unique-id", "duplicate graph input name"});
        if (in.shape.empty() || std::count(in.shape.begin(), in.shape.end(), 0u) > 0)
            out.push_back({in.name, "input-shape", "graph input shape must be non-empty with positive dims"});
    }
    for (const auto &l : g.layers) {
        if (!ids.insert(l.id).second) out.push_back({l.id, "unique-id", "id is produced more than once"});
        for (const auto &in : l.inputs)
            if (!g.find(in) && !g.find_input(in))
                out.push_back({l.id, "input-exists", "unknown input '" + in + "'"});
        try {
            detail::check_arity(l);
        } catch (const GraphError &e) {
            out.push_back({l.id, "arity", e.what()});
        }
        try {
            detail::check_params(l);
        } catch (const GraphError &e) {
            out.push_back({l.id, "param-shape", e.what()});
        }
    }
    if (g.outputs.empty()) out.push_back({"", "outputs", "graph declares no outputs"});
    for (const auto &o : g.outputs)
        if (!g.find(o) && !g.find_input(o)) out.push_back({o, "output-exists", "graph output is not produced"});
    if (!out.empty()) return out;

    try {
        topological_order(g);
    } catch (const GraphError &e) {
        out.push_back({e.node(), "acyclic", e.what()});
        return out;
    }
    try {
        infer_shapes(g);
    } catch (const GraphError &e) {
        out.push_back({e.node(), "shape", e.what()});
    }
    return out;
}

using NamedTensors = std::map<std::string, Tensor>;

/// Called after each layer produces its value; may rewrite it in place.
using LayerHook = std::function<void(const Layer &, Tensor &)>;

/// Outputs in graph-output order.
struct ExecResult {
    std::vector<std::string> names;
    std::vector<Tensor> values;

    const Tensor &at(std::string_view name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return values[i];
        throw ArgumentError("no output named '" + std::string(name) + "'");
    }
};

inline Tensor run_layer(const Layer &l, const std::vector<const Tensor *> &in) {
    switch (l.kind) {
        case LayerKind::Linear: return linear(*in[0], *l.param("weight"), l.param("bias"));
        case LayerKind::Conv2d:
            return conv2d(*in[0], *l.param("weight"), l.param("bias"), {l.attrs.stride, l.attrs.padding});
        case LayerKind::ReLU: return relu(*in[0]);
        case LayerKind::GELU: return gelu(*in[0]);
        case LayerKind::BatchNorm:
            return batchnorm(*in[0], *l.param("gamma"), *l.param("beta"), *l.param("running_mean"),
                             *l.param("running_var"), l.attrs.epsilon);
        case LayerKind::Add: {
            Tensor acc = elementwise_add(*in[0], *in[1]);
            for (std::size_t i = 2; i < in.size(); ++i) acc = elementwise_add(acc, *in[i]);
            return acc;
        }
        case LayerKind::Concat: {
            std::vector<Tensor> parts;
            parts.reserve(in.size());
            for (const Tensor *t : in) parts.push_back(*t);
            return concat(parts, l.attrs.axis);
        }
        case LayerKind::Slice: return slice(*in[0], l.attrs.axis, l.attrs.start, l.attrs.length);
    }
    throw GraphError(l.id, "unknown layer kind");
}

/// Forward pass in topological order.
inline ExecResult execute(const Graph &g, const NamedTensors &inputs, const LayerHook &hook = {}) {
    std::map<std::string, Tensor> values;
    for (const auto &gi : g.inputs) {
        auto it = inputs.find(gi.name);
        if (it == inputs.end()) throw GraphError(gi.name, "missing graph input");
        if (it->second.shape() != gi.shape)
            throw GraphError(gi.name, "input shape " + to_string(it->second.shape()) + " does not match declared " +
                                          to_string(gi.shape));
        values.emplace(gi.name, it->second);
    }
    for (auto i : topological_order(g)) {
        const Layer &l = g.layers[i];
        detail::check_arity(l);
        detail::check_params(l);
        std::vector<const Tensor *> in;
        in.reserve(l.inputs.size());
        for (const auto &name : l.inputs) in.push_back(&values.at(name));
        Tensor out;
        try {
            out = run_layer(l, in);
        } catch (const DimensionError &e) {
            throw GraphError(l.id, e.what());
        }
        if (hook) hook(l, out);
        values.insert_or_assign(l.id, std::move(out));
    }
    ExecResult result;
    for (const auto &o : g.outputs) {
        auto it = values.find(o);
        if (it == values.end()) throw GraphError(o, "graph output is not produced");
        result.names.push_back(o);
        result.values.push_back(it->second);
    }
    return result;
}

}  // namespace splitquant
