#pragma once

// Affine integer quantization and its simulation on a graph.
//
//   S = (qmax - qmin) / (alpha - beta)
//   Z = qmin - INT(S * beta)
//   Q(x) = clamp(INT(S * x) + Z, qmin, qmax)
//   x_hat = (Q(x) - Z) / S
//
// INT() rounds to nearest with ties away from zero. Symmetric mode widens
// the range to [-m, m], m = max(|alpha|, |beta|), so Z = 0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "splitquant/graph.hpp"

namespace splitquant {

/// Round to nearest, ties away from zero.
inline double round_half_away(double x) { return std::round(x); }

enum class CalibMethod { MinMax, Percentile };

struct CalibRange {
    float beta = 0.0f;   // range minimum
    float alpha = 0.0f;  // range maximum
    CalibMethod method = CalibMethod::MinMax;
    double percentile = 100.0;

    double width() const { return static_cast<double>(alpha) - static_cast<double>(beta); }
};

struct QuantParams {
    std::int32_t qmin = -128;
    std::int32_t qmax = 127;
    float scale = 1.0f;
    std::int32_t zero_point = 0;
    bool symmetric = false;
    bool degenerate = false;  // alpha == beta; scale forced to 1
};

inline QuantParams compute_qparams(const CalibRange &r, IntRange q, bool symmetric) {
    if (!(r.alpha >= r.beta)) throw ArgumentError("calibration range requires alpha >= beta");
    QuantParams p;
    p.qmin = q.qmin;
    p.qmax = q.qmax;
    p.symmetric = symmetric;
    double beta = r.beta, alpha = r.alpha;
    if (symmetric) {
        alpha = std::max(std::abs(alpha), std::abs(beta));
        beta = -alpha;
    }
    if (alpha == beta) {
        p.degenerate = true;
        p.scale = 1.0f;
        if (symmetric) return p;
        const double z = static_cast<double>(q.qmin) - round_half_away(beta);
        p.zero_point = static_cast<std::int32_t>(std::clamp(z, static_cast<double>(q.qmin), static_cast<double>(q.qmax)));
        return p;
    }
    p.scale = static_cast<float>(static_cast<double>(q.levels()) / (alpha - beta));
    if (!symmetric)
        p.zero_point = static_cast<std::int32_t>(static_cast<double>(q.qmin) -
                                                 round_half_away(static_cast<double>(p.scale) * beta));
    return p;
}

inline QuantParams compute_qparams(const CalibRange &r, int bits, bool symmetric) {
    return compute_qparams(r, IntRange::for_bits(bits), symmetric);
}

/// Integer tensor; values are held in 32 bits regardless of bit-width.
struct QuantizedTensor {
    Shape shape;
    std::vector<std::int32_t> values;
};

inline std::int32_t quantize_value(float x, const QuantParams &p) {
    const double q = round_half_away(static_cast<double>(p.scale) * static_cast<double>(x)) + p.zero_point;
    return static_cast<std::int32_t>(std::clamp(q, static_cast<double>(p.qmin), static_cast<double>(p.qmax)));
}

inline float dequantize_value(std::int32_t q, const QuantParams &p) {
    return static_cast<float>(q - p.zero_point) / p.scale;
}

inline QuantizedTensor quantize(const Tensor &x, const QuantParams &p) {
    QuantizedTensor out{x.shape(), std::vector<std::int32_t>(x.size())};
    for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = quantize_value(x[i], p);
    return out;
}

inline Tensor dequantize(const QuantizedTensor &q, const QuantParams &p) {
    Tensor out(q.shape);
    for (std::size_t i = 0; i < q.values.size(); ++i) out[i] = dequantize_value(q.values[i], p);
    return out;
}

inline Tensor fake_quantize(const Tensor &x, const QuantParams &p) { return dequantize(quantize(x, p), p); }

/// Pools observed scalars and reduces them to a calibration range.
class RangeObserver {
  public:
    void observe(std::span<const float> xs) {
        if (keep_values_) values_.insert(values_.end(), xs.begin(), xs.end());
        for (float x : xs) {
            lo_ = std::min(lo_, x);
            hi_ = std::max(hi_, x);
        }
        count_ += xs.size();
    }
    void observe(const Tensor &t) { observe(t.values()); }

    explicit RangeObserver(bool keep_values = true) : keep_values_(keep_values) {}

    bool empty() const { return count_ == 0; }

    CalibRange range(CalibMethod method, double percentile = 99.0) const {
        if (count_ == 0) throw CalibrationError("no values observed");
        if (method == CalibMethod::MinMax) return {lo_, hi_, CalibMethod::MinMax, 100.0};
        if (!(percentile > 50.0 && percentile <= 100.0))
            throw ArgumentError("percentile must lie in (50, 100], got " + std::to_string(percentile));
        if (!keep_values_) throw CalibrationError("percentile calibration needs retained values");
        std::vector<float> sorted = values_;
        std::sort(sorted.begin(), sorted.end());
        auto at = [&](double p) {
            const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
            const auto lo = static_cast<std::size_t>(std::floor(rank));
            const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
            const double frac = rank - static_cast<double>(lo);
            if (frac == 0.0) return sorted[lo];
            return static_cast<float>(static_cast<double>(sorted[lo]) +
                                      frac * (static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo])));
        };
        return {at(100.0 - percentile), at(percentile), CalibMethod::Percentile, percentile};
    }

  private:
    bool keep_values_;
    std::vector<float> values_;
    float lo_ = std::numeric_limits<float>::infinity();
    float hi_ = -std::numeric_limits<float>::infinity();
    std::size_t count_ = 0;
};

/// MinMax, or Percentile(p) with linear interpolation over the pooled,
/// sorted scalars: beta = P_(100-p), alpha = P_p.
inline CalibRange calibrate(std::span<const Tensor> values, CalibMethod method, double percentile = 99.0) {
    RangeObserver obs(method == CalibMethod::Percentile);
    for (const auto &t : values) obs.observe(t);
    if (obs.empty()) throw CalibrationError("calibration stream is empty");
    return obs.range(method, percentile);
}

struct QuantConfig {
    IntRange range = IntRange::for_bits(8);
    int bits = 8;  // 0 when `range` was given explicitly
    bool symmetric = false;
    CalibMethod activation_calibration = CalibMethod::MinMax;
    double percentile = 99.0;
    bool weights_only = false;

    static QuantConfig for_bits(int b) {
        if (b != 2 && b != 4 && b != 8)
            throw ArgumentError("unsupported bit-width " + std::to_string(b) + " (expected 2, 4 or 8)");
        QuantConfig c;
        c.bits = b;
        c.range = IntRange::for_bits(b);
        return c;
    }
};

enum class TensorRole { Weight, Bias, Activation };

inline std::string_view role_name(TensorRole r) {
    switch (r) {
        case TensorRole::Weight: return "weight";
        case TensorRole::Bias: return "bias";
        case TensorRole::Activation: return "activation";
    }
    return "?";
}

/// Calibration outcome for one quantized tensor.
struct TensorQuantRecord {
    std::string layer_id;
    TensorRole role = TensorRole::Weight;
    CalibRange range;
    QuantParams params;
};

struct FakeQuantRun {
    std::vector<ExecResult> outputs;  // one per eval input
    std::vector<TensorQuantRecord> records;
    Graph quantized_graph;  // weights and biases replaced by their fake-quantized values
};

inline bool quantizes_output(LayerKind k) { return is_weight_layer(k) || is_activation(k); }

/// Weight/bias fake quantization with static MinMax ranges (per tensor).
inline Graph fake_quantize_weights(const Graph &g, const QuantConfig &cfg, std::vector<TensorQuantRecord> *records) {
    Graph q = g;
    for (auto &l : q.layers) {
        if (!is_weight_layer(l.kind)) continue;
        for (auto &[name, t] : l.params) {
            const TensorRole role = name == "bias" ? TensorRole::Bias : TensorRole::Weight;
            const CalibRange r = calibrate(std::span<const Tensor>(&t, 1), CalibMethod::MinMax);
            const QuantParams p = compute_qparams(r, cfg.range, cfg.symmetric);
            t = fake_quantize(t, p);
            if (records) records->push_back({l.id, role, r, p});
        }
    }
    return q;
}

/// Simulated quantized inference.
///  1. calibration: FP32 forward over `calib_inputs`, recording the range of
///     every Linear/Conv2d/ReLU/GELU output (skipped when weights_only);
///  2. evaluation: weights/biases fake-quantized from their own ranges, and
///     unless weights_only each recorded output fake-quantized in flight.
inline FakeQuantRun fake_quant_run(const Graph &g, const QuantConfig &cfg, std::span<const NamedTensors> calib_inputs,
                                   std::span<const NamedTensors> eval_inputs) {
    FakeQuantRun run;
    run.quantized_graph = fake_quantize_weights(g, cfg, &run.records);

    std::map<std::string, QuantParams> act_params;
    if (!cfg.weights_only) {
        if (calib_inputs.empty()) throw CalibrationError("activation quantization requires calibration inputs");
        std::map<std::string, RangeObserver> observers;
        const bool keep = cfg.activation_calibration == CalibMethod::Percentile;
        for (const auto &l : g.layers)
            if (quantizes_output(l.kind)) observers.emplace(l.id, RangeObserver(keep));
        const LayerHook observe = [&](const Layer &l, Tensor &out) {
            if (auto it = observers.find(l.id); it != observers.end()) it->second.observe(out);
        };
        for (const auto &in : calib_inputs) execute(g, in, observe);
        for (const auto &l : g.layers) {
            auto it = observers.find(l.id);
            if (it == observers.end()) continue;
            const CalibRange r = it->second.range(cfg.activation_calibration, cfg.percentile);
            const QuantParams p = compute_qparams(r, cfg.range, cfg.symmetric);
            act_params.emplace(l.id, p);
            run.records.push_back({l.id, TensorRole::Activation, r, p});
        }
    }

    const LayerHook quantize_hook = [&](const Layer &l, Tensor &out) {
        if (auto it = act_params.find(l.id); it != act_params.end()) out = fake_quantize(out, it->second);
    };
    run.outputs.reserve(eval_inputs.size());
    for (const auto &in : eval_inputs)
        run.outputs.push_back(execute(run.quantized_graph, in, cfg.weights_only ? LayerHook{} : quantize_hook));
    return run;
}

inline std::vector<ExecResult> fake_quant_execute(const Graph &g, const QuantConfig &cfg,
                                                  std::span<const NamedTensors> calib_inputs,
                                                  std::span<const NamedTensors> eval_inputs) {
    return fake_quant_run(g, cfg, calib_inputs, eval_inputs).outputs;
}

}  // namespace splitquant
