// Splits a 2x2 Linear layer with outlier weights and shows that the three
// branch layers sum back to the original output while each branch spans a
// narrower range than the original layer.

#include <cstdio>

#include "splitquant/splitquant.hpp"

using namespace splitquant;

int main() {
    Graph g;
    g.inputs.push_back({"x", {2}});
    Layer fc;
    fc.id = "fc";
    fc.kind = LayerKind::Linear;
    fc.inputs = {"x"};
    fc.params.emplace("weight", Tensor::matrix({{-5.0f, 0.1f}, {0.2f, 9.0f}}));
    fc.params.emplace("bias", Tensor::vector({-4.0f, 10.0f}));
    g.layers.push_back(fc);
    g.outputs = {"fc"};

    const TransformResult split = split_linear(g, "fc", /*seed=*/0);
    const NamedTensors in{{"x", Tensor::vector({1.0f, 1.0f})}};
    const Tensor before = execute(g, in).values[0];
    const Tensor after = execute(split.graph, in).values[0];
    std::printf("original: [%g, %g]\nsplit:    [%g, %g]\n", before[0], before[1], after[0], after[1]);

    const SplitPlan &plan = split.plans.front();
    std::printf("original range width %.3f\n", plan.original_range.width());
    for (const auto &b : plan.branches)
        std::printf("  %-8s cluster [%g, %g]  materialized weight [%g, %g]\n", b.layer_id.c_str(), b.cluster_range.min,
                    b.cluster_range.max, b.weight_range.min, b.weight_range.max);
    return 0;
}
