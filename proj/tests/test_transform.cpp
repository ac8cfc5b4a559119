#include <gtest/gtest.h>

#include "corpus.hpp"
#include "splitquant/transform.hpp"

using namespace splitquant;

namespace {

Graph linear_example() {
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
    return g;
}

Graph single_activation(LayerKind kind, Shape shape) {
    Graph g;
    g.inputs.push_back({"x", shape});
    Layer a;
    a.id = "act";
    a.kind = kind;
    a.inputs = {"x"};
    g.layers.push_back(a);
    g.outputs = {"act"};
    return g;
}

// |a - b| <= tol * (1 + max |a|) elementwise
void expect_close(const Tensor &a, const Tensor &b, double tol) {
    ASSERT_EQ(a.shape(), b.shape());
    double scale = 1.0;
    for (float v : a.values()) scale = std::max(scale, static_cast<double>(std::abs(v)));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol * scale) << "at " << i;
}

bool has_rule(const std::vector<Diagnostic> &d, const std::string &rule) {
    return std::any_of(d.begin(), d.end(), [&](const Diagnostic &x) { return x.rule == rule; });
}

std::size_t count_kind(const Graph &g, LayerKind k) {
    return static_cast<std::size_t>(
        std::count_if(g.layers.begin(), g.layers.end(), [&](const Layer &l) { return l.kind == k; }));
}

}  // namespace

TEST(SplitLinear, TwoByTwoExample) {
    const TransformResult r = split_linear(linear_example(), "fc", 0);
    ASSERT_EQ(r.plans.size(), 1u);
    const SplitPlan &plan = r.plans[0];
    EXPECT_EQ(plan.assignment.k, 3);
    ASSERT_EQ(plan.branches.size(), 3u);
    EXPECT_EQ(plan.combined_id, "fc.add1");

    const Layer *lo = r.graph.find("fc.lo");
    const Layer *mid = r.graph.find("fc.mid");
    const Layer *hi = r.graph.find("fc.hi");
    ASSERT_TRUE(lo && mid && hi);
    EXPECT_EQ(lo->params.at("weight"), Tensor::matrix({{-5, 0}, {0, 0}}));
    EXPECT_EQ(lo->params.at("bias"), Tensor::vector({-4, 0}));
    EXPECT_EQ(mid->params.at("weight"), Tensor::matrix({{0, 0.1f}, {0.2f, 0}}));
    EXPECT_EQ(mid->param("bias"), nullptr);
    EXPECT_EQ(hi->params.at("weight"), Tensor::matrix({{0, 0}, {0, 9}}));
    EXPECT_EQ(hi->params.at("bias"), Tensor::vector({0, 10}));

    EXPECT_FLOAT_EQ(plan.branches[0].cluster_range.min, -5.0f);
    EXPECT_FLOAT_EQ(plan.branches[0].cluster_range.max, -4.0f);
    EXPECT_FLOAT_EQ(plan.branches[2].cluster_range.min, 9.0f);
    EXPECT_DOUBLE_EQ(plan.original_range.width(), 15.0);

    const Layer *add0 = r.graph.find("fc.add0");
    const Layer *add1 = r.graph.find("fc.add1");
    ASSERT_TRUE(add0 && add1);
    EXPECT_EQ(add0->inputs, (std::vector<std::string>{"fc.lo", "fc.mid"}));
    EXPECT_EQ(add1->inputs, (std::vector<std::string>{"fc.add0", "fc.hi"}));
    EXPECT_EQ(r.graph.outputs, std::vector<std::string>{"fc.add1"});
    EXPECT_TRUE(validate(r.graph).empty());

    const auto out = execute(r.graph, {{"x", Tensor::vector({1, 1})}}).values[0];
    EXPECT_NEAR(out[0], -8.9f, 1e-5);
    EXPECT_NEAR(out[1], 19.2f, 1e-5);
}

TEST(SplitLinear, EquivalentOnRandomInputs) {
    const Graph g = linear_example();
    const Graph s = split_linear(g, "fc", 0).graph;
    corpus::Gen gen(9);
    for (int i = 0; i < 100; ++i) {
        const NamedTensors in{{"x", gen.normal_tensor({2}, 3.0f)}};
        expect_close(execute(g, in).values[0], execute(s, in).values[0], 1e-6);
    }
}

TEST(SplitLinear, IdenticalScalarsAreLeftAlone) {
    Graph g = linear_example();
    g.layers[0].params.insert_or_assign("weight", Tensor({2, 2}, 0.5f));
    g.layers[0].params.insert_or_assign("bias", Tensor({2}, 0.5f));
    const TransformResult r = split_linear(g, "fc", 0);
    EXPECT_TRUE(r.plans.empty());
    EXPECT_TRUE(has_rule(r.diagnostics, "split-skipped"));
    ASSERT_EQ(r.graph.layers.size(), 1u);
    EXPECT_EQ(r.graph.layers[0].params.at("weight"), g.layers[0].params.at("weight"));
}

TEST(SplitLinear, WrongKind) {
    const Graph g = single_activation(LayerKind::ReLU, {4});
    EXPECT_THROW(split_linear(g, "act", 0), KindError);
    EXPECT_THROW(split_conv(linear_example(), "fc", 0), KindError);
    EXPECT_THROW(split_linear(linear_example(), "nope", 0), GraphError);
}

TEST(SplitLinear, TwoDistinctValuesGiveTwoBranches) {
    Graph g = linear_example();
    g.layers[0].params.insert_or_assign("weight", Tensor::matrix({{1, -1}, {1, -1}}));
    g.layers[0].params.erase("bias");
    const TransformResult r = split_linear(g, "fc", 0);
    ASSERT_EQ(r.plans.size(), 1u);
    EXPECT_EQ(r.plans[0].branches.size(), 2u);
    EXPECT_NE(r.graph.find("fc.lo"), nullptr);
    EXPECT_NE(r.graph.find("fc.hi"), nullptr);
    EXPECT_EQ(r.graph.find("fc.mid"), nullptr);
    EXPECT_EQ(r.plans[0].combined_id, "fc.add0");
}

TEST(SplitConv, BiasGoesToExactlyOneBranch) {
    Graph g;
    g.inputs.push_back({"x", {1, 1, 5}});
    Layer conv;
    conv.id = "conv";
    conv.kind = LayerKind::Conv2d;
    conv.inputs = {"x"};
    conv.params.emplace("weight", Tensor({1, 1, 1, 3}, std::vector<float>{-1, 0, 1}));
    conv.params.emplace("bias", Tensor::vector({5}));
    g.layers.push_back(conv);
    g.outputs = {"conv"};

    const TransformResult r = split_conv(g, "conv", 0);
    ASSERT_EQ(r.plans.size(), 1u);
    int with_bias = 0;
    for (const auto &b : r.plans[0].branches) {
        const Layer *l = r.graph.find(b.layer_id);
        ASSERT_NE(l, nullptr);
        if (l->param("bias")) {
            ++with_bias;
            EXPECT_EQ(l->params.at("bias"), Tensor::vector({5}));
        }
    }
    EXPECT_EQ(with_bias, 1);
    const NamedTensors in{{"x", Tensor({1, 1, 5}, std::vector<float>{1, 2, 3, 4, 5})}};
    EXPECT_EQ(execute(g, in).values[0], execute(r.graph, in).values[0]);
}

TEST(SplitWeights, ScalarsAreConserved) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Graph g = corpus::random_model(seed);
        for (const auto &orig : g.layers) {
            if (!is_weight_layer(orig.kind)) continue;
            const TransformResult r = split_weight_layer(g, orig.id, seed);
            if (r.plans.empty()) continue;
            const Tensor &w = orig.params.at("weight");
            Tensor sum = Tensor::zeros_like(w);
            std::vector<int> owners(w.size(), 0);
            for (const auto &b : r.plans[0].branches) {
                const Tensor &bw = r.graph.find(b.layer_id)->params.at("weight");
                for (std::size_t i = 0; i < w.size(); ++i)
                    if (bw[i] != 0.0f || w[i] == 0.0f) {
                        sum[i] += bw[i];
                        ++owners[i];
                    }
            }
            for (std::size_t i = 0; i < w.size(); ++i) {
                EXPECT_EQ(sum[i], w[i]);
                if (w[i] != 0.0f) {
                    EXPECT_EQ(owners[i], 1);
                }
            }
        }
    }
}

TEST(SplitWeights, BranchRangesAreNarrower) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const TransformResult r = apply_splitquant(corpus::random_model(seed), TransformConfig{true, false, false, 0});
        for (const auto &p : r.plans) {
            if (p.mode != SplitMode::WeightCluster) continue;
            for (const auto &b : p.branches) EXPECT_LE(b.cluster_range.width(), p.original_range.width());
            if (p.branches.size() == 3) {
                EXPECT_LT(p.branches[1].cluster_range.width(), p.original_range.width());
            }
        }
    }
}

TEST(ActivationChunks, Lengths) {
    EXPECT_EQ(activation_chunks(6), (std::vector<std::size_t>{2, 2, 2}));
    EXPECT_EQ(activation_chunks(7), (std::vector<std::size_t>{3, 2, 2}));
    EXPECT_EQ(activation_chunks(8), (std::vector<std::size_t>{3, 3, 2}));
    EXPECT_EQ(activation_chunks(3), (std::vector<std::size_t>{1, 1, 1}));
    EXPECT_EQ(activation_chunks(2), (std::vector<std::size_t>{2}));
}

TEST(SplitActivation, SixElementsBitExact) {
    const Graph g = single_activation(LayerKind::ReLU, {6});
    const TransformResult r = split_activation(g, "act");
    ASSERT_EQ(r.plans.size(), 1u);
    EXPECT_EQ(r.plans[0].chunks, (std::vector<std::size_t>{2, 2, 2}));
    EXPECT_EQ(r.graph.outputs, std::vector<std::string>{"act.cat"});
    for (const char *id : {"act.lo.slice", "act.lo", "act.mid.slice", "act.mid", "act.hi.slice", "act.hi", "act.cat"})
        EXPECT_NE(r.graph.find(id), nullptr) << id;
    const NamedTensors in{{"x", Tensor::vector({-1, 2, -3, 4, -5, 6})}};
    EXPECT_EQ(execute(r.graph, in).values[0], Tensor::vector({0, 2, 0, 4, 0, 6}));
}

TEST(SplitActivation, SevenElementsGelu) {
    const Graph g = single_activation(LayerKind::GELU, {2, 7});
    const TransformResult r = split_activation(g, "act");
    ASSERT_EQ(r.plans.size(), 1u);
    EXPECT_EQ(r.plans[0].chunks, (std::vector<std::size_t>{3, 2, 2}));
    corpus::Gen gen(4);
    const NamedTensors in{{"x", gen.normal_tensor({2, 7}, 2.0f)}};
    EXPECT_EQ(execute(g, in).values[0], execute(r.graph, in).values[0]);
}

TEST(SplitActivation, ShortAxisIsSkipped) {
    const Graph g = single_activation(LayerKind::ReLU, {2});
    const TransformResult r = split_activation(g, "act");
    EXPECT_TRUE(r.plans.empty());
    EXPECT_TRUE(has_rule(r.diagnostics, "split-skipped"));
    EXPECT_EQ(r.graph.layers.size(), 1u);
}

TEST(FoldBatchNorm, IdentityBatchNormIsNoOp) {
    Graph g = linear_example();
    Layer bn;
    bn.id = "bn";
    bn.kind = LayerKind::BatchNorm;
    bn.inputs = {"fc"};
    bn.attrs.epsilon = 0.0f;
    bn.params.emplace("gamma", Tensor({2}, 1.0f));
    bn.params.emplace("beta", Tensor({2}));
    bn.params.emplace("running_mean", Tensor({2}));
    bn.params.emplace("running_var", Tensor({2}, 1.0f));
    g.layers.push_back(bn);
    g.outputs = {"bn"};
    const TransformResult r = fold_batchnorm(g);
    ASSERT_EQ(r.graph.layers.size(), 1u);
    EXPECT_EQ(r.graph.outputs, std::vector<std::string>{"fc"});
    EXPECT_EQ(r.graph.layers[0].params.at("weight"), g.layers[0].params.at("weight"));
    EXPECT_EQ(r.graph.layers[0].params.at("bias"), g.layers[0].params.at("bias"));
}

TEST(FoldBatchNorm, ScalarExample) {
    Graph g;
    g.inputs.push_back({"x", {1}});
    Layer fc;
    fc.id = "fc";
    fc.kind = LayerKind::Linear;
    fc.inputs = {"x"};
    fc.params.emplace("weight", Tensor::matrix({{2}}));
    fc.params.emplace("bias", Tensor::vector({0}));
    Layer bn;
    bn.id = "bn";
    bn.kind = LayerKind::BatchNorm;
    bn.inputs = {"fc"};
    bn.attrs.epsilon = 0.0f;
    bn.params.emplace("gamma", Tensor::vector({3}));
    bn.params.emplace("beta", Tensor::vector({1}));
    bn.params.emplace("running_mean", Tensor::vector({0}));
    bn.params.emplace("running_var", Tensor::vector({1}));
    g.layers = {fc, bn};
    g.outputs = {"bn"};
    const TransformResult r = fold_batchnorm(g);
    ASSERT_EQ(r.graph.layers.size(), 1u);
    EXPECT_EQ(r.graph.layers[0].params.at("weight"), Tensor::matrix({{6}}));
    EXPECT_EQ(r.graph.layers[0].params.at("bias"), Tensor::vector({1}));
}

TEST(FoldBatchNorm, PreservesOutputsOnRandomModels) {
    int folded = 0;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const Graph g = corpus::random_model(seed);
        const TransformResult r = fold_batchnorm(g);
        folded += static_cast<int>(count_kind(g, LayerKind::BatchNorm) - count_kind(r.graph, LayerKind::BatchNorm));
        EXPECT_TRUE(validate(r.graph).empty());
        corpus::Gen gen(seed + 5);
        for (int i = 0; i < 5; ++i) {
            const auto in = corpus::random_inputs(g, gen);
            const auto a = execute(g, in).values;
            const auto b = execute(r.graph, in).values;
            ASSERT_EQ(a.size(), b.size());
            for (std::size_t k = 0; k < a.size(); ++k) expect_close(a[k], b[k], 1e-5);
        }
    }
    EXPECT_GT(folded, 0);
}

TEST(FoldBatchNorm, SharedProducerIsKept) {
    Graph g = linear_example();
    Layer bn;
    bn.id = "bn";
    bn.kind = LayerKind::BatchNorm;
    bn.inputs = {"fc"};
    bn.params.emplace("gamma", Tensor({2}, 2.0f));
    bn.params.emplace("beta", Tensor({2}));
    bn.params.emplace("running_mean", Tensor({2}));
    bn.params.emplace("running_var", Tensor({2}, 1.0f));
    g.layers.push_back(bn);
    g.outputs = {"bn", "fc"};
    const TransformResult r = fold_batchnorm(g);
    EXPECT_EQ(r.graph.layers.size(), 2u);
    EXPECT_TRUE(has_rule(r.diagnostics, "fold-skipped"));
}

TEST(ApplySplitQuant, AllDisabledIsUnchanged) {
    const Graph g = corpus::random_model(4);
    const TransformResult r = apply_splitquant(g, TransformConfig{false, false, false, 0});
    EXPECT_TRUE(r.plans.empty());
    ASSERT_EQ(r.graph.layers.size(), g.layers.size());
    corpus::Gen gen(1);
    const auto in = corpus::random_inputs(g, gen);
    EXPECT_EQ(execute(g, in).values, execute(r.graph, in).values);
}

TEST(ApplySplitQuant, WeightOnlyLeavesActivations) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Graph g = corpus::random_model(seed);
        const TransformResult r = apply_splitquant(g, TransformConfig{true, false, true, seed});
        EXPECT_EQ(count_kind(r.graph, LayerKind::Slice), 0u);
        EXPECT_EQ(count_kind(r.graph, LayerKind::Concat), 0u);
        EXPECT_EQ(count_kind(r.graph, LayerKind::ReLU) + count_kind(r.graph, LayerKind::GELU),
                  count_kind(g, LayerKind::ReLU) + count_kind(g, LayerKind::GELU));
    }
}

TEST(ApplySplitQuant, FullPipelineOnSmallGraph) {
    Graph g = linear_example();
    Layer relu;
    relu.id = "relu";
    relu.kind = LayerKind::ReLU;
    relu.inputs = {"fc"};
    g.layers.push_back(relu);
    g.outputs = {"relu"};
    const TransformResult r = apply_splitquant(g, TransformConfig{});
    ASSERT_EQ(r.plans.size(), 1u);  // the ReLU has only two elements
    EXPECT_TRUE(has_rule(r.diagnostics, "split-skipped"));
    EXPECT_EQ(r.graph.find("relu")->inputs, std::vector<std::string>{"fc.add1"});
    const NamedTensors in{{"x", Tensor::vector({1, 1})}};
    expect_close(execute(g, in).values[0], execute(r.graph, in).values[0], 1e-6);
}

TEST(ApplySplitQuant, SecondApplicationChangesNothing) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const TransformResult once = apply_splitquant(corpus::random_model(seed), TransformConfig{});
        const TransformResult twice = apply_splitquant(once.graph, TransformConfig{});
        EXPECT_TRUE(twice.plans.empty());
        EXPECT_EQ(twice.graph.layers.size(), once.graph.layers.size());
    }
}

TEST(ApplySplitQuant, RejectsInvalidGraph) {
    Graph g = linear_example();
    g.outputs = {"missing"};
    EXPECT_THROW(apply_splitquant(g, TransformConfig{}), GraphError);
}
