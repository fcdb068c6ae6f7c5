#include <gtest/gtest.h>

#include <set>

#include "fractalnet/arch.hpp"
#include "fractalnet/generator.hpp"

using namespace fractalnet;

namespace {

ConvUnitSpec bare_unit() {
    ConvUnitSpec u;
    u.kernel_size = 3;
    u.norm = Norm::none;
    u.activation = Activation::relu;
    u.dropout_p = 0.0f;
    u.post_conv_order = {PostConvOp::activation};
    return u;
}

int count_kind(const ComputationGraph& g, OpKind k) {
    int n = 0;
    for (const auto& node : g.nodes) n += node.kind == k;
    return n;
}

// brute-force longest/shortest conv path from the input to a node
struct PathLens {
    std::vector<int> longest, shortest;
};

PathLens conv_path_lengths(const ComputationGraph& g) {
    PathLens p;
    p.longest.assign(g.nodes.size(), 0);
    p.shortest.assign(g.nodes.size(), 0);
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const auto& n = g.nodes[i];
        if (n.inputs.empty()) continue;
        int lo = 1 << 30, hi = 0;
        for (int j : n.inputs) {
            lo = std::min(lo, p.shortest[static_cast<size_t>(j)]);
            hi = std::max(hi, p.longest[static_cast<size_t>(j)]);
        }
        const int add = n.kind == OpKind::conv ? 1 : 0;
        p.shortest[i] = lo + add;
        p.longest[i] = hi + add;
    }
    return p;
}

}  // namespace

TEST(ExpandFractal, SingleColumnIsOneUnit) {
    auto g = expand_fractal(1, bare_unit(), 3, 8);
    EXPECT_EQ(count_kind(g, OpKind::conv), 1);
    EXPECT_EQ(count_kind(g, OpKind::join_mean), 0);
}

TEST(ExpandFractal, TwoColumns) {
    auto g = expand_fractal(2, bare_unit(), 3, 8);
    EXPECT_EQ(count_kind(g, OpKind::conv), 3);
    EXPECT_EQ(count_kind(g, OpKind::join_mean), 1);
    EXPECT_EQ(g.nodes[static_cast<size_t>(g.output_node)].inputs.size(), 2u);
    auto p = conv_path_lengths(g);
    EXPECT_EQ(p.longest[static_cast<size_t>(g.output_node)], 2);
    EXPECT_EQ(p.shortest[static_cast<size_t>(g.output_node)], 1);
}

TEST(ExpandFractal, ThreeColumns) {
    auto g = expand_fractal(3, bare_unit(), 3, 8);
    EXPECT_EQ(count_kind(g, OpKind::conv), 7);
    EXPECT_EQ(count_kind(g, OpKind::join_mean), 3);
    auto p = conv_path_lengths(g);
    EXPECT_EQ(p.longest[static_cast<size_t>(g.output_node)], 4);
    EXPECT_EQ(p.shortest[static_cast<size_t>(g.output_node)], 1);
}

// u(C) = 2^C - 1 conv units, j(C) = 2^{C-1} - 1 joins, longest path
// 2^{C-1}, shortest 1
TEST(ExpandFractal, RecurrenceUpToSixColumns) {
    for (int c = 1; c <= 6; ++c) {
        auto g = expand_fractal(c, bare_unit(), 3, 8, {8, 8});
        EXPECT_EQ(count_kind(g, OpKind::conv), (1 << c) - 1) << "C=" << c;
        EXPECT_EQ(count_kind(g, OpKind::join_mean), (1 << (c - 1)) - 1) << "C=" << c;
        auto p = conv_path_lengths(g);
        EXPECT_EQ(p.longest[static_cast<size_t>(g.output_node)], 1 << (c - 1)) << "C=" << c;
        EXPECT_EQ(p.shortest[static_cast<size_t>(g.output_node)], 1) << "C=" << c;
    }
}

TEST(ExpandFractal, JoinInputShapesMatchAndDagOrder) {
    ConvUnitSpec u;
    u.dropout_p = 0.3f;
    auto g = expand_fractal(4, u, 3, 16);
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const auto& n = g.nodes[i];
        for (int j : n.inputs) ASSERT_LT(j, static_cast<int>(i));
        if (n.kind == OpKind::join_mean) {
            ASSERT_GE(n.inputs.size(), 2u);
            for (int j : n.inputs)
                EXPECT_EQ(g.nodes[static_cast<size_t>(j)].out_shape, n.out_shape);
        }
    }
}

TEST(ExpandFractal, ChannelMapping) {
    auto g = expand_fractal(3, bare_unit(), 3, 8);
    int first_on_path = 0;
    for (const auto& n : g.nodes)
        if (n.kind == OpKind::conv) {
            EXPECT_EQ(n.out_channels, 8);
            EXPECT_TRUE(n.in_channels == 3 || n.in_channels == 8);
            first_on_path += n.in_channels == 3;
        }
    // one in->out unit per column
    EXPECT_EQ(first_on_path, 3);
}

TEST(BuildModel, SmallestConfiguration) {
    ModelSpec s;
    s.depth_n = 1;
    s.num_columns = 1;
    s.base_channels = 8;
    s.num_classes = 10;
    s.unit = bare_unit();
    s.unit.post_conv_order = {};
    auto g = build_model(s);
    // conv -> pool -> gap -> linear (plus input)
    ASSERT_EQ(g.nodes.size(), 5u);
    EXPECT_EQ(g.nodes[1].kind, OpKind::conv);
    EXPECT_EQ(g.nodes[2].kind, OpKind::max_pool);
    EXPECT_EQ(g.nodes[3].kind, OpKind::global_avg_pool);
    EXPECT_EQ(g.nodes[4].kind, OpKind::linear);
    EXPECT_EQ(g.nodes[4].out_shape, (std::vector<int64_t>{10}));
    EXPECT_EQ(g.nodes[4].in_channels, 8);
}

TEST(BuildModel, TooDeepForInputThrows) {
    ModelSpec s;
    s.depth_n = 6;
    s.num_columns = 1;
    s.unit = bare_unit();
    s.input_shape = {3, 8, 8};
    EXPECT_THROW(build_model(s), ShapeError);
}

TEST(BuildModel, TwoBlocksDoubling) {
    ModelSpec s;
    s.depth_n = 2;
    s.num_columns = 2;
    s.base_channels = 16;
    s.channel_growth = ChannelGrowth::double_per_block;
    s.unit = bare_unit();
    auto g = build_model(s);
    EXPECT_EQ(count_kind(g, OpKind::conv), 6);
    int b1_in3 = 0, b2_in16 = 0;
    for (const auto& n : g.nodes) {
        if (n.kind != OpKind::conv) continue;
        if (n.block == 0) {
            EXPECT_EQ(n.out_channels, 16);
            b1_in3 += n.in_channels == 3;
        } else {
            EXPECT_EQ(n.block, 1);
            EXPECT_EQ(n.out_channels, 32);
            b2_in16 += n.in_channels == 16;
        }
    }
    EXPECT_EQ(b1_in3, 2);
    EXPECT_EQ(b2_in16, 2);
}

TEST(BuildModel, Deterministic) {
    ModelSpec s;
    s.depth_n = 3;
    s.num_columns = 3;
    s.unit.dropout_p = 0.2f;
    auto a = build_model(s);
    auto b = build_model(s);
    ASSERT_EQ(a.nodes.size(), b.nodes.size());
    for (size_t i = 0; i < a.nodes.size(); ++i) EXPECT_EQ(a.nodes[i], b.nodes[i]);
    EXPECT_EQ(a.output_node, b.output_node);
}

namespace {

// analytic parameter count, independent of the graph walk
int64_t analytic_param_count(const ModelSpec& s) {
    int64_t total = 0;
    int in_ch = s.input_shape[0];
    for (int b = 0; b < s.depth_n; ++b) {
        const int out_ch = s.channel_growth == ChannelGrowth::double_per_block
                               ? s.base_channels << b
                               : s.base_channels;
        const int64_t units = (1LL << s.num_columns) - 1;
        const int64_t first = s.num_columns;  // one in->out unit per column
        const int64_t k2 = static_cast<int64_t>(s.unit.kernel_size) * s.unit.kernel_size;
        total += first * (k2 * in_ch * out_ch + out_ch);
        total += (units - first) * (k2 * out_ch * out_ch + out_ch);
        bool has_norm = false;
        for (auto op : s.unit.post_conv_order)
            has_norm |= op == PostConvOp::norm && s.unit.norm == Norm::batch_norm;
        if (has_norm) total += units * 2LL * out_ch;
        in_ch = out_ch;
    }
    total += static_cast<int64_t>(in_ch) * s.num_classes + s.num_classes;
    return total;
}

}  // namespace

TEST(ParamCount, HandArithmetic) {
    ModelSpec s;
    s.depth_n = 1;
    s.num_columns = 1;
    s.base_channels = 8;
    s.unit = bare_unit();
    s.unit.post_conv_order = {};
    // conv 3*8*9+8 = 224, linear 8*10+10 = 90
    EXPECT_EQ(param_count(s), 314);

    s.unit.norm = Norm::batch_norm;
    s.unit.post_conv_order = {PostConvOp::norm};
    EXPECT_EQ(param_count(s), 314 + 16);
}

TEST(ParamCount, MatchesAnalyticFormulaAcrossGrid) {
    for (const auto& e : enumerate(default_search_space())) {
        if (!e.feasible) continue;
        EXPECT_EQ(param_count(e.spec), analytic_param_count(e.spec)) << e.model_id;
    }
}

TEST(SpecSerde, RoundTripIsIdentity) {
    ModelSpec s;
    s.depth_n = 3;
    s.num_columns = 4;
    s.unit.activation = Activation::gelu;
    s.unit.dropout_p = 0.4f;
    s.unit.post_conv_order = {PostConvOp::dropout, PostConvOp::activation, PostConvOp::norm};
    s.channel_growth = ChannelGrowth::constant;
    const auto j = to_json(s);
    EXPECT_EQ(spec_from_json(j), s);
    EXPECT_EQ(to_json(spec_from_json(j)), j);
}

TEST(SpecSerde, TamperedIdRejected) {
    ModelSpec s;
    auto j = to_json(s);
    j["model_id"] = "bogus";
    EXPECT_THROW(spec_from_json(j), FormatError);
}

TEST(ModelId, PureFunctionOfFields) {
    ModelSpec a, b;
    EXPECT_EQ(model_id(a), model_id(b));
    b.depth_n = 2;
    EXPECT_NE(model_id(a), model_id(b));
}

TEST(ConvUnit, InvariantsEnforced) {
    ConvUnitSpec u;
    u.kernel_size = 4;
    EXPECT_THROW(validate(u), ShapeError);
    u.kernel_size = 3;
    u.dropout_p = 1.0f;
    EXPECT_THROW(validate(u), ShapeError);
    u.dropout_p = 0.2f;
    u.post_conv_order = {PostConvOp::norm, PostConvOp::norm};
    EXPECT_THROW(validate(u), ShapeError);
}
