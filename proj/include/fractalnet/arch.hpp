#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fractalnet/errors.hpp"
#include "fractalnet/ops.hpp"

namespace fractalnet {

using ops::Activation;

enum class Norm { batch_norm, none };
enum class PostConvOp { norm, activation, dropout };
enum class ChannelGrowth { double_per_block, constant };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::gelu: return "gelu";
        case Activation::silu: return "silu";
    }
    return "?";
}

inline const char* to_string(Norm n) { return n == Norm::batch_norm ? "batch_norm" : "none"; }

inline const char* to_string(ChannelGrowth g) {
    return g == ChannelGrowth::double_per_block ? "double_per_block" : "constant";
}

inline char op_letter(PostConvOp op) {
    switch (op) {
        case PostConvOp::norm: return 'n';
        case PostConvOp::activation: return 'a';
        case PostConvOp::dropout: return 'd';
    }
    return '?';
}

// conv + configurable tail of {norm, activation, dropout}
struct ConvUnitSpec {
    int kernel_size = 3;
    Norm norm = Norm::batch_norm;
    Activation activation = Activation::relu;
    float dropout_p = 0.0f;
    std::vector<PostConvOp> post_conv_order{PostConvOp::norm, PostConvOp::activation,
                                            PostConvOp::dropout};

    bool operator==(const ConvUnitSpec&) const = default;
};

inline void validate(const ConvUnitSpec& u) {
    if (u.kernel_size < 1 || u.kernel_size % 2 == 0)
        throw ShapeError("conv unit: kernel_size must be positive and odd");
    if (u.dropout_p < 0.0f || u.dropout_p >= 1.0f)
        throw ShapeError("conv unit: dropout_p must be in [0,1)");
    int seen[3] = {0, 0, 0};
    for (PostConvOp op : u.post_conv_order) seen[static_cast<int>(op)]++;
    if (seen[0] > 1 || seen[1] > 1 || seen[2] > 1)
        throw ShapeError("conv unit: duplicate op in post_conv_order");
}

struct ModelSpec {
    int depth_n = 1;       // stacked fractal blocks
    int num_columns = 1;   // C of the expansion rule
    ConvUnitSpec unit;
    int base_channels = 16;
    ChannelGrowth channel_growth = ChannelGrowth::double_per_block;
    int num_classes = 10;
    std::array<int, 3> input_shape{3, 32, 32};  // (channels, height, width)

    bool operator==(const ModelSpec&) const = default;
};

// Canonical identity string; a pure function of every field.
inline std::string model_id(const ModelSpec& s) {
    std::ostringstream os;
    os << "N" << s.depth_n << "-C" << s.num_columns << "-k" << s.unit.kernel_size << "-"
       << to_string(s.unit.activation) << "-"
       << (s.unit.norm == Norm::batch_norm ? "bn" : "nonorm") << "-do";
    os.precision(2);
    os << std::fixed << s.unit.dropout_p << "-ord_";
    if (s.unit.post_conv_order.empty()) os << "0";
    for (PostConvOp op : s.unit.post_conv_order) os << op_letter(op);
    os << "-b" << s.base_channels
       << (s.channel_growth == ChannelGrowth::double_per_block ? "-gx2" : "-gx1") << "-cls"
       << s.num_classes << "-in" << s.input_shape[0] << "x" << s.input_shape[1] << "x"
       << s.input_shape[2];
    return os.str();
}

// ---------------------------------------------------------------------------
// computation graph
// ---------------------------------------------------------------------------

enum class OpKind {
    input,
    conv,
    batch_norm,
    activation,
    dropout,
    join_mean,
    max_pool,
    global_avg_pool,
    linear,
};

struct LayerNode {
    OpKind kind = OpKind::input;
    std::vector<int> inputs;
    int in_channels = 0;   // conv / linear in-features
    int out_channels = 0;  // conv out / bn channels / linear out-features
    int kernel = 0;
    Activation act = Activation::relu;
    float dropout_p = 0.0f;
    int block = -1;  // fractal block index; -1 for stem/head nodes
    std::vector<int64_t> out_shape;  // per-sample shape, (C,H,W) or (F)

    bool operator==(const LayerNode&) const = default;
};

struct ComputationGraph {
    std::vector<LayerNode> nodes;
    int output_node = -1;

    bool operator==(const ComputationGraph&) const = default;
};

namespace detail {

inline int add_node(ComputationGraph& g, LayerNode n) {
    for (int src : n.inputs)
        if (src < 0 || src >= static_cast<int>(g.nodes.size()))
            throw ShapeError("graph: node input must precede it");
    g.nodes.push_back(std::move(n));
    return static_cast<int>(g.nodes.size()) - 1;
}

inline std::vector<int64_t> node_input_shape(const ComputationGraph& g, const LayerNode& n) {
    return g.nodes[n.inputs.at(0)].out_shape;
}

// conv unit: conv followed by the active post-conv ops in configured order
inline int emit_conv_unit(ComputationGraph& g, const ConvUnitSpec& u, int in_ch, int out_ch,
                          int src, int block) {
    auto spatial = g.nodes[src].out_shape;
    LayerNode conv;
    conv.kind = OpKind::conv;
    conv.inputs = {src};
    conv.in_channels = in_ch;
    conv.out_channels = out_ch;
    conv.kernel = u.kernel_size;
    conv.block = block;
    conv.out_shape = {out_ch, spatial[1], spatial[2]};
    int cur = add_node(g, std::move(conv));

    for (PostConvOp op : u.post_conv_order) {
        if (op == PostConvOp::norm && u.norm == Norm::none) continue;
        if (op == PostConvOp::dropout && u.dropout_p == 0.0f) continue;
        LayerNode n;
        n.inputs = {cur};
        n.block = block;
        n.out_shape = g.nodes[cur].out_shape;
        switch (op) {
            case PostConvOp::norm:
                n.kind = OpKind::batch_norm;
                n.out_channels = out_ch;
                break;
            case PostConvOp::activation:
                n.kind = OpKind::activation;
                n.act = u.activation;
                break;
            case PostConvOp::dropout:
                n.kind = OpKind::dropout;
                n.dropout_p = u.dropout_p;
                break;
        }
        cur = add_node(g, std::move(n));
    }
    return cur;
}

// f1(z) = unit(z); f_{C+1}(z) = join(f_C(f_C(z)), unit(z))
inline int expand_fractal_into(ComputationGraph& g, int columns, const ConvUnitSpec& u,
                               int in_ch, int out_ch, int src, int block) {
    if (columns < 1) throw ShapeError("expand_fractal: columns must be >= 1");
    if (columns == 1) return emit_conv_unit(g, u, in_ch, out_ch, src, block);
    int deep = expand_fractal_into(g, columns - 1, u, in_ch, out_ch, src, block);
    deep = expand_fractal_into(g, columns - 1, u, out_ch, out_ch, deep, block);
    int shallow = emit_conv_unit(g, u, in_ch, out_ch, src, block);
    LayerNode join;
    join.kind = OpKind::join_mean;
    join.inputs = {deep, shallow};
    join.block = block;
    if (g.nodes[deep].out_shape != g.nodes[shallow].out_shape)
        throw ShapeError("join: input shape mismatch");
    join.out_shape = g.nodes[deep].out_shape;
    return add_node(g, std::move(join));
}

}  // namespace detail

// Standalone fragment: input node + one expanded fractal block.
inline ComputationGraph expand_fractal(int columns, const ConvUnitSpec& unit, int in_channels,
                                       int out_channels, std::array<int, 2> spatial = {32, 32}) {
    validate(unit);
    if (in_channels < 1 || out_channels < 1) throw ShapeError("expand_fractal: channels must be positive");
    ComputationGraph g;
    LayerNode in;
    in.kind = OpKind::input;
    in.out_shape = {in_channels, spatial[0], spatial[1]};
    detail::add_node(g, std::move(in));
    g.output_node = detail::expand_fractal_into(g, columns, unit, in_channels, out_channels, 0, 0);
    return g;
}

inline void validate(const ModelSpec& s) {
    validate(s.unit);
    if (s.depth_n < 1) throw ShapeError("model: depth_n must be >= 1");
    if (s.num_columns < 1) throw ShapeError("model: num_columns must be >= 1");
    if (s.base_channels < 1) throw ShapeError("model: base_channels must be positive");
    if (s.num_classes < 1) throw ShapeError("model: num_classes must be positive");
    for (int d : s.input_shape)
        if (d < 1) throw ShapeError("model: input_shape must be positive");
}

// depth_n fractal blocks, each followed by a 2x2/stride-2 max pool,
// then global average pool + linear head.
inline ComputationGraph build_model(const ModelSpec& spec) {
    validate(spec);
    ComputationGraph g;
    LayerNode in;
    in.kind = OpKind::input;
    in.out_shape = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    int cur = detail::add_node(g, std::move(in));

    int in_ch = spec.input_shape[0];
    for (int b = 0; b < spec.depth_n; ++b) {
        const int out_ch = spec.channel_growth == ChannelGrowth::double_per_block
                               ? spec.base_channels << b
                               : spec.base_channels;
        cur = detail::expand_fractal_into(g, spec.num_columns, spec.unit, in_ch, out_ch, cur, b);

        const auto& s = g.nodes[cur].out_shape;
        if (s[1] < 2 || s[2] < 2)
            throw ShapeError("build_model: pooling would reduce spatial size below 1x1 (depth_n too large for input)");
        LayerNode pool;
        pool.kind = OpKind::max_pool;
        pool.inputs = {cur};
        pool.out_shape = {s[0], s[1] / 2, s[2] / 2};
        cur = detail::add_node(g, std::move(pool));
        in_ch = out_ch;
    }

    LayerNode gap;
    gap.kind = OpKind::global_avg_pool;
    gap.inputs = {cur};
    gap.out_shape = {g.nodes[cur].out_shape[0]};
    cur = detail::add_node(g, std::move(gap));

    LayerNode head;
    head.kind = OpKind::linear;
    head.inputs = {cur};
    head.in_channels = static_cast<int>(g.nodes[cur].out_shape[0]);
    head.out_channels = spec.num_classes;
    head.out_shape = {spec.num_classes};
    g.output_node = detail::add_node(g, std::move(head));
    return g;
}

// trainable scalar parameter count of a node
inline int64_t node_param_count(const LayerNode& n) {
    switch (n.kind) {
        case OpKind::conv:
            return static_cast<int64_t>(n.out_channels) * n.in_channels * n.kernel * n.kernel +
                   n.out_channels;
        case OpKind::batch_norm:
            return 2LL * n.out_channels;  // scale + shift (running stats are not trainable)
        case OpKind::linear:
            return static_cast<int64_t>(n.out_channels) * n.in_channels + n.out_channels;
        default:
            return 0;
    }
}

inline int64_t param_count(const ModelSpec& spec) {
    const ComputationGraph g = build_model(spec);
    int64_t total = 0;
    for (const LayerNode& n : g.nodes) total += node_param_count(n);
    return total;
}

// ---------------------------------------------------------------------------
// ModelSpec serialization (flat json record, every field explicit)
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ModelSpec& s) {
    std::string order;
    for (PostConvOp op : s.unit.post_conv_order) order.push_back(op_letter(op));
    return nlohmann::json{
        {"depth_n", s.depth_n},
        {"num_columns", s.num_columns},
        {"kernel_size", s.unit.kernel_size},
        {"norm", to_string(s.unit.norm)},
        {"activation", to_string(s.unit.activation)},
        {"dropout_p", s.unit.dropout_p},
        {"post_conv_order", order},
        {"base_channels", s.base_channels},
        {"channel_growth", to_string(s.channel_growth)},
        {"num_classes", s.num_classes},
        {"input_shape", s.input_shape},
        {"model_id", model_id(s)},
    };
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "leaky_relu") return Activation::leaky_relu;
    if (s == "gelu") return Activation::gelu;
    if (s == "silu") return Activation::silu;
    throw FormatError("unknown activation: " + s);
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.depth_n = j.at("depth_n").get<int>();
    s.num_columns = j.at("num_columns").get<int>();
    s.unit.kernel_size = j.at("kernel_size").get<int>();
    const std::string norm = j.at("norm").get<std::string>();
    if (norm == "batch_norm") s.unit.norm = Norm::batch_norm;
    else if (norm == "none") s.unit.norm = Norm::none;
    else throw FormatError("unknown norm: " + norm);
    s.unit.activation = activation_from_string(j.at("activation").get<std::string>());
    s.unit.dropout_p = j.at("dropout_p").get<float>();
    s.unit.post_conv_order.clear();
    for (char c : j.at("post_conv_order").get<std::string>()) {
        switch (c) {
            case 'n': s.unit.post_conv_order.push_back(PostConvOp::norm); break;
            case 'a': s.unit.post_conv_order.push_back(PostConvOp::activation); break;
            case 'd': s.unit.post_conv_order.push_back(PostConvOp::dropout); break;
            default: throw FormatError("unknown post-conv op letter");
        }
    }
    s.base_channels = j.at("base_channels").get<int>();
    const std::string growth = j.at("channel_growth").get<std::string>();
    if (growth == "double_per_block") s.channel_growth = ChannelGrowth::double_per_block;
    else if (growth == "constant") s.channel_growth = ChannelGrowth::constant;
    else throw FormatError("unknown channel_growth: " + growth);
    s.num_classes = j.at("num_classes").get<int>();
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw FormatError("input_shape must have 3 entries");
    s.input_shape = {shape[0], shape[1], shape[2]};
    if (j.contains("model_id") && j.at("model_id").get<std::string>() != model_id(s))
        throw FormatError("model_id does not match spec fields");
    return s;
}

}  // namespace fractalnet
