#pragma once

#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fractalnet/arch.hpp"
#include "fractalnet/ops.hpp"
#include "fractalnet/rng.hpp"
#include "fractalnet/tensor.hpp"

namespace fractalnet {

enum class Mode { train, eval };

// Counts retained forward activations in f32 scalars (not device bytes).
struct MemoryLedger {
    int64_t current = 0;
    int64_t peak = 0;

    void add(int64_t n) {
        current += n;
        if (current > peak) peak = current;
    }
    void remove(int64_t n) { current -= n; }
};

// Per-node trainable tensors; unused slots stay empty.
struct NodeParams {
    Tensor weight;             // conv / linear
    Tensor bias;               // conv / linear
    Tensor gamma, beta;        // batch norm scale / shift
    Tensor run_mean, run_var;  // batch norm running statistics
};

struct ModelState {
    std::vector<NodeParams> params;    // parallel to graph.nodes
    std::vector<NodeParams> velocity;  // momentum buffers (trainables only)
    uint64_t seed = 0;
    int64_t step = 0;  // optimization step counter, drives dropout streams
    Mode mode = Mode::train;
};

// He-style init for conv/linear weights, zero bias; bn gamma 1, beta 0.
inline ModelState init_state(const ComputationGraph& g, uint64_t seed) {
    ModelState st;
    st.seed = seed;
    st.params.resize(g.nodes.size());
    st.velocity.resize(g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const LayerNode& n = g.nodes[i];
        NodeParams& p = st.params[i];
        NodeParams& v = st.velocity[i];
        Rng rng(mix_seed(seed, 0x1717u, i));
        switch (n.kind) {
            case OpKind::conv: {
                const int64_t fan_in = static_cast<int64_t>(n.in_channels) * n.kernel * n.kernel;
                const float std = std::sqrt(2.0f / static_cast<float>(fan_in));
                p.weight = Tensor::randn({n.out_channels, n.in_channels, n.kernel, n.kernel}, rng, std);
                p.bias = Tensor::zeros({n.out_channels});
                v.weight = Tensor::zeros(p.weight.shape);
                v.bias = Tensor::zeros(p.bias.shape);
                break;
            }
            case OpKind::linear: {
                const float std = std::sqrt(2.0f / static_cast<float>(n.in_channels));
                p.weight = Tensor::randn({n.out_channels, n.in_channels}, rng, std);
                p.bias = Tensor::zeros({n.out_channels});
                v.weight = Tensor::zeros(p.weight.shape);
                v.bias = Tensor::zeros(p.bias.shape);
                break;
            }
            case OpKind::batch_norm: {
                p.gamma = Tensor::full({n.out_channels}, 1.0f);
                p.beta = Tensor::zeros({n.out_channels});
                p.run_mean = Tensor::zeros({n.out_channels});
                p.run_var = Tensor::full({n.out_channels}, 1.0f);
                v.gamma = Tensor::zeros({n.out_channels});
                v.beta = Tensor::zeros({n.out_channels});
                break;
            }
            default:
                break;
        }
    }
    return st;
}

inline uint64_t dropout_seed(const ModelState& st, int node_id, int64_t step) {
    return mix_seed(st.seed, static_cast<uint64_t>(node_id) + 0xd70ULL,
                    static_cast<uint64_t>(step));
}

// Forward record. With checkpointing on, only stem/head nodes and each
// fractal block's output are retained; intra-block activations are
// recomputed during backprop.
struct Tape {
    std::vector<std::optional<Tensor>> out;
    std::vector<char> stored;  // retained for backward (vs transient)
    int64_t step = 0;
    Mode mode = Mode::train;
    bool checkpointing = false;
};

namespace detail {

// per-graph static layout facts used by forward/backward
struct GraphLayout {
    std::vector<int> consumers;       // consumer count per node
    std::vector<char> keep;           // retained under checkpointing
    std::vector<std::pair<int, int>> block_range;  // [min,max] node index per block
};

inline GraphLayout layout_of(const ComputationGraph& g) {
    GraphLayout L;
    const int n = static_cast<int>(g.nodes.size());
    L.consumers.assign(n, 0);
    L.keep.assign(n, 0);
    int max_block = -1;
    for (const LayerNode& node : g.nodes) max_block = std::max(max_block, node.block);
    L.block_range.assign(max_block + 1, {n, -1});
    for (int i = 0; i < n; ++i) {
        const LayerNode& node = g.nodes[i];
        for (int j : node.inputs) L.consumers[j]++;
        if (node.block < 0) {
            L.keep[i] = 1;
        } else {
            auto& r = L.block_range[node.block];
            r.first = std::min(r.first, i);
            r.second = std::max(r.second, i);
        }
    }
    // block outputs feed a node outside the block; they are checkpoints
    for (int i = 0; i < n; ++i)
        for (int j : g.nodes[i].inputs)
            if (g.nodes[j].block >= 0 && g.nodes[j].block != g.nodes[i].block) L.keep[j] = 1;
    if (g.output_node >= 0) L.keep[g.output_node] = 1;
    return L;
}

inline Tensor compute_node(const ComputationGraph& g, int i, const Tape& tape, ModelState& state,
                           const Tensor& input_batch, bool update_running) {
    const LayerNode& n = g.nodes[i];
    auto in = [&](int k) -> const Tensor& { return *tape.out[n.inputs[static_cast<size_t>(k)]]; };
    const bool train = tape.mode == Mode::train;
    switch (n.kind) {
        case OpKind::input:
            return input_batch;
        case OpKind::conv:
            return ops::conv2d_forward(in(0), state.params[i].weight, state.params[i].bias);
        case OpKind::batch_norm: {
            auto r = ops::batchnorm_forward(in(0), state.params[i].gamma, state.params[i].beta,
                                            state.params[i].run_mean, state.params[i].run_var,
                                            train, update_running);
            return std::move(r.output);
        }
        case OpKind::activation:
            return ops::activation_forward(n.act, in(0));
        case OpKind::dropout:
            return ops::dropout_forward(in(0), n.dropout_p, dropout_seed(state, i, tape.step),
                                        train);
        case OpKind::join_mean: {
            std::vector<const Tensor*> ins;
            for (int j : n.inputs) ins.push_back(&*tape.out[j]);
            return ops::mean_join_forward(ins);
        }
        case OpKind::max_pool:
            return ops::maxpool2x2_forward(in(0));
        case OpKind::global_avg_pool:
            return ops::global_avg_pool_forward(in(0));
        case OpKind::linear:
            return ops::linear_forward(in(0), state.params[i].weight, state.params[i].bias);
    }
    throw ShapeError("compute_node: unknown op");
}

}  // namespace detail

// Runs the graph on a batch (N, C, H, W). Returns the tape; the output
// logits are tape.out[graph.output_node].
inline Tape run_graph(const ComputationGraph& g, const Tensor& input, ModelState& state,
                      Mode mode, bool checkpointing, MemoryLedger& ledger) {
    state.mode = mode;
    const auto L = detail::layout_of(g);
    Tape tape;
    tape.out.resize(g.nodes.size());
    tape.stored.assign(g.nodes.size(), 0);
    tape.step = state.step;
    tape.mode = mode;
    tape.checkpointing = checkpointing;

    std::vector<int> pending = L.consumers;
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) {
        Tensor out = detail::compute_node(g, i, tape, state, input, /*update_running=*/true);
        ledger.add(out.numel());
        tape.out[i] = std::move(out);
        tape.stored[i] = 1;
        if (checkpointing) {
            for (int j : g.nodes[i].inputs) {
                if (--pending[j] == 0 && !L.keep[j]) {
                    ledger.remove(tape.out[j]->numel());
                    tape.out[j].reset();
                    tape.stored[j] = 0;
                }
            }
        }
    }
    return tape;
}

struct NodeGrads {
    Tensor weight, bias, gamma, beta;
};

using ModelGrads = std::vector<NodeGrads>;

// Reverse pass over the tape. With checkpointing, discarded intra-block
// activations are recomputed from the block's stored input as the pass
// reaches them; dropout masks replay from the recorded step.
inline ModelGrads backprop(const ComputationGraph& g, Tape& tape, ModelState& state,
                           const Tensor& grad_output, MemoryLedger& ledger) {
    const auto L = detail::layout_of(g);
    const int n = static_cast<int>(g.nodes.size());
    ModelGrads grads(g.nodes.size());
    std::vector<std::optional<Tensor>> grad_act(g.nodes.size());
    grad_act[g.output_node] = grad_output;

    const bool train = tape.mode == Mode::train;
    // dummy input for compute_node; the input node is always stored
    static const Tensor kNoInput;

    auto accumulate = [&](int j, Tensor t) {
        if (!grad_act[j]) {
            grad_act[j] = std::move(t);
        } else {
            for (size_t k = 0; k < t.data.size(); ++k) grad_act[j]->data[k] += t.data[k];
        }
    };

    auto recompute_block = [&](int block, int before) {
        const auto [lo, hi] = L.block_range[static_cast<size_t>(block)];
        for (int i = lo; i <= hi && i < before; ++i) {
            if (tape.out[i]) continue;
            Tensor out = detail::compute_node(g, i, tape, state, kNoInput, /*update_running=*/false);
            ledger.add(out.numel());
            tape.out[i] = std::move(out);
        }
    };

    auto free_activation = [&](int i) {
        if (tape.checkpointing && tape.out[i]) {
            ledger.remove(tape.out[i]->numel());
            tape.out[i].reset();
        }
    };

    for (int i = n - 1; i >= 0; --i) {
        if (!grad_act[i]) continue;
        const LayerNode& node = g.nodes[i];
        if (node.kind == OpKind::input) {
            grad_act[i].reset();
            continue;
        }
        // materialize inputs that backward needs
        const bool needs_inputs =
            node.kind == OpKind::conv || node.kind == OpKind::batch_norm ||
            node.kind == OpKind::activation || node.kind == OpKind::max_pool ||
            node.kind == OpKind::linear;
        if (needs_inputs) {
            for (int j : node.inputs)
                if (!tape.out[j]) recompute_block(g.nodes[j].block, i);
        }
        const Tensor& up = *grad_act[i];
        switch (node.kind) {
            case OpKind::conv: {
                auto cg = ops::conv2d_backward(*tape.out[node.inputs[0]], state.params[i].weight, up);
                grads[i].weight = std::move(cg.grad_weight);
                grads[i].bias = std::move(cg.grad_bias);
                accumulate(node.inputs[0], std::move(cg.grad_input));
                break;
            }
            case OpKind::batch_norm: {
                const Tensor& x = *tape.out[node.inputs[0]];
                std::vector<float> mean, inv_std;
                if (train) {
                    // batch statistics are a pure function of the input
                    const int64_t bn = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
                    const int64_t cnt = bn * h * w;
                    mean.resize(c);
                    inv_std.resize(c);
                    for (int64_t ch = 0; ch < c; ++ch) {
                        double s = 0.0;
                        for (int64_t b0 = 0; b0 < bn; ++b0) {
                            const float* p = &x.at4(b0, ch, 0, 0);
                            for (int64_t k = 0; k < h * w; ++k) s += p[k];
                        }
                        const float m = static_cast<float>(s / cnt);
                        double sq = 0.0;
                        for (int64_t b0 = 0; b0 < bn; ++b0) {
                            const float* p = &x.at4(b0, ch, 0, 0);
                            for (int64_t k = 0; k < h * w; ++k) {
                                const double d = p[k] - m;
                                sq += d * d;
                            }
                        }
                        mean[ch] = m;
                        inv_std[ch] = 1.0f / std::sqrt(static_cast<float>(sq / cnt) + ops::kBnEps);
                    }
                } else {
                    const Tensor& rm = state.params[i].run_mean;
                    const Tensor& rv = state.params[i].run_var;
                    mean.assign(rm.data.begin(), rm.data.end());
                    inv_std.resize(rv.data.size());
                    for (size_t k = 0; k < rv.data.size(); ++k)
                        inv_std[k] = 1.0f / std::sqrt(rv.data[k] + ops::kBnEps);
                }
                auto bg = ops::batchnorm_backward(x, state.params[i].gamma, mean, inv_std, up, train);
                grads[i].gamma = std::move(bg.grad_gamma);
                grads[i].beta = std::move(bg.grad_beta);
                accumulate(node.inputs[0], std::move(bg.grad_input));
                break;
            }
            case OpKind::activation:
                accumulate(node.inputs[0],
                           ops::activation_backward(node.act, *tape.out[node.inputs[0]], up));
                break;
            case OpKind::dropout:
                accumulate(node.inputs[0],
                           ops::dropout_backward(up, node.dropout_p,
                                                 dropout_seed(state, i, tape.step), train));
                break;
            case OpKind::join_mean: {
                Tensor share = ops::mean_join_backward(up, node.inputs.size());
                for (size_t k = 0; k + 1 < node.inputs.size(); ++k)
                    accumulate(node.inputs[k], share);
                accumulate(node.inputs.back(), std::move(share));
                break;
            }
            case OpKind::max_pool:
                accumulate(node.inputs[0],
                           ops::maxpool2x2_backward(*tape.out[node.inputs[0]], up));
                break;
            case OpKind::global_avg_pool:
                accumulate(node.inputs[0],
                           ops::global_avg_pool_backward(
                               {up.shape[0], g.nodes[node.inputs[0]].out_shape[0],
                                g.nodes[node.inputs[0]].out_shape[1],
                                g.nodes[node.inputs[0]].out_shape[2]},
                               up));
                break;
            case OpKind::linear: {
                auto lg = ops::linear_backward(*tape.out[node.inputs[0]], state.params[i].weight, up);
                grads[i].weight = std::move(lg.grad_weight);
                grads[i].bias = std::move(lg.grad_bias);
                accumulate(node.inputs[0], std::move(lg.grad_input));
                break;
            }
            case OpKind::input:
                break;
        }
        grad_act[i].reset();
        free_activation(i);
    }
    return grads;
}

inline void apply_sgd(const ComputationGraph& g, ModelState& state, const ModelGrads& grads,
                      float lr, float momentum) {
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        switch (g.nodes[i].kind) {
            case OpKind::conv:
            case OpKind::linear:
                ops::sgd_step(state.params[i].weight, grads[i].weight, state.velocity[i].weight,
                              lr, momentum);
                ops::sgd_step(state.params[i].bias, grads[i].bias, state.velocity[i].bias, lr,
                              momentum);
                break;
            case OpKind::batch_norm:
                ops::sgd_step(state.params[i].gamma, grads[i].gamma, state.velocity[i].gamma, lr,
                              momentum);
                ops::sgd_step(state.params[i].beta, grads[i].beta, state.velocity[i].beta, lr,
                              momentum);
                break;
            default:
                break;
        }
    }
    state.step++;
}

// ---------------------------------------------------------------------------
// checkpoint file: binary, versioned, bit-exact round trip
// ---------------------------------------------------------------------------

inline constexpr uint32_t kCheckpointMagic = 0x464e4350;  // "FNCP"
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
inline int64_t read_i64(std::istream& is) {
    int64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
    write_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) write_i64(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

inline Tensor read_tensor(std::istream& is) {
    const uint32_t rank = read_u32(is);
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = read_i64(is);
    Tensor t(std::move(shape));
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    return t;
}

inline void write_node_params(std::ostream& os, const NodeParams& p) {
    const Tensor* slots[6] = {&p.weight, &p.bias, &p.gamma, &p.beta, &p.run_mean, &p.run_var};
    uint32_t mask = 0;
    for (int k = 0; k < 6; ++k)
        if (slots[k]->numel() > 0) mask |= 1u << k;
    write_u32(os, mask);
    for (int k = 0; k < 6; ++k)
        if (mask & (1u << k)) write_tensor(os, *slots[k]);
}

inline void read_node_params(std::istream& is, NodeParams& p) {
    Tensor* slots[6] = {&p.weight, &p.bias, &p.gamma, &p.beta, &p.run_mean, &p.run_var};
    const uint32_t mask = read_u32(is);
    for (int k = 0; k < 6; ++k)
        if (mask & (1u << k)) *slots[k] = read_tensor(is);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::string& model_id,
                            const ModelState& state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
    detail::write_u32(os, kCheckpointMagic);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u32(os, static_cast<uint32_t>(model_id.size()));
    os.write(model_id.data(), static_cast<std::streamsize>(model_id.size()));
    detail::write_u64(os, state.seed);
    detail::write_i64(os, state.step);
    detail::write_u32(os, static_cast<uint32_t>(state.params.size()));
    for (size_t i = 0; i < state.params.size(); ++i) {
        detail::write_node_params(os, state.params[i]);
        detail::write_node_params(os, state.velocity[i]);
    }
    if (!os) throw FormatError("checkpoint write failed: " + path);
}

struct Checkpoint {
    std::string model_id;
    ModelState state;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint: " + path);
    if (detail::read_u32(is) != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
    if (detail::read_u32(is) != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
    Checkpoint c;
    const uint32_t idlen = detail::read_u32(is);
    c.model_id.resize(idlen);
    is.read(c.model_id.data(), idlen);
    c.state.seed = detail::read_u64(is);
    c.state.step = detail::read_i64(is);
    const uint32_t n = detail::read_u32(is);
    c.state.params.resize(n);
    c.state.velocity.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        detail::read_node_params(is, c.state.params[i]);
        detail::read_node_params(is, c.state.velocity[i]);
    }
    if (!is) throw FormatError("checkpoint truncated: " + path);
    return c;
}

}  // namespace fractalnet
