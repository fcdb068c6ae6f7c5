#pragma once

#include <cmath>
#include <cstdint>
#include <tuple>
#include <vector>

#include "fractalnet/errors.hpp"
#include "fractalnet/rng.hpp"
#include "fractalnet/tensor.hpp"

namespace fractalnet::ops {

// ---------------------------------------------------------------------------
// conv2d, stride 1, same padding, square odd kernel
// input (N,Cin,H,W), weight (Cout,Cin,K,K), bias (Cout) -> (N,Cout,H,W)
// ---------------------------------------------------------------------------

inline Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.shape.size() != 4 || weight.shape.size() != 4)
        throw ShapeError("conv2d: expected 4-d input and weight");
    const int64_t n = input.shape[0], cin = input.shape[1], h = input.shape[2], w = input.shape[3];
    const int64_t cout = weight.shape[0], k = weight.shape[2];
    if (weight.shape[1] != cin) throw ShapeError("conv2d: channel mismatch");
    if (weight.shape[3] != k || k % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd");
    if (bias.shape != std::vector<int64_t>{cout}) throw ShapeError("conv2d: bad bias shape");
    const int64_t pad = k / 2;

    Tensor out({n, cout, h, w});
    for (int64_t in = 0; in < n; ++in) {
        for (int64_t oc = 0; oc < cout; ++oc) {
            float* optr = &out.at4(in, oc, 0, 0);
            const float b = bias.data[oc];
            for (int64_t i = 0; i < h * w; ++i) optr[i] = b;
            for (int64_t ic = 0; ic < cin; ++ic) {
                const float* iptr = &input.at4(in, ic, 0, 0);
                for (int64_t kh = 0; kh < k; ++kh) {
                    for (int64_t kw = 0; kw < k; ++kw) {
                        const float wv = weight.at4(oc, ic, kh, kw);
                        if (wv == 0.0f) continue;
                        const int64_t dy = kh - pad, dx = kw - pad;
                        const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(h, h - dy);
                        const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(w, w - dx);
                        for (int64_t y = y0; y < y1; ++y) {
                            float* orow = optr + y * w;
                            const float* irow = iptr + (y + dy) * w + dx;
                            for (int64_t x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                        }
                    }
                }
            }
        }
    }
    return out;
}

struct ConvGrads {
    Tensor grad_input;
    Tensor grad_weight;
    Tensor grad_bias;
};

inline ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight,
                                 const Tensor& grad_out) {
    const int64_t n = input.shape[0], cin = input.shape[1], h = input.shape[2], w = input.shape[3];
    const int64_t cout = weight.shape[0], k = weight.shape[2];
    if (grad_out.shape != std::vector<int64_t>{n, cout, h, w})
        throw ShapeError("conv2d backward: bad upstream shape");
    const int64_t pad = k / 2;

    ConvGrads g{Tensor({n, cin, h, w}), Tensor({cout, cin, k, k}), Tensor({cout})};
    for (int64_t in = 0; in < n; ++in) {
        for (int64_t oc = 0; oc < cout; ++oc) {
            const float* gptr = &grad_out.at4(in, oc, 0, 0);
            float bsum = 0.0f;
            for (int64_t i = 0; i < h * w; ++i) bsum += gptr[i];
            g.grad_bias.data[oc] += bsum;
            for (int64_t ic = 0; ic < cin; ++ic) {
                const float* iptr = &input.at4(in, ic, 0, 0);
                float* giptr = &g.grad_input.at4(in, ic, 0, 0);
                for (int64_t kh = 0; kh < k; ++kh) {
                    for (int64_t kw = 0; kw < k; ++kw) {
                        const float wv = weight.at4(oc, ic, kh, kw);
                        float wsum = 0.0f;
                        const int64_t dy = kh - pad, dx = kw - pad;
                        const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(h, h - dy);
                        const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(w, w - dx);
                        for (int64_t y = y0; y < y1; ++y) {
                            const float* grow = gptr + y * w;
                            const float* irow = iptr + (y + dy) * w + dx;
                            float* girow = giptr + (y + dy) * w + dx;
                            for (int64_t x = x0; x < x1; ++x) {
                                wsum += grow[x] * irow[x];
                                girow[x] += wv * grow[x];
                            }
                        }
                        g.grad_weight.at4(oc, ic, kh, kw) += wsum;
                    }
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// batch normalization over (N,H,W) per channel, epsilon 1e-5
// ---------------------------------------------------------------------------

inline constexpr float kBnEps = 1e-5f;
inline constexpr float kBnMomentum = 0.1f;

struct BatchNormResult {
    Tensor output;
    // batch statistics saved for backward
    std::vector<float> mean;
    std::vector<float> inv_std;
};

inline BatchNormResult batchnorm_forward(const Tensor& input, const Tensor& gamma,
                                         const Tensor& beta, Tensor& running_mean,
                                         Tensor& running_var, bool train,
                                         bool update_running = true) {
    if (input.shape.size() != 4) throw ShapeError("batchnorm: expected 4-d input");
    const int64_t n = input.shape[0], c = input.shape[1], h = input.shape[2], w = input.shape[3];
    if (train && n < 2) throw DegenerateBatchError("batchnorm: train-mode batch < 2");
    const int64_t cnt = n * h * w;

    BatchNormResult r{Tensor(input.shape), std::vector<float>(c), std::vector<float>(c)};
    for (int64_t ch = 0; ch < c; ++ch) {
        float mean, var;
        if (train) {
            double s = 0.0;
            for (int64_t in = 0; in < n; ++in) {
                const float* p = &input.at4(in, ch, 0, 0);
                for (int64_t i = 0; i < h * w; ++i) s += p[i];
            }
            mean = static_cast<float>(s / cnt);
            double sq = 0.0;
            for (int64_t in = 0; in < n; ++in) {
                const float* p = &input.at4(in, ch, 0, 0);
                for (int64_t i = 0; i < h * w; ++i) {
                    const double d = p[i] - mean;
                    sq += d * d;
                }
            }
            var = static_cast<float>(sq / cnt);
            if (update_running) {
                // running variance uses the unbiased estimate
                const float unbiased =
                    cnt > 1 ? static_cast<float>(sq / (cnt - 1)) : var;
                running_mean.data[ch] =
                    (1.0f - kBnMomentum) * running_mean.data[ch] + kBnMomentum * mean;
                running_var.data[ch] =
                    (1.0f - kBnMomentum) * running_var.data[ch] + kBnMomentum * unbiased;
            }
        } else {
            mean = running_mean.data[ch];
            var = running_var.data[ch];
        }
        const float inv_std = 1.0f / std::sqrt(var + kBnEps);
        r.mean[ch] = mean;
        r.inv_std[ch] = inv_std;
        const float g = gamma.data[ch], b = beta.data[ch];
        for (int64_t in = 0; in < n; ++in) {
            const float* p = &input.at4(in, ch, 0, 0);
            float* o = &r.output.at4(in, ch, 0, 0);
            for (int64_t i = 0; i < h * w; ++i) o[i] = g * (p[i] - mean) * inv_std + b;
        }
    }
    return r;
}

struct BatchNormGrads {
    Tensor grad_input;
    Tensor grad_gamma;
    Tensor grad_beta;
};

inline BatchNormGrads batchnorm_backward(const Tensor& input, const Tensor& gamma,
                                         const std::vector<float>& mean,
                                         const std::vector<float>& inv_std,
                                         const Tensor& grad_out, bool train) {
    const int64_t n = input.shape[0], c = input.shape[1], h = input.shape[2], w = input.shape[3];
    const int64_t cnt = n * h * w;
    BatchNormGrads g{Tensor(input.shape), Tensor({c}), Tensor({c})};
    for (int64_t ch = 0; ch < c; ++ch) {
        const float m = mean[ch], is = inv_std[ch], gm = gamma.data[ch];
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t in = 0; in < n; ++in) {
            const float* gp = &grad_out.at4(in, ch, 0, 0);
            const float* xp = &input.at4(in, ch, 0, 0);
            for (int64_t i = 0; i < h * w; ++i) {
                sum_g += gp[i];
                sum_gx += gp[i] * (xp[i] - m) * is;
            }
        }
        g.grad_beta.data[ch] = static_cast<float>(sum_g);
        g.grad_gamma.data[ch] = static_cast<float>(sum_gx);
        const float mg = static_cast<float>(sum_g / cnt);
        const float mgx = static_cast<float>(sum_gx / cnt);
        for (int64_t in = 0; in < n; ++in) {
            const float* gp = &grad_out.at4(in, ch, 0, 0);
            const float* xp = &input.at4(in, ch, 0, 0);
            float* op = &g.grad_input.at4(in, ch, 0, 0);
            for (int64_t i = 0; i < h * w; ++i) {
                const float xhat = (xp[i] - m) * is;
                if (train) {
                    op[i] = gm * is * (gp[i] - mg - xhat * mgx);
                } else {
                    // eval mode: statistics are constants
                    op[i] = gm * is * gp[i];
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// elementwise activations
// ---------------------------------------------------------------------------

enum class Activation { relu, leaky_relu, gelu, silu };

inline constexpr float kLeakySlope = 0.1f;

inline float activate(Activation kind, float x) {
    switch (kind) {
        case Activation::relu:
            return x > 0.0f ? x : 0.0f;
        case Activation::leaky_relu:
            return x > 0.0f ? x : kLeakySlope * x;
        case Activation::gelu: {
            // tanh approximation
            const float c = 0.7978845608028654f;  // sqrt(2/pi)
            const float t = std::tanh(c * (x + 0.044715f * x * x * x));
            return 0.5f * x * (1.0f + t);
        }
        case Activation::silu: {
            const float s = 1.0f / (1.0f + std::exp(-x));
            return x * s;
        }
    }
    return x;
}

inline float activate_grad(Activation kind, float x) {
    switch (kind) {
        case Activation::relu:
            return x > 0.0f ? 1.0f : 0.0f;
        case Activation::leaky_relu:
            return x > 0.0f ? 1.0f : kLeakySlope;
        case Activation::gelu: {
            const float c = 0.7978845608028654f;
            const float u = c * (x + 0.044715f * x * x * x);
            const float t = std::tanh(u);
            const float du = c * (1.0f + 3.0f * 0.044715f * x * x);
            return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
        }
        case Activation::silu: {
            const float s = 1.0f / (1.0f + std::exp(-x));
            return s + x * s * (1.0f - s);
        }
    }
    return 1.0f;
}

inline Tensor activation_forward(Activation kind, const Tensor& input) {
    Tensor out(input.shape);
    for (size_t i = 0; i < input.data.size(); ++i) out.data[i] = activate(kind, input.data[i]);
    return out;
}

inline Tensor activation_backward(Activation kind, const Tensor& input, const Tensor& grad_out) {
    Tensor g(input.shape);
    for (size_t i = 0; i < input.data.size(); ++i)
        g.data[i] = grad_out.data[i] * activate_grad(kind, input.data[i]);
    return g;
}

// ---------------------------------------------------------------------------
// inverted dropout; the mask is a pure function of the seed, so backward
// (and checkpointed recomputation) replays it instead of storing it
// ---------------------------------------------------------------------------

inline Tensor dropout_forward(const Tensor& input, float p, uint64_t seed, bool train) {
    if (!train || p == 0.0f) return input;
    Tensor out(input.shape);
    Rng rng(seed);
    const float scale = 1.0f / (1.0f - p);
    for (size_t i = 0; i < input.data.size(); ++i)
        out.data[i] = rng.uniform() >= p ? input.data[i] * scale : 0.0f;
    return out;
}

inline Tensor dropout_backward(const Tensor& grad_out, float p, uint64_t seed, bool train) {
    if (!train || p == 0.0f) return grad_out;
    Tensor g(grad_out.shape);
    Rng rng(seed);
    const float scale = 1.0f / (1.0f - p);
    for (size_t i = 0; i < grad_out.data.size(); ++i)
        g.data[i] = rng.uniform() >= p ? grad_out.data[i] * scale : 0.0f;
    return g;
}

// ---------------------------------------------------------------------------
// elementwise mean join of k >= 2 equally shaped tensors
// ---------------------------------------------------------------------------

inline Tensor mean_join_forward(const std::vector<const Tensor*>& inputs) {
    if (inputs.size() < 2) throw ShapeError("mean_join: needs >= 2 inputs");
    for (const Tensor* t : inputs)
        if (t->shape != inputs[0]->shape) throw ShapeError("mean_join: shape mismatch");
    Tensor out(inputs[0]->shape);
    const float inv = 1.0f / static_cast<float>(inputs.size());
    for (size_t i = 0; i < out.data.size(); ++i) {
        float s = 0.0f;
        for (const Tensor* t : inputs) s += t->data[i];
        out.data[i] = s * inv;
    }
    return out;
}

inline Tensor mean_join_backward(const Tensor& grad_out, size_t k) {
    Tensor g(grad_out.shape);
    const float inv = 1.0f / static_cast<float>(k);
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = grad_out.data[i] * inv;
    return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pool, stride 2 (floor); backward recomputes the argmax from the
// stored input, first-hit wins on ties
// ---------------------------------------------------------------------------

inline Tensor maxpool2x2_forward(const Tensor& input) {
    const int64_t n = input.shape[0], c = input.shape[1], h = input.shape[2], w = input.shape[3];
    if (h < 2 || w < 2) throw ShapeError("maxpool2x2: spatial size below 2");
    const int64_t oh = h / 2, ow = w / 2;
    Tensor out({n, c, oh, ow});
    for (int64_t in = 0; in < n; ++in)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x) {
                    float m = input.at4(in, ch, 2 * y, 2 * x);
                    m = std::max(m, input.at4(in, ch, 2 * y, 2 * x + 1));
                    m = std::max(m, input.at4(in, ch, 2 * y + 1, 2 * x));
                    m = std::max(m, input.at4(in, ch, 2 * y + 1, 2 * x + 1));
                    out.at4(in, ch, y, x) = m;
                }
    return out;
}

inline Tensor maxpool2x2_backward(const Tensor& input, const Tensor& grad_out) {
    const int64_t n = input.shape[0], c = input.shape[1];
    const int64_t oh = grad_out.shape[2], ow = grad_out.shape[3];
    Tensor g(input.shape);
    for (int64_t in = 0; in < n; ++in)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x) {
                    int64_t by = 2 * y, bx = 2 * x;
                    float m = input.at4(in, ch, by, bx);
                    int64_t my = by, mx = bx;
                    if (input.at4(in, ch, by, bx + 1) > m) { m = input.at4(in, ch, by, bx + 1); my = by; mx = bx + 1; }
                    if (input.at4(in, ch, by + 1, bx) > m) { m = input.at4(in, ch, by + 1, bx); my = by + 1; mx = bx; }
                    if (input.at4(in, ch, by + 1, bx + 1) > m) { my = by + 1; mx = bx + 1; }
                    g.at4(in, ch, my, mx) += grad_out.at4(in, ch, y, x);
                }
    return g;
}

// ---------------------------------------------------------------------------
// global average pool (N,C,H,W) -> (N,C)
// ---------------------------------------------------------------------------

inline Tensor global_avg_pool_forward(const Tensor& input) {
    const int64_t n = input.shape[0], c = input.shape[1], h = input.shape[2], w = input.shape[3];
    Tensor out({n, c});
    const float inv = 1.0f / static_cast<float>(h * w);
    for (int64_t in = 0; in < n; ++in)
        for (int64_t ch = 0; ch < c; ++ch) {
            const float* p = &input.at4(in, ch, 0, 0);
            float s = 0.0f;
            for (int64_t i = 0; i < h * w; ++i) s += p[i];
            out.at2(in, ch) = s * inv;
        }
    return out;
}

inline Tensor global_avg_pool_backward(const std::vector<int64_t>& input_shape,
                                       const Tensor& grad_out) {
    const int64_t n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
    Tensor g(input_shape);
    const float inv = 1.0f / static_cast<float>(h * w);
    for (int64_t in = 0; in < n; ++in)
        for (int64_t ch = 0; ch < c; ++ch) {
            const float v = grad_out.at2(in, ch) * inv;
            float* p = &g.at4(in, ch, 0, 0);
            for (int64_t i = 0; i < h * w; ++i) p[i] = v;
        }
    return g;
}

// ---------------------------------------------------------------------------
// linear: input (N,F), weight (out,F), bias (out) -> (N,out)
// ---------------------------------------------------------------------------

inline Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const int64_t n = input.shape[0], f = input.shape[1], o = weight.shape[0];
    if (weight.shape[1] != f) throw ShapeError("linear: feature mismatch");
    Tensor out({n, o});
    for (int64_t in = 0; in < n; ++in)
        for (int64_t j = 0; j < o; ++j) {
            float s = bias.data[j];
            const float* ip = &input.at2(in, 0);
            const float* wp = &weight.at2(j, 0);
            for (int64_t k = 0; k < f; ++k) s += ip[k] * wp[k];
            out.at2(in, j) = s;
        }
    return out;
}

struct LinearGrads {
    Tensor grad_input;
    Tensor grad_weight;
    Tensor grad_bias;
};

inline LinearGrads linear_backward(const Tensor& input, const Tensor& weight,
                                   const Tensor& grad_out) {
    const int64_t n = input.shape[0], f = input.shape[1], o = weight.shape[0];
    LinearGrads g{Tensor({n, f}), Tensor({o, f}), Tensor({o})};
    for (int64_t in = 0; in < n; ++in)
        for (int64_t j = 0; j < o; ++j) {
            const float go = grad_out.at2(in, j);
            g.grad_bias.data[j] += go;
            const float* ip = &input.at2(in, 0);
            float* gw = &g.grad_weight.at2(j, 0);
            float* gi = &g.grad_input.at2(in, 0);
            const float* wp = &weight.at2(j, 0);
            for (int64_t k = 0; k < f; ++k) {
                gw[k] += go * ip[k];
                gi[k] += go * wp[k];
            }
        }
    return g;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy, mean over batch
// ---------------------------------------------------------------------------

struct LossResult {
    float loss;
    Tensor grad_logits;
};

inline LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const int64_t n = logits.shape[0], c = logits.shape[1];
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeError("softmax_cross_entropy: label count mismatch");
    LossResult r{0.0f, Tensor(logits.shape)};
    double total = 0.0;
    for (int64_t in = 0; in < n; ++in) {
        const int lbl = labels[static_cast<size_t>(in)];
        if (lbl < 0 || lbl >= c) throw LabelError("label out of range");
        const float* lp = &logits.at2(in, 0);
        float mx = lp[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, lp[j]);
        double z = 0.0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(lp[j] - mx));
        total += std::log(z) - (lp[lbl] - mx);
        float* gp = &r.grad_logits.at2(in, 0);
        for (int64_t j = 0; j < c; ++j) {
            const float p = static_cast<float>(std::exp(static_cast<double>(lp[j] - mx)) / z);
            gp[j] = (p - (j == lbl ? 1.0f : 0.0f)) / static_cast<float>(n);
        }
    }
    r.loss = static_cast<float>(total / n);
    return r;
}

// ---------------------------------------------------------------------------
// SGD with momentum: v <- mu*v + g; w <- w - lr*v
// ---------------------------------------------------------------------------

inline void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, float lr,
                     float momentum) {
    if (!param.same_shape(grad) || !param.same_shape(velocity))
        throw ShapeError("sgd_step: shape mismatch");
    for (size_t i = 0; i < param.data.size(); ++i) {
        velocity.data[i] = momentum * velocity.data[i] + grad.data[i];
        param.data[i] -= lr * velocity.data[i];
    }
}

}  // namespace fractalnet::ops
