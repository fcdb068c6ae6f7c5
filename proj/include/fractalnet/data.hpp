#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fractalnet/errors.hpp"
#include "fractalnet/rng.hpp"
#include "fractalnet/tensor.hpp"

namespace fractalnet {

enum class Split { train, val };

struct Dataset {
    Tensor images;            // (count, C, H, W), values in [0,1]
    std::vector<int> labels;  // in [0, num_classes)
    Split split = Split::train;
    int num_classes = 10;

    int64_t count() const { return images.shape.empty() ? 0 : images.shape[0]; }
};

struct TransformConfig {
    std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
    std::array<float, 3> std{1.0f, 1.0f, 1.0f};
    float flip_probability = 0.5f;
};

inline void validate(const TransformConfig& c) {
    for (float s : c.std)
        if (s <= 0.0f) throw FormatError("transform: std must be positive");
    if (c.flip_probability < 0.0f || c.flip_probability > 1.0f)
        throw FormatError("transform: flip probability must be in [0,1]");
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary format: records of 3073 bytes, 1 label byte then
// 3072 pixel bytes in R-plane, G-plane, B-plane order, 32x32 row-major.
// ---------------------------------------------------------------------------

inline constexpr int64_t kCifarRecordBytes = 3073;
inline constexpr int64_t kCifarPixels = 3072;

inline Dataset parse_cifar_records(const std::vector<uint8_t>& bytes, Split split) {
    if (bytes.size() % kCifarRecordBytes != 0)
        throw FormatError("cifar: file size is not a multiple of 3073 bytes");
    const int64_t n = static_cast<int64_t>(bytes.size()) / kCifarRecordBytes;
    Dataset d;
    d.split = split;
    d.images = Tensor({n, 3, 32, 32});
    d.labels.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
        if (rec[0] > 9) throw FormatError("cifar: label byte out of range");
        d.labels[static_cast<size_t>(i)] = rec[0];
        float* dst = &d.images.at4(i, 0, 0, 0);
        for (int64_t p = 0; p < kCifarPixels; ++p)
            dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
    }
    return d;
}

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open file: " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline Dataset load_cifar_file(const std::string& path, Split split) {
    return parse_cifar_records(read_file_bytes(path), split);
}

inline Dataset concat(std::vector<Dataset> parts) {
    if (parts.empty()) throw EmptyDatasetError("concat: no parts");
    int64_t total = 0;
    for (const auto& p : parts) total += p.count();
    Dataset out;
    out.split = parts[0].split;
    out.num_classes = parts[0].num_classes;
    out.images = Tensor({total, parts[0].images.shape[1], parts[0].images.shape[2],
                         parts[0].images.shape[3]});
    out.labels.reserve(static_cast<size_t>(total));
    const int64_t px = out.images.shape[1] * out.images.shape[2] * out.images.shape[3];
    int64_t off = 0;
    for (auto& p : parts) {
        std::copy(p.images.data.begin(), p.images.data.end(),
                  out.images.data.begin() + off * px);
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
        off += p.count();
    }
    return out;
}

// Loads the binary-version batch files: data_batch_1..5.bin + test_batch.bin.
inline std::pair<Dataset, Dataset> load_cifar10(const std::string& directory) {
    namespace fs = std::filesystem;
    std::vector<Dataset> train_parts;
    for (int i = 1; i <= 5; ++i) {
        const std::string p = (fs::path(directory) / ("data_batch_" + std::to_string(i) + ".bin")).string();
        train_parts.push_back(load_cifar_file(p, Split::train));
    }
    Dataset train = concat(std::move(train_parts));
    Dataset val = load_cifar_file((fs::path(directory) / "test_batch.bin").string(), Split::val);
    return {std::move(train), std::move(val)};
}

// Serializes a dataset back to the record format (values snapped to the
// byte grid). parse(serialize(d)) == d when d came from parse.
inline std::vector<uint8_t> serialize_cifar_records(const Dataset& d) {
    if (d.images.shape != std::vector<int64_t>{d.count(), 3, 32, 32})
        throw FormatError("cifar serialize: images must be (n,3,32,32)");
    std::vector<uint8_t> bytes(static_cast<size_t>(d.count() * kCifarRecordBytes));
    for (int64_t i = 0; i < d.count(); ++i) {
        uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
        const int lbl = d.labels[static_cast<size_t>(i)];
        if (lbl < 0 || lbl > 9) throw FormatError("cifar serialize: label out of range");
        rec[0] = static_cast<uint8_t>(lbl);
        const float* src = &d.images.at4(i, 0, 0, 0);
        for (int64_t p = 0; p < kCifarPixels; ++p) {
            const float v = std::min(1.0f, std::max(0.0f, src[p]));
            rec[1 + p] = static_cast<uint8_t>(std::lround(v * 255.0f));
        }
    }
    return bytes;
}

inline void write_cifar_file(const std::string& path, const Dataset& d) {
    const auto bytes = serialize_cifar_records(d);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// norm_flip: random horizontal flip (train mode) then per-channel
// normalization; labels untouched
// ---------------------------------------------------------------------------

inline Tensor norm_flip(const Tensor& batch, const TransformConfig& cfg, Rng& rng, bool train) {
    validate(cfg);
    const int64_t n = batch.shape[0], c = batch.shape[1], h = batch.shape[2], w = batch.shape[3];
    Tensor out = batch;
    if (train && cfg.flip_probability > 0.0f) {
        for (int64_t i = 0; i < n; ++i) {
            if (rng.uniform() >= cfg.flip_probability) continue;
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t y = 0; y < h; ++y) {
                    float* row = &out.at4(i, ch, y, 0);
                    std::reverse(row, row + w);
                }
        }
    }
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const float m = cfg.mean[static_cast<size_t>(ch % 3)];
            const float inv = 1.0f / cfg.std[static_cast<size_t>(ch % 3)];
            float* p = &out.at4(i, ch, 0, 0);
            for (int64_t k = 0; k < h * w; ++k) p[k] = (p[k] - m) * inv;
        }
    return out;
}

// Per-channel mean/std over every pixel of the split; the campaign derives
// its normalization constants from the training data it actually uses.
inline TransformConfig channel_stats(const Dataset& d, float flip_probability = 0.5f) {
    if (d.count() == 0) throw EmptyDatasetError("channel_stats: empty dataset");
    const int64_t n = d.count(), c = d.images.shape[1], hw = d.images.shape[2] * d.images.shape[3];
    TransformConfig cfg;
    cfg.flip_probability = flip_probability;
    for (int64_t ch = 0; ch < c && ch < 3; ++ch) {
        double s = 0.0, sq = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const float* p = &d.images.at4(i, ch, 0, 0);
            for (int64_t k = 0; k < hw; ++k) {
                s += p[k];
                sq += static_cast<double>(p[k]) * p[k];
            }
        }
        const double cnt = static_cast<double>(n * hw);
        const double mean = s / cnt;
        const double var = std::max(1e-8, sq / cnt - mean * mean);
        cfg.mean[static_cast<size_t>(ch)] = static_cast<float>(mean);
        cfg.std[static_cast<size_t>(ch)] = static_cast<float>(std::sqrt(var));
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

// Deterministic shuffled epoch order; the final partial batch is included.
inline std::vector<std::vector<int64_t>> batch_indices(int64_t count, int64_t batch_size,
                                                       uint64_t seed, bool shuffle) {
    if (batch_size < 1) throw FormatError("batches: batch_size must be >= 1");
    std::vector<int64_t> order(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) order[static_cast<size_t>(i)] = i;
    if (shuffle) {
        Rng rng(seed);
        for (int64_t i = count - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
    }
    std::vector<std::vector<int64_t>> out;
    for (int64_t start = 0; start < count; start += batch_size) {
        const int64_t end = std::min(count, start + batch_size);
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

struct Batch {
    Tensor images;
    std::vector<int> labels;
};

inline Batch gather(const Dataset& d, const std::vector<int64_t>& indices) {
    const int64_t c = d.images.shape[1], h = d.images.shape[2], w = d.images.shape[3];
    const int64_t px = c * h * w;
    Batch b;
    b.images = Tensor({static_cast<int64_t>(indices.size()), c, h, w});
    b.labels.reserve(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        std::copy(d.images.data.begin() + indices[i] * px,
                  d.images.data.begin() + (indices[i] + 1) * px,
                  b.images.data.begin() + static_cast<int64_t>(i) * px);
        b.labels.push_back(d.labels[static_cast<size_t>(indices[i])]);
    }
    return b;
}

// ---------------------------------------------------------------------------
// synthetic datasets (CIFAR-shaped, exportable to the binary format)
// ---------------------------------------------------------------------------

enum class SyntheticKind { separable_blobs, striped_textures };

namespace detail {

inline float snap_byte(float v) {
    v = std::min(1.0f, std::max(0.0f, v));
    return static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
}

}  // namespace detail

// Class-conditional 3x32x32 images with a learnable signal. Balanced
// classes, deterministic for a given seed; pixel values sit on the byte
// grid so export to the record format is lossless.
inline Dataset synthetic_dataset(SyntheticKind kind, int64_t count, int classes, uint64_t seed,
                                 float noise_std = 0.08f) {
    if (classes < 1 || count < classes) throw FormatError("synthetic: count must be >= classes");
    Dataset d;
    d.num_classes = classes;
    d.images = Tensor({count, 3, 32, 32});
    d.labels.resize(static_cast<size_t>(count));
    Rng rng(mix_seed(seed, 0x5f9dULL));
    for (int64_t i = 0; i < count; ++i) {
        const int cls = static_cast<int>(i % classes);  // balanced
        d.labels[static_cast<size_t>(i)] = cls;
        for (int64_t ch = 0; ch < 3; ++ch) {
            // per-class channel offsets; orthogonal-ish signature per class
            const float phase = 6.2831853f * static_cast<float>(cls) / static_cast<float>(classes);
            const float offset = 0.25f * std::cos(phase + 2.0944f * static_cast<float>(ch));
            for (int64_t y = 0; y < 32; ++y)
                for (int64_t x = 0; x < 32; ++x) {
                    float v = 0.5f + offset;
                    if (kind == SyntheticKind::striped_textures) {
                        const float freq = 0.3f + 0.25f * static_cast<float>(cls);
                        v = 0.5f + 0.3f * std::sin(freq * static_cast<float>(x) + phase);
                    }
                    if (noise_std > 0.0f) v += noise_std * rng.normal();
                    d.images.at4(i, ch, y, x) = detail::snap_byte(v);
                }
        }
    }
    return d;
}

}  // namespace fractalnet
