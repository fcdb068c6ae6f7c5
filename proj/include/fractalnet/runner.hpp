#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fractalnet/data.hpp"
#include "fractalnet/engine.hpp"
#include "fractalnet/generator.hpp"

namespace fractalnet {

// Reference defaults: lr 0.01, batch 16, momentum 0.9, dropout 0.2, 5 epochs.
struct TrainConfig {
    float lr = 0.01f;
    int batch_size = 16;
    float momentum = 0.9f;
    int epochs = 5;
    // applied to variants whose unit has dropout active; negative = keep
    // the spec's own rate
    float dropout_override = 0.2f;
    uint64_t seed = 0;
    bool checkpointing = true;
    std::string dataset = "synthetic:separable_blobs:2000:500:2";
    std::string transform = "norm_flip";
};

inline void validate(const TrainConfig& c) {
    if (c.lr <= 0.0f) throw FormatError("config: lr must be positive");
    if (c.batch_size < 1) throw FormatError("config: batch_size must be positive");
    if (c.epochs < 1) throw FormatError("config: epochs must be positive");
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return nlohmann::json{
        {"lr", c.lr},           {"batch_size", c.batch_size},
        {"momentum", c.momentum}, {"epochs", c.epochs},
        {"dropout_override", c.dropout_override}, {"seed", c.seed},
        {"checkpointing", c.checkpointing}, {"dataset", c.dataset},
        {"transform", c.transform},
    };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("lr")) c.lr = j["lr"].get<float>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("momentum")) c.momentum = j["momentum"].get<float>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("dropout_override")) c.dropout_override = j["dropout_override"].get<float>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("checkpointing")) c.checkpointing = j["checkpointing"].get<bool>();
    if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
    if (j.contains("transform")) c.transform = j["transform"].get<std::string>();
    validate(c);
    return c;
}

inline TrainConfig read_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("config parse error: ") + ex.what());
    }
    return train_config_from_json(j);
}

enum class RunStatus { ok, construction_failed, training_failed, degenerate };

inline const char* to_string(RunStatus s) {
    switch (s) {
        case RunStatus::ok: return "ok";
        case RunStatus::construction_failed: return "construction_failed";
        case RunStatus::training_failed: return "training_failed";
        case RunStatus::degenerate: return "degenerate";
    }
    return "?";
}

inline RunStatus run_status_from_string(const std::string& s) {
    if (s == "ok") return RunStatus::ok;
    if (s == "construction_failed") return RunStatus::construction_failed;
    if (s == "training_failed") return RunStatus::training_failed;
    if (s == "degenerate") return RunStatus::degenerate;
    throw FormatError("unknown run status: " + s);
}

struct EpochRecord {
    int epoch = 0;  // 1-based
    float train_loss = 0.0f;
    float val_accuracy = 0.0f;
    double seconds = 0.0;
    int64_t peak_activations = 0;

    bool operator==(const EpochRecord&) const = default;
};

struct ModelRunResult {
    std::string model_id;
    std::string name;
    RunStatus status = RunStatus::ok;
    std::string reason;
    std::vector<EpochRecord> epochs;
    std::string checkpoint_path;
};

inline nlohmann::json to_json(const ModelRunResult& r) {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : r.epochs)
        eps.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"val_accuracy", e.val_accuracy},
                       {"seconds", e.seconds},
                       {"peak_activations", e.peak_activations}});
    return nlohmann::json{{"model_id", r.model_id}, {"name", r.name},
                          {"status", to_string(r.status)}, {"reason", r.reason},
                          {"epochs", eps}, {"checkpoint_path", r.checkpoint_path}};
}

inline ModelRunResult run_result_from_json(const nlohmann::json& j) {
    ModelRunResult r;
    r.model_id = j.at("model_id").get<std::string>();
    r.name = j.at("name").get<std::string>();
    r.status = run_status_from_string(j.at("status").get<std::string>());
    r.reason = j.value("reason", "");
    for (const auto& e : j.at("epochs")) {
        EpochRecord rec;
        rec.epoch = e.at("epoch").get<int>();
        rec.train_loss = e.at("train_loss").get<float>();
        rec.val_accuracy = e.at("val_accuracy").get<float>();
        rec.seconds = e.at("seconds").get<double>();
        rec.peak_activations = e.at("peak_activations").get<int64_t>();
        r.epochs.push_back(rec);
    }
    r.checkpoint_path = j.value("checkpoint_path", "");
    return r;
}

// ---------------------------------------------------------------------------
// per-model pipeline: verification, training, evaluation
// ---------------------------------------------------------------------------

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline ModelSpec apply_dropout_override(ModelSpec spec, float override_p) {
    if (override_p >= 0.0f && spec.unit.dropout_p > 0.0f) spec.unit.dropout_p = override_p;
    return spec;
}

struct VerifyResult {
    bool ok = true;
    std::string reason;
};

// Builds the graph and runs one forward pass on a dummy batch, checking
// output shape and finiteness.
inline VerifyResult verify(const ModelSpec& spec, uint64_t seed = 0,
                           const ModelState* injected_state = nullptr) {
    try {
        const ComputationGraph g = build_model(spec);
        ModelState st = injected_state ? *injected_state : init_state(g, seed);
        Rng rng(mix_seed(seed, 0xd0d0ULL));
        Tensor dummy = Tensor::randn(
            {2, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]}, rng, 0.5f);
        MemoryLedger ledger;
        Tape tape = run_graph(g, dummy, st, Mode::eval, false, ledger);
        const Tensor& out = *tape.out[g.output_node];
        if (out.shape != std::vector<int64_t>{2, spec.num_classes})
            return {false, "output shape mismatch"};
        for (float v : out.data)
            if (!std::isfinite(v)) return {false, "non-finite output"};
        return {true, ""};
    } catch (const std::exception& ex) {
        return {false, ex.what()};
    }
}

// accuracy = correct / total over argmax of the logits; eval mode
inline float evaluate(const ComputationGraph& g, ModelState& state, const Dataset& val,
                      int batch_size, const TransformConfig& transform) {
    if (val.count() == 0) throw EmptyDatasetError("evaluate: empty dataset");
    int64_t correct = 0;
    Rng unused(0);
    for (const auto& idx : batch_indices(val.count(), batch_size, 0, false)) {
        Batch b = gather(val, idx);
        b.images = norm_flip(b.images, transform, unused, /*train=*/false);
        MemoryLedger ledger;
        Tape tape = run_graph(g, b.images, state, Mode::eval, false, ledger);
        const Tensor& logits = *tape.out[g.output_node];
        for (int64_t i = 0; i < logits.shape[0]; ++i) {
            int best = 0;
            for (int64_t j = 1; j < logits.shape[1]; ++j)
                if (logits.at2(i, j) > logits.at2(i, best)) best = static_cast<int>(j);
            if (best == b.labels[static_cast<size_t>(i)]) ++correct;
        }
    }
    return static_cast<float>(correct) / static_cast<float>(val.count());
}

inline constexpr float kDegenerateMargin = 0.02f;

// Full training run with failure capture; never throws for per-model
// problems. One checkpoint per epoch, last two retained.
inline ModelRunResult train_model(const ModelSpec& raw_spec, const TrainConfig& cfg,
                                  const Dataset& train, const Dataset& val,
                                  const TransformConfig& transform,
                                  const std::string& checkpoint_dir = "") {
    const ModelSpec spec = apply_dropout_override(raw_spec, cfg.dropout_override);
    ModelRunResult result;
    result.model_id = model_id(raw_spec);
    result.name = model_name(raw_spec);

    ComputationGraph g;
    try {
        g = build_model(spec);
    } catch (const std::exception& ex) {
        result.status = RunStatus::construction_failed;
        result.reason = ex.what();
        return result;
    }

    const uint64_t model_seed = mix_seed(cfg.seed, fnv1a(result.model_id));
    ModelState state = init_state(g, model_seed);

    try {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            Rng flip_rng(mix_seed(model_seed, 0xf11bULL, static_cast<uint64_t>(epoch)));
            double loss_sum = 0.0;
            int64_t batch_count = 0;
            int64_t peak = 0;
            for (const auto& idx : batch_indices(train.count(), cfg.batch_size,
                                                 mix_seed(model_seed, 0x0bafULL,
                                                          static_cast<uint64_t>(epoch)),
                                                 true)) {
                Batch b = gather(train, idx);
                b.images = norm_flip(b.images, transform, flip_rng, /*train=*/true);
                MemoryLedger ledger;
                Tape tape = run_graph(g, b.images, state, Mode::train, cfg.checkpointing, ledger);
                auto loss = ops::softmax_cross_entropy(*tape.out[g.output_node], b.labels);
                if (!std::isfinite(loss.loss)) {
                    result.status = RunStatus::training_failed;
                    result.reason = "non-finite loss at epoch " + std::to_string(epoch + 1);
                    return result;
                }
                loss_sum += loss.loss;
                ++batch_count;
                ModelGrads grads = backprop(g, tape, state, loss.grad_logits, ledger);
                apply_sgd(g, state, grads, cfg.lr, cfg.momentum);
                peak = std::max(peak, ledger.peak);
            }
            EpochRecord rec;
            rec.epoch = epoch + 1;
            rec.train_loss = static_cast<float>(loss_sum / std::max<int64_t>(1, batch_count));
            rec.val_accuracy = evaluate(g, state, val, cfg.batch_size, transform);
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            rec.peak_activations = peak;
            result.epochs.push_back(rec);

            if (!checkpoint_dir.empty()) {
                namespace fs = std::filesystem;
                fs::create_directories(checkpoint_dir);
                const std::string path =
                    (fs::path(checkpoint_dir) / (result.model_id + ".ep" + std::to_string(epoch + 1) + ".ckpt")).string();
                save_checkpoint(path, result.model_id, state);
                result.checkpoint_path = path;
                if (epoch >= 2) {
                    const fs::path old = fs::path(checkpoint_dir) /
                                         (result.model_id + ".ep" + std::to_string(epoch - 1) + ".ckpt");
                    std::error_code ec;
                    fs::remove(old, ec);
                }
            }
        }
    } catch (const std::exception& ex) {
        result.status = RunStatus::training_failed;
        result.reason = ex.what();
        return result;
    }

    const float chance = 1.0f / static_cast<float>(spec.num_classes);
    if (!result.epochs.empty() &&
        result.epochs.back().val_accuracy <= chance + kDegenerateMargin)
        result.status = RunStatus::degenerate;
    return result;
}

// ---------------------------------------------------------------------------
// campaign orchestration
// ---------------------------------------------------------------------------

struct CampaignOptions {
    std::string out_dir;
    int parallelism = 1;
    bool resume = false;
    // process at most this many not-yet-completed entries, then stop
    // cleanly (simulates interruption; 0 = unlimited)
    int64_t max_models = 0;
};

inline std::string result_path(const std::string& out_dir, const ManifestEntry& e) {
    return (std::filesystem::path(out_dir) / "results" / (e.name + ".json")).string();
}

namespace detail {

inline void atomic_write_text(const std::string& path, const std::string& text) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw FormatError("cannot open for writing: " + tmp);
        f << text;
        if (!f) throw FormatError("write failed: " + tmp);
    }
    fs::rename(tmp, path);
}

inline std::optional<ModelRunResult> try_read_result(const std::string& path) {
    std::ifstream f(path);
    if (!f) return std::nullopt;
    try {
        nlohmann::json j;
        f >> j;
        return run_result_from_json(j);
    } catch (...) {
        return std::nullopt;
    }
}

}  // namespace detail

// Processes every manifest entry: verification, training, result
// persistence. Per-model failures are captured into the result record;
// completed models are skipped on resume. Per-model outcomes do not
// depend on parallelism or processing order.
inline std::vector<ModelRunResult> run_campaign(const std::vector<ManifestEntry>& manifest,
                                                const TrainConfig& cfg, const Dataset& train,
                                                const Dataset& val,
                                                const TransformConfig& transform,
                                                const CampaignOptions& opts) {
    namespace fs = std::filesystem;
    validate(cfg);
    fs::create_directories(fs::path(opts.out_dir) / "results");
    const std::string log_path = (fs::path(opts.out_dir) / "campaign.log").string();
    std::mutex log_mutex;
    auto log_event = [&](const std::string& line) {
        std::lock_guard<std::mutex> lock(log_mutex);
        std::ofstream f(log_path, std::ios::app);
        f << line << "\n";
    };

    std::atomic<size_t> next{0};
    std::atomic<int64_t> processed{0};

    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= manifest.size()) return;
            const ManifestEntry& e = manifest[i];
            const std::string path = result_path(opts.out_dir, e);
            if (opts.resume && detail::try_read_result(path)) {
                log_event("skip " + e.model_id);
                continue;
            }
            if (opts.max_models > 0 && processed.fetch_add(1) >= opts.max_models) return;

            ModelRunResult r;
            if (!e.feasible) {
                r.model_id = e.model_id;
                r.name = e.name;
                r.status = RunStatus::construction_failed;
                r.reason = e.infeasible_reason;
            } else {
                const ModelSpec eff = apply_dropout_override(e.spec, cfg.dropout_override);
                VerifyResult v = verify(eff, mix_seed(cfg.seed, fnv1a(e.model_id)));
                if (!v.ok) {
                    r.model_id = e.model_id;
                    r.name = e.name;
                    r.status = RunStatus::construction_failed;
                    r.reason = v.reason;
                } else {
                    r = train_model(e.spec, cfg, train, val, transform,
                                    (fs::path(opts.out_dir) / "checkpoints").string());
                }
            }
            detail::atomic_write_text(path, to_json(r).dump(1) + "\n");
            log_event(std::string("done ") + e.model_id + " status=" + to_string(r.status));
        }
    };

    const int k = std::max(1, opts.parallelism);
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(k));
    for (int t = 0; t < k; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    std::vector<ModelRunResult> out;
    for (const auto& e : manifest)
        if (auto r = detail::try_read_result(result_path(opts.out_dir, e))) out.push_back(*r);
    return out;
}

// ---------------------------------------------------------------------------
// dataset selector: "synthetic:<kind>:<train>:<val>:<classes>" or
// "cifar10:<dir>[:<train>:<val>]"
// ---------------------------------------------------------------------------

inline std::pair<Dataset, Dataset> resolve_dataset(const std::string& selector) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : selector) {
        if (c == ':') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    if (parts.empty()) throw FormatError("empty dataset selector");
    if (parts[0] == "synthetic") {
        if (parts.size() != 5) throw FormatError("synthetic selector: expected synthetic:<kind>:<train>:<val>:<classes>");
        SyntheticKind kind;
        if (parts[1] == "separable_blobs") kind = SyntheticKind::separable_blobs;
        else if (parts[1] == "striped_textures") kind = SyntheticKind::striped_textures;
        else throw FormatError("unknown synthetic kind: " + parts[1]);
        const int64_t ntrain = std::stoll(parts[2]);
        const int64_t nval = std::stoll(parts[3]);
        const int classes = std::stoi(parts[4]);
        Dataset train = synthetic_dataset(kind, ntrain, classes, 1);
        Dataset val = synthetic_dataset(kind, nval, classes, 2);
        train.split = Split::train;
        val.split = Split::val;
        return {std::move(train), std::move(val)};
    }
    if (parts[0] == "cifar10") {
        if (parts.size() < 2) throw FormatError("cifar10 selector: expected cifar10:<dir>[:<train>:<val>]");
        auto [train, val] = load_cifar10(parts[1]);
        if (parts.size() == 4) {
            const int64_t ntrain = std::min<int64_t>(std::stoll(parts[2]), train.count());
            const int64_t nval = std::min<int64_t>(std::stoll(parts[3]), val.count());
            std::vector<int64_t> ti(static_cast<size_t>(ntrain)), vi(static_cast<size_t>(nval));
            for (int64_t i = 0; i < ntrain; ++i) ti[static_cast<size_t>(i)] = i;
            for (int64_t i = 0; i < nval; ++i) vi[static_cast<size_t>(i)] = i;
            Batch tb = gather(train, ti), vb = gather(val, vi);
            Dataset t2, v2;
            t2.images = std::move(tb.images);
            t2.labels = std::move(tb.labels);
            t2.split = Split::train;
            v2.images = std::move(vb.images);
            v2.labels = std::move(vb.labels);
            v2.split = Split::val;
            return {std::move(t2), std::move(v2)};
        }
        return {std::move(train), std::move(val)};
    }
    throw FormatError("unknown dataset selector: " + selector);
}

}  // namespace fractalnet
