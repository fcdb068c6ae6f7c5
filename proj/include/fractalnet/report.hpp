#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fractalnet/runner.hpp"

namespace fractalnet {

struct CampaignSummary {
    int64_t model_count = 0;
    float mean_val_accuracy = 0.0f;  // final epoch, over ok + degenerate models
    float top_val_accuracy = 0.0f;
    std::string top_model_id;
    float success_rate = 0.0f;  // (ok + degenerate) / all records
    double mean_epoch_seconds = 0.0;
    std::vector<std::vector<float>> per_epoch_accuracy;  // [epoch-1] -> accuracies
    int64_t malformed_records = 0;
};

inline std::vector<ModelRunResult> read_results_dir(const std::string& dir,
                                                    int64_t* malformed = nullptr) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    if (fs::is_directory(dir))
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.path().extension() == ".json") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    std::vector<ModelRunResult> out;
    for (const auto& f : files) {
        if (auto r = detail::try_read_result(f)) {
            out.push_back(std::move(*r));
        } else if (malformed) {
            ++*malformed;
        }
    }
    return out;
}

inline CampaignSummary summarize_results(const std::vector<ModelRunResult>& results,
                                         int64_t malformed = 0) {
    if (results.empty()) throw EmptyResultsError("summarize: no result records");
    CampaignSummary s;
    s.model_count = static_cast<int64_t>(results.size());
    s.malformed_records = malformed;
    double acc_sum = 0.0, sec_sum = 0.0;
    int64_t acc_n = 0, epoch_n = 0, trained = 0;
    for (const auto& r : results) {
        for (const auto& e : r.epochs) {
            sec_sum += e.seconds;
            ++epoch_n;
            if (static_cast<size_t>(e.epoch) > s.per_epoch_accuracy.size())
                s.per_epoch_accuracy.resize(static_cast<size_t>(e.epoch));
            s.per_epoch_accuracy[static_cast<size_t>(e.epoch) - 1].push_back(e.val_accuracy);
        }
        if (r.status == RunStatus::ok || r.status == RunStatus::degenerate) {
            ++trained;
            if (!r.epochs.empty()) {
                const float acc = r.epochs.back().val_accuracy;
                acc_sum += acc;
                ++acc_n;
                if (acc > s.top_val_accuracy || s.top_model_id.empty()) {
                    s.top_val_accuracy = acc;
                    s.top_model_id = r.model_id;
                }
            }
        }
    }
    if (acc_n > 0) s.mean_val_accuracy = static_cast<float>(acc_sum / acc_n);
    if (epoch_n > 0) s.mean_epoch_seconds = sec_sum / static_cast<double>(epoch_n);
    s.success_rate = static_cast<float>(trained) / static_cast<float>(results.size());
    return s;
}

inline CampaignSummary summarize(const std::string& results_dir) {
    int64_t malformed = 0;
    auto results = read_results_dir(results_dir, &malformed);
    if (results.empty()) throw EmptyResultsError("summarize: empty results directory: " + results_dir);
    return summarize_results(results, malformed);
}

inline nlohmann::json to_json(const CampaignSummary& s) {
    return nlohmann::json{
        {"model_count", s.model_count},
        {"mean_val_accuracy", s.mean_val_accuracy},
        {"top_val_accuracy", s.top_val_accuracy},
        {"top_model_id", s.top_model_id},
        {"success_rate", s.success_rate},
        {"mean_epoch_seconds", s.mean_epoch_seconds},
        {"malformed_records", s.malformed_records},
        // slicing notes: mean includes degenerate models; success rate
        // counts them as successes
        {"mean_includes_degenerate", true},
        {"success_counts_degenerate", true},
    };
}

namespace detail {

inline std::string fmt_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(v));
    return buf;
}

}  // namespace detail

// One row per model: model_id, accuracy at each requested epoch; rows
// sorted by model_id, missing epochs marked "NA". LF line endings.
inline std::string export_epoch_distribution(const std::vector<ModelRunResult>& results,
                                             const std::vector<int>& epochs = {1, 5}) {
    std::vector<const ModelRunResult*> sorted;
    for (const auto& r : results) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const ModelRunResult* a, const ModelRunResult* b) { return a->model_id < b->model_id; });
    std::string out = "model_id";
    for (int e : epochs) out += ",accuracy_epoch" + std::to_string(e);
    out += "\n";
    for (const ModelRunResult* r : sorted) {
        out += r->model_id;
        for (int e : epochs) {
            const auto it = std::find_if(r->epochs.begin(), r->epochs.end(),
                                         [e](const EpochRecord& rec) { return rec.epoch == e; });
            out += ",";
            out += it == r->epochs.end() ? "NA" : detail::fmt_float(it->val_accuracy);
        }
        out += "\n";
    }
    return out;
}

// Long-format loss curves: model_id, epoch, train_loss for the requested
// ids, grouped by id in the given order.
inline std::string export_loss_curves(const std::vector<ModelRunResult>& results,
                                      const std::vector<std::string>& model_ids) {
    std::map<std::string, const ModelRunResult*> by_id;
    for (const auto& r : results) by_id[r.model_id] = &r;
    std::string out = "model_id,epoch,train_loss\n";
    for (const auto& id : model_ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw UnknownModelError("unknown model id: " + id);
        for (const auto& e : it->second->epochs)
            out += id + "," + std::to_string(e.epoch) + "," + detail::fmt_float(e.train_loss) + "\n";
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);  // LF endings everywhere
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << text;
}

}  // namespace fractalnet
