#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fractalnet/report.hpp"

using namespace fractalnet;
namespace fs = std::filesystem;

namespace {

ModelRunResult make_result(const std::string& id, RunStatus status,
                           const std::vector<float>& accuracies,
                           const std::vector<float>& losses = {}) {
    ModelRunResult r;
    r.model_id = id;
    r.name = "img-classification_cifar-10_acc_FractalNet-" + id;
    r.status = status;
    for (size_t i = 0; i < accuracies.size(); ++i) {
        EpochRecord e;
        e.epoch = static_cast<int>(i) + 1;
        e.val_accuracy = accuracies[i];
        e.train_loss = i < losses.size() ? losses[i] : 2.0f - 0.1f * static_cast<float>(i);
        e.seconds = 1.5;
        r.epochs.push_back(e);
    }
    return r;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Summarize, MeanAndTop) {
    const std::vector<ModelRunResult> results{
        make_result("a", RunStatus::ok, {0.3f, 0.5f}),
        make_result("b", RunStatus::ok, {0.4f, 0.7f}),
        make_result("c", RunStatus::ok, {0.6f, 0.9f}),
    };
    const CampaignSummary s = summarize_results(results);
    EXPECT_EQ(s.model_count, 3);
    EXPECT_NEAR(s.mean_val_accuracy, 0.7f, 1e-6f);
    EXPECT_FLOAT_EQ(s.top_val_accuracy, 0.9f);
    EXPECT_EQ(s.top_model_id, "c");
    EXPECT_FLOAT_EQ(s.success_rate, 1.0f);
    EXPECT_DOUBLE_EQ(s.mean_epoch_seconds, 1.5);
    ASSERT_EQ(s.per_epoch_accuracy.size(), 2u);
    EXPECT_EQ(s.per_epoch_accuracy[0].size(), 3u);
}

TEST(Summarize, FailuresExcludedFromMeanButCounted) {
    std::vector<ModelRunResult> results;
    for (int i = 0; i < 9; ++i)
        results.push_back(make_result("m" + std::to_string(i), RunStatus::ok, {0.5f}));
    ModelRunResult failed;
    failed.model_id = "m9";
    failed.name = "x";
    failed.status = RunStatus::construction_failed;
    failed.reason = "too deep";
    results.push_back(failed);
    const CampaignSummary s = summarize_results(results);
    EXPECT_EQ(s.model_count, 10);
    EXPECT_FLOAT_EQ(s.success_rate, 0.9f);
    EXPECT_FLOAT_EQ(s.mean_val_accuracy, 0.5f);
}

TEST(Summarize, DegenerateCountsAsTrained) {
    const std::vector<ModelRunResult> results{
        make_result("a", RunStatus::ok, {0.8f}),
        make_result("b", RunStatus::degenerate, {0.1f}),
        make_result("c", RunStatus::training_failed, {}),
    };
    const CampaignSummary s = summarize_results(results);
    EXPECT_NEAR(s.success_rate, 2.0f / 3.0f, 1e-6f);
    EXPECT_NEAR(s.mean_val_accuracy, 0.45f, 1e-6f);
}

TEST(Summarize, EmptyThrows) {
    EXPECT_THROW(summarize_results({}), EmptyResultsError);
    TempDir dir("fn_report_empty");
    EXPECT_THROW(summarize(dir.path.string()), EmptyResultsError);
}

TEST(Summarize, MalformedRecordSkippedAndCounted) {
    TempDir dir("fn_report_malformed");
    const auto good = make_result("a", RunStatus::ok, {0.5f});
    write_text_file((dir.path / "a.json").string(), to_json(good).dump(1));
    write_text_file((dir.path / "broken.json").string(), "{ not json");
    const CampaignSummary s = summarize(dir.path.string());
    EXPECT_EQ(s.model_count, 1);
    EXPECT_EQ(s.malformed_records, 1);
    EXPECT_FLOAT_EQ(s.mean_val_accuracy, 0.5f);
}

TEST(EpochDistribution, RowsSortedWithMissingMarker) {
    const std::vector<ModelRunResult> results{
        make_result("zz", RunStatus::ok, {0.1f, 0.2f, 0.3f, 0.4f, 0.5f}),
        make_result("aa", RunStatus::ok, {0.25f}),  // stopped early: no epoch 5
    };
    const std::string csv = export_epoch_distribution(results);
    std::istringstream in(csv);
    std::string l0, l1, l2;
    std::getline(in, l0);
    std::getline(in, l1);
    std::getline(in, l2);
    EXPECT_EQ(l0, "model_id,accuracy_epoch1,accuracy_epoch5");
    EXPECT_EQ(l1, "aa,0.250000,NA");
    EXPECT_EQ(l2, "zz,0.100000,0.500000");
}

TEST(EpochDistribution, ReExportByteIdentical) {
    const std::vector<ModelRunResult> results{
        make_result("a", RunStatus::ok, {0.31f, 0.41f, 0.59f, 0.62f, 0.71f}),
        make_result("b", RunStatus::ok, {0.2f, 0.3f, 0.4f, 0.5f, 0.6f}),
    };
    EXPECT_EQ(export_epoch_distribution(results), export_epoch_distribution(results));

    TempDir dir("fn_report_export");
    const std::string path = (dir.path / "dist.csv").string();
    write_text_file(path, export_epoch_distribution(results));
    std::ifstream f(path, std::ios::binary);
    std::stringstream buf;
    buf << f.rdbuf();
    EXPECT_EQ(buf.str(), export_epoch_distribution(results));
}

TEST(LossCurves, GroupedAndExact) {
    const std::vector<ModelRunResult> results{
        make_result("a", RunStatus::ok, {0.1f, 0.2f}, {2.25f, 1.5f}),
        make_result("b", RunStatus::ok, {0.1f, 0.2f}, {2.0f, 1.25f}),
    };
    const std::string csv = export_loss_curves(results, {"b", "a"});
    EXPECT_EQ(csv,
              "model_id,epoch,train_loss\n"
              "b,1,2.000000\n"
              "b,2,1.250000\n"
              "a,1,2.250000\n"
              "a,2,1.500000\n");
}

TEST(LossCurves, UnknownModelThrows) {
    const std::vector<ModelRunResult> results{make_result("a", RunStatus::ok, {0.1f})};
    EXPECT_THROW(export_loss_curves(results, {"missing"}), UnknownModelError);
}

TEST(Exports, ReAggregationMatchesSummary) {
    // parse the epoch-distribution CSV back and recompute the headline
    // numbers independently of summarize_results
    const std::vector<ModelRunResult> results{
        make_result("a", RunStatus::ok, {0.3f, 0.35f, 0.4f, 0.45f, 0.5f}),
        make_result("b", RunStatus::ok, {0.5f, 0.55f, 0.6f, 0.65f, 0.7f}),
        make_result("c", RunStatus::ok, {0.7f, 0.75f, 0.8f, 0.85f, 0.9f}),
    };
    const CampaignSummary s = summarize_results(results);

    std::istringstream in(export_epoch_distribution(results));
    std::string line;
    std::getline(in, line);  // header
    double sum = 0.0, top = 0.0;
    int n = 0;
    while (std::getline(in, line)) {
        const size_t last = line.rfind(',');
        const double acc = std::stod(line.substr(last + 1));
        sum += acc;
        top = std::max(top, acc);
        ++n;
    }
    ASSERT_EQ(n, 3);
    EXPECT_NEAR(static_cast<float>(sum / n), s.mean_val_accuracy, 1e-6f);
    EXPECT_NEAR(static_cast<float>(top), s.top_val_accuracy, 1e-6f);
}

TEST(ReadResultsDir, SortedByFilename) {
    TempDir dir("fn_report_sorted");
    write_text_file((dir.path / "b.json").string(),
                    to_json(make_result("b", RunStatus::ok, {0.2f})).dump(1));
    write_text_file((dir.path / "a.json").string(),
                    to_json(make_result("a", RunStatus::ok, {0.1f})).dump(1));
    const auto results = read_results_dir(dir.path.string());
    ASSERT_EQ(results.size(), 2u);
    EXPECT_EQ(results[0].model_id, "a");
    EXPECT_EQ(results[1].model_id, "b");
}

TEST(SummaryJson, StatesSlicingChoices) {
    const CampaignSummary s =
        summarize_results({make_result("a", RunStatus::ok, {0.5f})});
    const nlohmann::json j = to_json(s);
    EXPECT_TRUE(j.at("mean_includes_degenerate").get<bool>());
    EXPECT_TRUE(j.at("success_counts_degenerate").get<bool>());
    EXPECT_EQ(j.at("model_count").get<int64_t>(), 1);
}
