#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "fractalnet/data.hpp"

using namespace fractalnet;

namespace {

// hand-crafted two-record fixture: label byte + 3072 pixel bytes per record
std::vector<uint8_t> two_record_fixture() {
    std::vector<uint8_t> bytes(2 * kCifarRecordBytes, 0);
    bytes[0] = 3;  // record 0 label
    bytes[1] = 255;          // R plane, pixel (0,0)
    bytes[1 + 1024] = 128;   // G plane, pixel (0,0)
    bytes[1 + 2048] = 0;     // B plane, pixel (0,0)
    bytes[1 + 33] = 51;      // R plane, pixel (1,1)
    const size_t r1 = kCifarRecordBytes;
    bytes[r1] = 9;  // record 1 label
    bytes[r1 + 1 + 3071] = 102;  // last B-plane pixel
    return bytes;
}

}  // namespace

TEST(CifarFormat, HandCraftedFixtureParsesExactly) {
    const Dataset d = parse_cifar_records(two_record_fixture(), Split::train);
    ASSERT_EQ(d.count(), 2);
    EXPECT_EQ(d.labels[0], 3);
    EXPECT_EQ(d.labels[1], 9);
    EXPECT_FLOAT_EQ(d.images.at4(0, 0, 0, 0), 1.0f);
    EXPECT_FLOAT_EQ(d.images.at4(0, 1, 0, 0), 128.0f / 255.0f);
    EXPECT_FLOAT_EQ(d.images.at4(0, 2, 0, 0), 0.0f);
    EXPECT_FLOAT_EQ(d.images.at4(0, 0, 1, 1), 51.0f / 255.0f);
    EXPECT_FLOAT_EQ(d.images.at4(1, 2, 31, 31), 102.0f / 255.0f);
    // everything else is zero
    EXPECT_FLOAT_EQ(d.images.at4(1, 0, 0, 0), 0.0f);
}

TEST(CifarFormat, TruncatedFileThrows) {
    auto bytes = two_record_fixture();
    bytes.pop_back();
    EXPECT_THROW(parse_cifar_records(bytes, Split::train), FormatError);
}

TEST(CifarFormat, BadLabelThrows) {
    auto bytes = two_record_fixture();
    bytes[0] = 10;
    EXPECT_THROW(parse_cifar_records(bytes, Split::train), FormatError);
}

TEST(CifarFormat, ParseSerializeRoundTripsBytes) {
    const auto bytes = two_record_fixture();
    const Dataset d = parse_cifar_records(bytes, Split::train);
    EXPECT_EQ(serialize_cifar_records(d), bytes);
}

TEST(CifarFormat, FileRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "fn_cifar_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "batch.bin").string();
    const Dataset d = parse_cifar_records(two_record_fixture(), Split::val);
    write_cifar_file(path, d);
    const Dataset back = load_cifar_file(path, Split::val);
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.images.data, d.images.data);
    std::filesystem::remove_all(dir);
}

TEST(NormFlip, NoFlipIsPureNormalization) {
    Dataset d = synthetic_dataset(SyntheticKind::separable_blobs, 200, 2, 1);
    TransformConfig cfg = channel_stats(d, 0.0f);
    Rng rng(4);
    const Tensor out = norm_flip(d.images, cfg, rng, true);
    // per-channel statistics of the output are ~0/1 when config matches data
    for (int64_t ch = 0; ch < 3; ++ch) {
        double s = 0.0, sq = 0.0;
        const int64_t n = d.count(), hw = 32 * 32;
        for (int64_t i = 0; i < n; ++i) {
            const float* p = &out.at4(i, ch, 0, 0);
            for (int64_t k = 0; k < hw; ++k) {
                s += p[k];
                sq += static_cast<double>(p[k]) * p[k];
            }
        }
        const double cnt = static_cast<double>(n * hw);
        EXPECT_NEAR(s / cnt, 0.0, 1e-2);
        EXPECT_NEAR(sq / cnt, 1.0, 1e-2);
    }
}

TEST(NormFlip, DoubleFlipIsIdentity) {
    Dataset d = synthetic_dataset(SyntheticKind::striped_textures, 4, 2, 5);
    TransformConfig cfg;  // identity normalization
    cfg.flip_probability = 1.0f;  // force the flip
    Rng r1(0), r2(0);
    const Tensor once = norm_flip(d.images, cfg, r1, true);
    const Tensor twice = norm_flip(once, cfg, r2, true);
    EXPECT_EQ(twice.data, d.images.data);
}

TEST(NormFlip, EvalModeDeterministicAndLabelFree) {
    Dataset d = synthetic_dataset(SyntheticKind::separable_blobs, 8, 2, 6);
    TransformConfig cfg = channel_stats(d);
    Rng r1(1), r2(99);
    const Tensor a = norm_flip(d.images, cfg, r1, false);
    const Tensor b = norm_flip(d.images, cfg, r2, false);
    EXPECT_EQ(a.data, b.data);  // eval path never consumes randomness
}

TEST(Batches, SizesWithPartialTail) {
    const auto b = batch_indices(50, 16, 0, false);
    ASSERT_EQ(b.size(), 4u);
    EXPECT_EQ(b[0].size(), 16u);
    EXPECT_EQ(b[3].size(), 2u);
}

TEST(Batches, SameSeedSameOrder) {
    const auto a = batch_indices(100, 7, 42, true);
    const auto b = batch_indices(100, 7, 42, true);
    EXPECT_EQ(a, b);
    const auto c = batch_indices(100, 7, 43, true);
    EXPECT_NE(a, c);
}

TEST(Batches, NoShuffleKeepsOrder) {
    const auto b = batch_indices(5, 2, 9, false);
    EXPECT_EQ(b[0], (std::vector<int64_t>{0, 1}));
    EXPECT_EQ(b[2], (std::vector<int64_t>{4}));
}

TEST(Batches, EveryIndexVisitedOncePerEpoch) {
    const auto batches = batch_indices(103, 16, 7, true);
    std::vector<int> seen(103, 0);
    for (const auto& b : batches)
        for (int64_t i : b) seen[static_cast<size_t>(i)]++;
    for (int v : seen) EXPECT_EQ(v, 1);
}

TEST(Synthetic, BalancedAndDeterministic) {
    const Dataset a = synthetic_dataset(SyntheticKind::separable_blobs, 30, 3, 11);
    const Dataset b = synthetic_dataset(SyntheticKind::separable_blobs, 30, 3, 11);
    EXPECT_EQ(a.images.data, b.images.data);
    EXPECT_EQ(a.labels, b.labels);
    std::vector<int> counts(3, 0);
    for (int l : a.labels) counts[static_cast<size_t>(l)]++;
    EXPECT_EQ(counts, (std::vector<int>{10, 10, 10}));
}

TEST(Synthetic, ZeroNoiseBlobsLinearlySeparableOnChannelMeans) {
    const Dataset d = synthetic_dataset(SyntheticKind::separable_blobs, 40, 2, 3, 0.0f);
    // channel-mean signature is constant per class and distinct across
    // classes; nearest-signature classification is perfect
    std::array<std::array<double, 3>, 2> sig{};
    std::array<int, 2> n{};
    for (int64_t i = 0; i < d.count(); ++i) {
        const int c = d.labels[static_cast<size_t>(i)];
        for (int64_t ch = 0; ch < 3; ++ch) {
            double s = 0.0;
            const float* p = &d.images.at4(i, ch, 0, 0);
            for (int k = 0; k < 1024; ++k) s += p[k];
            sig[static_cast<size_t>(c)][static_cast<size_t>(ch)] += s / 1024.0;
        }
        n[static_cast<size_t>(c)]++;
    }
    for (int c = 0; c < 2; ++c)
        for (int ch = 0; ch < 3; ++ch) sig[static_cast<size_t>(c)][static_cast<size_t>(ch)] /= n[static_cast<size_t>(c)];

    for (int64_t i = 0; i < d.count(); ++i) {
        std::array<double, 2> dist{};
        for (int c = 0; c < 2; ++c)
            for (int64_t ch = 0; ch < 3; ++ch) {
                double s = 0.0;
                const float* p = &d.images.at4(i, ch, 0, 0);
                for (int k = 0; k < 1024; ++k) s += p[k];
                const double m = s / 1024.0;
                const double diff = m - sig[static_cast<size_t>(c)][static_cast<size_t>(ch)];
                dist[static_cast<size_t>(c)] += diff * diff;
            }
        const int pred = dist[0] <= dist[1] ? 0 : 1;
        EXPECT_EQ(pred, d.labels[static_cast<size_t>(i)]) << "sample " << i;
    }
}

TEST(Synthetic, ExportsToCifarFormatWhenTenOrFewerClasses) {
    const Dataset d = synthetic_dataset(SyntheticKind::striped_textures, 12, 4, 8);
    const auto bytes = serialize_cifar_records(d);
    const Dataset back = parse_cifar_records(bytes, Split::train);
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.images.data, d.images.data);  // values sit on the byte grid
}
