#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "fedclass/data.hpp"
#include "fedclass/errors.hpp"
#include "fedclass/rng.hpp"
#include "fedclass/tensor_core.hpp"

using namespace fedclass;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "fedclass_data_tests";
    fs::create_directories(dir);
    return dir;
}

void put_u32_be(std::ofstream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v >> 24),
                                    static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

// Writes a 2-image 28x28 IDX pair: image 0 all zeros, image 1 with pixel 0
// set to 255 and pixel 1 to 128; labels {3, 7}.
void write_idx_fixture(const fs::path& images, const fs::path& labels, bool truncate_images,
                       std::uint32_t image_magic = 0x00000803,
                       std::uint32_t label_count = 2) {
    {
        std::ofstream out(images, std::ios::binary);
        put_u32_be(out, image_magic);
        put_u32_be(out, 2);
        put_u32_be(out, 28);
        put_u32_be(out, 28);
        std::vector<unsigned char> pixels(2 * 28 * 28, 0);
        pixels[784] = 255;
        pixels[785] = 128;
        const std::size_t n = truncate_images ? pixels.size() / 2 : pixels.size();
        out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(n));
    }
    {
        std::ofstream out(labels, std::ios::binary);
        put_u32_be(out, 0x00000801);
        put_u32_be(out, label_count);
        const unsigned char lab[2] = {3, 7};
        out.write(reinterpret_cast<const char*>(lab), 2);
    }
}

// Reference reimplementation of the per-class Dirichlet split: same stream
// derivation, same gamma sampler, own largest-remainder apportionment.
std::vector<std::size_t> reference_shard_sizes(const Dataset& ds, const PartitionSpec& spec) {
    const std::size_t k = static_cast<std::size_t>(spec.clients);
    auto gen = rng::engine(spec.seed, {rng::kTagPartition});
    std::vector<std::size_t> per_class(static_cast<std::size_t>(ds.class_count), 0);
    for (int l : ds.labels) ++per_class[static_cast<std::size_t>(l)];

    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        if (per_class[c] == 0) continue;
        std::vector<double> draws(k);
        double total = 0.0;
        for (double& d : draws) total += (d = sample_gamma(spec.alpha, gen));
        for (double& d : draws) d /= total;

        std::vector<std::size_t> counts(k, 0);
        std::vector<std::pair<double, std::size_t>> rem(k);
        std::size_t assigned = 0;
        for (std::size_t i = 0; i < k; ++i) {
            const double exact = draws[i] * static_cast<double>(per_class[c]);
            counts[i] = static_cast<std::size_t>(std::floor(exact));
            assigned += counts[i];
            rem[i] = {exact - std::floor(exact), i};
        }
        std::stable_sort(rem.begin(), rem.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t i = 0; assigned < per_class[c]; ++i, ++assigned)
            ++counts[rem[i % k].second];
        for (std::size_t i = 0; i < k; ++i) sizes[i] += counts[i];
    }
    return sizes;
}

Dataset two_class_dataset(int per_class) {
    Dataset ds;
    ds.class_count = 2;
    ds.inputs = Matrix(2 * static_cast<std::size_t>(per_class), 2);
    for (std::size_t i = 0; i < ds.inputs.rows; ++i) {
        ds.inputs.at(i, 0) = static_cast<double>(i);
        ds.inputs.at(i, 1) = static_cast<double>(i) * 0.5;
        ds.labels.push_back(i < static_cast<std::size_t>(per_class) ? 0 : 1);
    }
    return ds;
}

double mean_label_entropy(const std::vector<Dataset>& shards) {
    double total = 0.0;
    for (const Dataset& shard : shards) {
        double entropy = 0.0;
        for (std::size_t count : shard.class_counts()) {
            if (count == 0) continue;
            const double p = static_cast<double>(count) / static_cast<double>(shard.size());
            entropy -= p * std::log(p);
        }
        total += entropy;
    }
    return total / static_cast<double>(shards.size());
}

}  // namespace

TEST_CASE("generate_synthetic: a linear probe separates the default blobs above 95%") {
    TrainTestSplit split = generate_synthetic(4, 100, 2, 10.0, 1);

    // Train an independent linear classifier (single affine layer, full-batch
    // gradient descent on CE) and measure test accuracy.
    ModelParams probe;
    probe.layers.push_back({Matrix(4, 2), std::vector<double>(4, 0.0)});
    Batch train;
    train.inputs = split.train.inputs;
    train.labels = split.train.labels;
    OptimizerState opt = OptimizerState::create(0.05, 0.9, 0.0, probe);
    LossSpec spec;
    spec.kind = LossSpec::Kind::kCrossEntropy;
    for (int iter = 0; iter < 300; ++iter) {
        LossAndGrads out = backward(probe, train, spec);
        sgd_step(probe, out.grads, opt);
    }

    Batch test;
    test.inputs = split.test.inputs;
    test.labels = split.test.labels;
    Matrix logits = forward(probe, test);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const double* row = logits.row(i);
        const std::size_t pred = std::max_element(row, row + 4) - row;
        if (static_cast<int>(pred) == test.labels[i]) ++correct;
    }
    const double acc = 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
    CHECK(acc > 95.0);
}

TEST_CASE("generate_synthetic: identical seeds give bit-identical datasets") {
    TrainTestSplit a = generate_synthetic(3, 50, 4, 6.0, 9);
    TrainTestSplit b = generate_synthetic(3, 50, 4, 6.0, 9);
    CHECK(a.train.inputs.data == b.train.inputs.data);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.test.inputs.data == b.test.inputs.data);
    CHECK(a.test.labels == b.test.labels);
}

TEST_CASE("generate_synthetic: per_class=1 produces exactly one sample per class") {
    TrainTestSplit split = generate_synthetic(5, 1, 2, 4.0, 2);
    CHECK(split.train.size() + split.test.size() == 5);
    // With one sample per class everything stays in the training split.
    CHECK(split.train.size() == 5);
}

TEST_CASE("generate_synthetic: class means honor the minimum separation") {
    const double separation = 5.0;
    TrainTestSplit split = generate_synthetic(6, 2000, 2, separation, 3);
    std::vector<std::vector<double>> sums(6, std::vector<double>(2, 0.0));
    std::vector<std::size_t> counts(6, 0);
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        const int c = split.train.labels[i];
        sums[c][0] += split.train.inputs.at(i, 0);
        sums[c][1] += split.train.inputs.at(i, 1);
        ++counts[c];
    }
    for (int c = 0; c < 6; ++c)
        for (int d = 0; d < 2; ++d) sums[c][d] /= static_cast<double>(counts[c]);
    for (int a = 0; a < 6; ++a)
        for (int b = a + 1; b < 6; ++b) {
            const double dx = sums[a][0] - sums[b][0], dy = sums[a][1] - sums[b][1];
            // Empirical means wander by ~sigma/sqrt(n); allow 5% slack.
            CHECK(std::sqrt(dx * dx + dy * dy) > separation * 0.95);
        }
}

TEST_CASE("generate_synthetic: invalid arguments are validation errors") {
    CHECK_THROWS_AS(generate_synthetic(1, 10, 2, 5.0, 1), ValidationError);
    CHECK_THROWS_AS(generate_synthetic(3, 0, 2, 5.0, 1), ValidationError);
}

TEST_CASE("load_idx: handcrafted 2-image fixture round-trips") {
    const fs::path dir = temp_dir();
    const fs::path images = dir / "fix-images.idx", labels = dir / "fix-labels.idx";
    write_idx_fixture(images, labels, /*truncate_images=*/false);

    Dataset ds = load_idx(images.string(), labels.string());
    CHECK(ds.size() == 2);
    CHECK(ds.inputs.cols == 784);
    CHECK(ds.labels == std::vector<int>{3, 7});
    // Image 0 is all zeros; image 1 has scaled pixels 255/255 and 128/255.
    for (std::size_t f = 0; f < 784; ++f) CHECK(ds.inputs.at(0, f) == 0.0);
    CHECK(ds.inputs.at(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ds.inputs.at(1, 1) == doctest::Approx(128.0 / 255.0).epsilon(1e-12));
}

TEST_CASE("load_idx: truncated image payload is a format error") {
    const fs::path dir = temp_dir();
    const fs::path images = dir / "trunc-images.idx", labels = dir / "trunc-labels.idx";
    write_idx_fixture(images, labels, /*truncate_images=*/true);
    CHECK_THROWS_AS(load_idx(images.string(), labels.string()), FormatError);
}

TEST_CASE("load_idx: wrong magic is a format error") {
    const fs::path dir = temp_dir();
    const fs::path images = dir / "magic-images.idx", labels = dir / "magic-labels.idx";
    write_idx_fixture(images, labels, false, /*image_magic=*/0x00000699);
    CHECK_THROWS_AS(load_idx(images.string(), labels.string()), FormatError);
}

TEST_CASE("load_idx: image/label count mismatch is rejected") {
    const fs::path dir = temp_dir();
    const fs::path images = dir / "count-images.idx", labels = dir / "count-labels.idx";
    write_idx_fixture(images, labels, false, 0x00000803, /*label_count=*/3);
    CHECK_THROWS_AS(load_idx(images.string(), labels.string()), ValidationError);
}

TEST_CASE("load_idx: missing file is an IO error") {
    CHECK_THROWS_AS(load_idx("/nonexistent/images.idx", "/nonexistent/labels.idx"), IoError);
}

TEST_CASE("dirichlet_partition: a single client receives the whole dataset") {
    Dataset ds = two_class_dataset(10);
    std::vector<Dataset> shards = dirichlet_partition(ds, {1, 0.5, 4});
    REQUIRE(shards.size() == 1);
    CHECK(shards[0].size() == ds.size());
    CHECK(shards[0].inputs.data == ds.inputs.data);
}

TEST_CASE("dirichlet_partition: shards partition the dataset without loss or duplication") {
    Dataset ds = two_class_dataset(50);
    std::vector<Dataset> shards = dirichlet_partition(ds, {4, 0.5, 7});

    std::size_t total = 0;
    std::multiset<double> seen;  // first feature is a unique row id in this fixture
    for (const Dataset& shard : shards) {
        total += shard.size();
        for (std::size_t i = 0; i < shard.size(); ++i) seen.insert(shard.inputs.at(i, 0));
    }
    CHECK(total == ds.size());
    std::multiset<double> expected;
    for (std::size_t i = 0; i < ds.size(); ++i) expected.insert(ds.inputs.at(i, 0));
    CHECK(seen == expected);
}

TEST_CASE("dirichlet_partition: shard sizes match an independent replay of the draws") {
    Dataset ds = two_class_dataset(100);
    PartitionSpec spec{2, 0.5, 123};
    std::vector<Dataset> shards = dirichlet_partition(ds, spec);
    std::vector<std::size_t> expected = reference_shard_sizes(ds, spec);
    REQUIRE(shards.size() == 2);
    CHECK(shards[0].size() == expected[0]);
    CHECK(shards[1].size() == expected[1]);
}

TEST_CASE("dirichlet_partition: determinism and validation") {
    Dataset ds = two_class_dataset(30);
    std::vector<Dataset> a = dirichlet_partition(ds, {3, 0.5, 11});
    std::vector<Dataset> b = dirichlet_partition(ds, {3, 0.5, 11});
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].inputs.data == b[k].inputs.data);
        CHECK(a[k].labels == b[k].labels);
    }
    CHECK_THROWS_AS(dirichlet_partition(ds, {0, 0.5, 1}), ValidationError);
    CHECK_THROWS_AS(dirichlet_partition(ds, {2, 0.0, 1}), ValidationError);
    CHECK_THROWS_AS(dirichlet_partition(ds, {61, 0.5, 1}), ValidationError);
}

TEST_CASE("dirichlet_partition: smaller alpha concentrates labels (statistical)") {
    Dataset ds = two_class_dataset(200);
    double entropy_low = 0.0, entropy_high = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        entropy_low += mean_label_entropy(dirichlet_partition(ds, {4, 0.1, seed}));
        entropy_high += mean_label_entropy(dirichlet_partition(ds, {4, 10.0, seed}));
    }
    CHECK(entropy_low / 50.0 < entropy_high / 50.0);
}

TEST_CASE("export_csv: header and row shape") {
    Dataset ds = two_class_dataset(2);
    const fs::path path = temp_dir() / "export.csv";
    export_csv(ds, path.string());

    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "f0,f1,label");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == ds.size());
}
