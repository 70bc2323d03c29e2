#include "fedclass/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "fedclass/errors.hpp"
#include "fedclass/rng.hpp"

namespace fedclass {
namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw FormatError("truncated IDX header in " + path);
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& rows) {
    Dataset out;
    out.class_count = ds.class_count;
    out.inputs = Matrix(rows.size(), ds.inputs.cols);
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(ds.inputs.row(rows[i]), ds.inputs.row(rows[i]) + ds.inputs.cols,
                  out.inputs.row(i));
        out.labels.push_back(ds.labels[rows[i]]);
    }
    return out;
}

// Largest-remainder apportionment of `total` items by `proportions`.
std::vector<std::size_t> apportion(const std::vector<double>& proportions, std::size_t total) {
    const std::size_t k = proportions.size();
    std::vector<std::size_t> counts(k);
    std::vector<std::pair<double, std::size_t>> remainders(k);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = proportions[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders[i] = {exact - std::floor(exact), i};
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[remainders[i % k].second];
    return counts;
}

}  // namespace

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(class_count), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    return counts;
}

double sample_gamma(double shape, std::mt19937_64& gen) {
    if (shape < 1.0) {
        // Boost: Gamma(a) = Gamma(a+1) * U^(1/a)
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        const double u = unif(gen);
        return sample_gamma(shape + 1.0, gen) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    while (true) {
        double x = normal(gen);
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = unif(gen);
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

TrainTestSplit generate_synthetic(int class_count, int per_class, int feature_dim,
                                  double separation, std::uint64_t seed) {
    if (class_count < 2) throw ValidationError("synthetic data needs at least 2 classes");
    if (per_class < 1) throw ValidationError("per_class must be at least 1");
    if (feature_dim < 1) throw ValidationError("feature_dim must be at least 1");

    // Means as paired clusters on a circle in the first two dims. Consecutive
    // classes (2i, 2i+1) form a cluster whose center sits on a circle sized so
    // cluster centers are 4*separation apart; the two members are offset along
    // the local tangent by +/- separation/2, so the minimum pairwise distance
    // between any two means is exactly `separation` (within a cluster) and at
    // least 3*separation across clusters. The tangential offset rotates with
    // the cluster angle, so neighboring clusters discriminate their members
    // along different (generally conflicting) directions of the shared space.
    std::vector<std::vector<double>> means(static_cast<std::size_t>(class_count),
                                           std::vector<double>(feature_dim, 0.0));
    if (feature_dim == 1) {
        for (int c = 0; c < class_count; ++c) means[c][0] = separation * c;
    } else {
        const int clusters = (class_count + 1) / 2;
        const double radius =
            clusters == 1 ? 0.0
                          : 2.0 * separation / std::sin(std::numbers::pi / clusters);
        for (int c = 0; c < class_count; ++c) {
            const int k = c / 2;
            const double angle = 2.0 * std::numbers::pi * k / clusters;
            const double sign = (c % 2 == 0) ? 1.0 : -1.0;
            means[c][0] = radius * std::cos(angle) - sign * 0.5 * separation * std::sin(angle);
            means[c][1] = radius * std::sin(angle) + sign * 0.5 * separation * std::cos(angle);
        }
    }

    auto gen = rng::engine(seed, {rng::kTagData});
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset all;
    all.class_count = class_count;
    all.inputs = Matrix(static_cast<std::size_t>(class_count) * per_class, feature_dim);
    all.labels.resize(all.inputs.rows);
    std::size_t row = 0;
    for (int c = 0; c < class_count; ++c) {
        for (int i = 0; i < per_class; ++i, ++row) {
            double* dst = all.inputs.row(row);
            for (int f = 0; f < feature_dim; ++f) dst[f] = means[c][f] + noise(gen);
            all.labels[row] = c;
        }
    }

    // Stratified 80/20: within each class, shuffle then put the first 20%
    // (at least one sample stays in train) into test.
    std::vector<std::size_t> train_rows, test_rows;
    for (int c = 0; c < class_count; ++c) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < all.size(); ++i)
            if (all.labels[i] == c) rows.push_back(i);
        std::shuffle(rows.begin(), rows.end(), gen);
        const std::size_t n_test = std::min(rows.size() - 1, rows.size() / 5);
        for (std::size_t i = 0; i < rows.size(); ++i)
            (i < n_test ? test_rows : train_rows).push_back(rows[i]);
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    return {take_rows(all, train_rows), take_rows(all, test_rows)};
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream images(images_path, std::ios::binary);
    if (!images) throw IoError("cannot open IDX image file: " + images_path);
    std::ifstream labels(labels_path, std::ios::binary);
    if (!labels) throw IoError("cannot open IDX label file: " + labels_path);

    if (read_be32(images, images_path) != kIdxImagesMagic)
        throw FormatError("bad IDX image magic in " + images_path);
    if (read_be32(labels, labels_path) != kIdxLabelsMagic)
        throw FormatError("bad IDX label magic in " + labels_path);

    const std::uint32_t n_images = read_be32(images, images_path);
    const std::uint32_t rows = read_be32(images, images_path);
    const std::uint32_t cols = read_be32(images, images_path);
    const std::uint32_t n_labels = read_be32(labels, labels_path);
    if (n_images != n_labels)
        throw ValidationError("IDX image/label count mismatch: " + std::to_string(n_images) +
                              " vs " + std::to_string(n_labels));

    const std::size_t features = std::size_t(rows) * cols;
    Dataset ds;
    ds.inputs = Matrix(n_images, features);
    ds.labels.resize(n_images);
    std::vector<unsigned char> pixel_buf(features);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        images.read(reinterpret_cast<char*>(pixel_buf.data()),
                    static_cast<std::streamsize>(features));
        if (!images) throw FormatError("truncated IDX image data in " + images_path);
        double* dst = ds.inputs.row(i);
        for (std::size_t f = 0; f < features; ++f) dst[f] = pixel_buf[f] / 255.0;
        unsigned char lbl;
        labels.read(reinterpret_cast<char*>(&lbl), 1);
        if (!labels) throw FormatError("truncated IDX label data in " + labels_path);
        ds.labels[i] = lbl;
    }
    ds.class_count = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    return ds;
}

std::vector<Dataset> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec) {
    if (spec.clients < 1) throw ValidationError("client count must be at least 1");
    if (spec.alpha <= 0.0) throw ValidationError("Dirichlet alpha must be positive");
    if (static_cast<std::size_t>(spec.clients) > ds.size())
        throw ValidationError("more clients than samples");

    const std::size_t k = static_cast<std::size_t>(spec.clients);
    auto gen = rng::engine(spec.seed, {rng::kTagPartition});

    std::vector<std::vector<std::size_t>> rows_by_class(static_cast<std::size_t>(ds.class_count));
    for (std::size_t i = 0; i < ds.size(); ++i)
        rows_by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<std::vector<std::size_t>> shards(k);
        for (const auto& rows : rows_by_class) {
            if (rows.empty()) continue;
            std::vector<double> draws(k);
            double total = 0.0;
            for (double& d : draws) {
                d = sample_gamma(spec.alpha, gen);
                total += d;
            }
            for (double& d : draws) d /= total;
            const std::vector<std::size_t> counts = apportion(draws, rows.size());
            std::size_t cursor = 0;
            for (std::size_t c = 0; c < k; ++c)
                for (std::size_t i = 0; i < counts[c]; ++i) shards[c].push_back(rows[cursor++]);
        }
        const bool any_empty =
            std::any_of(shards.begin(), shards.end(), [](const auto& s) { return s.empty(); });
        if (any_empty) continue;
        std::vector<Dataset> out;
        out.reserve(k);
        for (auto& shard : shards) {
            std::sort(shard.begin(), shard.end());
            out.push_back(take_rows(ds, shard));
        }
        return out;
    }
    throw ValidationError("Dirichlet partition left a client empty after 100 redraws");
}

void export_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (std::size_t f = 0; f < ds.inputs.cols; ++f) out << 'f' << f << ',';
    out << "label\n";
    char buf[32];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t f = 0; f < ds.inputs.cols; ++f) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.inputs.at(i, f));
            out << buf << ',';
        }
        out << ds.labels[i] << '\n';
    }
    if (!out) throw IoError("write failure: " + path);
}

}  // namespace fedclass
