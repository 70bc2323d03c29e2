#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedclass/matrix.hpp"

namespace fedclass {

struct Dataset {
    Matrix inputs;            // [N x features]
    std::vector<int> labels;  // < class_count
    int class_count = 0;

    std::size_t size() const { return inputs.rows; }
    std::vector<std::size_t> class_counts() const;
};

struct PartitionSpec {
    int clients = 1;      // K
    double alpha = 0.5;   // Dirichlet concentration
    std::uint64_t seed = 0;
};

struct TrainTestSplit {
    Dataset train;
    Dataset test;
};

// Isotropic Gaussian blobs, one per class, means on a circle scaled so the
// minimum pairwise distance is `separation`. 80/20 stratified train/test.
TrainTestSplit generate_synthetic(int class_count, int per_class, int feature_dim,
                                  double separation, std::uint64_t seed);

// MNIST-style IDX pair (magic 2051 images / 2049 labels, big-endian dims,
// uint8 pixels scaled to [0,1]).
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Per-class Dirichlet(alpha) proportions with largest-remainder rounding;
// every sample lands in exactly one client shard.
std::vector<Dataset> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec);

void export_csv(const Dataset& ds, const std::string& path);

// Gamma(shape, 1) via Marsaglia-Tsang, with the alpha<1 boost. Exposed so a
// reference reimplementation can replay the exact Dirichlet draws.
double sample_gamma(double shape, std::mt19937_64& gen);

}  // namespace fedclass
