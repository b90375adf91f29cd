#pragma once

#include <string>
#include <vector>

#include "divbnn/rng.hpp"
#include "divbnn/tensor.hpp"

namespace divbnn {

struct Dataset {
    std::vector<std::vector<scalar_t>> x;
    std::vector<int> y;
    size_t num_classes = 0;

    size_t size() const { return x.size(); }
    Tensor features() const; // {n, dim}
};

struct SplitData {
    Dataset train;
    Dataset val;
};

struct DatasetSpec {
    std::string kind; // two_moons | spirals | csv_vectors | idx_images
    size_t n = 1000;
    size_t classes = 2;       // spirals only
    scalar_t noise = 0.1;     // geometric jitter
    scalar_t label_noise = 0.0; // fraction of train labels resampled; val stays clean
    std::string path;         // csv_vectors
    std::string images_path;  // idx_images
    std::string labels_path;  // idx_images
    size_t subset_size = 0;   // idx_images; 0 = all
    scalar_t val_fraction = 0.2;
};

// Deterministic generation, shuffle, split, then standardization of features
// to zero mean / unit variance using train statistics only.
SplitData make_dataset(const DatasetSpec& spec, uint64_t seed);

Dataset two_moons(size_t n, scalar_t noise, Rng& rng);
Dataset spirals(size_t n, size_t classes, scalar_t noise, Rng& rng);
// CSV rows: feature columns then an integer label in the last column.
Dataset load_csv_vectors(const std::string& path);
Dataset load_idx_images(const std::string& images_path, const std::string& labels_path,
                        size_t subset_size);

void write_csv_vectors(const Dataset& data, const std::string& path);

} // namespace divbnn
