#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rotlab/tensor.hpp"

namespace rotlab {

// Raw IDX container: big-endian magic (2051 images / 2049 labels), big-endian
// extents, unsigned byte payload. Gzip-compressed files are accepted
// transparently.
struct IdxData {
    std::uint32_t magic = 0;
    std::vector<int> dims;
    std::vector<std::uint8_t> bytes;
};

IdxData load_idx(const std::string& path);

// A labeled image set: 28x28 grayscale scaled to [0,1].
struct MnistSet {
    std::vector<Tensor> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

// Loads an image/label file pair and cross-checks their counts.
MnistSet load_mnist_pair(const std::string& images_path, const std::string& labels_path);

// Resolves "<dir>/<base>" or "<dir>/<base>.gz", whichever exists.
std::string resolve_idx_file(const std::string& dir, const std::string& base);

struct MnistSource {
    MnistSet train;
    MnistSet test;

    // Expects the canonical MNIST file names (optionally .gz) under dir.
    static MnistSource open(const std::string& dir);
};

}  // namespace rotlab
