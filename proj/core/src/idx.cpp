#include "rotlab/idx.hpp"

#include <zlib.h>

#include <filesystem>

namespace rotlab {

namespace {

// gzread passes plain files through untouched, which gives us transparent
// gzip support in one code path.
std::vector<std::uint8_t> read_all(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IdxError(IdxError::Kind::Io, "cannot open " + path);
    std::vector<std::uint8_t> out;
    std::uint8_t buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) {
        out.insert(out.end(), buf, buf + n);
    }
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw IdxError(IdxError::Kind::Io, "read failure on " + path);
    return out;
}

std::uint32_t be32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

}  // namespace

IdxData load_idx(const std::string& path) {
    const auto raw = read_all(path);
    if (raw.size() < 4) {
        throw IdxError(IdxError::Kind::Truncated, path + ": shorter than an IDX header");
    }
    IdxData idx;
    idx.magic = be32(raw.data());
    int ndim;
    if (idx.magic == 2051) {
        ndim = 3;
    } else if (idx.magic == 2049) {
        ndim = 1;
    } else {
        throw IdxError(IdxError::Kind::WrongMagic,
                       path + ": magic " + std::to_string(idx.magic) + " is neither 2051 nor 2049");
    }
    const std::size_t header = 4 + 4 * static_cast<std::size_t>(ndim);
    if (raw.size() < header) {
        throw IdxError(IdxError::Kind::Truncated, path + ": truncated dimension header");
    }
    std::size_t payload = 1;
    for (int i = 0; i < ndim; ++i) {
        const std::uint32_t d = be32(raw.data() + 4 + 4 * static_cast<std::size_t>(i));
        idx.dims.push_back(static_cast<int>(d));
        payload *= d;
    }
    if (raw.size() < header + payload) {
        throw IdxError(IdxError::Kind::Truncated,
                       path + ": payload has " + std::to_string(raw.size() - header) +
                           " bytes, header declares " + std::to_string(payload));
    }
    idx.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(header),
                     raw.begin() + static_cast<std::ptrdiff_t>(header + payload));
    return idx;
}

MnistSet load_mnist_pair(const std::string& images_path, const std::string& labels_path) {
    const IdxData imgs = load_idx(images_path);
    const IdxData labs = load_idx(labels_path);
    if (imgs.magic != 2051) {
        throw IdxError(IdxError::Kind::WrongMagic, images_path + ": not an images file");
    }
    if (labs.magic != 2049) {
        throw IdxError(IdxError::Kind::WrongMagic, labels_path + ": not a labels file");
    }
    if (imgs.dims[0] != labs.dims[0]) {
        throw IdxError(IdxError::Kind::CountMismatch,
                       std::to_string(imgs.dims[0]) + " images vs " + std::to_string(labs.dims[0]) +
                           " labels");
    }
    if (imgs.dims[1] != 28 || imgs.dims[2] != 28) {
        throw IdxError(IdxError::Kind::Io, images_path + ": expected 28x28 images, got " +
                                               std::to_string(imgs.dims[1]) + "x" +
                                               std::to_string(imgs.dims[2]));
    }
    MnistSet set;
    const int n = imgs.dims[0];
    set.images.reserve(static_cast<std::size_t>(n));
    set.labels.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor img({28, 28});
        const std::uint8_t* src = imgs.bytes.data() + static_cast<std::size_t>(i) * 784;
        for (int j = 0; j < 784; ++j) img.data[static_cast<std::size_t>(j)] = src[j] / 255.0;
        set.images.push_back(std::move(img));
        set.labels.push_back(labs.bytes[static_cast<std::size_t>(i)]);
    }
    return set;
}

std::string resolve_idx_file(const std::string& dir, const std::string& base) {
    namespace fs = std::filesystem;
    const fs::path plain = fs::path(dir) / base;
    if (fs::exists(plain)) return plain.string();
    const fs::path gz = fs::path(dir) / (base + ".gz");
    if (fs::exists(gz)) return gz.string();
    throw IdxError(IdxError::Kind::Io,
                   "neither " + plain.string() + " nor " + gz.string() + " exists");
}

MnistSource MnistSource::open(const std::string& dir) {
    MnistSource src;
    src.train = load_mnist_pair(resolve_idx_file(dir, "train-images-idx3-ubyte"),
                                resolve_idx_file(dir, "train-labels-idx1-ubyte"));
    src.test = load_mnist_pair(resolve_idx_file(dir, "t10k-images-idx3-ubyte"),
                               resolve_idx_file(dir, "t10k-labels-idx1-ubyte"));
    return src;
}

}  // namespace rotlab
