#include "rotlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace rotlab {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw CheckpointError("checkpoint truncated while reading u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw CheckpointError("checkpoint truncated while reading f64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw CheckpointError("checkpoint string length implausible");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw CheckpointError("checkpoint truncated while reading string");
    return s;
}

constexpr char kMagic[4] = {'R', 'L', 'C', 'P'};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

Checkpoint Checkpoint::from_params(const ParamStore& store) {
    Checkpoint c;
    for (const auto& p : store.all()) c.tensors.emplace_back(p->name, p->value);
    return c;
}

void Checkpoint::into_params(ParamStore& store) const {
    for (const auto& p : store.all()) {
        const Tensor* t = find(p->name);
        if (!t) throw CheckpointError("checkpoint missing parameter: " + p->name);
        if (t->shape != p->value.shape) {
            throw CheckpointError("checkpoint shape " + shape_str(t->shape) + " vs expected " +
                                  shape_str(p->value.shape) + " for " + p->name);
        }
        p->value = *t;
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    put_u32(os, Checkpoint::kFormatVersion);
    put_u32(os, static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        put_str(os, k);
        put_str(os, v);
    }
    put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_str(os, name);
        put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
        for (double v : t.data) put_f64(os, v);
    }
    if (!os) throw CheckpointError("write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError("bad checkpoint magic in " + path);
    }
    const std::uint32_t version = get_u32(is);
    if (version != Checkpoint::kFormatVersion) {
        throw CheckpointError("unsupported checkpoint format version " + std::to_string(version));
    }
    Checkpoint c;
    const std::uint32_t nmeta = get_u32(is);
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        std::string k = get_str(is);
        std::string v = get_str(is);
        c.meta.emplace(std::move(k), std::move(v));
    }
    const std::uint32_t nt = get_u32(is);
    for (std::uint32_t i = 0; i < nt; ++i) {
        std::string name = get_str(is);
        const std::uint32_t nd = get_u32(is);
        if (nd > 8) throw CheckpointError("checkpoint rank implausible for " + name);
        std::vector<int> shape(nd);
        for (auto& d : shape) d = static_cast<int>(get_u32(is));
        Tensor t(shape);
        for (double& v : t.data) v = get_f64(is);
        c.tensors.emplace_back(std::move(name), std::move(t));
    }
    return c;
}

}  // namespace rotlab
