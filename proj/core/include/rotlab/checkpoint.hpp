#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rotlab/graph.hpp"
#include "rotlab/tensor.hpp"

namespace rotlab {

// Self-describing parameter container. On disk: "RLCP" magic, u32 format
// version, string-keyed metadata, then named tensors as u32 dims + raw
// little-endian float64 payload. Round-trips are bit-exact.
struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;

    static Checkpoint from_params(const ParamStore& store);
    // Loads values into matching parameters; every parameter must be present
    // with an identical shape.
    void into_params(ParamStore& store) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rotlab
