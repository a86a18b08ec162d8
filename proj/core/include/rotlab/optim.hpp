#pragma once

#include <cstdint>
#include <vector>

#include "rotlab/graph.hpp"

namespace rotlab {

enum class Precision { F64, F32 };

enum class OptimKind { Sgd, Adam };

struct OptimConfig {
    OptimKind kind = OptimKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Precision precision = Precision::F64;
};

// SGD / Adam over a fixed parameter list. Updates are elementwise and applied
// in parameter order, so trajectories are deterministic. In 32-bit mode the
// updated values are rounded through float after each step.
class Optimizer {
public:
    Optimizer(OptimConfig cfg, std::vector<Parameter*> params);

    // Applies one update from the gradients currently in Parameter::grad.
    void step();

    std::int64_t step_count() const { return step_count_; }
    const OptimConfig& config() const { return cfg_; }

private:
    OptimConfig cfg_;
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;  // adam moment buffers, parallel to params_
    std::int64_t step_count_ = 0;
};

}  // namespace rotlab
