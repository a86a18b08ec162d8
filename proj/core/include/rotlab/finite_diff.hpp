#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rotlab/graph.hpp"
#include "rotlab/rng.hpp"

namespace rotlab {

// Loss callback for gradient checking. With with_grad=true the callee must
// zero parameter grads, run its backward pass, and leave analytic gradients
// in Parameter::grad. With false it only returns the loss value.
using LossFn = std::function<double(bool with_grad)>;

struct FiniteDiffReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Central differences at +-eps over up to max_coords_per_param sampled
// coordinates of each parameter. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Throws NonFiniteError naming the coordinate if f evaluates non-finite.
FiniteDiffReport finite_diff_check(const LossFn& f, const std::vector<Parameter*>& params,
                                   double eps, int max_coords_per_param, Rng& rng);

}  // namespace rotlab
