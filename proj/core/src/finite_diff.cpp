#include "rotlab/finite_diff.hpp"

#include <cmath>

namespace rotlab {

FiniteDiffReport finite_diff_check(const LossFn& f, const std::vector<Parameter*>& params,
                                   double eps, int max_coords_per_param, Rng& rng) {
    if (eps <= 0.0) throw Error("finite_diff_check: eps must be positive");

    const double base = f(true);
    if (!std::isfinite(base)) throw NonFiniteError("finite_diff_check: loss non-finite at base point");

    // Snapshot analytic gradients before the perturbation passes clobber them.
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const Parameter* p : params) analytic.push_back(p->grad);

    FiniteDiffReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        const std::int64_t n = p->value.numel();
        std::vector<std::int64_t> coords;
        if (n <= max_coords_per_param) {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            coords.reserve(static_cast<std::size_t>(max_coords_per_param));
            for (int i = 0; i < max_coords_per_param; ++i) {
                coords.push_back(rng.uniform_int(static_cast<int>(n)));
            }
        }
        for (std::int64_t c : coords) {
            const double saved = p->value[c];
            p->value[c] = saved + eps;
            const double up = f(false);
            p->value[c] = saved - eps;
            const double down = f(false);
            p->value[c] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NonFiniteError("finite_diff_check: non-finite loss perturbing " + p->name +
                                     "[" + std::to_string(c) + "]");
            }
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][c];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(a - numeric) / denom;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p->name;
                rep.worst_index = c;
                rep.analytic = a;
                rep.numeric = numeric;
            }
        }
    }
    return rep;
}

}  // namespace rotlab
