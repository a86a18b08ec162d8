#include "rotlab/optim.hpp"

#include <cmath>

namespace rotlab {

Optimizer::Optimizer(OptimConfig cfg, std::vector<Parameter*> params)
    : cfg_(cfg), params_(std::move(params)) {
    if (cfg_.kind == OptimKind::Adam) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const Parameter* p : params_) {
            m_.push_back(Tensor::zeros(p->value.shape));
            v_.push_back(Tensor::zeros(p->value.shape));
        }
    }
}

void Optimizer::step() {
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Parameter* p = params_[pi];
        if (!p->grad.same_shape(p->value)) {
            throw ShapeError("optimizer: grad shape " + shape_str(p->grad.shape) +
                             " vs param shape " + shape_str(p->value.shape) + " for " + p->name);
        }
        if (cfg_.kind == OptimKind::Sgd) {
            for (std::size_t i = 0; i < p->value.data.size(); ++i) {
                p->value.data[i] -= cfg_.lr * p->grad.data[i];
            }
        } else {
            Tensor& m = m_[pi];
            Tensor& v = v_[pi];
            for (std::size_t i = 0; i < p->value.data.size(); ++i) {
                const double g = p->grad.data[i];
                m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g;
                v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m.data[i] / bc1;
                const double vhat = v.data[i] / bc2;
                p->value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
        if (cfg_.precision == Precision::F32) quantize_f32(p->value);
    }
}

}  // namespace rotlab
