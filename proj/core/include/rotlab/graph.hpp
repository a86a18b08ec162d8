#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rotlab/tensor.hpp"

namespace rotlab {

// Trainable tensor with an accumulated gradient buffer of the same shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}
};

// Owns parameters in creation order. Order is load-bearing: optimizers and
// checkpoints iterate it, which keeps trajectories and files deterministic.
class ParamStore {
public:
    Parameter& create(const std::string& name, Tensor init);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;

    const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
    std::vector<Parameter*> pointers();

    void zero_grads();
    std::int64_t total_size() const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

enum class Op {
    Input, Param,
    // elementwise, same shape
    Add, Sub, Mul, Div,
    // elementwise unary
    Neg, Affine, Relu, LeakyRelu, Sigmoid, Tanh, Exp, Log, Sqrt, Square, Clamp,
    // linear algebra
    Matmul, AddBias,
    // spatial
    Conv2d, ChannelBias, TConv2d, MaxPool2,
    // shape
    Reshape, ExpandAxis, SumAxis, TransposeLast2, ConcatLast, SliceLast,
    // normalization / capsules
    SoftmaxAxis, CapsPredict, MatCapsPredict, Squash, VecNorm,
    // reductions
    SumAll, MeanAll, CeLogits,
};

const char* op_name(Op op);

// Reverse-mode tape. Values are computed eagerly as nodes are appended, so
// node ids double as a topological order; backward() walks ids in reverse
// and accumulates gradients additively across fan-out.
class Graph {
public:
    using Id = int;

    struct Node {
        Op op;
        Id in0 = -1, in1 = -1;
        double a = 0.0, b = 0.0;   // affine coefficients, leaky slope, clamp bounds
        int i0 = 0, i1 = 0;        // stride/pad, axis/count, slice bounds, positions
        Parameter* bound = nullptr;
        std::vector<std::int64_t> iaux;  // maxpool argmax indices
        std::vector<int> labels;         // cross-entropy targets
        Tensor value;
        Tensor grad;  // allocated on demand during backward
    };

    Id input(Tensor v);
    Id param(Parameter& p);

    Id add(Id x, Id y);
    Id sub(Id x, Id y);
    Id mul(Id x, Id y);
    Id div(Id x, Id y);

    Id neg(Id x) { return affine(x, -1.0, 0.0); }
    Id affine(Id x, double scale, double offset);
    Id relu(Id x);
    Id leaky_relu(Id x, double slope);
    Id sigmoid(Id x);
    Id tanh(Id x);
    Id exp(Id x);
    Id log(Id x);
    Id sqrt(Id x);
    Id square(Id x);
    Id clamp(Id x, double lo, double hi);

    Id matmul(Id x, Id w);
    Id add_bias(Id x, Id b);

    Id conv2d(Id x, Id k, int stride, int pad);
    Id channel_bias(Id x, Id b);
    Id tconv2d(Id x, Id k, int stride, int pad);
    Id maxpool2(Id x);

    Id reshape(Id x, std::vector<int> shape);
    Id expand_axis(Id x, int axis, int count);
    Id sum_axis(Id x, int axis);
    Id transpose_last2(Id x);
    Id concat_last(Id x, Id y);
    Id slice_last(Id x, int lo, int hi);

    Id softmax_axis(Id x, int axis);
    Id caps_predict(Id poses, Id weights);
    Id matcaps_predict(Id poses, Id weights, int positions);
    Id squash(Id x);
    Id vecnorm(Id x);

    Id sum_all(Id x);
    Id mean_all(Id x);
    Id ce_logits(Id logits, std::vector<int> labels);

    const Tensor& value(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& grad(Id id) const;
    const Node& node(Id id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse pass from a scalar loss node. Parameter gradients accumulate
    // into Parameter::grad; call ParamStore::zero_grads between steps.
    void backward(Id loss);

    void check_all_finite(const char* what) const;

private:
    Id push(Node n);
    Tensor& ensure_grad(Id id);
    const Tensor& val(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    std::vector<Node> nodes_;
};

}  // namespace rotlab
