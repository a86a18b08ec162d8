#include "rotlab/graph.hpp"

#include <algorithm>
#include <cmath>

#include "conv.hpp"
#include "gemm.hpp"

namespace rotlab {

Parameter& ParamStore::create(const std::string& name, Tensor init) {
    if (find(name)) throw Error("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    return *params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
    for (auto& p : params_) {
        if (p->name == name) return p.get();
    }
    return nullptr;
}

const Parameter* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p->name == name) return p.get();
    }
    return nullptr;
}

std::vector<Parameter*> ParamStore::pointers() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p->grad.fill(0.0);
}

std::int64_t ParamStore::total_size() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Neg: return "neg";
        case Op::Affine: return "affine";
        case Op::Relu: return "relu";
        case Op::LeakyRelu: return "leaky_relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::Square: return "square";
        case Op::Clamp: return "clamp";
        case Op::Matmul: return "matmul";
        case Op::AddBias: return "add_bias";
        case Op::Conv2d: return "conv2d";
        case Op::ChannelBias: return "channel_bias";
        case Op::TConv2d: return "tconv2d";
        case Op::MaxPool2: return "maxpool2";
        case Op::Reshape: return "reshape";
        case Op::ExpandAxis: return "expand_axis";
        case Op::SumAxis: return "sum_axis";
        case Op::TransposeLast2: return "transpose_last2";
        case Op::ConcatLast: return "concat_last";
        case Op::SliceLast: return "slice_last";
        case Op::SoftmaxAxis: return "softmax_axis";
        case Op::CapsPredict: return "caps_predict";
        case Op::MatCapsPredict: return "matcaps_predict";
        case Op::Squash: return "squash";
        case Op::VecNorm: return "vecnorm";
        case Op::SumAll: return "sum_all";
        case Op::MeanAll: return "mean_all";
        case Op::CeLogits: return "ce_logits";
    }
    return "?";
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// split shape at axis into [outer, K, inner]
void axis_split(const std::vector<int>& shape, int axis, std::int64_t& outer, int& k,
                std::int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
    k = shape[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

}  // namespace

Graph::Id Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Tensor& Graph::ensure_grad(Id id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

const Tensor& Graph::grad(Id id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.data.empty()) {
        throw Error("gradient not computed for node " + std::to_string(id));
    }
    return n.grad;
}

Graph::Id Graph::input(Tensor v) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(v);
    return push(std::move(n));
}

Graph::Id Graph::param(Parameter& p) {
    Node n;
    n.op = Op::Param;
    n.bound = &p;
    n.value = p.value;
    return push(std::move(n));
}

Graph::Id Graph::add(Id x, Id y) {
    check_same_shape(val(x), val(y), "add");
    Node n;
    n.op = Op::Add;
    n.in0 = x;
    n.in1 = y;
    n.value = val(x);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += val(y).data[i];
    return push(std::move(n));
}

Graph::Id Graph::sub(Id x, Id y) {
    check_same_shape(val(x), val(y), "sub");
    Node n;
    n.op = Op::Sub;
    n.in0 = x;
    n.in1 = y;
    n.value = val(x);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= val(y).data[i];
    return push(std::move(n));
}

Graph::Id Graph::mul(Id x, Id y) {
    check_same_shape(val(x), val(y), "mul");
    Node n;
    n.op = Op::Mul;
    n.in0 = x;
    n.in1 = y;
    n.value = val(x);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= val(y).data[i];
    return push(std::move(n));
}

Graph::Id Graph::div(Id x, Id y) {
    check_same_shape(val(x), val(y), "div");
    Node n;
    n.op = Op::Div;
    n.in0 = x;
    n.in1 = y;
    n.value = val(x);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] /= val(y).data[i];
    return push(std::move(n));
}

Graph::Id Graph::affine(Id x, double scale, double offset) {
    Node n;
    n.op = Op::Affine;
    n.in0 = x;
    n.a = scale;
    n.b = offset;
    n.value = val(x);
    for (double& v : n.value.data) v = scale * v + offset;
    return push(std::move(n));
}

Graph::Id Graph::relu(Id x) {
    Node n;
    n.op = Op::Relu;
    n.in0 = x;
    n.value = val(x);
    for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
}

Graph::Id Graph::leaky_relu(Id x, double slope) {
    Node n;
    n.op = Op::LeakyRelu;
    n.in0 = x;
    n.a = slope;
    n.value = val(x);
    for (double& v : n.value.data) v = v > 0.0 ? v : slope * v;
    return push(std::move(n));
}

Graph::Id Graph::sigmoid(Id x) {
    Node n;
    n.op = Op::Sigmoid;
    n.in0 = x;
    n.value = val(x);
    for (double& v : n.value.data) v = stable_sigmoid(v);
    return push(std::move(n));
}

Graph::Id Graph::tanh(Id x) {
    Node n;
    n.op = Op::Tanh;
    n.in0 = x;
    n.value = val(x);
    for (double& v : n.value.data) v = std::tanh(v);
    return push(std::move(n));
}

Graph::Id Graph::exp(Id x) {
    Node n;
    n.op = Op::Exp;
    n.in0 = x;
    n.value = val(x);
    for (double& v : n.value.data) v = std::exp(v);
    return push(std::move(n));
}

Graph::Id Graph::log(Id x) {
    Node n;
    n.op = Op::Log;
    n.in0 = x;
    n.value = val(x);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) {
        if (n.value.data[i] <= 0.0) {
            throw NonFiniteError("log of non-positive value at flat index " + std::to_string(i));
        }
        n.value.data[i] = std::log(n.value.data[i]);
    }
    return push(std::move(n));
}

Graph::Id Graph::sqrt(Id x) {
    Node n;
    n.op = Op::Sqrt;
    n.in0 = x;
    n.value = val(x);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) {
        if (n.value.data[i] < 0.0) {
            throw NonFiniteError("sqrt of negative value at flat index " + std::to_string(i));
        }
        n.value.data[i] = std::sqrt(n.value.data[i]);
    }
    return push(std::move(n));
}

Graph::Id Graph::square(Id x) {
    Node n;
    n.op = Op::Square;
    n.in0 = x;
    n.value = val(x);
    for (double& v : n.value.data) v = v * v;
    return push(std::move(n));
}

Graph::Id Graph::clamp(Id x, double lo, double hi) {
    Node n;
    n.op = Op::Clamp;
    n.in0 = x;
    n.a = lo;
    n.b = hi;
    n.value = val(x);
    for (double& v : n.value.data) v = std::min(std::max(v, lo), hi);
    return push(std::move(n));
}

Graph::Id Graph::matmul(Id x, Id w) {
    const Tensor& a = val(x);
    const Tensor& b = val(w);
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible " + shape_str(a.shape) + " x " + shape_str(b.shape));
    }
    Node n;
    n.op = Op::Matmul;
    n.in0 = x;
    n.in1 = w;
    n.value = Tensor::zeros({a.dim(0), b.dim(1)});
    detail::mm_acc(a.data.data(), b.data.data(), n.value.data.data(), a.dim(0), a.dim(1), b.dim(1));
    return push(std::move(n));
}

Graph::Id Graph::add_bias(Id x, Id b) {
    const Tensor& a = val(x);
    const Tensor& bias = val(b);
    if (bias.ndim() != 1 || a.ndim() < 1 || a.dim(a.ndim() - 1) != bias.dim(0)) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape) + " vs input " +
                         shape_str(a.shape));
    }
    Node n;
    n.op = Op::AddBias;
    n.in0 = x;
    n.in1 = b;
    n.value = a;
    const int m = bias.dim(0);
    const std::int64_t rows = a.numel() / m;
    for (std::int64_t r = 0; r < rows; ++r) {
        double* row = n.value.data.data() + r * m;
        for (int j = 0; j < m; ++j) row[j] += bias.data[static_cast<std::size_t>(j)];
    }
    return push(std::move(n));
}

Graph::Id Graph::conv2d(Id x, Id k, int stride, int pad) {
    const auto d = detail::conv_dims(val(x).shape, val(k).shape, stride, pad);
    Node n;
    n.op = Op::Conv2d;
    n.in0 = x;
    n.in1 = k;
    n.i0 = stride;
    n.i1 = pad;
    n.value = Tensor::zeros({d.n, d.f, d.oh, d.ow});
    detail::conv2d_forward(val(x), val(k), d, n.value);
    return push(std::move(n));
}

Graph::Id Graph::channel_bias(Id x, Id b) {
    const Tensor& a = val(x);
    const Tensor& bias = val(b);
    if (a.ndim() != 4 || bias.ndim() != 1 || bias.dim(0) != a.dim(1)) {
        throw ShapeError("channel_bias: bias " + shape_str(bias.shape) + " vs input " +
                         shape_str(a.shape));
    }
    Node n;
    n.op = Op::ChannelBias;
    n.in0 = x;
    n.in1 = b;
    n.value = a;
    const std::int64_t hw = static_cast<std::int64_t>(a.dim(2)) * a.dim(3);
    for (int i = 0; i < a.dim(0); ++i) {
        for (int f = 0; f < a.dim(1); ++f) {
            double* p = n.value.data.data() + (static_cast<std::int64_t>(i) * a.dim(1) + f) * hw;
            const double bv = bias.data[static_cast<std::size_t>(f)];
            for (std::int64_t j = 0; j < hw; ++j) p[j] += bv;
        }
    }
    return push(std::move(n));
}

Graph::Id Graph::tconv2d(Id x, Id k, int stride, int pad) {
    Node n;
    n.op = Op::TConv2d;
    n.in0 = x;
    n.in1 = k;
    n.i0 = stride;
    n.i1 = pad;
    n.value = Tensor::zeros(detail::tconv2d_out_shape(val(x).shape, val(k).shape, stride, pad));
    detail::tconv2d_forward(val(x), val(k), stride, pad, n.value);
    return push(std::move(n));
}

Graph::Id Graph::maxpool2(Id x) {
    const Tensor& a = val(x);
    if (a.ndim() != 4 || a.dim(2) % 2 != 0 || a.dim(3) % 2 != 0) {
        throw ShapeError("maxpool2: input " + shape_str(a.shape) + " must be 4-d with even H,W");
    }
    const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    Node n;
    n.op = Op::MaxPool2;
    n.in0 = x;
    n.value = Tensor::zeros({N, C, H / 2, W / 2});
    n.iaux.resize(n.value.data.size());
    std::int64_t o = 0;
    for (int nc = 0; nc < N * C; ++nc) {
        const double* plane = a.data.data() + static_cast<std::int64_t>(nc) * H * W;
        for (int i = 0; i < H; i += 2) {
            for (int j = 0; j < W; j += 2) {
                std::int64_t best = static_cast<std::int64_t>(nc) * H * W + i * W + j;
                double bv = plane[i * W + j];
                const int di[4] = {0, 0, 1, 1}, dj[4] = {0, 1, 0, 1};
                for (int t = 1; t < 4; ++t) {
                    const double v = plane[(i + di[t]) * W + (j + dj[t])];
                    if (v > bv) {
                        bv = v;
                        best = static_cast<std::int64_t>(nc) * H * W + (i + di[t]) * W + (j + dj[t]);
                    }
                }
                n.value.data[static_cast<std::size_t>(o)] = bv;
                n.iaux[static_cast<std::size_t>(o)] = best;
                ++o;
            }
        }
    }
    return push(std::move(n));
}

Graph::Id Graph::reshape(Id x, std::vector<int> shape) {
    if (shape_numel(shape) != val(x).numel()) {
        throw ShapeError("reshape: " + shape_str(val(x).shape) + " -> " + shape_str(shape) +
                         " changes element count");
    }
    Node n;
    n.op = Op::Reshape;
    n.in0 = x;
    n.value = Tensor(std::move(shape), val(x).data);
    return push(std::move(n));
}

Graph::Id Graph::expand_axis(Id x, int axis, int count) {
    const Tensor& a = val(x);
    if (axis < 0 || axis > a.ndim() || count < 1) {
        throw ShapeError("expand_axis: bad axis/count for " + shape_str(a.shape));
    }
    std::vector<int> shape = a.shape;
    shape.insert(shape.begin() + axis, count);
    std::int64_t outer, inner;
    int k;
    axis_split(shape, axis, outer, k, inner);
    Node n;
    n.op = Op::ExpandAxis;
    n.in0 = x;
    n.i0 = axis;
    n.i1 = count;
    n.value = Tensor::zeros(shape);
    for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = a.data.data() + o * inner;
        for (int r = 0; r < count; ++r) {
            double* dst = n.value.data.data() + (o * count + r) * inner;
            std::copy(src, src + inner, dst);
        }
    }
    return push(std::move(n));
}

Graph::Id Graph::sum_axis(Id x, int axis) {
    const Tensor& a = val(x);
    if (axis < 0 || axis >= a.ndim()) {
        throw ShapeError("sum_axis: bad axis for " + shape_str(a.shape));
    }
    std::int64_t outer, inner;
    int k;
    axis_split(a.shape, axis, outer, k, inner);
    std::vector<int> shape = a.shape;
    shape.erase(shape.begin() + axis);
    if (shape.empty()) shape = {1};
    Node n;
    n.op = Op::SumAxis;
    n.in0 = x;
    n.i0 = axis;
    n.value = Tensor::zeros(shape);
    for (std::int64_t o = 0; o < outer; ++o) {
        double* dst = n.value.data.data() + o * inner;
        for (int r = 0; r < k; ++r) {
            const double* src = a.data.data() + (o * k + r) * inner;
            for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    return push(std::move(n));
}

Graph::Id Graph::transpose_last2(Id x) {
    const Tensor& a = val(x);
    if (a.ndim() < 2) throw ShapeError("transpose_last2: rank < 2");
    const int A = a.dim(a.ndim() - 2), B = a.dim(a.ndim() - 1);
    std::vector<int> shape = a.shape;
    std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
    Node n;
    n.op = Op::TransposeLast2;
    n.in0 = x;
    n.value = Tensor::zeros(shape);
    const std::int64_t blocks = a.numel() / (static_cast<std::int64_t>(A) * B);
    for (std::int64_t blk = 0; blk < blocks; ++blk) {
        const double* src = a.data.data() + blk * A * B;
        double* dst = n.value.data.data() + blk * A * B;
        for (int i = 0; i < A; ++i) {
            for (int j = 0; j < B; ++j) dst[static_cast<std::int64_t>(j) * A + i] = src[static_cast<std::int64_t>(i) * B + j];
        }
    }
    return push(std::move(n));
}

Graph::Id Graph::concat_last(Id x, Id y) {
    const Tensor& a = val(x);
    const Tensor& b = val(y);
    if (a.ndim() != b.ndim() || a.ndim() < 1) {
        throw ShapeError("concat_last: rank mismatch");
    }
    for (int i = 0; i + 1 < a.ndim(); ++i) {
        if (a.dim(i) != b.dim(i)) {
            throw ShapeError("concat_last: leading dims differ, " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
        }
    }
    const int A = a.dim(a.ndim() - 1), B = b.dim(b.ndim() - 1);
    std::vector<int> shape = a.shape;
    shape.back() = A + B;
    Node n;
    n.op = Op::ConcatLast;
    n.in0 = x;
    n.in1 = y;
    n.value = Tensor::zeros(shape);
    const std::int64_t rows = a.numel() / A;
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy(a.data.begin() + r * A, a.data.begin() + (r + 1) * A,
                  n.value.data.begin() + r * (A + B));
        std::copy(b.data.begin() + r * B, b.data.begin() + (r + 1) * B,
                  n.value.data.begin() + r * (A + B) + A);
    }
    return push(std::move(n));
}

Graph::Id Graph::slice_last(Id x, int lo, int hi) {
    const Tensor& a = val(x);
    const int A = a.dim(a.ndim() - 1);
    if (lo < 0 || hi > A || lo >= hi) {
        throw ShapeError("slice_last: bad range [" + std::to_string(lo) + "," + std::to_string(hi) +
                         ") for last dim " + std::to_string(A));
    }
    std::vector<int> shape = a.shape;
    shape.back() = hi - lo;
    Node n;
    n.op = Op::SliceLast;
    n.in0 = x;
    n.i0 = lo;
    n.i1 = hi;
    n.value = Tensor::zeros(shape);
    const std::int64_t rows = a.numel() / A;
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy(a.data.begin() + r * A + lo, a.data.begin() + r * A + hi,
                  n.value.data.begin() + r * (hi - lo));
    }
    return push(std::move(n));
}

Graph::Id Graph::softmax_axis(Id x, int axis) {
    const Tensor& a = val(x);
    if (axis < 0 || axis >= a.ndim()) {
        throw ShapeError("softmax_axis: bad axis for " + shape_str(a.shape));
    }
    std::int64_t outer, inner;
    int k;
    axis_split(a.shape, axis, outer, k, inner);
    Node n;
    n.op = Op::SoftmaxAxis;
    n.in0 = x;
    n.i0 = axis;
    n.value = a;
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
            double* base = n.value.data.data() + o * k * inner + i;
            double m = base[0];
            for (int r = 1; r < k; ++r) m = std::max(m, base[static_cast<std::int64_t>(r) * inner]);
            double s = 0.0;
            for (int r = 0; r < k; ++r) {
                double& v = base[static_cast<std::int64_t>(r) * inner];
                v = std::exp(v - m);
                s += v;
            }
            for (int r = 0; r < k; ++r) base[static_cast<std::int64_t>(r) * inner] /= s;
        }
    }
    return push(std::move(n));
}

Graph::Id Graph::caps_predict(Id poses, Id weights) {
    const Tensor& p = val(poses);
    const Tensor& w = val(weights);
    if (p.ndim() != 3 || w.ndim() != 4 || p.dim(1) != w.dim(0) || p.dim(2) != w.dim(2)) {
        throw ShapeError("caps_predict: poses " + shape_str(p.shape) + " vs weights " +
                         shape_str(w.shape));
    }
    const int N = p.dim(0), I = p.dim(1), D = p.dim(2), J = w.dim(1), E = w.dim(3);
    Node n;
    n.op = Op::CapsPredict;
    n.in0 = poses;
    n.in1 = weights;
    n.value = Tensor::zeros({N, I, J, E});
    for (int b = 0; b < N; ++b) {
        for (int i = 0; i < I; ++i) {
            const double* pv = p.data.data() + (static_cast<std::int64_t>(b) * I + i) * D;
            for (int j = 0; j < J; ++j) {
                const double* wv = w.data.data() +
                                   ((static_cast<std::int64_t>(i) * J + j) * D) * E;
                double* uv = n.value.data.data() +
                             ((static_cast<std::int64_t>(b) * I + i) * J + j) * E;
                for (int d = 0; d < D; ++d) {
                    const double pd = pv[d];
                    const double* wrow = wv + static_cast<std::int64_t>(d) * E;
                    for (int e = 0; e < E; ++e) uv[e] += pd * wrow[e];
                }
            }
        }
    }
    return push(std::move(n));
}

Graph::Id Graph::matcaps_predict(Id poses, Id weights, int positions) {
    const Tensor& p = val(poses);
    const Tensor& w = val(weights);
    if (p.ndim() != 3 || p.dim(2) != 16 || w.ndim() != 3 || w.dim(2) != 16 ||
        positions < 1 || p.dim(1) % positions != 0 || p.dim(1) / positions != w.dim(0)) {
        throw ShapeError("matcaps_predict: poses " + shape_str(p.shape) + " vs weights " +
                         shape_str(w.shape) + " positions " + std::to_string(positions));
    }
    const int N = p.dim(0), I = p.dim(1), J = w.dim(1);
    Node n;
    n.op = Op::MatCapsPredict;
    n.in0 = poses;
    n.in1 = weights;
    n.i0 = positions;
    n.value = Tensor::zeros({N, I, J, 16});
    for (int b = 0; b < N; ++b) {
        for (int i = 0; i < I; ++i) {
            const int t = i / positions;
            const double* pm = p.data.data() + (static_cast<std::int64_t>(b) * I + i) * 16;
            for (int j = 0; j < J; ++j) {
                const double* wm = w.data.data() + (static_cast<std::int64_t>(t) * J + j) * 16;
                double* vm = n.value.data.data() +
                             ((static_cast<std::int64_t>(b) * I + i) * J + j) * 16;
                for (int r = 0; r < 4; ++r) {
                    for (int c = 0; c < 4; ++c) {
                        double s = 0.0;
                        for (int q = 0; q < 4; ++q) s += pm[r * 4 + q] * wm[q * 4 + c];
                        vm[r * 4 + c] = s;
                    }
                }
            }
        }
    }
    return push(std::move(n));
}

Graph::Id Graph::squash(Id x) {
    const Tensor& a = val(x);
    if (a.ndim() < 1) throw ShapeError("squash: rank 0");
    const int E = a.dim(a.ndim() - 1);
    Node n;
    n.op = Op::Squash;
    n.in0 = x;
    n.value = a;
    const std::int64_t rows = a.numel() / E;
    for (std::int64_t r = 0; r < rows; ++r) {
        double* v = n.value.data.data() + r * E;
        double n2 = 0.0;
        for (int e = 0; e < E; ++e) n2 += v[e] * v[e];
        const double norm = std::sqrt(n2);
        const double scale = norm < 1e-30 ? 0.0 : norm / (1.0 + n2);
        for (int e = 0; e < E; ++e) v[e] *= scale;
    }
    return push(std::move(n));
}

Graph::Id Graph::vecnorm(Id x) {
    const Tensor& a = val(x);
    if (a.ndim() < 2) throw ShapeError("vecnorm: rank < 2");
    const int E = a.dim(a.ndim() - 1);
    std::vector<int> shape(a.shape.begin(), a.shape.end() - 1);
    Node n;
    n.op = Op::VecNorm;
    n.in0 = x;
    n.value = Tensor::zeros(shape);
    const std::int64_t rows = a.numel() / E;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* v = a.data.data() + r * E;
        double n2 = 0.0;
        for (int e = 0; e < E; ++e) n2 += v[e] * v[e];
        n.value.data[static_cast<std::size_t>(r)] = std::sqrt(n2);
    }
    return push(std::move(n));
}

Graph::Id Graph::sum_all(Id x) {
    Node n;
    n.op = Op::SumAll;
    n.in0 = x;
    double s = 0.0;
    for (double v : val(x).data) s += v;
    n.value = Tensor::scalar(s);
    return push(std::move(n));
}

Graph::Id Graph::mean_all(Id x) {
    Node n;
    n.op = Op::MeanAll;
    n.in0 = x;
    double s = 0.0;
    for (double v : val(x).data) s += v;
    n.value = Tensor::scalar(s / static_cast<double>(val(x).numel()));
    return push(std::move(n));
}

Graph::Id Graph::ce_logits(Id logits, std::vector<int> labels) {
    const Tensor& a = val(logits);
    if (a.ndim() != 2 || static_cast<int>(labels.size()) != a.dim(0)) {
        throw ShapeError("ce_logits: logits " + shape_str(a.shape) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const int N = a.dim(0), C = a.dim(1);
    for (int lab : labels) {
        if (lab < 0 || lab >= C) throw Error("ce_logits: label " + std::to_string(lab) + " out of range");
    }
    Node n;
    n.op = Op::CeLogits;
    n.in0 = logits;
    n.labels = labels;
    double total = 0.0;
    for (int b = 0; b < N; ++b) {
        const double* row = a.data.data() + static_cast<std::int64_t>(b) * C;
        double m = row[0];
        for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += std::exp(row[c] - m);
        total += m + std::log(s) - row[labels[static_cast<std::size_t>(b)]];
    }
    n.value = Tensor::scalar(total / N);
    return push(std::move(n));
}

void Graph::backward(Id loss) {
    if (loss < 0 || loss >= static_cast<Id>(nodes_.size())) throw Error("backward: bad node id");
    if (val(loss).numel() != 1) {
        throw Error("backward: loss must be scalar, got " + shape_str(val(loss).shape));
    }
    ensure_grad(loss).data[0] = 1.0;

    for (Id id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.data.empty()) continue;  // not on any path to the loss
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::Input:
                break;
            case Op::Param: {
                Tensor& pg = n.bound->grad;
                for (std::size_t i = 0; i < g.data.size(); ++i) pg.data[i] += g.data[i];
                break;
            }
            case Op::Add: {
                Tensor& gx = ensure_grad(n.in0);
                Tensor& gy = ensure_grad(n.in1);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    gx.data[i] += g.data[i];
                    gy.data[i] += g.data[i];
                }
                break;
            }
            case Op::Sub: {
                Tensor& gx = ensure_grad(n.in0);
                Tensor& gy = ensure_grad(n.in1);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    gx.data[i] += g.data[i];
                    gy.data[i] -= g.data[i];
                }
                break;
            }
            case Op::Mul: {
                Tensor& gx = ensure_grad(n.in0);
                Tensor& gy = ensure_grad(n.in1);
                const Tensor& xv = val(n.in0);
                const Tensor& yv = val(n.in1);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    gx.data[i] += g.data[i] * yv.data[i];
                    gy.data[i] += g.data[i] * xv.data[i];
                }
                break;
            }
            case Op::Div: {
                Tensor& gx = ensure_grad(n.in0);
                Tensor& gy = ensure_grad(n.in1);
                const Tensor& yv = val(n.in1);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const double inv = 1.0 / yv.data[i];
                    gx.data[i] += g.data[i] * inv;
                    gy.data[i] -= g.data[i] * n.value.data[i] * inv;
                }
                break;
            }
            case Op::Neg:
            case Op::Affine: {
                Tensor& gx = ensure_grad(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += n.a * g.data[i];
                break;
            }
            case Op::Relu: {
                Tensor& gx = ensure_grad(n.in0);
                const Tensor& xv = val(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    if (xv.data[i] > 0.0) gx.data[i] += g.data[i];
                }
                break;
            }
            case Op::LeakyRelu: {
                Tensor& gx = ensure_grad(n.in0);
                const Tensor& xv = val(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    gx.data[i] += (xv.data[i] > 0.0 ? 1.0 : n.a) * g.data[i];
                }
                break;
            }
            case Op::Sigmoid: {
                Tensor& gx = ensure_grad(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const double y = n.value.data[i];
                    gx.data[i] += y * (1.0 - y) * g.data[i];
                }
                break;
            }
            case Op::Tanh: {
                Tensor& gx = ensure_grad(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const double y = n.value.data[i];
                    gx.data[i] += (1.0 - y * y) * g.data[i];
                }
                break;
            }
            case Op::Exp: {
                Tensor& gx = ensure_grad(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    gx.data[i] += n.value.data[i] * g.data[i];
                }
                break;
            }
            case Op::Log: {
                Tensor& gx = ensure_grad(n.in0);
                const Tensor& xv = val(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] / xv.data[i];
                break;
            }
            case Op::Sqrt: {
                Tensor& gx = ensure_grad(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    gx.data[i] += 0.5 / std::max(n.value.data[i], 1e-150) * g.data[i];
                }
                break;
            }
            case Op::Square: {
                Tensor& gx = ensure_grad(n.in0);
                const Tensor& xv = val(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    gx.data[i] += 2.0 * xv.data[i] * g.data[i];
                }
                break;
            }
            case Op::Clamp: {
                Tensor& gx = ensure_grad(n.in0);
                const Tensor& xv = val(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    if (xv.data[i] > n.a && xv.data[i] < n.b) gx.data[i] += g.data[i];
                }
                break;
            }
            case Op::Matmul: {
                const Tensor& xv = val(n.in0);
                const Tensor& wv = val(n.in1);
                const int N = xv.dim(0), K = xv.dim(1), M = wv.dim(1);
                Tensor& gx = ensure_grad(n.in0);
                Tensor& gw = ensure_grad(n.in1);
                detail::mm_acc_bt(g.data.data(), wv.data.data(), gx.data.data(), N, M, K);
                detail::mm_acc_at(xv.data.data(), g.data.data(), gw.data.data(), K, N, M);
                break;
            }
            case Op::AddBias: {
                Tensor& gx = ensure_grad(n.in0);
                Tensor& gb = ensure_grad(n.in1);
                const int m = val(n.in1).dim(0);
                const std::int64_t rows = g.numel() / m;
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* row = g.data.data() + r * m;
                    double* gxr = gx.data.data() + r * m;
                    for (int j = 0; j < m; ++j) {
                        gxr[j] += row[j];
                        gb.data[static_cast<std::size_t>(j)] += row[j];
                    }
                }
                break;
            }
            case Op::Conv2d: {
                const auto d = detail::conv_dims(val(n.in0).shape, val(n.in1).shape, n.i0, n.i1);
                detail::conv2d_backward(val(n.in0), val(n.in1), d, g, &ensure_grad(n.in0),
                                        &ensure_grad(n.in1));
                break;
            }
            case Op::ChannelBias: {
                Tensor& gx = ensure_grad(n.in0);
                Tensor& gb = ensure_grad(n.in1);
                const Tensor& xv = val(n.in0);
                const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
                for (int i = 0; i < xv.dim(0); ++i) {
                    for (int f = 0; f < xv.dim(1); ++f) {
                        const double* gp =
                            g.data.data() + (static_cast<std::int64_t>(i) * xv.dim(1) + f) * hw;
                        double* gxp =
                            gx.data.data() + (static_cast<std::int64_t>(i) * xv.dim(1) + f) * hw;
                        double s = 0.0;
                        for (std::int64_t j = 0; j < hw; ++j) {
                            gxp[j] += gp[j];
                            s += gp[j];
                        }
                        gb.data[static_cast<std::size_t>(f)] += s;
                    }
                }
                break;
            }
            case Op::TConv2d: {
                detail::tconv2d_backward(val(n.in0), val(n.in1), n.i0, n.i1, g,
                                         &ensure_grad(n.in0), &ensure_grad(n.in1));
                break;
            }
            case Op::MaxPool2: {
                Tensor& gx = ensure_grad(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    gx.data[static_cast<std::size_t>(n.iaux[i])] += g.data[i];
                }
                break;
            }
            case Op::Reshape: {
                Tensor& gx = ensure_grad(n.in0);
                for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
                break;
            }
            case Op::ExpandAxis: {
                Tensor& gx = ensure_grad(n.in0);
                std::int64_t outer, inner;
                int k;
                axis_split(n.value.shape, n.i0, outer, k, inner);
                for (std::int64_t o = 0; o < outer; ++o) {
                    double* dst = gx.data.data() + o * inner;
                    for (int r = 0; r < k; ++r) {
                        const double* src = g.data.data() + (o * k + r) * inner;
                        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                    }
                }
                break;
            }
            case Op::SumAxis: {
                Tensor& gx = ensure_grad(n.in0);
                std::int64_t outer, inner;
                int k;
                axis_split(val(n.in0).shape, n.i0, outer, k, inner);
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = g.data.data() + o * inner;
                    for (int r = 0; r < k; ++r) {
                        double* dst = gx.data.data() + (o * k + r) * inner;
                        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                    }
                }
                break;
            }
            case Op::TransposeLast2: {
                Tensor& gx = ensure_grad(n.in0);
                const Tensor& xv = val(n.in0);
                const int A = xv.dim(xv.ndim() - 2), B = xv.dim(xv.ndim() - 1);
                const std::int64_t blocks = xv.numel() / (static_cast<std::int64_t>(A) * B);
                for (std::int64_t blk = 0; blk < blocks; ++blk) {
                    const double* src = g.data.data() + blk * A * B;  // [B,A]
                    double* dst = gx.data.data() + blk * A * B;       // [A,B]
                    for (int j = 0; j < B; ++j) {
                        for (int i = 0; i < A; ++i) {
                            dst[static_cast<std::int64_t>(i) * B + j] += src[static_cast<std::int64_t>(j) * A + i];
                        }
                    }
                }
                break;
            }
            case Op::ConcatLast: {
                Tensor& gx = ensure_grad(n.in0);
                Tensor& gy = ensure_grad(n.in1);
                const int A = val(n.in0).dim(val(n.in0).ndim() - 1);
                const int B = val(n.in1).dim(val(n.in1).ndim() - 1);
                const std::int64_t rows = val(n.in0).numel() / A;
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* src = g.data.data() + r * (A + B);
                    for (int i = 0; i < A; ++i) gx.data[static_cast<std::size_t>(r * A + i)] += src[i];
                    for (int i = 0; i < B; ++i) gy.data[static_cast<std::size_t>(r * B + i)] += src[A + i];
                }
                break;
            }
            case Op::SliceLast: {
                Tensor& gx = ensure_grad(n.in0);
                const int A = val(n.in0).dim(val(n.in0).ndim() - 1);
                const int L = n.i1 - n.i0;
                const std::int64_t rows = val(n.in0).numel() / A;
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (int i = 0; i < L; ++i) {
                        gx.data[static_cast<std::size_t>(r * A + n.i0 + i)] +=
                            g.data[static_cast<std::size_t>(r * L + i)];
                    }
                }
                break;
            }
            case Op::SoftmaxAxis: {
                Tensor& gx = ensure_grad(n.in0);
                std::int64_t outer, inner;
                int k;
                axis_split(n.value.shape, n.i0, outer, k, inner);
                for (std::int64_t o = 0; o < outer; ++o) {
                    for (std::int64_t i = 0; i < inner; ++i) {
                        const double* y = n.value.data.data() + o * k * inner + i;
                        const double* gy = g.data.data() + o * k * inner + i;
                        double dotv = 0.0;
                        for (int r = 0; r < k; ++r) {
                            dotv += y[static_cast<std::int64_t>(r) * inner] * gy[static_cast<std::int64_t>(r) * inner];
                        }
                        double* gxp = gx.data.data() + o * k * inner + i;
                        for (int r = 0; r < k; ++r) {
                            const std::int64_t off = static_cast<std::int64_t>(r) * inner;
                            gxp[off] += y[off] * (gy[off] - dotv);
                        }
                    }
                }
                break;
            }
            case Op::CapsPredict: {
                const Tensor& p = val(n.in0);
                const Tensor& w = val(n.in1);
                Tensor& gp = ensure_grad(n.in0);
                Tensor& gw = ensure_grad(n.in1);
                const int N = p.dim(0), I = p.dim(1), D = p.dim(2), J = w.dim(1), E = w.dim(3);
                for (int b = 0; b < N; ++b) {
                    for (int i = 0; i < I; ++i) {
                        const double* pv = p.data.data() + (static_cast<std::int64_t>(b) * I + i) * D;
                        double* gpv = gp.data.data() + (static_cast<std::int64_t>(b) * I + i) * D;
                        for (int j = 0; j < J; ++j) {
                            const double* wv =
                                w.data.data() + (static_cast<std::int64_t>(i) * J + j) * D * E;
                            double* gwv =
                                gw.data.data() + (static_cast<std::int64_t>(i) * J + j) * D * E;
                            const double* gu = g.data.data() +
                                               ((static_cast<std::int64_t>(b) * I + i) * J + j) * E;
                            for (int d = 0; d < D; ++d) {
                                const double* wrow = wv + static_cast<std::int64_t>(d) * E;
                                double* gwrow = gwv + static_cast<std::int64_t>(d) * E;
                                double s = 0.0;
                                const double pd = pv[d];
                                for (int e = 0; e < E; ++e) {
                                    s += gu[e] * wrow[e];
                                    gwrow[e] += pd * gu[e];
                                }
                                gpv[d] += s;
                            }
                        }
                    }
                }
                break;
            }
            case Op::MatCapsPredict: {
                const Tensor& p = val(n.in0);
                const Tensor& w = val(n.in1);
                Tensor& gp = ensure_grad(n.in0);
                Tensor& gw = ensure_grad(n.in1);
                const int N = p.dim(0), I = p.dim(1), J = w.dim(1);
                const int positions = n.i0;
                for (int b = 0; b < N; ++b) {
                    for (int i = 0; i < I; ++i) {
                        const int t = i / positions;
                        const double* pm = p.data.data() + (static_cast<std::int64_t>(b) * I + i) * 16;
                        double* gpm = gp.data.data() + (static_cast<std::int64_t>(b) * I + i) * 16;
                        for (int j = 0; j < J; ++j) {
                            const double* wm = w.data.data() + (static_cast<std::int64_t>(t) * J + j) * 16;
                            double* gwm = gw.data.data() + (static_cast<std::int64_t>(t) * J + j) * 16;
                            const double* gv = g.data.data() +
                                               ((static_cast<std::int64_t>(b) * I + i) * J + j) * 16;
                            // d/dP = gV * W^T ; d/dW = P^T * gV
                            for (int r = 0; r < 4; ++r) {
                                for (int q = 0; q < 4; ++q) {
                                    double s = 0.0;
                                    for (int c = 0; c < 4; ++c) s += gv[r * 4 + c] * wm[q * 4 + c];
                                    gpm[r * 4 + q] += s;
                                }
                            }
                            for (int q = 0; q < 4; ++q) {
                                for (int c = 0; c < 4; ++c) {
                                    double s = 0.0;
                                    for (int r = 0; r < 4; ++r) s += pm[r * 4 + q] * gv[r * 4 + c];
                                    gwm[q * 4 + c] += s;
                                }
                            }
                        }
                    }
                }
                break;
            }
            case Op::Squash: {
                Tensor& gx = ensure_grad(n.in0);
                const Tensor& xv = val(n.in0);
                const int E = xv.dim(xv.ndim() - 1);
                const std::int64_t rows = xv.numel() / E;
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* v = xv.data.data() + r * E;
                    const double* gy = g.data.data() + r * E;
                    double* gv = gx.data.data() + r * E;
                    double n2 = 0.0;
                    for (int e = 0; e < E; ++e) n2 += v[e] * v[e];
                    const double norm = std::sqrt(n2);
                    if (norm < 1e-30) continue;  // squash is flat at the origin
                    const double scale = norm / (1.0 + n2);
                    const double dscale = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
                    double vdotg = 0.0;
                    for (int e = 0; e < E; ++e) vdotg += v[e] * gy[e];
                    const double coef = dscale * vdotg / norm;
                    for (int e = 0; e < E; ++e) gv[e] += scale * gy[e] + coef * v[e];
                }
                break;
            }
            case Op::VecNorm: {
                Tensor& gx = ensure_grad(n.in0);
                const Tensor& xv = val(n.in0);
                const int E = xv.dim(xv.ndim() - 1);
                const std::int64_t rows = xv.numel() / E;
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double norm = n.value.data[static_cast<std::size_t>(r)];
                    if (norm < 1e-30) continue;
                    const double gn = g.data[static_cast<std::size_t>(r)] / norm;
                    const double* v = xv.data.data() + r * E;
                    double* gv = gx.data.data() + r * E;
                    for (int e = 0; e < E; ++e) gv[e] += v[e] * gn;
                }
                break;
            }
            case Op::SumAll: {
                Tensor& gx = ensure_grad(n.in0);
                const double gv = g.data[0];
                for (double& v : gx.data) v += gv;
                break;
            }
            case Op::MeanAll: {
                Tensor& gx = ensure_grad(n.in0);
                const double gv = g.data[0] / static_cast<double>(gx.numel());
                for (double& v : gx.data) v += gv;
                break;
            }
            case Op::CeLogits: {
                Tensor& gx = ensure_grad(n.in0);
                const Tensor& a = val(n.in0);
                const int N = a.dim(0), C = a.dim(1);
                const double gv = g.data[0] / N;
                for (int b = 0; b < N; ++b) {
                    const double* row = a.data.data() + static_cast<std::int64_t>(b) * C;
                    double* grow = gx.data.data() + static_cast<std::int64_t>(b) * C;
                    double m = row[0];
                    for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
                    double s = 0.0;
                    for (int c = 0; c < C; ++c) s += std::exp(row[c] - m);
                    for (int c = 0; c < C; ++c) {
                        double p = std::exp(row[c] - m) / s;
                        if (c == n.labels[static_cast<std::size_t>(b)]) p -= 1.0;
                        grow[c] += gv * p;
                    }
                }
                break;
            }
        }
    }
}

void Graph::check_all_finite(const char* what) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        for (double v : n.value.data) {
            if (!std::isfinite(v)) {
                throw NonFiniteError(std::string(what) + ": non-finite value in node " +
                                     std::to_string(i) + " (" + op_name(n.op) + ")");
            }
        }
    }
}

}  // namespace rotlab
