#pragma once

#include <cmath>
#include <string>

#include "rotlab/graph.hpp"
#include "rotlab/rng.hpp"

namespace rotlab {

// Fan-in scaled uniform init: U(-sqrt(3/fan_in), +sqrt(3/fan_in)),
// i.e. variance 1/fan_in. Biases start at zero.
inline Tensor init_fanin_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

struct Dense {
    Parameter* w = nullptr;
    Parameter* b = nullptr;

    static Dense create(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
        Dense d;
        d.w = &store.create(name + ".w", init_fanin_uniform({in, out}, in, rng));
        d.b = &store.create(name + ".b", Tensor::zeros({out}));
        return d;
    }

    Graph::Id operator()(Graph& g, Graph::Id x) const {
        return g.add_bias(g.matmul(x, g.param(*w)), g.param(*b));
    }
};

struct Conv2d {
    Parameter* k = nullptr;
    Parameter* b = nullptr;
    int stride = 1;
    int pad = 0;

    static Conv2d create(ParamStore& store, const std::string& name, int in_ch, int out_ch, int kh,
                         int kw, int stride, int pad, Rng& rng) {
        Conv2d c;
        c.k = &store.create(name + ".k",
                            init_fanin_uniform({out_ch, in_ch, kh, kw}, in_ch * kh * kw, rng));
        c.b = &store.create(name + ".b", Tensor::zeros({out_ch}));
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Graph::Id operator()(Graph& g, Graph::Id x) const {
        return g.channel_bias(g.conv2d(x, g.param(*k), stride, pad), g.param(*b));
    }
};

struct TConv2d {
    Parameter* k = nullptr;
    Parameter* b = nullptr;
    int stride = 1;
    int pad = 0;

    static TConv2d create(ParamStore& store, const std::string& name, int in_ch, int out_ch, int kh,
                          int kw, int stride, int pad, Rng& rng) {
        TConv2d c;
        // kernel layout [in_ch, out_ch, kh, kw], matching the conv adjoint
        c.k = &store.create(name + ".k",
                            init_fanin_uniform({in_ch, out_ch, kh, kw}, in_ch * kh * kw, rng));
        c.b = &store.create(name + ".b", Tensor::zeros({out_ch}));
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Graph::Id operator()(Graph& g, Graph::Id x) const {
        return g.channel_bias(g.tconv2d(x, g.param(*k), stride, pad), g.param(*b));
    }
};

}  // namespace rotlab
