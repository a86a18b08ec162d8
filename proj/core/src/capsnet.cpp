#include "rotlab/capsnet.hpp"

#include <algorithm>
#include <cmath>

namespace rotlab {

int ClassMap::index_of(int label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) return static_cast<int>(i);
    }
    throw Error("label " + std::to_string(label) + " outside the class set");
}

DynRoutingResult dynamic_routing(Graph& g, Graph::Id predictions, int iterations) {
    const Tensor& u = g.value(predictions);
    if (u.ndim() != 4) throw ShapeError("dynamic_routing: predictions must be [N,I,J,E]");
    if (iterations < 1) throw Error("dynamic_routing: iterations must be >= 1");
    const int N = u.dim(0), I = u.dim(1), J = u.dim(2), E = u.dim(3);

    DynRoutingResult res;
    Graph::Id b = g.input(Tensor::zeros({N, I, J}));
    Graph::Id v = -1;
    for (int it = 0; it < iterations; ++it) {
        res.logits.push_back(b);
        Graph::Id c = g.softmax_axis(b, 2);
        res.couplings.push_back(c);
        Graph::Id weighted = g.mul(g.expand_axis(c, 3, E), predictions);
        Graph::Id s = g.sum_axis(weighted, 1);  // [N,J,E]
        v = g.squash(s);
        if (it + 1 < iterations) {
            Graph::Id agreement = g.sum_axis(g.mul(predictions, g.expand_axis(v, 1, I)), 3);
            b = g.add(b, agreement);
        }
    }
    res.outputs = v;
    return res;
}

EmRoutingResult em_routing(Graph& g, Graph::Id votes, Graph::Id in_activations, int iterations,
                           double lambda_base, Graph::Id beta_a, Graph::Id beta_u,
                           double variance_floor) {
    const Tensor& v = g.value(votes);
    const Tensor& a = g.value(in_activations);
    if (v.ndim() != 4 || v.dim(3) != 16) throw ShapeError("em_routing: votes must be [N,I,J,16]");
    if (a.ndim() != 2 || a.dim(0) != v.dim(0) || a.dim(1) != v.dim(1)) {
        throw ShapeError("em_routing: activations must be [N,I]");
    }
    for (double x : a.data) {
        if (x < 0.0 || x > 1.0) throw Error("em_routing: input activations must lie in [0,1]");
    }
    if (iterations < 1) throw Error("em_routing: iterations must be >= 1");
    const int N = v.dim(0), I = v.dim(1), J = v.dim(2);
    constexpr int P = 16;
    constexpr double kLog2Pi = 1.8378770664093453;

    EmRoutingResult res;
    Graph::Id r = g.input(Tensor::full({N, I, J}, 1.0 / J));
    Graph::Id a_out = -1, mu = -1;
    for (int it = 0; it < iterations; ++it) {
        const double lambda = lambda_base * (it + 1);
        // M-step: activation-weighted Gaussian statistics per output capsule
        Graph::Id rw = g.mul(r, g.expand_axis(in_activations, 2, J));  // [N,I,J]
        Graph::Id rsum = g.affine(g.sum_axis(rw, 1), 1.0, 1e-8);       // [N,J]
        Graph::Id rw4 = g.expand_axis(rw, 3, P);                       // [N,I,J,P]
        Graph::Id rsum4 = g.expand_axis(rsum, 2, P);                   // [N,J,P]
        mu = g.div(g.sum_axis(g.mul(rw4, votes), 1), rsum4);
        Graph::Id diff = g.sub(votes, g.expand_axis(mu, 1, I));
        Graph::Id var = g.affine(
            g.div(g.sum_axis(g.mul(rw4, g.square(diff)), 1), rsum4), 1.0, variance_floor);
        res.means.push_back(mu);
        res.variances.push_back(var);
        // cost_h = (beta_u + 0.5 log var) * rsum ; a' = sigmoid(lambda (beta_a - sum_h cost))
        Graph::Id bu = g.expand_axis(g.expand_axis(beta_u, 0, N), 2, P);  // [N,J,P]
        Graph::Id cost = g.mul(g.add(bu, g.affine(g.log(var), 0.5, 0.0)), rsum4);
        Graph::Id cost_sum = g.sum_axis(cost, 2);  // [N,J]
        Graph::Id ba = g.expand_axis(beta_a, 0, N);
        a_out = g.sigmoid(g.affine(g.sub(ba, cost_sum), lambda, 0.0));
        // E-step feeds the next M-step; the final outputs come from the last M.
        if (it + 1 < iterations) {
            Graph::Id var_i = g.expand_axis(var, 1, I);  // [N,I,J,P]
            Graph::Id quad = g.div(g.square(g.sub(votes, g.expand_axis(mu, 1, I))),
                                   g.affine(var_i, 2.0, 0.0));
            Graph::Id logdet = g.affine(g.log(var_i), 0.5, 0.5 * kLog2Pi);
            Graph::Id logp = g.neg(g.sum_axis(g.add(quad, logdet), 3));  // [N,I,J]
            Graph::Id loga = g.log(g.clamp(a_out, 1e-12, 1.0));
            r = g.softmax_axis(g.add(g.expand_axis(loga, 1, I), logp), 2);
            res.responsibilities.push_back(r);
        }
    }
    res.poses = mu;
    res.activations = a_out;
    return res;
}

Graph::Id margin_loss(Graph& g, Graph::Id norms, const std::vector<int>& class_idx, double m_plus,
                      double m_minus, double lambda) {
    const Tensor& v = g.value(norms);
    if (v.ndim() != 2 || static_cast<int>(class_idx.size()) != v.dim(0)) {
        throw ShapeError("margin_loss: norms must be [N,J] with one label per row");
    }
    const int N = v.dim(0), J = v.dim(1);
    Tensor onehot({N, J});
    for (int b = 0; b < N; ++b) {
        const int c = class_idx[static_cast<std::size_t>(b)];
        if (c < 0 || c >= J) throw Error("margin_loss: label index " + std::to_string(c) + " outside class set");
        onehot.at({b, c}) = 1.0;
    }
    Graph::Id t = g.input(onehot);
    Graph::Id tneg = g.affine(t, -1.0, 1.0);
    Graph::Id pos = g.square(g.relu(g.affine(norms, -1.0, m_plus)));
    Graph::Id neg = g.square(g.relu(g.affine(norms, 1.0, -m_minus)));
    Graph::Id per = g.add(g.mul(t, pos), g.affine(g.mul(tneg, neg), lambda, 0.0));
    return g.affine(g.sum_all(per), 1.0 / N, 0.0);
}

Graph::Id spread_loss(Graph& g, Graph::Id activations, const std::vector<int>& class_idx,
                      double margin) {
    const Tensor& a = g.value(activations);
    if (a.ndim() != 2 || static_cast<int>(class_idx.size()) != a.dim(0)) {
        throw ShapeError("spread_loss: activations must be [N,J] with one label per row");
    }
    if (margin <= 0.0 || margin >= 1.0) throw Error("spread_loss: margin must be in (0,1)");
    const int N = a.dim(0), J = a.dim(1);
    Tensor onehot({N, J});
    for (int b = 0; b < N; ++b) {
        const int c = class_idx[static_cast<std::size_t>(b)];
        if (c < 0 || c >= J) throw Error("spread_loss: label index " + std::to_string(c) + " outside class set");
        onehot.at({b, c}) = 1.0;
    }
    Graph::Id t = g.input(onehot);
    Graph::Id a_true = g.sum_axis(g.mul(activations, t), 1);          // [N]
    Graph::Id gap = g.sub(g.expand_axis(a_true, 1, J), activations);  // a_t - a_j
    Graph::Id hinge = g.square(g.relu(g.affine(gap, -1.0, margin)));
    Graph::Id masked = g.mul(hinge, g.affine(t, -1.0, 1.0));  // zero out j == label
    return g.affine(g.sum_all(masked), 1.0 / N, 0.0);
}

namespace {

Tensor batch_to_input(const std::vector<Tensor>& images) {
    const int n = static_cast<int>(images.size());
    Tensor x({n, 1, 28, 28});
    for (int i = 0; i < n; ++i) {
        const Tensor& img = images[static_cast<std::size_t>(i)];
        if (img.shape != std::vector<int>{28, 28}) {
            throw ShapeError("classify: expected 28x28 image");
        }
        std::copy(img.data.begin(), img.data.end(),
                  x.data.begin() + static_cast<std::int64_t>(i) * 784);
    }
    for (double v : x.data) {
        if (v < 0.0 || v > 1.0) throw Error("classify: image pixels must lie in [0,1]");
    }
    return x;
}

}  // namespace

std::vector<Prediction> classify_batch(const ClassifierModel& model,
                                       const std::vector<Tensor>& images) {
    Graph g;
    Graph::Id x = g.input(batch_to_input(images));
    Graph::Id s = model.scores(g, x);
    const Tensor& sv = g.value(s);
    const int N = sv.dim(0), C = sv.dim(1);
    std::vector<Prediction> out(static_cast<std::size_t>(N));
    for (int b = 0; b < N; ++b) {
        Prediction& p = out[static_cast<std::size_t>(b)];
        p.scores.assign(sv.data.begin() + static_cast<std::int64_t>(b) * C,
                        sv.data.begin() + static_cast<std::int64_t>(b + 1) * C);
        int best = 0;
        for (int c = 1; c < C; ++c) {
            if (p.scores[static_cast<std::size_t>(c)] > p.scores[static_cast<std::size_t>(best)]) {
                best = c;  // strict >, ties keep the lowest index
            }
        }
        p.label = model.classes().label_of(best);
    }
    return out;
}

Prediction classify(const ClassifierModel& model, const Tensor& image) {
    return classify_batch(model, {image})[0];
}

// --- DCNN -------------------------------------------------------------------

DcnnModel::DcnnModel(const DcnnConfig& cfg, ClassMap classes, Rng& rng)
    : cfg_(cfg), classes_(std::move(classes)) {
    conv1_ = Conv2d::create(params_, "conv1", 1, cfg.conv1_ch, 5, 5, 1, 2, rng);
    conv2_ = Conv2d::create(params_, "conv2", cfg.conv1_ch, cfg.conv2_ch, 5, 5, 1, 2, rng);
    fc1_ = Dense::create(params_, "fc1", cfg.conv2_ch * 7 * 7, cfg.dense, rng);
    fc2_ = Dense::create(params_, "fc2", cfg.dense, classes_.count(), rng);
}

Graph::Id DcnnModel::logits(Graph& g, Graph::Id images) const {
    Graph::Id h = g.maxpool2(g.relu(conv1_(g, images)));   // 28 -> 14
    h = g.maxpool2(g.relu(conv2_(g, h)));                  // 14 -> 7
    const int n = g.value(h).dim(0);
    h = g.relu(fc1_(g, g.reshape(h, {n, cfg_.conv2_ch * 7 * 7})));
    return fc2_(g, h);
}

Graph::Id DcnnModel::scores(Graph& g, Graph::Id images) const {
    return g.softmax_axis(logits(g, images), 1);
}

Graph::Id DcnnModel::loss(Graph& g, Graph::Id images, const std::vector<int>& class_idx,
                          double) const {
    return g.ce_logits(logits(g, images), class_idx);
}

std::string DcnnModel::arch_descriptor() const {
    std::string s = "dcnn:c" + std::to_string(cfg_.conv1_ch) + ",c" + std::to_string(cfg_.conv2_ch) +
                    ",d" + std::to_string(cfg_.dense) + ":classes";
    for (int l : classes_.labels) s += std::to_string(l);
    return s;
}

// --- dynamic-routing capsules ------------------------------------------------

DynCapsModel::DynCapsModel(const DynCapsConfig& cfg, ClassMap classes, Rng& rng)
    : cfg_(cfg), classes_(std::move(classes)) {
    conv1_ = Conv2d::create(params_, "conv1", 1, cfg.conv_ch, 9, 9, 1, 0, rng);  // 28 -> 20
    primary_ = Conv2d::create(params_, "primary", cfg.conv_ch, cfg.primary_types * cfg.primary_dim,
                              9, 9, 2, 0, rng);  // 20 -> 6
    primary_positions_ = 6 * 6;
    const int I = cfg.primary_types * primary_positions_;
    route_w_ = &params_.create(
        "route_w", init_fanin_uniform({I, classes_.count(), cfg.primary_dim, cfg.class_dim},
                                      cfg.primary_dim, rng));
}

Graph::Id DynCapsModel::class_capsules(Graph& g, Graph::Id images) const {
    const int n = g.value(images).dim(0);
    Graph::Id h = g.relu(conv1_(g, images));
    Graph::Id pc = primary_(g, h);  // [N, T*D, 6, 6]
    pc = g.reshape(pc, {n, cfg_.primary_types, cfg_.primary_dim, primary_positions_});
    pc = g.transpose_last2(pc);     // [N, T, 36, D]
    pc = g.reshape(pc, {n, cfg_.primary_types * primary_positions_, cfg_.primary_dim});
    Graph::Id poses = g.squash(pc);
    Graph::Id preds = g.caps_predict(poses, g.param(*route_w_));
    return dynamic_routing(g, preds, cfg_.routing_iters).outputs;
}

Graph::Id DynCapsModel::scores(Graph& g, Graph::Id images) const {
    return g.vecnorm(class_capsules(g, images));
}

Graph::Id DynCapsModel::loss(Graph& g, Graph::Id images, const std::vector<int>& class_idx,
                             double) const {
    return margin_loss(g, scores(g, images), class_idx);
}

std::string DynCapsModel::arch_descriptor() const {
    std::string s = "dyncaps:c" + std::to_string(cfg_.conv_ch) + ",t" +
                    std::to_string(cfg_.primary_types) + ",d" + std::to_string(cfg_.primary_dim) +
                    ",e" + std::to_string(cfg_.class_dim) + ",r" + std::to_string(cfg_.routing_iters) +
                    ":classes";
    for (int l : classes_.labels) s += std::to_string(l);
    return s;
}

// --- EM-routing capsules ------------------------------------------------------

EmCapsModel::EmCapsModel(const EmCapsConfig& cfg, ClassMap classes, Rng& rng)
    : cfg_(cfg), classes_(std::move(classes)) {
    conv1_ = Conv2d::create(params_, "conv1", 1, cfg.conv1_ch, 9, 9, 2, 0, rng);  // 28 -> 10
    conv2_ = Conv2d::create(params_, "conv2", cfg.conv1_ch, cfg.conv2_ch, 3, 3, 2, 0, rng);  // 10 -> 4
    positions_ = 4 * 4;
    pose_head_ = Conv2d::create(params_, "pose_head", cfg.conv2_ch, cfg.primary_types * 16, 1, 1, 1,
                                0, rng);
    act_head_ = Conv2d::create(params_, "act_head", cfg.conv2_ch, cfg.primary_types, 1, 1, 1, 0, rng);
    route_w_ = &params_.create(
        "route_w", init_fanin_uniform({cfg.primary_types, classes_.count(), 16}, 4, rng));
    beta_a_ = &params_.create("beta_a", Tensor::zeros({classes_.count()}));
    beta_u_ = &params_.create("beta_u", Tensor::zeros({classes_.count()}));
}

Graph::Id EmCapsModel::activations(Graph& g, Graph::Id images, EmRoutingResult* result) const {
    const int n = g.value(images).dim(0);
    Graph::Id h = g.relu(conv1_(g, images));
    h = g.relu(conv2_(g, h));
    Graph::Id poses = pose_head_(g, h);  // [N, T*16, 4, 4]
    poses = g.reshape(poses, {n, cfg_.primary_types, 16, positions_});
    poses = g.transpose_last2(poses);    // [N, T, P, 16]
    poses = g.reshape(poses, {n, cfg_.primary_types * positions_, 16});
    Graph::Id acts = g.sigmoid(act_head_(g, h));  // [N, T, 4, 4]
    acts = g.reshape(acts, {n, cfg_.primary_types * positions_});
    Graph::Id votes = g.matcaps_predict(poses, g.param(*route_w_), positions_);
    EmRoutingResult r = em_routing(g, votes, acts, cfg_.routing_iters, cfg_.lambda_base,
                                   g.param(*beta_a_), g.param(*beta_u_), cfg_.variance_floor);
    if (result) *result = r;
    return r.activations;
}

Graph::Id EmCapsModel::scores(Graph& g, Graph::Id images) const {
    return activations(g, images);
}

double EmCapsModel::margin_at(double progress) const {
    const double p = std::clamp(progress, 0.0, 1.0);
    return cfg_.spread_margin_lo + (cfg_.spread_margin_hi - cfg_.spread_margin_lo) * p;
}

Graph::Id EmCapsModel::loss(Graph& g, Graph::Id images, const std::vector<int>& class_idx,
                            double progress) const {
    return spread_loss(g, activations(g, images), class_idx, margin_at(progress));
}

std::string EmCapsModel::arch_descriptor() const {
    std::string s = "emcaps:c" + std::to_string(cfg_.conv1_ch) + ",c" + std::to_string(cfg_.conv2_ch) +
                    ",t" + std::to_string(cfg_.primary_types) + ",r" +
                    std::to_string(cfg_.routing_iters) + ":classes";
    for (int l : classes_.labels) s += std::to_string(l);
    return s;
}

}  // namespace rotlab
