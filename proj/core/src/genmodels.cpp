#include "rotlab/genmodels.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "rotlab/checkpoint.hpp"
#include "rotlab/hash.hpp"
#include "rotlab/transforms.hpp"

namespace rotlab {

Tensor make_conditions(const std::vector<double>& thetas_deg) {
    const int n = static_cast<int>(thetas_deg.size());
    Tensor c({n, 2});
    for (int i = 0; i < n; ++i) {
        const double t = thetas_deg[static_cast<std::size_t>(i)] * M_PI / 180.0;
        c.at({i, 0}) = std::sin(t);
        c.at({i, 1}) = std::cos(t);
    }
    return c;
}

Tensor make_shift_conditions(const std::vector<std::pair<int, int>>& shifts) {
    const int n = static_cast<int>(shifts.size());
    Tensor c({n, 2});
    for (int i = 0; i < n; ++i) {
        c.at({i, 0}) = shifts[static_cast<std::size_t>(i)].first / 10.0;
        c.at({i, 1}) = shifts[static_cast<std::size_t>(i)].second / 10.0;
    }
    return c;
}

namespace {

void check_image_range(const Tensor& images, const char* what) {
    for (double v : images.data) {
        if (v < 0.0 || v > 1.0) throw Error(std::string(what) + ": image pixels must lie in [0,1]");
    }
}

}  // namespace

std::vector<double> encode_image(const GenerativeModel& m, const Tensor& image) {
    if (image.shape != std::vector<int>{28, 28}) {
        throw ShapeError("encode_image: expected 28x28 image");
    }
    Tensor x({1, 1, 28, 28}, image.data);
    Graph g;
    Graph::Id z = m.encode(g, g.input(std::move(x)));
    require_finite(g.value(z), "encode_image");
    return g.value(z).data;
}

Tensor decode_image(const GenerativeModel& m, const std::vector<double>& z, double theta_deg) {
    if (static_cast<int>(z.size()) != m.zdim()) {
        throw ShapeError("decode_image: z size " + std::to_string(z.size()) + " vs zdim " +
                         std::to_string(m.zdim()));
    }
    Graph g;
    Graph::Id zi = g.input(Tensor({1, m.zdim()}, z));
    Graph::Id cond = g.input(make_conditions({theta_deg}));
    Graph::Id img = m.decode(g, zi, cond);
    return Tensor({28, 28}, g.value(img).data);
}

// --- AAE ----------------------------------------------------------------------

AaeModel::AaeModel(const AaeConfig& cfg, Rng& rng) : cfg_(cfg) {
    enc1_ = Conv2d::create(params_, "enc1", 1, cfg.enc_ch1, 4, 4, 2, 1, rng);          // 28 -> 14
    enc2_ = Conv2d::create(params_, "enc2", cfg.enc_ch1, cfg.enc_ch2, 4, 4, 2, 1, rng);  // 14 -> 7
    enc_fc1_ = Dense::create(params_, "enc_fc1", cfg.enc_ch2 * 7 * 7, cfg.enc_dense, rng);
    enc_fc2_ = Dense::create(params_, "enc_fc2", cfg.enc_dense, cfg.zdim, rng);
    dec_fc1_ = Dense::create(params_, "dec_fc1", cfg.zdim + 2, cfg.dec_dense, rng);
    dec_fc2_ = Dense::create(params_, "dec_fc2", cfg.dec_dense, cfg.dec_ch * 7 * 7, rng);
    dec_t1_ = TConv2d::create(params_, "dec_t1", cfg.dec_ch, cfg.dec_ch, 4, 4, 2, 1, rng);  // 7 -> 14
    dec_t2_ = TConv2d::create(params_, "dec_t2", cfg.dec_ch, 1, 4, 4, 2, 1, rng);           // 14 -> 28
    disc1_ = Dense::create(params_, "disc1", cfg.zdim, cfg.disc_hidden, rng);
    disc2_ = Dense::create(params_, "disc2", cfg.disc_hidden, cfg.disc_hidden, rng);
    disc3_ = Dense::create(params_, "disc3", cfg.disc_hidden, 1, rng);
}

Graph::Id AaeModel::encode(Graph& g, Graph::Id images) const {
    check_image_range(g.value(images), "aae encode");
    const int n = g.value(images).dim(0);
    Graph::Id h = g.relu(enc1_(g, images));
    h = g.relu(enc2_(g, h));
    h = g.relu(enc_fc1_(g, g.reshape(h, {n, cfg_.enc_ch2 * 7 * 7})));
    return enc_fc2_(g, h);
}

Graph::Id AaeModel::decode(Graph& g, Graph::Id z, Graph::Id cond) const {
    const int n = g.value(z).dim(0);
    Graph::Id h = g.relu(dec_fc1_(g, g.concat_last(z, cond)));
    h = g.relu(dec_fc2_(g, h));
    h = g.reshape(h, {n, cfg_.dec_ch, 7, 7});
    h = g.relu(dec_t1_(g, h));
    return g.sigmoid(dec_t2_(g, h));
}

Graph::Id AaeModel::discriminate(Graph& g, Graph::Id z) const {
    Graph::Id h = g.relu(disc1_(g, z));
    h = g.relu(disc2_(g, h));
    return g.sigmoid(disc3_(g, h));
}

std::vector<Parameter*> AaeModel::autoencoder_params() {
    std::vector<Parameter*> out;
    for (const auto& p : params_.all()) {
        if (p->name.rfind("disc", 0) != 0) out.push_back(p.get());
    }
    return out;
}

std::vector<Parameter*> AaeModel::discriminator_params() {
    std::vector<Parameter*> out;
    for (const auto& p : params_.all()) {
        if (p->name.rfind("disc", 0) == 0) out.push_back(p.get());
    }
    return out;
}

std::string AaeModel::arch_descriptor() const {
    return "aae:z" + std::to_string(cfg_.zdim) + ",e" + std::to_string(cfg_.enc_ch1) + "-" +
           std::to_string(cfg_.enc_ch2) + "-" + std::to_string(cfg_.enc_dense) + ",d" +
           std::to_string(cfg_.dec_dense) + "-" + std::to_string(cfg_.dec_ch) + ",disc" +
           std::to_string(cfg_.disc_hidden);
}

AdversarialLosses adversarial_losses(Graph& g, const AaeModel& m, Graph::Id z_real,
                                     Graph::Id z_fake) {
    const Tensor& zr = g.value(z_real);
    const Tensor& zf = g.value(z_fake);
    if (zr.ndim() != 2 || zf.ndim() != 2 || zr.dim(1) != zf.dim(1)) {
        throw ShapeError("adversarial_losses: z batches must be [N,zdim]");
    }
    Graph::Id d_real = g.clamp(m.discriminate(g, z_real), 1e-7, 1.0 - 1e-7);
    Graph::Id d_fake = g.clamp(m.discriminate(g, z_fake), 1e-7, 1.0 - 1e-7);
    AdversarialLosses out;
    out.disc_loss = g.sub(g.neg(g.mean_all(g.log(d_real))),
                          g.mean_all(g.log(g.affine(d_fake, -1.0, 1.0))));
    out.enc_reg = g.neg(g.mean_all(g.log(d_fake)));
    return out;
}

// --- second-order -----------------------------------------------------------

SecondOrderModel::SecondOrderModel(const SecondOrderConfig& cfg, Rng& rng) : cfg_(cfg) {
    enc1_ = Conv2d::create(params_, "enc1", 1, cfg.enc_ch1, 4, 4, 2, 1, rng);
    enc2_ = Conv2d::create(params_, "enc2", cfg.enc_ch1, cfg.enc_ch2, 4, 4, 2, 1, rng);
    enc_fc1_ = Dense::create(params_, "enc_fc1", cfg.enc_ch2 * 7 * 7, cfg.enc_dense, rng);
    enc_fc2_ = Dense::create(params_, "enc_fc2", cfg.enc_dense, cfg.zdim, rng);
    ctrl1_ = Dense::create(params_, "ctrl1", 2, cfg.ctrl_hidden, rng);
    ctrl2_ = Dense::create(params_, "ctrl2", cfg.ctrl_hidden, 2 * cfg.rank, rng);
    const int feat = feature_count();
    base_w_ = &params_.create("base_w", init_fanin_uniform({cfg.zdim, feat}, cfg.zdim, rng));
    base_b_ = &params_.create("base_b", Tensor::zeros({feat}));
    mod_ag_ = &params_.create("mod_ag", init_fanin_uniform({cfg.rank, cfg.zdim}, cfg.rank, rng));
    mod_bg_ = &params_.create("mod_bg", init_fanin_uniform({cfg.rank, feat}, cfg.rank, rng));
    mod_ao_ = &params_.create("mod_ao", init_fanin_uniform({cfg.rank, cfg.zdim}, cfg.rank, rng));
    mod_bo_ = &params_.create("mod_bo", init_fanin_uniform({cfg.rank, feat}, cfg.rank, rng));
    dec_t1_ = TConv2d::create(params_, "dec_t1", cfg.dec_ch, cfg.dec_ch, 4, 4, 2, 1, rng);
    dec_t2_ = TConv2d::create(params_, "dec_t2", cfg.dec_ch, 1, 4, 4, 2, 1, rng);
}

Graph::Id SecondOrderModel::encode(Graph& g, Graph::Id images) const {
    check_image_range(g.value(images), "second-order encode");
    const int n = g.value(images).dim(0);
    Graph::Id h = g.relu(enc1_(g, images));
    h = g.relu(enc2_(g, h));
    h = g.relu(enc_fc1_(g, g.reshape(h, {n, cfg_.enc_ch2 * 7 * 7})));
    return enc_fc2_(g, h);
}

SecondOrderModel::Modulation SecondOrderModel::modulation(Graph& g, Graph::Id cond) const {
    const int n = g.value(cond).dim(0);
    const int feat = feature_count();
    // control features, baseline-subtracted at the identity condition so that
    // cond == (sin 0, cos 0) yields exactly zero
    Graph::Id raw = ctrl2_(g, g.tanh(ctrl1_(g, cond)));
    Tensor id_cond({n, 2});
    for (int i = 0; i < n; ++i) id_cond.at({i, 1}) = 1.0;
    Graph::Id raw_id = ctrl2_(g, g.tanh(ctrl1_(g, g.input(std::move(id_cond)))));
    Graph::Id u = g.sub(raw, raw_id);  // [N, 2R]
    Graph::Id ug = g.slice_last(u, 0, cfg_.rank);
    Graph::Id uo = g.slice_last(u, cfg_.rank, 2 * cfg_.rank);

    // rank-r outer products A_r (x) B_r flattened to [R, zdim*feat]
    auto rank_field = [&](Parameter& a, Parameter& b) {
        Graph::Id av = g.expand_axis(g.param(a), 2, feat);      // [R, zdim, feat]
        Graph::Id bv = g.expand_axis(g.param(b), 1, cfg_.zdim); // [R, zdim, feat]
        return g.reshape(g.mul(av, bv), {cfg_.rank, cfg_.zdim * feat});
    };
    Graph::Id sg = g.matmul(ug, rank_field(*mod_ag_, *mod_bg_));  // [N, zdim*feat]
    Graph::Id so = g.matmul(uo, rank_field(*mod_ao_, *mod_bo_));

    Modulation m;
    // gains = 1 + G tanh(s/G): exactly 1 at s = 0, confined to [1-G, 1+G]
    const double G = cfg_.gain_bound;
    m.gains = g.reshape(g.affine(g.tanh(g.affine(sg, 1.0 / G, 0.0)), G, 1.0),
                        {n, cfg_.zdim, feat});
    m.offsets = g.reshape(so, {n, cfg_.zdim, feat});
    return m;
}

Graph::Id modulated_weights(Graph& g, Graph::Id base_w, Graph::Id gains, Graph::Id offsets) {
    const Tensor& w = g.value(base_w);
    const Tensor& gv = g.value(gains);
    if (w.ndim() != 2 || gv.ndim() != 3 || gv.dim(1) != w.dim(0) || gv.dim(2) != w.dim(1)) {
        throw ShapeError("modulated_weights: base " + shape_str(w.shape) + " vs gains " +
                         shape_str(gv.shape));
    }
    Graph::Id wb = g.expand_axis(base_w, 0, gv.dim(0));  // [N, zdim, feat]
    return g.add(g.mul(wb, gains), offsets);
}

Graph::Id SecondOrderModel::decode_from_features(Graph& g, Graph::Id feats) const {
    const int n = g.value(feats).dim(0);
    Graph::Id h = g.relu(feats);
    h = g.reshape(h, {n, cfg_.dec_ch, 7, 7});
    h = g.relu(dec_t1_(g, h));
    return g.sigmoid(dec_t2_(g, h));
}

Graph::Id SecondOrderModel::decode(Graph& g, Graph::Id z, Graph::Id cond) const {
    const int n = g.value(z).dim(0);
    const int feat = feature_count();
    Modulation m = modulation(g, cond);
    Graph::Id weff = modulated_weights(g, g.param(*base_w_), m.gains, m.offsets);
    Graph::Id zx = g.expand_axis(z, 2, feat);  // [N, zdim, feat]
    Graph::Id f = g.add_bias(g.sum_axis(g.mul(zx, weff), 1), g.param(*base_b_));
    return decode_from_features(g, f);
}

Graph::Id SecondOrderModel::decode_base(Graph& g, Graph::Id z) const {
    const int feat = feature_count();
    const int n = g.value(z).dim(0);
    // same einsum path as decode() so identity modulation is bit-identical
    Graph::Id wb = g.expand_axis(g.param(*base_w_), 0, n);
    Graph::Id zx = g.expand_axis(z, 2, feat);
    Graph::Id f = g.add_bias(g.sum_axis(g.mul(zx, wb), 1), g.param(*base_b_));
    return decode_from_features(g, f);
}

std::vector<Parameter*> SecondOrderModel::autoencoder_params() { return params_.pointers(); }

std::string SecondOrderModel::arch_descriptor() const {
    return "second_order:z" + std::to_string(cfg_.zdim) + ",e" + std::to_string(cfg_.enc_ch1) + "-" +
           std::to_string(cfg_.enc_ch2) + "-" + std::to_string(cfg_.enc_dense) + ",f" +
           std::to_string(cfg_.dec_ch) + ",r" + std::to_string(cfg_.rank) + ",h" +
           std::to_string(cfg_.ctrl_hidden) + ",G" + std::to_string(cfg_.gain_bound);
}

// --- training -----------------------------------------------------------------

namespace {

struct Batch {
    Tensor inputs;   // [N,1,28,28] untransformed
    Tensor targets;  // [N,1,28,28] transformed
    Tensor conds;    // [N,2]
};

Batch sample_batch(const SplitBundle& split, int batch, Rng& rng) {
    const auto& train = split.train;
    Batch b;
    b.inputs = Tensor({batch, 1, 28, 28});
    b.targets = Tensor({batch, 1, 28, 28});
    std::vector<double> thetas;
    std::vector<std::pair<int, int>> shifts;
    for (int i = 0; i < batch; ++i) {
        const LabeledImage& s = train[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(train.size())))];
        const bool restricted = split.protocol.is_restricted(s.label);
        Tensor target;
        if (split.protocol.kind == TransformKind::Rotation) {
            const double theta = sample_angle(split.protocol, restricted, false, rng);
            thetas.push_back(theta);
            target = rotate_image(s.pixels, theta, 0.0);
        } else {
            int dx = 0, dy = 0;
            sample_shift_params(split.protocol, restricted, false, rng, dx, dy);
            shifts.emplace_back(dx, dy);
            target = shift_image(s.pixels, dx, dy, 0.0);
        }
        std::copy(s.pixels.data.begin(), s.pixels.data.end(),
                  b.inputs.data.begin() + static_cast<std::int64_t>(i) * 784);
        std::copy(target.data.begin(), target.data.end(),
                  b.targets.data.begin() + static_cast<std::int64_t>(i) * 784);
    }
    b.conds = split.protocol.kind == TransformKind::Rotation ? make_conditions(thetas)
                                                             : make_shift_conditions(shifts);
    return b;
}

}  // namespace

GenTrainResult train_generative(GenerativeModel& model, const SplitBundle& split,
                                const GenTrainConfig& cfg) {
    if (split.train.empty()) throw ConfigError("train_generative: empty training split");
    if (cfg.batch < 1) throw ConfigError("train_generative: batch must be >= 1");
    Rng rng(cfg.seed);
    auto* aae = dynamic_cast<AaeModel*>(&model);

    OptimConfig oc;
    oc.lr = cfg.lr;
    oc.precision = cfg.precision;
    Optimizer ae_opt(oc, model.autoencoder_params());
    std::optional<Optimizer> disc_opt;
    if (aae) {
        OptimConfig dc = oc;
        dc.lr = cfg.disc_lr;
        disc_opt.emplace(dc, aae->discriminator_params());
    }

    GenTrainResult res;
    namespace fs = std::filesystem;
    auto write_ckpt = [&](const std::string& name) {
        if (cfg.out_dir.empty()) return std::string();
        fs::create_directories(cfg.out_dir);
        const std::string path = (fs::path(cfg.out_dir) / name).string();
        save_model_checkpoint(path, model.params(), model.kind(), model.arch_descriptor());
        return path;
    };

    for (int step = 0; step < cfg.steps; ++step) {
        Batch batch = sample_batch(split, cfg.batch, rng);
        double recon_v = 0.0, disc_v = 0.0, reg_v = 0.0;

        {  // autoencoder update
            Graph g;
            Graph::Id x = g.input(batch.inputs);
            Graph::Id cond = g.input(batch.conds);
            Graph::Id z = model.encode(g, x);
            Graph::Id xr = model.decode(g, z, cond);
            Graph::Id recon = g.mean_all(g.square(g.sub(xr, g.input(batch.targets))));
            Graph::Id loss = recon;
            Graph::Id reg = -1;
            if (aae) {
                Tensor zprior({cfg.batch, model.zdim()});
                for (double& v : zprior.data) v = rng.normal();
                auto adv = adversarial_losses(g, *aae, g.input(std::move(zprior)), z);
                reg = adv.enc_reg;
                loss = g.add(recon, g.affine(reg, cfg.adv_weight, 0.0));
            }
            recon_v = g.value(recon)[0];
            if (reg >= 0) reg_v = g.value(reg)[0];
            if (!std::isfinite(recon_v) || !std::isfinite(reg_v)) {
                throw NonFiniteError("train_generative: non-finite loss at step " +
                                     std::to_string(step) + " (recon=" + std::to_string(recon_v) +
                                     ", enc_reg=" + std::to_string(reg_v) + ")");
            }
            model.params().zero_grads();
            g.backward(loss);
            ae_opt.step();
        }

        if (aae) {  // discriminator update on fresh prior draws and frozen codes
            Graph g;
            Graph::Id x = g.input(batch.inputs);
            Graph::Id z = aae->encode(g, x);
            Graph::Id z_const = g.input(g.value(z));  // codes detached from the encoder
            Tensor zprior({cfg.batch, model.zdim()});
            for (double& v : zprior.data) v = rng.normal();
            auto adv = adversarial_losses(g, *aae, g.input(std::move(zprior)), z_const);
            disc_v = g.value(adv.disc_loss)[0];
            if (!std::isfinite(disc_v)) {
                throw NonFiniteError("train_generative: non-finite discriminator loss at step " +
                                     std::to_string(step) + " (disc=" + std::to_string(disc_v) + ")");
            }
            model.params().zero_grads();
            g.backward(adv.disc_loss);
            disc_opt->step();
        }

        if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            res.curve.push_back({step, recon_v, disc_v, reg_v});
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            write_ckpt("checkpoint_step" + std::to_string(step + 1) + ".rlcp");
        }
    }

    res.checkpoint_path = write_ckpt("checkpoint.rlcp");
    if (!cfg.out_dir.empty()) {
        std::ofstream os(fs::path(cfg.out_dir) / "loss_curves.csv");
        os << "step,recon,disc,enc_reg\n";
        char buf[160];
        for (const auto& r : res.curve) {
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.step, r.recon, r.disc,
                          r.enc_reg);
            os << buf;
        }
    }
    return res;
}

// --- checkpoint helpers -------------------------------------------------------

void save_model_checkpoint(const std::string& path, const ParamStore& params,
                           const std::string& kind, const std::string& arch_descriptor,
                           const std::vector<std::pair<std::string, std::string>>& extra) {
    Checkpoint c = Checkpoint::from_params(params);
    c.meta["model_kind"] = kind;
    c.meta["arch_hash"] = hex64(fnv1a64(arch_descriptor));
    for (const auto& [k, v] : extra) c.meta[k] = v;
    save_checkpoint(path, c);
}

void load_model_checkpoint(const std::string& path, ParamStore& params, const std::string& kind,
                           const std::string& arch_descriptor) {
    Checkpoint c = load_checkpoint(path);
    const auto kit = c.meta.find("model_kind");
    if (kit == c.meta.end() || kit->second != kind) {
        throw CheckpointError(path + ": model kind '" +
                              (kit == c.meta.end() ? "<none>" : kit->second) + "' != expected '" +
                              kind + "'");
    }
    const auto hit = c.meta.find("arch_hash");
    const std::string want = hex64(fnv1a64(arch_descriptor));
    if (hit == c.meta.end() || hit->second != want) {
        throw CheckpointError(path + ": architecture hash mismatch (checkpoint " +
                              (hit == c.meta.end() ? "<none>" : hit->second) + ", config " + want +
                              "); refusing to load");
    }
    c.into_params(params);
}

Tensor make_novel_symbol() {
    // A thick "F": one vertical stroke, full top bar, half middle bar.
    // Not 180-degree self-similar and absent from the digit classes.
    Tensor img({28, 28});
    auto bar = [&](int y0, int y1, int x0, int x1) {
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) img.at({y, x}) = 1.0;
        }
    };
    bar(6, 22, 9, 12);    // vertical stroke
    bar(6, 9, 9, 21);     // top bar
    bar(13, 15, 9, 17);   // middle bar
    return img;
}

}  // namespace rotlab
