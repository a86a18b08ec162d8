#include "rotlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "rotlab/hash.hpp"
#include "rotlab/perception.hpp"
#include "rotlab/png.hpp"
#include "rotlab/scenario.hpp"
#include "rotlab/transforms.hpp"

namespace fs = std::filesystem;

namespace rotlab {

const char* experiment_kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::Dcnn: return "dcnn";
        case ExperimentKind::DynCaps: return "dyncaps";
        case ExperimentKind::EmCaps: return "emcaps";
        case ExperimentKind::Aae: return "aae";
        case ExperimentKind::SecondOrder: return "second_order";
        case ExperimentKind::FilterDemo: return "filter_demo";
        case ExperimentKind::MentalRotation: return "mental_rotation";
    }
    return "?";
}

ExperimentKind experiment_kind_from(const std::string& s) {
    for (ExperimentKind k : {ExperimentKind::Dcnn, ExperimentKind::DynCaps, ExperimentKind::EmCaps,
                             ExperimentKind::Aae, ExperimentKind::SecondOrder,
                             ExperimentKind::FilterDemo, ExperimentKind::MentalRotation}) {
        if (s == experiment_kind_name(k)) return k;
    }
    throw ConfigError("unknown experiment kind '" + s + "'");
}

std::string resolve_data_dir(const std::string& configured) {
    if (!configured.empty()) return configured;
    if (const char* env = std::getenv("ROTLAB_DATA_DIR"); env && *env) return env;
    return "data/mnist-subset";
}

// --- config schema -------------------------------------------------------------

namespace {

std::vector<FieldSpec> experiment_schema() {
    using T = FieldType;
    return {
        {"experiment", T::String, true},
        {"seed", T::Int, true},
        {"out_dir", T::String, false},
        {"data_dir", T::String, false},
        {"precision", T::Int, false},
        {"steps", T::Int, false},
        {"batch", T::Int, false},
        {"lr", T::Double, false},
        {"disc_lr", T::Double, false},
        {"adv_weight", T::Double, false},
        {"checkpoint_every", T::Int, false},
        {"eval_max_train", T::Int, false},
        {"protocol.free_digits", T::IntList, false},
        {"protocol.restricted_digits", T::IntList, false},
        {"protocol.restricted_lo", T::Double, false},
        {"protocol.restricted_hi", T::Double, false},
        {"protocol.test_out_lo", T::Double, false},
        {"protocol.test_out_hi", T::Double, false},
        {"protocol.transform", T::String, false},
        {"protocol.sampling", T::String, false},
        {"protocol.grid_step", T::Double, false},
        {"protocol.train_per_digit", T::Int, false},
        {"protocol.test_per_digit", T::Int, false},
        {"protocol.allow_ambiguous", T::Bool, false},
        {"dcnn.conv1_ch", T::Int, false},
        {"dcnn.conv2_ch", T::Int, false},
        {"dcnn.dense", T::Int, false},
        {"dyncaps.conv_ch", T::Int, false},
        {"dyncaps.primary_types", T::Int, false},
        {"dyncaps.primary_dim", T::Int, false},
        {"dyncaps.class_dim", T::Int, false},
        {"dyncaps.routing_iters", T::Int, false},
        {"emcaps.conv1_ch", T::Int, false},
        {"emcaps.conv2_ch", T::Int, false},
        {"emcaps.primary_types", T::Int, false},
        {"emcaps.routing_iters", T::Int, false},
        {"emcaps.lambda_base", T::Double, false},
        {"emcaps.variance_floor", T::Double, false},
        {"emcaps.margin_lo", T::Double, false},
        {"emcaps.margin_hi", T::Double, false},
        {"aae.zdim", T::Int, false},
        {"aae.enc_ch1", T::Int, false},
        {"aae.enc_ch2", T::Int, false},
        {"aae.enc_dense", T::Int, false},
        {"aae.dec_dense", T::Int, false},
        {"aae.dec_ch", T::Int, false},
        {"aae.disc_hidden", T::Int, false},
        {"second.zdim", T::Int, false},
        {"second.enc_ch1", T::Int, false},
        {"second.enc_ch2", T::Int, false},
        {"second.enc_dense", T::Int, false},
        {"second.dec_ch", T::Int, false},
        {"second.rank", T::Int, false},
        {"second.ctrl_hidden", T::Int, false},
        {"second.gain_bound", T::Double, false},
        {"mr.grid_points", T::Int, false},
        {"mr.iterations", T::Int, false},
        {"mr.samples", T::Int, false},
        {"mr.digits", T::IntList, false},
        {"mr.checkpoint", T::String, false},
        {"mr.model", T::String, false},
        {"filter.scenario", T::String, false},
        {"filter.map_approx", T::Bool, false},
    };
}

}  // namespace

KvConfig default_experiment_kv(ExperimentKind kind) {
    KvConfig kv;
    kv.set("experiment", experiment_kind_name(kind));
    kv.set("seed", "1");
    kv.set("precision", "64");
    switch (kind) {
        case ExperimentKind::Dcnn:
            kv.set("steps", "1500");
            kv.set("batch", "32");
            kv.set("lr", "1e-3");
            break;
        case ExperimentKind::DynCaps:
            kv.set("steps", "1100");
            kv.set("batch", "16");
            kv.set("lr", "1e-3");
            break;
        case ExperimentKind::EmCaps:
            kv.set("steps", "1800");
            kv.set("batch", "32");
            kv.set("lr", "2e-3");
            break;
        case ExperimentKind::Aae:
            kv.set("steps", "2600");
            kv.set("batch", "32");
            kv.set("lr", "1e-3");
            kv.set("disc_lr", "1e-3");
            kv.set("adv_weight", "0.05");
            break;
        case ExperimentKind::SecondOrder:
            kv.set("steps", "3000");
            kv.set("batch", "32");
            kv.set("lr", "1e-3");
            break;
        case ExperimentKind::MentalRotation:
            kv.set("mr.grid_points", "24");
            kv.set("mr.iterations", "5");
            kv.set("mr.samples", "200");
            kv.set("mr.digits", "2,5,7");
            kv.set("mr.model", "second_order");
            break;
        case ExperimentKind::FilterDemo:
            break;
    }
    return kv;
}

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& user) {
    std::vector<std::string> violations = validate_schema(user, experiment_schema());
    // the kind must parse before defaults can be merged
    ExperimentKind kind{};
    try {
        kind = experiment_kind_from(user.get_string("experiment"));
    } catch (const ConfigError& e) {
        violations.insert(violations.begin(), e.violations().begin(), e.violations().end());
        throw ConfigError(violations);
    }

    KvConfig kv = default_experiment_kv(kind);
    for (const auto& [k, v] : user.entries()) kv.set(k, v);

    ExperimentConfig cfg;
    cfg.kind = kind;
    try {
        cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
    } catch (const ConfigError& e) {
        violations.emplace_back(e.what());
    }
    cfg.out_dir = kv.get_string("out_dir", "");
    cfg.data_dir = kv.get_string("data_dir", "");
    const long long prec = kv.get_int("precision", 64);
    if (prec == 32) {
        cfg.precision = Precision::F32;
    } else if (prec == 64) {
        cfg.precision = Precision::F64;
    } else {
        violations.push_back("precision must be 32 or 64, got " + std::to_string(prec));
    }

    cfg.steps = static_cast<int>(kv.get_int("steps", 0));
    cfg.batch = static_cast<int>(kv.get_int("batch", 32));
    cfg.lr = kv.get_double("lr", 1e-3);
    cfg.disc_lr = kv.get_double("disc_lr", 1e-3);
    cfg.adv_weight = kv.get_double("adv_weight", 0.05);
    cfg.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", 0));
    cfg.eval_max_train = static_cast<int>(kv.get_int("eval_max_train", 1000));
    if (cfg.steps < 0) violations.push_back("steps must be >= 0");
    if (cfg.batch < 1) violations.push_back("batch must be >= 1");

    RotationProtocol p = RotationProtocol::paper_default();
    if (kv.has("protocol.free_digits")) p.free_digits = kv.get_int_list("protocol.free_digits");
    if (kv.has("protocol.restricted_digits")) {
        p.restricted_digits = kv.get_int_list("protocol.restricted_digits");
    }
    p.restricted_range.lo = kv.get_double("protocol.restricted_lo", p.restricted_range.lo);
    p.restricted_range.hi = kv.get_double("protocol.restricted_hi", p.restricted_range.hi);
    p.test_out_range.lo = kv.get_double("protocol.test_out_lo", p.test_out_range.lo);
    p.test_out_range.hi = kv.get_double("protocol.test_out_hi", p.test_out_range.hi);
    const std::string transform = kv.get_string("protocol.transform", "rotation");
    if (transform == "rotation") {
        p.kind = TransformKind::Rotation;
    } else if (transform == "shift") {
        p.kind = TransformKind::Shift;
    } else {
        violations.push_back("protocol.transform must be rotation or shift, got '" + transform + "'");
    }
    const std::string sampling = kv.get_string("protocol.sampling", "uniform");
    if (sampling == "uniform") {
        p.sampling = AngleSampling::UniformContinuous;
    } else if (sampling == "grid") {
        p.sampling = AngleSampling::Grid;
    } else {
        violations.push_back("protocol.sampling must be uniform or grid, got '" + sampling + "'");
    }
    p.grid_step = kv.get_double("protocol.grid_step", p.grid_step);
    p.train_per_digit = static_cast<int>(kv.get_int("protocol.train_per_digit", 0));
    p.test_per_digit = static_cast<int>(kv.get_int("protocol.test_per_digit", 500));
    p.exclude_ambiguous = !kv.get_bool("protocol.allow_ambiguous", false);
    try {
        p.validate();
    } catch (const ConfigError& e) {
        violations.insert(violations.end(), e.violations().begin(), e.violations().end());
    }
    cfg.protocol = p;

    cfg.dcnn.conv1_ch = static_cast<int>(kv.get_int("dcnn.conv1_ch", cfg.dcnn.conv1_ch));
    cfg.dcnn.conv2_ch = static_cast<int>(kv.get_int("dcnn.conv2_ch", cfg.dcnn.conv2_ch));
    cfg.dcnn.dense = static_cast<int>(kv.get_int("dcnn.dense", cfg.dcnn.dense));

    cfg.dyncaps.conv_ch = static_cast<int>(kv.get_int("dyncaps.conv_ch", cfg.dyncaps.conv_ch));
    cfg.dyncaps.primary_types =
        static_cast<int>(kv.get_int("dyncaps.primary_types", cfg.dyncaps.primary_types));
    cfg.dyncaps.primary_dim =
        static_cast<int>(kv.get_int("dyncaps.primary_dim", cfg.dyncaps.primary_dim));
    cfg.dyncaps.class_dim = static_cast<int>(kv.get_int("dyncaps.class_dim", cfg.dyncaps.class_dim));
    cfg.dyncaps.routing_iters =
        static_cast<int>(kv.get_int("dyncaps.routing_iters", cfg.dyncaps.routing_iters));

    cfg.emcaps.conv1_ch = static_cast<int>(kv.get_int("emcaps.conv1_ch", cfg.emcaps.conv1_ch));
    cfg.emcaps.conv2_ch = static_cast<int>(kv.get_int("emcaps.conv2_ch", cfg.emcaps.conv2_ch));
    cfg.emcaps.primary_types =
        static_cast<int>(kv.get_int("emcaps.primary_types", cfg.emcaps.primary_types));
    cfg.emcaps.routing_iters =
        static_cast<int>(kv.get_int("emcaps.routing_iters", cfg.emcaps.routing_iters));
    cfg.emcaps.lambda_base = kv.get_double("emcaps.lambda_base", cfg.emcaps.lambda_base);
    cfg.emcaps.variance_floor = kv.get_double("emcaps.variance_floor", cfg.emcaps.variance_floor);
    cfg.emcaps.spread_margin_lo = kv.get_double("emcaps.margin_lo", cfg.emcaps.spread_margin_lo);
    cfg.emcaps.spread_margin_hi = kv.get_double("emcaps.margin_hi", cfg.emcaps.spread_margin_hi);

    cfg.aae.zdim = static_cast<int>(kv.get_int("aae.zdim", cfg.aae.zdim));
    cfg.aae.enc_ch1 = static_cast<int>(kv.get_int("aae.enc_ch1", cfg.aae.enc_ch1));
    cfg.aae.enc_ch2 = static_cast<int>(kv.get_int("aae.enc_ch2", cfg.aae.enc_ch2));
    cfg.aae.enc_dense = static_cast<int>(kv.get_int("aae.enc_dense", cfg.aae.enc_dense));
    cfg.aae.dec_dense = static_cast<int>(kv.get_int("aae.dec_dense", cfg.aae.dec_dense));
    cfg.aae.dec_ch = static_cast<int>(kv.get_int("aae.dec_ch", cfg.aae.dec_ch));
    cfg.aae.disc_hidden = static_cast<int>(kv.get_int("aae.disc_hidden", cfg.aae.disc_hidden));

    cfg.second_order.zdim = static_cast<int>(kv.get_int("second.zdim", cfg.second_order.zdim));
    cfg.second_order.enc_ch1 = static_cast<int>(kv.get_int("second.enc_ch1", cfg.second_order.enc_ch1));
    cfg.second_order.enc_ch2 = static_cast<int>(kv.get_int("second.enc_ch2", cfg.second_order.enc_ch2));
    cfg.second_order.enc_dense =
        static_cast<int>(kv.get_int("second.enc_dense", cfg.second_order.enc_dense));
    cfg.second_order.dec_ch = static_cast<int>(kv.get_int("second.dec_ch", cfg.second_order.dec_ch));
    cfg.second_order.rank = static_cast<int>(kv.get_int("second.rank", cfg.second_order.rank));
    cfg.second_order.ctrl_hidden =
        static_cast<int>(kv.get_int("second.ctrl_hidden", cfg.second_order.ctrl_hidden));
    cfg.second_order.gain_bound = kv.get_double("second.gain_bound", cfg.second_order.gain_bound);

    cfg.mr_grid_points = static_cast<int>(kv.get_int("mr.grid_points", 24));
    cfg.mr_iterations = static_cast<int>(kv.get_int("mr.iterations", 5));
    cfg.mr_samples = static_cast<int>(kv.get_int("mr.samples", 200));
    if (kv.has("mr.digits")) cfg.mr_digits = kv.get_int_list("mr.digits");
    cfg.mr_checkpoint = kv.get_string("mr.checkpoint", "");
    cfg.mr_model = kv.get_string("mr.model", "second_order");
    if (cfg.mr_model != "aae" && cfg.mr_model != "second_order") {
        violations.push_back("mr.model must be aae or second_order, got '" + cfg.mr_model + "'");
    }
    if (kind == ExperimentKind::MentalRotation && cfg.mr_checkpoint.empty()) {
        violations.push_back("mental_rotation requires mr.checkpoint");
    }
    if (cfg.mr_grid_points < 1) violations.push_back("mr.grid_points must be >= 1");

    cfg.scenario_path = kv.get_string("filter.scenario", "");
    cfg.filter_map_approx = kv.get_bool("filter.map_approx", false);
    if (kind == ExperimentKind::FilterDemo && cfg.scenario_path.empty()) {
        violations.push_back("filter_demo requires filter.scenario");
    }

    if (!violations.empty()) throw ConfigError(violations);
    cfg.config_hash = kv.canonical_hash();
    cfg.canonical_echo = kv.canonical_text();
    return cfg;
}

// --- classifier training ---------------------------------------------------------

ClasTrainResult train_classifier(ClassifierModel& model, const SplitBundle& split,
                                 const ClasTrainConfig& cfg) {
    if (split.train.empty()) throw ConfigError("train_classifier: empty training split");
    Rng rng(cfg.seed);
    OptimConfig oc;
    oc.lr = cfg.lr;
    oc.precision = cfg.precision;
    Optimizer opt(oc, model.params().pointers());

    ClasTrainResult res;
    const ClassMap& classes = model.classes();
    for (int step = 0; step < cfg.steps; ++step) {
        Tensor x({cfg.batch, 1, 28, 28});
        std::vector<int> idx(static_cast<std::size_t>(cfg.batch));
        for (int i = 0; i < cfg.batch; ++i) {
            const LabeledImage& s =
                split.train[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(split.train.size())))];
            LabeledImage fresh = s;
            if (split.protocol.kind == TransformKind::Rotation) {
                fresh.angle =
                    sample_angle(split.protocol, split.protocol.is_restricted(s.label), false, rng);
            } else {
                sample_shift_params(split.protocol, split.protocol.is_restricted(s.label), false,
                                    rng, fresh.dx, fresh.dy);
            }
            const Tensor img = transformed(fresh, split.protocol.kind);
            std::copy(img.data.begin(), img.data.end(),
                      x.data.begin() + static_cast<std::int64_t>(i) * 784);
            idx[static_cast<std::size_t>(i)] = classes.index_of(s.label);
        }
        const double progress = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 1.0;
        Graph g;
        Graph::Id loss = model.loss(g, g.input(std::move(x)), idx, progress);
        const double lv = g.value(loss)[0];
        if (!std::isfinite(lv)) {
            throw NonFiniteError("train_classifier: non-finite loss at step " +
                                 std::to_string(step) + " (loss=" + std::to_string(lv) + ")");
        }
        model.params().zero_grads();
        g.backward(loss);
        opt.step();
        if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            res.curve.emplace_back(step, lv);
        }
    }
    return res;
}

// --- generative evaluation -------------------------------------------------------

namespace {

std::vector<const Tensor*> test_images_with_labels(const MnistSource& source,
                                                   const std::vector<int>& digits, int max_count) {
    std::vector<const Tensor*> out;
    for (std::size_t i = 0; i < source.test.labels.size(); ++i) {
        if (std::find(digits.begin(), digits.end(), source.test.labels[i]) != digits.end()) {
            out.push_back(&source.test.images[i]);
            if (max_count > 0 && static_cast<int>(out.size()) >= max_count) break;
        }
    }
    return out;
}

// mean interior reconstruction error of decode(encode(x), theta) against the
// geometrically transformed source, over per-image probe angles
double mean_interior_recon_mse(GenerativeModel& model, const std::vector<const Tensor*>& images,
                               const std::vector<double>& thetas, int border) {
    const int n = static_cast<int>(images.size());
    double total = 0.0;
    constexpr int kBatch = 32;
    for (int start = 0; start < n; start += kBatch) {
        const int count = std::min(kBatch, n - start);
        Tensor x({count, 1, 28, 28});
        std::vector<double> batch_thetas(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
            std::copy(images[static_cast<std::size_t>(start + i)]->data.begin(),
                      images[static_cast<std::size_t>(start + i)]->data.end(),
                      x.data.begin() + static_cast<std::int64_t>(i) * 784);
            batch_thetas[static_cast<std::size_t>(i)] = thetas[static_cast<std::size_t>(start + i)];
        }
        Graph g;
        Graph::Id z = model.encode(g, g.input(std::move(x)));
        Graph::Id recon = model.decode(g, z, g.input(make_conditions(batch_thetas)));
        const Tensor& rv = g.value(recon);
        for (int i = 0; i < count; ++i) {
            Tensor r({28, 28});
            std::copy(rv.data.begin() + static_cast<std::int64_t>(i) * 784,
                      rv.data.begin() + static_cast<std::int64_t>(i + 1) * 784, r.data.begin());
            const Tensor target = rotate_image(*images[static_cast<std::size_t>(start + i)],
                                               batch_thetas[static_cast<std::size_t>(i)], 0.0);
            total += interior_mse(r, target, border);
        }
    }
    return total / n;
}

}  // namespace

void generative_report(GenerativeModel& model, const SplitBundle& split, const MnistSource& source,
                       std::uint64_t seed, MetricsReport& report, int samples_per_group) {
    const RotationProtocol& p = split.protocol;
    Rng rng(seed ^ 0x67e55044u);
    constexpr int kBorder = 4;

    auto probe = [&](const std::vector<int>& digits, bool held_out) {
        const auto images = test_images_with_labels(source, digits, samples_per_group);
        if (images.empty()) return -1.0;
        std::vector<double> thetas(images.size());
        for (double& t : thetas) t = sample_angle(p, true, held_out, rng);
        return mean_interior_recon_mse(model, images, thetas, kBorder);
    };

    const double r_seen = probe(p.restricted_digits, false);
    const double r_out = probe(p.restricted_digits, true);
    const double f_seen = probe(p.free_digits, false);
    const double f_out = probe(p.free_digits, true);
    if (r_seen >= 0.0) {
        report.add("gen_mse", "restricted_seen", r_seen);
        report.add("gen_mse", "restricted_held_out", r_out);
        report.add("gen_ratio", "restricted_out_vs_seen", r_out / r_seen);
    }
    if (f_seen >= 0.0) {
        report.add("gen_mse", "free_seen_range", f_seen);
        report.add("gen_mse", "free_held_out_range", f_out);
        report.add("gen_ratio", "free_out_vs_seen", f_out / f_seen);
    }

    // never-seen symbol at the eight 45-degree angles
    const Tensor symbol = make_novel_symbol();
    const std::vector<double> z = encode_image(model, symbol);
    double base = -1.0, worst = -1.0;
    for (int k = 0; k < 8; ++k) {
        const double theta = 45.0 * k;
        const Tensor recon = decode_image(model, z, theta);
        const double err = interior_mse(recon, rotate_image(symbol, theta, 0.0), kBorder);
        if (k == 0) base = err;
        worst = std::max(worst, err);
        report.add("gen_mse", "symbol_theta" + std::to_string(45 * k), err);
    }
    report.add("gen_mse", "symbol_theta0_base", base);
    report.add("gen_ratio", "symbol_worst_vs_theta0", worst / base);
}

// --- grids ------------------------------------------------------------------------

void emit_grid(const GridSpec& spec, GenerativeModel& model, const MnistSource& source) {
    if (spec.rows.empty() || spec.angles.empty()) {
        throw ConfigError("grid needs at least one row and one angle");
    }
    const int rows = static_cast<int>(spec.rows.size());
    const int cols = static_cast<int>(spec.angles.size());

    std::vector<Tensor> instances;
    for (const std::string& r : spec.rows) {
        if (r == "symbol") {
            instances.push_back(make_novel_symbol());
            continue;
        }
        const std::size_t colon = r.find(':');
        if (colon == std::string::npos) {
            throw ConfigError("grid row '" + r + "' is neither 'digit:index' nor 'symbol'");
        }
        const int digit = std::stoi(r.substr(0, colon));
        const int index = std::stoi(r.substr(colon + 1));
        int seen = 0;
        bool found = false;
        for (std::size_t i = 0; i < source.test.labels.size(); ++i) {
            if (source.test.labels[i] == digit) {
                if (seen == index) {
                    instances.push_back(source.test.images[i]);
                    found = true;
                    break;
                }
                ++seen;
            }
        }
        if (!found) {
            throw ConfigError("grid row '" + r + "': not enough test images of digit " +
                              std::to_string(digit));
        }
    }

    const int width = cols * 28 + (cols - 1);
    const int height = rows * 28 + (rows - 1);
    std::vector<std::uint8_t> canvas(static_cast<std::size_t>(width) * height, 255);

    for (int r = 0; r < rows; ++r) {
        const std::vector<double> z = encode_image(model, instances[static_cast<std::size_t>(r)]);
        for (int c = 0; c < cols; ++c) {
            const Tensor tile = decode_image(model, z, spec.angles[static_cast<std::size_t>(c)]);
            const int oy = r * 29, ox = c * 29;
            for (int y = 0; y < 28; ++y) {
                for (int x = 0; x < 28; ++x) {
                    const double v = std::clamp(tile.data[static_cast<std::size_t>(y) * 28 + x], 0.0, 1.0);
                    canvas[static_cast<std::size_t>(oy + y) * width + (ox + x)] =
                        static_cast<std::uint8_t>(std::lround(v * 255.0));
                }
            }
        }
    }
    write_png_gray8(spec.out_png, width, height, canvas);
}

// --- factories ---------------------------------------------------------------------

ClassMap class_map_from_protocol(const RotationProtocol& protocol) {
    return ClassMap{protocol.all_digits()};
}

std::unique_ptr<ClassifierModel> make_classifier(const ExperimentConfig& cfg, Rng& rng) {
    const ClassMap classes = class_map_from_protocol(cfg.protocol);
    switch (cfg.kind) {
        case ExperimentKind::Dcnn: return std::make_unique<DcnnModel>(cfg.dcnn, classes, rng);
        case ExperimentKind::DynCaps: return std::make_unique<DynCapsModel>(cfg.dyncaps, classes, rng);
        case ExperimentKind::EmCaps: return std::make_unique<EmCapsModel>(cfg.emcaps, classes, rng);
        default: throw Error("make_classifier: not a classifier experiment");
    }
}

std::unique_ptr<GenerativeModel> make_generative(const std::string& kind,
                                                 const ExperimentConfig& cfg, Rng& rng) {
    if (kind == "aae") return std::make_unique<AaeModel>(cfg.aae, rng);
    if (kind == "second_order") return std::make_unique<SecondOrderModel>(cfg.second_order, rng);
    throw Error("make_generative: unknown kind '" + kind + "'");
}

GenerativePair make_generative_pair(const GenerativeModel& model) {
    GenerativePair pair;
    pair.encode = [&model](const Tensor& img) { return encode_image(model, img); };
    pair.decode = [&model](const std::vector<double>& z, double theta) {
        return decode_image(model, z, theta);
    };
    return pair;
}

// --- run_experiment -------------------------------------------------------------------

namespace {

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write " + path.string());
    os << content;
}

void write_loss_curve_csv(const fs::path& path, const std::vector<std::pair<int, double>>& curve) {
    std::string out = "step,loss\n";
    char buf[64];
    for (const auto& [s, l] : curve) {
        std::snprintf(buf, sizeof buf, "%d,%.17g\n", s, l);
        out += buf;
    }
    write_text_file(path, out);
}

void audit_run_dir(const fs::path& dir, const std::vector<std::string>& files) {
    for (const std::string& f : files) {
        if (!fs::exists(dir / f)) {
            throw Error("run directory self-audit failed: missing " + (dir / f).string());
        }
    }
}

struct MrRow {
    int sample;
    double true_theta, theta_star, oracle_theta, residual;
    int label;
};

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
    if (cfg.out_dir.empty()) throw ConfigError("run_experiment: out_dir not set");
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(cfg.out_dir);
    const fs::path dir(cfg.out_dir);

    RunResult result;
    result.run_dir = cfg.out_dir;
    MetricsReport& report = result.report;
    report.experiment = experiment_kind_name(cfg.kind);
    report.config_hash = hex64(cfg.config_hash);
    report.seed = cfg.seed;

    std::vector<std::pair<std::string, std::string>> files;  // name -> description
    write_text_file(dir / "config.echo", cfg.canonical_echo);
    files.emplace_back("config.echo", "canonical configuration the run executed");

    const bool classifier = cfg.kind == ExperimentKind::Dcnn || cfg.kind == ExperimentKind::DynCaps ||
                            cfg.kind == ExperimentKind::EmCaps;
    const bool generative = cfg.kind == ExperimentKind::Aae || cfg.kind == ExperimentKind::SecondOrder;

    if (classifier || generative) {
        const MnistSource source = MnistSource::open(resolve_data_dir(cfg.data_dir));
        SplitBundle split = build_split(cfg.protocol, source, cfg.seed);
        split.manifest.write((dir / "manifest.txt").string());
        files.emplace_back("manifest.txt", "dataset split manifest");

        Rng model_rng(cfg.seed ^ 0xda3e39cb94b95bdbull);
        if (classifier) {
            auto model = make_classifier(cfg, model_rng);
            ClasTrainConfig tc;
            tc.steps = cfg.steps;
            tc.batch = cfg.batch;
            tc.lr = cfg.lr;
            tc.precision = cfg.precision;
            tc.seed = cfg.seed;
            const ClasTrainResult tr = train_classifier(*model, split, tc);
            write_loss_curve_csv(dir / "loss_curves.csv", tr.curve);
            files.emplace_back("loss_curves.csv", "training loss curve");

            result.checkpoint_path = (dir / "checkpoint.rlcp").string();
            save_model_checkpoint(result.checkpoint_path, model->params(), model->kind(),
                                  model->arch_descriptor(),
                                  {{"config_hash", hex64(cfg.config_hash)}});
            files.emplace_back("checkpoint.rlcp", "trained model parameters");

            EvalOptions eo;
            eo.max_train_eval = cfg.eval_max_train;
            accuracy_report(*model, split, report, eo);
            append_paper_reference(report);
            write_text_file(dir / "confusion.csv", report.confusion_csv());
            files.emplace_back("confusion.csv", "test-split confusion matrix");
        } else {
            auto model = make_generative(experiment_kind_name(cfg.kind), cfg, model_rng);
            GenTrainConfig gc;
            gc.steps = cfg.steps;
            gc.batch = cfg.batch;
            gc.lr = cfg.lr;
            gc.disc_lr = cfg.disc_lr;
            gc.adv_weight = cfg.adv_weight;
            gc.checkpoint_every = cfg.checkpoint_every;
            gc.precision = cfg.precision;
            gc.seed = cfg.seed;
            gc.out_dir = cfg.out_dir;
            const GenTrainResult tr = train_generative(*model, split, gc);
            result.checkpoint_path = tr.checkpoint_path;
            files.emplace_back("loss_curves.csv", "training loss components");
            files.emplace_back("checkpoint.rlcp", "trained model parameters");
            generative_report(*model, split, source, cfg.seed, report);
        }
    } else if (cfg.kind == ExperimentKind::MentalRotation) {
        const MnistSource source = MnistSource::open(resolve_data_dir(cfg.data_dir));
        Rng arch_rng(0);
        auto model = make_generative(cfg.mr_model, cfg, arch_rng);
        load_model_checkpoint(cfg.mr_checkpoint, model->params(), model->kind(),
                              model->arch_descriptor());
        const GenerativePair pair = make_generative_pair(*model);

        std::vector<double> grid(static_cast<std::size_t>(cfg.mr_grid_points));
        for (int k = 0; k < cfg.mr_grid_points; ++k) {
            grid[static_cast<std::size_t>(k)] = wrap_angle_deg(k * 360.0 / cfg.mr_grid_points);
        }

        // evaluation pool: held-in digits from the native test split
        std::vector<std::pair<const Tensor*, int>> pool;
        for (std::size_t i = 0; i < source.test.labels.size(); ++i) {
            const int lab = source.test.labels[i];
            if (std::find(cfg.mr_digits.begin(), cfg.mr_digits.end(), lab) != cfg.mr_digits.end()) {
                pool.emplace_back(&source.test.images[i], lab);
            }
        }
        if (pool.empty()) throw ConfigError("mental_rotation: no test images for mr.digits");
        Rng rng(cfg.seed);
        rng.shuffle(pool);
        const int n = std::min<int>(cfg.mr_samples, static_cast<int>(pool.size()));

        int oracle_match = 0, true_match = 0;
        const double step_deg = 360.0 / cfg.mr_grid_points;
        std::vector<MrRow> mr_rows;
        for (int s = 0; s < n; ++s) {
            const double theta_true = grid[static_cast<std::size_t>(rng.uniform_int(cfg.mr_grid_points))];
            const Tensor x = rotate_image(*pool[static_cast<std::size_t>(s)].first, theta_true, 0.0);
            const MentalRotationResult em = mental_rotation_em(x, pair, grid, cfg.mr_iterations);
            // exhaustive oracle: full scan, identical tie-break, no iteration
            const MentalRotationResult oracle = mental_rotation_em(x, pair, grid, 0);
            if (std::fabs(wrap_angle_deg(em.theta - oracle.theta)) < 1e-9) ++oracle_match;
            if (std::fabs(wrap_angle_deg(em.theta - theta_true)) <= step_deg + 1e-9) ++true_match;
            mr_rows.push_back({s, theta_true, em.theta, oracle.theta, em.residual,
                               pool[static_cast<std::size_t>(s)].second});
        }
        report.add("mental_rotation", "samples", n);
        report.add("mental_rotation", "oracle_match_rate", static_cast<double>(oracle_match) / n);
        report.add("mental_rotation", "true_within_one_step_rate",
                   static_cast<double>(true_match) / n);

        std::string csv = "sample,label,true_theta,theta_star,oracle_theta,residual\n";
        char buf[160];
        for (const MrRow& r : mr_rows) {
            std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g\n", r.sample, r.label,
                          r.true_theta, r.theta_star, r.oracle_theta, r.residual);
            csv += buf;
        }
        write_text_file(dir / "mr_results.csv", csv);
        files.emplace_back("mr_results.csv", "per-sample mental-rotation results");

        Manifest m;
        m.add("seed", static_cast<long long>(cfg.seed));
        m.add("grid_points", cfg.mr_grid_points);
        m.add("iterations", cfg.mr_iterations);
        m.add("samples", n);
        m.write((dir / "manifest.txt").string());
        files.emplace_back("manifest.txt", "mental-rotation run manifest");
    } else {  // FilterDemo
        const Scenario sc = load_scenario(cfg.scenario_path);
        const auto trace = run_filter(sc, cfg.filter_map_approx);
        write_filter_trace_csv((dir / "filter_trace.csv").string(), sc, trace);
        files.emplace_back("filter_trace.csv", "per-step belief masses");
        const Belief final{trace.back().mass};
        report.add("filter", "steps", static_cast<double>(sc.steps.size()));
        report.add("filter", "final_map_state", final.argmax());
        report.add("filter", "final_map_mass", final.p[static_cast<std::size_t>(final.argmax())]);

        Manifest m;
        m.add("scenario", cfg.scenario_path);
        m.add("steps", static_cast<long long>(sc.steps.size()));
        m.write((dir / "manifest.txt").string());
        files.emplace_back("manifest.txt", "filter run manifest");
    }

    write_text_file(dir / "metrics.csv", report.csv());
    files.emplace_back("metrics.csv", "metric rows (section,name,value,source)");
    write_text_file(dir / "report.txt", report.text());
    files.emplace_back("report.txt", "human-readable report");

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char logbuf[128];
    std::snprintf(logbuf, sizeof logbuf, "status = completed\nwall_seconds = %.3f\n", wall);
    write_text_file(dir / "run.log", logbuf);
    files.emplace_back("run.log", "timing and completion status");

    std::sort(files.begin(), files.end());
    std::string manifest_text;
    std::vector<std::string> names;
    for (const auto& [name, desc] : files) {
        manifest_text += name + "  # " + desc + "\n";
        names.push_back(name);
    }
    write_text_file(dir / "MANIFEST", manifest_text);
    names.push_back("MANIFEST");
    audit_run_dir(dir, names);
    return result;
}

// --- reproduce-all ---------------------------------------------------------------------

std::string run_reproduce_all(const std::string& out_dir, std::uint64_t seed,
                              const std::string& data_dir, const KvConfig& overrides) {
    fs::create_directories(out_dir);
    const fs::path base(out_dir);

    auto make_cfg = [&](ExperimentKind kind, const std::string& subdir,
                        const std::vector<std::pair<std::string, std::string>>& extra) {
        KvConfig kv = default_experiment_kv(kind);
        kv.set("seed", std::to_string(seed));
        if (!data_dir.empty()) kv.set("data_dir", data_dir);
        for (const auto& [k, v] : overrides.entries()) kv.set(k, v);
        for (const auto& [k, v] : extra) kv.set(k, v);
        kv.set("out_dir", (base / subdir).string());
        return ExperimentConfig::from_kv(kv);
    };

    std::vector<std::pair<std::string, RunResult>> runs;
    runs.emplace_back("dcnn", run_experiment(make_cfg(ExperimentKind::Dcnn, "dcnn", {})));
    runs.emplace_back("dyncaps", run_experiment(make_cfg(ExperimentKind::DynCaps, "dyncaps", {})));
    runs.emplace_back("emcaps", run_experiment(make_cfg(ExperimentKind::EmCaps, "emcaps", {})));
    runs.emplace_back("aae", run_experiment(make_cfg(ExperimentKind::Aae, "aae", {})));
    RunResult second =
        run_experiment(make_cfg(ExperimentKind::SecondOrder, "second_order", {}));
    runs.emplace_back("second_order", second);
    runs.emplace_back("mental_rotation",
                      run_experiment(make_cfg(ExperimentKind::MentalRotation, "mental_rotation",
                                              {{"mr.checkpoint", second.checkpoint_path},
                                               {"mr.model", "second_order"}})));
    const std::string scenario =
        overrides.has("filter.scenario") ? overrides.get_string("filter.scenario")
                                         : "scenarios/darkroom.scn";
    runs.emplace_back("filter_demo",
                      run_experiment(make_cfg(ExperimentKind::FilterDemo, "filter_demo",
                                              {{"filter.scenario", scenario}})));

    MetricsReport summary;
    summary.experiment = "reproduce_all";
    summary.seed = seed;
    summary.config_hash = hex64(overrides.canonical_hash());
    for (const auto& [name, run] : runs) {
        for (const MetricRow& r : run.report.rows) {
            if (r.section == "paper_reference") continue;
            summary.rows.push_back({name + "." + r.section, r.name, r.value, r.source});
        }
    }
    append_paper_reference(summary);
    write_text_file(base / "summary.csv", summary.csv());
    write_text_file(base / "summary.txt", summary.text());
    return (base / "summary.csv").string();
}

}  // namespace rotlab
