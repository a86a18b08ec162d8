// rotlab CLI: config-driven training, evaluation and analysis runs.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "rotlab/capsnet.hpp"
#include "rotlab/finite_diff.hpp"
#include "rotlab/genmodels.hpp"
#include "rotlab/harness.hpp"
#include "rotlab/hash.hpp"

using namespace rotlab;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    long long seed = -1;
    int precision = 0;

    void attach(CLI::App* cmd, bool need_config) {
        auto* opt = cmd->add_option("--config", config_path, "experiment config file (key = value)");
        if (need_config) opt->required();
        cmd->add_option("--seed", seed, "seed override");
        cmd->add_option("--data-dir", data_dir, "MNIST data directory (else ROTLAB_DATA_DIR)");
        cmd->add_option("--out", out_dir, "output directory override");
        cmd->add_option("--precision", precision, "numeric precision: 32 or 64")
            ->check(CLI::IsMember({32, 64}));
    }

    KvConfig load(const std::string& default_experiment = "") const {
        KvConfig kv;
        if (!config_path.empty()) {
            kv = KvConfig::parse_file(config_path);
        } else if (!default_experiment.empty()) {
            kv = default_experiment_kv(experiment_kind_from(default_experiment));
        }
        if (seed >= 0) kv.set("seed", std::to_string(seed));
        if (!data_dir.empty()) kv.set("data_dir", data_dir);
        if (!out_dir.empty()) kv.set("out_dir", out_dir);
        if (precision != 0) kv.set("precision", std::to_string(precision));
        return kv;
    }
};

int run_gradcheck(std::uint64_t seed) {
    Rng rng(seed);
    struct Case {
        std::string name;
        double err;
    };
    std::vector<Case> cases;

    auto check = [&](const std::string& name, ParamStore& ps, const LossFn& f, int coords = 24) {
        Rng crng(seed ^ fnv1a64(name));
        const auto rep = finite_diff_check(f, ps.pointers(), 1e-5, coords, crng);
        cases.push_back({name, rep.max_rel_err});
    };

    {  // dense + relu + softmax cross-entropy
        ParamStore ps;
        auto d1 = Dense::create(ps, "d1", 6, 5, rng);
        auto d2 = Dense::create(ps, "d2", 5, 3, rng);
        Tensor x({4, 6});
        for (auto& v : x.data) v = rng.uniform(-1, 1);
        check("dense_relu_ce", ps, [&](bool grad) {
            Graph g;
            auto h = g.relu(d1(g, g.input(x)));
            auto loss = g.ce_logits(d2(g, h), {0, 1, 2, 0});
            if (grad) {
                ps.zero_grads();
                g.backward(loss);
            }
            return g.value(loss)[0];
        });
    }
    {  // conv + pool + tconv chain
        ParamStore ps;
        auto c = Conv2d::create(ps, "c", 1, 3, 3, 3, 1, 1, rng);
        auto t = TConv2d::create(ps, "t", 3, 2, 4, 4, 2, 1, rng);
        Tensor x({2, 1, 8, 8});
        for (auto& v : x.data) v = rng.uniform();
        check("conv_pool_tconv", ps, [&](bool grad) {
            Graph g;
            auto h = g.maxpool2(g.relu(c(g, g.input(x))));
            auto y = g.sigmoid(t(g, h));
            auto loss = g.mean_all(g.square(y));
            if (grad) {
                ps.zero_grads();
                g.backward(loss);
            }
            return g.value(loss)[0];
        });
    }

    Rng toy_rng(seed);
    const ClassMap toy_classes{{0, 1, 2}};
    {  // toy-width capsule model with margin loss
        DynCapsConfig cc;
        cc.conv_ch = 4;
        cc.primary_types = 2;
        cc.primary_dim = 4;
        cc.class_dim = 4;
        DynCapsModel model(cc, toy_classes, toy_rng);
        Tensor x({2, 1, 28, 28});
        for (auto& v : x.data) v = toy_rng.uniform();
        check("dyncaps_margin_loss", model.params(), [&](bool grad) {
            Graph g;
            auto loss = model.loss(g, g.input(x), {0, 2}, 0.5);
            if (grad) {
                model.params().zero_grads();
                g.backward(loss);
            }
            return g.value(loss)[0];
        });
    }
    {  // toy-width EM capsules with spread loss
        EmCapsConfig ec;
        ec.conv1_ch = 4;
        ec.conv2_ch = 6;
        ec.primary_types = 2;
        EmCapsModel model(ec, toy_classes, toy_rng);
        Tensor x({2, 1, 28, 28});
        for (auto& v : x.data) v = toy_rng.uniform();
        check("emcaps_spread_loss", model.params(), [&](bool grad) {
            Graph g;
            auto loss = model.loss(g, g.input(x), {1, 0}, 0.5);
            if (grad) {
                model.params().zero_grads();
                g.backward(loss);
            }
            return g.value(loss)[0];
        });
    }
    {  // second-order control path
        SecondOrderConfig sc;
        sc.zdim = 4;
        sc.enc_ch1 = 2;
        sc.enc_ch2 = 3;
        sc.enc_dense = 8;
        sc.dec_ch = 2;
        sc.rank = 2;
        sc.ctrl_hidden = 4;
        SecondOrderModel model(sc, toy_rng);
        Tensor x({2, 1, 28, 28});
        for (auto& v : x.data) v = toy_rng.uniform();
        Tensor target = x;
        check("second_order_recon", model.params(), [&](bool grad) {
            Graph g;
            auto z = model.encode(g, g.input(x));
            auto xr = model.decode(g, z, g.input(make_conditions({30.0, -100.0})));
            auto loss = g.mean_all(g.square(g.sub(xr, g.input(target))));
            if (grad) {
                model.params().zero_grads();
                g.backward(loss);
            }
            return g.value(loss)[0];
        });
    }

    bool ok = true;
    for (const auto& c : cases) {
        const bool pass = c.err < 1e-4;
        ok = ok && pass;
        std::printf("%-24s max_rel_err %.3e  %s\n", c.name.c_str(), c.err, pass ? "ok" : "FAIL");
    }
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"discriminative vs generative models under spatial transformations"};
    app.require_subcommand(1);

    CommonFlags train_flags, eval_flags, grid_flags, filter_flags, mr_flags, repro_flags;
    std::string eval_checkpoint, grid_checkpoint, grid_model = "second_order", grid_rows,
                grid_angles, grid_out;
    long long gradcheck_seed = 7;

    auto* cmd_train = app.add_subcommand("train", "train a model and write a run directory");
    train_flags.attach(cmd_train, true);

    auto* cmd_eval = app.add_subcommand("eval", "evaluate an existing checkpoint");
    eval_flags.attach(cmd_eval, true);
    cmd_eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();

    auto* cmd_grid = app.add_subcommand("grid", "emit a reconstruction grid PNG");
    grid_flags.attach(cmd_grid, true);
    cmd_grid->add_option("--checkpoint", grid_checkpoint, "generative checkpoint")->required();
    cmd_grid->add_option("--model", grid_model, "aae | second_order");
    cmd_grid->add_option("--rows", grid_rows, "comma list: digit:index or symbol")->required();
    cmd_grid->add_option("--angles", grid_angles, "comma list of degrees")->required();
    cmd_grid->add_option("--png", grid_out, "output PNG path")->required();

    auto* cmd_filter = app.add_subcommand("filter-demo", "run a belief-filter scenario");
    filter_flags.attach(cmd_filter, false);
    std::string scenario_flag;
    cmd_filter->add_option("--scenario", scenario_flag, "scenario file");

    auto* cmd_mr = app.add_subcommand("mental-rotation", "angle inference via the trained pair");
    mr_flags.attach(cmd_mr, false);
    std::string mr_checkpoint_flag;
    cmd_mr->add_option("--checkpoint", mr_checkpoint_flag, "generative checkpoint");

    auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference checks per layer and model");
    cmd_grad->add_option("--seed", gradcheck_seed, "seed");

    auto* cmd_repro = app.add_subcommand("reproduce-all", "run the full experiment suite");
    repro_flags.attach(cmd_repro, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_train->parsed()) {
            const auto cfg = ExperimentConfig::from_kv(train_flags.load());
            const RunResult r = run_experiment(cfg);
            std::printf("run completed: %s\n", r.run_dir.c_str());
            return 0;
        }
        if (cmd_eval->parsed()) {
            KvConfig kv = eval_flags.load();
            kv.set("steps", "0");
            auto cfg = ExperimentConfig::from_kv(kv);
            Rng rng(cfg.seed ^ 0xda3e39cb94b95bdbull);
            const MnistSource source = MnistSource::open(resolve_data_dir(cfg.data_dir));
            SplitBundle split = build_split(cfg.protocol, source, cfg.seed);
            MetricsReport report;
            report.experiment = experiment_kind_name(cfg.kind);
            report.config_hash = hex64(cfg.config_hash);
            report.seed = cfg.seed;
            if (cfg.kind == ExperimentKind::Aae || cfg.kind == ExperimentKind::SecondOrder) {
                auto model = make_generative(experiment_kind_name(cfg.kind), cfg, rng);
                load_model_checkpoint(eval_checkpoint, model->params(), model->kind(),
                                      model->arch_descriptor());
                generative_report(*model, split, source, cfg.seed, report);
            } else {
                auto model = make_classifier(cfg, rng);
                load_model_checkpoint(eval_checkpoint, model->params(), model->kind(),
                                      model->arch_descriptor());
                EvalOptions eo;
                eo.max_train_eval = cfg.eval_max_train;
                accuracy_report(*model, split, report, eo);
                append_paper_reference(report);
            }
            std::fputs(report.text().c_str(), stdout);
            if (!cfg.out_dir.empty()) {
                std::filesystem::create_directories(cfg.out_dir);
                std::ofstream os(std::filesystem::path(cfg.out_dir) / "metrics.csv");
                os << report.csv();
            }
            return 0;
        }
        if (cmd_grid->parsed()) {
            KvConfig kv = grid_flags.load(grid_model);
            kv.set("experiment", grid_model);
            kv.set("steps", "0");
            auto cfg = ExperimentConfig::from_kv(kv);
            Rng rng(0);
            auto model = make_generative(grid_model, cfg, rng);
            load_model_checkpoint(grid_checkpoint, model->params(), model->kind(),
                                  model->arch_descriptor());
            const MnistSource source = MnistSource::open(resolve_data_dir(cfg.data_dir));
            GridSpec spec;
            for (const auto& r : KvConfig::parse_text("rows = " + grid_rows).get_string_list("rows"))
                spec.rows.push_back(r);
            spec.angles = KvConfig::parse_text("a = " + grid_angles).get_double_list("a");
            spec.out_png = grid_out;
            emit_grid(spec, *model, source);
            std::printf("grid written: %s\n", grid_out.c_str());
            return 0;
        }
        if (cmd_filter->parsed()) {
            KvConfig kv = filter_flags.load("filter_demo");
            kv.set("experiment", "filter_demo");
            if (!scenario_flag.empty()) kv.set("filter.scenario", scenario_flag);
            if (!kv.has("filter.scenario")) kv.set("filter.scenario", "scenarios/darkroom.scn");
            if (!kv.has("out_dir")) kv.set("out_dir", "runs/filter_demo");
            const RunResult r = run_experiment(ExperimentConfig::from_kv(kv));
            std::printf("filter trace: %s/filter_trace.csv\n", r.run_dir.c_str());
            return 0;
        }
        if (cmd_mr->parsed()) {
            KvConfig kv = mr_flags.load("mental_rotation");
            kv.set("experiment", "mental_rotation");
            if (!mr_checkpoint_flag.empty()) kv.set("mr.checkpoint", mr_checkpoint_flag);
            if (!kv.has("out_dir")) kv.set("out_dir", "runs/mental_rotation");
            const RunResult r = run_experiment(ExperimentConfig::from_kv(kv));
            std::fputs(r.report.text().c_str(), stdout);
            return 0;
        }
        if (cmd_grad->parsed()) {
            return run_gradcheck(static_cast<std::uint64_t>(gradcheck_seed));
        }
        if (cmd_repro->parsed()) {
            KvConfig overrides = repro_flags.config_path.empty()
                                     ? KvConfig()
                                     : KvConfig::parse_file(repro_flags.config_path);
            const std::uint64_t seed =
                repro_flags.seed >= 0 ? static_cast<std::uint64_t>(repro_flags.seed) : 1;
            const std::string out =
                repro_flags.out_dir.empty() ? "runs/reproduce_all" : repro_flags.out_dir;
            const std::string summary =
                run_reproduce_all(out, seed, repro_flags.data_dir, overrides);
            std::printf("summary: %s\n", summary.c_str());
            return 0;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime failure: %s\n", e.what());
        return 2;
    }
    return 0;
}
