#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rotlab/capsnet.hpp"
#include "rotlab/config.hpp"
#include "rotlab/genmodels.hpp"
#include "rotlab/metrics.hpp"
#include "rotlab/optim.hpp"
#include "rotlab/protocol.hpp"

namespace rotlab {

enum class ExperimentKind { Dcnn, DynCaps, EmCaps, Aae, SecondOrder, FilterDemo, MentalRotation };

const char* experiment_kind_name(ExperimentKind k);
ExperimentKind experiment_kind_from(const std::string& s);

// Fully validated experiment description. from_kv reports every violation at
// once; nothing downstream re-validates.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::Dcnn;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string data_dir;  // resolved: key > ROTLAB_DATA_DIR > data/mnist-subset
    Precision precision = Precision::F64;

    RotationProtocol protocol;

    // training budget
    int steps = 0;
    int batch = 0;
    double lr = 1e-3;
    double disc_lr = 1e-3;
    double adv_weight = 0.05;
    int checkpoint_every = 0;
    int eval_max_train = 1000;

    DcnnConfig dcnn;
    DynCapsConfig dyncaps;
    EmCapsConfig emcaps;
    AaeConfig aae;
    SecondOrderConfig second_order;

    // mental rotation
    int mr_grid_points = 24;
    int mr_iterations = 5;
    int mr_samples = 200;
    std::vector<int> mr_digits{2, 5, 7};
    std::string mr_checkpoint;          // trained generative checkpoint
    std::string mr_model = "second_order";  // aae | second_order

    // filter demo
    std::string scenario_path;
    bool filter_map_approx = false;

    std::uint64_t config_hash = 0;
    std::string canonical_echo;

    static ExperimentConfig from_kv(const KvConfig& kv);
};

// Default per-kind training budgets (also used by reproduce-all).
KvConfig default_experiment_kv(ExperimentKind kind);

struct RunResult {
    std::string run_dir;
    MetricsReport report;
    std::string checkpoint_path;  // empty for non-training runs
};

// Deterministic pipeline: build split -> train -> evaluate -> write the run
// directory (config echo, manifest, metrics CSV, report text, checkpoint,
// MANIFEST), then self-audit the directory contents. Exit status handling
// (config error vs runtime failure) is the CLI's job; this throws.
RunResult run_experiment(const ExperimentConfig& cfg);

// --- classifier training -----------------------------------------------------

struct ClasTrainConfig {
    int steps = 0;
    int batch = 32;
    double lr = 1e-3;
    Precision precision = Precision::F64;
    std::uint64_t seed = 1;
    int log_every = 25;
};

struct ClasTrainResult {
    std::vector<std::pair<int, double>> curve;  // (step, loss)
};

ClasTrainResult train_classifier(ClassifierModel& model, const SplitBundle& split,
                                 const ClasTrainConfig& cfg);

// --- generative evaluation ----------------------------------------------------

// Interior reconstruction MSE by digit group and angle region, plus the
// novel-symbol probe; appends gen_mse/gen_ratio rows.
void generative_report(GenerativeModel& model, const SplitBundle& split, const MnistSource& source,
                       std::uint64_t seed, MetricsReport& report, int samples_per_group = 64);

// --- reconstruction grids -----------------------------------------------------

struct GridSpec {
    std::vector<std::string> rows;  // "digit:index" into the test split, or "symbol"
    std::vector<double> angles;
    std::string out_png;
};

// Decodes each instance's code at every angle and tiles 28x28 cells with
// 1-pixel separators. Deterministic bytes for a fixed checkpoint.
void emit_grid(const GridSpec& spec, GenerativeModel& model, const MnistSource& source);

// --- model factory helpers ------------------------------------------------------

ClassMap class_map_from_protocol(const RotationProtocol& protocol);
std::unique_ptr<ClassifierModel> make_classifier(const ExperimentConfig& cfg, Rng& rng);
std::unique_ptr<GenerativeModel> make_generative(const std::string& kind,
                                                 const ExperimentConfig& cfg, Rng& rng);
GenerativePair make_generative_pair(const GenerativeModel& model);

// --- reproduce-all -------------------------------------------------------------

// Runs the full experiment suite sequentially (dcnn, dyncaps, emcaps, aae,
// second_order, mental-rotation on the second-order checkpoint, filter demo)
// into subdirectories of out_dir and writes a consolidated summary.csv with
// the published reference row. `overrides` keys are applied on top of every
// per-experiment default config (budgets, protocol, ...).
std::string run_reproduce_all(const std::string& out_dir, std::uint64_t seed,
                              const std::string& data_dir, const KvConfig& overrides);

std::string resolve_data_dir(const std::string& configured);

}  // namespace rotlab
