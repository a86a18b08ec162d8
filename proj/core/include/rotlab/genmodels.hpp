#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rotlab/graph.hpp"
#include "rotlab/layers.hpp"
#include "rotlab/optim.hpp"
#include "rotlab/protocol.hpp"
#include "rotlab/rng.hpp"

namespace rotlab {

// (sin theta, cos theta) rows for rotation conditioning; rows sit on the unit
// circle by construction.
Tensor make_conditions(const std::vector<double>& thetas_deg);
// Shift conditioning uses (dx,dy)/10 in the same two slots.
Tensor make_shift_conditions(const std::vector<std::pair<int, int>>& shifts);

class GenerativeModel {
public:
    virtual ~GenerativeModel() = default;

    // images [N,1,28,28] in [0,1] -> z [N,zdim]; deterministic feed-forward.
    virtual Graph::Id encode(Graph& g, Graph::Id images) const = 0;
    // z [N,zdim] + condition [N,2] -> images [N,1,28,28] in [0,1].
    virtual Graph::Id decode(Graph& g, Graph::Id z, Graph::Id cond) const = 0;

    virtual ParamStore& params() = 0;
    virtual const ParamStore& params() const = 0;
    // parameters updated by the reconstruction objective (everything except a
    // latent discriminator)
    virtual std::vector<Parameter*> autoencoder_params() = 0;
    virtual std::string kind() const = 0;
    virtual std::string arch_descriptor() const = 0;
    virtual int zdim() const = 0;
};

// batch-1 conveniences (validate pixel range / finiteness)
std::vector<double> encode_image(const GenerativeModel& m, const Tensor& image);
Tensor decode_image(const GenerativeModel& m, const std::vector<double>& z, double theta_deg);

struct AaeConfig {
    int zdim = 16;
    int enc_ch1 = 16;
    int enc_ch2 = 32;
    int enc_dense = 128;
    int dec_dense = 128;
    int dec_ch = 16;  // feature maps at 7x7
    int disc_hidden = 64;
};

// Angle-conditioned convolutional adversarial autoencoder: the encoder never
// sees the condition; the decoder receives z with (sin,cos) appended; a small
// discriminator pushes the aggregate code distribution toward N(0,I).
class AaeModel : public GenerativeModel {
public:
    AaeModel(const AaeConfig& cfg, Rng& rng);

    Graph::Id encode(Graph& g, Graph::Id images) const override;
    Graph::Id decode(Graph& g, Graph::Id z, Graph::Id cond) const override;
    Graph::Id discriminate(Graph& g, Graph::Id z) const;  // [N,1] real-probability

    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }
    std::vector<Parameter*> autoencoder_params() override;
    std::vector<Parameter*> discriminator_params();
    std::string kind() const override { return "aae"; }
    std::string arch_descriptor() const override;
    int zdim() const override { return cfg_.zdim; }
    const AaeConfig& config() const { return cfg_; }

private:
    AaeConfig cfg_;
    ParamStore params_;
    Conv2d enc1_, enc2_;
    Dense enc_fc1_, enc_fc2_;
    Dense dec_fc1_, dec_fc2_;
    TConv2d dec_t1_, dec_t2_;
    Dense disc1_, disc2_, disc3_;
};

// disc = -mean log D(z_real) - mean log(1 - D(z_fake));
// enc_reg = -mean log D(z_fake). Probabilities clamped to [1e-7, 1-1e-7].
struct AdversarialLosses {
    Graph::Id disc_loss;
    Graph::Id enc_reg;
};
AdversarialLosses adversarial_losses(Graph& g, const AaeModel& m, Graph::Id z_real,
                                     Graph::Id z_fake);

struct SecondOrderConfig {
    int zdim = 16;
    int enc_ch1 = 16;
    int enc_ch2 = 32;
    int enc_dense = 128;
    int dec_ch = 16;     // feature maps at 7x7
    int rank = 8;        // rank of the per-connection modulation field
    int ctrl_hidden = 16;
    double gain_bound = 4.0;  // gains confined to [1-G, 1+G] via scaled tanh
};

// Autoencoder whose latent-to-feature-map connection weights are modulated by
// control neurons fed with the transformation parameters. The control
// features are baseline-subtracted at the identity condition (theta = 0), so
// the effective weights equal the base weights exactly there, at any stage of
// training.
class SecondOrderModel : public GenerativeModel {
public:
    SecondOrderModel(const SecondOrderConfig& cfg, Rng& rng);

    Graph::Id encode(Graph& g, Graph::Id images) const override;
    Graph::Id decode(Graph& g, Graph::Id z, Graph::Id cond) const override;
    // decoding through the unmodulated base weights (gains 1, offsets 0)
    Graph::Id decode_base(Graph& g, Graph::Id z) const;

    struct Modulation {
        Graph::Id gains;    // [N, zdim, feat]
        Graph::Id offsets;  // [N, zdim, feat]
    };
    Modulation modulation(Graph& g, Graph::Id cond) const;

    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }
    std::vector<Parameter*> autoencoder_params() override;
    std::string kind() const override { return "second_order"; }
    std::string arch_descriptor() const override;
    int zdim() const override { return cfg_.zdim; }
    int feature_count() const { return cfg_.dec_ch * 7 * 7; }
    const SecondOrderConfig& config() const { return cfg_; }

private:
    Graph::Id decode_from_features(Graph& g, Graph::Id feats) const;

    SecondOrderConfig cfg_;
    ParamStore params_;
    Conv2d enc1_, enc2_;
    Dense enc_fc1_, enc_fc2_;
    Dense ctrl1_, ctrl2_;
    Parameter* base_w_ = nullptr;   // [zdim, feat]
    Parameter* base_b_ = nullptr;   // [feat]
    Parameter* mod_ag_ = nullptr;   // [rank, zdim]
    Parameter* mod_bg_ = nullptr;   // [rank, feat]
    Parameter* mod_ao_ = nullptr;   // [rank, zdim]
    Parameter* mod_bo_ = nullptr;   // [rank, feat]
    TConv2d dec_t1_, dec_t2_;
};

// The adopted modulation law: effective = base (*) gains + offsets, applied
// per connection with base broadcast over the batch.
Graph::Id modulated_weights(Graph& g, Graph::Id base_w, Graph::Id gains, Graph::Id offsets);

// --- training -----------------------------------------------------------------

enum class GenKind { Aae, SecondOrder };

struct GenTrainConfig {
    int steps = 3000;
    int batch = 32;
    double lr = 1e-3;
    double disc_lr = 1e-3;
    double adv_weight = 0.05;  // encoder regularizer weight in the AE update
    int checkpoint_every = 0;  // 0 = final only
    Precision precision = Precision::F64;
    std::uint64_t seed = 1;
    std::string out_dir;  // when set: checkpoint + loss_curves.csv are written
    int log_every = 25;
};

struct GenLossRow {
    int step;
    double recon;
    double disc;     // 0 for non-adversarial models
    double enc_reg;  // 0 for non-adversarial models
};

struct GenTrainResult {
    std::vector<GenLossRow> curve;
    std::string checkpoint_path;  // empty when out_dir unset
};

// Per step: sample a batch with fresh transformation parameters per
// presentation, reconstruct the transformed target from the untransformed
// input plus the condition, and apply alternating discriminator/autoencoder
// updates (AAE only). Aborts with step and loss components on non-finite
// loss.
GenTrainResult train_generative(GenerativeModel& model, const SplitBundle& split,
                                const GenTrainConfig& cfg);

// Checkpoint helpers shared by all models (kind tag + architecture hash).
void save_model_checkpoint(const std::string& path, const ParamStore& params,
                           const std::string& kind, const std::string& arch_descriptor,
                           const std::vector<std::pair<std::string, std::string>>& extra = {});
// Throws CheckpointError if the stored kind or architecture hash mismatches.
void load_model_checkpoint(const std::string& path, ParamStore& params, const std::string& kind,
                           const std::string& arch_descriptor);

// A glyph outside the digit classes (an "F"-like shape), for probing
// content-independent transformation handling.
Tensor make_novel_symbol();

}  // namespace rotlab
