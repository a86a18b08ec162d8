#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rotlab/graph.hpp"
#include "rotlab/layers.hpp"
#include "rotlab/rng.hpp"

namespace rotlab {

// Label values the classifier distinguishes (e.g. {0,1,2,3,4,5,7,8}) mapped
// onto contiguous class indices.
struct ClassMap {
    std::vector<int> labels;

    int count() const { return static_cast<int>(labels.size()); }
    int index_of(int label) const;
    int label_of(int index) const { return labels[static_cast<std::size_t>(index)]; }
};

// --- routing-by-agreement -------------------------------------------------

// Iterative credit assignment from input to output capsules via dot-product
// agreement. predictions has shape [N,I,J,E]; logits start at zero, couplings
// are softmax over outputs, and the agreement update is skipped after the
// final iteration. Everything stays on the tape, so training backpropagates
// through the unrolled iterations.
struct DynRoutingResult {
    Graph::Id outputs;                  // squashed class capsules [N,J,E]
    std::vector<Graph::Id> couplings;   // c_ij per iteration [N,I,J]
    std::vector<Graph::Id> logits;      // b_ij entering each iteration
};
DynRoutingResult dynamic_routing(Graph& g, Graph::Id predictions, int iterations);

// EM routing over 4x4 pose votes. votes [N,I,J,16], in_activations [N,I] in
// [0,1]. Alternates an activation-weighted Gaussian M-step (with the
// cost-based logistic activation rule) and a responsibility E-step. The
// inverse temperature grows linearly across iterations:
// lambda_it = lambda_base * (it+1). Variances are floored.
struct EmRoutingResult {
    Graph::Id poses;                          // [N,J,16]
    Graph::Id activations;                    // [N,J]
    std::vector<Graph::Id> responsibilities;  // r_ij after each E-step [N,I,J]
    std::vector<Graph::Id> means;             // per M-step [N,J,16]
    std::vector<Graph::Id> variances;         // per M-step [N,J,16] (floored)
};
EmRoutingResult em_routing(Graph& g, Graph::Id votes, Graph::Id in_activations, int iterations,
                           double lambda_base, Graph::Id beta_a, Graph::Id beta_u,
                           double variance_floor);

// --- losses -----------------------------------------------------------------

// Margin loss on capsule norms [N,J]: per sample
// sum_j T_j max(0, m_plus - |v_j|)^2 + lambda (1-T_j) max(0, |v_j| - m_minus)^2,
// averaged over the batch.
Graph::Id margin_loss(Graph& g, Graph::Id norms, const std::vector<int>& class_idx,
                      double m_plus = 0.9, double m_minus = 0.1, double lambda = 0.5);

// Spread loss on activations [N,J]: per sample
// sum_{j != label} max(0, margin - (a_label - a_j))^2, averaged over batch.
Graph::Id spread_loss(Graph& g, Graph::Id activations, const std::vector<int>& class_idx,
                      double margin);

// --- models -----------------------------------------------------------------

class ClassifierModel {
public:
    virtual ~ClassifierModel() = default;

    // Per-class scores [N,C]: softmax probabilities (DCNN), capsule norms
    // (dynamic routing) or capsule activations (EM routing).
    virtual Graph::Id scores(Graph& g, Graph::Id images) const = 0;
    // Training loss; progress in [0,1] drives any loss schedule.
    virtual Graph::Id loss(Graph& g, Graph::Id images, const std::vector<int>& class_idx,
                           double progress) const = 0;

    virtual ParamStore& params() = 0;
    virtual const ParamStore& params() const = 0;
    virtual const ClassMap& classes() const = 0;
    virtual std::string kind() const = 0;
    virtual std::string arch_descriptor() const = 0;
};

struct Prediction {
    int label = -1;       // predicted class label (not index)
    std::vector<double> scores;
};

// Argmax with deterministic tie-break toward the lowest class index.
// Rejects images with pixels outside [0,1].
Prediction classify(const ClassifierModel& model, const Tensor& image);
std::vector<Prediction> classify_batch(const ClassifierModel& model,
                                       const std::vector<Tensor>& images);

struct DcnnConfig {
    int conv1_ch = 16;
    int conv2_ch = 32;
    int dense = 64;
};

// Conv/pool baseline with a softmax head.
class DcnnModel : public ClassifierModel {
public:
    DcnnModel(const DcnnConfig& cfg, ClassMap classes, Rng& rng);

    Graph::Id logits(Graph& g, Graph::Id images) const;
    Graph::Id scores(Graph& g, Graph::Id images) const override;
    Graph::Id loss(Graph& g, Graph::Id images, const std::vector<int>& class_idx,
                   double progress) const override;

    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }
    const ClassMap& classes() const override { return classes_; }
    std::string kind() const override { return "dcnn"; }
    std::string arch_descriptor() const override;
    const DcnnConfig& config() const { return cfg_; }

private:
    DcnnConfig cfg_;
    ClassMap classes_;
    ParamStore params_;
    Conv2d conv1_, conv2_;
    Dense fc1_, fc2_;
};

struct DynCapsConfig {
    int conv_ch = 32;       // 9x9 feature extractor
    int primary_types = 8;  // capsule grids of dim primary_dim at 6x6
    int primary_dim = 8;
    int class_dim = 16;
    int routing_iters = 3;
};

class DynCapsModel : public ClassifierModel {
public:
    DynCapsModel(const DynCapsConfig& cfg, ClassMap classes, Rng& rng);

    // Squashed class capsules [N,J,class_dim].
    Graph::Id class_capsules(Graph& g, Graph::Id images) const;
    Graph::Id scores(Graph& g, Graph::Id images) const override;  // capsule norms
    Graph::Id loss(Graph& g, Graph::Id images, const std::vector<int>& class_idx,
                   double progress) const override;

    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }
    const ClassMap& classes() const override { return classes_; }
    std::string kind() const override { return "dyncaps"; }
    std::string arch_descriptor() const override;
    const DynCapsConfig& config() const { return cfg_; }

private:
    DynCapsConfig cfg_;
    ClassMap classes_;
    ParamStore params_;
    Conv2d conv1_, primary_;
    Parameter* route_w_ = nullptr;  // [I,J,D,E]
    int primary_positions_ = 0;
};

struct EmCapsConfig {
    int conv1_ch = 8;        // 9x9 stride 2
    int conv2_ch = 16;       // 3x3 stride 2
    int primary_types = 8;   // pose 4x4 + activation per type
    int routing_iters = 3;
    double lambda_base = 1.0;
    double variance_floor = 1e-4;
    double spread_margin_lo = 0.2;
    double spread_margin_hi = 0.9;
};

class EmCapsModel : public ClassifierModel {
public:
    EmCapsModel(const EmCapsConfig& cfg, ClassMap classes, Rng& rng);

    // Returns activations [N,J]; fills *result if given.
    Graph::Id activations(Graph& g, Graph::Id images, EmRoutingResult* result = nullptr) const;
    Graph::Id scores(Graph& g, Graph::Id images) const override;
    Graph::Id loss(Graph& g, Graph::Id images, const std::vector<int>& class_idx,
                   double progress) const override;

    double margin_at(double progress) const;

    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }
    const ClassMap& classes() const override { return classes_; }
    std::string kind() const override { return "emcaps"; }
    std::string arch_descriptor() const override;
    const EmCapsConfig& config() const { return cfg_; }

private:
    EmCapsConfig cfg_;
    ClassMap classes_;
    ParamStore params_;
    Conv2d conv1_, conv2_, pose_head_, act_head_;
    Parameter* route_w_ = nullptr;  // [T,J,16]
    Parameter* beta_a_ = nullptr;   // [J]
    Parameter* beta_u_ = nullptr;   // [J]
    int positions_ = 0;
};

}  // namespace rotlab
