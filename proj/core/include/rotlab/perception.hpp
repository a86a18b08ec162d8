#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rotlab/errors.hpp"
#include "rotlab/tensor.hpp"

namespace rotlab {

// Finite latent-state machinery for the recursive Bayesian perception update
//   P(z_t | x_t) ∝ o(x_t | z_t) · Σ_{z'} μ(z_t | z', a_t) · P(z' | x_{t-1})
// with discrete states, actions and observations.

struct StateSpace {
    std::vector<std::string> names;

    int count() const { return static_cast<int>(names.size()); }
    int index_of(const std::string& name) const;
};

// kernel[a][z][z']: probability of moving to z' from z under action a.
class TransitionModel {
public:
    TransitionModel(int n_actions, int n_states);

    void set_row(int action, int from, const std::vector<double>& probs);
    double prob(int action, int from, int to) const;
    int states() const { return n_states_; }
    int actions() const { return n_actions_; }

    // every row must sum to 1 within 1e-12 with nonnegative entries
    void validate() const;

private:
    int n_actions_, n_states_;
    std::vector<double> kernel_;  // [a][from][to]
};

// Likelihood o(x|z) over a finite observation alphabet.
class ObservationModel {
public:
    ObservationModel(int n_states, int n_obs);

    void set_row(int state, const std::vector<double>& probs);  // over observations
    double likelihood(int obs, int state) const;
    int states() const { return n_states_; }
    int observations() const { return n_obs_; }

    // nonnegative; per-state rows sum to 1 within 1e-9
    void validate() const;

private:
    int n_states_, n_obs_;
    std::vector<double> table_;  // [state][obs]
};

struct Belief {
    std::vector<double> p;

    static Belief uniform(int n);
    int states() const { return static_cast<int>(p.size()); }
    // nonnegative, sums to 1 within 1e-12
    void validate() const;
    int argmax() const;
};

// One predict+update step. Throws ImpossibleEvidenceError (leaving prev
// usable) when the observation has zero likelihood under every predicted
// state.
Belief belief_update(const Belief& prev, int action, int obs, const TransitionModel& mu,
                     const ObservationModel& o);

// Comparison mode for the point-prediction simplification
// P(z_t) = μ(z_t | z*_{t-1}, a_t) with z*_{t-1} the previous MAP state.
Belief belief_update_map_approx(const Belief& prev, int action, int obs, const TransitionModel& mu,
                                const ObservationModel& o);

// --- mental rotation ---------------------------------------------------------

// Frozen trained encoder/decoder pair viewed as plain functions.
struct GenerativePair {
    std::function<std::vector<double>(const Tensor& image)> encode;
    std::function<Tensor(const std::vector<double>& z, double theta_deg)> decode;
};

struct MentalRotationResult {
    double theta = 0.0;           // degrees
    std::vector<double> z;
    double residual = 0.0;        // interior MSE at (theta, z)
    std::vector<double> residual_trace;  // per accepted update, non-increasing
};

// Coordinate ascent between "de-rotate and encode" (hypothesis proposal) and
// "pick the grid angle whose rendering matches best" (generative scoring),
// started from the best full-grid evaluation. The proposal step only replaces
// z when it does not worsen the residual, so the trace is non-increasing.
// Ties break toward the smallest |theta|.
MentalRotationResult mental_rotation_em(const Tensor& image, const GenerativePair& pair,
                                        const std::vector<double>& angle_grid_deg, int iterations,
                                        int interior_border = 4);

}  // namespace rotlab
