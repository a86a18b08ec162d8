#include "rotlab/perception.hpp"

#include <algorithm>
#include <cmath>

#include "rotlab/transforms.hpp"

namespace rotlab {

int StateSpace::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<int>(i);
    }
    throw Error("unknown state '" + name + "'");
}

TransitionModel::TransitionModel(int n_actions, int n_states)
    : n_actions_(n_actions),
      n_states_(n_states),
      kernel_(static_cast<std::size_t>(n_actions) * n_states * n_states, 0.0) {
    if (n_actions < 1 || n_states < 1) throw Error("TransitionModel: empty action or state set");
}

void TransitionModel::set_row(int action, int from, const std::vector<double>& probs) {
    if (static_cast<int>(probs.size()) != n_states_) {
        throw ShapeError("transition row length " + std::to_string(probs.size()) + " vs " +
                         std::to_string(n_states_) + " states");
    }
    std::copy(probs.begin(), probs.end(),
              kernel_.begin() + (static_cast<std::size_t>(action) * n_states_ + from) * n_states_);
}

double TransitionModel::prob(int action, int from, int to) const {
    return kernel_[(static_cast<std::size_t>(action) * n_states_ + from) * n_states_ + to];
}

void TransitionModel::validate() const {
    for (int a = 0; a < n_actions_; ++a) {
        for (int z = 0; z < n_states_; ++z) {
            double s = 0.0;
            for (int t = 0; t < n_states_; ++t) {
                const double v = prob(a, z, t);
                if (v < 0.0) throw Error("transition kernel has a negative entry");
                s += v;
            }
            if (std::fabs(s - 1.0) > 1e-12) {
                throw Error("transition row (action " + std::to_string(a) + ", state " +
                            std::to_string(z) + ") sums to " + std::to_string(s));
            }
        }
    }
}

ObservationModel::ObservationModel(int n_states, int n_obs)
    : n_states_(n_states), n_obs_(n_obs),
      table_(static_cast<std::size_t>(n_states) * n_obs, 0.0) {
    if (n_states < 1 || n_obs < 1) throw Error("ObservationModel: empty state or observation set");
}

void ObservationModel::set_row(int state, const std::vector<double>& probs) {
    if (static_cast<int>(probs.size()) != n_obs_) {
        throw ShapeError("observation row length " + std::to_string(probs.size()) + " vs " +
                         std::to_string(n_obs_) + " observations");
    }
    std::copy(probs.begin(), probs.end(),
              table_.begin() + static_cast<std::size_t>(state) * n_obs_);
}

double ObservationModel::likelihood(int obs, int state) const {
    return table_[static_cast<std::size_t>(state) * n_obs_ + obs];
}

void ObservationModel::validate() const {
    for (int z = 0; z < n_states_; ++z) {
        double s = 0.0;
        for (int x = 0; x < n_obs_; ++x) {
            const double v = likelihood(x, z);
            if (v < 0.0) throw Error("observation table has a negative entry");
            s += v;
        }
        if (std::fabs(s - 1.0) > 1e-9) {
            throw Error("observation row for state " + std::to_string(z) + " sums to " +
                        std::to_string(s));
        }
    }
}

Belief Belief::uniform(int n) {
    Belief b;
    b.p.assign(static_cast<std::size_t>(n), 1.0 / n);
    return b;
}

void Belief::validate() const {
    double s = 0.0;
    for (double v : p) {
        if (v < 0.0) throw Error("belief has a negative mass");
        s += v;
    }
    if (std::fabs(s - 1.0) > 1e-12) throw Error("belief sums to " + std::to_string(s));
}

int Belief::argmax() const {
    int best = 0;
    for (int i = 1; i < states(); ++i) {
        if (p[static_cast<std::size_t>(i)] > p[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

namespace {

Belief bayes_update_from_predict(const std::vector<double>& predict, int obs,
                                 const ObservationModel& o) {
    const int n = static_cast<int>(predict.size());
    Belief post;
    post.p.resize(static_cast<std::size_t>(n));
    double norm = 0.0;
    for (int z = 0; z < n; ++z) {
        post.p[static_cast<std::size_t>(z)] = o.likelihood(obs, z) * predict[static_cast<std::size_t>(z)];
        norm += post.p[static_cast<std::size_t>(z)];
    }
    if (norm == 0.0) {
        throw ImpossibleEvidenceError(
            "observation " + std::to_string(obs) + " has zero likelihood under every predicted state");
    }
    for (double& v : post.p) v /= norm;
    return post;
}

}  // namespace

Belief belief_update(const Belief& prev, int action, int obs, const TransitionModel& mu,
                     const ObservationModel& o) {
    if (prev.states() != mu.states() || mu.states() != o.states()) {
        throw ShapeError("belief_update: inconsistent state counts");
    }
    const int n = mu.states();
    std::vector<double> predict(static_cast<std::size_t>(n), 0.0);
    for (int zp = 0; zp < n; ++zp) {
        const double mass = prev.p[static_cast<std::size_t>(zp)];
        if (mass == 0.0) continue;
        for (int z = 0; z < n; ++z) {
            predict[static_cast<std::size_t>(z)] += mu.prob(action, zp, z) * mass;
        }
    }
    return bayes_update_from_predict(predict, obs, o);
}

Belief belief_update_map_approx(const Belief& prev, int action, int obs, const TransitionModel& mu,
                                const ObservationModel& o) {
    if (prev.states() != mu.states() || mu.states() != o.states()) {
        throw ShapeError("belief_update: inconsistent state counts");
    }
    const int zstar = prev.argmax();
    const int n = mu.states();
    std::vector<double> predict(static_cast<std::size_t>(n));
    for (int z = 0; z < n; ++z) predict[static_cast<std::size_t>(z)] = mu.prob(action, zstar, z);
    return bayes_update_from_predict(predict, obs, o);
}

// --- mental rotation ---------------------------------------------------------

MentalRotationResult mental_rotation_em(const Tensor& image, const GenerativePair& pair,
                                        const std::vector<double>& angle_grid_deg, int iterations,
                                        int interior_border) {
    if (angle_grid_deg.empty()) throw Error("mental_rotation_em: empty angle grid");
    if (iterations < 0) throw Error("mental_rotation_em: negative iteration count");

    auto residual_at = [&](const std::vector<double>& z, double theta) {
        return interior_mse(pair.decode(z, theta), image, interior_border);
    };
    auto propose_z = [&](double theta) { return pair.encode(rotate_image(image, -theta, 0.0)); };
    // smaller wrapped |theta| wins ties; a strict improvement is required to
    // move away
    auto angle_abs = [](double theta) { return std::fabs(wrap_angle_deg(theta)); };
    auto better = [](double cand_res, double cand_abs, double best_res, double best_abs) {
        if (cand_res < best_res - 1e-15) return true;
        if (cand_res > best_res + 1e-15) return false;
        return cand_abs < best_abs;
    };

    MentalRotationResult best;
    bool first = true;
    for (double theta : angle_grid_deg) {
        const std::vector<double> z = propose_z(theta);
        const double res = residual_at(z, theta);
        if (first || better(res, angle_abs(theta), best.residual, angle_abs(best.theta))) {
            best.theta = theta;
            best.z = z;
            best.residual = res;
            first = false;
        }
    }
    best.residual_trace.push_back(best.residual);

    for (int it = 0; it < iterations; ++it) {
        // proposal step: re-encode under the current angle, keep only if it
        // does not worsen the fit
        const std::vector<double> z_cand = propose_z(best.theta);
        const double res_cand = residual_at(z_cand, best.theta);
        if (res_cand <= best.residual) {
            best.z = z_cand;
            best.residual = res_cand;
        }
        // scoring step: best grid angle for the current code
        double new_theta = best.theta;
        double new_res = best.residual;
        for (double theta : angle_grid_deg) {
            const double res = residual_at(best.z, theta);
            if (better(res, angle_abs(theta), new_res, angle_abs(new_theta))) {
                new_theta = theta;
                new_res = res;
            }
        }
        best.theta = new_theta;
        best.residual = new_res;
        best.residual_trace.push_back(best.residual);
    }
    return best;
}

}  // namespace rotlab
