#pragma once

#include <string>
#include <vector>

#include "cola/backbone.hpp"
#include "cola/layout.hpp"
#include "cola/world.hpp"

namespace cola {

// Learnable action embeddings, one per maneuver class. Entries are a trainable
// linear map of the cluster-centroid trajectories used at initialization.
template <class T>
struct MetaActionBank {
    std::vector<std::string> names;
    // C x 2T buffer, never optimized; lives in a Parameter so checkpoints
    // carry it (eval has no cluster sidecar).
    Parameter<T> centroids;
    Linear<T> proj;  // 2T -> D, trainable

    MetaActionBank() = default;
    MetaActionBank(Rng& rng, int count, int horizon, int dim)
        : names(count, "cluster"), centroids(Tensor<T>::zeros({count, 2 * horizon})),
          proj(rng, 2 * horizon, dim) {}

    int count() const { return centroids.value.rows(); }

    void set_centroids(const ClusterModel& clusters) {
        if (clusters.count() != count())
            throw contract_error("cluster count " + std::to_string(clusters.count()) +
                                 " does not match bank size " + std::to_string(count()));
        centroids.value = clusters.centroids.template cast<T>();
        names = clusters.names;
    }

    // C x D action embeddings
    Var<T> entries(Tape<T>& tp) { return proj.apply(tp, tp.constant(centroids.value)); }

    void register_params(ParamSet<T>& ps, const std::string& prefix) {
        proj.register_params(ps, prefix + ".proj");
    }

    void register_buffers(ParamSet<T>& ps, const std::string& prefix) {
        ps.add(prefix + ".centroids", centroids);
    }
};

template <class T>
struct PlanCandidate {
    int maneuver_id = -1;
    std::string maneuver_name;
    double confidence = 0;                 // softmax over candidates
    std::vector<Trajectory> per_scale;     // waypoints at each scale's index set
    Var<T> waypoints;                      // total_targets x 2, tape-bound

    const Trajectory& finest() const { return per_scale.back(); }
};

template <class T>
struct PlanOutput {
    std::vector<PlanCandidate<T>> candidates;
    int best = 0;        // argmax confidence, ties -> lower maneuver id
    Var<T> conf_logits;  // 1 x N

    const PlanCandidate<T>& best_candidate() const { return candidates.at(best); }
};

template <class T>
struct WtaLoss {
    int winner = 0;
    Var<T> regression;  // smooth-L1 summed over the winner's scales
    Var<T> confidence;  // cross-entropy toward one-hot(winner)
};

// Winner selection plus the two loss terms. Only the winner's waypoints carry
// regression gradient; every candidate's confidence logit is supervised.
template <class T>
WtaLoss<T> wta_loss(Tape<T>& tp, const PlanOutput<T>& out, const StagePlan& plan,
                    const Trajectory& gt, T huber_delta = T(1)) {
    if (out.candidates.empty()) throw contract_error("wta_loss: no candidates");
    if (static_cast<int>(gt.size()) != plan.horizon)
        throw contract_error("ground truth length " + std::to_string(gt.size()) +
                             " does not match horizon " + std::to_string(plan.horizon));
    int winner = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t n = 0; n < out.candidates.size(); ++n) {
        const Trajectory& pred = out.candidates[n].finest();
        double acc = 0;
        for (int t = 0; t < plan.horizon; ++t)
            acc += std::hypot(pred[t][0] - gt[t][0], pred[t][1] - gt[t][1]);
        acc /= plan.horizon;
        if (acc < best_d) {
            best_d = acc;
            winner = static_cast<int>(n);
        }
    }

    const PlanCandidate<T>& w = out.candidates[winner];
    WtaLoss<T> loss;
    loss.winner = winner;
    int offset = 0;
    Var<T> reg;
    for (int s = 0; s < plan.scales(); ++s) {
        const auto& idx = plan.index_sets[s];
        const int n = static_cast<int>(idx.size());
        Tensor<T> target({n, 2});
        for (int i = 0; i < n; ++i) {
            target.at(i, 0) = T(gt[idx[i]][0]);
            target.at(i, 1) = T(gt[idx[i]][1]);
        }
        Var<T> term =
            smooth_l1_mean(slice_rows(w.waypoints, offset, n), target, huber_delta);
        reg = s == 0 ? term : add(reg, term);
        offset += n;
    }
    loss.regression = reg;
    loss.confidence = scale(pick(log_softmax_rows(out.conf_logits), winner), T(-1));
    return loss;
}

}  // namespace cola
