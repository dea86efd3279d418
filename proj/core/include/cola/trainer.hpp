#pragma once

#include <fstream>
#include <functional>
#include <iostream>
#include <vector>

#include "cola/model.hpp"
#include "cola/optim.hpp"
#include "cola/sim.hpp"

namespace cola {

struct TrainStepLog {
    int step = 0;
    double loss = 0, focal = 0, regression = 0, confidence = 0;
    double lr = 0, tau = 0;
    double acc = 0;  // running top-1 accuracy over the logging window
};

struct TrainResult {
    std::vector<TrainStepLog> log;
    double final_loss = 0;
};

inline void write_train_csv(const std::vector<TrainStepLog>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw parse_error("cannot open for writing: " + path);
    out << "step,loss,focal,regression,confidence,lr,tau,acc\n";
    for (const auto& r : log)
        out << r.step << "," << r.loss << "," << r.focal << "," << r.regression << ","
            << r.confidence << "," << r.lr << "," << r.tau << "," << r.acc << "\n";
}

// Inverse-frequency class weights for the focal loss, normalized to mean 1.
template <class T>
std::vector<T> class_weights(const std::vector<SceneSample>& samples, int classes) {
    std::vector<double> counts(classes, 0);
    for (const auto& s : samples)
        if (s.label >= 0 && s.label < classes) counts[s.label] += 1;
    std::vector<double> inv(classes);
    double sum = 0;
    for (int c = 0; c < classes; ++c) {
        inv[c] = 1.0 / std::max(1.0, counts[c]);
        sum += inv[c];
    }
    std::vector<T> out(classes);
    for (int c = 0; c < classes; ++c) out[c] = T(inv[c] * classes / sum);
    return out;
}

// Single-threaded loop: batches accumulate on one tape, AdamW with cosine
// annealing, Gumbel temperature annealed linearly from tau_start to tau_end.
template <class T>
TrainResult train_model(ColaModel<T>& model, const std::vector<SceneSample>& train_set,
                        uint64_t seed, bool verbose = false,
                        const std::function<void(const TrainStepLog&)>& on_log = {}) {
    const RunConfig& cfg = model.config();
    if (train_set.empty()) throw contract_error("empty training set");
    model.set_focal_alpha(class_weights<T>(train_set, cfg.meta_actions));

    OptimConfig<T> oc;
    oc.base_lr = T(cfg.lr);
    oc.weight_decay = T(cfg.weight_decay);
    oc.lr_floor = T(cfg.lr_floor);
    oc.total_steps = cfg.train_steps;
    AdamW<T> opt(oc);

    Rng order_rng(Rng(seed).fork(11));
    Rng noise_rng(Rng(seed).fork(12));

    TrainResult result;
    int window_hits = 0, window_n = 0;
    double window_loss = 0, window_f = 0, window_r = 0, window_c = 0;
    for (int step = 0; step < cfg.train_steps; ++step) {
        const double frac = cfg.train_steps > 1 ? double(step) / (cfg.train_steps - 1) : 1.0;
        const double tau = cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac;

        Tape<T> tp;
        Var<T> total;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& scene = train_set[order_rng.uniform_index(train_set.size())];
            StepLoss<T> l = model.step_loss(tp, scene, tau, &noise_rng);
            total = b == 0 ? l.total : add(total, l.total);
            window_hits += l.top1_correct ? 1 : 0;
            window_n += 1;
            window_f += l.focal;
            window_r += l.regression;
            window_c += l.confidence;
        }
        total = scale(total, T(1.0 / cfg.batch_size));
        window_loss += static_cast<double>(total.value().data[0]);

        model.params().zero_grad();
        tp.backward(total);
        opt.step(model.params());
        result.final_loss = static_cast<double>(total.value().data[0]);

        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.train_steps) {
            TrainStepLog r;
            r.step = step + 1;
            const int steps_in = (step + 1) % cfg.log_every;
            const int denom = steps_in == 0 ? cfg.log_every : steps_in;
            r.loss = window_loss / denom;
            r.focal = window_f / window_n;
            r.regression = window_r / window_n;
            r.confidence = window_c / window_n;
            r.lr = static_cast<double>(opt.lr_at(opt.step_count() - 1));
            r.tau = tau;
            r.acc = window_n ? double(window_hits) / window_n : 0;
            result.log.push_back(r);
            if (on_log) on_log(r);
            if (verbose)
                std::cout << "step " << r.step << " loss " << r.loss << " acc " << r.acc
                          << " lr " << r.lr << "\n";
            window_hits = window_n = 0;
            window_loss = window_f = window_r = window_c = 0;
        }
    }
    return result;
}

// Top-1 maneuver accuracy on held-out scenes (inference mode, no tape grads).
template <class T>
double eval_accuracy(ColaModel<T>& model, const std::vector<SceneSample>& samples) {
    if (samples.empty()) throw contract_error("empty evaluation set");
    int hits = 0;
    for (const auto& s : samples) {
        Tape<T> tp;
        tp.grad_enabled = false;
        Var<T> ego = model.ego_embedding(tp, s.ego);
        Var<T> q_v = model.understand(tp, s);
        RouterOutput<T> router =
            model.recognize(tp, q_v, ego, RunMode::infer, model.config().tau_end, nullptr);
        Var<T> q_m = model.rethink(tp, router.pruned, ego, model.bank().entries(tp));
        Decision<T> d = model.decide(tp, q_m, router.pruned, ego, 1);
        if (d.top1() == s.label) ++hits;
    }
    return double(hits) / samples.size();
}

// Best-candidate finest-scale trajectories for open-loop evaluation.
template <class T>
std::vector<Trajectory> predict_trajectories(ColaModel<T>& model,
                                             const std::vector<SceneSample>& samples,
                                             int n_candidates) {
    std::vector<Trajectory> out;
    for (const auto& s : samples) {
        PlanOutput<T> plan = model.plan(s, n_candidates);
        out.push_back(plan.candidates[plan.best].finest());
    }
    return out;
}

}  // namespace cola
