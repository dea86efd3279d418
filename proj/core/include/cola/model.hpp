#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "cola/backbone.hpp"
#include "cola/config.hpp"
#include "cola/planner.hpp"
#include "cola/reasoner.hpp"
#include "cola/world.hpp"

namespace cola {

constexpr int kEgoFeatureDim = 6;

template <class T>
struct CycleResult {
    Var<T> ego;  // 1 x D ego embedding
    Var<T> q_v;  // L_v x D understanding output
    RouterOutput<T> router;
    Var<T> q_m;  // C x D rethought meta tokens
    Decision<T> decision;
    PlanOutput<T> plan;
};

template <class T>
struct StepLoss {
    Var<T> total;
    double focal = 0, regression = 0, confidence = 0;
    int winner = 0;
    bool top1_correct = false;
};

// The full latent-reasoning planner: a shared backbone driven through two
// reasoning passes and one parallel decoding pass.
template <class T>
class ColaModel {
   public:
    ColaModel(const RunConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(init_seed);
        BackboneConfig bc;
        bc.dim = cfg.dim;
        bc.layers = cfg.layers;
        bc.heads = cfg.heads;
        bc.ff_dim = cfg.ff_dim;
        bc.max_seq_len = cfg.max_seq_len;
        bc.dropout = cfg.dropout;
        backbone_ = Backbone<T>(rng, bc);

        const int d = cfg.dim;
        prompt_ = Parameter<T>(normal_init<T>(rng, {cfg.prompt_len, d}, 0.02));
        role_emb_ = Parameter<T>(normal_init<T>(rng, {6, d}, 0.02));
        pos_emb_ = Parameter<T>(normal_init<T>(rng, {cfg.max_seq_len, d}, 0.02));
        scale_emb_ = Parameter<T>(normal_init<T>(rng, {std::max(cfg.scales, 4), d}, 0.02));
        temporal_emb_ = Parameter<T>(normal_init<T>(rng, {cfg.horizon, d}, 0.02));
        vision_enc_ = Mlp<T>(rng, cfg.feature_dim, d, d);
        ego_enc_ = Linear<T>(rng, kEgoFeatureDim, d);
        film_router_ = FiLM<T>(rng, d, d);
        film_decide_ = FiLM<T>(rng, d, d);
        router_ = Mlp<T>(rng, d, d / 2, 1);
        bank_ = MetaActionBank<T>(rng, cfg.meta_actions, cfg.horizon, d);
        decide_cross_ = CrossAttendBlock<T>(rng, d, cfg.heads);
        BackboneConfig self_cfg = bc;
        decide_self_ = TransformerBlock<T>(rng, self_cfg);
        decision_head_ = Mlp<T>(rng, d, d / 2, 1);
        wp_head_ = Mlp<T>(rng, d, d / 2, 2);
        conf_head_ = Mlp<T>(rng, d, d / 2, 1);
        plan_ = make_stage_plan(cfg.horizon, cfg.scales, parse_strategy(cfg.strategy));

        backbone_.register_params(params_, "backbone");
        params_.add("prompt", prompt_);
        params_.add("role_emb", role_emb_);
        params_.add("pos_emb", pos_emb_);
        params_.add("scale_emb", scale_emb_);
        params_.add("temporal_emb", temporal_emb_);
        vision_enc_.register_params(params_, "vision_enc");
        ego_enc_.register_params(params_, "ego_enc");
        film_router_.register_params(params_, "film_router");
        film_decide_.register_params(params_, "film_decide");
        router_.register_params(params_, "router");
        bank_.register_params(params_, "bank");
        decide_cross_.register_params(params_, "decide_cross");
        decide_self_.register_params(params_, "decide_self");
        decision_head_.register_params(params_, "decision_head");
        wp_head_.register_params(params_, "wp_head");
        conf_head_.register_params(params_, "conf_head");

        // checkpoint state = trainable parameters + non-trained buffers
        params_.for_each([&](const std::string& nm, Parameter<T>& p) { state_.add(nm, p); });
        bank_.register_buffers(state_, "bank");
    }

    const RunConfig& config() const { return cfg_; }
    ParamSet<T>& params() { return params_; }
    ParamSet<T>& state() { return state_; }
    Backbone<T>& backbone() { return backbone_; }
    const StagePlan& stage_plan() const { return plan_; }
    MetaActionBank<T>& bank() { return bank_; }

    void set_clusters(const ClusterModel& clusters) { bank_.set_centroids(clusters); }
    void set_focal_alpha(std::vector<T> alpha) { focal_alpha_ = std::move(alpha); }
    void set_stage_plan(StagePlan plan) { plan_ = std::move(plan); }

    // ---- embeddings ----

    Var<T> ego_embedding(Tape<T>& tp, const EgoState& ego) {
        auto f = ego_features(ego);
        Tensor<T> row({1, kEgoFeatureDim});
        for (int i = 0; i < kEgoFeatureDim; ++i) row.data[i] = T(f[i]);
        return ego_enc_.apply(tp, tp.constant(std::move(row)));
    }

    // content + role + positional embedding over a concatenated block list
    Var<T> compose_sequence(Tape<T>& tp, const std::vector<Var<T>>& blocks,
                            const std::vector<Role>& block_roles) {
        Var<T> x = concat_rows(tp, blocks);
        std::vector<int> roles;
        for (size_t b = 0; b < blocks.size(); ++b)
            roles.insert(roles.end(), blocks[b].rows(), static_cast<int>(block_roles[b]));
        std::vector<int> slots(x.rows());
        std::iota(slots.begin(), slots.end(), 0);
        x = add(x, gather_rows(tp.param(role_emb_), roles));
        return add(x, gather_rows(tp.param(pos_emb_), slots));
    }

    // ---- reasoner ----

    // Pass 1: full bidirectional attention over [prompt; vision; ego],
    // returning only the vision slice.
    Var<T> understand(Tape<T>& tp, const SceneSample& scene) {
        if (cfg_.vision_tokens < 1) throw contract_error("understand: no vision tokens");
        Var<T> vision = vision_enc_.apply(tp, tp.constant(scene.tokens.template cast<T>()));
        Var<T> ego = ego_embedding(tp, scene.ego);
        Var<T> x = compose_sequence(tp, {tp.param(prompt_), vision, ego},
                                    {Role::prompt, Role::vision, Role::ego});
        Var<T> out = backbone_.forward(tp, x, AttentionMask::full(x.rows()));
        return slice_rows(out, cfg_.prompt_len, cfg_.vision_tokens);
    }

    // Ego-adaptive routing: FiLM-modulate, score, keep top-K. Train mode uses
    // Gumbel noise with a hard forward and a softmax straight-through backward.
    RouterOutput<T> recognize(Tape<T>& tp, Var<T> q_v, Var<T> ego, RunMode mode, double tau,
                              Rng* noise_rng) {
        if (cfg_.top_k > q_v.rows())
            throw config_error("top_k exceeds available vision tokens");
        Var<T> modulated = film_router_.apply(tp, q_v, ego);
        Var<T> scores = router_.apply(tp, modulated);  // L_v x 1

        const int lv = q_v.rows();
        Tensor<T> noise({lv, 1});
        if (mode == RunMode::train && noise_rng)
            for (T& v : noise.data) v = T(noise_rng->gumbel());
        Var<T> noisy = add(scores, tp.constant(noise));

        std::vector<T> noisy_vals(noisy.value().data.begin(), noisy.value().data.end());
        RouterOutput<T> out;
        out.scores = scores.value();
        out.scores.shape = {lv};
        out.indices = topk_indices(noisy_vals, cfg_.top_k);

        Var<T> gathered = gather_rows(modulated, out.indices);
        if (mode == RunMode::train) {
            Var<T> soft = softmax_rows(transpose(scale(noisy, T(1.0 / tau))));  // 1 x L_v
            Var<T> sel = gather_rows(transpose(soft), out.indices);             // K x 1
            Var<T> st = add_const(sub(sel, detach(sel)), T(1));  // exactly 1 forward
            out.pruned = scale_rows(gathered, st);
            out.selection_mask = Tensor<T>({lv});
            for (int i = 0; i < lv; ++i) out.selection_mask.data[i] = soft.value().data[i];
            for (int idx : out.indices) out.selection_mask.data[idx] = T(1);
        } else {
            out.pruned = gathered;
            out.selection_mask = Tensor<T>({lv});
            for (int idx : out.indices) out.selection_mask.data[idx] = T(1);
        }
        return out;
    }

    // Pass 2: full bidirectional attention over [prompt; Q*; ego; meta],
    // returning the meta slice. The raw ego embedding is reused, not the
    // pass-1 output.
    Var<T> rethink(Tape<T>& tp, Var<T> q_star, Var<T> ego, Var<T> meta) {
        if (q_star.rows() < 1) throw contract_error("rethink: empty pruned context");
        Var<T> x = compose_sequence(tp, {tp.param(prompt_), q_star, ego, meta},
                                    {Role::prompt, Role::vision, Role::ego, Role::meta});
        Var<T> out = backbone_.forward(tp, x, AttentionMask::full(x.rows()));
        return slice_rows(out, x.rows() - meta.rows(), meta.rows());
    }

    Decision<T> decide(Tape<T>& tp, Var<T> q_m, Var<T> q_star, Var<T> ego, int n_strategies) {
        Var<T> f = film_decide_.apply(tp, q_m, ego);
        Var<T> crossed = decide_cross_.apply(tp, f, q_star);
        Var<T> refined = decide_self_.apply(tp, crossed, AttentionMask::full(crossed.rows()));
        Var<T> logits_col = decision_head_.apply(tp, refined);  // C x 1
        Decision<T> d;
        d.logits_var = transpose(logits_col);  // 1 x C
        d.logits = d.logits_var.value();
        d.logits.shape = {static_cast<int>(d.logits.numel())};
        std::vector<T> lv(d.logits.data.begin(), d.logits.data.end());
        d.ranking = rank_desc(lv);
        if (n_strategies < 1 || n_strategies > static_cast<int>(lv.size()))
            throw contract_error("strategy count out of range");
        d.strategies.assign(d.ranking.begin(), d.ranking.begin() + n_strategies);
        return d;
    }

    // ---- planner ----

    // F[t] = action + temporal_embedding[t], resampled to each scale's index set.
    std::vector<Var<T>> build_targets(Tape<T>& tp, Var<T> action, const StagePlan& plan) {
        if (action.rows() != 1) throw contract_error("build_targets expects one action row");
        std::vector<Var<T>> out;
        for (const auto& idx : plan.index_sets) {
            Var<T> temporal = gather_rows(tp.param(temporal_emb_), idx);
            Var<T> act = gather_rows(action, std::vector<int>(idx.size(), 0));
            out.push_back(add(act, temporal));
        }
        return out;
    }

    // One backbone pass decoding all candidates under the hybrid mask.
    PlanOutput<T> decode(Tape<T>& tp, Var<T> q_star, const std::vector<int>& strategies,
                         const StagePlan& plan) {
        if (q_star.rows() < 1) throw contract_error("decode: empty pruned context");
        if (strategies.empty()) throw contract_error("decode: no strategies");
        const int k = q_star.rows();
        const SequenceLayout layout = make_plan_layout(k, plan);
        const AttentionMask mask = build_hybrid_mask(layout);
        const int n_targets = plan.total_targets();

        Var<T> entries = bank_.entries(tp);
        Var<T> ctx = add(q_star, gather_rows(tp.param(role_emb_),
                                             std::vector<int>(k, static_cast<int>(Role::context))));
        {
            std::vector<int> slots(k);
            std::iota(slots.begin(), slots.end(), 0);
            ctx = add(ctx, gather_rows(tp.param(pos_emb_), slots));
        }

        std::vector<int> timesteps, scale_ids, slots, target_roles;
        for (int i = k; i < layout.length(); ++i) {
            timesteps.push_back(layout.positions[i].timestep);
            scale_ids.push_back(layout.positions[i].scale - 1);
            slots.push_back(i);
            target_roles.push_back(static_cast<int>(Role::target));
        }
        Var<T> t_emb = gather_rows(tp.param(temporal_emb_), timesteps);
        Var<T> s_emb = gather_rows(tp.param(scale_emb_), scale_ids);
        Var<T> r_emb = gather_rows(tp.param(role_emb_), target_roles);
        Var<T> p_emb = gather_rows(tp.param(pos_emb_), slots);
        Var<T> static_emb = add(add(t_emb, s_emb), add(r_emb, p_emb));

        std::vector<Var<T>> xs;
        for (int id : strategies) {
            Var<T> action_rows = gather_rows(entries, std::vector<int>(n_targets, id));
            xs.push_back(concat_rows(tp, {ctx, add(action_rows, static_emb)}));
        }
        std::vector<Var<T>> outs = backbone_.forward_batch(tp, xs, mask);

        const auto& finest = plan.index_sets.back();
        const int finest_n = static_cast<int>(finest.size());
        const int finest_off = n_targets - finest_n;

        PlanOutput<T> plan_out;
        std::vector<Var<T>> conf_scalars;
        for (size_t c = 0; c < outs.size(); ++c) {
            Var<T> targets_out = slice_rows(outs[c], k, n_targets);
            PlanCandidate<T> cand;
            cand.maneuver_id = strategies[c];
            cand.maneuver_name = bank_.names.at(strategies[c]);
            cand.waypoints = wp_head_.apply(tp, targets_out);
            int off = 0;
            for (const auto& idx : plan.index_sets) {
                Trajectory traj;
                for (size_t i = 0; i < idx.size(); ++i)
                    traj.push_back({static_cast<double>(cand.waypoints.value().at(off + i, 0)),
                                    static_cast<double>(cand.waypoints.value().at(off + i, 1))});
                cand.per_scale.push_back(std::move(traj));
                off += static_cast<int>(idx.size());
            }
            conf_scalars.push_back(
                conf_head_.apply(tp, mean_rows(slice_rows(targets_out, finest_off, finest_n))));
            plan_out.candidates.push_back(std::move(cand));
        }
        plan_out.conf_logits = concat_cols(tp, conf_scalars);  // 1 x N

        // softmax confidences; best = argmax, ties toward the lower maneuver id
        std::vector<double> logits;
        for (size_t i = 0; i < plan_out.candidates.size(); ++i)
            logits.push_back(static_cast<double>(plan_out.conf_logits.value().data[i]));
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0;
        for (double l : logits) z += std::exp(l - mx);
        int best = 0;
        for (size_t i = 0; i < logits.size(); ++i) {
            plan_out.candidates[i].confidence = std::exp(logits[i] - mx) / z;
            const auto& bi = plan_out.candidates[best];
            const auto& ci = plan_out.candidates[i];
            if (ci.confidence > bi.confidence ||
                (ci.confidence == bi.confidence && ci.maneuver_id < bi.maneuver_id))
                best = static_cast<int>(i);
        }
        plan_out.best = best;
        return plan_out;
    }

    // ---- full cycle ----

    CycleResult<T> run_cycle(Tape<T>& tp, const SceneSample& scene, RunMode mode, double tau,
                             Rng* noise_rng, int n_candidates) {
        CycleResult<T> r;
        r.ego = ego_embedding(tp, scene.ego);
        r.q_v = understand(tp, scene);
        r.router = recognize(tp, r.q_v, r.ego, mode, tau, noise_rng);
        Var<T> meta = bank_.entries(tp);
        r.q_m = rethink(tp, r.router.pruned, r.ego, meta);
        r.decision = decide(tp, r.q_m, r.router.pruned, r.ego, n_candidates);
        r.plan = decode(tp, r.router.pruned, r.decision.strategies, plan_);
        return r;
    }

    // Total training loss for one scene: focal + WTA regression + confidence.
    StepLoss<T> step_loss(Tape<T>& tp, const SceneSample& scene, double tau, Rng* noise_rng) {
        if (scene.label < 0 || scene.label >= cfg_.meta_actions)
            throw contract_error("scene has no valid maneuver label");
        CycleResult<T> r = run_cycle(tp, scene, RunMode::train, tau, noise_rng, cfg_.candidates);
        Var<T> focal =
            focal_loss(r.decision.logits_var, scene.label, T(cfg_.focal_gamma), focal_alpha_);
        WtaLoss<T> wta = wta_loss(tp, r.plan, plan_, scene.gt, T(cfg_.huber_delta));
        StepLoss<T> loss;
        loss.total = add(add(scale(focal, T(cfg_.w_focal)), scale(wta.regression, T(cfg_.w_reg))),
                         scale(wta.confidence, T(cfg_.w_conf)));
        loss.focal = static_cast<double>(focal.value().data[0]);
        loss.regression = static_cast<double>(wta.regression.value().data[0]);
        loss.confidence = static_cast<double>(wta.confidence.value().data[0]);
        loss.winner = wta.winner;
        loss.top1_correct = r.decision.top1() == scene.label;
        return loss;
    }

    // Inference: the 3-pass cycle (understand, rethink, decode) without taping.
    PlanOutput<T> plan(const SceneSample& scene, int n_candidates) {
        Tape<T> tp;
        tp.grad_enabled = false;
        return run_cycle(tp, scene, RunMode::infer, cfg_.tau_end, nullptr, n_candidates).plan;
    }

    // Autoregressive reference for benchmarking: the same two reasoning
    // passes, then the finest horizon decoded one timestep per backbone pass
    // (T extra passes, full recompute each step; this engine has no KV cache).
    Trajectory plan_autoregressive(const SceneSample& scene) {
        Tape<T> tp;
        tp.grad_enabled = false;
        Var<T> ego = ego_embedding(tp, scene.ego);
        Var<T> q_v = understand(tp, scene);
        RouterOutput<T> router = recognize(tp, q_v, ego, RunMode::infer, cfg_.tau_end, nullptr);
        Var<T> meta = bank_.entries(tp);
        Var<T> q_m = rethink(tp, router.pruned, ego, meta);
        Decision<T> d = decide(tp, q_m, router.pruned, ego, 1);
        return decode_autoregressive(tp, router.pruned, d.top1());
    }

    // The decoding stage of the autoregressive reference, exposed separately so
    // latency comparisons can time decoding in isolation from the reasoning
    // passes shared by both decoders.
    Trajectory decode_autoregressive(Tape<T>& tp, Var<T> q_star, int id) {
        const int k = q_star.rows();

        Trajectory out;
        for (int t = 0; t < cfg_.horizon; ++t) {
            Var<T> entries = bank_.entries(tp);
            std::vector<int> steps(t + 1);
            std::iota(steps.begin(), steps.end(), 0);
            Var<T> ctx = add(q_star,
                             gather_rows(tp.param(role_emb_),
                                         std::vector<int>(k, static_cast<int>(Role::context))));
            std::vector<int> ctx_slots(k);
            std::iota(ctx_slots.begin(), ctx_slots.end(), 0);
            ctx = add(ctx, gather_rows(tp.param(pos_emb_), ctx_slots));

            Var<T> action_rows = gather_rows(entries, std::vector<int>(t + 1, id));
            Var<T> t_emb = gather_rows(tp.param(temporal_emb_), steps);
            std::vector<int> slots(t + 1), roles(t + 1, static_cast<int>(Role::target)),
                scales(t + 1, 0);
            std::iota(slots.begin(), slots.end(), k);
            Var<T> emb = add(add(t_emb, gather_rows(tp.param(scale_emb_), scales)),
                             add(gather_rows(tp.param(role_emb_), roles),
                                 gather_rows(tp.param(pos_emb_), slots)));
            Var<T> x = concat_rows(tp, {ctx, add(action_rows, emb)});

            AttentionMask mask(x.rows(), x.rows());
            for (int i = 0; i < x.rows(); ++i)
                for (int j = 0; j < x.rows(); ++j)
                    if (j < k || (i >= k && j <= i)) mask.allow(i, j);
            Var<T> y = backbone_.forward(tp, x, mask);
            Var<T> wp = wp_head_.apply(tp, slice_rows(y, k + t, 1));
            out.push_back({static_cast<double>(wp.value().data[0]),
                           static_cast<double>(wp.value().data[1])});
        }
        return out;
    }

   private:
    RunConfig cfg_;
    Backbone<T> backbone_;
    Parameter<T> prompt_, role_emb_, pos_emb_, scale_emb_, temporal_emb_;
    Mlp<T> vision_enc_;
    Linear<T> ego_enc_;
    FiLM<T> film_router_, film_decide_;
    Mlp<T> router_;
    MetaActionBank<T> bank_;
    CrossAttendBlock<T> decide_cross_;
    TransformerBlock<T> decide_self_;
    Mlp<T> decision_head_, wp_head_, conf_head_;
    StagePlan plan_;
    ParamSet<T> params_;
    ParamSet<T> state_;
    std::vector<T> focal_alpha_;
};

}  // namespace cola
