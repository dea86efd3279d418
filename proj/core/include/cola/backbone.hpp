#pragma once

#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "cola/autograd.hpp"
#include "cola/layout.hpp"
#include "cola/optim.hpp"

namespace cola {

struct BackboneConfig {
    int dim = 64;
    int layers = 4;
    int heads = 4;
    int ff_dim = 256;
    int max_seq_len = 256;
    double dropout = 0.0;

    void validate() const {
        if (dim % heads != 0) throw config_error("dim must be divisible by heads");
        if (layers < 1 || heads < 1 || ff_dim < 1) throw config_error("bad backbone config");
    }
};

template <class T>
struct Linear {
    Parameter<T> weight;  // in x out
    Parameter<T> bias;    // out

    Linear() = default;
    Linear(Rng& rng, int in, int out, bool zero_init = false)
        : weight(zero_init ? Tensor<T>::zeros({in, out}) : xavier_init<T>(rng, in, out)),
          bias(Tensor<T>::zeros({out})) {}

    Var<T> apply(Tape<T>& tp, Var<T> x) {
        return add_row(matmul(x, tp.param(weight)), tp.param(bias));
    }

    void register_params(ParamSet<T>& ps, const std::string& prefix) {
        ps.add(prefix + ".w", weight);
        ps.add(prefix + ".b", bias);
    }
};

template <class T>
struct Mlp {
    Linear<T> fc1, fc2;

    Mlp() = default;
    Mlp(Rng& rng, int in, int hidden, int out)
        : fc1(rng, in, hidden), fc2(rng, hidden, out) {}

    Var<T> apply(Tape<T>& tp, Var<T> x) { return fc2.apply(tp, gelu(fc1.apply(tp, x))); }

    void register_params(ParamSet<T>& ps, const std::string& prefix) {
        fc1.register_params(ps, prefix + ".fc1");
        fc2.register_params(ps, prefix + ".fc2");
    }
};

// (1 + gamma(ego)) * q + beta(ego); the two projections share nothing and are
// zero-initialized so the initial modulation is the identity.
template <class T>
struct FiLM {
    Linear<T> gamma_proj, beta_proj;

    FiLM() = default;
    FiLM(Rng& rng, int cond_dim, int dim)
        : gamma_proj(rng, cond_dim, dim, /*zero_init=*/true),
          beta_proj(rng, cond_dim, dim, /*zero_init=*/true) {}

    Var<T> apply(Tape<T>& tp, Var<T> q, Var<T> ego) {
        Var<T> gamma = gamma_proj.apply(tp, ego);  // 1 x D
        Var<T> beta = beta_proj.apply(tp, ego);
        return add_row(mul_row(q, add_const(gamma, T(1))), beta);
    }

    void register_params(ParamSet<T>& ps, const std::string& prefix) {
        gamma_proj.register_params(ps, prefix + ".gamma");
        beta_proj.register_params(ps, prefix + ".beta");
    }
};

template <class T>
struct MultiHeadAttention {
    int heads = 1;
    Linear<T> wq, wk, wv, wo;

    MultiHeadAttention() = default;
    MultiHeadAttention(Rng& rng, int dim, int n_heads)
        : heads(n_heads), wq(rng, dim, dim), wk(rng, dim, dim), wv(rng, dim, dim),
          wo(rng, dim, dim) {}

    // queries may differ from keys (cross attention); mask is n_q x n_k
    Var<T> apply(Tape<T>& tp, Var<T> q_in, Var<T> kv_in, const AttentionMask& mask) {
        const int d = q_in.cols();
        const int dh = d / heads;
        Var<T> q = wq.apply(tp, q_in);
        Var<T> k = wk.apply(tp, kv_in);
        Var<T> v = wv.apply(tp, kv_in);
        const T scale = T(1) / std::sqrt(T(dh));
        std::vector<Var<T>> head_outs;
        head_outs.reserve(heads);
        for (int h = 0; h < heads; ++h) {
            Var<T> qh = slice_cols(q, h * dh, dh);
            Var<T> kh = slice_cols(k, h * dh, dh);
            Var<T> vh = slice_cols(v, h * dh, dh);
            head_outs.push_back(masked_attention(qh, kh, vh, mask.allowed, scale));
        }
        return wo.apply(tp, concat_cols(tp, head_outs));
    }

    void register_params(ParamSet<T>& ps, const std::string& prefix) {
        wq.register_params(ps, prefix + ".wq");
        wk.register_params(ps, prefix + ".wk");
        wv.register_params(ps, prefix + ".wv");
        wo.register_params(ps, prefix + ".wo");
    }
};

template <class T>
struct LayerNorm {
    Parameter<T> gain, bias;

    LayerNorm() = default;
    explicit LayerNorm(int dim) : gain(Tensor<T>::full({dim}, T(1))), bias(Tensor<T>::zeros({dim})) {}

    Var<T> apply(Tape<T>& tp, Var<T> x) {
        return layer_norm_rows(x, tp.param(gain), tp.param(bias));
    }

    void register_params(ParamSet<T>& ps, const std::string& prefix) {
        ps.add(prefix + ".g", gain);
        ps.add(prefix + ".b", bias);
    }
};

// Pre-norm residual block.
template <class T>
struct TransformerBlock {
    LayerNorm<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    Mlp<T> mlp;

    TransformerBlock() = default;
    TransformerBlock(Rng& rng, const BackboneConfig& cfg)
        : ln1(cfg.dim), ln2(cfg.dim), attn(rng, cfg.dim, cfg.heads),
          mlp(rng, cfg.dim, cfg.ff_dim, cfg.dim) {}

    Var<T> apply(Tape<T>& tp, Var<T> x, const AttentionMask& mask) {
        Var<T> h = ln1.apply(tp, x);
        x = add(x, attn.apply(tp, h, h, mask));
        return add(x, mlp.apply(tp, ln2.apply(tp, x)));
    }

    void register_params(ParamSet<T>& ps, const std::string& prefix) {
        ln1.register_params(ps, prefix + ".ln1");
        ln2.register_params(ps, prefix + ".ln2");
        attn.register_params(ps, prefix + ".attn");
        mlp.register_params(ps, prefix + ".mlp");
    }
};

// Shared transformer stack. The reasoner's two passes and the planner pass all
// run through the same instance, so the parameter count is independent of how
// many passes a cycle makes. A counter tracks forward invocations.
template <class T>
class Backbone {
   public:
    Backbone() = default;
    Backbone(Backbone&& o) noexcept
        : cfg_(std::move(o.cfg_)),
          blocks_(std::move(o.blocks_)),
          final_ln_(std::move(o.final_ln_)),
          passes_(o.passes_.load()) {}
    Backbone& operator=(Backbone&& o) noexcept {
        cfg_ = std::move(o.cfg_);
        blocks_ = std::move(o.blocks_);
        final_ln_ = std::move(o.final_ln_);
        passes_ = o.passes_.load();
        return *this;
    }
    Backbone(Rng& rng, BackboneConfig cfg) : cfg_(cfg), final_ln_(cfg.dim) {
        cfg_.validate();
        for (int l = 0; l < cfg_.layers; ++l) blocks_.emplace_back(rng, cfg_);
    }

    const BackboneConfig& config() const { return cfg_; }
    long pass_count() const { return passes_; }
    void reset_pass_count() { passes_ = 0; }

    // One forward pass over a batch of same-mask sequences. The counter
    // increments once per call regardless of batch size.
    std::vector<Var<T>> forward_batch(Tape<T>& tp, const std::vector<Var<T>>& xs,
                                      const AttentionMask& mask) {
        ++passes_;
        std::vector<Var<T>> out;
        out.reserve(xs.size());
        for (Var<T> x : xs) {
            if (x.rows() != mask.n_rows || mask.n_rows != mask.n_cols)
                throw shape_error("mask size " + std::to_string(mask.n_rows) +
                                  " does not match sequence length " + std::to_string(x.rows()));
            if (x.rows() > cfg_.max_seq_len)
                throw contract_error("sequence longer than max_seq_len");
            for (auto& block : blocks_) x = block.apply(tp, x, mask);
            out.push_back(final_ln_.apply(tp, x));
        }
        return out;
    }

    Var<T> forward(Tape<T>& tp, Var<T> x, const AttentionMask& mask) {
        return forward_batch(tp, {x}, mask)[0];
    }

    void register_params(ParamSet<T>& ps, const std::string& prefix) {
        for (size_t l = 0; l < blocks_.size(); ++l)
            blocks_[l].register_params(ps, prefix + ".block" + std::to_string(l));
        final_ln_.register_params(ps, prefix + ".ln_f");
    }

   private:
    BackboneConfig cfg_;
    std::vector<TransformerBlock<T>> blocks_;
    LayerNorm<T> final_ln_;
    std::atomic<long> passes_{0};  // shared across concurrent read-only episodes
};

// Single cross-attention layer with residual; queries attend to an external
// key/value set.
template <class T>
struct CrossAttendBlock {
    LayerNorm<T> ln_q;
    MultiHeadAttention<T> attn;

    CrossAttendBlock() = default;
    CrossAttendBlock(Rng& rng, int dim, int heads) : ln_q(dim), attn(rng, dim, heads) {}

    Var<T> apply(Tape<T>& tp, Var<T> queries, Var<T> keys) {
        if (keys.rows() < 1) throw contract_error("cross_attend requires at least one key");
        AttentionMask mask(queries.rows(), keys.rows());
        std::fill(mask.allowed.begin(), mask.allowed.end(), uint8_t(1));
        return add(queries, attn.apply(tp, ln_q.apply(tp, queries), keys, mask));
    }

    void register_params(ParamSet<T>& ps, const std::string& prefix) {
        ln_q.register_params(ps, prefix + ".ln_q");
        attn.register_params(ps, prefix + ".attn");
    }
};

}  // namespace cola
