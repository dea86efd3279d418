#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "cola/autograd.hpp"
#include "cola/rng.hpp"

namespace cola {

enum class RunMode { train, infer };

struct ReasonerConfig {
    int prompt_len = 8;
    int vision_tokens = 64;
    int top_k = 16;
    int meta_actions = 8;
    int candidates = 3;
    double tau = 1.0;
    double focal_gamma = 2.0;

    void validate() const {
        if (top_k < 1 || top_k > vision_tokens)
            throw config_error("top_k must be in [1, vision_tokens]");
        if (candidates < 1 || candidates > meta_actions)
            throw config_error("candidates must be in [1, meta_actions]");
        if (tau <= 0) throw config_error("gumbel temperature must be positive");
        if (vision_tokens < 1) throw contract_error("need at least one vision token");
    }
};

// Indices of the k largest scores, ties broken toward the lower index.
// Returned ascending.
template <class T>
std::vector<int> topk_indices(const std::vector<T>& scores, int k) {
    if (k < 1 || k > static_cast<int>(scores.size()))
        throw config_error("topk: k=" + std::to_string(k) + " out of range for " +
                           std::to_string(scores.size()) + " scores");
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

// Descending argsort of logits, ties toward the lower index.
template <class T>
std::vector<int> rank_desc(const std::vector<T>& logits) {
    std::vector<int> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return logits[a] > logits[b]; });
    return order;
}

template <class T>
struct RouterOutput {
    Tensor<T> scores;          // L_v router scores (pre-noise)
    std::vector<int> indices;  // K selected, ascending, distinct
    Tensor<T> selection_mask;  // L_v; K-hot in infer mode, relaxed in train mode
    Var<T> pruned;             // K x D, gradient path through the straight-through scale
};

template <class T>
struct Decision {
    Tensor<T> logits;            // C maneuver logits
    Var<T> logits_var;           // 1 x C, tape-bound
    std::vector<int> ranking;    // argsort desc, ties -> lower index
    std::vector<int> strategies; // top-N selection for planning

    int top1() const { return ranking.at(0); }
};

// FL = -alpha_label * (1 - p_label)^gamma * log p_label over softmax(logits).
template <class T>
Var<T> focal_loss(Var<T> logits, int label, T gamma, const std::vector<T>& alpha) {
    const int c = static_cast<int>(logits.value().numel());
    if (label < 0 || label >= c)
        throw contract_error("focal loss label " + std::to_string(label) + " out of [0, " +
                             std::to_string(c) + ")");
    const T a = alpha.empty() ? T(1) : alpha.at(label);
    Var<T> row = logits.rows() == 1 ? logits : transpose(logits);
    Var<T> logp = pick(log_softmax_rows(row), label);
    Var<T> one_minus_p = add_const(scale(exp(logp), T(-1)), T(1));
    return scale(mul(pow_const(one_minus_p, gamma), logp), -a);
}

}  // namespace cola
