#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cola/common.hpp"
#include "cola/tensor.hpp"

namespace cola {

enum class Role : uint8_t { prompt, vision, ego, meta, context, target };

const char* role_name(Role r);

struct Position {
    Role role;
    int index = 0;     // index within its role block
    int scale = -1;    // targets only, 1-based
    int timestep = -1; // targets only
};

// Ordered token composition with per-position metadata.
struct SequenceLayout {
    std::vector<Position> positions;

    int length() const { return static_cast<int>(positions.size()); }
    int count(Role r) const;
    // index of the first position with the given role, -1 if absent
    int first(Role r) const;

    void validate() const;
};

// Additive attention mask with entries in {0, -inf}, stored as an allowed
// bitmap. Square for self-attention layouts; rectangular for cross-attention.
struct AttentionMask {
    int n_rows = 0;
    int n_cols = 0;
    std::vector<uint8_t> allowed;

    AttentionMask() = default;
    AttentionMask(int rows, int cols) : n_rows(rows), n_cols(cols), allowed(static_cast<size_t>(rows) * cols, 0) {}

    static AttentionMask full(int n);

    bool is_allowed(int i, int j) const { return allowed[static_cast<size_t>(i) * n_cols + j] != 0; }
    void allow(int i, int j) { allowed[static_cast<size_t>(i) * n_cols + j] = 1; }

    // every query row must be able to attend somewhere
    void validate() const;

    template <class T>
    Tensor<T> additive() const {
        Tensor<T> m({n_rows, n_cols});
        for (size_t i = 0; i < allowed.size(); ++i)
            m.data[i] = allowed[i] ? T(0) : -std::numeric_limits<T>::infinity();
        return m;
    }
};

enum class ScaleStrategy : uint8_t { single, sequential, reverse, interpolate };

ScaleStrategy parse_strategy(const std::string& s);
const char* strategy_name(ScaleStrategy s);

// Nested timestep subsets I_1 c ... c I_S = {0..T-1}.
struct StagePlan {
    int horizon = 0;
    ScaleStrategy strategy = ScaleStrategy::interpolate;
    std::vector<std::vector<int>> index_sets;  // sorted ascending, strictly nested

    int scales() const { return static_cast<int>(index_sets.size()); }
    int total_targets() const;
    void validate() const;
};

StagePlan make_stage_plan(int horizon, int scales, ScaleStrategy strategy);

// Planner layout: [context x L_c ; targets of scale 1 ; ... ; scale S].
SequenceLayout make_plan_layout(int context_len, const StagePlan& plan);

// Eq-style hybrid mask: context columns visible to everyone, context rows see
// context only, a target at scale s sees context plus targets at scales s-1 and s.
AttentionMask build_hybrid_mask(const SequenceLayout& layout);

}  // namespace cola
