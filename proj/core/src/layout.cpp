#include "cola/layout.hpp"

#include <algorithm>
#include <set>

namespace cola {

const char* role_name(Role r) {
    switch (r) {
        case Role::prompt: return "prompt";
        case Role::vision: return "vision";
        case Role::ego: return "ego";
        case Role::meta: return "meta";
        case Role::context: return "context";
        case Role::target: return "target";
    }
    return "?";
}

int SequenceLayout::count(Role r) const {
    int n = 0;
    for (const auto& p : positions) n += p.role == r;
    return n;
}

int SequenceLayout::first(Role r) const {
    for (size_t i = 0; i < positions.size(); ++i)
        if (positions[i].role == r) return static_cast<int>(i);
    return -1;
}

void SequenceLayout::validate() const {
    for (size_t i = 0; i < positions.size(); ++i) {
        const auto& p = positions[i];
        if (p.role == Role::target && (p.scale < 1 || p.timestep < 0))
            throw contract_error("layout position " + std::to_string(i) +
                                 " is a target without (scale, timestep) metadata");
    }
}

AttentionMask AttentionMask::full(int n) {
    AttentionMask m(n, n);
    std::fill(m.allowed.begin(), m.allowed.end(), uint8_t(1));
    return m;
}

void AttentionMask::validate() const {
    for (int i = 0; i < n_rows; ++i) {
        bool any = false;
        for (int j = 0; j < n_cols && !any; ++j) any = is_allowed(i, j);
        if (!any) throw contract_error("attention mask row " + std::to_string(i) + " is fully masked");
    }
}

ScaleStrategy parse_strategy(const std::string& s) {
    if (s == "single") return ScaleStrategy::single;
    if (s == "sequential") return ScaleStrategy::sequential;
    if (s == "reverse") return ScaleStrategy::reverse;
    if (s == "interpolate") return ScaleStrategy::interpolate;
    throw config_error("unknown scale strategy: " + s);
}

const char* strategy_name(ScaleStrategy s) {
    switch (s) {
        case ScaleStrategy::single: return "single";
        case ScaleStrategy::sequential: return "sequential";
        case ScaleStrategy::reverse: return "reverse";
        case ScaleStrategy::interpolate: return "interpolate";
    }
    return "?";
}

int StagePlan::total_targets() const {
    int n = 0;
    for (const auto& s : index_sets) n += static_cast<int>(s.size());
    return n;
}

void StagePlan::validate() const {
    if (index_sets.empty()) throw config_error("stage plan has no scales");
    for (int s = 0; s < scales(); ++s) {
        const auto& cur = index_sets[s];
        if (!std::is_sorted(cur.begin(), cur.end())) throw contract_error("index set not sorted");
        for (int t : cur)
            if (t < 0 || t >= horizon) throw contract_error("timestep out of horizon");
        if (s > 0) {
            const auto& prev = index_sets[s - 1];
            if (prev.size() >= cur.size() ||
                !std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()))
                throw contract_error("index sets are not strictly nested");
        }
    }
    if (static_cast<int>(index_sets.back().size()) != horizon)
        throw contract_error("finest scale does not cover the full horizon");
}

namespace {

std::vector<int> first_n(int n) {
    std::vector<int> v(n);
    for (int i = 0; i < n; ++i) v[i] = i;
    return v;
}

// Insert the midpoint of every remaining gap, treating -1 as the left boundary.
std::set<int> refine_dyadic(const std::set<int>& prev, int horizon) {
    std::set<int> next = prev;
    int left = -1;
    for (int t : prev) {
        if (t - left > 1) next.insert((left + t) / 2);
        left = t;
    }
    (void)horizon;
    return next;
}

}  // namespace

StagePlan make_stage_plan(int horizon, int scales, ScaleStrategy strategy) {
    if (scales < 1) throw config_error("stage plan needs at least one scale");
    if (horizon < scales)
        throw config_error("horizon " + std::to_string(horizon) + " < scale count " +
                           std::to_string(scales));
    StagePlan plan;
    plan.horizon = horizon;
    plan.strategy = strategy;
    switch (strategy) {
        case ScaleStrategy::single: {
            if (scales != 1) throw config_error("single strategy requires S=1");
            plan.index_sets.push_back(first_n(horizon));
            break;
        }
        case ScaleStrategy::sequential:
        case ScaleStrategy::reverse: {
            for (int s = 1; s <= scales; ++s) {
                const int n = (s * horizon + scales - 1) / scales;  // ceil(s*T/S)
                std::vector<int> idx(n);
                for (int i = 0; i < n; ++i)
                    idx[i] = strategy == ScaleStrategy::sequential ? i : horizon - n + i;
                plan.index_sets.push_back(std::move(idx));
            }
            break;
        }
        case ScaleStrategy::interpolate: {
            // endpoint first, then dyadic midpoint refinement; the last scale
            // jumps to the full horizon
            std::set<int> cur{horizon - 1};
            for (int s = 1; s <= scales; ++s) {
                if (s == scales) {
                    plan.index_sets.push_back(first_n(horizon));
                } else {
                    if (static_cast<int>(cur.size()) >= horizon)
                        throw config_error("interpolate: scale count too large for horizon " +
                                           std::to_string(horizon));
                    plan.index_sets.emplace_back(cur.begin(), cur.end());
                    cur = refine_dyadic(cur, horizon);
                    if (plan.index_sets.back().size() == cur.size() && s + 1 < scales)
                        throw config_error("interpolate: refinement saturated before scale " +
                                           std::to_string(scales));
                }
            }
            break;
        }
    }
    plan.validate();
    return plan;
}

SequenceLayout make_plan_layout(int context_len, const StagePlan& plan) {
    if (context_len < 1) throw contract_error("plan layout requires a non-empty context");
    SequenceLayout layout;
    for (int i = 0; i < context_len; ++i) layout.positions.push_back({Role::context, i, -1, -1});
    int idx = 0;
    for (int s = 0; s < plan.scales(); ++s)
        for (int t : plan.index_sets[s]) layout.positions.push_back({Role::target, idx++, s + 1, t});
    layout.validate();
    return layout;
}

AttentionMask build_hybrid_mask(const SequenceLayout& layout) {
    layout.validate();
    const int L = layout.length();
    AttentionMask mask(L, L);
    for (int i = 0; i < L; ++i) {
        const Position& pi = layout.positions[i];
        for (int j = 0; j < L; ++j) {
            const Position& pj = layout.positions[j];
            if (pj.role != Role::target) {
                mask.allow(i, j);  // context column, visible to every row
            } else if (pi.role == Role::target &&
                       (pj.scale == pi.scale || pj.scale == pi.scale - 1)) {
                mask.allow(i, j);
            }
        }
    }
    mask.validate();
    return mask;
}

}  // namespace cola
