#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "cola/autograd.hpp"
#include "cola/rng.hpp"

namespace cola {

// Named registry over parameters owned elsewhere. Iteration order is the
// registration order, which keeps optimizer and checkpoint traversal
// deterministic.
template <class T>
class ParamSet {
   public:
    void add(const std::string& name, Parameter<T>& p) {
        if (by_name_.count(name)) throw contract_error("duplicate parameter name: " + name);
        names_.push_back(name);
        by_name_[name] = &p;
    }

    Parameter<T>& get(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw contract_error("unknown parameter: " + name);
        return *it->second;
    }

    const std::vector<std::string>& names() const { return names_; }

    bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

    size_t count_values() const {
        size_t n = 0;
        for (const auto& nm : names_) n += by_name_.at(nm)->value.numel();
        return n;
    }

    void zero_grad() {
        for (const auto& nm : names_) by_name_.at(nm)->zero_grad();
    }

    template <class F>
    void for_each(F&& f) {
        for (const auto& nm : names_) f(nm, *by_name_.at(nm));
    }
    template <class F>
    void for_each(F&& f) const {
        for (const auto& nm : names_) f(nm, const_cast<const Parameter<T>&>(*by_name_.at(nm)));
    }

   private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, Parameter<T>*> by_name_;
};

template <class T>
struct OptimConfig {
    T base_lr = T(1e-4);
    T weight_decay = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    long total_steps = 1;  // cosine period
    T lr_floor = T(0);
};

// AdamW with decoupled weight decay and a cosine-annealed learning rate
// (single period, no restarts).
template <class T>
class AdamW {
   public:
    explicit AdamW(OptimConfig<T> cfg) : cfg_(cfg) {}

    T lr_at(long step) const {
        const double frac = cfg_.total_steps > 0
                                ? std::min(1.0, static_cast<double>(step) / cfg_.total_steps)
                                : 1.0;
        return cfg_.lr_floor +
               (cfg_.base_lr - cfg_.lr_floor) * T(0.5) * T(1.0 + std::cos(3.14159265358979323846 * frac));
    }

    long step_count() const { return step_; }

    void step(ParamSet<T>& params) {
        params.for_each([](const std::string& name, Parameter<T>& p) {
            for (T g : p.grad.data)
                if (!std::isfinite(static_cast<double>(g)))
                    throw numeric_error("non-finite gradient in parameter '" + name +
                                        "'; step aborted");
        });
        const T lr = lr_at(step_);
        const long t = step_ + 1;
        const T bc1 = T(1) - std::pow(cfg_.beta1, T(t));
        const T bc2 = T(1) - std::pow(cfg_.beta2, T(t));
        params.for_each([&](const std::string& name, Parameter<T>& p) {
            auto& st = moments_[name];
            if (st.m.data.empty()) {
                st.m = Tensor<T>::zeros(p.value.shape);
                st.v = Tensor<T>::zeros(p.value.shape);
            }
            for (size_t i = 0; i < p.value.data.size(); ++i) {
                p.value.data[i] -= lr * cfg_.weight_decay * p.value.data[i];
                const T g = p.grad.data[i];
                st.m.data[i] = cfg_.beta1 * st.m.data[i] + (T(1) - cfg_.beta1) * g;
                st.v.data[i] = cfg_.beta2 * st.v.data[i] + (T(1) - cfg_.beta2) * g * g;
                const T mhat = st.m.data[i] / bc1;
                const T vhat = st.v.data[i] / bc2;
                p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        });
        ++step_;
    }

    const OptimConfig<T>& config() const { return cfg_; }

   private:
    struct Moments {
        Tensor<T> m, v;
    };
    OptimConfig<T> cfg_;
    long step_ = 0;
    std::unordered_map<std::string, Moments> moments_;
};

// ---- initializers ----------------------------------------------------------

template <class T>
Tensor<T> normal_init(Rng& rng, std::vector<int> shape, double stddev) {
    Tensor<T> t(std::move(shape));
    for (T& v : t.data) v = T(rng.normal(0.0, stddev));
    return t;
}

template <class T>
Tensor<T> xavier_init(Rng& rng, int fan_in, int fan_out) {
    return normal_init<T>(rng, {fan_in, fan_out}, std::sqrt(2.0 / (fan_in + fan_out)));
}

}  // namespace cola
