#include <cmath>

#include "cola/optim.hpp"
#include "doctest.h"

using namespace cola;

TEST_CASE("adamw single step on a hand-computed example") {
    // p=1, g=1, lr=0.1, wd=0: bias-corrected mhat=1, vhat=1 -> p ~ 0.9
    Parameter<double> p(Tensor<double>::scalar(1.0));
    p.grad.data[0] = 1.0;
    ParamSet<double> ps;
    ps.add("p", p);
    OptimConfig<double> cfg;
    cfg.base_lr = 0.1;
    cfg.weight_decay = 0.0;
    cfg.total_steps = 1000;
    AdamW<double> opt(cfg);
    opt.step(ps);
    CHECK(p.value.data[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("weight decay is decoupled from the gradient") {
    Parameter<double> p(Tensor<double>::scalar(2.0));
    p.zero_grad();  // zero gradient: only decay moves the weight
    ParamSet<double> ps;
    ps.add("p", p);
    OptimConfig<double> cfg;
    cfg.base_lr = 0.1;
    cfg.weight_decay = 0.01;
    cfg.total_steps = 100;
    AdamW<double> opt(cfg);
    opt.step(ps);
    CHECK(p.value.data[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)));
}

TEST_CASE("cosine schedule anneals from base to floor, no restarts") {
    OptimConfig<double> cfg;
    cfg.base_lr = 1e-3;
    cfg.lr_floor = 1e-5;
    cfg.total_steps = 200;
    AdamW<double> opt(cfg);
    CHECK(opt.lr_at(0) == doctest::Approx(1e-3));
    CHECK(opt.lr_at(100) == doctest::Approx((1e-3 + 1e-5) / 2));
    CHECK(opt.lr_at(200) == doctest::Approx(1e-5));
    CHECK(opt.lr_at(400) == doctest::Approx(1e-5));  // clamps past the period
    for (long s = 1; s <= 200; ++s) CHECK(opt.lr_at(s) <= opt.lr_at(s - 1) + 1e-15);
}

TEST_CASE("non-finite gradient aborts the step without touching weights") {
    Parameter<double> p(Tensor<double>::scalar(1.0));
    p.grad.data[0] = std::nan("");
    ParamSet<double> ps;
    ps.add("p", p);
    OptimConfig<double> cfg;
    AdamW<double> opt(cfg);
    CHECK_THROWS_AS(opt.step(ps), numeric_error);
    CHECK(p.value.data[0] == 1.0);
    CHECK(opt.step_count() == 0);
}
