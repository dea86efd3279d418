#pragma once

#include <string>
#include <vector>

#include "cola/common.hpp"

namespace cola {

// Every tunable in one plain-text key=value config. Unknown keys are
// rejected; missing keys keep the defaults below.
struct RunConfig {
    // backbone
    int dim = 64;
    int layers = 4;
    int heads = 4;
    int ff_dim = 256;
    int max_seq_len = 256;
    double dropout = 0.0;

    // reasoner
    int prompt_len = 8;
    int vision_tokens = 64;
    int top_k = 16;
    int meta_actions = 8;
    int candidates = 3;
    double tau_start = 1.0;
    double tau_end = 0.1;
    double focal_gamma = 2.0;

    // planner
    int horizon = 8;
    double step_dt = 0.5;
    int scales = 3;
    std::string strategy = "interpolate";
    double huber_delta = 1.0;
    double w_focal = 1.0;
    double w_reg = 1.0;
    double w_conf = 0.5;

    // optimizer
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double lr_floor = 0.0;
    int train_steps = 2000;
    int batch_size = 8;
    int log_every = 25;

    // toy world
    int feature_dim = 8;
    double v_min = 4.0;
    double v_max = 12.0;
    double noise_pos = 0.05;
    double noise_rate = 0.03;
    int kmeans_iters = 50;

    // simulator
    double replan_hz = 2.0;
    double physics_dt = 0.05;
    double episode_duration = 8.0;
    double v_ref = 8.0;

    uint64_t seed = 0;

    // Applies key=value lines from a file; '#' starts a comment.
    void load(const std::string& path);
    void set(const std::string& key, const std::string& value);
    // Full effective config, one key=value per line.
    std::string echo() const;
    void save(const std::string& path) const;
    void validate() const;
};

}  // namespace cola
