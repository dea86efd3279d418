#pragma once

#include <array>
#include <string>
#include <vector>

#include "cola/config.hpp"
#include "cola/rng.hpp"
#include "cola/tensor.hpp"

namespace cola {

// Scenario families double as maneuver classes; the meta-action bank has one
// entry per family when meta_actions == 8.
enum class Family : int {
    cruise = 0,
    brake,
    accelerate,
    left_turn,
    right_turn,
    left_lc,
    right_lc,
    stop,
};
constexpr int kFamilyCount = 8;

const char* family_name(Family f);
Family parse_family(const std::string& s);

struct EgoState {
    double x = 0, y = 0;
    double heading = 0;   // rad
    double speed = 0;     // m/s
    double yaw_rate = 0;  // rad/s
    double accel = 0;     // m/s^2
};

// Observed agent, ego frame.
struct AgentObs {
    double x = 0, y = 0;
    double heading = 0;
    double vx = 0, vy = 0;
    double length = 4.5, width = 2.0;
};

struct Lane {
    std::vector<std::array<double, 2>> points;
    double width = 3.5;
};

using Waypoint = std::array<double, 2>;
using Trajectory = std::vector<Waypoint>;  // ego frame, meters

struct SceneSample {
    uint64_t id = 0;
    int family = 0;
    int label = -1;  // nearest-cluster maneuver id, assigned after clustering
    EgoState ego;
    std::vector<AgentObs> agents;
    std::vector<Lane> lanes;
    Tensor<double> tokens;  // L_v x feature_dim
    Trajectory gt;          // horizon steps
};

// Structured features standing in for the perception front-end.
Tensor<double> encode_tokens(const std::vector<AgentObs>& agents, const std::vector<Lane>& lanes,
                             int vision_tokens, int feature_dim);

// 6-dim ego descriptor fed to the ego token encoder.
std::vector<double> ego_features(const EgoState& ego);

// Unicycle rollout with a family-specific speed/yaw profile plus bounded
// uniform noise. Deterministic in (seed, family, cfg).
SceneSample generate_scene(uint64_t seed, Family family, const RunConfig& cfg);

struct ClusterModel {
    int horizon = 0;
    Tensor<double> centroids;            // C x 2T, flattened trajectories
    std::vector<std::string> names;      // majority-vote family name per cluster

    int count() const { return centroids.rows(); }
    // mean pointwise L2 to each centroid
    double distance(const Trajectory& traj, int c) const;
    int assign(const Trajectory& traj) const;
};

// k-means with k-means++ seeding under mean pointwise L2.
ClusterModel fit_clusters(const std::vector<Trajectory>& trajectories, int clusters, int iters,
                          uint64_t seed);

// Whole-dataset pipeline: generate, cluster, label, name clusters by majority
// family vote. Families cycle round-robin across samples.
struct Dataset {
    std::vector<SceneSample> samples;
    ClusterModel clusters;
};
Dataset generate_dataset(const RunConfig& cfg, int n, uint64_t seed);

// Newline-delimited JSON records; read(write(x)) == x up to 1e-6 per field.
void write_dataset(const std::vector<SceneSample>& samples, const std::string& path);
std::vector<SceneSample> read_dataset(const std::string& path);

void write_clusters(const ClusterModel& model, const std::string& path);
ClusterModel read_clusters(const std::string& path);

// Straight-line extrapolation of the current ego velocity; the acceptance
// denominator for open-loop L2.
Trajectory constant_velocity_prediction(const EgoState& ego, int horizon, double dt);

}  // namespace cola
