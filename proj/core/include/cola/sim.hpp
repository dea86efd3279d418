#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "cola/config.hpp"
#include "cola/world.hpp"

namespace cola {

struct OrientedBox {
    double cx = 0, cy = 0;
    double heading = 0;
    double length = 4.5, width = 2.0;
};

// Separating-axis test, exact for oriented rectangles.
bool collision_check(const OrientedBox& a, const OrientedBox& b);

// Largest interval gap across the four candidate axes; 0 when overlapping.
// A conservative lower bound on the true box distance — used only for the
// min-separation diagnostic, never for collision decisions.
double box_separation(const OrientedBox& a, const OrientedBox& b);

enum class ScenarioKind : int { static_obstacle = 0, frontal, side };
const char* scenario_kind_name(ScenarioKind k);
ScenarioKind parse_scenario_kind(const std::string& s);

// Scripted adversary: straight-line constant-speed motion in the world frame.
struct AdversaryScript {
    double x0 = 0, y0 = 0;
    double heading = 0;
    double speed = 0;
    double length = 4.5, width = 2.0;

    OrientedBox box_at(double t) const;
};

struct Scenario {
    uint64_t id = 0;
    ScenarioKind kind = ScenarioKind::static_obstacle;
    EgoState ego;
    AdversaryScript adversary;
    double duration = 8.0;  // s
    double v_ref = 8.0;     // m/s, scoring reference speed
};

// The 3 x n suite: n variants each of static / frontal / side, every one of
// which collides under a planner that never brakes or steers.
std::vector<Scenario> make_scenario_suite(int per_kind, uint64_t seed, const RunConfig& cfg);

void write_scenarios(const std::vector<Scenario>& scenarios, const std::string& path);
std::vector<Scenario> read_scenarios(const std::string& path);

struct EpisodeResult {
    uint64_t scenario_id = 0;
    ScenarioKind kind = ScenarioKind::static_obstacle;
    bool collided = false;
    bool failed = false;  // planner produced non-finite output
    double impact_speed = 0;
    double min_separation = 0;
    double score = 0;  // 5 if avoided, else 4*max(0, 1 - v_impact/v_ref)
    std::vector<EgoState> trace;
};

// Planner contract: current scene (ego-frame observations) -> ego-frame
// trajectory sampled at cfg.step_dt. Wraps the model as well as the scripted
// reference agents.
using PlannerFn = std::function<Trajectory(const SceneSample&)>;

// Replans at cfg.replan_hz, tracks waypoints with pure pursuit at
// cfg.physics_dt substeps, stops at the first oriented-rectangle overlap.
EpisodeResult run_episode(const Scenario& scenario, const PlannerFn& planner,
                          const RunConfig& cfg);

// Reference agents for the closed-loop comparison.
Trajectory noop_plan(const SceneSample& scene, const RunConfig& cfg);      // hold speed
Trajectory const_velocity_plan(const SceneSample& scene, const RunConfig& cfg);

struct ClosedLoopSummary {
    double avg_score = 0;
    double collision_rate = 0;  // fraction of episodes with a collision
    std::array<double, 3> score_by_kind{};  // static, frontal, side
    std::vector<EpisodeResult> episodes;
};

ClosedLoopSummary summarize_episodes(const std::vector<EpisodeResult>& episodes);
void write_episode_csv(const std::vector<EpisodeResult>& episodes, const std::string& path);

struct OpenLoopMetrics {
    std::array<double, 3> l2{};         // 1s / 2s / 3s, meters
    std::array<double, 3> collision{};  // 1s / 2s / 3s, fraction
    double l2_avg = 0;
    double collision_avg = 0;
};

// L2@h = mean over samples of mean pointwise distance up to horizon h;
// collision@h sweeps the ego box along the prediction against logged agents.
OpenLoopMetrics eval_open_loop(const std::vector<SceneSample>& samples,
                               const std::vector<Trajectory>& predictions, const RunConfig& cfg);

}  // namespace cola
