#include "cola/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cola/common.hpp"
#include "cola/rng.hpp"
#include <json.hpp>

namespace cola {
namespace {

using json = nlohmann::json;

std::array<std::array<double, 2>, 4> box_corners(const OrientedBox& b) {
    const double c = std::cos(b.heading), s = std::sin(b.heading);
    const double hl = b.length / 2, hw = b.width / 2;
    std::array<std::array<double, 2>, 4> out;
    const double dx[4] = {hl, hl, -hl, -hl};
    const double dy[4] = {hw, -hw, -hw, hw};
    for (int i = 0; i < 4; ++i)
        out[i] = {b.cx + c * dx[i] - s * dy[i], b.cy + s * dx[i] + c * dy[i]};
    return out;
}

// Signed gap between the two boxes' projections onto `axis` (unit vector);
// negative means the intervals overlap on that axis.
double axis_gap(const OrientedBox& a, const OrientedBox& b, double ax, double ay) {
    auto project = [&](const OrientedBox& box, double& lo, double& hi) {
        lo = 1e300;
        hi = -1e300;
        for (const auto& p : box_corners(box)) {
            const double v = p[0] * ax + p[1] * ay;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    };
    double alo, ahi, blo, bhi;
    project(a, alo, ahi);
    project(b, blo, bhi);
    return std::max(blo - ahi, alo - bhi);
}

void check_box(const OrientedBox& b) {
    if (b.length <= 0 || b.width <= 0) throw contract_error("box with non-positive extent");
}

double max_axis_gap(const OrientedBox& a, const OrientedBox& b) {
    check_box(a);
    check_box(b);
    double gap = -1e300;
    for (const OrientedBox* box : {&a, &b}) {
        const double c = std::cos(box->heading), s = std::sin(box->heading);
        gap = std::max(gap, axis_gap(a, b, c, s));
        gap = std::max(gap, axis_gap(a, b, -s, c));
    }
    return gap;
}

}  // namespace

bool collision_check(const OrientedBox& a, const OrientedBox& b) {
    return max_axis_gap(a, b) <= 0;
}

double box_separation(const OrientedBox& a, const OrientedBox& b) {
    return std::max(0.0, max_axis_gap(a, b));
}

const char* scenario_kind_name(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::static_obstacle: return "static";
        case ScenarioKind::frontal: return "frontal";
        case ScenarioKind::side: return "side";
    }
    throw contract_error("bad scenario kind");
}

ScenarioKind parse_scenario_kind(const std::string& s) {
    if (s == "static") return ScenarioKind::static_obstacle;
    if (s == "frontal") return ScenarioKind::frontal;
    if (s == "side") return ScenarioKind::side;
    throw parse_error("unknown scenario kind: " + s);
}

OrientedBox AdversaryScript::box_at(double t) const {
    OrientedBox b;
    b.cx = x0 + std::cos(heading) * speed * t;
    b.cy = y0 + std::sin(heading) * speed * t;
    b.heading = heading;
    b.length = length;
    b.width = width;
    return b;
}

std::vector<Scenario> make_scenario_suite(int per_kind, uint64_t seed, const RunConfig& cfg) {
    if (per_kind < 1) throw contract_error("scenario suite needs at least one variant per kind");
    std::vector<Scenario> suite;
    uint64_t id = 0;
    for (ScenarioKind kind :
         {ScenarioKind::static_obstacle, ScenarioKind::frontal, ScenarioKind::side}) {
        for (int i = 0; i < per_kind; ++i) {
            Rng rng(Rng(seed).fork(static_cast<uint64_t>(kind) * 1000 + i));
            Scenario sc;
            sc.id = id++;
            sc.kind = kind;
            sc.duration = cfg.episode_duration;
            sc.v_ref = cfg.v_ref;
            sc.ego.speed = rng.uniform(6.0, 10.0);
            switch (kind) {
                case ScenarioKind::static_obstacle:
                    sc.adversary.x0 = rng.uniform(18.0, 30.0);
                    sc.adversary.speed = 0.0;
                    break;
                case ScenarioKind::frontal:
                    sc.adversary.x0 = rng.uniform(45.0, 65.0);
                    sc.adversary.heading = std::acos(-1.0);
                    sc.adversary.speed = rng.uniform(6.0, 9.0);
                    break;
                case ScenarioKind::side: {
                    // timed so the adversary reaches the ego lane exactly when
                    // a non-reacting ego would arrive at its x position
                    const double d = rng.uniform(20.0, 30.0);
                    const double va = rng.uniform(5.0, 8.0);
                    const double side_sign = (i % 2 == 0) ? 1.0 : -1.0;
                    sc.adversary.x0 = d;
                    sc.adversary.y0 = side_sign * va * d / sc.ego.speed;
                    sc.adversary.heading = -side_sign * std::acos(-1.0) / 2;
                    sc.adversary.speed = va;
                    break;
                }
            }
            suite.push_back(sc);
        }
    }
    return suite;
}

void write_scenarios(const std::vector<Scenario>& scenarios, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw parse_error("cannot open for writing: " + path);
    for (const auto& sc : scenarios) {
        json j = {{"id", sc.id},
                  {"kind", scenario_kind_name(sc.kind)},
                  {"duration", sc.duration},
                  {"v_ref", sc.v_ref},
                  {"ego",
                   {{"x", sc.ego.x}, {"y", sc.ego.y}, {"heading", sc.ego.heading},
                    {"speed", sc.ego.speed}}},
                  {"adversary",
                   {{"x0", sc.adversary.x0}, {"y0", sc.adversary.y0},
                    {"heading", sc.adversary.heading}, {"speed", sc.adversary.speed},
                    {"length", sc.adversary.length}, {"width", sc.adversary.width}}}};
        out << j.dump() << "\n";
    }
}

std::vector<Scenario> read_scenarios(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open: " + path);
    std::vector<Scenario> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            Scenario sc;
            sc.id = j.at("id");
            sc.kind = parse_scenario_kind(j.at("kind"));
            sc.duration = j.at("duration");
            sc.v_ref = j.at("v_ref");
            const auto& e = j.at("ego");
            sc.ego.x = e.at("x");
            sc.ego.y = e.at("y");
            sc.ego.heading = e.at("heading");
            sc.ego.speed = e.at("speed");
            const auto& a = j.at("adversary");
            sc.adversary.x0 = a.at("x0");
            sc.adversary.y0 = a.at("y0");
            sc.adversary.heading = a.at("heading");
            sc.adversary.speed = a.at("speed");
            sc.adversary.length = a.at("length");
            sc.adversary.width = a.at("width");
            out.push_back(sc);
        } catch (const json::exception& e) {
            throw parse_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

namespace {

// Observation of the single scripted adversary, in the ego frame.
SceneSample observe(const EgoState& ego, const Scenario& sc, double t, const RunConfig& cfg) {
    SceneSample s;
    s.ego.speed = ego.speed;
    s.ego.yaw_rate = ego.yaw_rate;
    s.ego.accel = ego.accel;

    const OrientedBox adv = sc.adversary.box_at(t);
    const double c = std::cos(ego.heading), sn = std::sin(ego.heading);
    AgentObs obs;
    const double rx = adv.cx - ego.x, ry = adv.cy - ego.y;
    obs.x = c * rx + sn * ry;
    obs.y = -sn * rx + c * ry;
    obs.heading = adv.heading - ego.heading;
    const double wvx = std::cos(sc.adversary.heading) * sc.adversary.speed;
    const double wvy = std::sin(sc.adversary.heading) * sc.adversary.speed;
    obs.vx = c * wvx + sn * wvy;
    obs.vy = -sn * wvx + c * wvy;
    obs.length = adv.length;
    obs.width = adv.width;
    s.agents.push_back(obs);

    Lane lane;
    for (int i = 0; i <= 5; ++i) lane.points.push_back({i * 10.0, 0.0});
    s.lanes.push_back(lane);
    s.tokens = encode_tokens(s.agents, s.lanes, cfg.vision_tokens, cfg.feature_dim);
    return s;
}

struct WorldPlan {
    std::vector<Waypoint> points;  // world frame; points[i] is at (i+1)*step_dt
    double t_start = 0;
};

WorldPlan to_world(const Trajectory& traj, const EgoState& ego, double t) {
    WorldPlan p;
    p.t_start = t;
    const double c = std::cos(ego.heading), s = std::sin(ego.heading);
    for (const auto& w : traj)
        p.points.push_back({ego.x + c * w[0] - s * w[1], ego.y + s * w[0] + c * w[1]});
    return p;
}

// Position and speed the plan requests at elapsed time `dt_in` after replan.
void plan_reference(const WorldPlan& plan, const EgoState& ego, double dt_in, double step_dt,
                    double& v_des) {
    const size_t n = plan.points.size();
    const double idx = dt_in / step_dt;  // 0 == replan pose
    size_t seg = std::min(n - 1, static_cast<size_t>(std::max(0.0, idx)));
    const std::array<double, 2> prev =
        seg == 0 ? std::array<double, 2>{ego.x, ego.y} : plan.points[seg - 1];
    const double dx = plan.points[seg][0] - prev[0];
    const double dy = plan.points[seg][1] - prev[1];
    v_des = std::hypot(dx, dy) / step_dt;
}

}  // namespace

Trajectory noop_plan(const SceneSample& scene, const RunConfig& cfg) {
    return constant_velocity_prediction(scene.ego, cfg.horizon, cfg.step_dt);
}

Trajectory const_velocity_plan(const SceneSample& scene, const RunConfig& cfg) {
    return constant_velocity_prediction(scene.ego, cfg.horizon, cfg.step_dt);
}

EpisodeResult run_episode(const Scenario& scenario, const PlannerFn& planner,
                          const RunConfig& cfg) {
    EpisodeResult res;
    res.scenario_id = scenario.id;
    res.kind = scenario.kind;
    res.min_separation = 1e300;

    EgoState ego = scenario.ego;
    const double dt = cfg.physics_dt;
    const int replan_every = std::max(1, static_cast<int>(std::lround(1.0 / (cfg.replan_hz * dt))));
    const int steps = static_cast<int>(std::lround(scenario.duration / dt));

    WorldPlan plan;
    EgoState plan_origin = ego;
    bool have_plan = false;

    for (int step = 0; step <= steps; ++step) {
        const double t = step * dt;

        if (step % replan_every == 0) {
            SceneSample scene = observe(ego, scenario, t, cfg);
            Trajectory traj = planner(scene);
            bool finite = traj.size() == static_cast<size_t>(cfg.horizon);
            for (const auto& w : traj)
                finite = finite && std::isfinite(w[0]) && std::isfinite(w[1]);
            if (!finite) {
                res.failed = true;
                res.score = 0;
                return res;
            }
            plan_origin = ego;
            plan = to_world(traj, ego, t);
            have_plan = true;
        }

        OrientedBox ego_box{ego.x, ego.y, ego.heading, 4.5, 2.0};
        const OrientedBox adv = scenario.adversary.box_at(t);
        res.min_separation = std::min(res.min_separation, box_separation(ego_box, adv));
        if (collision_check(ego_box, adv)) {
            res.collided = true;
            res.impact_speed = ego.speed;
            break;
        }
        res.trace.push_back(ego);
        if (step == steps) break;

        // pure-pursuit tracking of the current plan
        double v_des = 0;
        plan_reference(plan, plan_origin, t - plan.t_start + dt, cfg.step_dt, v_des);
        double yaw_rate = 0;
        if (have_plan && ego.speed > 0.3) {
            const double ld = std::clamp(0.6 * ego.speed, 1.5, 6.0);
            const std::array<double, 2>* target = &plan.points.back();
            for (const auto& p : plan.points) {
                if (std::hypot(p[0] - ego.x, p[1] - ego.y) >= ld) {
                    target = &p;
                    break;
                }
            }
            const double gx = (*target)[0] - ego.x, gy = (*target)[1] - ego.y;
            const double dist = std::hypot(gx, gy);
            if (dist > 1e-6) {
                const double alpha = std::atan2(gy, gx) - ego.heading;
                yaw_rate = std::clamp(2.0 * ego.speed * std::sin(alpha) / std::max(dist, ld),
                                      -1.2, 1.2);
            }
        }
        const double accel = std::clamp((v_des - ego.speed) / 0.4, -6.0, 3.0);
        ego.heading += yaw_rate * dt;
        ego.x += ego.speed * std::cos(ego.heading) * dt;
        ego.y += ego.speed * std::sin(ego.heading) * dt;
        ego.speed = std::max(0.0, ego.speed + accel * dt);
        ego.yaw_rate = yaw_rate;
        ego.accel = accel;
    }

    res.score = res.collided
                    ? 4.0 * std::max(0.0, 1.0 - res.impact_speed / scenario.v_ref)
                    : 5.0;
    if (!std::isfinite(res.min_separation)) res.min_separation = 0;
    return res;
}

ClosedLoopSummary summarize_episodes(const std::vector<EpisodeResult>& episodes) {
    ClosedLoopSummary s;
    s.episodes = episodes;
    if (episodes.empty()) return s;
    std::array<double, 3> sums{};
    std::array<int, 3> counts{};
    int collided = 0;
    for (const auto& e : episodes) {
        s.avg_score += e.score;
        sums[static_cast<int>(e.kind)] += e.score;
        counts[static_cast<int>(e.kind)]++;
        if (e.collided) ++collided;
    }
    s.avg_score /= episodes.size();
    s.collision_rate = static_cast<double>(collided) / episodes.size();
    for (int k = 0; k < 3; ++k) s.score_by_kind[k] = counts[k] ? sums[k] / counts[k] : 0.0;
    return s;
}

void write_episode_csv(const std::vector<EpisodeResult>& episodes, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw parse_error("cannot open for writing: " + path);
    out << "scenario_id,kind,score,collided,impact_speed,min_separation\n";
    for (const auto& e : episodes)
        out << e.scenario_id << "," << scenario_kind_name(e.kind) << "," << e.score << ","
            << (e.collided ? 1 : 0) << "," << e.impact_speed << "," << e.min_separation << "\n";
}

OpenLoopMetrics eval_open_loop(const std::vector<SceneSample>& samples,
                               const std::vector<Trajectory>& predictions, const RunConfig& cfg) {
    if (samples.size() != predictions.size())
        throw contract_error("sample/prediction count mismatch");
    if (samples.empty()) throw contract_error("empty evaluation set");
    const std::array<double, 3> horizons{1.0, 2.0, 3.0};
    if (cfg.horizon * cfg.step_dt + 1e-9 < horizons.back())
        throw config_error("dataset horizon shorter than 3 s");

    OpenLoopMetrics m;
    for (int h = 0; h < 3; ++h) {
        const int n_steps = static_cast<int>(std::lround(horizons[h] / cfg.step_dt));
        double l2_sum = 0;
        int collided = 0;
        for (size_t i = 0; i < samples.size(); ++i) {
            const auto& gt = samples[i].gt;
            const auto& pred = predictions[i];
            if (static_cast<int>(pred.size()) < n_steps ||
                static_cast<int>(gt.size()) < n_steps)
                throw contract_error("trajectory shorter than evaluation horizon");
            double d = 0;
            for (int t = 0; t < n_steps; ++t)
                d += std::hypot(pred[t][0] - gt[t][0], pred[t][1] - gt[t][1]);
            l2_sum += d / n_steps;

            bool hit = false;
            Waypoint prev{0, 0};
            for (int t = 0; t < n_steps && !hit; ++t) {
                const double heading =
                    std::atan2(pred[t][1] - prev[1], pred[t][0] - prev[0] + 1e-12);
                OrientedBox ego_box{pred[t][0], pred[t][1], heading, 4.5, 2.0};
                const double time = (t + 1) * cfg.step_dt;
                for (const auto& a : samples[i].agents) {
                    OrientedBox abox{a.x + a.vx * time, a.y + a.vy * time, a.heading, a.length,
                                     a.width};
                    if (collision_check(ego_box, abox)) {
                        hit = true;
                        break;
                    }
                }
                prev = pred[t];
            }
            if (hit) ++collided;
        }
        m.l2[h] = l2_sum / samples.size();
        m.collision[h] = static_cast<double>(collided) / samples.size();
    }
    m.l2_avg = (m.l2[0] + m.l2[1] + m.l2[2]) / 3;
    m.collision_avg = (m.collision[0] + m.collision[1] + m.collision[2]) / 3;
    return m;
}

}  // namespace cola
