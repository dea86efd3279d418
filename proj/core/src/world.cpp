#include "cola/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

namespace cola {

using nlohmann::json;

namespace {
const char* kFamilyNames[kFamilyCount] = {"cruise",    "brake",    "accelerate", "left_turn",
                                          "right_turn", "left_lc", "right_lc",   "stop"};
}

const char* family_name(Family f) { return kFamilyNames[static_cast<int>(f)]; }

Family parse_family(const std::string& s) {
    for (int i = 0; i < kFamilyCount; ++i)
        if (s == kFamilyNames[i]) return static_cast<Family>(i);
    throw config_error("unknown scenario family: " + s);
}

Tensor<double> encode_tokens(const std::vector<AgentObs>& agents, const std::vector<Lane>& lanes,
                             int vision_tokens, int feature_dim) {
    if (feature_dim < 8) throw config_error("feature_dim must be >= 8");
    Tensor<double> tokens({vision_tokens, feature_dim});
    int row = 0;
    for (const auto& a : agents) {
        if (row >= vision_tokens) break;
        double* f = tokens.data.data() + static_cast<size_t>(row) * feature_dim;
        f[0] = 1.0;
        f[2] = a.x * 0.05;
        f[3] = a.y * 0.05;
        f[4] = a.vx * 0.1;
        f[5] = a.vy * 0.1;
        f[6] = a.length * 0.2;
        f[7] = a.width * 0.2;
        ++row;
    }
    for (const auto& lane : lanes) {
        for (size_t p = 0; p + 1 < lane.points.size() && row < vision_tokens; ++p, ++row) {
            double* f = tokens.data.data() + static_cast<size_t>(row) * feature_dim;
            const double dx = lane.points[p + 1][0] - lane.points[p][0];
            const double dy = lane.points[p + 1][1] - lane.points[p][1];
            const double norm = std::hypot(dx, dy);
            f[1] = 1.0;
            f[2] = lane.points[p][0] * 0.05;
            f[3] = lane.points[p][1] * 0.05;
            f[4] = norm > 1e-9 ? dx / norm : 1.0;
            f[5] = norm > 1e-9 ? dy / norm : 0.0;
            f[6] = lane.width * 0.2;
            f[7] = static_cast<double>(p) * 0.1;
        }
    }
    return tokens;
}

std::vector<double> ego_features(const EgoState& ego) {
    const double curvature = ego.yaw_rate / std::max(ego.speed, 0.5);
    return {ego.speed * 0.1, ego.yaw_rate, ego.accel * 0.2, curvature, 1.0, 0.0};
}

namespace {

struct Profile {
    double v0;
    double accel;            // nominal longitudinal acceleration
    double yaw_rate;         // constant component
    double yaw_sine_amp;     // lane-change S-curve component
    double v_floor;
};

Profile family_profile(Family f, Rng& rng) {
    switch (f) {
        case Family::cruise:     return {rng.uniform(7.0, 9.0), 0.0, 0.0, 0.0, 0.0};
        case Family::brake:      return {rng.uniform(7.0, 9.0), -2.0 + rng.uniform(-0.3, 0.3), 0.0, 0.0, 1.0};
        case Family::accelerate: return {rng.uniform(4.0, 5.5), 2.0 + rng.uniform(-0.3, 0.3), 0.0, 0.0, 0.0};
        case Family::left_turn:  return {rng.uniform(4.5, 6.0), 0.0, 0.30 + rng.uniform(-0.03, 0.03), 0.0, 0.0};
        case Family::right_turn: return {rng.uniform(4.5, 6.0), 0.0, -0.30 + rng.uniform(-0.03, 0.03), 0.0, 0.0};
        case Family::left_lc:    return {rng.uniform(6.5, 8.0), 0.0, 0.0, 0.35 + rng.uniform(-0.03, 0.03), 0.0};
        case Family::right_lc:   return {rng.uniform(6.5, 8.0), 0.0, 0.0, -0.35 - rng.uniform(-0.03, 0.03), 0.0};
        case Family::stop:       return {rng.uniform(5.0, 6.5), -3.2 + rng.uniform(-0.2, 0.2), 0.0, 0.0, 0.0};
    }
    throw config_error("bad family");
}

void place_agents_and_lanes(SceneSample& s, Family f, Rng& rng) {
    Lane center;
    for (int i = 0; i <= 12; ++i) center.points.push_back({i * 5.0, 0.0});
    Lane left = center, right = center;
    for (auto& p : left.points) p[1] = 3.5;
    for (auto& p : right.points) p[1] = -3.5;
    if (f == Family::left_turn || f == Family::right_turn) {
        const double sgn = f == Family::left_turn ? 1.0 : -1.0;
        center.points.clear();
        for (int i = 0; i <= 12; ++i) {
            const double th = i * 0.12;
            center.points.push_back({20.0 * std::sin(th), sgn * 20.0 * (1.0 - std::cos(th))});
        }
        s.lanes = {center};
    } else {
        s.lanes = {center, left, right};
    }

    switch (f) {
        case Family::brake: {
            AgentObs lead;
            lead.x = rng.uniform(9.0, 14.0);
            lead.vx = rng.uniform(1.0, 2.5);
            s.agents.push_back(lead);
            break;
        }
        case Family::stop: {
            AgentObs blocker;
            blocker.x = rng.uniform(7.0, 11.0);
            blocker.vx = 0.0;
            s.agents.push_back(blocker);
            break;
        }
        case Family::left_lc:
        case Family::right_lc: {
            AgentObs slow;  // reason to change lanes
            slow.x = rng.uniform(12.0, 18.0);
            slow.vx = rng.uniform(2.0, 3.5);
            s.agents.push_back(slow);
            AgentObs blocker;  // occupies the adjacent lane away from the change
            blocker.x = rng.uniform(2.0, 8.0);
            blocker.y = f == Family::left_lc ? -3.5 : 3.5;
            blocker.vx = rng.uniform(5.0, 8.0);
            s.agents.push_back(blocker);
            break;
        }
        default: {
            AgentObs far;
            far.x = rng.uniform(35.0, 50.0);
            far.vx = rng.uniform(6.0, 9.0);
            s.agents.push_back(far);
            break;
        }
    }
    AgentObs oncoming;
    oncoming.x = rng.uniform(30.0, 45.0);
    oncoming.y = 3.5;
    oncoming.heading = 3.14159265358979;
    oncoming.vx = -rng.uniform(5.0, 8.0);
    s.agents.push_back(oncoming);
}

}  // namespace

SceneSample generate_scene(uint64_t seed, Family family, const RunConfig& cfg) {
    Rng rng(seed * 0x9E3779B97F4A7C15ull + static_cast<uint64_t>(family));
    SceneSample s;
    s.id = seed;
    s.family = static_cast<int>(family);

    const Profile prof = family_profile(family, rng);
    s.ego.speed = prof.v0;
    s.ego.accel = prof.accel;
    s.ego.yaw_rate = prof.yaw_rate;

    // fine-grained unicycle rollout in the ego frame, sampled every step_dt
    const double fine_dt = 0.05;
    const int per_step = std::max(1, static_cast<int>(std::lround(cfg.step_dt / fine_dt)));
    const double duration = cfg.horizon * cfg.step_dt;
    double x = 0, y = 0, th = 0, v = prof.v0;
    s.gt.clear();
    for (int t = 0; t < cfg.horizon; ++t) {
        for (int k = 0; k < per_step; ++k) {
            const double time = (t * per_step + k) * fine_dt;
            double omega = prof.yaw_rate +
                           prof.yaw_sine_amp * std::sin(2.0 * 3.14159265358979 * time / duration) +
                           rng.uniform(-cfg.noise_rate, cfg.noise_rate);
            double a = prof.accel + rng.uniform(-cfg.noise_rate, cfg.noise_rate);
            v = std::clamp(v + a * fine_dt, prof.v_floor, cfg.v_max);
            x += v * std::cos(th) * fine_dt;
            y += v * std::sin(th) * fine_dt;
            th += omega * fine_dt;
        }
        s.gt.push_back({x + rng.uniform(-cfg.noise_pos, cfg.noise_pos),
                        y + rng.uniform(-cfg.noise_pos, cfg.noise_pos)});
    }

    place_agents_and_lanes(s, family, rng);
    s.tokens = encode_tokens(s.agents, s.lanes, cfg.vision_tokens, cfg.feature_dim);
    return s;
}

double ClusterModel::distance(const Trajectory& traj, int c) const {
    const int t_len = static_cast<int>(traj.size());
    if (t_len != horizon) throw contract_error("trajectory length does not match cluster horizon");
    double acc = 0;
    for (int t = 0; t < t_len; ++t) {
        const double dx = traj[t][0] - centroids.at(c, 2 * t);
        const double dy = traj[t][1] - centroids.at(c, 2 * t + 1);
        acc += std::hypot(dx, dy);
    }
    return acc / t_len;
}

int ClusterModel::assign(const Trajectory& traj) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < count(); ++c) {
        const double d = distance(traj, c);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

ClusterModel fit_clusters(const std::vector<Trajectory>& trajectories, int clusters, int iters,
                          uint64_t seed) {
    if (static_cast<int>(trajectories.size()) < clusters)
        throw contract_error("need at least " + std::to_string(clusters) + " trajectories");
    const int horizon = static_cast<int>(trajectories[0].size());
    for (const auto& t : trajectories)
        if (static_cast<int>(t.size()) != horizon)
            throw contract_error("trajectories differ in length");

    ClusterModel model;
    model.horizon = horizon;
    model.centroids = Tensor<double>({clusters, 2 * horizon});

    // k-means++ seeding
    Rng rng(seed);
    std::vector<int> chosen;
    chosen.push_back(static_cast<int>(rng.uniform_index(trajectories.size())));
    auto traj_dist = [&](int i, int j) {
        double acc = 0;
        for (int t = 0; t < horizon; ++t)
            acc += std::hypot(trajectories[i][t][0] - trajectories[j][t][0],
                              trajectories[i][t][1] - trajectories[j][t][1]);
        return acc / horizon;
    };
    while (static_cast<int>(chosen.size()) < clusters) {
        std::vector<double> d2(trajectories.size());
        double total = 0;
        for (size_t i = 0; i < trajectories.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int c : chosen) best = std::min(best, traj_dist(static_cast<int>(i), c));
            d2[i] = best * best;
            total += d2[i];
        }
        if (total <= 0) throw contract_error("fewer distinct trajectories than clusters");
        double r = rng.uniform() * total;
        size_t pick = 0;
        for (; pick + 1 < d2.size(); ++pick) {
            r -= d2[pick];
            if (r <= 0) break;
        }
        chosen.push_back(static_cast<int>(pick));
    }
    for (int c = 0; c < clusters; ++c)
        for (int t = 0; t < horizon; ++t) {
            model.centroids.at(c, 2 * t) = trajectories[chosen[c]][t][0];
            model.centroids.at(c, 2 * t + 1) = trajectories[chosen[c]][t][1];
        }

    std::vector<int> assign(trajectories.size(), 0);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (size_t i = 0; i < trajectories.size(); ++i) {
            const int a = model.assign(trajectories[i]);
            changed = changed || a != assign[i];
            assign[i] = a;
        }
        Tensor<double> sums({clusters, 2 * horizon});
        std::vector<int> counts(clusters, 0);
        for (size_t i = 0; i < trajectories.size(); ++i) {
            ++counts[assign[i]];
            for (int t = 0; t < horizon; ++t) {
                sums.at(assign[i], 2 * t) += trajectories[i][t][0];
                sums.at(assign[i], 2 * t + 1) += trajectories[i][t][1];
            }
        }
        for (int c = 0; c < clusters; ++c) {
            if (counts[c] == 0) continue;  // keep previous centroid for empty clusters
            for (int j = 0; j < 2 * horizon; ++j)
                model.centroids.at(c, j) = sums.at(c, j) / counts[c];
        }
        if (!changed && it > 0) break;
    }
    model.names.resize(clusters, "cluster");
    return model;
}

Dataset generate_dataset(const RunConfig& cfg, int n, uint64_t seed) {
    Dataset ds;
    ds.samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        const Family fam = static_cast<Family>(i % kFamilyCount);
        ds.samples.push_back(generate_scene(seed * 1000003ull + i, fam, cfg));
    }
    if (n == 0) return ds;
    std::vector<Trajectory> trajs;
    trajs.reserve(n);
    for (const auto& s : ds.samples) trajs.push_back(s.gt);
    ds.clusters = fit_clusters(trajs, cfg.meta_actions, cfg.kmeans_iters, seed ^ 0xC01AC01Aull);
    for (auto& s : ds.samples) s.label = ds.clusters.assign(s.gt);

    // name clusters by majority generating family
    std::vector<std::map<int, int>> votes(cfg.meta_actions);
    for (const auto& s : ds.samples) ++votes[s.label][s.family];
    for (int c = 0; c < cfg.meta_actions; ++c) {
        int best_fam = 0, best_n = -1;
        for (auto [fam, cnt] : votes[c])
            if (cnt > best_n) {
                best_n = cnt;
                best_fam = fam;
            }
        ds.clusters.names[c] = best_n > 0 ? family_name(static_cast<Family>(best_fam))
                                          : ("cluster_" + std::to_string(c));
    }
    return ds;
}

namespace {

json ego_to_json(const EgoState& e) {
    return {{"x", e.x},         {"y", e.y},           {"heading", e.heading},
            {"speed", e.speed}, {"yaw_rate", e.yaw_rate}, {"accel", e.accel}};
}

EgoState ego_from_json(const json& j) {
    EgoState e;
    e.x = j.at("x");
    e.y = j.at("y");
    e.heading = j.at("heading");
    e.speed = j.at("speed");
    e.yaw_rate = j.at("yaw_rate");
    e.accel = j.at("accel");
    return e;
}

}  // namespace

void write_dataset(const std::vector<SceneSample>& samples, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw error("cannot write dataset: " + path);
    for (const auto& s : samples) {
        json rec;
        rec["id"] = s.id;
        rec["family"] = s.family;
        rec["label"] = s.label;
        rec["ego"] = ego_to_json(s.ego);
        json agents = json::array();
        for (const auto& a : s.agents)
            agents.push_back({{"x", a.x}, {"y", a.y}, {"heading", a.heading}, {"vx", a.vx},
                              {"vy", a.vy}, {"length", a.length}, {"width", a.width}});
        rec["agents"] = std::move(agents);
        json lanes = json::array();
        for (const auto& l : s.lanes) lanes.push_back({{"width", l.width}, {"points", l.points}});
        rec["lanes"] = std::move(lanes);
        json tok = json::array();
        const int rows = s.tokens.rows(), cols = s.tokens.cols();
        for (int i = 0; i < rows; ++i) {
            json row = json::array();
            for (int j = 0; j < cols; ++j) row.push_back(s.tokens.at(i, j));
            tok.push_back(std::move(row));
        }
        rec["tokens"] = std::move(tok);
        rec["gt"] = s.gt;
        os << rec.dump() << "\n";
    }
    if (!os) throw error("write failed: " + path);
}

std::vector<SceneSample> read_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw error("cannot read dataset: " + path);
    std::vector<SceneSample> samples;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
            SceneSample s;
            s.id = rec.at("id");
            s.family = rec.at("family");
            s.label = rec.at("label");
            s.ego = ego_from_json(rec.at("ego"));
            for (const auto& a : rec.at("agents")) {
                AgentObs obs;
                obs.x = a.at("x");
                obs.y = a.at("y");
                obs.heading = a.at("heading");
                obs.vx = a.at("vx");
                obs.vy = a.at("vy");
                obs.length = a.at("length");
                obs.width = a.at("width");
                s.agents.push_back(obs);
            }
            for (const auto& l : rec.at("lanes")) {
                Lane lane;
                lane.width = l.at("width");
                for (const auto& p : l.at("points"))
                    lane.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
                s.lanes.push_back(std::move(lane));
            }
            const auto& tok = rec.at("tokens");
            const int rows = static_cast<int>(tok.size());
            const int cols = rows ? static_cast<int>(tok.at(0).size()) : 0;
            s.tokens = Tensor<double>({rows, cols});
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) s.tokens.at(i, j) = tok.at(i).at(j);
            for (const auto& p : rec.at("gt"))
                s.gt.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            samples.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw parse_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return samples;
}

void write_clusters(const ClusterModel& model, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw error("cannot write cluster model: " + path);
    json j;
    j["metric"] = "mean_pointwise_l2";
    j["horizon"] = model.horizon;
    j["names"] = model.names;
    json cents = json::array();
    for (int c = 0; c < model.count(); ++c) {
        json row = json::array();
        for (int k = 0; k < model.centroids.cols(); ++k) row.push_back(model.centroids.at(c, k));
        cents.push_back(std::move(row));
    }
    j["centroids"] = std::move(cents);
    os << j.dump(2) << "\n";
}

ClusterModel read_clusters(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw error("cannot read cluster model: " + path);
    json j;
    try {
        is >> j;
        ClusterModel model;
        model.horizon = j.at("horizon");
        model.names = j.at("names").get<std::vector<std::string>>();
        const auto& cents = j.at("centroids");
        const int c = static_cast<int>(cents.size());
        const int w = c ? static_cast<int>(cents.at(0).size()) : 0;
        model.centroids = Tensor<double>({c, w});
        for (int i = 0; i < c; ++i)
            for (int k = 0; k < w; ++k) model.centroids.at(i, k) = cents.at(i).at(k);
        return model;
    } catch (const json::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
}

Trajectory constant_velocity_prediction(const EgoState& ego, int horizon, double dt) {
    Trajectory out;
    const double vx = ego.speed * std::cos(ego.heading);
    const double vy = ego.speed * std::sin(ego.heading);
    for (int t = 1; t <= horizon; ++t) out.push_back({vx * dt * t, vy * dt * t});
    return out;
}

}  // namespace cola
