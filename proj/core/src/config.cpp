#include "cola/config.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>
#include <vector>

#include "cola/layout.hpp"

namespace cola {

namespace {

struct Field {
    const char* name;
    std::variant<int RunConfig::*, double RunConfig::*, std::string RunConfig::*,
                 uint64_t RunConfig::*>
        member;
};

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        {"dim", &RunConfig::dim},
        {"layers", &RunConfig::layers},
        {"heads", &RunConfig::heads},
        {"ff_dim", &RunConfig::ff_dim},
        {"max_seq_len", &RunConfig::max_seq_len},
        {"dropout", &RunConfig::dropout},
        {"prompt_len", &RunConfig::prompt_len},
        {"vision_tokens", &RunConfig::vision_tokens},
        {"top_k", &RunConfig::top_k},
        {"meta_actions", &RunConfig::meta_actions},
        {"candidates", &RunConfig::candidates},
        {"tau_start", &RunConfig::tau_start},
        {"tau_end", &RunConfig::tau_end},
        {"focal_gamma", &RunConfig::focal_gamma},
        {"horizon", &RunConfig::horizon},
        {"step_dt", &RunConfig::step_dt},
        {"scales", &RunConfig::scales},
        {"strategy", &RunConfig::strategy},
        {"huber_delta", &RunConfig::huber_delta},
        {"w_focal", &RunConfig::w_focal},
        {"w_reg", &RunConfig::w_reg},
        {"w_conf", &RunConfig::w_conf},
        {"lr", &RunConfig::lr},
        {"weight_decay", &RunConfig::weight_decay},
        {"lr_floor", &RunConfig::lr_floor},
        {"train_steps", &RunConfig::train_steps},
        {"batch_size", &RunConfig::batch_size},
        {"log_every", &RunConfig::log_every},
        {"feature_dim", &RunConfig::feature_dim},
        {"v_min", &RunConfig::v_min},
        {"v_max", &RunConfig::v_max},
        {"noise_pos", &RunConfig::noise_pos},
        {"noise_rate", &RunConfig::noise_rate},
        {"kmeans_iters", &RunConfig::kmeans_iters},
        {"replan_hz", &RunConfig::replan_hz},
        {"physics_dt", &RunConfig::physics_dt},
        {"episode_duration", &RunConfig::episode_duration},
        {"v_ref", &RunConfig::v_ref},
        {"seed", &RunConfig::seed},
    };
    return f;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key != f.name) continue;
        try {
            if (auto* m = std::get_if<int RunConfig::*>(&f.member))
                this->**m = std::stoi(value);
            else if (auto* m = std::get_if<double RunConfig::*>(&f.member))
                this->**m = std::stod(value);
            else if (auto* m = std::get_if<uint64_t RunConfig::*>(&f.member))
                this->**m = std::stoull(value);
            else
                this->*std::get<std::string RunConfig::*>(f.member) = value;
        } catch (const std::exception&) {
            throw config_error("bad value for '" + key + "': " + value);
        }
        return;
    }
    throw config_error("unknown config key: " + key);
}

void RunConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("cannot open config: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(lineno) + ": expected key=value");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    validate();
}

std::string RunConfig::echo() const {
    std::ostringstream os;
    os.precision(17);
    for (const auto& f : fields()) {
        os << f.name << "=";
        if (auto* m = std::get_if<int RunConfig::*>(&f.member))
            os << this->**m;
        else if (auto* m = std::get_if<double RunConfig::*>(&f.member))
            os << this->**m;
        else if (auto* m = std::get_if<uint64_t RunConfig::*>(&f.member))
            os << this->**m;
        else
            os << this->*std::get<std::string RunConfig::*>(f.member);
        os << "\n";
    }
    return os.str();
}

void RunConfig::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw error("cannot write config: " + path);
    os << echo();
}

void RunConfig::validate() const {
    if (dim <= 0 || dim % heads != 0) throw config_error("dim must be a positive multiple of heads");
    if (top_k < 1 || top_k > vision_tokens) throw config_error("top_k must be in [1, vision_tokens]");
    if (candidates < 1 || candidates > meta_actions)
        throw config_error("candidates must be in [1, meta_actions]");
    if (horizon < scales) throw config_error("horizon must be >= scales");
    if (tau_start <= 0 || tau_end <= 0) throw config_error("gumbel temperature must be positive");
    parse_strategy(strategy);
    const int plan_len = top_k + 3 * horizon;  // loose upper bound on planner layout length
    const int pass1_len = prompt_len + vision_tokens + 1;
    if (max_seq_len < std::max(plan_len, pass1_len))
        throw config_error("max_seq_len too small for configured layouts");
}

}  // namespace cola
