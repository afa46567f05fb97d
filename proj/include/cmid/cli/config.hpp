// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cmid/auxiliary/cmid.hpp"
#include "cmid/envs/point_mass.hpp"
#include "cmid/rl/sac.hpp"

namespace cmid::cli {

enum class Shift { none, reversed, uncorrelated };

inline Shift parse_shift(const std::string& s) {
    if (s == "none") return Shift::none;
    if (s == "reversed") return Shift::reversed;
    if (s == "uncorrelated") return Shift::uncorrelated;
    throw ConfigError("protocol.shift must be none, reversed or uncorrelated (got '" + s + "')");
}

inline std::string to_string(Shift s) {
    switch (s) {
        case Shift::none: return "none";
        case Shift::reversed: return "reversed";
        case Shift::uncorrelated: return "uncorrelated";
    }
    return "none";
}

inline envs::Phase shifted_phase(Shift s) {
    return s == Shift::uncorrelated ? envs::Phase::uncorrelated : envs::Phase::reversed;
}

struct ProtocolConfig {
    long total_steps = 40000;
    long shift_step = 30000;
    Shift shift = Shift::reversed;
    long eval_every = 5000;
    int eval_episodes = 10;
    int cell_episodes = 10;
    std::vector<std::uint64_t> seeds{1};
};

struct IoConfig {
    std::string out_dir = "runs/default";
    long checkpoint_every = 0;  // 0 writes only the shift-point and final checkpoints
};

struct SweepConfig {
    std::string axis;  // alpha | rho | history | k
    std::vector<double> values;
};

struct RunConfig {
    envs::EnvParams env;
    envs::CorrelationSpec correlation;
    rl::AgentConfig agent;
    auxiliary::CmidConfig cmid;
    ProtocolConfig protocol;
    IoConfig io;
    SweepConfig sweep;

    void validate() const {
        env.validate();
        correlation.validate();
        agent.validate();
        cmid.validate(agent.batch_size);
        if (protocol.total_steps <= 0) throw ConfigError("protocol.total_steps must be positive");
        if (protocol.shift != Shift::none && (protocol.shift_step < 0 || protocol.shift_step > protocol.total_steps)) {
            throw ConfigError("protocol.shift_step must lie in [0, protocol.total_steps]");
        }
        if (protocol.eval_every < 0) throw ConfigError("protocol.eval_every must be non-negative");
        if (protocol.eval_episodes <= 0) throw ConfigError("protocol.eval_episodes must be positive");
        if (protocol.cell_episodes < 0) throw ConfigError("protocol.cell_episodes must be non-negative");
        if (protocol.seeds.empty()) throw ConfigError("protocol.seeds must not be empty");
        if (io.out_dir.empty()) throw ConfigError("io.out_dir must not be empty");
        if (io.checkpoint_every < 0) throw ConfigError("io.checkpoint_every must be non-negative");
        if (!sweep.axis.empty() && sweep.axis != "alpha" && sweep.axis != "rho" && sweep.axis != "history" &&
            sweep.axis != "k") {
            throw ConfigError("sweep.axis must be alpha, rho, history or k");
        }
    }
};

namespace detail {

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

inline long to_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<long>(d);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
    const long d = to_long(key, v);
    if (d < 0) throw ConfigError(key + ": must be non-negative");
    return static_cast<std::size_t>(d);
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

// Field table keyed by the dotted name; std::map keeps serialisation sorted.
inline const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        auto real = [&t](const std::string& k, auto getter) {
            t[k] = {[getter](const RunConfig& c) { return fmt(*getter(const_cast<RunConfig&>(c))); },
                    [getter, k](RunConfig& c, const std::string& v) { *getter(c) = to_double(k, v); }};
        };
        auto integer = [&t](const std::string& k, auto getter) {
            t[k] = {[getter](const RunConfig& c) { return std::to_string(*getter(const_cast<RunConfig&>(c))); },
                    [getter, k](RunConfig& c, const std::string& v) {
                        using V = std::remove_reference_t<decltype(*getter(c))>;
                        if constexpr (std::is_same_v<V, std::size_t>) {
                            *getter(c) = to_size(k, v);
                        } else {
                            *getter(c) = static_cast<V>(to_long(k, v));
                        }
                    }};
        };
        auto boolean = [&t](const std::string& k, auto getter) {
            t[k] = {[getter](const RunConfig& c) {
                        return std::string(*getter(const_cast<RunConfig&>(c)) ? "true" : "false");
                    },
                    [getter, k](RunConfig& c, const std::string& v) { *getter(c) = to_bool(k, v); }};
        };

        t["env.mode"] = {[](const RunConfig& c) { return envs::to_string(c.env.mode); },
                         [](RunConfig& c, const std::string& v) { c.env.mode = envs::parse_obs_mode(v); }};
        real("env.rho", [](RunConfig& c) { return &c.correlation.rho; });
        boolean("env.greyscale", [](RunConfig& c) { return &c.correlation.greyscale; });
        integer("env.horizon", [](RunConfig& c) { return &c.env.horizon; });
        real("env.dt", [](RunConfig& c) { return &c.env.dt; });
        real("env.goal", [](RunConfig& c) { return &c.env.goal; });
        real("env.start_range", [](RunConfig& c) { return &c.env.start_range; });
        real("env.gain_a", [](RunConfig& c) { return &c.env.gain_a; });
        real("env.gain_b", [](RunConfig& c) { return &c.env.gain_b; });
        real("env.width_a", [](RunConfig& c) { return &c.env.width_a; });
        real("env.width_b", [](RunConfig& c) { return &c.env.width_b; });

        integer("agent.latent_dim", [](RunConfig& c) { return &c.agent.latent_dim; });
        integer("agent.encoder_hidden", [](RunConfig& c) { return &c.agent.encoder_hidden; });
        integer("agent.hidden", [](RunConfig& c) { return &c.agent.hidden; });
        integer("agent.stack", [](RunConfig& c) { return &c.agent.stack; });
        integer("agent.batch_size", [](RunConfig& c) { return &c.agent.batch_size; });
        real("agent.gamma", [](RunConfig& c) { return &c.agent.gamma; });
        real("agent.actor_lr", [](RunConfig& c) { return &c.agent.actor_lr; });
        real("agent.critic_lr", [](RunConfig& c) { return &c.agent.critic_lr; });
        real("agent.temperature_lr", [](RunConfig& c) { return &c.agent.temperature_lr; });
        real("agent.init_temperature", [](RunConfig& c) { return &c.agent.init_temperature; });
        real("agent.critic_tau", [](RunConfig& c) { return &c.agent.critic_tau; });
        real("agent.encoder_tau", [](RunConfig& c) { return &c.agent.encoder_tau; });
        integer("agent.actor_update_freq", [](RunConfig& c) { return &c.agent.actor_update_freq; });
        real("agent.log_std_min", [](RunConfig& c) { return &c.agent.log_std_min; });
        real("agent.log_std_max", [](RunConfig& c) { return &c.agent.log_std_max; });
        integer("agent.init_steps", [](RunConfig& c) { return &c.agent.init_steps; });
        integer("agent.capacity", [](RunConfig& c) { return &c.agent.capacity; });
        boolean("agent.augment", [](RunConfig& c) { return &c.agent.augment; });
        integer("agent.image_pad", [](RunConfig& c) { return &c.agent.image_pad; });
        real("agent.svea_alpha", [](RunConfig& c) { return &c.agent.svea_alpha; });
        real("agent.svea_beta", [](RunConfig& c) { return &c.agent.svea_beta; });

        boolean("cmid.enabled", [](RunConfig& c) { return &c.cmid.enabled; });
        real("cmid.alpha", [](RunConfig& c) { return &c.cmid.alpha; });
        integer("cmid.k", [](RunConfig& c) { return &c.cmid.k; });
        integer("cmid.history", [](RunConfig& c) { return &c.cmid.history; });
        t["cmid.variant"] = {[](const RunConfig& c) { return auxiliary::to_string(c.cmid.variant); },
                             [](RunConfig& c, const std::string& v) { c.cmid.variant = auxiliary::parse_objective(v); }};
        real("cmid.momentum_new_weight", [](RunConfig& c) { return &c.cmid.momentum_new_weight; });
        real("cmid.disc_lr", [](RunConfig& c) { return &c.cmid.disc_lr; });
        real("cmid.encoder_lr", [](RunConfig& c) { return &c.cmid.encoder_lr; });
        integer("cmid.disc_hidden", [](RunConfig& c) { return &c.cmid.disc_hidden; });
        t["cmid.disc_objective"] = {
            [](const RunConfig& c) { return auxiliary::to_string(c.cmid.disc_objective); },
            [](RunConfig& c, const std::string& v) { c.cmid.disc_objective = auxiliary::parse_disc_objective(v); }};
        integer("cmid.cadence", [](RunConfig& c) { return &c.cmid.cadence; });

        integer("protocol.total_steps", [](RunConfig& c) { return &c.protocol.total_steps; });
        integer("protocol.shift_step", [](RunConfig& c) { return &c.protocol.shift_step; });
        t["protocol.shift"] = {[](const RunConfig& c) { return to_string(c.protocol.shift); },
                               [](RunConfig& c, const std::string& v) { c.protocol.shift = parse_shift(v); }};
        integer("protocol.eval_every", [](RunConfig& c) { return &c.protocol.eval_every; });
        integer("protocol.eval_episodes", [](RunConfig& c) { return &c.protocol.eval_episodes; });
        integer("protocol.cell_episodes", [](RunConfig& c) { return &c.protocol.cell_episodes; });
        t["protocol.seeds"] = {[](const RunConfig& c) {
                                   std::string s;
                                   for (std::size_t i = 0; i < c.protocol.seeds.size(); ++i) {
                                       s += (i ? "," : "") + std::to_string(c.protocol.seeds[i]);
                                   }
                                   return s;
                               },
                               [](RunConfig& c, const std::string& v) {
                                   c.protocol.seeds.clear();
                                   for (const auto& s : split_list(v)) {
                                       c.protocol.seeds.push_back(to_size("protocol.seeds", s));
                                   }
                               }};

        t["io.out_dir"] = {[](const RunConfig& c) { return c.io.out_dir; },
                           [](RunConfig& c, const std::string& v) { c.io.out_dir = v; }};
        integer("io.checkpoint_every", [](RunConfig& c) { return &c.io.checkpoint_every; });

        t["sweep.axis"] = {[](const RunConfig& c) { return c.sweep.axis; },
                           [](RunConfig& c, const std::string& v) { c.sweep.axis = v; }};
        t["sweep.values"] = {[](const RunConfig& c) {
                                 std::string s;
                                 for (std::size_t i = 0; i < c.sweep.values.size(); ++i) {
                                     s += (i ? "," : "") + fmt(c.sweep.values[i]);
                                 }
                                 return s;
                             },
                             [](RunConfig& c, const std::string& v) {
                                 c.sweep.values.clear();
                                 for (const auto& s : split_list(v)) c.sweep.values.push_back(to_double("sweep.values", s));
                             }};
        return t;
    }();
    return table;
}

}  // namespace detail

/// Sets one dotted key; unknown keys are configuration errors.
inline void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& f = detail::fields();
    auto it = f.find(key);
    if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(cfg, value);
}

inline std::string get_key(const RunConfig& cfg, const std::string& key) {
    const auto& f = detail::fields();
    auto it = f.find(key);
    if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second.get(cfg);
}

/// Applies `key=value` text. Blank lines and lines starting with '#' are
/// ignored; errors name the line.
inline void apply_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        try {
            set_key(cfg, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    RunConfig cfg;
    apply_text(cfg, ss.str(), path);
    return cfg;
}

/// Every key with its effective value, sorted by key.
inline std::string serialise(const RunConfig& cfg) {
    std::string out;
    for (const auto& [k, f] : detail::fields()) out += k + " = " + f.get(cfg) + "\n";
    return out;
}

}  // namespace cmid::cli
