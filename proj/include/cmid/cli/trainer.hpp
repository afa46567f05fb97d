// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmid/auxiliary/cmid.hpp"
#include "cmid/cli/config.hpp"
#include "cmid/eval/shift.hpp"
#include "cmid/nn/checkpoint.hpp"
#include "cmid/rl/replay.hpp"
#include "cmid/rl/sac.hpp"

namespace cmid::cli {

/// Agent plus optional auxiliary task, built from a config and a seed with
/// one named random stream per consumer.
struct Learner {
    std::unique_ptr<rl::SacAgent> agent;
    std::unique_ptr<auxiliary::CmidAuxiliary> cmid;

    Learner(const RunConfig& cfg, std::uint64_t seed) {
        Rng init = substream(seed, "agent-init");
        agent = std::make_unique<rl::SacAgent>(cfg.agent, envs::obs_dim(cfg.env.mode), cfg.env.mode, init);
        if (cfg.cmid.enabled) {
            Rng cmid_init = substream(seed, "cmid-init");
            cmid = std::make_unique<auxiliary::CmidAuxiliary>(cfg.cmid, cfg.agent.latent_dim, cfg.agent.action_dim,
                                                              cmid_init, substream(seed, "permutation"));
        }
    }

    nn::NamedTensors state_dict(long env_step) const {
        auto out = agent->state_dict();
        if (cmid) {
            for (auto& kv : cmid->state_dict()) out.push_back(std::move(kv));
        }
        out.emplace_back("meta.env_step", nn::Tensor::scalar(static_cast<double>(env_step)));
        return out;
    }

    void load(const std::filesystem::path& path) {
        if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
        const auto state = nn::load_checkpoint(path.string());
        agent->load_state_dict(state);
        if (cmid) cmid->load_state_dict(state);
    }
};

struct TrainResult {
    std::string status = "ok";  // ok | aborted
    std::string message;
    long steps_done = 0;
    long episodes = 0;
    std::optional<eval::ShiftReport> zero_shot;
    double final_eval_return = std::nan("");
};

namespace detail {

inline std::string num(double v) {
    if (!std::isfinite(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Running {
    double sum = 0.0;
    long n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    double mean() const { return n ? sum / static_cast<double>(n) : std::nan(""); }
};

inline double evaluate_now(const rl::SacAgent& agent, const RunConfig& cfg, envs::Phase phase, int episodes,
                           std::uint64_t seed, long step) {
    envs::PointMassEnv env(cfg.env, {cfg.correlation.rho, phase, cfg.correlation.greyscale},
                           substream(seed ^ static_cast<std::uint64_t>(step), "eval-periodic"));
    const auto policy = eval::agent_policy(agent);
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        const auto first = env.reset();
        total += eval::run_episode(env, first, policy, cfg.agent.stack);
    }
    return total / episodes;
}

}  // namespace detail

inline eval::ShiftEvalConfig shift_eval_config(const RunConfig& cfg) {
    eval::ShiftEvalConfig s;
    s.phases = {shifted_phase(cfg.protocol.shift), cfg.correlation.phase};
    s.rho = cfg.correlation.rho;
    s.greyscale = cfg.correlation.greyscale;
    s.episodes = cfg.protocol.eval_episodes;
    s.cell_episodes = cfg.protocol.cell_episodes;
    s.stack = cfg.agent.stack;
    return s;
}

/// One training run for one seed, writing into `dir`:
///   config.txt      effective configuration
///   metrics.csv     one row per finished episode
///   episodes.csv    factor draws per episode
///   evals.csv       periodic deterministic evaluations
///   zero_shot/      shift-point report (when a shift is configured)
///   shift.ckpt, final.ckpt, step_<n>.ckpt
///   last_good.ckpt  parameters at the last finished episode, after an abort
///   summary.json
/// The shift-point evaluation runs before any update under the shifted
/// correlation, which governs every episode that starts at or after the
/// shift step.
inline TrainResult run_train(const RunConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir) {
    cfg.validate();
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "config.txt");
        os << serialise(cfg);
    }
    Learner learner(cfg, seed);
    rl::SacAgent& agent = *learner.agent;
    const auto& acfg = cfg.agent;
    const std::size_t history = cfg.cmid.enabled ? cfg.cmid.effective_history() : 0;

    envs::CorrelationSpec spec = cfg.correlation;
    envs::PointMassEnv env(cfg.env, spec, substream(seed, "env"));
    rl::ReplayBuffer replay(acfg.capacity, env.obs_dim(), acfg.action_dim);
    Rng action_rng = substream(seed, "action");
    Rng batch_rng = substream(seed, "batch");
    Rng update_rng = substream(seed, "update");
    Rng augment_rng = substream(seed, "augment");

    std::ofstream metrics(dir / "metrics.csv"), episodes_csv(dir / "episodes.csv"), evals(dir / "evals.csv");
    metrics << "env_step,episode_return,critic_loss,actor_loss,temperature,disc_loss,adv_loss,phase\n";
    episodes_csv << "episode,start_step,phase,variant,colour\n";
    evals << "env_step,phase,mean_return\n";

    TrainResult res;
    auto save = [&](const std::string& name, long step) {
        nn::save_checkpoint((dir / name).string(), learner.state_dict(step));
    };

    long episode = 0, update_index = 0, last_good_step = 0;
    double ep_return = 0.0;
    nn::NamedTensors last_good = learner.state_dict(0);
    detail::Running critic, actor, disc, adv;
    auto obs = env.reset();
    episodes_csv << episode << ",0," << envs::to_string(spec.phase) << ',' << envs::to_string(env.state().variant)
                 << ',' << envs::to_string(env.state().colour_label) << '\n';
    std::deque<std::vector<double>> frames(acfg.stack, obs.values);
    const bool shifting = cfg.protocol.shift != Shift::none;

    bool shifted = false;
    auto apply_shift = [&](long step) {
        save("shift.ckpt", step);
        res.zero_shot = eval::shift_eval({{seed, eval::agent_policy(agent)}}, cfg.env, shift_eval_config(cfg));
        eval::write_shift_report(dir / "zero_shot", *res.zero_shot);
        spec.phase = shifted_phase(cfg.protocol.shift);
        env.set_spec(spec);
        shifted = true;
    };

    try {
        for (long t = 0; t < cfg.protocol.total_steps; ++t) {
            if (shifting && !shifted && t == cfg.protocol.shift_step) apply_shift(t);

            std::vector<double> action(acfg.action_dim);
            if (t < acfg.init_steps) {
                for (double& a : action) a = uniform(action_rng, -1.0, 1.0);
            } else {
                action = agent.act(frames, false, action_rng);
            }
            const auto state_before = env.state();
            const auto r = env.step(action[0]);
            auto next = env.observe();
            replay.add({obs.values, action, r.reward, next.values, false, episode, state_before.step});
            ep_return += r.reward;

            if (t >= acfg.init_steps) {
                const auto batch = replay.sample(acfg.batch_size, acfg.stack, history, batch_rng);
                const auto s = agent.update(batch, update_index, update_rng);
                critic.add(s.critic_loss);
                if (s.actor_updated) actor.add(s.actor_loss);
                if (learner.cmid && update_index % cfg.cmid.cadence == 0) {
                    const auto cs = learner.cmid->update(agent, batch, augment_rng);
                    if (cs.ran) {
                        disc.add(cs.disc_loss);
                        adv.add(cs.adv_loss);
                    }
                }
                ++update_index;
            }

            frames.pop_front();
            frames.push_back(next.values);
            obs = std::move(next);
            const long env_step = t + 1;

            if (r.done) {
                metrics << env_step << ',' << detail::num(ep_return) << ',' << detail::num(critic.mean()) << ','
                        << detail::num(actor.mean()) << ',' << detail::num(agent.nets().temperature()) << ','
                        << detail::num(disc.mean()) << ',' << detail::num(adv.mean()) << ','
                        << envs::to_string(spec.phase) << '\n';
                ++episode;
                ep_return = 0.0;
                last_good = learner.state_dict(env_step);
                last_good_step = env_step;
                critic = actor = disc = adv = {};
                // a shift on an episode boundary already governs the next episode
                if (shifting && !shifted && env_step == cfg.protocol.shift_step) apply_shift(env_step);
                obs = env.reset();
                frames.assign(acfg.stack, obs.values);
                episodes_csv << episode << ',' << env_step << ',' << envs::to_string(spec.phase) << ','
                             << envs::to_string(env.state().variant) << ','
                             << envs::to_string(env.state().colour_label) << '\n';
            }
            if (cfg.protocol.eval_every > 0 && env_step % cfg.protocol.eval_every == 0) {
                evals << env_step << ',' << envs::to_string(spec.phase) << ','
                      << detail::num(detail::evaluate_now(agent, cfg, spec.phase, cfg.protocol.eval_episodes, seed,
                                                          env_step))
                      << '\n';
            }
            if (cfg.io.checkpoint_every > 0 && env_step % cfg.io.checkpoint_every == 0) {
                save("step_" + std::to_string(env_step) + ".ckpt", env_step);
            }
            res.steps_done = env_step;
        }
        if (shifting && !shifted) apply_shift(cfg.protocol.total_steps);
        res.final_eval_return = detail::evaluate_now(agent, cfg, spec.phase, cfg.protocol.eval_episodes, seed,
                                                     cfg.protocol.total_steps + 1);
        save("final.ckpt", res.steps_done);
    } catch (const NumericError& e) {
        res.status = "aborted";
        res.message = std::string(e.what()) + " (parameters at step " + std::to_string(last_good_step) +
                      " kept in last_good.ckpt)";
        nn::save_checkpoint((dir / "last_good.ckpt").string(), last_good);
    }
    res.episodes = episode;
    metrics.flush();

    nlohmann::json j;
    j["seed"] = seed;
    j["status"] = res.status;
    if (!res.message.empty()) j["message"] = res.message;
    j["steps_done"] = res.steps_done;
    j["episodes"] = res.episodes;
    j["cmid_enabled"] = cfg.cmid.enabled;
    j["final_eval_return"] = std::isfinite(res.final_eval_return) ? nlohmann::json(res.final_eval_return) : nullptr;
    if (res.zero_shot) j["zero_shot"] = eval::to_json(*res.zero_shot);
    std::ofstream(dir / "summary.json") << j.dump(2) << '\n';
    return res;
}

inline std::filesystem::path seed_dir(const std::filesystem::path& root, std::uint64_t seed) {
    return root / ("seed_" + std::to_string(seed));
}

/// Config key a sweep axis writes to.
inline std::string sweep_key(const std::string& axis) {
    if (axis == "alpha") return "cmid.alpha";
    if (axis == "rho") return "env.rho";
    if (axis == "history") return "cmid.history";
    if (axis == "k") return "cmid.k";
    throw ConfigError("sweep.axis must be alpha, rho, history or k");
}

struct SweepRow {
    std::string value;
    std::uint64_t seed = 0;
    TrainResult result;
};

/// One run per axis value and seed, every value reusing the same seeds,
/// under root/<axis>_<value>/seed_<s>. Writes root/sweep.csv.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, const std::filesystem::path& root) {
    base.validate();
    if (base.sweep.axis.empty() || base.sweep.values.empty()) {
        throw ConfigError("sweep needs sweep.axis and sweep.values");
    }
    const std::string key = sweep_key(base.sweep.axis);
    std::vector<std::pair<std::string, RunConfig>> runs;
    for (double v : base.sweep.values) {
        RunConfig cfg = base;
        // integer axes take the value without a fractional part
        const std::string text = (base.sweep.axis == "history" || base.sweep.axis == "k")
                                     ? std::to_string(static_cast<long>(std::llround(v)))
                                     : detail::num(v);
        set_key(cfg, key, text);
        cfg.sweep = {};
        cfg.validate();
        runs.emplace_back(get_key(cfg, key), std::move(cfg));
    }
    std::vector<SweepRow> rows;
    std::filesystem::create_directories(root);
    std::ofstream table(root / "sweep.csv");
    table << "axis,value,seed,status,final_eval_return,zero_shot_return\n";
    for (const auto& [value, cfg] : runs) {
        for (std::uint64_t seed : cfg.protocol.seeds) {
            const auto dir = seed_dir(root / (base.sweep.axis + "_" + value), seed);
            auto res = run_train(cfg, seed, dir);
            table << base.sweep.axis << ',' << value << ',' << seed << ',' << res.status << ','
                  << detail::num(res.final_eval_return) << ','
                  << detail::num(res.zero_shot ? res.zero_shot->zero_shot_return() : std::nan("")) << '\n';
            table.flush();
            rows.push_back({value, seed, std::move(res)});
        }
    }
    return rows;
}

}  // namespace cmid::cli
