// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <deque>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "cmid/envs/point_mass.hpp"
#include "cmid/nn/autodiff.hpp"
#include "cmid/nn/checkpoint.hpp"
#include "cmid/nn/mlp.hpp"
#include "cmid/nn/optim.hpp"
#include "cmid/rl/augment.hpp"
#include "cmid/rl/replay.hpp"

namespace cmid::rl {

struct AgentConfig {
    std::size_t latent_dim = 56;
    std::size_t encoder_hidden = 64;
    std::size_t hidden = 256;
    std::size_t stack = 3;
    std::size_t action_dim = 1;
    std::size_t batch_size = 128;
    double gamma = 0.99;
    double actor_lr = 1e-3;
    double critic_lr = 1e-3;  // also the encoder's
    double temperature_lr = 1e-4;
    double init_temperature = 0.1;
    double critic_tau = 0.01;
    double encoder_tau = 0.05;
    int actor_update_freq = 2;
    double log_std_min = -10.0;
    double log_std_max = 2.0;
    int init_steps = 1000;
    std::size_t capacity = 100000;
    bool augment = false;
    int image_pad = 4;
    double svea_alpha = 0.5;
    double svea_beta = 0.5;
    /// Defaults to -action_dim when unset.
    std::optional<double> target_entropy;

    double entropy_target() const { return target_entropy.value_or(-static_cast<double>(action_dim)); }

    void validate() const {
        if (latent_dim == 0 || hidden == 0 || encoder_hidden == 0) throw ConfigError("agent: zero network width");
        if (stack == 0) throw ConfigError("agent.stack must be at least 1");
        if (batch_size == 0) throw ConfigError("agent.batch_size must be positive");
        if (!(gamma >= 0 && gamma < 1)) throw ConfigError("agent.gamma must lie in [0, 1)");
        if (!(log_std_min < log_std_max)) throw ConfigError("agent: log-std bounds out of order");
        if (actor_update_freq <= 0) throw ConfigError("agent.actor_update_freq must be positive");
        if (init_temperature <= 0) throw ConfigError("agent.init_temperature must be positive");
    }
};

// ---------------------------------------------------------------------------
// Pieces of the SAC losses, kept separate so they can be checked by hand.

/// Bellman target r + γ·(1−done)·(min(Q̄1, Q̄2) − α·log π(a′|s′)).
inline nn::Var critic_target(const nn::Var& reward, const nn::Var& not_done, double gamma, const nn::Var& q1_next,
                             const nn::Var& q2_next, double temperature, const nn::Var& log_prob_next) {
    auto v_next = nn::minimum(q1_next, q2_next) - log_prob_next * temperature;
    return nn::detach(reward + nn::mul(not_done, v_next) * gamma);
}

/// Mean squared error of both critics against the same target.
inline nn::Var critic_loss(const nn::Var& q1, const nn::Var& q2, const nn::Var& target) {
    return nn::mean(nn::square(q1 - target)) + nn::mean(nn::square(q2 - target));
}

/// log|d tanh(u)/du| = log(1 − tanh²u), in a form that stays finite.
inline nn::Var tanh_log_jacobian(const nn::Var& u) {
    return (nn::neg(u) - nn::softplus(u * -2.0) + std::numbers::ln2) * 2.0;
}

/// Maps an unbounded head output into [lo, hi] smoothly.
inline nn::Var bounded_log_std(const nn::Var& raw, double lo, double hi) {
    return (nn::tanh(raw) + 1.0) * (0.5 * (hi - lo)) + lo;
}

struct PolicySample {
    nn::Var action;    // [B × A], tanh-squashed
    nn::Var log_prob;  // [B × 1]
    nn::Var mean;      // pre-squash mean
    nn::Var log_std;
};

/// Reparameterised sample of a tanh-squashed diagonal Gaussian given the
/// actor head output [mean | raw log-std] and fixed standard-normal noise.
inline PolicySample squashed_gaussian(const nn::Var& head, const nn::Tensor& noise, double log_std_min,
                                      double log_std_max) {
    const std::size_t A = head.cols() / 2;
    auto mu = nn::slice_cols(head, 0, A);
    auto log_std = bounded_log_std(nn::slice_cols(head, A, A), log_std_min, log_std_max);
    auto eps = nn::Var::constant(noise);
    auto u = mu + nn::mul(nn::exp(log_std), eps);
    auto gauss = nn::scale(nn::square(eps), -0.5) - log_std - 0.5 * std::log(2.0 * std::numbers::pi);
    auto log_prob = nn::sum_cols(gauss - tanh_log_jacobian(u));
    return {nn::tanh(u), log_prob, mu, log_std};
}

// ---------------------------------------------------------------------------

/// All agent networks. The momentum encoder belongs here because it mirrors
/// the encoder's shape, but only the auxiliary update moves it.
struct AgentNets {
    nn::Mlp encoder;
    nn::Mlp target_encoder;
    nn::Mlp momentum_encoder;
    nn::Mlp actor;
    nn::Mlp critic1, critic2;
    nn::Mlp target_critic1, target_critic2;
    nn::Var log_temperature;

    double temperature() const { return std::exp(log_temperature.item()); }
};

struct UpdateStats {
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double temperature_loss = 0.0;
    double entropy = 0.0;
    bool actor_updated = false;
};

class SacAgent {
   public:
    SacAgent(AgentConfig cfg, std::size_t obs_dim, envs::ObsMode mode, Rng& init_rng)
        : cfg_(std::move(cfg)), obs_dim_(obs_dim), mode_(mode) {
        cfg_.validate();
        const std::size_t N = cfg_.latent_dim, A = cfg_.action_dim, S = cfg_.stack;
        nets_.encoder = nn::Mlp({{obs_dim, cfg_.encoder_hidden, N}, {}, true, 1.0}, init_rng);
        nets_.target_encoder = nets_.encoder.clone();
        nets_.momentum_encoder = nets_.encoder.clone();
        nets_.actor = nn::Mlp({{S * N, cfg_.hidden, 2 * A}, {}, false, 0.01}, init_rng);
        nets_.critic1 = nn::Mlp({{S * N + A, cfg_.hidden, 1}, {}, false, 0.01}, init_rng);
        nets_.critic2 = nn::Mlp({{S * N + A, cfg_.hidden, 1}, {}, false, 0.01}, init_rng);
        nets_.target_critic1 = nets_.critic1.clone();
        nets_.target_critic2 = nets_.critic2.clone();
        nets_.log_temperature = nn::Var::parameter(nn::Tensor::scalar(std::log(cfg_.init_temperature)));

        auto critic_params = nets_.critic1.parameters();
        for (auto& p : nets_.critic2.parameters()) critic_params.push_back(p);
        for (auto& p : nets_.encoder.parameters()) critic_params.push_back(p);
        critic_opt_ = nn::Adam(critic_params, cfg_.critic_lr);
        actor_opt_ = nn::Adam(nets_.actor.parameters(), cfg_.actor_lr);
        temperature_opt_ = nn::Adam({nets_.log_temperature}, cfg_.temperature_lr);
    }

    const AgentConfig& config() const { return cfg_; }
    AgentNets& nets() { return nets_; }
    const AgentNets& nets() const { return nets_; }
    std::size_t obs_dim() const { return obs_dim_; }
    envs::ObsMode mode() const { return mode_; }

    /// Encodes a sample-major frame stack [B·S × obs] into [B × S·N].
    nn::Var encode_stack(const nn::Mlp& encoder, const nn::Var& frames, bool track_params = true) const {
        const std::size_t S = cfg_.stack;
        if (frames.rows() % S != 0) throw ConfigError("encode_stack: rows not a multiple of the stack size");
        auto z = encoder.forward(frames, track_params);
        return nn::reshape(z, frames.rows() / S, S * cfg_.latent_dim);
    }

    nn::Var policy_input(const std::deque<std::vector<double>>& frames) const {
        if (frames.size() != cfg_.stack) throw UsageError("policy_input: wrong number of frames");
        nn::Tensor t = nn::Tensor::matrix(cfg_.stack, obs_dim_);
        for (std::size_t f = 0; f < frames.size(); ++f) {
            std::copy(frames[f].begin(), frames[f].end(), t.values.begin() + static_cast<std::ptrdiff_t>(f * obs_dim_));
        }
        return nn::detach(encode_stack(nets_.encoder, nn::Var::constant(std::move(t)), false));
    }

    /// Action for the most recent `stack` frames (oldest first). Deterministic
    /// mode returns tanh(mean).
    std::vector<double> act(const std::deque<std::vector<double>>& frames, bool deterministic, Rng& rng) const {
        auto head = nets_.actor.forward(policy_input(frames), false);
        const std::size_t A = cfg_.action_dim;
        std::vector<double> a(A);
        for (std::size_t j = 0; j < A; ++j) {
            double u = head.value().values[j];
            if (!deterministic) {
                const double raw = head.value().values[A + j];
                const double log_std =
                    cfg_.log_std_min + 0.5 * (cfg_.log_std_max - cfg_.log_std_min) * (std::tanh(raw) + 1.0);
                u += std::exp(log_std) * normal(rng);
            }
            a[j] = std::tanh(u);
        }
        return a;
    }

    nn::Tensor noise(std::size_t rows, Rng& rng) const {
        nn::Tensor t = nn::Tensor::matrix(rows, cfg_.action_dim);
        for (double& v : t.values) v = normal(rng);
        return t;
    }

    /// One critic (and encoder) step. Returns the loss value.
    double update_critic(const Batch& b, Rng& rng) {
        const double alpha = nets_.temperature();
        const auto next_frames = nn::Var::constant(b.next_obs_stack);
        auto z_next = encode_stack(nets_.encoder, next_frames, false);
        auto next = squashed_gaussian(nets_.actor.forward(z_next, false), noise(b.size, rng), cfg_.log_std_min,
                                      cfg_.log_std_max);
        auto zt_next = encode_stack(nets_.target_encoder, next_frames, false);
        auto q_in_next = nn::concat_cols({zt_next, nn::detach(next.action)});
        auto y = critic_target(nn::Var::constant(b.rewards), nn::Var::constant(b.not_done), cfg_.gamma,
                               nets_.target_critic1.forward(q_in_next, false),
                               nets_.target_critic2.forward(q_in_next, false), alpha, nn::detach(next.log_prob));

        const auto actions = nn::Var::constant(b.actions);
        auto loss_on = [&](const nn::Tensor& frames) {
            auto z = encode_stack(nets_.encoder, nn::Var::constant(frames));
            auto q_in = nn::concat_cols({z, actions});
            return critic_loss(nets_.critic1(q_in), nets_.critic2(q_in), y);
        };
        nn::Var loss;
        if (cfg_.augment && mode_ == envs::ObsMode::image16) {
            auto aug = augment_stacks(b.obs_stack, cfg_.stack, mode_, cfg_.image_pad, rng);
            loss = loss_on(b.obs_stack) * cfg_.svea_alpha + loss_on(aug) * cfg_.svea_beta;
        } else {
            loss = loss_on(b.obs_stack);
        }
        nn::check_finite(loss, "critic loss");
        critic_opt_.zero_grad();
        nn::backward(loss);
        critic_opt_.step();
        return loss.item();
    }

    /// Actor step on unaugmented frames with encoder gradients blocked, then
    /// the temperature step using the same policy sample.
    UpdateStats update_actor_and_temperature(const Batch& b, Rng& rng) {
        UpdateStats s;
        auto z = encode_stack(nets_.encoder, nn::Var::constant(b.obs_stack), false);
        auto pol = squashed_gaussian(nets_.actor(z), noise(b.size, rng), cfg_.log_std_min, cfg_.log_std_max);
        nn::check_finite(pol.log_prob, "policy log-probability");
        auto q_in = nn::concat_cols({z, pol.action});
        auto q = nn::minimum(nets_.critic1.forward(q_in, false), nets_.critic2.forward(q_in, false));
        auto actor_loss = nn::mean(pol.log_prob * nets_.temperature() - q);
        nn::check_finite(actor_loss, "actor loss");
        actor_opt_.zero_grad();
        nn::backward(actor_loss);
        actor_opt_.step();
        s.actor_loss = actor_loss.item();

        auto lp = nn::detach(pol.log_prob);
        s.entropy = -nn::mean(lp).item();
        auto t_loss = temperature_loss(nets_.log_temperature, lp, cfg_.entropy_target());
        temperature_opt_.zero_grad();
        nn::backward(t_loss);
        temperature_opt_.step();
        s.temperature_loss = t_loss.item();
        s.actor_updated = true;
        return s;
    }

    /// mean(α·(−log π − target entropy)) with α = exp(log α); only log α
    /// receives gradient.
    static nn::Var temperature_loss(const nn::Var& log_temperature, const nn::Var& log_prob, double target_entropy) {
        auto slack = nn::detach(nn::neg(log_prob) - target_entropy);
        return nn::mean(nn::mul_scalar(slack, nn::exp(log_temperature)));
    }

    void update_targets() {
        nn::soft_update(nets_.target_critic1.parameters(), nets_.critic1.parameters(), cfg_.critic_tau);
        nn::soft_update(nets_.target_critic2.parameters(), nets_.critic2.parameters(), cfg_.critic_tau);
        nn::soft_update(nets_.target_encoder.parameters(), nets_.encoder.parameters(), cfg_.encoder_tau);
    }

    /// Full RL update for one environment step.
    UpdateStats update(const Batch& b, long update_index, Rng& rng) {
        UpdateStats s;
        s.critic_loss = update_critic(b, rng);
        if (update_index % cfg_.actor_update_freq == 0) {
            const double c = s.critic_loss;
            s = update_actor_and_temperature(b, rng);
            s.critic_loss = c;
        }
        update_targets();
        return s;
    }

    nn::NamedTensors state_dict() const {
        nn::NamedTensors out;
        auto add = [&out](const nn::Mlp& m, const std::string& name) {
            for (auto& [k, v] : m.named_parameters(name)) out.emplace_back(k, v.value());
        };
        add(nets_.encoder, "encoder");
        add(nets_.target_encoder, "target_encoder");
        add(nets_.momentum_encoder, "momentum_encoder");
        add(nets_.actor, "actor");
        add(nets_.critic1, "critic1");
        add(nets_.critic2, "critic2");
        add(nets_.target_critic1, "target_critic1");
        add(nets_.target_critic2, "target_critic2");
        out.emplace_back("log_temperature", nets_.log_temperature.value());
        out.emplace_back("meta.obs_dim", nn::Tensor::scalar(static_cast<double>(obs_dim_)));
        out.emplace_back("meta.latent_dim", nn::Tensor::scalar(static_cast<double>(cfg_.latent_dim)));
        out.emplace_back("meta.action_dim", nn::Tensor::scalar(static_cast<double>(cfg_.action_dim)));
        return out;
    }

    void load_state_dict(const std::map<std::string, nn::Tensor>& state) {
        auto meta = [&state](const std::string& k) {
            auto it = state.find(k);
            if (it == state.end()) throw ConfigError("checkpoint: missing " + k);
            return static_cast<std::size_t>(it->second.item());
        };
        if (meta("meta.obs_dim") != obs_dim_ || meta("meta.latent_dim") != cfg_.latent_dim ||
            meta("meta.action_dim") != cfg_.action_dim) {
            throw ConfigError("checkpoint does not match the configured environment/agent dimensions");
        }
        auto load = [&state](const nn::Mlp& m, const std::string& name) {
            for (auto& [k, v] : m.named_parameters(name)) {
                auto it = state.find(k);
                if (it == state.end()) throw ConfigError("checkpoint: missing " + k);
                if (it->second.shape != v.shape()) throw ConfigError("checkpoint: shape mismatch for " + k);
                nn::Var p = v;
                p.mutable_value().values = it->second.values;
            }
        };
        load(nets_.encoder, "encoder");
        load(nets_.target_encoder, "target_encoder");
        load(nets_.momentum_encoder, "momentum_encoder");
        load(nets_.actor, "actor");
        load(nets_.critic1, "critic1");
        load(nets_.critic2, "critic2");
        load(nets_.target_critic1, "target_critic1");
        load(nets_.target_critic2, "target_critic2");
        auto it = state.find("log_temperature");
        if (it == state.end()) throw ConfigError("checkpoint: missing log_temperature");
        nets_.log_temperature.mutable_value().values = it->second.values;
    }

   private:
    AgentConfig cfg_;
    std::size_t obs_dim_;
    envs::ObsMode mode_;
    AgentNets nets_;
    nn::Adam critic_opt_;
    nn::Adam actor_opt_;
    nn::Adam temperature_opt_;
};

}  // namespace cmid::rl
