// SPDX-License-Identifier: Apache-2.0
#pragma once

// Conditional mutual information minimisation between latent features.
//
// For each feature n the discriminator sees [z | c^n] where c^n holds the
// momentum encoder's previous value of feature n (slotted into an N-vector)
// and the previous action. True samples come straight from the batch;
// permuted samples keep z^n and take z^{-n} from a k-nearest neighbour in
// c^n, which approximates p(z^n, c) p(z^{-n} | c). Signs follow
//
//   L_D = 1/N Σ_n [ log σ(D(z, c^n)) + log(1 − σ(D(z_perm^n, c^n))) ]
//   L_A = α/N Σ_n   log(1 − σ(D(z, c^n)))
//
// so permuted samples are the discriminator's positive class and the encoder
// is pushed to make true samples look permuted. Taken literally, minimising
// L_D maximises a log-likelihood: wherever true and permuted rows overlap the
// logits run away to the clamp and the discriminator stops learning. By
// default φ therefore descends the binary cross entropy with the same labels,
//
//   L_BCE = 1/N Σ_n [ −log(1 − σ(D(z, c^n))) − log σ(D(z_perm^n, c^n)) ],
//
// while L_D is still the value reported. `disc_objective = literal` descends
// L_D itself.

#include <string>
#include <vector>

#include "cmid/auxiliary/knn_permute.hpp"
#include "cmid/nn/autodiff.hpp"
#include "cmid/nn/mlp.hpp"
#include "cmid/nn/optim.hpp"
#include "cmid/rl/augment.hpp"
#include "cmid/rl/replay.hpp"
#include "cmid/rl/sac.hpp"

namespace cmid::auxiliary {

enum class Objective { cmid, mi };

inline Objective parse_objective(const std::string& s) {
    if (s == "cmid") return Objective::cmid;
    if (s == "mi") return Objective::mi;
    throw ConfigError("unknown cmid.variant '" + s + "' (cmid|mi)");
}
inline std::string to_string(Objective v) { return v == Objective::cmid ? "cmid" : "mi"; }

enum class DiscObjective { bce, literal };

inline DiscObjective parse_disc_objective(const std::string& s) {
    if (s == "bce") return DiscObjective::bce;
    if (s == "literal") return DiscObjective::literal;
    throw ConfigError("unknown cmid.disc_objective '" + s + "' (bce|literal)");
}
inline std::string to_string(DiscObjective v) { return v == DiscObjective::bce ? "bce" : "literal"; }

struct CmidConfig {
    bool enabled = false;
    double alpha = 0.5;
    std::size_t k = 5;
    std::size_t history = 1;
    Objective variant = Objective::cmid;
    double momentum_new_weight = 0.01;
    double disc_lr = 1e-2;
    /// Adam learning rate of the adversarial encoder step.
    double encoder_lr = 1e-3;
    std::size_t disc_hidden = 256;
    DiscObjective disc_objective = DiscObjective::bce;
    int cadence = 1;

    /// Conditioning history actually used; the unconditional variant has none.
    std::size_t effective_history() const { return variant == Objective::mi ? 0 : history; }

    void validate(std::size_t batch_size) const {
        if (k == 0 || k >= batch_size) throw ConfigError("cmid.k must satisfy 1 <= k < batch size");
        if (variant == Objective::cmid && history == 0) {
            throw ConfigError("cmid.history = 0 requires cmid.variant = mi");
        }
        if (!(alpha >= 0)) throw ConfigError("cmid.alpha must be non-negative");
        if (!(momentum_new_weight >= 0 && momentum_new_weight <= 1)) {
            throw ConfigError("cmid.momentum_new_weight must lie in [0, 1]");
        }
        if (!(disc_lr >= 0)) throw ConfigError("cmid.disc_lr must be non-negative");
        if (!(encoder_lr >= 0)) throw ConfigError("cmid.encoder_lr must be non-negative");
        if (cadence <= 0) throw ConfigError("cmid.cadence must be positive");
        if (disc_hidden == 0) throw ConfigError("cmid.disc_hidden must be positive");
    }
};

inline constexpr double kSigmoidClamp = 1e-6;

/// log(clamp(σ(x))) with σ kept inside [1e-6, 1 − 1e-6].
inline nn::Var clamped_log_sigmoid(const nn::Var& logits) {
    return nn::log(nn::clamp(nn::sigmoid(logits), kSigmoidClamp, 1.0 - kSigmoidClamp));
}
/// log(1 − clamp(σ(x))), computed as log(clamp(σ(−x))).
inline nn::Var clamped_log_one_minus_sigmoid(const nn::Var& logits) {
    return clamped_log_sigmoid(nn::neg(logits));
}

/// Discriminator loss from logits on true and permuted rows stacked over all
/// features (N·B rows each). Averaging over the stacked rows equals the
/// per-feature batch mean followed by the 1/N feature average.
inline nn::Var discriminator_loss(const nn::Var& true_logits, const nn::Var& perm_logits) {
    auto loss = nn::mean(clamped_log_sigmoid(true_logits)) + nn::mean(clamped_log_one_minus_sigmoid(perm_logits));
    nn::check_finite(loss, "discriminator loss");
    return loss;
}

/// Cross entropy with permuted rows labelled 1 and true rows labelled 0.
inline nn::Var discriminator_bce_loss(const nn::Var& true_logits, const nn::Var& perm_logits) {
    auto loss = -(nn::mean(clamped_log_one_minus_sigmoid(true_logits)) + nn::mean(clamped_log_sigmoid(perm_logits)));
    nn::check_finite(loss, "discriminator loss");
    return loss;
}

/// The loss the discriminator descends under `objective`.
inline nn::Var discriminator_objective(const nn::Var& true_logits, const nn::Var& perm_logits,
                                       DiscObjective objective) {
    return objective == DiscObjective::bce ? discriminator_bce_loss(true_logits, perm_logits)
                                           : discriminator_loss(true_logits, perm_logits);
}

inline nn::Var adversarial_loss(const nn::Var& true_logits, double alpha) {
    auto loss = nn::mean(clamped_log_one_minus_sigmoid(true_logits)) * alpha;
    nn::check_finite(loss, "adversarial loss");
    return loss;
}

/// Fraction of rows classified correctly, with σ > 0.5 read as "permuted".
inline double discriminator_accuracy(const nn::Tensor& true_logits, const nn::Tensor& perm_logits) {
    std::size_t correct = 0;
    for (double v : true_logits.values) correct += v < 0.0;
    for (double v : perm_logits.values) correct += v > 0.0;
    return static_cast<double>(correct) / static_cast<double>(true_logits.size() + perm_logits.size());
}

/// Stacks [latents | c^n] for n = 0..N-1 into an [N·B × (N + C)] matrix.
inline nn::Tensor stack_inputs(const std::vector<nn::Tensor>& latents_per_feature,
                               const std::vector<nn::Tensor>& cond_per_feature) {
    const std::size_t N = latents_per_feature.size();
    const std::size_t B = latents_per_feature[0].rows();
    const std::size_t L = latents_per_feature[0].cols(), C = cond_per_feature[0].cols();
    nn::Tensor out = nn::Tensor::matrix(N * B, L + C);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t b = 0; b < B; ++b) {
            double* row = out.values.data() + (n * B + b) * (L + C);
            std::copy_n(latents_per_feature[n].values.data() + b * L, L, row);
            std::copy_n(cond_per_feature[n].values.data() + b * C, C, row + L);
        }
    }
    return out;
}

/// Differentiable version for the encoder pass: rows [z | c^n] for every n,
/// where only z carries gradient.
inline nn::Var stack_true_inputs(const nn::Var& z, const std::vector<nn::Tensor>& cond_per_feature) {
    const std::size_t N = cond_per_feature.size();
    std::vector<nn::Var> blocks;
    blocks.reserve(N);
    for (std::size_t n = 0; n < N; ++n) {
        if (cond_per_feature[n].cols() == 0) {
            blocks.push_back(z);
        } else {
            blocks.push_back(nn::concat_cols({z, nn::Var::constant(cond_per_feature[n])}));
        }
    }
    return nn::concat_rows(blocks);
}

struct CmidStats {
    double disc_loss = 0.0;
    double adv_loss = 0.0;
    double disc_accuracy = 0.0;
    std::size_t samples = 0;
    bool ran = false;
};

/// Intermediate quantities of one auxiliary step, exposed for diagnostics.
struct CmidPass {
    std::vector<std::size_t> rows;           // batch rows used
    nn::Var z;                               // [B' × N] online latents, with graph
    std::vector<nn::Tensor> conditioning;    // per feature [B' × C]
    std::vector<PermutedBatch> permutations; // per feature
};

class CmidAuxiliary {
   public:
    CmidAuxiliary(CmidConfig cfg, std::size_t latent_dim, std::size_t action_dim, Rng& init_rng, Rng perm_rng)
        : cfg_(cfg), latent_dim_(latent_dim), action_dim_(action_dim), perm_rng_(std::move(perm_rng)) {
        const std::size_t in = latent_dim + conditioning_width();
        disc_ = nn::Mlp({{in, cfg_.disc_hidden, 1}, {}, false, 1.0}, init_rng);
        disc_opt_ = nn::Adam(disc_.parameters(), cfg_.disc_lr);
    }

    const CmidConfig& config() const { return cfg_; }
    nn::Mlp& discriminator() { return disc_; }
    const nn::Mlp& discriminator() const { return disc_; }

    std::size_t conditioning_width() const { return cfg_.effective_history() * (latent_dim_ + action_dim_); }

    /// Conditioning sets for every feature from the momentum encoder on the
    /// batch's previous frames (rows restricted to `rows`).
    std::vector<nn::Tensor> conditioning(const rl::SacAgent& agent, const rl::Batch& b,
                                         const std::vector<std::size_t>& rows) const {
        const std::size_t h = cfg_.effective_history(), B = rows.size();
        if (h > b.history) {
            throw ConfigError("cmid: history " + std::to_string(h) + " exceeds the " + std::to_string(b.history) +
                              " steps stored in the batch");
        }
        std::vector<nn::Tensor> prev_z, prev_a;
        for (std::size_t j = 0; j < h; ++j) {
            nn::Tensor frames = nn::Tensor::matrix(B, b.prev_obs.cols());
            nn::Tensor acts = nn::Tensor::matrix(B, b.prev_actions.cols());
            for (std::size_t r = 0; r < B; ++r) {
                const std::size_t src = j * b.size + rows[r];
                std::copy_n(b.prev_obs.values.data() + src * frames.cols(), frames.cols(),
                            frames.values.data() + r * frames.cols());
                std::copy_n(b.prev_actions.values.data() + src * acts.cols(), acts.cols(),
                            acts.values.data() + r * acts.cols());
            }
            // stop-gradient: the momentum encoder's output enters as a constant
            prev_z.push_back(agent.nets().momentum_encoder.forward(nn::Var::constant(frames), false).value());
            prev_a.push_back(std::move(acts));
        }
        std::vector<nn::Tensor> out;
        for (std::size_t n = 0; n < latent_dim_; ++n) out.push_back(build_conditioning(prev_z, prev_a, n, h, B));
        return out;
    }

    /// Online latents, conditioning sets and fresh permutations for a batch.
    CmidPass prepare(const rl::SacAgent& agent, const rl::Batch& b, Rng& aug_rng) {
        CmidPass pass;
        const bool need_history = cfg_.effective_history() > 0;
        for (std::size_t i = 0; i < b.size; ++i) {
            if (!need_history || b.has_history[i]) pass.rows.push_back(i);
        }
        if (pass.rows.size() <= cfg_.k) return pass;

        const std::size_t B = pass.rows.size(), D = b.obs.cols();
        nn::Tensor obs = nn::Tensor::matrix(B, D);
        const auto& acfg = agent.config();
        for (std::size_t r = 0; r < B; ++r) {
            std::span<const double> src(b.obs.values.data() + pass.rows[r] * D, D);
            auto row = acfg.augment ? rl::random_shift_augment(src, agent.mode(), acfg.image_pad, aug_rng)
                                    : std::vector<double>(src.begin(), src.end());
            std::copy(row.begin(), row.end(), obs.values.begin() + static_cast<std::ptrdiff_t>(r * D));
        }
        pass.z = agent.nets().encoder.forward(nn::Var::constant(std::move(obs)));
        pass.conditioning = conditioning(agent, b, pass.rows);
        for (std::size_t n = 0; n < latent_dim_; ++n) {
            pass.permutations.push_back(knn_permute(pass.z.value(), pass.conditioning[n], n, cfg_.k, perm_rng_));
        }
        return pass;
    }

    /// Discriminator step, then the adversarial encoder step with the
    /// discriminator frozen, then the momentum-encoder update. The RL update
    /// for the same batch is expected to have run already.
    CmidStats update(rl::SacAgent& agent, const rl::Batch& b, Rng& aug_rng) {
        CmidStats s;
        CmidPass pass = prepare(agent, b, aug_rng);
        if (pass.permutations.empty()) return s;
        s.samples = pass.rows.size();

        std::vector<nn::Tensor> perm_latents, true_latents(latent_dim_, pass.z.value());
        for (const auto& p : pass.permutations) perm_latents.push_back(p.latents);
        const auto true_in = nn::Var::constant(stack_inputs(true_latents, pass.conditioning));
        const auto perm_in = nn::Var::constant(stack_inputs(perm_latents, pass.conditioning));
        auto d_true = disc_(true_in);
        auto d_perm = disc_(perm_in);
        auto l_d = discriminator_loss(d_true, d_perm);
        s.disc_accuracy = discriminator_accuracy(d_true.value(), d_perm.value());
        s.disc_loss = l_d.item();
        disc_opt_.zero_grad();
        nn::backward(cfg_.disc_objective == DiscObjective::literal ? l_d
                                                                   : discriminator_bce_loss(d_true, d_perm));
        disc_opt_.step();

        auto l_a = adversarial_loss(disc_.forward(stack_true_inputs(pass.z, pass.conditioning), false), cfg_.alpha);
        ensure_encoder_opt(agent);
        encoder_opt_.zero_grad();
        nn::backward(l_a);
        encoder_opt_.step();
        s.adv_loss = l_a.item();

        nn::soft_update(agent.nets().momentum_encoder.parameters(), agent.nets().encoder.parameters(),
                        cfg_.momentum_new_weight);
        s.ran = true;
        return s;
    }

    nn::NamedTensors state_dict() const {
        nn::NamedTensors out;
        for (auto& [k, v] : disc_.named_parameters("discriminator")) out.emplace_back(k, v.value());
        return out;
    }

    void load_state_dict(const std::map<std::string, nn::Tensor>& state) {
        for (auto& [k, v] : disc_.named_parameters("discriminator")) {
            auto it = state.find(k);
            if (it == state.end()) continue;  // checkpoints of runs without the auxiliary task
            if (it->second.shape != v.shape()) throw ConfigError("checkpoint: shape mismatch for " + k);
            nn::Var p = v;
            p.mutable_value().values = it->second.values;
        }
    }

   private:
    void ensure_encoder_opt(rl::SacAgent& agent) {
        if (encoder_opt_.params().empty()) {
            encoder_opt_ = nn::Adam(agent.nets().encoder.parameters(), cfg_.encoder_lr);
        }
    }

    CmidConfig cfg_;
    std::size_t latent_dim_;
    std::size_t action_dim_;
    Rng perm_rng_;
    nn::Mlp disc_;
    nn::Adam disc_opt_;
    nn::Adam encoder_opt_;
};

}  // namespace cmid::auxiliary
