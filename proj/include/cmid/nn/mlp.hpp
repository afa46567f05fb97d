// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "cmid/nn/autodiff.hpp"
#include "cmid/rng.hpp"

namespace cmid::nn {

enum class Activation { identity, relu, tanh, sigmoid };

inline Var activate(const Var& x, Activation act) {
    switch (act) {
        case Activation::relu: return relu(x);
        case Activation::tanh: return tanh(x);
        case Activation::sigmoid: return sigmoid(x);
        case Activation::identity: break;
    }
    return x;
}

struct MlpSpec {
    /// Layer widths including input and output, e.g. {5, 64, 8}.
    std::vector<std::size_t> widths;
    /// One activation per linear layer; defaults to ReLU on hidden layers and
    /// identity on the last.
    std::vector<Activation> activations;
    /// Append layer norm (with learnable gain/bias) and tanh after the last
    /// linear layer; used by encoders so every latent lies in (-1, 1).
    bool layer_norm_tanh = false;
    /// Scale applied to the initial weights of the last linear layer.
    double final_init_scale = 1.0;
};

struct Linear {
    Var weight;  // [in × out]
    Var bias;    // [1 × out]
};

class Mlp {
   public:
    Mlp() = default;

    Mlp(MlpSpec spec, Rng& rng) : spec_(std::move(spec)) {
        if (spec_.widths.size() < 2) throw ConfigError("mlp: need at least input and output widths");
        const std::size_t n_layers = spec_.widths.size() - 1;
        if (spec_.activations.empty()) {
            spec_.activations.assign(n_layers, Activation::relu);
            spec_.activations.back() = Activation::identity;
        }
        if (spec_.activations.size() != n_layers) {
            throw ConfigError("mlp: " + std::to_string(spec_.activations.size()) + " activations for " +
                              std::to_string(n_layers) + " layers");
        }
        for (std::size_t l = 0; l < n_layers; ++l) {
            const std::size_t in = spec_.widths[l], out = spec_.widths[l + 1];
            if (in == 0 || out == 0) throw ConfigError("mlp: zero layer width");
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            const double k = (l + 1 == n_layers) ? spec_.final_init_scale : 1.0;
            Tensor w = Tensor::matrix(in, out);
            for (double& v : w.values) v = k * uniform(rng, -bound, bound);
            layers_.push_back({Var::parameter(std::move(w)), Var::parameter(Tensor::matrix(1, out))});
        }
        if (spec_.layer_norm_tanh) {
            ln_gain_ = Var::parameter(Tensor::matrix(1, spec_.widths.back(), 1.0));
            ln_bias_ = Var::parameter(Tensor::matrix(1, spec_.widths.back(), 0.0));
        }
    }

    std::size_t input_width() const { return spec_.widths.front(); }
    std::size_t output_width() const { return spec_.widths.back(); }
    const MlpSpec& spec() const { return spec_; }
    const std::vector<Linear>& layers() const { return layers_; }

    /// With `track_params` false the parameters enter the graph as constants,
    /// so gradients still reach the input but never the weights.
    Var forward(const Var& input, bool track_params = true) const {
        if (input.cols() != input_width()) {
            throw ConfigError("mlp: input width " + std::to_string(input.cols()) + ", expected " +
                              std::to_string(input_width()));
        }
        auto use = [track_params](const Var& p) { return track_params ? p : detach(p); };
        Var h = input;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            h = add_row(matmul(h, use(layers_[l].weight)), use(layers_[l].bias));
            const bool last = l + 1 == layers_.size();
            if (!(last && spec_.layer_norm_tanh)) h = activate(h, spec_.activations[l]);
        }
        if (spec_.layer_norm_tanh) h = tanh(add_row(mul_row(layer_norm(h), use(ln_gain_)), use(ln_bias_)));
        return h;
    }
    Var operator()(const Var& input) const { return forward(input); }

    std::vector<Var> parameters() const {
        std::vector<Var> out;
        for (const auto& l : layers_) {
            out.push_back(l.weight);
            out.push_back(l.bias);
        }
        if (spec_.layer_norm_tanh) {
            out.push_back(ln_gain_);
            out.push_back(ln_bias_);
        }
        return out;
    }

    std::vector<std::pair<std::string, Var>> named_parameters(const std::string& prefix) const {
        std::vector<std::pair<std::string, Var>> out;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            out.emplace_back(prefix + ".l" + std::to_string(l) + ".weight", layers_[l].weight);
            out.emplace_back(prefix + ".l" + std::to_string(l) + ".bias", layers_[l].bias);
        }
        if (spec_.layer_norm_tanh) {
            out.emplace_back(prefix + ".ln.gain", ln_gain_);
            out.emplace_back(prefix + ".ln.bias", ln_bias_);
        }
        return out;
    }

    /// Independent copy with its own parameter storage.
    Mlp clone() const {
        Mlp m;
        m.spec_ = spec_;
        for (const auto& l : layers_) {
            m.layers_.push_back({Var::parameter(l.weight.value()), Var::parameter(l.bias.value())});
        }
        if (spec_.layer_norm_tanh) {
            m.ln_gain_ = Var::parameter(ln_gain_.value());
            m.ln_bias_ = Var::parameter(ln_bias_.value());
        }
        return m;
    }

    /// Copies parameter values from a network of identical architecture.
    void copy_from(const Mlp& other) {
        auto dst = parameters();
        auto src = other.parameters();
        if (dst.size() != src.size()) throw ConfigError("mlp: copy between different architectures");
        for (std::size_t i = 0; i < dst.size(); ++i) {
            if (dst[i].shape() != src[i].shape()) throw ConfigError("mlp: copy between different architectures");
            dst[i].mutable_value().values = src[i].value().values;
        }
    }

   private:
    MlpSpec spec_;
    std::vector<Linear> layers_;
    Var ln_gain_;
    Var ln_bias_;
};

/// Hashes parameter values bit-for-bit; used to prove an update left a
/// network untouched.
inline std::uint64_t parameter_hash(const std::vector<Var>& params) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params) {
        for (double v : p.value().values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xffu;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

}  // namespace cmid::nn
