// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "cmid/nn/tensor.hpp"
#include "cmid/rng.hpp"

namespace cmid::rl {

/// One environment step as stored in the buffer. Neighbouring records of the
/// same episode supply the previous frames (o_{t-1}, a_{t-1}, ...).
struct StepRecord {
    std::vector<double> obs;       // o_t
    std::vector<double> action;    // a_t
    double reward = 0.0;           // r_t
    std::vector<double> next_obs;  // o_{t+1}
    bool terminal = false;         // true termination; time limits bootstrap
    long episode = 0;
    int step = 0;
};

/// A sampled batch laid out for the networks. Frame stacks are sample-major:
/// rows [i*stack, (i+1)*stack) hold sample i's frames oldest first.
struct Batch {
    std::size_t size = 0;
    std::size_t stack = 0;
    std::size_t history = 0;
    nn::Tensor obs_stack;       // [B·stack × obs_dim]
    nn::Tensor next_obs_stack;  // [B·stack × obs_dim]
    nn::Tensor obs;             // [B × obs_dim], o_t
    nn::Tensor actions;         // [B × A]
    nn::Tensor rewards;         // [B × 1]
    nn::Tensor not_done;        // [B × 1]
    /// Block j (rows [j·B, (j+1)·B)) holds o_{t-1-j} and a_{t-1-j}; rows of
    /// samples without that much history are zero.
    nn::Tensor prev_obs;      // [history·B × obs_dim]
    nn::Tensor prev_actions;  // [history·B × A]
    std::vector<bool> has_history;
    std::vector<long> episode;
    std::vector<int> step;
    /// Episode id of each stored previous frame, -1 where absent.
    std::vector<long> prev_episode;
};

class ReplayBuffer {
   public:
    ReplayBuffer(std::size_t capacity, std::size_t obs_dim, std::size_t action_dim)
        : capacity_(capacity), obs_dim_(obs_dim), action_dim_(action_dim) {
        if (capacity == 0) throw ConfigError("replay: capacity must be positive");
        data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
    }

    void add(StepRecord r) {
        if (r.obs.size() != obs_dim_ || r.next_obs.size() != obs_dim_ || r.action.size() != action_dim_) {
            throw ConfigError("replay: record dimensions do not match the buffer");
        }
        if (data_.size() < capacity_) {
            data_.push_back(std::move(r));
        } else {
            data_[head_] = std::move(r);
        }
        head_ = (head_ + 1) % capacity_;
        ++total_;
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t obs_dim() const { return obs_dim_; }
    std::size_t action_dim() const { return action_dim_; }

    /// Record at logical position i, 0 being the oldest still stored.
    const StepRecord& at(std::size_t i) const {
        const std::size_t oldest = data_.size() < capacity_ ? 0 : head_;
        return data_[(oldest + i) % data_.size()];
    }

    /// The record `back` steps earlier in the same episode as logical index i,
    /// if it is still stored.
    std::optional<std::size_t> earlier(std::size_t i, std::size_t back) const {
        if (back > i) return std::nullopt;
        const StepRecord& cur = at(i);
        const StepRecord& prev = at(i - back);
        if (prev.episode != cur.episode || prev.step != cur.step - static_cast<int>(back)) return std::nullopt;
        return i - back;
    }

    /// Uniform sample of `batch_size` records with replacement. Previous
    /// frames are only ever taken from the same episode.
    Batch sample(std::size_t batch_size, std::size_t stack, std::size_t history, Rng& rng) const {
        if (data_.empty()) throw UsageError("replay: sampling from an empty buffer");
        std::vector<std::size_t> idx(batch_size);
        for (auto& i : idx) i = uniform_index(rng, data_.size());
        return gather(idx, stack, history);
    }

    Batch gather(const std::vector<std::size_t>& idx, std::size_t stack, std::size_t history) const {
        if (stack == 0) throw ConfigError("replay: frame stack must be at least 1");
        const std::size_t B = idx.size();
        Batch b;
        b.size = B;
        b.stack = stack;
        b.history = history;
        b.obs_stack = nn::Tensor::matrix(B * stack, obs_dim_);
        b.next_obs_stack = nn::Tensor::matrix(B * stack, obs_dim_);
        b.obs = nn::Tensor::matrix(B, obs_dim_);
        b.actions = nn::Tensor::matrix(B, action_dim_);
        b.rewards = nn::Tensor::matrix(B, 1);
        b.not_done = nn::Tensor::matrix(B, 1);
        b.prev_obs = nn::Tensor::matrix(history * B, obs_dim_);
        b.prev_actions = nn::Tensor::matrix(history * B, action_dim_);
        b.has_history.assign(B, false);
        b.prev_episode.assign(history * B, -1);

        auto put = [this](nn::Tensor& dst, std::size_t row, const std::vector<double>& src) {
            std::copy(src.begin(), src.end(), dst.values.begin() + static_cast<std::ptrdiff_t>(row * src.size()));
        };

        for (std::size_t s = 0; s < B; ++s) {
            const std::size_t i = idx[s];
            const StepRecord& r = at(i);
            b.episode.push_back(r.episode);
            b.step.push_back(r.step);
            put(b.obs, s, r.obs);
            put(b.actions, s, r.action);
            b.rewards.values[s] = r.reward;
            b.not_done.values[s] = r.terminal ? 0.0 : 1.0;

            // frames t-stack+1 .. t; missing early frames repeat the earliest
            // one available, i.e. the episode's first frame.
            std::vector<const std::vector<double>*> frames(stack, &r.obs);
            const std::vector<double>* earliest = &r.obs;
            for (std::size_t back = 1; back < stack; ++back) {
                if (auto j = earlier(i, back)) earliest = &at(*j).obs;
                frames[stack - 1 - back] = earliest;
            }
            for (std::size_t f = 0; f < stack; ++f) put(b.obs_stack, s * stack + f, *frames[f]);
            // next stack: frames t-stack+2 .. t+1
            for (std::size_t f = 0; f + 1 < stack; ++f) put(b.next_obs_stack, s * stack + f, *frames[f + 1]);
            put(b.next_obs_stack, s * stack + stack - 1, r.next_obs);

            bool full = true;
            for (std::size_t j = 0; j < history; ++j) {
                if (auto k = earlier(i, j + 1)) {
                    const StepRecord& p = at(*k);
                    put(b.prev_obs, j * B + s, p.obs);
                    put(b.prev_actions, j * B + s, p.action);
                    b.prev_episode[j * B + s] = p.episode;
                } else {
                    full = false;
                }
            }
            b.has_history[s] = full;
        }
        return b;
    }

   private:
    std::size_t capacity_;
    std::size_t obs_dim_;
    std::size_t action_dim_;
    std::vector<StepRecord> data_;
    std::size_t head_ = 0;
    std::size_t total_ = 0;
};

}  // namespace cmid::rl
