#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <span>
#include <utility>
#include <vector>

#include "grreal/errors.hpp"
#include "grreal/numerics.hpp"
#include "grreal/rng.hpp"

namespace grreal {

/// Action indices for the per-segment one-hot action rows.
enum : int { kActionLabel = 0, kActionSkip = 1 };

/// One recorded (S, A, R, S') tuple for a single segment row.
struct Transition {
    std::vector<double> s;
    int action = kActionSkip;
    double reward = 0.0;
    std::vector<double> s_next;
    bool terminal = false;
};

/// Bounded FIFO replay memory with seeded uniform sampling (without
/// replacement inside a batch).
class TransitionSet {
public:
    explicit TransitionSet(std::size_t capacity = 50000) : capacity_(capacity) {
        if (capacity_ == 0) throw config_error("TransitionSet: capacity must be positive");
    }

    void add(Transition t) {
        if (items_.size() == capacity_) items_.pop_front();
        items_.push_back(std::move(t));
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return items_.empty(); }
    const Transition& operator[](std::size_t i) const { return items_[i]; }
    void clear() { items_.clear(); }

    /// Up to `batch` distinct transitions, uniformly without replacement.
    std::vector<const Transition*> sample(std::size_t batch, Rng& rng) const {
        const std::size_t n = items_.size();
        const std::size_t k = std::min(batch, n);
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        // partial Fisher-Yates: first k entries form the sample
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
            std::swap(idx[i], idx[j]);
        }
        std::vector<const Transition*> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) out.push_back(&items_[idx[i]]);
        return out;
    }

private:
    std::size_t capacity_;
    std::deque<Transition> items_;
};

/// Online z-scoring of step rewards (Welford running moments). Hold-out RMSE
/// deltas are tiny and scale-dependent; normalizing keeps Q targets in a
/// stable range. Disabled mode passes rewards through untouched (used by the
/// tabular-MDP oracle tests, where exact reward magnitudes matter).
class RewardNormalizer {
public:
    explicit RewardNormalizer(bool enabled = true) : enabled_(enabled) {}

    bool enabled() const { return enabled_; }
    long count() const { return n_; }

    void observe(double r) {
        check_finite(r, "reward");
        ++n_;
        const double delta = r - mean_;
        mean_ += delta / static_cast<double>(n_);
        m2_ += delta * (r - mean_);
    }

    double normalize(double r) const {
        if (!enabled_ || n_ < 2) return r;
        const double sd = std::sqrt(m2_ / static_cast<double>(n_));
        return sd > 1e-12 ? (r - mean_) / sd : r - mean_;
    }

private:
    bool enabled_;
    long n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

/// Feed-forward Q-value network: state (H+3) -> tanh hidden layer -> linear
/// (Q_label, Q_skip). Shared across segments; the state row carries the
/// segment-specific context.
class QNet {
public:
    QNet(int input_dim, int hidden_dim, Rng& init_rng)
        : input_dim_(input_dim), hidden_dim_(hidden_dim) {
        if (input_dim_ <= 0 || hidden_dim_ <= 0)
            throw config_error("QNet: dimensions must be positive");
        params_.add("W1", hidden_dim_, input_dim_);
        params_.add("b1", hidden_dim_, 1);
        params_.add("W2", 2, hidden_dim_);
        params_.add("b2", 2, 1);
        init_uniform_fanin(params_.param("W1"), input_dim_, init_rng);
        init_uniform_fanin(params_.param("W2"), hidden_dim_, init_rng);
    }

    int input_dim() const { return input_dim_; }
    int hidden_dim() const { return hidden_dim_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    std::pair<double, double> q_values(std::span<const double> s) const {
        std::vector<double> a1 = hidden_forward(s);
        const auto q = affine(params_.param("W2"), a1, params_.param("b2").data);
        return {q[0], q[1]};
    }

    /// Gradient of scale * (Q(s, action) - target)^2 accumulated into the
    /// ParamStore. Returns the unscaled squared error.
    double accumulate_grad(std::span<const double> s, int action, double target, double scale) {
        std::vector<double> a1 = hidden_forward(s);
        const auto q = affine(params_.param("W2"), a1, params_.param("b2").data);
        const double err = q[static_cast<std::size_t>(action)] - target;

        std::vector<double> dq(2, 0.0);
        dq[static_cast<std::size_t>(action)] = 2.0 * scale * err;
        add_outer(params_.grad("W2"), dq, a1);
        for (int r = 0; r < 2; ++r)
            params_.grad("b2").data[static_cast<std::size_t>(r)] += dq[static_cast<std::size_t>(r)];

        std::vector<double> da1(static_cast<std::size_t>(hidden_dim_), 0.0);
        add_matvec_t(da1, params_.param("W2"), dq);
        for (int u = 0; u < hidden_dim_; ++u)
            da1[static_cast<std::size_t>(u)] *= dtanh_from_output(a1[static_cast<std::size_t>(u)]);
        add_outer(params_.grad("W1"), da1, s);
        for (int u = 0; u < hidden_dim_; ++u)
            params_.grad("b1").data[static_cast<std::size_t>(u)] += da1[static_cast<std::size_t>(u)];
        return err * err;
    }

    void copy_from(const QNet& other) { params_.copy_values_from(other.params_); }

private:
    std::vector<double> hidden_forward(std::span<const double> s) const {
        if (static_cast<int>(s.size()) != input_dim_)
            throw dimension_error("QNet: state length " + std::to_string(s.size()) +
                                  " != input dim " + std::to_string(input_dim_));
        auto a1 = affine(params_.param("W1"), s, params_.param("b1").data);
        for (double& v : a1) v = std::tanh(v);
        return a1;
    }

    int input_dim_;
    int hidden_dim_;
    ParamStore params_;
};

/// Per-segment decisions plus the Q-advantage used to prioritize grants when
/// label requests collide with the remaining budget.
struct ActionDecision {
    std::vector<int> action;        // kActionLabel or kActionSkip per segment
    std::vector<double> advantage;  // Q_label - Q_skip per segment
};

/// Greedy (argmax) actions with optional epsilon-exploration. Masked rows are
/// forced to skip; exact Q ties skip too (conserve budget). Exploration draws
/// happen only for eligible rows, in segment order, keeping the rng stream
/// reproducible.
inline ActionDecision select_actions(const QNet& qnet, const Matrix& S,
                                     const std::vector<bool>& eligible, double epsilon,
                                     Rng* explore_rng) {
    if (static_cast<int>(eligible.size()) != S.rows)
        throw dimension_error("select_actions: eligibility size != state rows");
    ActionDecision d;
    d.action.assign(static_cast<std::size_t>(S.rows), kActionSkip);
    d.advantage.assign(static_cast<std::size_t>(S.rows), 0.0);
    for (int i = 0; i < S.rows; ++i) {
        const auto [ql, qs] = qnet.q_values(S.row(i));
        d.advantage[static_cast<std::size_t>(i)] = ql - qs;
        if (!eligible[static_cast<std::size_t>(i)]) continue;
        if (explore_rng != nullptr && epsilon > 0.0 && explore_rng->bernoulli(epsilon)) {
            d.action[static_cast<std::size_t>(i)] =
                explore_rng->below(2) == 0 ? kActionLabel : kActionSkip;
            continue;
        }
        if (ql > qs) d.action[static_cast<std::size_t>(i)] = kActionLabel;
    }
    return d;
}

/// One-step dynamic-programming targets: y = r + gamma * max_a Q_target(s', a),
/// with no bootstrap term on terminal transitions. Rewards pass through the
/// normalizer when one is supplied.
inline std::vector<double> bellman_targets(std::span<const Transition* const> batch,
                                           const QNet& target_net, double gamma,
                                           const RewardNormalizer* norm = nullptr) {
    if (batch.empty()) throw config_error("bellman_targets: empty batch");
    std::vector<double> y;
    y.reserve(batch.size());
    for (const Transition* t : batch) {
        const double r = norm != nullptr ? norm->normalize(t->reward) : t->reward;
        if (t->terminal) {
            y.push_back(r);
        } else {
            const auto [ql, qs] = target_net.q_values(t->s_next);
            y.push_back(r + gamma * std::max(ql, qs));
        }
    }
    return y;
}

struct AgentConfig {
    double gamma = 0.8;
    double epsilon = 0.005;      // exploration rate, training passes only
    int batch_size = 64;
    int target_refresh = 200;    // online->target parameter copies, in updates
    int updates_per_round = 1;
    double learning_rate = 1e-3;
    int hidden = 32;
    std::size_t replay_capacity = 50000;
    bool normalize_rewards = true;

    void validate() const {
        if (!(gamma >= 0.0 && gamma < 1.0)) throw config_error("gamma must be in [0,1)");
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw config_error("epsilon must be in [0,1]");
        if (batch_size <= 0) throw config_error("batch size must be positive");
        if (target_refresh <= 0) throw config_error("target refresh interval must be positive");
    }
};

/// The decision model: online QNet, slowly-refreshed target copy, FIFO replay,
/// and the reward normalizer. The environment feeds transitions and rewards;
/// `update` performs sampled Bellman regression steps.
class QAgent {
public:
    QAgent(int state_dim, const AgentConfig& cfg, Rng init_rng)
        : cfg_(cfg),
          qnet_(state_dim, cfg.hidden, init_rng),
          target_(qnet_),
          replay_(cfg.replay_capacity),
          norm_(cfg.normalize_rewards),
          opt_(cfg.learning_rate) {
        cfg_.validate();
    }

    const AgentConfig& config() const { return cfg_; }
    QNet& qnet() { return qnet_; }
    const QNet& qnet() const { return qnet_; }
    const QNet& target_net() const { return target_; }
    TransitionSet& replay() { return replay_; }
    const TransitionSet& replay() const { return replay_; }
    RewardNormalizer& reward_norm() { return norm_; }
    long updates_done() const { return updates_; }

    void observe_reward(double r) { norm_.observe(r); }
    void add_transition(Transition t) { replay_.add(std::move(t)); }

    /// Re-align the target network with the online network (used after
    /// loading checkpointed parameters, which bypass the constructor copy).
    void sync_target() { target_.copy_from(qnet_); }

    ActionDecision act(const Matrix& S, const std::vector<bool>& eligible, bool training,
                       Rng* rng) const {
        return select_actions(qnet_, S, eligible, training ? cfg_.epsilon : 0.0,
                              training ? rng : nullptr);
    }

    /// `updates_per_round` sampled mini-batch regression steps toward the
    /// Bellman targets. No-op while the replay memory is empty.
    void update(Rng& rng) {
        if (replay_.empty()) return;
        for (int round = 0; round < cfg_.updates_per_round; ++round) {
            const auto batch = replay_.sample(static_cast<std::size_t>(cfg_.batch_size), rng);
            const auto targets = bellman_targets(batch, target_, cfg_.gamma,
                                                 norm_.enabled() ? &norm_ : nullptr);
            qnet_.params().zero_grads();
            const double scale = 1.0 / static_cast<double>(batch.size());
            for (std::size_t k = 0; k < batch.size(); ++k)
                qnet_.accumulate_grad(batch[k]->s, batch[k]->action, targets[k], scale);
            qnet_.params().clip_grads(5.0);
            opt_.step(qnet_.params());
            ++updates_;
            if (updates_ % cfg_.target_refresh == 0) target_.copy_from(qnet_);
        }
    }

private:
    AgentConfig cfg_;
    QNet qnet_;
    QNet target_;
    TransitionSet replay_;
    RewardNormalizer norm_;
    Adam opt_;
    long updates_ = 0;
};

}  // namespace grreal
