#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "grreal/errors.hpp"
#include "grreal/numerics.hpp"
#include "grreal/panel.hpp"
#include "grreal/qagent.hpp"
#include "grreal/rgrn.hpp"
#include "grreal/rng.hpp"

namespace grreal {

struct LedgerEntry {
    int day = 0;
    int segment = 0;
};

/// Global labeling budget with per-year caps. Years are consecutive 365-day
/// blocks counted from the start of the streamed period; the yearly limit is
/// floor(1.2 * budget / n_years).
class BudgetLedger {
public:
    BudgetLedger(int initial_budget, Period period) {
        if (initial_budget < 0) throw config_error("budget must be non-negative");
        if (period.empty()) throw config_error("budget period is empty");
        initial_ = initial_budget;
        remaining_ = initial_budget;
        period_start_ = period.start;
        n_years_ = (period.days() + 364) / 365;
        yearly_limit_ = static_cast<int>(std::floor(1.2 * initial_ / n_years_));
        year_counts_.assign(static_cast<std::size_t>(n_years_), 0);
    }

    int initial() const { return initial_; }
    int remaining() const { return remaining_; }
    int n_years() const { return n_years_; }
    int yearly_limit() const { return yearly_limit_; }
    const std::vector<LedgerEntry>& log() const { return log_; }

    int year_of(int t) const {
        if (t < period_start_) throw config_error("day outside the budget period");
        const int y = (t - period_start_) / 365;
        if (y >= n_years_) throw config_error("day outside the budget period");
        return y;
    }
    int year_count(int year) const { return year_counts_[static_cast<std::size_t>(year)]; }

    bool can_grant(int t) const {
        return remaining_ > 0 && year_count(year_of(t)) < yearly_limit_;
    }

    void grant(int segment, int t) {
        if (!can_grant(t)) throw config_error("ledger grant without remaining capacity");
        --remaining_;
        ++year_counts_[static_cast<std::size_t>(year_of(t))];
        log_.push_back({t, segment});
    }

    double fraction_remaining() const {
        return initial_ > 0 ? static_cast<double>(remaining_) / initial_ : 0.0;
    }

private:
    int initial_ = 0;
    int remaining_ = 0;
    int period_start_ = 0;
    int n_years_ = 1;
    int yearly_limit_ = 0;
    std::vector<int> year_counts_;
    std::vector<LedgerEntry> log_;
};

/// Agent state matrix: one row per segment, [h_i (H), yhat_i, u_i, b] with
/// b = remaining/initial budget, identical across rows.
inline Matrix make_state(const Matrix& h, const std::vector<double>& yhat,
                         const std::vector<double>& u, const BudgetLedger& ledger) {
    const int n = h.rows, hd = h.cols;
    if (static_cast<int>(yhat.size()) != n || static_cast<int>(u.size()) != n)
        throw dimension_error("make_state: yhat/u length != segment count");
    Matrix s(n, hd + 3);
    const double b = ledger.fraction_remaining();
    for (int i = 0; i < n; ++i) {
        std::span<double> row = s.row(i);
        const std::span<const double> hi = h.row(i);
        std::copy(hi.begin(), hi.end(), row.begin());
        row[static_cast<std::size_t>(hd)] = yhat[static_cast<std::size_t>(i)];
        row[static_cast<std::size_t>(hd) + 1] = u[static_cast<std::size_t>(i)];
        row[static_cast<std::size_t>(hd) + 2] = b;
    }
    return s;
}

struct RequestLogRow {
    int day = 0;
    int segment = 0;
    bool granted = false;
    std::string reason;  // "ok", "budget", "yearly_cap", "no_observation"
};

struct ApplyResult {
    std::vector<int> granted;  // segment indices granted a label this day
    std::vector<RequestLogRow> log_rows;
};

/// Execute label requests against the ledger. When requests exceed the
/// remaining capacity, grants go to the rows with the largest Q-advantage
/// (ties broken by ascending segment index); denied requests are logged, not
/// fatal.
inline ApplyResult apply_actions(const ActionDecision& d, BudgetLedger& ledger,
                                 const std::vector<bool>& observed, int t) {
    ApplyResult res;
    std::vector<int> requests;
    for (int i = 0; i < static_cast<int>(d.action.size()); ++i) {
        if (d.action[static_cast<std::size_t>(i)] != kActionLabel) continue;
        if (!observed[static_cast<std::size_t>(i)]) {
            res.log_rows.push_back({t, i, false, "no_observation"});
            continue;
        }
        requests.push_back(i);
    }
    std::sort(requests.begin(), requests.end(), [&](int a, int b) {
        const double da = d.advantage[static_cast<std::size_t>(a)];
        const double db = d.advantage[static_cast<std::size_t>(b)];
        return da != db ? da > db : a < b;
    });
    for (int i : requests) {
        if (ledger.can_grant(t)) {
            ledger.grant(i, t);
            res.granted.push_back(i);
            res.log_rows.push_back({t, i, true, "ok"});
        } else {
            res.log_rows.push_back(
                {t, i, false, ledger.remaining() == 0 ? "budget" : "yearly_cap"});
        }
    }
    std::sort(res.granted.begin(), res.granted.end());
    return res;
}

/// Hold-out RMSE oracle for rewards: a fixed (optionally subsampled) label set
/// over the hold-out period, evaluated by a zero-state unroll. The subsample
/// is drawn once per run so all step rewards are comparable.
class HoldoutEval {
public:
    HoldoutEval(const PanelData& panel, Period holdout, double subsample_frac, Rng rng,
                int eval_window_days = 0)
        : panel_(&panel) {
        if (holdout.empty()) throw config_error("hold-out period is empty");
        if (!(subsample_frac > 0.0 && subsample_frac <= 1.0))
            throw config_error("hold-out subsample fraction must be in (0,1]");
        eval_period_ = holdout;
        if (eval_window_days > 0 && eval_window_days < holdout.days())
            eval_period_ = Period{holdout.end - eval_window_days + 1, holdout.end};
        auto labels = panel.labels_in(eval_period_);
        if (labels.empty()) throw config_error("hold-out period has no observations");
        if (subsample_frac < 1.0) {
            const auto k = std::max<std::size_t>(
                1, static_cast<std::size_t>(
                       std::llround(subsample_frac * static_cast<double>(labels.size()))));
            rng.shuffle(labels);
            labels.resize(k);
            std::sort(labels.begin(), labels.end(),
                      [](const LabeledSample& a, const LabeledSample& b) {
                          return a.day != b.day ? a.day < b.day : a.segment < b.segment;
                      });
        }
        labels_ = std::move(labels);
    }

    Period eval_period() const { return eval_period_; }
    std::size_t label_count() const { return labels_.size(); }

    /// RMSE (z-scored units) of a zero-state unroll over the eval period.
    double rmse(const PredictiveModel& model) const {
        const ForwardResult res = model.forward_window(*panel_, eval_period_);
        double sum = 0.0;
        for (const auto& s : labels_) {
            const double d = res.yhat(s.day - eval_period_.start, s.segment) - s.value;
            sum += d * d;
        }
        return std::sqrt(sum / static_cast<double>(labels_.size()));
    }

private:
    const PanelData* panel_;
    Period eval_period_;
    std::vector<LabeledSample> labels_;
};

/// Step reward: hold-out RMSE improvement (positive = better).
inline double reward(const PredictiveModel& before, const PredictiveModel& after,
                     const HoldoutEval& holdout) {
    return holdout.rmse(before) - holdout.rmse(after);
}

/// Fine-tune the predictive model on the labels collected so far, restricted
/// to a trailing window ending at day t. Returns the number of optimizer
/// steps taken (0 when the window holds no labels).
inline int fine_tune_on_window(PredictiveModel& model, Adam& opt, const PanelData& panel,
                               const LabeledSet& collected, int t, int steps, int window_len,
                               double clip = 5.0) {
    const Period w{std::max(0, t - window_len + 1), t};
    if (collected.in_window(w.start, w.end).empty()) return 0;
    int done = 0;
    for (int s = 0; s < steps; ++s) {
        model.params().zero_grads();
        model.window_loss_and_grads(panel, collected, w, {}, true);
        model.params().clip_grads(clip);
        opt.step(model.params());
        ++done;
    }
    return done;
}

/// A labeling policy decides, per day, which segments to request labels for.
/// Implementations: the Q-learning agent and the score/threshold baselines.
class LabelPolicy {
public:
    virtual ~LabelPolicy() = default;

    /// `S` is the assembled agent-state matrix, `u` the raw per-segment
    /// uncertainty, `eligible` marks rows permitted to label today.
    /// `explore_rng` is non-null only in training passes.
    virtual ActionDecision decide(const Matrix& S, const std::vector<double>& u, int t,
                                  const std::vector<bool>& eligible, Rng* explore_rng) = 0;
};

/// GR-REAL's policy: greedy/epsilon-greedy over the decision model's Q values.
class AgentLabelPolicy final : public LabelPolicy {
public:
    explicit AgentLabelPolicy(const QAgent& agent) : agent_(&agent) {}

    ActionDecision decide(const Matrix& S, const std::vector<double>&, int,
                          const std::vector<bool>& eligible, Rng* explore_rng) override {
        return agent_->act(S, eligible, explore_rng != nullptr, explore_rng);
    }

private:
    const QAgent* agent_;
};

enum class StreamMode { train_pass, test_pass };

struct StreamOptions {
    Period stream;                // decision days
    int warmup_start = -1;        // forward state from here first (state continuity)
    int fine_tune_steps = 5;
    int fine_tune_window = 365;
    double predictive_lr = 3e-3;
    int mc_members = 10;
    double drop_prob = 0.2;
};

struct StreamMetricsRow {
    int t = 0;
    double rmse_holdout = 0.0;  // original units
    int remaining_budget = 0;
    int n_granted = 0;
};

struct StreamResult {
    std::vector<StreamMetricsRow> metrics;
    std::vector<RequestLogRow> requests;
    LabeledSet collected;
    double initial_rmse_z = 0.0;
    double final_rmse_z = 0.0;
    int days_run = 0;
    int total_granted = 0;
    bool budget_exhausted = false;
};

/// One pass over a streamed period: each day the predictive model advances,
/// the policy requests labels, grants fine-tune the model, and the hold-out
/// improvement becomes the step reward. In train-pass mode with an agent,
/// per-segment transitions are recorded (completed the following day, when
/// S^{t+1} exists) and the decision model is updated daily. The pass ends
/// early when the budget is exhausted.
inline StreamResult run_stream(PredictiveModel& model, QAgent* agent, LabelPolicy& policy,
                               const PanelData& panel, const HoldoutEval& holdout,
                               BudgetLedger& ledger, StreamMode mode, const StreamOptions& opt,
                               Rng& rng) {
    if (opt.stream.empty()) throw config_error("run_stream: empty stream period");
    if (opt.stream.start < 0 || opt.stream.end >= panel.n_days())
        throw config_error("run_stream: stream period outside panel");
    const bool training = mode == StreamMode::train_pass;
    const int n = model.n_segments();

    NetState state = model.zero_state();
    Rng mask_rng = rng.split("mc_masks");
    EnsembleTracker tracker(model, opt.mc_members, opt.drop_prob, mask_rng);
    Rng explore = rng.split("explore");
    Rng agent_rng = rng.split("agent_update");
    Adam ft_opt(opt.predictive_lr);

    Matrix x(n, model.n_features());
    std::vector<double> yhat;
    auto load_day = [&](int t) {
        for (int i = 0; i < n; ++i) {
            const auto f = panel.feature(i, t);
            std::copy(f.begin(), f.end(), x.row(i).begin());
        }
    };

    // State continuity: forward through earlier days without decisions.
    if (opt.warmup_start >= 0 && opt.warmup_start < opt.stream.start) {
        for (int t = opt.warmup_start; t < opt.stream.start; ++t) {
            load_day(t);
            model.step(state, x, yhat);
            tracker.step(model, x);
        }
    }

    StreamResult res;
    double cur_rmse = holdout.rmse(model);
    res.initial_rmse_z = cur_rmse;

    std::vector<Transition> pending;
    bool have_pending = false;

    for (int t = opt.stream.start; t <= opt.stream.end; ++t) {
        if (ledger.remaining() == 0) {
            res.budget_exhausted = true;
            break;
        }
        load_day(t);
        model.step(state, x, yhat);
        const UncertaintyEstimate est = tracker.step(model, x);
        const Matrix S = make_state(state.h, yhat, est.u, ledger);

        if (agent != nullptr && training && have_pending) {
            for (int i = 0; i < n; ++i) {
                const std::span<const double> row = S.row(i);
                pending[static_cast<std::size_t>(i)].s_next.assign(row.begin(), row.end());
                agent->add_transition(std::move(pending[static_cast<std::size_t>(i)]));
            }
            have_pending = false;
        }

        std::vector<bool> observed(static_cast<std::size_t>(n), false);
        std::vector<bool> eligible(static_cast<std::size_t>(n), false);
        const bool capacity = ledger.can_grant(t);
        for (int i = 0; i < n; ++i) {
            observed[static_cast<std::size_t>(i)] = panel.has_label(i, t);
            eligible[static_cast<std::size_t>(i)] =
                observed[static_cast<std::size_t>(i)] && capacity;
        }

        const ActionDecision decision =
            policy.decide(S, est.u, t, eligible, training ? &explore : nullptr);
        ApplyResult applied = apply_actions(decision, ledger, observed, t);

        double step_reward = 0.0;
        if (!applied.granted.empty()) {
            for (int g : applied.granted)
                res.collected.insert({g, t, panel.label(g, t).value()});
            fine_tune_on_window(model, ft_opt, panel, res.collected, t, opt.fine_tune_steps,
                                opt.fine_tune_window);
            const double new_rmse = holdout.rmse(model);
            step_reward = cur_rmse - new_rmse;
            cur_rmse = new_rmse;
        }

        if (agent != nullptr && training) {
            agent->observe_reward(step_reward);
            pending.assign(static_cast<std::size_t>(n), Transition{});
            std::vector<bool> granted_row(static_cast<std::size_t>(n), false);
            for (int g : applied.granted) granted_row[static_cast<std::size_t>(g)] = true;
            for (int i = 0; i < n; ++i) {
                Transition& tr = pending[static_cast<std::size_t>(i)];
                const std::span<const double> row = S.row(i);
                tr.s.assign(row.begin(), row.end());
                tr.action = granted_row[static_cast<std::size_t>(i)] ? kActionLabel : kActionSkip;
                tr.reward = granted_row[static_cast<std::size_t>(i)] ? step_reward : 0.0;
                tr.terminal = false;
            }
            have_pending = true;
            if (ledger.remaining() == 0) {
                // Budget exhausted by today's grants: these transitions are
                // terminal and never bootstrap.
                for (auto& tr : pending) {
                    tr.terminal = true;
                    agent->add_transition(std::move(tr));
                }
                have_pending = false;
                res.budget_exhausted = true;
            }
            agent->update(agent_rng);
        }

        res.metrics.push_back({t, panel.rmse_to_original_units(cur_rmse), ledger.remaining(),
                               static_cast<int>(applied.granted.size())});
        res.total_granted += static_cast<int>(applied.granted.size());
        for (auto& lr : applied.log_rows) res.requests.push_back(std::move(lr));
        ++res.days_run;
    }

    if (agent != nullptr && training && have_pending) {
        for (auto& tr : pending) {
            tr.terminal = true;  // stream end
            agent->add_transition(std::move(tr));
        }
    }
    res.final_rmse_z = cur_rmse;
    return res;
}

/// Repeated training passes over the same streamed period. Each pass restarts
/// the predictive model from its initial parameters and takes a fresh budget;
/// the decision model and its replay memory persist, so later passes learn
/// from earlier episodes.
inline std::vector<StreamResult> multi_pass_train(PredictiveModel& model, QAgent& agent,
                                                  const PanelData& panel,
                                                  const HoldoutEval& holdout, int budget,
                                                  int n_passes, const StreamOptions& opt,
                                                  Rng& rng) {
    if (n_passes <= 0) throw config_error("multi_pass_train: pass count must be positive");
    const ParamStore initial = model.params();
    AgentLabelPolicy policy(agent);
    std::vector<StreamResult> out;
    out.reserve(static_cast<std::size_t>(n_passes));
    for (int p = 0; p < n_passes; ++p) {
        model.params().copy_values_from(initial);
        BudgetLedger ledger(budget, opt.stream);
        Rng pass_rng = rng.split("train_pass", p);
        out.push_back(run_stream(model, &agent, policy, panel, holdout, ledger,
                                 StreamMode::train_pass, opt, pass_rng));
    }
    return out;
}

}  // namespace grreal
