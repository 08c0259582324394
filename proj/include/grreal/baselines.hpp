#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <vector>

#include "grreal/alenv.hpp"
#include "grreal/errors.hpp"
#include "grreal/panel.hpp"
#include "grreal/qagent.hpp"
#include "grreal/river_graph.hpp"
#include "grreal/rng.hpp"

namespace grreal {

enum class ScoreKind { uncertainty, udc };

/// Calibrated decision threshold for the streaming baselines, estimated from
/// a training-period replay of the scores.
struct ThresholdCalib {
    ScoreKind kind = ScoreKind::uncertainty;
    double threshold = 0.0;
    double w_u = 1.0 / 3.0;  // udc weights; ignored by the uncertainty policy
    double w_c = 1.0 / 3.0;
    double w_d = 1.0 / 3.0;

    void validate() const {
        if (!std::isfinite(threshold)) throw config_error("calibrated threshold must be finite");
        if (kind == ScoreKind::udc) {
            if (w_u < 0.0 || w_c < 0.0 || w_d < 0.0)
                throw config_error("udc weights must be non-negative");
            if (std::abs(w_u + w_c + w_d - 1.0) > 1e-9)
                throw config_error("udc weights must sum to 1");
        }
    }
};

/// Nearest-rank quantile: the smallest element with at least ceil(q*n)
/// observations at or below it. q outside [0,1] clamps to the extremes.
inline double nearest_rank_quantile(std::vector<double> scores, double q) {
    if (scores.empty()) throw config_error("quantile of an empty score set");
    std::sort(scores.begin(), scores.end());
    const auto n = static_cast<double>(scores.size());
    const auto rank = static_cast<long>(std::ceil(q * n));
    const long idx = std::clamp(rank - 1, 0L, static_cast<long>(scores.size()) - 1);
    return scores[static_cast<std::size_t>(idx)];
}

/// Pick the threshold whose expected selection rate over the training-period
/// scores spends the budget (a budget of 10% of the samples sits at the 90th
/// percentile). `years` is the horizon the budget is spread over; it is kept
/// for reporting — a uniform yearly pace over stationary scores reduces to
/// the same global rate.
inline ThresholdCalib calibrate_threshold(ScoreKind kind, const std::vector<double>& scores,
                                          int budget, int years, double w_u = 1.0 / 3.0,
                                          double w_c = 1.0 / 3.0, double w_d = 1.0 / 3.0) {
    if (scores.empty()) throw config_error("calibrate_threshold: no training scores");
    if (budget < 0) throw config_error("calibrate_threshold: negative budget");
    if (years <= 0) throw config_error("calibrate_threshold: years must be positive");
    const double rate =
        std::min(1.0, static_cast<double>(budget) / static_cast<double>(scores.size()));
    ThresholdCalib calib;
    calib.kind = kind;
    calib.w_u = w_u;
    calib.w_c = w_c;
    calib.w_d = w_d;
    calib.threshold = nearest_rank_quantile(scores, 1.0 - rate);
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    if (*lo == *hi)
        std::cerr << "calibrate_threshold: scores are constant at " << *lo
                  << "; the strict threshold will select nothing\n";
    calib.validate();
    return calib;
}

/// Min-max rescale to [0,1] across the current step; a flat vector maps to a
/// neutral 0.5.
inline std::vector<double> rescale_unit(const std::vector<double>& v) {
    if (v.empty()) return {};
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    if (*hi == *lo) {
        std::fill(out.begin(), out.end(), 0.5);
        return out;
    }
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / span;
    return out;
}

/// Label where the raw uncertainty exceeds the calibrated threshold
/// (strictly; boundary equality skips to conserve budget).
inline ActionDecision uncertainty_policy(const std::vector<double>& u,
                                         const ThresholdCalib& calib,
                                         const std::vector<bool>& eligible) {
    if (u.size() != eligible.size())
        throw dimension_error("uncertainty_policy: u/eligibility size mismatch");
    ActionDecision d;
    d.action.assign(u.size(), kActionSkip);
    d.advantage.assign(u.size(), 0.0);
    for (std::size_t i = 0; i < u.size(); ++i) {
        d.advantage[i] = u[i] - calib.threshold;
        if (eligible[i] && u[i] > calib.threshold) d.action[i] = kActionLabel;
    }
    return d;
}

/// UDC score per segment: weighted sum of the step-rescaled uncertainty and
/// the static structural centrality/density (all in [0,1]).
inline std::vector<double> udc_scores(const std::vector<double>& u, const NodeStats& stats,
                                      const ThresholdCalib& calib) {
    if (u.size() != stats.centrality.size())
        throw dimension_error("udc_scores: u/NodeStats size mismatch");
    const std::vector<double> ru = rescale_unit(u);
    std::vector<double> s(u.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        s[i] = calib.w_u * ru[i] + calib.w_c * stats.centrality[i] + calib.w_d * stats.density[i];
    return s;
}

inline ActionDecision udc_policy(const std::vector<double>& u, const NodeStats& stats,
                                 const ThresholdCalib& calib, const std::vector<bool>& eligible) {
    if (u.size() != eligible.size())
        throw dimension_error("udc_policy: u/eligibility size mismatch");
    const std::vector<double> s = udc_scores(u, stats, calib);
    ActionDecision d;
    d.action.assign(u.size(), kActionSkip);
    d.advantage.assign(u.size(), 0.0);
    for (std::size_t i = 0; i < u.size(); ++i) {
        d.advantage[i] = s[i] - calib.threshold;
        if (eligible[i] && s[i] > calib.threshold) d.action[i] = kActionLabel;
    }
    return d;
}

/// Streaming baseline policy for run_stream: applies the calibrated
/// uncertainty or UDC rule to each day's raw uncertainty vector.
class ThresholdLabelPolicy final : public LabelPolicy {
public:
    ThresholdLabelPolicy(ThresholdCalib calib, NodeStats stats)
        : calib_(calib), stats_(std::move(stats)) {
        calib_.validate();
    }

    ActionDecision decide(const Matrix&, const std::vector<double>& u, int,
                          const std::vector<bool>& eligible, Rng*) override {
        return calib_.kind == ScoreKind::uncertainty ? uncertainty_policy(u, calib_, eligible)
                                                     : udc_policy(u, stats_, calib_, eligible);
    }

private:
    ThresholdCalib calib_;
    NodeStats stats_;
};

/// Calibration replay policy: never labels, but records each day's score for
/// every eligible (observed) row so a threshold can be fit afterwards.
class ScoreRecordingPolicy final : public LabelPolicy {
public:
    ScoreRecordingPolicy(ScoreKind kind, NodeStats stats, double w_u = 1.0 / 3.0,
                         double w_c = 1.0 / 3.0, double w_d = 1.0 / 3.0)
        : kind_(kind), stats_(std::move(stats)) {
        probe_.kind = kind;
        probe_.w_u = w_u;
        probe_.w_c = w_c;
        probe_.w_d = w_d;
    }

    const std::vector<double>& scores() const { return scores_; }

    ActionDecision decide(const Matrix& s, const std::vector<double>& u, int,
                          const std::vector<bool>& eligible, Rng*) override {
        const std::vector<double> day_scores =
            kind_ == ScoreKind::uncertainty ? u : udc_scores(u, stats_, probe_);
        for (std::size_t i = 0; i < eligible.size(); ++i)
            if (eligible[i]) scores_.push_back(day_scores[i]);
        ActionDecision d;
        d.action.assign(static_cast<std::size_t>(s.rows), kActionSkip);
        d.advantage.assign(static_cast<std::size_t>(s.rows), 0.0);
        return d;
    }

private:
    ScoreKind kind_;
    NodeStats stats_;
    ThresholdCalib probe_;  // carries the udc weights for scoring
    std::vector<double> scores_;
};

/// The paper's random baseline: a uniform without-replacement sample of
/// budget (segment, day) observation pairs over the whole period — the pool
/// is visible up front, unlike the streaming policies. An over-large budget
/// clamps to the pool with a warning.
inline LabeledSet random_pool_select(const PanelData& panel, Period period, int budget,
                                     Rng& rng) {
    if (budget < 0) throw config_error("random_pool_select: negative budget");
    std::vector<LabeledSample> pool = panel.labels_in(period);
    if (budget > static_cast<int>(pool.size())) {
        std::cerr << "random_pool_select: budget " << budget << " exceeds the pool of "
                  << pool.size() << " observations; clamping\n";
        budget = static_cast<int>(pool.size());
    }
    for (int i = 0; i < budget; ++i) {
        const auto j =
            static_cast<std::size_t>(i) + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    LabeledSet out;
    for (int i = 0; i < budget; ++i) out.insert(pool[static_cast<std::size_t>(i)]);
    return out;
}

struct PoolApplication {
    LabeledSet granted;
    std::vector<RequestLogRow> log;
};

/// Run a pre-selected label set through the ledger in chronological order so
/// the random baseline obeys the same budget and yearly-cap invariants as the
/// streaming policies. Denials are logged, not fatal.
inline PoolApplication apply_pool_selection(const LabeledSet& selected, BudgetLedger& ledger) {
    PoolApplication out;
    for (const LabeledSample& s : selected.items()) {  // canonical (day, segment) order
        if (ledger.can_grant(s.day)) {
            ledger.grant(s.segment, s.day);
            out.granted.insert(s);
            out.log.push_back({s.day, s.segment, true, "ok"});
        } else {
            out.log.push_back(
                {s.day, s.segment, false, ledger.remaining() == 0 ? "budget" : "yearly_cap"});
        }
    }
    return out;
}

}  // namespace grreal
