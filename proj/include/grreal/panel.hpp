#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grreal/dates.hpp"
#include "grreal/errors.hpp"
#include "grreal/numerics.hpp"

namespace grreal {

enum class TargetKind { temperature, flow };

inline const char* to_string(TargetKind k) {
    return k == TargetKind::temperature ? "temperature" : "flow";
}

inline TargetKind target_kind_from_string(const std::string& s) {
    if (s == "temperature") return TargetKind::temperature;
    if (s == "flow" || s == "streamflow") return TargetKind::flow;
    throw config_error("unknown target kind: '" + s + "'");
}

/// Inclusive day-index range [start, end].
struct Period {
    int start = 0;
    int end = -1;

    int days() const { return end - start + 1; }
    bool contains(int t) const { return t >= start && t <= end; }
    bool empty() const { return end < start; }
};

struct LabeledSample {
    int segment = 0;
    int day = 0;
    double value = 0.0;
};

/// Collected labels in canonical (day, segment) order. Canonical ordering
/// makes every loss and log that iterates the set independent of the order in
/// which labels were granted.
class LabeledSet {
public:
    void insert(const LabeledSample& s) {
        auto it = std::lower_bound(items_.begin(), items_.end(), s, less);
        if (it != items_.end() && it->day == s.day && it->segment == s.segment) {
            it->value = s.value;
            return;
        }
        items_.insert(it, s);
    }

    bool contains(int segment, int day) const {
        LabeledSample probe{segment, day, 0.0};
        auto it = std::lower_bound(items_.begin(), items_.end(), probe, less);
        return it != items_.end() && it->day == day && it->segment == segment;
    }

    /// Samples with day in [t0, t1].
    std::span<const LabeledSample> in_window(int t0, int t1) const {
        LabeledSample lo{0, t0, 0.0}, hi{0, t1 + 1, 0.0};
        auto b = std::lower_bound(items_.begin(), items_.end(), lo, less);
        auto e = std::lower_bound(items_.begin(), items_.end(), hi, less);
        return {&*b, static_cast<std::size_t>(e - b)};
    }

    const std::vector<LabeledSample>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    void clear() { items_.clear(); }

private:
    static bool less(const LabeledSample& a, const LabeledSample& b) {
        return a.day != b.day ? a.day < b.day : a.segment < b.segment;
    }
    std::vector<LabeledSample> items_;
};

/// Feature standardization statistics (z-score), stored so predictions and
/// errors can be mapped back to original units.
struct Standardization {
    std::vector<double> feature_mean;
    std::vector<double> feature_std;
    double target_mean = 0.0;
    double target_std = 1.0;
};

/// Per-segment daily feature sequences plus sparse observation labels.
///
/// Features are stored [segment][day][feature]; labels as a per-segment
/// ordered day->value map. After `standardize()` both features and label
/// values are z-scored by training-period statistics.
class PanelData {
public:
    PanelData() = default;
    PanelData(std::vector<std::string> segment_ids, int n_days, int n_features, long start_epoch_day)
        : ids_(std::move(segment_ids)),
          n_days_(n_days),
          n_features_(n_features),
          start_day_(start_epoch_day),
          features_(ids_.size() * static_cast<std::size_t>(n_days) * n_features, 0.0),
          labels_(ids_.size()) {}

    int n_segments() const { return static_cast<int>(ids_.size()); }
    int n_days() const { return n_days_; }
    int n_features() const { return n_features_; }
    long start_epoch_day() const { return start_day_; }
    const std::vector<std::string>& segment_ids() const { return ids_; }

    long epoch_day(int t) const { return start_day_ + t; }
    std::string iso_date(int t) const { return format_iso_date(epoch_day(t)); }
    int day_index(long epoch_day) const { return static_cast<int>(epoch_day - start_day_); }

    std::span<double> feature(int segment, int t) {
        return {features_.data() + offset(segment, t), static_cast<std::size_t>(n_features_)};
    }
    std::span<const double> feature(int segment, int t) const {
        return {features_.data() + offset(segment, t), static_cast<std::size_t>(n_features_)};
    }

    void set_label(int segment, int t, double value) {
        if (t < 0 || t >= n_days_) throw data_error("label day outside feature range");
        labels_[segment][t] = value;
    }
    void clear_label(int segment, int t) { labels_[segment].erase(t); }

    bool has_label(int segment, int t) const {
        return labels_[segment].count(t) != 0;
    }
    std::optional<double> label(int segment, int t) const {
        auto it = labels_[segment].find(t);
        if (it == labels_[segment].end()) return std::nullopt;
        return it->second;
    }
    const std::map<int, double>& labels_of(int segment) const { return labels_[segment]; }

    std::size_t label_count() const {
        std::size_t n = 0;
        for (const auto& m : labels_) n += m.size();
        return n;
    }

    std::size_t label_count_in(const Period& p) const {
        std::size_t n = 0;
        for (const auto& m : labels_)
            n += std::distance(m.lower_bound(p.start), m.upper_bound(p.end));
        return n;
    }

    /// All labeled (segment, day, value) in a period, in (day, segment) order.
    std::vector<LabeledSample> labels_in(const Period& p) const {
        std::vector<LabeledSample> out;
        for (int i = 0; i < n_segments(); ++i) {
            for (auto it = labels_[i].lower_bound(p.start); it != labels_[i].upper_bound(p.end); ++it)
                out.push_back({i, it->first, it->second});
        }
        std::sort(out.begin(), out.end(), [](const LabeledSample& a, const LabeledSample& b) {
            return a.day != b.day ? a.day < b.day : a.segment < b.segment;
        });
        return out;
    }

    /// Copy with labels outside `keep` removed. Used to scope what each
    /// pipeline stage is allowed to see.
    PanelData restricted_to(const std::vector<Period>& keep) const {
        PanelData out = *this;
        for (auto& m : out.labels_) {
            std::map<int, double> kept;
            for (const auto& [t, v] : m)
                for (const auto& p : keep)
                    if (p.contains(t)) {
                        kept.emplace(t, v);
                        break;
                    }
            m = std::move(kept);
        }
        return out;
    }

    const Standardization& standardization() const { return stats_; }
    bool standardized() const { return standardized_; }

    /// Z-score features (per feature dimension) and label values using
    /// statistics from the training period only. Zero-variance dimensions get
    /// unit scale.
    void standardize(const Period& train) {
        if (standardized_) throw config_error("panel already standardized");
        stats_.feature_mean.assign(n_features_, 0.0);
        stats_.feature_std.assign(n_features_, 0.0);
        const std::size_t count = static_cast<std::size_t>(n_segments()) * train.days();
        if (count == 0) throw config_error("empty training period");
        for (int i = 0; i < n_segments(); ++i)
            for (int t = train.start; t <= train.end; ++t) {
                const auto f = feature(i, t);
                for (int d = 0; d < n_features_; ++d) stats_.feature_mean[d] += f[d];
            }
        for (double& m : stats_.feature_mean) m /= static_cast<double>(count);
        for (int i = 0; i < n_segments(); ++i)
            for (int t = train.start; t <= train.end; ++t) {
                const auto f = feature(i, t);
                for (int d = 0; d < n_features_; ++d) {
                    const double c = f[d] - stats_.feature_mean[d];
                    stats_.feature_std[d] += c * c;
                }
            }
        for (double& s : stats_.feature_std) {
            s = std::sqrt(s / static_cast<double>(count));
            if (s == 0.0) s = 1.0;
        }
        double lm = 0.0, ls = 0.0;
        std::size_t ln = 0;
        for (int i = 0; i < n_segments(); ++i)
            for (auto it = labels_[i].lower_bound(train.start); it != labels_[i].upper_bound(train.end); ++it) {
                lm += it->second;
                ++ln;
            }
        if (ln > 0) {
            lm /= static_cast<double>(ln);
            for (int i = 0; i < n_segments(); ++i)
                for (auto it = labels_[i].lower_bound(train.start); it != labels_[i].upper_bound(train.end); ++it)
                    ls += (it->second - lm) * (it->second - lm);
            ls = std::sqrt(ls / static_cast<double>(ln));
        }
        stats_.target_mean = ln > 0 ? lm : 0.0;
        stats_.target_std = (ln > 0 && ls > 0.0) ? ls : 1.0;

        for (int i = 0; i < n_segments(); ++i)
            for (int t = 0; t < n_days_; ++t) {
                auto f = feature(i, t);
                for (int d = 0; d < n_features_; ++d)
                    f[d] = (f[d] - stats_.feature_mean[d]) / stats_.feature_std[d];
            }
        for (auto& m : labels_)
            for (auto& [t, v] : m) v = (v - stats_.target_mean) / stats_.target_std;
        standardized_ = true;
    }

    /// RMSE in z-scored space -> original units.
    double rmse_to_original_units(double z_rmse) const { return z_rmse * stats_.target_std; }

    /// Time-averaged feature vectors over a period (one row per segment).
    Matrix mean_features_over(const Period& p) const {
        Matrix m(n_segments(), n_features_);
        for (int i = 0; i < n_segments(); ++i) {
            auto out = m.row(i);
            for (int t = p.start; t <= p.end; ++t) {
                const auto f = feature(i, t);
                for (int d = 0; d < n_features_; ++d) out[d] += f[d];
            }
            for (int d = 0; d < n_features_; ++d) out[d] /= static_cast<double>(p.days());
        }
        return m;
    }

    TargetKind target_kind = TargetKind::temperature;

private:
    std::size_t offset(int segment, int t) const {
        return (static_cast<std::size_t>(segment) * n_days_ + t) * n_features_;
    }

    std::vector<std::string> ids_;
    int n_days_ = 0;
    int n_features_ = 0;
    long start_day_ = 0;
    std::vector<double> features_;
    std::vector<std::map<int, double>> labels_;
    Standardization stats_;
    bool standardized_ = false;
};

}  // namespace grreal
