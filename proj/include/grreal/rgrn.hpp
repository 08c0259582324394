#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grreal/errors.hpp"
#include "grreal/numerics.hpp"
#include "grreal/panel.hpp"
#include "grreal/river_graph.hpp"
#include "grreal/rng.hpp"

namespace grreal {

/// Recurrent state of the graph cell: per-segment hidden vector, cell vector,
/// and the transfer variable q emitted on the previous day. All zeros at
/// sequence start, so the first step's neighbor sum is zero (one-day transfer
/// delay: upstream information needs a completed step to propagate).
struct NetState {
    Matrix h;
    Matrix c;
    Matrix q_prev;

    NetState() = default;
    NetState(int n_segments, int hidden)
        : h(Matrix::zeros(n_segments, hidden)),
          c(Matrix::zeros(n_segments, hidden)),
          q_prev(Matrix::zeros(n_segments, hidden)) {}

    bool empty() const { return h.rows == 0; }
};

/// Variational dropout masks applied to the h_{t-1} inputs of the four gate
/// computations (candidate, forget, input, output). One mask per gate, shared
/// across segments, held fixed for an entire forward pass.
struct GateMasks {
    DropoutMask c, f, g, o;
};

inline GateMasks sample_gate_masks(double keep_prob, int hidden, Rng& rng) {
    GateMasks m;
    m.c = sample_dropout_mask(keep_prob, hidden, rng);
    m.f = sample_dropout_mask(keep_prob, hidden, rng);
    m.g = sample_dropout_mask(keep_prob, hidden, rng);
    m.o = sample_dropout_mask(keep_prob, hidden, rng);
    return m;
}

/// Per-step forward tape for backpropagation through time.
struct StepCache {
    Matrix h_prev, c_prev, q_prev;  // state entering the step
    Matrix x;                       // N x D inputs
    Matrix cbar, f, g, o;           // post-activation gate values
    Matrix inner;                   // c_prev + neighbor transfer sum
    Matrix tanh_c;
    Matrix h, c, q_out;             // state leaving the step
    std::vector<double> yhat;
};

struct ForwardResult {
    Matrix yhat;                // window_days x N predictions
    std::vector<Matrix> h;      // per-day N x H hidden embeddings
    NetState final_state;
};

struct TrainReport {
    int epochs = 0;
    int updates = 0;
    double final_loss = 0.0;
};

/// Mean squared error over labeled pairs only. Labels are re-sorted into
/// canonical (day, segment) order first so the accumulated sum — and thus the
/// exact floating-point result — does not depend on the caller's iteration
/// order.
inline double masked_loss(const Matrix& yhat_window, int window_start,
                          std::vector<LabeledSample> labels) {
    if (labels.empty()) throw data_error("masked_loss: no labeled pairs in window");
    std::sort(labels.begin(), labels.end(), [](const LabeledSample& a, const LabeledSample& b) {
        return a.day != b.day ? a.day < b.day : a.segment < b.segment;
    });
    double sum = 0.0;
    for (const auto& s : labels) {
        const int t = s.day - window_start;
        if (t < 0 || t >= yhat_window.rows || s.segment < 0 || s.segment >= yhat_window.cols)
            throw dimension_error("masked_loss: label outside prediction window");
        const double d = yhat_window(t, s.segment) - s.value;
        sum += d * d;
    }
    return sum / static_cast<double>(labels.size());
}

/// The predictive model: a graph-aware recurrent cell. Each segment runs an
/// LSTM-style update whose cell state additionally integrates the previous
/// day's transfer variables q of upstream neighbors, weighted by the edge
/// weights W_ji. With no incoming edges the update is exactly a standard LSTM
/// (the neighbor accumulation is skipped entirely, preserving bitwise
/// equality with an independent LSTM implementation).
class PredictiveModel {
public:
    PredictiveModel(const RiverGraph* graph, int hidden, int n_features, Rng& init_rng)
        : graph_(graph), hidden_(hidden), n_features_(n_features) {
        if (graph_ == nullptr) throw config_error("PredictiveModel: null graph");
        if (hidden_ <= 0 || n_features_ <= 0)
            throw config_error("PredictiveModel: hidden size and feature count must be positive");
        params_.add("U_q", hidden_, hidden_);
        params_.add("b_q", hidden_, 1);
        for (const char* gate : {"c", "f", "g", "o"}) {
            params_.add(std::string("U_") + gate, hidden_, hidden_);
            params_.add(std::string("V_") + gate, hidden_, n_features_);
            params_.add(std::string("b_") + gate, hidden_, 1);
        }
        params_.add("W_y", 1, hidden_);
        params_.add("b_y", 1, 1);
        // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.
        for (auto& e : params_.entries()) {
            if (e.name[0] == 'b') continue;
            init_uniform_fanin(e.value, e.value.cols, init_rng);
        }
    }

    int hidden() const { return hidden_; }
    int n_features() const { return n_features_; }
    int n_segments() const { return graph_->node_count(); }
    const RiverGraph& graph() const { return *graph_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    NetState zero_state() const { return NetState(n_segments(), hidden_); }

    /// Advance one day. x_t is N x D. Predictions land in yhat (resized to N).
    /// `masks`, when given, applies variational dropout to the gate h-inputs.
    /// `cache`, when given, records the tape needed for the backward pass.
    void step(NetState& state, const Matrix& x_t, std::vector<double>& yhat,
              const GateMasks* masks = nullptr, StepCache* cache = nullptr) const {
        const int N = n_segments(), H = hidden_, D = n_features_;
        if (state.h.rows != N || state.h.cols != H || x_t.rows != N || x_t.cols != D)
            throw dimension_error("step: state or input shape mismatch");

        const Matrix& Uq = params_.param("U_q");
        const Matrix& bq = params_.param("b_q");
        const Matrix& Wy = params_.param("W_y");
        const double by = params_.param("b_y").data[0];

        Matrix cbar(N, H), f(N, H), g(N, H), o(N, H), inner(N, H), tanh_c(N, H);
        Matrix new_h(N, H), new_c(N, H), new_q(N, H);
        yhat.assign(N, 0.0);
        std::vector<double> htilde(H);

        // Accumulation-order contract (bit reproducibility): every gate
        // pre-activation is built as  a = b; a += U*h~ (columns left to
        // right); a += V*x  — matching add_matvec's inner loop.
        auto gate = [&](const char* name, int i, std::span<const double> hin,
                        std::span<const double> xin, const DropoutMask* m, Matrix& out,
                        bool use_tanh) {
            std::span<double> a = out.row(i);
            const Matrix& b = params_.param(std::string("b_") + name);
            std::copy(b.data.begin(), b.data.end(), a.begin());
            if (m != nullptr) {
                for (int u = 0; u < H; ++u) htilde[u] = m->scaled[u] * hin[u];
                add_matvec(a, params_.param(std::string("U_") + name), htilde);
            } else {
                add_matvec(a, params_.param(std::string("U_") + name), hin);
            }
            add_matvec(a, params_.param(std::string("V_") + name), xin);
            if (use_tanh)
                tanh_inplace(a);
            else
                sigmoid_inplace(a);
        };

        for (int i = 0; i < N; ++i) {
            const std::span<const double> hp = state.h.row(i);
            const std::span<const double> xi = x_t.row(i);
            gate("c", i, hp, xi, masks ? &masks->c : nullptr, cbar, true);
            gate("f", i, hp, xi, masks ? &masks->f : nullptr, f, false);
            gate("g", i, hp, xi, masks ? &masks->g : nullptr, g, false);
            gate("o", i, hp, xi, masks ? &masks->o : nullptr, o, false);

            // inner = c_prev + sum over in-edges of W_ji * q_j^{t-1}.
            // Nodes with no in-edges skip the accumulation so the arithmetic
            // is identical to a plain LSTM.
            std::span<double> in_i = inner.row(i);
            const std::span<const double> cp = state.c.row(i);
            std::copy(cp.begin(), cp.end(), in_i.begin());
            for (const auto& e : graph_->in_edges(i)) {
                const std::span<const double> qj = state.q_prev.row(e.node);
                for (int u = 0; u < H; ++u) in_i[u] += e.weight * qj[u];
            }

            std::span<double> ci = new_c.row(i);
            std::span<double> tci = tanh_c.row(i);
            std::span<double> hi = new_h.row(i);
            const std::span<const double> fi = f.row(i);
            const std::span<const double> gi = g.row(i);
            const std::span<const double> oi = o.row(i);
            const std::span<const double> cbi = cbar.row(i);
            for (int u = 0; u < H; ++u) {
                ci[u] = fi[u] * in_i[u] + gi[u] * cbi[u];
                tci[u] = std::tanh(ci[u]);
                hi[u] = oi[u] * tci[u];
            }

            // Transfer variable for tomorrow's neighbor sum: tanh(U_q h + b_q).
            std::span<double> qi = new_q.row(i);
            std::copy(bq.data.begin(), bq.data.end(), qi.begin());
            add_matvec(qi, Uq, hi);
            tanh_inplace(qi);

            double acc = by;
            for (int u = 0; u < H; ++u) acc += Wy(0, u) * hi[u];
            yhat[i] = acc;
            check_finite(acc, "step: prediction");
        }

        if (cache != nullptr) {
            cache->h_prev = state.h;
            cache->c_prev = state.c;
            cache->q_prev = state.q_prev;
            cache->x = x_t;
            cache->cbar = cbar;
            cache->f = f;
            cache->g = g;
            cache->o = o;
            cache->inner = inner;
            cache->tanh_c = tanh_c;
            cache->h = new_h;
            cache->c = new_c;
            cache->q_out = new_q;
            cache->yhat = yhat;
        }
        state.h = std::move(new_h);
        state.c = std::move(new_c);
        state.q_prev = std::move(new_q);
    }

    /// Unroll over an inclusive day range. `state` carries in (zero state by
    /// default) and is advanced in place.
    ForwardResult forward_window(const PanelData& panel, Period range, NetState state = {},
                                 const GateMasks* masks = nullptr) const {
        if (range.empty()) throw config_error("forward_window: empty day range");
        if (range.start < 0 || range.end >= panel.n_days())
            throw config_error("forward_window: range outside panel days");
        const int N = n_segments();
        if (panel.n_segments() != N || panel.n_features() != n_features_)
            throw dimension_error("forward_window: panel shape mismatch");
        if (state.empty()) state = zero_state();

        ForwardResult res;
        res.yhat = Matrix(range.days(), N);
        res.h.reserve(range.days());
        Matrix x(N, n_features_);
        std::vector<double> y;
        for (int t = range.start; t <= range.end; ++t) {
            load_inputs(panel, t, x);
            step(state, x, y, masks);
            std::span<double> row = res.yhat.row(t - range.start);
            std::copy(y.begin(), y.end(), row.begin());
            res.h.push_back(state.h);
        }
        res.final_state = std::move(state);
        return res;
    }

    /// Forward over one window from `state0`, masked loss over `labels`
    /// restricted to the window, and (optionally) analytic gradients
    /// accumulated into the ParamStore. Returns the loss; the carried-out
    /// state lands in `state_out` when non-null. Throws data_error if the
    /// window holds no labels.
    double window_loss_and_grads(const PanelData& panel, const LabeledSet& labels, Period window,
                                 const NetState& state0, bool accumulate_grads,
                                 NetState* state_out = nullptr,
                                 const GateMasks* masks = nullptr) const {
        if (window.empty()) throw config_error("window_loss_and_grads: empty window");
        const auto win_labels = labels.in_window(window.start, window.end);
        if (win_labels.empty()) throw data_error("window_loss_and_grads: no labels in window");
        const int N = n_segments(), len = window.days();

        std::vector<StepCache> tape(static_cast<std::size_t>(len));
        NetState state = state0.empty() ? zero_state() : state0;
        Matrix x(N, n_features_);
        std::vector<double> y;
        for (int t = window.start; t <= window.end; ++t) {
            load_inputs(panel, t, x);
            step(state, x, y, masks, &tape[static_cast<std::size_t>(t - window.start)]);
        }
        if (state_out != nullptr) *state_out = state;

        Matrix yhat(len, N);
        for (int k = 0; k < len; ++k) {
            const auto& c = tape[static_cast<std::size_t>(k)];
            std::copy(c.yhat.begin(), c.yhat.end(), yhat.row(k).begin());
        }
        const double loss =
            masked_loss(yhat, window.start, {win_labels.begin(), win_labels.end()});
        check_finite(loss, "window loss");
        if (accumulate_grads) backward(tape, window, win_labels, masks);
        return loss;
    }

    /// Truncated BPTT over `span`: consecutive windows of `window_len` days,
    /// hidden state carried across window boundaries (values only — gradients
    /// truncate at each window start), one clipped optimizer step per window
    /// that contains at least one label.
    TrainReport train_update(const PanelData& panel, const LabeledSet& labels, Period span,
                             int epochs, int window_len, Adam& opt, double clip = 5.0) {
        if (labels.empty()) throw data_error("train_update: empty labeled set");
        if (window_len <= 0) throw config_error("train_update: window length must be positive");
        TrainReport rep;
        for (int e = 0; e < epochs; ++e) {
            NetState state = zero_state();
            for (int w0 = span.start; w0 <= span.end; w0 += window_len) {
                const Period w{w0, std::min(w0 + window_len - 1, span.end)};
                NetState next;
                if (labels.in_window(w.start, w.end).empty()) {
                    // No observations: just advance the carried state.
                    Matrix x(n_segments(), n_features_);
                    std::vector<double> y;
                    for (int t = w.start; t <= w.end; ++t) {
                        load_inputs(panel, t, x);
                        step(state, x, y);
                    }
                    continue;
                }
                params_.zero_grads();
                const double loss =
                    window_loss_and_grads(panel, labels, w, state, true, &next);
                if (!std::isfinite(loss))
                    throw numerical_error("train_update: loss diverged in window starting at day " +
                                          std::to_string(w.start));
                params_.clip_grads(clip);
                opt.step(params_);
                state = std::move(next);
                rep.final_loss = loss;
                ++rep.updates;
            }
            ++rep.epochs;
        }
        return rep;
    }

private:
    void load_inputs(const PanelData& panel, int t, Matrix& x) const {
        for (int i = 0; i < x.rows; ++i) {
            const auto src = panel.feature(i, t);
            std::copy(src.begin(), src.end(), x.row(i).begin());
        }
    }

    /// Reverse pass over the recorded tape. Gradients are truncated at the
    /// window start (the carried-in state is treated as constant).
    void backward(const std::vector<StepCache>& tape, Period window,
                  std::span<const LabeledSample> labels, const GateMasks* masks) const {
        const int N = n_segments(), H = hidden_;
        const int len = static_cast<int>(tape.size());
        const double inv_m = 1.0 / static_cast<double>(labels.size());

        // Per local day: list of (segment, target) pairs.
        std::vector<std::vector<std::pair<int, double>>> by_day(static_cast<std::size_t>(len));
        for (const auto& s : labels)
            by_day[static_cast<std::size_t>(s.day - window.start)].emplace_back(s.segment, s.value);

        Matrix dh = Matrix::zeros(N, H);   // into h_t
        Matrix dc = Matrix::zeros(N, H);   // into c_t (cell path from future)
        Matrix dq = Matrix::zeros(N, H);   // into q emitted at t (used at t+1)

        Matrix& gUq = params_.grad("U_q");
        Matrix& gbq = params_.grad("b_q");
        Matrix& gWy = params_.grad("W_y");
        Matrix& gby = params_.grad("b_y");

        std::vector<double> daq(H), do_(H), dtc(H), dct(H), df(H), dinner(H), dg(H), dcbar(H),
            da(H), htilde(H), uback(H);

        for (int k = len - 1; k >= 0; --k) {
            const StepCache& cp = tape[static_cast<std::size_t>(k)];
            Matrix dh_prev = Matrix::zeros(N, H);
            Matrix dc_prev = Matrix::zeros(N, H);
            Matrix dq_prev = Matrix::zeros(N, H);

            // Prediction-head gradients for labels on this day.
            for (const auto& [seg, target] : by_day[static_cast<std::size_t>(k)]) {
                const double dy = 2.0 * inv_m * (cp.yhat[seg] - target);
                const std::span<const double> hi = cp.h.row(seg);
                std::span<double> dhi = dh.row(seg);
                for (int u = 0; u < H; ++u) {
                    gWy(0, u) += dy * hi[u];
                    dhi[u] += params_.param("W_y")(0, u) * dy;
                }
                gby.data[0] += dy;
            }

            for (int i = 0; i < N; ++i) {
                std::span<double> dhi = dh.row(i);
                const std::span<const double> dqi = dq.row(i);
                const std::span<const double> qi = cp.q_out.row(i);
                const std::span<const double> hi = cp.h.row(i);

                // q_out = tanh(U_q h + b_q), consumed by the next step's
                // neighbor sums; fold its gradient back into h_t.
                for (int u = 0; u < H; ++u) daq[u] = dqi[u] * dtanh_from_output(qi[u]);
                add_outer(gUq, daq, hi);
                for (int u = 0; u < H; ++u) gbq.data[static_cast<std::size_t>(u)] += daq[u];
                std::fill(uback.begin(), uback.end(), 0.0);
                add_matvec_t(uback, params_.param("U_q"), daq);
                for (int u = 0; u < H; ++u) dhi[u] += uback[u];

                const std::span<const double> oi = cp.o.row(i);
                const std::span<const double> tci = cp.tanh_c.row(i);
                const std::span<const double> fi = cp.f.row(i);
                const std::span<const double> gi = cp.g.row(i);
                const std::span<const double> cbi = cp.cbar.row(i);
                const std::span<const double> inni = cp.inner.row(i);
                const std::span<const double> dci_fut = dc.row(i);

                for (int u = 0; u < H; ++u) {
                    do_[u] = dhi[u] * tci[u];
                    dtc[u] = dhi[u] * oi[u];
                    dct[u] = dci_fut[u] + dtc[u] * dtanh_from_output(tci[u]);
                    df[u] = dct[u] * inni[u];
                    dinner[u] = dct[u] * fi[u];
                    dg[u] = dct[u] * cbi[u];
                    dcbar[u] = dct[u] * gi[u];
                    dc_prev(i, u) = dinner[u];
                }
                // Neighbor path: inner_i included W_ji * q_j^{t-1}.
                for (const auto& e : graph_->in_edges(i)) {
                    std::span<double> dqp = dq_prev.row(e.node);
                    for (int u = 0; u < H; ++u) dqp[u] += e.weight * dinner[u];
                }

                const std::span<const double> hp = cp.h_prev.row(i);
                const std::span<const double> xi = cp.x.row(i);
                auto gate_back = [&](const char* name, std::span<const double> act,
                                     std::span<const double> dact_out, const DropoutMask* m,
                                     bool is_tanh) {
                    for (int u = 0; u < H; ++u)
                        da[u] = dact_out[u] * (is_tanh ? dtanh_from_output(act[u])
                                                       : dsigmoid_from_output(act[u]));
                    Matrix& gU = params_.grad(std::string("U_") + name);
                    Matrix& gV = params_.grad(std::string("V_") + name);
                    Matrix& gb = params_.grad(std::string("b_") + name);
                    if (m != nullptr) {
                        for (int u = 0; u < H; ++u) htilde[u] = m->scaled[u] * hp[u];
                        add_outer(gU, da, htilde);
                    } else {
                        add_outer(gU, da, hp);
                    }
                    add_outer(gV, da, xi);
                    for (int u = 0; u < H; ++u) gb.data[static_cast<std::size_t>(u)] += da[u];
                    std::fill(uback.begin(), uback.end(), 0.0);
                    add_matvec_t(uback, params_.param(std::string("U_") + name), da);
                    std::span<double> dhp = dh_prev.row(i);
                    if (m != nullptr) {
                        for (int u = 0; u < H; ++u) dhp[u] += m->scaled[u] * uback[u];
                    } else {
                        for (int u = 0; u < H; ++u) dhp[u] += uback[u];
                    }
                };
                gate_back("c", cbi, dcbar, masks ? &masks->c : nullptr, true);
                gate_back("f", fi, df, masks ? &masks->f : nullptr, false);
                gate_back("g", gi, dg, masks ? &masks->g : nullptr, false);
                gate_back("o", oi, do_, masks ? &masks->o : nullptr, false);
            }

            dh = std::move(dh_prev);
            dc = std::move(dc_prev);
            dq = std::move(dq_prev);
        }
    }

    const RiverGraph* graph_;
    int hidden_;
    int n_features_;
    mutable ParamStore params_;
};

struct UncertaintyEstimate {
    std::vector<double> mean;  // ensemble-mean prediction per segment
    std::vector<double> u;     // population std per segment
};

namespace detail {
/// Welford accumulation keeps mean and variance exactly zero-deviation when
/// every member produces the identical value (drop probability 0 must yield
/// u == 0, not merely u < epsilon).
class WelfordSet {
public:
    explicit WelfordSet(int n) : mean_(n, 0.0), m2_(n, 0.0) {}

    void add(const std::vector<double>& values) {
        ++count_;
        for (std::size_t i = 0; i < mean_.size(); ++i) {
            const double delta = values[i] - mean_[i];
            mean_[i] += delta / static_cast<double>(count_);
            m2_[i] += delta * (values[i] - mean_[i]);
        }
    }

    UncertaintyEstimate finish() const {
        UncertaintyEstimate est;
        est.mean = mean_;
        est.u.resize(mean_.size());
        for (std::size_t i = 0; i < mean_.size(); ++i)
            est.u[i] = std::sqrt(m2_[i] / static_cast<double>(count_));
        return est;
    }

private:
    long count_ = 0;
    std::vector<double> mean_;
    std::vector<double> m2_;
};
}  // namespace detail

/// Monte Carlo dropout uncertainty: K stochastic forward passes over
/// [warmup_start, t], each with independently sampled gate masks held fixed
/// across the pass. Returns the per-segment ensemble mean and population
/// standard deviation at day t.
inline UncertaintyEstimate predict_with_uncertainty(const PredictiveModel& model,
                                                    const PanelData& panel, int t, int K,
                                                    double drop_prob, Rng& rng,
                                                    int warmup_start = 0) {
    if (K < 2) throw config_error("predict_with_uncertainty: K must be >= 2");
    if (drop_prob < 0.0 || drop_prob >= 1.0)
        throw config_error("predict_with_uncertainty: drop probability must be in [0,1)");
    const Period range{warmup_start, t};
    detail::WelfordSet acc(model.n_segments());
    for (int k = 0; k < K; ++k) {
        const GateMasks masks = sample_gate_masks(1.0 - drop_prob, model.hidden(), rng);
        const ForwardResult res = model.forward_window(panel, range, {}, &masks);
        std::vector<double> last(model.n_segments());
        const std::span<const double> row = res.yhat.row(range.days() - 1);
        std::copy(row.begin(), row.end(), last.begin());
        acc.add(last);
    }
    return acc.finish();
}

/// Streaming MC-dropout ensemble: K member states advanced day by day, each
/// under its own fixed gate masks (one "forward pass" extended through the
/// stream). Used by the environment so uncertainty at day t costs K steps,
/// not K full re-unrolls.
class EnsembleTracker {
public:
    EnsembleTracker(const PredictiveModel& model, int K, double drop_prob, Rng& rng)
        : keep_prob_(1.0 - drop_prob) {
        if (K < 2) throw config_error("EnsembleTracker: K must be >= 2");
        if (drop_prob < 0.0 || drop_prob >= 1.0)
            throw config_error("EnsembleTracker: drop probability must be in [0,1)");
        for (int k = 0; k < K; ++k) {
            masks_.push_back(sample_gate_masks(keep_prob_, model.hidden(), rng));
            states_.emplace_back(model.n_segments(), model.hidden());
        }
    }

    int members() const { return static_cast<int>(states_.size()); }

    void reset(const PredictiveModel& model) {
        for (auto& s : states_) s = model.zero_state();
    }

    /// Advance every member by one day; returns ensemble mean and u.
    UncertaintyEstimate step(const PredictiveModel& model, const Matrix& x_t) {
        detail::WelfordSet acc(model.n_segments());
        std::vector<double> y;
        for (std::size_t k = 0; k < states_.size(); ++k) {
            model.step(states_[k], x_t, y, &masks_[k]);
            acc.add(y);
        }
        return acc.finish();
    }

private:
    double keep_prob_;
    std::vector<GateMasks> masks_;
    std::vector<NetState> states_;
};

}  // namespace grreal
