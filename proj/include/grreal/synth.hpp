#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "grreal/csv.hpp"
#include "grreal/dates.hpp"
#include "grreal/errors.hpp"
#include "grreal/panel.hpp"
#include "grreal/river_graph.hpp"
#include "grreal/rng.hpp"

namespace grreal {

/// Pseudo-physics basin generator configuration. The dynamics are a
/// deliberately simple surrogate for a physics simulator: they keep the two
/// properties the method exploits — seasonality and delayed upstream
/// coupling — without calibrated hydrology.
struct SynthConfig {
    int n_segments = 12;
    int max_in_degree = 2;  // tributaries per node when the topology is random
    // Explicit edge list (from, to, distance_m); disengaged -> random DAG.
    // An engaged-but-empty list means a basin with no upstream coupling.
    std::optional<std::vector<std::tuple<std::string, std::string, double>>> edges;
    int years = 4;       // total generated span, 365-day years
    std::uint64_t seed = 1;
    double noise = 0.5;  // target noise sigma (also scales feature noise)
    double alpha = 0.5;  // advection mixing coefficient in [0,1]
    double kappa = 0.15; // damped seasonal response rate in (0,1]
    double sparsity = 0.2;  // observation fraction per segment
    TargetKind target = TargetKind::temperature;

    void validate() const {
        if (n_segments <= 0) throw config_error("synth: segment count must be positive");
        if (years <= 0) throw config_error("synth: years must be positive");
        if (max_in_degree < 1) throw config_error("synth: max in-degree must be >= 1");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw config_error("synth: alpha must be in [0,1]");
        if (!(sparsity >= 0.0 && sparsity <= 1.0))
            throw config_error("synth: sparsity must be in [0,1]");
        if (noise < 0.0) throw config_error("synth: noise must be non-negative");
        if (!(kappa > 0.0 && kappa <= 1.0)) throw config_error("synth: kappa must be in (0,1]");
    }
};

struct SynthBasin {
    std::vector<std::string> ids;
    std::vector<std::tuple<std::string, std::string, double>> edges;
    PanelData dense;     // simulation truth: a label on every segment-day
    PanelData observed;  // the sparsified subset emulating field observations
};

namespace detail {

inline std::string synth_segment_id(int i) {
    std::string n = std::to_string(i + 1);
    return "s" + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n;
}

// Upstream parents with inverse-distance weights normalized to sum 1.
struct UpstreamMix {
    std::vector<int> parents;
    std::vector<double> weights;
};

inline std::vector<UpstreamMix> upstream_mixes(
    const std::vector<std::string>& ids,
    const std::vector<std::tuple<std::string, std::string, double>>& edges) {
    std::vector<UpstreamMix> mix(ids.size());
    auto index_of = [&](const std::string& id) {
        const auto it = std::find(ids.begin(), ids.end(), id);
        if (it == ids.end()) throw config_error("synth: edge references unknown id " + id);
        return static_cast<int>(it - ids.begin());
    };
    for (const auto& [from, to, dist] : edges) {
        const int j = index_of(from), i = index_of(to);
        mix[static_cast<std::size_t>(i)].parents.push_back(j);
        mix[static_cast<std::size_t>(i)].weights.push_back(1.0 / dist);
    }
    for (auto& m : mix) {
        const double total = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
        if (total > 0.0)
            for (double& w : m.weights) w /= total;
    }
    return mix;
}

}  // namespace detail

/// Retain a per-segment fraction of labels uniformly at random; features are
/// untouched. Each segment draws from its own rng substream, so changing one
/// segment's schedule leaves the others' selections intact.
inline PanelData sparsify(const PanelData& dense, const std::vector<double>& schedule,
                          Rng& rng) {
    if (static_cast<int>(schedule.size()) != dense.n_segments())
        throw dimension_error("sparsify: schedule size != segment count");
    for (double f : schedule)
        if (!(f >= 0.0 && f <= 1.0)) throw config_error("sparsify: fractions must be in [0,1]");
    PanelData out = dense;
    const auto all = dense.labels_in(Period{0, dense.n_days() - 1});
    std::vector<Rng> streams;
    streams.reserve(static_cast<std::size_t>(dense.n_segments()));
    for (int i = 0; i < dense.n_segments(); ++i)
        streams.push_back(rng.split("sparsify", static_cast<std::uint64_t>(i)));
    for (const LabeledSample& s : all) {
        const double f = schedule[static_cast<std::size_t>(s.segment)];
        if (!streams[static_cast<std::size_t>(s.segment)].bernoulli(f))
            out.clear_label(s.segment, s.day);
    }
    return out;
}

inline PanelData sparsify(const PanelData& dense, double fraction, Rng& rng) {
    return sparsify(dense, std::vector<double>(static_cast<std::size_t>(dense.n_segments()),
                                               fraction),
                    rng);
}

/// Generate a synthetic basin. Features per segment-day (D = 6):
///   f0 seasonal air-temperature analogue (sinusoid + noise)
///   f1 precipitation (lognormal bursts)
///   f2, f3 day-of-year encoding (sin, cos)
///   f4 static elevation, f5 static reach length
/// Temperature target: damped seasonal response mixed with the inverse-
/// distance-weighted mean of upstream previous-day targets (one-day delay),
/// clipped to [-5, 40]. Streamflow target: linear-reservoir recession of
/// precipitation plus alpha-scaled upstream previous-day inflow, floored at 0.
/// All random draws come from per-segment substreams of the config seed, so
/// with alpha = 0 a segment's series is independent of the topology.
inline SynthBasin generate_basin(const SynthConfig& cfg) {
    cfg.validate();
    const int n = cfg.n_segments;
    const int n_days = cfg.years * 365;
    Rng master(cfg.seed);

    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids.push_back(detail::synth_segment_id(i));

    // Topology: explicit list, or a random DAG where node i >= 1 receives
    // 1..max_in_degree tributaries from lower-indexed nodes (acyclic by
    // construction).
    std::vector<std::tuple<std::string, std::string, double>> edges =
        cfg.edges.value_or(std::vector<std::tuple<std::string, std::string, double>>{});
    if (!cfg.edges.has_value() && n > 1) {
        Rng topo = master.split("topology");
        for (int i = 1; i < n; ++i) {
            const int d = 1 + static_cast<int>(topo.below(
                                  static_cast<std::uint64_t>(std::min(i, cfg.max_in_degree))));
            std::vector<int> pool(static_cast<std::size_t>(i));
            for (int k = 0; k < i; ++k) pool[static_cast<std::size_t>(k)] = k;
            topo.shuffle(pool);
            for (int k = 0; k < d; ++k)
                edges.emplace_back(ids[static_cast<std::size_t>(pool[static_cast<std::size_t>(k)])],
                                   ids[static_cast<std::size_t>(i)], topo.uniform(500.0, 5000.0));
        }
    }
    // Validate acyclicity and id references up front.
    (void)RiverGraph::build(ids, edges, GraphVariant::direct);
    const auto mixes = detail::upstream_mixes(ids, edges);

    const long start_epoch = days_from_civil(2000, 1, 1);
    PanelData dense(ids, n_days, 6, start_epoch);
    dense.target_kind = cfg.target;

    // Per-segment static parameters.
    std::vector<double> amp(static_cast<std::size_t>(n)), phase(static_cast<std::size_t>(n)),
        base(static_cast<std::size_t>(n)), elev(static_cast<std::size_t>(n)),
        length(static_cast<std::size_t>(n)), area(static_cast<std::size_t>(n)),
        recession(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng ps = master.split("segment_params", static_cast<std::uint64_t>(i));
        amp[static_cast<std::size_t>(i)] = ps.uniform(7.0, 11.0);
        phase[static_cast<std::size_t>(i)] = ps.uniform(-0.3, 0.3);
        base[static_cast<std::size_t>(i)] = ps.uniform(8.0, 14.0);
        elev[static_cast<std::size_t>(i)] = ps.uniform(0.0, 1.0);
        length[static_cast<std::size_t>(i)] = ps.uniform(0.2, 1.0);
        area[static_cast<std::size_t>(i)] = ps.uniform(0.5, 2.0);
        recession[static_cast<std::size_t>(i)] = ps.uniform(0.15, 0.35);
    }

    // Features first: each segment's series depends only on its own streams.
    constexpr double kTwoPi = 6.283185307179586;
    for (int i = 0; i < n; ++i) {
        Rng fnoise = master.split("feature_noise", static_cast<std::uint64_t>(i));
        Rng precip = master.split("precip", static_cast<std::uint64_t>(i));
        for (int t = 0; t < n_days; ++t) {
            const double season = kTwoPi * static_cast<double>(t % 365) / 365.0;
            auto f = dense.feature(i, t);
            f[0] = base[static_cast<std::size_t>(i)] +
                   amp[static_cast<std::size_t>(i)] *
                       std::sin(season + phase[static_cast<std::size_t>(i)]) +
                   cfg.noise * fnoise.normal();
            f[1] = precip.bernoulli(0.25) ? std::exp(precip.normal()) : 0.0;
            f[2] = std::sin(season);
            f[3] = std::cos(season);
            f[4] = elev[static_cast<std::size_t>(i)];
            f[5] = length[static_cast<std::size_t>(i)];
        }
    }

    // Targets: local damped response plus one-day-delayed upstream coupling.
    std::vector<Rng> tnoise;
    tnoise.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        tnoise.push_back(master.split("target_noise", static_cast<std::uint64_t>(i)));
    std::vector<double> damped(static_cast<std::size_t>(n));
    std::vector<double> storage(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) damped[static_cast<std::size_t>(i)] = base[static_cast<std::size_t>(i)];
    std::vector<double> prev(static_cast<std::size_t>(n), 0.0), cur(static_cast<std::size_t>(n), 0.0);

    for (int t = 0; t < n_days; ++t) {
        for (int i = 0; i < n; ++i) {
            const auto f = dense.feature(i, t);
            const auto iu = static_cast<std::size_t>(i);
            double local;
            if (cfg.target == TargetKind::temperature) {
                damped[iu] += cfg.kappa * (f[0] - damped[iu]);
                local = damped[iu];
            } else {
                storage[iu] = (1.0 - recession[iu]) * storage[iu] + f[1] * area[iu];
                local = recession[iu] * storage[iu];
            }
            double up = 0.0;
            const auto& mix = mixes[iu];
            if (cfg.target == TargetKind::temperature) {
                for (std::size_t k = 0; k < mix.parents.size(); ++k)
                    up += mix.weights[k] * prev[static_cast<std::size_t>(mix.parents[k])];
                if (t == 0 || mix.parents.empty()) up = local;  // no yesterday yet
            } else {
                for (int p : mix.parents) up += prev[static_cast<std::size_t>(p)];
                if (t == 0) up = 0.0;
            }
            double y;
            if (cfg.target == TargetKind::temperature) {
                y = (1.0 - cfg.alpha) * local + cfg.alpha * up;
                if (cfg.noise > 0.0) y += cfg.noise * tnoise[iu].normal();
                y = std::clamp(y, -5.0, 40.0);
            } else {
                y = local + cfg.alpha * up;
                if (cfg.noise > 0.0) y += cfg.noise * tnoise[iu].normal();
                y = std::max(y, 0.0);
            }
            cur[iu] = y;
            dense.set_label(i, t, y);
        }
        std::swap(prev, cur);
    }

    SynthBasin basin{std::move(ids), std::move(edges), std::move(dense), PanelData{}};
    Rng sparse_rng = master.split("observations");
    basin.observed = sparsify(basin.dense, cfg.sparsity, sparse_rng);
    return basin;
}

/// Write the basin in the CSV formats the experiment pipeline ingests
/// (features.csv, observations.csv, edges.csv under `dir`).
inline void export_basin(const SynthBasin& basin, const std::string& dir) {
    const PanelData& obs = basin.observed;
    {
        CsvWriter w(dir + "/features.csv");
        std::vector<std::string> header{"date", "segment_id"};
        for (int d = 1; d <= obs.n_features(); ++d) header.push_back("f" + std::to_string(d));
        w.row(header);
        for (int t = 0; t < obs.n_days(); ++t) {
            for (int i = 0; i < obs.n_segments(); ++i) {
                std::vector<std::string> row{
                    format_iso_date(obs.start_epoch_day() + t),
                    obs.segment_ids()[static_cast<std::size_t>(i)]};
                for (const double v : obs.feature(i, t)) row.push_back(format_double(v));
                w.row(row);
            }
        }
    }
    {
        CsvWriter w(dir + "/observations.csv");
        w.row({"date", "segment_id", "value"});
        const auto labels = obs.labels_in(Period{0, obs.n_days() - 1});
        for (const LabeledSample& s : labels)
            w.row({format_iso_date(obs.start_epoch_day() + s.day),
                   obs.segment_ids()[static_cast<std::size_t>(s.segment)],
                   format_double(s.value)});
    }
    {
        CsvWriter w(dir + "/edges.csv");
        w.row({"from_id", "to_id", "distance_m"});
        for (const auto& [from, to, dist] : basin.edges)
            w.row({from, to, format_double(dist)});
    }
}

}  // namespace grreal
