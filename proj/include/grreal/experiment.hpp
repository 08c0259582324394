#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grreal/alenv.hpp"
#include "grreal/baselines.hpp"
#include "grreal/checkpoint.hpp"
#include "grreal/csv.hpp"
#include "grreal/dates.hpp"
#include "grreal/errors.hpp"
#include "grreal/panel.hpp"
#include "grreal/qagent.hpp"
#include "grreal/rgrn.hpp"
#include "grreal/river_graph.hpp"
#include "grreal/rng.hpp"
#include "grreal/synth.hpp"

namespace grreal {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Four non-overlapping chronological spans (day indices into the panel):
/// train (streamed policy training), hold-out (reward evaluation), test
/// (frozen-policy label collection), evaluation (final scoring only).
struct PeriodSpec {
    Period train;
    Period holdout;
    Period test;
    Period eval;

    void validate() const {
        const std::pair<const Period*, const char*> spans[] = {
            {&train, "train"}, {&holdout, "holdout"}, {&test, "test"}, {&eval, "eval"}};
        for (const auto& [p, name] : spans) {
            if (p->start < 0 || p->empty())
                throw config_error(std::string("periods: ") + name + " period is empty");
        }
        if (train.end >= holdout.start || holdout.end >= test.start || test.end >= eval.start)
            throw config_error(
                "periods must be chronological and non-overlapping: "
                "train < holdout < test < eval");
    }
};

struct ExperimentConfig {
    // Data source: either the three CSVs or a synthetic basin.
    bool use_synth = true;
    SynthConfig synth;
    std::string features_csv;
    std::string observations_csv;
    std::string edges_csv;

    TargetKind target = TargetKind::temperature;
    GraphVariant variant = GraphVariant::downstream;
    PeriodSpec periods;

    int budget = 50;
    // Budget for the decision-model training passes; 0 means "same as
    // `budget`". A relaxed training budget lets the agent experience labels
    // across the whole seasonal cycle before deployment caps bind: with the
    // deployment budget also active during training, the yearly allowance is
    // spent within the first weeks of each simulated year and the replay
    // memory never contains a single out-of-season label to learn from.
    int train_budget = 0;
    std::string policy = "grreal";  // grreal | random | uncertainty | udc

    // Predictive model.
    int hidden = 12;
    int mc_members = 10;
    double drop_prob = 0.2;
    double predictive_lr = 3e-3;
    int fine_tune_steps = 3;
    int fine_tune_window = 180;
    int tbptt_window = 120;
    int final_train_epochs = 30;
    int eval_warmup_days = 365;  // deterministic spin-up before the eval unroll

    // Decision model and streaming.
    AgentConfig agent;
    int passes = 3;
    double holdout_subsample = 0.5;
    int holdout_eval_window = 365;
    bool carry_test_model = true;  // final training starts from the test-pass model

    // UDC score weights.
    double udc_w_u = 1.0 / 3.0;
    double udc_w_c = 1.0 / 3.0;
    double udc_w_d = 1.0 / 3.0;

    std::uint64_t seed = 1;
    std::string out_dir;             // empty: keep results in memory only
    std::string pretrained_policy;   // optional qnet checkpoint path

    void validate() const {
        if (policy != "grreal" && policy != "random" && policy != "uncertainty" &&
            policy != "udc")
            throw config_error("unknown policy: '" + policy + "'");
        if (budget <= 0) throw config_error("budget must be positive");
        if (train_budget < 0) throw config_error("train_budget must be >= 0");
        if (hidden <= 0) throw config_error("hidden size must be positive");
        if (mc_members < 1) throw config_error("mc_members must be >= 1");
        if (!(drop_prob >= 0.0 && drop_prob < 1.0))
            throw config_error("drop_prob must be in [0,1)");
        if (predictive_lr <= 0.0) throw config_error("predictive_lr must be positive");
        if (fine_tune_steps < 0) throw config_error("fine_tune_steps must be non-negative");
        if (fine_tune_window <= 0) throw config_error("fine_tune_window must be positive");
        if (tbptt_window <= 0) throw config_error("tbptt_window must be positive");
        if (final_train_epochs < 0)
            throw config_error("final_train_epochs must be non-negative");
        if (eval_warmup_days < 0) throw config_error("eval_warmup_days must be non-negative");
        if (passes <= 0) throw config_error("passes must be positive");
        if (!(holdout_subsample > 0.0 && holdout_subsample <= 1.0))
            throw config_error("holdout_subsample must be in (0,1]");
        if (holdout_eval_window < 0)
            throw config_error("holdout_eval_window must be non-negative");
        if (!use_synth &&
            (features_csv.empty() || observations_csv.empty() || edges_csv.empty()))
            throw config_error("CSV data source requires features, observations and edges paths");
        agent.validate();
        if (use_synth) synth.validate();
        periods.validate();
        if (policy == "udc")
            ThresholdCalib{ScoreKind::udc, 0.0, udc_w_u, udc_w_c, udc_w_d}.validate();
    }
};

// ---- JSON (de)serialization. nlohmann::json orders keys alphabetically, so
// a config echo serializes byte-identically across runs. ----

inline nlohmann::json period_to_json(const Period& p) {
    return {{"start", p.start}, {"end", p.end}};
}

inline Period period_from_json(const nlohmann::json& j) {
    return Period{j.at("start").get<int>(), j.at("end").get<int>()};
}

inline nlohmann::json synth_to_json(const SynthConfig& c) {
    nlohmann::json j{{"n_segments", c.n_segments}, {"max_in_degree", c.max_in_degree},
                     {"years", c.years},           {"seed", c.seed},
                     {"noise", c.noise},           {"alpha", c.alpha},
                     {"kappa", c.kappa},           {"sparsity", c.sparsity},
                     {"target", to_string(c.target)}};
    if (c.edges.has_value()) {
        nlohmann::json edges = nlohmann::json::array();
        for (const auto& [from, to, dist] : *c.edges)
            edges.push_back({{"from", from}, {"to", to}, {"distance_m", dist}});
        j["edges"] = std::move(edges);
    } else {
        j["edges"] = nullptr;
    }
    return j;
}

inline SynthConfig synth_from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.n_segments = j.value("n_segments", c.n_segments);
    c.max_in_degree = j.value("max_in_degree", c.max_in_degree);
    c.years = j.value("years", c.years);
    c.seed = j.value("seed", c.seed);
    c.noise = j.value("noise", c.noise);
    c.alpha = j.value("alpha", c.alpha);
    c.kappa = j.value("kappa", c.kappa);
    c.sparsity = j.value("sparsity", c.sparsity);
    if (j.contains("target")) c.target = target_kind_from_string(j.at("target").get<std::string>());
    if (j.contains("edges") && !j.at("edges").is_null()) {
        std::vector<std::tuple<std::string, std::string, double>> edges;
        for (const auto& e : j.at("edges"))
            edges.emplace_back(e.at("from").get<std::string>(), e.at("to").get<std::string>(),
                               e.at("distance_m").get<double>());
        c.edges = std::move(edges);
    }
    return c;
}

inline nlohmann::json agent_to_json(const AgentConfig& a) {
    return {{"gamma", a.gamma},
            {"epsilon", a.epsilon},
            {"batch_size", a.batch_size},
            {"target_refresh", a.target_refresh},
            {"updates_per_round", a.updates_per_round},
            {"learning_rate", a.learning_rate},
            {"hidden", a.hidden},
            {"replay_capacity", a.replay_capacity},
            {"normalize_rewards", a.normalize_rewards}};
}

inline AgentConfig agent_from_json(const nlohmann::json& j) {
    AgentConfig a;
    a.gamma = j.value("gamma", a.gamma);
    a.epsilon = j.value("epsilon", a.epsilon);
    a.batch_size = j.value("batch_size", a.batch_size);
    a.target_refresh = j.value("target_refresh", a.target_refresh);
    a.updates_per_round = j.value("updates_per_round", a.updates_per_round);
    a.learning_rate = j.value("learning_rate", a.learning_rate);
    a.hidden = j.value("hidden", a.hidden);
    a.replay_capacity = j.value("replay_capacity", a.replay_capacity);
    a.normalize_rewards = j.value("normalize_rewards", a.normalize_rewards);
    return a;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    return {{"use_synth", c.use_synth},
            {"synth", synth_to_json(c.synth)},
            {"features_csv", c.features_csv},
            {"observations_csv", c.observations_csv},
            {"edges_csv", c.edges_csv},
            {"target", to_string(c.target)},
            {"graph_variant", to_string(c.variant)},
            {"periods",
             {{"train", period_to_json(c.periods.train)},
              {"holdout", period_to_json(c.periods.holdout)},
              {"test", period_to_json(c.periods.test)},
              {"eval", period_to_json(c.periods.eval)}}},
            {"budget", c.budget},
            {"train_budget", c.train_budget},
            {"policy", c.policy},
            {"hidden", c.hidden},
            {"mc_members", c.mc_members},
            {"drop_prob", c.drop_prob},
            {"predictive_lr", c.predictive_lr},
            {"fine_tune_steps", c.fine_tune_steps},
            {"fine_tune_window", c.fine_tune_window},
            {"tbptt_window", c.tbptt_window},
            {"final_train_epochs", c.final_train_epochs},
            {"eval_warmup_days", c.eval_warmup_days},
            {"agent", agent_to_json(c.agent)},
            {"passes", c.passes},
            {"holdout_subsample", c.holdout_subsample},
            {"holdout_eval_window", c.holdout_eval_window},
            {"carry_test_model", c.carry_test_model},
            {"udc_w_u", c.udc_w_u},
            {"udc_w_c", c.udc_w_c},
            {"udc_w_d", c.udc_w_d},
            {"seed", c.seed},
            {"out_dir", c.out_dir},
            {"pretrained_policy", c.pretrained_policy}};
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.use_synth = j.value("use_synth", c.use_synth);
    if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"));
    c.features_csv = j.value("features_csv", c.features_csv);
    c.observations_csv = j.value("observations_csv", c.observations_csv);
    c.edges_csv = j.value("edges_csv", c.edges_csv);
    if (j.contains("target")) c.target = target_kind_from_string(j.at("target").get<std::string>());
    if (j.contains("graph_variant"))
        c.variant = graph_variant_from_string(j.at("graph_variant").get<std::string>());
    if (j.contains("periods")) {
        const auto& p = j.at("periods");
        c.periods.train = period_from_json(p.at("train"));
        c.periods.holdout = period_from_json(p.at("holdout"));
        c.periods.test = period_from_json(p.at("test"));
        c.periods.eval = period_from_json(p.at("eval"));
    }
    c.budget = j.value("budget", c.budget);
    c.train_budget = j.value("train_budget", c.train_budget);
    c.policy = j.value("policy", c.policy);
    c.hidden = j.value("hidden", c.hidden);
    c.mc_members = j.value("mc_members", c.mc_members);
    c.drop_prob = j.value("drop_prob", c.drop_prob);
    c.predictive_lr = j.value("predictive_lr", c.predictive_lr);
    c.fine_tune_steps = j.value("fine_tune_steps", c.fine_tune_steps);
    c.fine_tune_window = j.value("fine_tune_window", c.fine_tune_window);
    c.tbptt_window = j.value("tbptt_window", c.tbptt_window);
    c.final_train_epochs = j.value("final_train_epochs", c.final_train_epochs);
    c.eval_warmup_days = j.value("eval_warmup_days", c.eval_warmup_days);
    if (j.contains("agent")) c.agent = agent_from_json(j.at("agent"));
    c.passes = j.value("passes", c.passes);
    c.holdout_subsample = j.value("holdout_subsample", c.holdout_subsample);
    c.holdout_eval_window = j.value("holdout_eval_window", c.holdout_eval_window);
    c.carry_test_model = j.value("carry_test_model", c.carry_test_model);
    c.udc_w_u = j.value("udc_w_u", c.udc_w_u);
    c.udc_w_c = j.value("udc_w_c", c.udc_w_c);
    c.udc_w_d = j.value("udc_w_d", c.udc_w_d);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.pretrained_policy = j.value("pretrained_policy", c.pretrained_policy);
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": invalid config JSON: " + e.what());
    }
    try {
        return experiment_config_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": bad config field: " + e.what());
    }
}

inline void save_experiment_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write config: " + path);
    out << experiment_config_to_json(cfg).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

struct IngestReport {
    int n_segments = 0;
    int n_days = 0;
    int n_features = 0;
    long forward_filled = 0;   // segment-days filled from the previous row
    long duplicate_rows = 0;   // observation rows merged by averaging
    long observations = 0;     // labels after merging
    std::vector<std::string> warnings;
};

/// Load the feature and observation CSVs into a panel. The day grid spans the
/// full feature date range; gaps of at most three days per segment are
/// forward-filled, anything longer is a hard error. Observations outside the
/// feature range or naming unknown segments are rejected with their row
/// number; duplicate observation rows are averaged with a warning.
inline PanelData ingest_panel(const std::string& features_csv,
                              const std::string& observations_csv,
                              IngestReport* report = nullptr) {
    IngestReport rep;

    std::map<std::string, std::map<long, std::vector<double>>> rows;
    long min_day = std::numeric_limits<long>::max();
    long max_day = std::numeric_limits<long>::min();
    int n_features = 0;
    {
        CsvReader csv(features_csv);
        std::vector<std::string> row;
        if (!csv.next(row) || row.size() < 3 || row[0] != "date" || row[1] != "segment_id")
            throw data_error(features_csv +
                             ": expected header 'date,segment_id,<feature columns>'");
        n_features = static_cast<int>(row.size()) - 2;
        while (csv.next(row)) {
            if (row.size() != static_cast<std::size_t>(n_features) + 2)
                csv.fail("expected " + std::to_string(n_features + 2) + " fields");
            const long day = parse_iso_date(row[0]);
            auto& per_day = rows[row[1]];
            if (per_day.count(day))
                csv.fail("duplicate feature row for segment " + row[1] + " on " + row[0]);
            std::vector<double> f(static_cast<std::size_t>(n_features));
            for (int d = 0; d < n_features; ++d) {
                f[static_cast<std::size_t>(d)] = csv.parse_double(row[static_cast<std::size_t>(d) + 2]);
                if (!std::isfinite(f[static_cast<std::size_t>(d)]))
                    csv.fail("non-finite feature value");
            }
            per_day.emplace(day, std::move(f));
            min_day = std::min(min_day, day);
            max_day = std::max(max_day, day);
        }
    }
    if (rows.empty()) throw data_error(features_csv + ": no feature rows");

    std::vector<std::string> ids;
    ids.reserve(rows.size());
    for (const auto& [id, _] : rows) ids.push_back(id);
    const int n_days = static_cast<int>(max_day - min_day + 1);

    PanelData panel(ids, n_days, n_features, min_day);
    for (int i = 0; i < static_cast<int>(ids.size()); ++i) {
        const auto& per_day = rows[ids[static_cast<std::size_t>(i)]];
        int last = -1;
        for (int t = 0; t < n_days; ++t) {
            const auto it = per_day.find(min_day + t);
            auto dst = panel.feature(i, t);
            if (it != per_day.end()) {
                std::copy(it->second.begin(), it->second.end(), dst.begin());
                last = t;
            } else if (last >= 0 && t - last <= 3) {
                const auto src = panel.feature(i, last);
                std::copy(src.begin(), src.end(), dst.begin());
                ++rep.forward_filled;
            } else {
                throw data_error("segment " + ids[static_cast<std::size_t>(i)] +
                                 ": missing features at " + format_iso_date(min_day + t) +
                                 (last < 0 ? " (no earlier row to fill from)"
                                           : " (gap exceeds 3 days)"));
            }
        }
    }

    {
        CsvReader csv(observations_csv);
        std::vector<std::string> row;
        if (!csv.next(row) || row.size() != 3 || row[0] != "date" || row[1] != "segment_id" ||
            row[2] != "value")
            throw data_error(observations_csv + ": expected header 'date,segment_id,value'");
        std::map<std::pair<int, int>, std::pair<double, int>> acc;  // (seg,t) -> (sum, n)
        while (csv.next(row)) {
            if (row.size() != 3) csv.fail("expected 3 fields");
            const long day = parse_iso_date(row[0]);
            const auto it = std::lower_bound(ids.begin(), ids.end(), row[1]);
            if (it == ids.end() || *it != row[1])
                csv.fail("observation references unknown segment id '" + row[1] + "'");
            if (day < min_day || day > max_day)
                csv.fail("observation on " + row[0] + " is outside the feature date range " +
                         format_iso_date(min_day) + ".." + format_iso_date(max_day));
            const double v = csv.parse_double(row[2]);
            if (!std::isfinite(v)) csv.fail("non-finite observation value");
            auto& slot = acc[{static_cast<int>(it - ids.begin()), static_cast<int>(day - min_day)}];
            slot.first += v;
            if (++slot.second > 1) ++rep.duplicate_rows;
        }
        for (const auto& [key, sum_n] : acc) {
            panel.set_label(key.first, key.second, sum_n.first / sum_n.second);
            if (sum_n.second > 1) {
                const std::string w = "averaged " + std::to_string(sum_n.second) +
                                      " duplicate observations for segment " +
                                      ids[static_cast<std::size_t>(key.first)] + " on " +
                                      format_iso_date(min_day + key.second);
                rep.warnings.push_back(w);
                std::cerr << "ingest: " << w << '\n';
            }
        }
        rep.observations = static_cast<long>(acc.size());
    }

    rep.n_segments = static_cast<int>(ids.size());
    rep.n_days = n_days;
    rep.n_features = n_features;
    if (report) *report = rep;
    return panel;
}

// ---------------------------------------------------------------------------
// Evaluation and result artifacts
// ---------------------------------------------------------------------------

/// RMSE over held-back samples after a deterministic unroll that spins state
/// up from `warmup_days` before the scoring period. Returned in original
/// units via the panel's stored standardization.
inline double eval_rmse_original_units(const PredictiveModel& model, const PanelData& panel,
                                       const std::vector<LabeledSample>& samples,
                                       Period eval_period, int warmup_days) {
    if (samples.empty()) throw config_error("eval_rmse: no evaluation samples");
    const int start = std::max(0, eval_period.start - warmup_days);
    const ForwardResult fr = model.forward_window(panel, Period{start, eval_period.end});
    double se = 0.0;
    for (const LabeledSample& s : samples) {
        const double err = fr.yhat(s.day - start, s.segment) - s.value;
        se += err * err;
    }
    return panel.rmse_to_original_units(std::sqrt(se / static_cast<double>(samples.size())));
}

struct ResultBundle {
    ExperimentConfig config;
    std::vector<std::string> segment_ids;
    long start_epoch_day = 0;

    double eval_rmse = std::numeric_limits<double>::quiet_NaN();  // original units
    double initial_holdout_rmse = std::numeric_limits<double>::quiet_NaN();
    double final_holdout_rmse = std::numeric_limits<double>::quiet_NaN();
    int labels_used = 0;
    long days_run = 0;
    bool budget_exhausted = false;

    std::vector<StreamMetricsRow> metrics;    // test-pass per-day log
    std::vector<RequestLogRow> requests;      // every label request with outcome
    std::vector<LabeledSample> samples;       // granted labels, original units
    std::map<int, int> hist_week;             // calendar week of year -> grants
    std::map<std::string, int> hist_segment;  // segment id -> grants
};

inline void write_result_bundle(const ResultBundle& b, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_experiment_config(b.config, dir + "/config.json");
    {
        nlohmann::json j{{"eval_rmse", b.eval_rmse},
                         {"initial_holdout_rmse", b.initial_holdout_rmse},
                         {"final_holdout_rmse", b.final_holdout_rmse},
                         {"labels_used", b.labels_used},
                         {"days_run", b.days_run},
                         {"budget_exhausted", b.budget_exhausted},
                         {"policy", b.config.policy},
                         {"budget", b.config.budget},
                         {"seed", b.config.seed}};
        std::ofstream out(dir + "/result.json", std::ios::binary);
        if (!out) throw data_error("cannot write " + dir + "/result.json");
        out << j.dump(2) << '\n';
    }
    {
        std::ofstream out(dir + "/metrics.jsonl", std::ios::binary);
        if (!out) throw data_error("cannot write " + dir + "/metrics.jsonl");
        for (const StreamMetricsRow& r : b.metrics)
            out << nlohmann::json{{"t", r.t},
                                  {"rmse_holdout", r.rmse_holdout},
                                  {"remaining_budget", r.remaining_budget},
                                  {"n_granted", r.n_granted}}
                       .dump()
                << '\n';
    }
    {
        CsvWriter w(dir + "/labeled_log.csv");
        w.row({"day", "date", "segment_id", "granted", "reason"});
        for (const RequestLogRow& r : b.requests)
            w.row({std::to_string(r.day), format_iso_date(b.start_epoch_day + r.day),
                   b.segment_ids[static_cast<std::size_t>(r.segment)],
                   r.granted ? "true" : "false", r.reason});
    }
    {
        CsvWriter w(dir + "/samples.csv");
        w.row({"day", "date", "segment_id", "value"});
        for (const LabeledSample& s : b.samples)
            w.row({std::to_string(s.day), format_iso_date(b.start_epoch_day + s.day),
                   b.segment_ids[static_cast<std::size_t>(s.segment)], format_double(s.value)});
    }
    {
        CsvWriter w(dir + "/hist_week.csv");
        w.row({"week", "count"});
        for (const auto& [week, count] : b.hist_week)
            w.row({std::to_string(week), std::to_string(count)});
    }
    {
        CsvWriter w(dir + "/hist_segment.csv");
        w.row({"segment_id", "count"});
        for (const auto& [id, count] : b.hist_segment)
            w.row({id, std::to_string(count)});
    }
}

// ---------------------------------------------------------------------------
// The experiment pipeline
// ---------------------------------------------------------------------------

namespace detail {

inline void absorb_stream(ResultBundle& out, const PanelData& panel, StreamResult&& sr) {
    out.metrics = std::move(sr.metrics);
    out.requests = std::move(sr.requests);
    out.days_run = sr.days_run;
    out.budget_exhausted = sr.budget_exhausted;
    out.initial_holdout_rmse = panel.rmse_to_original_units(sr.initial_rmse_z);
    out.final_holdout_rmse = panel.rmse_to_original_units(sr.final_rmse_z);
}

struct PreparedData {
    PanelData panel;  // standardized, evaluation labels stripped
    RiverGraph graph;
    std::vector<LabeledSample> eval_labels;  // withheld, z units
};

/// Common front half of every pipeline verb: load or synthesize the basin,
/// build the graph, standardize on the training period, and move the
/// evaluation-period labels out of the pipeline's view.
inline PreparedData prepare_experiment_data(const ExperimentConfig& cfg) {
    cfg.validate();
    PanelData panel;
    std::vector<std::string> ids;
    std::vector<std::tuple<std::string, std::string, double>> edge_list;
    if (cfg.use_synth) {
        SynthBasin basin = generate_basin(cfg.synth);
        panel = std::move(basin.observed);
        ids = std::move(basin.ids);
        edge_list = std::move(basin.edges);
    } else {
        panel = ingest_panel(cfg.features_csv, cfg.observations_csv);
        ids = panel.segment_ids();
    }
    RiverGraph graph = cfg.use_synth
                           ? RiverGraph::build(ids, edge_list, cfg.variant)
                           : RiverGraph::from_edges_csv(cfg.edges_csv, ids, cfg.variant);
    panel.target_kind = cfg.target;
    if (cfg.periods.eval.end >= panel.n_days())
        throw config_error("evaluation period extends past the available data (" +
                           std::to_string(panel.n_days()) + " days)");

    panel.standardize(cfg.periods.train);

    // The evaluation period is scoring-only: its labels leave the pipeline's
    // view before any selection or training step can touch them.
    std::vector<LabeledSample> eval_labels = panel.labels_in(cfg.periods.eval);
    if (eval_labels.empty())
        throw config_error("no observations in the evaluation period");
    for (const LabeledSample& s : eval_labels) panel.clear_label(s.segment, s.day);

    return PreparedData{std::move(panel), std::move(graph), std::move(eval_labels)};
}

inline StreamOptions stream_options_for(const ExperimentConfig& cfg) {
    StreamOptions opt;
    opt.warmup_start = 0;  // deterministic state spin-up from the panel start
    opt.fine_tune_steps = cfg.fine_tune_steps;
    opt.fine_tune_window = cfg.fine_tune_window;
    opt.predictive_lr = cfg.predictive_lr;
    opt.mc_members = cfg.mc_members;
    opt.drop_prob = cfg.drop_prob;
    return opt;
}

// The leading slice of the training period (at most one year, at most half
// the period) whose historical labels fit the predictive model before any
// policy work starts.
inline Period warm_start_period(const Period& train) {
    const int days = std::min(365, train.days() / 2);
    return Period{train.start, train.start + days - 1};
}

// Supervised fit of `model` on the observed labels of `warm`; a no-op when
// the slice is empty, unlabeled, or the config disables training epochs.
inline void warm_start_model(PredictiveModel& model, const PanelData& panel, const Period& warm,
                             const ExperimentConfig& cfg) {
    if (warm.days() <= 0 || cfg.final_train_epochs <= 0) return;
    LabeledSet history;
    for (const LabeledSample& s : panel.labels_in(warm)) history.insert(s);
    if (history.empty()) return;
    Adam warm_opt(cfg.predictive_lr);
    model.train_update(panel, history, warm, cfg.final_train_epochs, cfg.tbptt_window, warm_opt);
}

}  // namespace detail

/// Run one experiment end to end:
///   1. load or synthesize the basin and standardize on the training period;
///   2. strip evaluation-period labels from the pipeline's view entirely;
///   3. train the policy by streaming passes over the training period
///      (rewards from the hold-out period);
///   4. stream the frozen policy once over the test period, collecting labels;
///   5. train the predictive model on the collected labels;
///   6. score on the withheld evaluation samples, in original units.
/// Baseline policies replace steps 3-4 with threshold streaming or pool
/// sampling; all label grants flow through the same BudgetLedger.
inline ResultBundle run_experiment(const ExperimentConfig& cfg) {
    detail::PreparedData data = detail::prepare_experiment_data(cfg);
    PanelData& panel = data.panel;
    const RiverGraph& graph = data.graph;
    const std::vector<LabeledSample>& eval_labels = data.eval_labels;

    Rng master(cfg.seed);
    Rng model_rng = master.split("model_init");
    Rng agent_rng = master.split("agent_init");
    Rng holdout_rng = master.split("holdout_subsample");
    Rng train_rng = master.split("train");
    Rng calib_rng = master.split("calibrate");
    Rng test_rng = master.split("test");
    Rng pool_rng = master.split("random_pool");

    PredictiveModel model(&graph, cfg.hidden, panel.n_features(), model_rng);
    const HoldoutEval holdout(panel, cfg.periods.holdout, cfg.holdout_subsample, holdout_rng,
                              cfg.holdout_eval_window);
    const StreamOptions opt = detail::stream_options_for(cfg);

    // Fit the predictive model to the first training year's historical
    // observations before any policy runs. Every policy deploys from the same
    // baseline competence, so results compare selection quality rather than
    // initialization luck, and training-pass rewards measure what a label is
    // worth to an already-working model -- the regime the frozen policy faces
    // in the test pass. A freshly initialized model would credit its first
    // grants with outsized hold-out improvements no matter what was labeled.
    const Period warm = detail::warm_start_period(cfg.periods.train);
    detail::warm_start_model(model, panel, warm, cfg);

    ResultBundle out;
    out.config = cfg;
    out.segment_ids = panel.segment_ids();
    out.start_epoch_day = panel.start_epoch_day();

    LabeledSet collected;
    BudgetLedger test_ledger(cfg.budget, cfg.periods.test);

    if (cfg.policy == "grreal") {
        QAgent agent(cfg.hidden + 3, cfg.agent, agent_rng);
        if (!cfg.pretrained_policy.empty()) {
            load_checkpoint_into(cfg.pretrained_policy, agent.qnet().params(), "qnet");
            agent.sync_target();
        }
        StreamOptions train_opt = opt;
        train_opt.stream = Period{warm.end + 1, cfg.periods.train.end};
        const int train_budget = cfg.train_budget > 0 ? cfg.train_budget : cfg.budget;
        multi_pass_train(model, agent, panel, holdout, train_budget, cfg.passes, train_opt,
                         train_rng);

        StreamOptions test_opt = opt;
        test_opt.stream = cfg.periods.test;
        AgentLabelPolicy policy(agent);
        StreamResult sr = run_stream(model, nullptr, policy, panel, holdout, test_ledger,
                                     StreamMode::test_pass, test_opt, test_rng);
        collected = std::move(sr.collected);
        detail::absorb_stream(out, panel, std::move(sr));
    } else if (cfg.policy == "uncertainty" || cfg.policy == "udc") {
        const ScoreKind kind =
            cfg.policy == "udc" ? ScoreKind::udc : ScoreKind::uncertainty;
        const NodeStats stats = node_stats(graph, panel.mean_features_over(cfg.periods.train));

        // Calibration replay: stream the training period without labeling to
        // collect the score distribution the threshold is drawn from. The
        // model never receives labels, so its parameters stay at init.
        ScoreRecordingPolicy recorder(kind, stats, cfg.udc_w_u, cfg.udc_w_c, cfg.udc_w_d);
        StreamOptions calib_opt = opt;
        calib_opt.stream = cfg.periods.train;
        BudgetLedger calib_ledger(cfg.budget, cfg.periods.train);
        run_stream(model, nullptr, recorder, panel, holdout, calib_ledger,
                   StreamMode::test_pass, calib_opt, calib_rng);
        const ThresholdCalib calib =
            calibrate_threshold(kind, recorder.scores(), cfg.budget, test_ledger.n_years(),
                                cfg.udc_w_u, cfg.udc_w_c, cfg.udc_w_d);

        StreamOptions test_opt = opt;
        test_opt.stream = cfg.periods.test;
        ThresholdLabelPolicy policy(calib, stats);
        StreamResult sr = run_stream(model, nullptr, policy, panel, holdout, test_ledger,
                                     StreamMode::test_pass, test_opt, test_rng);
        collected = std::move(sr.collected);
        detail::absorb_stream(out, panel, std::move(sr));
    } else {  // random: pool-based selection applied chronologically
        const LabeledSet pool =
            random_pool_select(panel, cfg.periods.test, cfg.budget, pool_rng);
        PoolApplication applied = apply_pool_selection(pool, test_ledger);
        collected = std::move(applied.granted);
        out.requests = std::move(applied.log);
        out.budget_exhausted = test_ledger.remaining() == 0;
        const double rmse0 = panel.rmse_to_original_units(holdout.rmse(model));
        out.initial_holdout_rmse = rmse0;
        out.final_holdout_rmse = rmse0;
    }

    if (!cfg.carry_test_model) {
        Rng fresh = master.split("model_init");  // identical init stream
        model = PredictiveModel(&graph, cfg.hidden, panel.n_features(), fresh);
    }
    if (!collected.empty() && cfg.final_train_epochs > 0) {
        Adam final_opt(cfg.predictive_lr);
        model.train_update(panel, collected, cfg.periods.test, cfg.final_train_epochs,
                           cfg.tbptt_window, final_opt);
    }

    out.labels_used = static_cast<int>(collected.size());
    for (const LabeledSample& s : collected.items()) {
        const auto& st = panel.standardization();
        out.samples.push_back(
            LabeledSample{s.segment, s.day, s.value * st.target_std + st.target_mean});
        const int week = (day_of_year(panel.start_epoch_day() + s.day) - 1) / 7 + 1;
        ++out.hist_week[week];
        ++out.hist_segment[out.segment_ids[static_cast<std::size_t>(s.segment)]];
    }
    out.eval_rmse = eval_rmse_original_units(model, panel, eval_labels, cfg.periods.eval,
                                             cfg.eval_warmup_days);

    if (!cfg.out_dir.empty()) write_result_bundle(out, cfg.out_dir);
    return out;
}

/// The training stage alone, writing its artifacts to `out_dir`: grreal
/// emits policy.json (decision model) and model.json (predictive model);
/// uncertainty/udc emit calibration.json; random has nothing to train.
/// Returns the summary also written to train_summary.json.
inline nlohmann::json train_only(const ExperimentConfig& cfg, const std::string& out_dir) {
    if (out_dir.empty()) throw config_error("train: output directory required");
    detail::PreparedData data = detail::prepare_experiment_data(cfg);
    std::filesystem::create_directories(out_dir);

    Rng master(cfg.seed);
    Rng model_rng = master.split("model_init");
    Rng agent_rng = master.split("agent_init");
    Rng holdout_rng = master.split("holdout_subsample");
    Rng train_rng = master.split("train");
    Rng calib_rng = master.split("calibrate");

    PredictiveModel model(&data.graph, cfg.hidden, data.panel.n_features(), model_rng);
    const HoldoutEval holdout(data.panel, cfg.periods.holdout, cfg.holdout_subsample,
                              holdout_rng, cfg.holdout_eval_window);
    const StreamOptions opt = detail::stream_options_for(cfg);

    // Same baseline fit as run_experiment: the shipped checkpoints must come
    // from a model with first-year competence, not a cold start.
    const Period warm = detail::warm_start_period(cfg.periods.train);
    detail::warm_start_model(model, data.panel, warm, cfg);

    nlohmann::json summary{{"policy", cfg.policy}, {"seed", cfg.seed}, {"budget", cfg.budget}};
    if (cfg.policy == "grreal") {
        QAgent agent(cfg.hidden + 3, cfg.agent, agent_rng);
        if (!cfg.pretrained_policy.empty()) {
            load_checkpoint_into(cfg.pretrained_policy, agent.qnet().params(), "qnet");
            agent.sync_target();
        }
        StreamOptions train_opt = opt;
        train_opt.stream = Period{warm.end + 1, cfg.periods.train.end};
        const int train_budget = cfg.train_budget > 0 ? cfg.train_budget : cfg.budget;
        const auto passes = multi_pass_train(model, agent, data.panel, holdout, train_budget,
                                             cfg.passes, train_opt, train_rng);
        save_checkpoint(out_dir + "/policy.json", agent.qnet().params(), "qnet");
        save_checkpoint(out_dir + "/model.json", model.params(), "rgrn");
        summary["passes"] = cfg.passes;
        summary["replay_transitions"] = agent.replay().size();
        summary["final_holdout_rmse"] =
            data.panel.rmse_to_original_units(passes.back().final_rmse_z);
    } else if (cfg.policy == "uncertainty" || cfg.policy == "udc") {
        const ScoreKind kind =
            cfg.policy == "udc" ? ScoreKind::udc : ScoreKind::uncertainty;
        const NodeStats stats =
            node_stats(data.graph, data.panel.mean_features_over(cfg.periods.train));
        ScoreRecordingPolicy recorder(kind, stats, cfg.udc_w_u, cfg.udc_w_c, cfg.udc_w_d);
        StreamOptions calib_opt = opt;
        calib_opt.stream = cfg.periods.train;
        BudgetLedger calib_ledger(cfg.budget, cfg.periods.train);
        run_stream(model, nullptr, recorder, data.panel, holdout, calib_ledger,
                   StreamMode::test_pass, calib_opt, calib_rng);
        const BudgetLedger test_ledger(cfg.budget, cfg.periods.test);
        const ThresholdCalib calib =
            calibrate_threshold(kind, recorder.scores(), cfg.budget, test_ledger.n_years(),
                                cfg.udc_w_u, cfg.udc_w_c, cfg.udc_w_d);
        const nlohmann::json doc{{"kind", cfg.policy},      {"threshold", calib.threshold},
                                 {"w_u", calib.w_u},        {"w_c", calib.w_c},
                                 {"w_d", calib.w_d},        {"budget", cfg.budget},
                                 {"scores_seen", recorder.scores().size()}};
        std::ofstream out(out_dir + "/calibration.json", std::ios::binary);
        if (!out) throw data_error("cannot write " + out_dir + "/calibration.json");
        out << doc.dump(2) << '\n';
        summary["threshold"] = calib.threshold;
    } else {
        summary["note"] = "random policy requires no training";
    }

    std::ofstream out(out_dir + "/train_summary.json", std::ios::binary);
    if (!out) throw data_error("cannot write " + out_dir + "/train_summary.json");
    out << summary.dump(2) << '\n';
    return summary;
}

// ---------------------------------------------------------------------------
// Policy pretraining on a synthetic basin
// ---------------------------------------------------------------------------

/// Train the decision model on a synthetic basin and write a qnet checkpoint.
/// The per-segment state layout is independent of the basin, so the policy
/// transfers to any target run with the same hidden size. The synthetic span
/// is split 70/30 into a training stream and a reward hold-out.
inline void pretrain_policy(const ExperimentConfig& cfg, const std::string& out_path) {
    cfg.validate();
    SynthBasin basin = generate_basin(cfg.synth);
    PanelData panel = std::move(basin.observed);
    panel.target_kind = cfg.synth.target;
    const RiverGraph graph = RiverGraph::build(basin.ids, basin.edges, cfg.variant);

    const int n_days = panel.n_days();
    const int split = (n_days * 7) / 10;
    const Period train{0, split - 1};
    const Period holdout_p{split, n_days - 1};
    if (train.days() < 30 || holdout_p.days() < 30)
        throw config_error("pretrain: synthetic span too short to split");
    panel.standardize(train);

    Rng master(cfg.seed);
    Rng model_rng = master.split("model_init");
    Rng agent_rng = master.split("agent_init");
    Rng holdout_rng = master.split("holdout_subsample");
    Rng train_rng = master.split("train");

    PredictiveModel model(&graph, cfg.hidden, panel.n_features(), model_rng);
    QAgent agent(cfg.hidden + 3, cfg.agent, agent_rng);
    const HoldoutEval holdout(panel, holdout_p, cfg.holdout_subsample, holdout_rng,
                              cfg.holdout_eval_window);

    // Match the deployment pipeline: passes start from a model with
    // first-year competence so rewards are not dominated by cold-start gains.
    const Period warm = detail::warm_start_period(train);
    detail::warm_start_model(model, panel, warm, cfg);

    StreamOptions opt;
    opt.stream = Period{warm.end + 1, train.end};
    opt.warmup_start = 0;
    opt.fine_tune_steps = cfg.fine_tune_steps;
    opt.fine_tune_window = cfg.fine_tune_window;
    opt.predictive_lr = cfg.predictive_lr;
    opt.mc_members = cfg.mc_members;
    opt.drop_prob = cfg.drop_prob;

    const int train_budget = cfg.train_budget > 0 ? cfg.train_budget : cfg.budget;
    multi_pass_train(model, agent, panel, holdout, train_budget, cfg.passes, opt, train_rng);
    save_checkpoint(out_path, agent.qnet().params(), "qnet");
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepCell {
    std::string policy;
    int budget = 0;
    std::vector<std::uint64_t> seeds;     // seeds that completed
    std::vector<double> rmses;            // matching eval RMSEs
    std::vector<std::string> failures;    // "seed N: message"
    double mean_rmse = std::numeric_limits<double>::quiet_NaN();
    double std_rmse = std::numeric_limits<double>::quiet_NaN();  // population
};

/// Run the policy x budget grid with paired seeds. Individual run failures
/// are recorded in the cell and the sweep continues. Writes sweep.csv and
/// sweep.json under `out_dir` unless it is empty.
inline std::vector<SweepCell> run_sweep(const ExperimentConfig& base,
                                        const std::vector<std::string>& policies,
                                        const std::vector<int>& budgets,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::string& out_dir) {
    if (policies.empty() || budgets.empty())
        throw config_error("sweep: need at least one policy and one budget");
    if (seeds.size() < 2)
        throw config_error("sweep: need at least 2 seeds for a spread estimate");

    std::vector<SweepCell> cells;
    for (const std::string& policy : policies) {
        for (const int budget : budgets) {
            SweepCell cell;
            cell.policy = policy;
            cell.budget = budget;
            for (const std::uint64_t seed : seeds) {
                ExperimentConfig cfg = base;
                cfg.policy = policy;
                cfg.budget = budget;
                cfg.seed = seed;
                cfg.out_dir = out_dir.empty()
                                  ? std::string{}
                                  : out_dir + "/" + policy + "_b" + std::to_string(budget) +
                                        "_s" + std::to_string(seed);
                try {
                    const ResultBundle r = run_experiment(cfg);
                    cell.seeds.push_back(seed);
                    cell.rmses.push_back(r.eval_rmse);
                } catch (const std::exception& e) {
                    cell.failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
                    std::cerr << "sweep: " << policy << " budget " << budget << " seed " << seed
                              << " failed: " << e.what() << '\n';
                }
            }
            if (!cell.rmses.empty()) {
                double m = 0.0;
                for (double r : cell.rmses) m += r;
                m /= static_cast<double>(cell.rmses.size());
                double v = 0.0;
                for (double r : cell.rmses) v += (r - m) * (r - m);
                cell.mean_rmse = m;
                cell.std_rmse = std::sqrt(v / static_cast<double>(cell.rmses.size()));
            }
            cells.push_back(std::move(cell));
        }
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        {
            CsvWriter w(out_dir + "/sweep.csv");
            w.row({"policy", "budget", "n_runs", "n_failures", "mean_rmse", "std_rmse"});
            for (const SweepCell& c : cells)
                w.row({c.policy, std::to_string(c.budget), std::to_string(c.rmses.size()),
                       std::to_string(c.failures.size()),
                       c.rmses.empty() ? "" : format_double(c.mean_rmse),
                       c.rmses.empty() ? "" : format_double(c.std_rmse)});
        }
        {
            nlohmann::json j = nlohmann::json::array();
            for (const SweepCell& c : cells) {
                nlohmann::json cell{{"policy", c.policy},
                                    {"budget", c.budget},
                                    {"seeds", c.seeds},
                                    {"rmses", c.rmses},
                                    {"failures", c.failures}};
                if (!c.rmses.empty()) {
                    cell["mean_rmse"] = c.mean_rmse;
                    cell["std_rmse"] = c.std_rmse;
                }
                j.push_back(std::move(cell));
            }
            std::ofstream out(out_dir + "/sweep.json", std::ios::binary);
            if (!out) throw data_error("cannot write " + out_dir + "/sweep.json");
            out << j.dump(2) << '\n';
        }
    }
    return cells;
}

}  // namespace grreal
