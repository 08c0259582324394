#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "grreal/dates.hpp"
#include "grreal/errors.hpp"
#include "grreal/panel.hpp"

using namespace grreal;

namespace {
PanelData tiny_panel() {
    // 2 segments, 6 days, 2 features
    PanelData p({"s1", "s2"}, 6, 2, parse_iso_date("2020-01-01"));
    for (int i = 0; i < 2; ++i)
        for (int t = 0; t < 6; ++t) {
            p.feature(i, t)[0] = static_cast<double>(t + 1);
            p.feature(i, t)[1] = i == 0 ? 10.0 : 20.0;
        }
    return p;
}
}  // namespace

TEST_CASE("period arithmetic") {
    const Period p{3, 7};
    REQUIRE(p.days() == 5);
    REQUIRE(p.contains(3));
    REQUIRE(p.contains(7));
    REQUIRE_FALSE(p.contains(8));
    REQUIRE_FALSE(p.empty());
    REQUIRE(Period{4, 3}.empty());
}

TEST_CASE("labeled set keeps canonical order and deduplicates") {
    LabeledSet s;
    s.insert({1, 5, 0.5});
    s.insert({0, 5, 0.1});
    s.insert({2, 3, 0.9});
    s.insert({1, 5, 0.7});  // overwrite
    REQUIRE(s.size() == 3);
    const auto& v = s.items();
    REQUIRE(v[0].day == 3);
    REQUIRE(v[1].segment == 0);
    REQUIRE(v[2].segment == 1);
    REQUIRE(v[2].value == 0.7);
    REQUIRE(s.contains(2, 3));
    REQUIRE_FALSE(s.contains(2, 4));

    const auto w = s.in_window(4, 5);
    REQUIRE(w.size() == 2);
    REQUIRE(w[0].day == 5);
}

TEST_CASE("panel stores features, labels, and date mapping") {
    PanelData p = tiny_panel();
    REQUIRE(p.n_segments() == 2);
    REQUIRE(p.n_days() == 6);
    REQUIRE(p.iso_date(0) == "2020-01-01");
    REQUIRE(p.iso_date(5) == "2020-01-06");
    REQUIRE(p.day_index(parse_iso_date("2020-01-03")) == 2);

    p.set_label(0, 2, 3.5);
    p.set_label(1, 4, -1.0);
    REQUIRE(p.has_label(0, 2));
    REQUIRE(p.label(0, 2).value() == 3.5);
    REQUIRE_FALSE(p.label(0, 3).has_value());
    REQUIRE(p.label_count() == 2);
    REQUIRE(p.label_count_in({0, 2}) == 1);
    REQUIRE_THROWS_AS(p.set_label(0, 99, 1.0), data_error);

    p.clear_label(0, 2);
    REQUIRE_FALSE(p.has_label(0, 2));
}

TEST_CASE("labels_in returns canonical (day, segment) order") {
    PanelData p = tiny_panel();
    p.set_label(1, 1, 4.0);
    p.set_label(0, 1, 3.0);
    p.set_label(1, 0, 2.0);
    const auto v = p.labels_in({0, 5});
    REQUIRE(v.size() == 3);
    REQUIRE(v[0].day == 0);
    REQUIRE(v[1].day == 1);
    REQUIRE(v[1].segment == 0);
    REQUIRE(v[2].segment == 1);
}

TEST_CASE("restricted_to keeps only labels inside the allowed periods") {
    PanelData p = tiny_panel();
    p.set_label(0, 0, 1.0);
    p.set_label(0, 3, 2.0);
    p.set_label(1, 5, 3.0);
    const PanelData r = p.restricted_to({Period{0, 1}, Period{5, 5}});
    REQUIRE(r.has_label(0, 0));
    REQUIRE_FALSE(r.has_label(0, 3));
    REQUIRE(r.has_label(1, 5));
    REQUIRE(p.has_label(0, 3));  // original untouched
}

TEST_CASE("standardization uses training-period statistics only") {
    PanelData p = tiny_panel();
    // labels in the training period [0,3]: values 2 and 4 -> mean 3, pop std 1
    p.set_label(0, 1, 2.0);
    p.set_label(1, 2, 4.0);
    // label outside training period must not affect stats
    p.set_label(0, 5, 100.0);

    const Period train{0, 3};
    // feature 0 over train days {1,2,3,4} on both segments: mean 2.5
    p.standardize(train);
    const auto& st = p.standardization();
    REQUIRE(st.feature_mean[0] == 2.5);
    const double expected_sd0 = std::sqrt((2.25 + 0.25 + 0.25 + 2.25) * 2.0 / 8.0);
    REQUIRE(std::abs(st.feature_std[0] - expected_sd0) < 1e-12);
    // feature 1: values 10 and 20 -> mean 15, pop std 5
    REQUIRE(st.feature_mean[1] == 15.0);
    REQUIRE(st.feature_std[1] == 5.0);
    REQUIRE(st.target_mean == 3.0);
    REQUIRE(st.target_std == 1.0);

    REQUIRE(p.feature(0, 0)[1] == -1.0);
    REQUIRE(p.feature(1, 0)[1] == 1.0);
    REQUIRE(p.label(0, 1).value() == -1.0);
    REQUIRE(p.label(0, 5).value() == 97.0);  // transformed by train stats

    REQUIRE(p.rmse_to_original_units(2.0) == 2.0);
    REQUIRE_THROWS_AS(p.standardize(train), config_error);
}

TEST_CASE("zero-variance feature gets unit scale instead of dividing by zero") {
    PanelData p({"s"}, 3, 1, 0);
    for (int t = 0; t < 3; ++t) p.feature(0, t)[0] = 7.0;
    p.set_label(0, 0, 5.0);
    p.standardize({0, 2});
    REQUIRE(p.standardization().feature_std[0] == 1.0);
    REQUIRE(p.feature(0, 0)[0] == 0.0);
    // single label -> zero target variance -> unit scale
    REQUIRE(p.standardization().target_std == 1.0);
}

TEST_CASE("mean features over a period") {
    PanelData p = tiny_panel();
    const Matrix m = p.mean_features_over({0, 2});
    REQUIRE(m.rows == 2);
    REQUIRE(m(0, 0) == 2.0);  // mean of 1,2,3
    REQUIRE(m(0, 1) == 10.0);
    REQUIRE(m(1, 1) == 20.0);
}

TEST_CASE("target kind round trip") {
    REQUIRE(target_kind_from_string("temperature") == TargetKind::temperature);
    REQUIRE(target_kind_from_string("flow") == TargetKind::flow);
    REQUIRE(target_kind_from_string("streamflow") == TargetKind::flow);
    REQUIRE_THROWS_AS(target_kind_from_string("salinity"), config_error);
}
