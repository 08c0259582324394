#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "grreal/errors.hpp"
#include "grreal/river_graph.hpp"

using namespace grreal;

namespace {

using RawEdges = std::vector<std::tuple<std::string, std::string, double>>;

std::set<std::pair<int, int>> edge_set(const RiverGraph& g) {
    std::set<std::pair<int, int>> s;
    for (const auto& e : g.edges()) s.insert({e.from, e.to});
    return s;
}

}  // namespace

TEST_CASE("downstream closure on a chain adds the transitive edge") {
    const std::vector<std::string> ids{"a", "b", "c"};
    const RawEdges chain{{"a", "b", 2000.0}, {"b", "c", 3000.0}};

    const RiverGraph down = RiverGraph::build(ids, chain, GraphVariant::downstream);
    REQUIRE(edge_set(down) == std::set<std::pair<int, int>>{{0, 1}, {1, 2}, {0, 2}});
    for (const auto& e : down.edges())
        if (e.from == 0 && e.to == 2) REQUIRE(e.distance == 5000.0);  // path sum

    const RiverGraph direct = RiverGraph::build(ids, chain, GraphVariant::direct);
    REQUIRE(edge_set(direct) == std::set<std::pair<int, int>>{{0, 1}, {1, 2}});

    const RiverGraph none = RiverGraph::build(ids, chain, GraphVariant::none);
    REQUIRE(none.edges().empty());
    REQUIRE_FALSE(none.has_edges());
}

TEST_CASE("downstream closure is transitive on a deeper tree") {
    const std::vector<std::string> ids{"a", "b", "c", "d", "e"};
    const RawEdges edges{
        {"a", "c", 1.0}, {"b", "c", 2.0}, {"c", "d", 3.0}, {"d", "e", 4.0}};
    const RiverGraph g = RiverGraph::build(ids, edges, GraphVariant::downstream);
    const auto s = edge_set(g);
    // if (x,y) and (y,z) present then (x,z) present
    for (const auto& [x, y] : s)
        for (const auto& [y2, z] : s)
            if (y == y2) REQUIRE(s.count({x, z}) == 1);
    REQUIRE(s.count({0, 4}) == 1);  // a reaches e
    REQUIRE(s.count({1, 4}) == 1);  // b reaches e
}

TEST_CASE("multiple routes keep the shortest stream distance") {
    const std::vector<std::string> ids{"a", "b", "c", "d"};
    const RawEdges edges{
        {"a", "b", 1.0}, {"b", "d", 1.0}, {"a", "c", 5.0}, {"c", "d", 5.0}};
    const RiverGraph g = RiverGraph::build(ids, edges, GraphVariant::downstream);
    for (const auto& e : g.edges())
        if (e.from == 0 && e.to == 3) REQUIRE(e.distance == 2.0);
}

TEST_CASE("adjacency weight formula and monotonicity") {
    REQUIRE(adjacency_weight_from_z(0.0) == 0.5);
    REQUIRE(std::abs(adjacency_weight_from_z(std::log(3.0)) - 0.25) < 1e-15);

    // single edge: zero variance in distances -> z = 0 -> weight exactly 0.5
    const RiverGraph single = RiverGraph::build({"a", "b"}, {{"a", "b", 1234.0}},
                                                GraphVariant::direct);
    REQUIRE(single.adjacency()(0, 1) == 0.5);

    // shorter distance -> larger weight
    const RiverGraph two = RiverGraph::build(
        {"a", "b", "c"}, {{"a", "b", 1000.0}, {"b", "c", 9000.0}}, GraphVariant::direct);
    REQUIRE(two.adjacency()(0, 1) > two.adjacency()(1, 2));
    // two-edge z-scores are exactly +-1
    REQUIRE(std::abs(two.adjacency()(0, 1) - adjacency_weight_from_z(-1.0)) < 1e-15);
    REQUIRE(std::abs(two.adjacency()(1, 2) - adjacency_weight_from_z(1.0)) < 1e-15);

    // weights vanish exactly where no edge exists
    REQUIRE(two.adjacency()(0, 2) == 0.0);
    REQUIRE(two.adjacency()(1, 0) == 0.0);
}

TEST_CASE("adjacency is invariant to edge input order") {
    const std::vector<std::string> ids{"a", "b", "c", "d"};
    const RawEdges fwd{{"a", "b", 10.0}, {"b", "c", 20.0}, {"c", "d", 30.0}};
    RawEdges rev(fwd.rbegin(), fwd.rend());
    const RiverGraph g1 = RiverGraph::build(ids, fwd, GraphVariant::downstream);
    const RiverGraph g2 = RiverGraph::build(ids, rev, GraphVariant::downstream);
    REQUIRE(g1.adjacency().data == g2.adjacency().data);
}

TEST_CASE("construction errors: cycles, self-loops, bad ids, bad distances") {
    const std::vector<std::string> ids{"a", "b", "c"};
    REQUIRE_THROWS_AS(RiverGraph::build(ids, {{"a", "b", 1.0}, {"b", "c", 1.0}, {"c", "a", 1.0}},
                                        GraphVariant::direct),
                      graph_error);
    REQUIRE_THROWS_AS(RiverGraph::build(ids, {{"a", "a", 1.0}}, GraphVariant::direct),
                      graph_error);
    REQUIRE_THROWS_AS(RiverGraph::build(ids, {{"a", "zzz", 1.0}}, GraphVariant::direct),
                      data_error);
    REQUIRE_THROWS_AS(RiverGraph::build(ids, {{"a", "b", 0.0}}, GraphVariant::direct),
                      data_error);
    REQUIRE_THROWS_AS(RiverGraph::build(ids, {{"a", "b", -5.0}}, GraphVariant::direct),
                      data_error);
    REQUIRE_THROWS_AS(RiverGraph::build({"a", "a"}, {}, GraphVariant::none), data_error);
}

TEST_CASE("graph variant string round trip") {
    REQUIRE(graph_variant_from_string("downstream") == GraphVariant::downstream);
    REQUIRE(graph_variant_from_string("direct") == GraphVariant::direct);
    REQUIRE(graph_variant_from_string("none") == GraphVariant::none);
    REQUIRE_THROWS_AS(graph_variant_from_string("bogus"), config_error);
    REQUIRE(std::string(to_string(GraphVariant::downstream)) == "downstream");
}

TEST_CASE("edge CSV loading enforces the header and parses rows") {
    const auto path = std::filesystem::temp_directory_path() / "grreal_edges.csv";
    {
        std::ofstream out(path);
        out << "from_id,to_id,distance_m\nseg1,seg2,1500\nseg2,seg3,2500\n";
    }
    const RiverGraph g = RiverGraph::from_edges_csv(path.string(), {}, GraphVariant::direct);
    REQUIRE(g.node_count() == 3);
    REQUIRE(g.edges().size() == 2);
    REQUIRE(g.index_of("seg1") == 0);

    {
        std::ofstream out(path);
        out << "src,dst,len\nseg1,seg2,1500\n";
    }
    REQUIRE_THROWS_AS(RiverGraph::from_edges_csv(path.string(), {}, GraphVariant::direct),
                      data_error);
    std::filesystem::remove(path);
}

TEST_CASE("in and out adjacency lists are sorted and weighted") {
    const std::vector<std::string> ids{"a", "b", "c", "d"};
    const RawEdges edges{{"c", "d", 10.0}, {"a", "d", 20.0}, {"b", "d", 30.0}};
    const RiverGraph g = RiverGraph::build(ids, edges, GraphVariant::direct);
    const auto& in = g.in_edges(3);
    REQUIRE(in.size() == 3);
    REQUIRE(in[0].node == 0);
    REQUIRE(in[1].node == 1);
    REQUIRE(in[2].node == 2);
    for (const auto& n : in) REQUIRE(n.weight == g.adjacency()(n.node, 3));
    REQUIRE(g.out_edges(0).size() == 1);
    REQUIRE(g.in_edges(0).empty());
}

TEST_CASE("degree centrality: isolated nodes and star center") {
    const RiverGraph none = RiverGraph::build({"a", "b"}, {{"a", "b", 1.0}}, GraphVariant::none);
    for (double c : none.degree_centrality()) REQUIRE(c == 0.0);

    const RiverGraph star = RiverGraph::build(
        {"hub", "x", "y", "z"}, {{"hub", "x", 1.0}, {"hub", "y", 2.0}, {"hub", "z", 3.0}},
        GraphVariant::direct);
    const auto c = star.degree_centrality();
    REQUIRE(c[0] == 1.0);  // max degree
    for (int i = 1; i < 4; ++i) REQUIRE(c[static_cast<std::size_t>(i)] == 1.0 / 3.0);
}

TEST_CASE("node density from feature similarity") {
    const RiverGraph g = RiverGraph::build({"a", "b"}, {{"a", "b", 1.0}}, GraphVariant::direct);
    Matrix feats(2, 3);
    for (int d = 0; d < 3; ++d) {
        feats(0, d) = static_cast<double>(d + 1);
        feats(1, d) = static_cast<double>(d + 1);  // identical features
    }
    const NodeStats s = node_stats(g, feats);
    REQUIRE(std::abs(s.density[0] - 1.0) < 1e-12);
    REQUIRE(std::abs(s.density[1] - 1.0) < 1e-12);

    // zero feature vector contributes cosine 0 -> density maps to 0.5
    Matrix z(2, 3);
    z(0, 0) = 1.0;
    const NodeStats s2 = node_stats(g, z);
    REQUIRE(s2.density[0] == 0.5);

    Matrix wrong(3, 3);
    REQUIRE_THROWS_AS(node_stats(g, wrong), dimension_error);
}
