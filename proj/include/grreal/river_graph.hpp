#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "grreal/csv.hpp"
#include "grreal/errors.hpp"
#include "grreal/numerics.hpp"

namespace grreal {

enum class GraphVariant { downstream, direct, none };

inline const char* to_string(GraphVariant v) {
    switch (v) {
        case GraphVariant::downstream: return "downstream";
        case GraphVariant::direct: return "direct";
        case GraphVariant::none: return "none";
    }
    return "?";
}

inline GraphVariant graph_variant_from_string(const std::string& s) {
    if (s == "downstream") return GraphVariant::downstream;
    if (s == "direct") return GraphVariant::direct;
    if (s == "none") return GraphVariant::none;
    throw config_error("unknown graph variant: '" + s + "'");
}

/// Directed segment-to-segment edge; direction is upstream -> downstream.
/// Edge weight from a standardized stream distance: 1/(1+exp(z)).
inline double adjacency_weight_from_z(double z) { return 1.0 / (1.0 + std::exp(z)); }

struct RiverEdge {
    int from = 0;
    int to = 0;
    double distance = 0.0;  // stream distance in meters
};

struct WeightedNeighbor {
    int node = 0;
    double weight = 0.0;
};

/// Weighted directed river-segment graph.
///
/// Construction resolves the requested variant (downstream closure, direct
/// neighbors, or no edges), verifies acyclicity, and derives the adjacency
/// weight matrix from standardized stream distances. Immutable afterwards.
class RiverGraph {
public:
    /// Build from a direct-neighbor edge list (ids resolved against
    /// `segment_ids`; every edge id must be present there).
    static RiverGraph build(std::vector<std::string> segment_ids,
                            const std::vector<std::tuple<std::string, std::string, double>>& raw_edges,
                            GraphVariant variant) {
        RiverGraph g;
        g.ids_ = std::move(segment_ids);
        g.variant_ = variant;
        std::unordered_map<std::string, int> index;
        for (int i = 0; i < static_cast<int>(g.ids_.size()); ++i) {
            if (!index.emplace(g.ids_[i], i).second)
                throw data_error("duplicate segment id: " + g.ids_[i]);
        }
        g.index_ = std::move(index);

        std::vector<RiverEdge> direct;
        direct.reserve(raw_edges.size());
        for (const auto& [from, to, dist] : raw_edges) {
            const auto fi = g.index_.find(from);
            const auto ti = g.index_.find(to);
            if (fi == g.index_.end()) throw data_error("edge references unknown segment id: " + from);
            if (ti == g.index_.end()) throw data_error("edge references unknown segment id: " + to);
            if (!(dist > 0.0)) throw data_error("edge " + from + "->" + to + " has non-positive distance");
            if (fi->second == ti->second) throw graph_error("self-loop on segment " + from);
            direct.push_back({fi->second, ti->second, dist});
        }
        g.check_acyclic(direct);

        switch (variant) {
            case GraphVariant::direct:
                g.edges_ = direct;
                break;
            case GraphVariant::none:
                g.edges_.clear();
                break;
            case GraphVariant::downstream:
                g.edges_ = downstream_closure(static_cast<int>(g.ids_.size()), direct);
                break;
        }
        // Canonical edge order makes the graph independent of input order.
        std::sort(g.edges_.begin(), g.edges_.end(), [](const RiverEdge& a, const RiverEdge& b) {
            return a.from != b.from ? a.from < b.from : a.to < b.to;
        });
        g.compute_weights();
        g.build_adjacency();
        return g;
    }

    static RiverGraph from_edges_csv(const std::string& path,
                                     std::vector<std::string> segment_ids,
                                     GraphVariant variant) {
        CsvReader csv(path);
        std::vector<std::string> row;
        if (!csv.next(row) || row.size() != 3 || row[0] != "from_id" || row[1] != "to_id" ||
            row[2] != "distance_m")
            throw data_error(path + ": expected header 'from_id,to_id,distance_m'");
        std::vector<std::tuple<std::string, std::string, double>> edges;
        while (csv.next(row)) {
            if (row.size() != 3) csv.fail("expected 3 fields");
            edges.emplace_back(row[0], row[1], csv.parse_double(row[2]));
        }
        if (segment_ids.empty()) {
            for (const auto& [f, t, d] : edges) {
                segment_ids.push_back(f);
                segment_ids.push_back(t);
            }
            std::sort(segment_ids.begin(), segment_ids.end());
            segment_ids.erase(std::unique(segment_ids.begin(), segment_ids.end()), segment_ids.end());
        }
        return build(std::move(segment_ids), edges, variant);
    }

    int node_count() const { return static_cast<int>(ids_.size()); }
    GraphVariant variant() const { return variant_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::string& id(int i) const { return ids_[i]; }
    int index_of(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw data_error("unknown segment id: " + id);
        return it->second;
    }

    const std::vector<RiverEdge>& edges() const { return edges_; }
    const Matrix& adjacency() const { return weights_; }

    /// Upstream neighbors of node i with adjacency weights, ordered by node.
    const std::vector<WeightedNeighbor>& in_edges(int i) const { return in_edges_[i]; }
    const std::vector<WeightedNeighbor>& out_edges(int i) const { return out_edges_[i]; }

    bool has_edges() const { return !edges_.empty(); }

    /// In+out degree of every node, normalized by the maximum (all zeros when
    /// the graph has no edges).
    std::vector<double> degree_centrality() const {
        std::vector<double> deg(ids_.size(), 0.0);
        for (const auto& e : edges_) {
            deg[e.from] += 1.0;
            deg[e.to] += 1.0;
        }
        const double mx = *std::max_element(deg.begin(), deg.end());
        if (mx > 0.0)
            for (double& d : deg) d /= mx;
        return deg;
    }

private:
    void check_acyclic(const std::vector<RiverEdge>& direct) const {
        const int n = node_count();
        std::vector<int> indeg(n, 0);
        std::vector<std::vector<int>> out(n);
        for (const auto& e : direct) {
            ++indeg[e.to];
            out[e.from].push_back(e.to);
        }
        std::vector<int> stack;
        for (int i = 0; i < n; ++i)
            if (indeg[i] == 0) stack.push_back(i);
        int seen = 0;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            ++seen;
            for (int v : out[u])
                if (--indeg[v] == 0) stack.push_back(v);
        }
        if (seen != n) throw graph_error("cycle detected in river network edge list");
    }

    /// Transitive closure with path-summed stream distances (shortest path
    /// when several routes exist).
    static std::vector<RiverEdge> downstream_closure(int n, const std::vector<RiverEdge>& direct) {
        std::vector<std::vector<std::pair<int, double>>> out(n);
        std::vector<int> indeg(n, 0);
        for (const auto& e : direct) {
            out[e.from].emplace_back(e.to, e.distance);
            ++indeg[e.to];
        }
        // topological order
        std::vector<int> order, stack;
        for (int i = 0; i < n; ++i)
            if (indeg[i] == 0) stack.push_back(i);
        std::vector<int> indeg2 = indeg;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            order.push_back(u);
            for (const auto& [v, d] : out[u])
                if (--indeg2[v] == 0) stack.push_back(v);
        }
        std::vector<RiverEdge> closure;
        constexpr double inf = std::numeric_limits<double>::infinity();
        std::vector<double> dist(n);
        std::vector<int> pos(n);
        for (int i = 0; i < n; ++i) pos[order[i]] = i;
        for (int src = 0; src < n; ++src) {
            std::fill(dist.begin(), dist.end(), inf);
            dist[src] = 0.0;
            for (int k = pos[src]; k < n; ++k) {
                const int u = order[k];
                if (dist[u] == inf) continue;
                for (const auto& [v, d] : out[u]) dist[v] = std::min(dist[v], dist[u] + d);
            }
            for (int j = 0; j < n; ++j)
                if (j != src && dist[j] < inf) closure.push_back({src, j, dist[j]});
        }
        return closure;
    }

    /// W_ij = 1/(1+exp(z_ij)) with z the z-score of the edge's stream distance
    /// over all edges of the constructed graph. A zero-variance distance set
    /// (e.g. a single edge) uses z = 0.
    void compute_weights() {
        const int n = node_count();
        weights_ = Matrix(n, n);
        if (edges_.empty()) return;
        double mean = 0.0;
        for (const auto& e : edges_) mean += e.distance;
        mean /= static_cast<double>(edges_.size());
        double var = 0.0;
        for (const auto& e : edges_) var += (e.distance - mean) * (e.distance - mean);
        var /= static_cast<double>(edges_.size());
        const double sd = std::sqrt(var);
        for (const auto& e : edges_) {
            const double z = sd > 0.0 ? (e.distance - mean) / sd : 0.0;
            weights_(e.from, e.to) = adjacency_weight_from_z(z);
        }
    }

    void build_adjacency() {
        const int n = node_count();
        in_edges_.assign(n, {});
        out_edges_.assign(n, {});
        for (const auto& e : edges_) {
            in_edges_[e.to].push_back({e.from, weights_(e.from, e.to)});
            out_edges_[e.from].push_back({e.to, weights_(e.from, e.to)});
        }
        for (auto& v : in_edges_)
            std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.node < b.node; });
        for (auto& v : out_edges_)
            std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.node < b.node; });
    }

    std::vector<std::string> ids_;
    std::unordered_map<std::string, int> index_;
    GraphVariant variant_ = GraphVariant::downstream;
    std::vector<RiverEdge> edges_;
    Matrix weights_;
    std::vector<std::vector<WeightedNeighbor>> in_edges_;
    std::vector<std::vector<WeightedNeighbor>> out_edges_;
};

/// Per-node structural statistics used by score-based labeling policies.
struct NodeStats {
    std::vector<double> centrality;  // degree centrality in [0,1]
    std::vector<double> density;     // mean pairwise feature similarity in [0,1]
};

/// Centrality is degree-based; density is the mean cosine similarity between a
/// node's time-averaged feature vector (rows of `mean_features`) and every
/// other node's, mapped from [-1,1] to [0,1]. Pairs involving a zero vector
/// contribute cosine 0.
inline NodeStats node_stats(const RiverGraph& graph, const Matrix& mean_features) {
    const int n = graph.node_count();
    if (mean_features.rows != n)
        throw dimension_error("node_stats: feature rows != node count");
    NodeStats s;
    s.centrality = graph.degree_centrality();
    s.density.assign(n, 0.0);
    std::vector<double> norms(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (double v : mean_features.row(i)) acc += v * v;
        norms[i] = std::sqrt(acc);
    }
    for (int i = 0; i < n; ++i) {
        if (n < 2) {
            s.density[i] = 0.5;
            continue;
        }
        double total = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            if (norms[i] == 0.0 || norms[j] == 0.0) continue;  // zero vector: contributes 0
            double dot = 0.0;
            const auto ri = mean_features.row(i);
            const auto rj = mean_features.row(j);
            for (int d = 0; d < mean_features.cols; ++d) dot += ri[d] * rj[d];
            total += dot / (norms[i] * norms[j]);
        }
        const double mean_cos = total / static_cast<double>(n - 1);
        s.density[i] = (mean_cos + 1.0) / 2.0;
        check_finite(s.density[i], "node density");
    }
    return s;
}

}  // namespace grreal
