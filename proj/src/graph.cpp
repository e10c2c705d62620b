#include "racr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace racr {

std::vector<std::vector<std::pair<int, double>>> SparseGraph::neighbor_lists() const {
    std::vector<std::vector<std::pair<int, double>>> lists(n);
    for (const auto& edge : edges) {
        lists[edge.i].emplace_back(edge.j, edge.weight);
        lists[edge.j].emplace_back(edge.i, edge.weight);
    }
    for (auto& list : lists)
        std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
    return lists;
}

bool SparseGraph::has_edge(int a, int b) const {
    if (a > b) std::swap(a, b);
    return std::any_of(edges.begin(), edges.end(),
                       [&](const Edge& e) { return e.i == a && e.j == b; });
}

void DiffusionConfig::validate() const {
    if (alpha <= 0 || alpha >= 1) throw ValidationError("alpha must be in (0,1)");
    if (truncation_tol <= 0) throw ValidationError("truncation_tol must be > 0");
    if (top_m < 1) throw ValidationError("top_m must be >= 1");
    if (delta < 0) throw ValidationError("delta must be >= 0");
    if (k_latent < 1 || k_spatial < 1) throw ValidationError("k values must be >= 1");
}

double cosine_distance(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b) {
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw ValidationError("cosine_distance: zero vector");
    return 1.0 - a.dot(b) / (na * nb);
}

std::vector<std::vector<int>> knn(const MatrixXd& distances, int k) {
    int n = static_cast<int>(distances.rows());
    if (k >= n) throw ValidationError("knn: k must be < n");
    if (k < 1) throw ValidationError("knn: k must be >= 1");
    std::vector<std::vector<int>> neighbors(n);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) {
        order.clear();
        for (int j = 0; j < n; ++j)
            if (j != i) order.push_back(j);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (distances(i, a) != distances(i, b)) return distances(i, a) < distances(i, b);
            return a < b;
        });
        neighbors[i].assign(order.begin(), order.begin() + k);
        std::sort(neighbors[i].begin(), neighbors[i].end());
    }
    return neighbors;
}

std::vector<std::vector<int>> reciprocal_knn(const std::vector<std::vector<int>>& neighbors) {
    int n = static_cast<int>(neighbors.size());
    std::vector<std::set<int>> sets(n);
    for (int i = 0; i < n; ++i) sets[i].insert(neighbors[i].begin(), neighbors[i].end());
    std::vector<std::vector<int>> mutual(n);
    for (int i = 0; i < n; ++i)
        for (int j : neighbors[i])
            if (sets[j].count(i)) mutual[i].push_back(j);
    return mutual;
}

MatrixXd transition_matrix(const SparseGraph& latent) {
    int n = latent.n;
    MatrixXd adjacency = MatrixXd::Zero(n, n);
    for (const auto& edge : latent.edges) {
        if (!(edge.weight >= 0) || !std::isfinite(edge.weight))
            throw ValidationError("transition_matrix: bad edge weight");
        adjacency(edge.i, edge.j) = edge.weight;
        adjacency(edge.j, edge.i) = edge.weight;
    }
    // Nodes with no incident mass become self-absorbing so T stays stochastic.
    for (int j = 0; j < n; ++j)
        if (adjacency.col(j).sum() <= 0) adjacency(j, j) = 1.0;
    MatrixXd transition(n, n);
    for (int j = 0; j < n; ++j) transition.col(j) = adjacency.col(j) / adjacency.col(j).sum();
    return transition;
}

static void check_column_stochastic(const MatrixXd& transition) {
    for (int j = 0; j < transition.cols(); ++j) {
        if (transition.col(j).minCoeff() < -1e-12 ||
            std::abs(transition.col(j).sum() - 1.0) > 1e-9)
            throw ValidationError("ppr_diffuse: transition matrix is not column-stochastic");
    }
}

MatrixXd ppr_diffuse_series(const MatrixXd& transition, double alpha, double truncation_tol) {
    check_column_stochastic(transition);
    int n = static_cast<int>(transition.rows());
    MatrixXd power = MatrixXd::Identity(n, n);
    MatrixXd diffused = alpha * power;
    double theta = alpha;
    while (true) {
        theta *= (1.0 - alpha);
        if (theta < truncation_tol) break;
        power = transition * power;
        diffused += theta * power;
    }
    return diffused;
}

MatrixXd ppr_diffuse_closed(const MatrixXd& transition, double alpha) {
    check_column_stochastic(transition);
    int n = static_cast<int>(transition.rows());
    MatrixXd system = MatrixXd::Identity(n, n) - (1.0 - alpha) * transition;
    return alpha * system.partialPivLu().solve(MatrixXd::Identity(n, n));
}

MatrixXd ppr_diffuse(const SparseGraph& latent, const DiffusionConfig& cfg) {
    cfg.validate();
    MatrixXd transition = transition_matrix(latent);
    if (latent.n <= cfg.closed_form_max_n) return ppr_diffuse_closed(transition, cfg.alpha);
    return ppr_diffuse_series(transition, cfg.alpha, cfg.truncation_tol);
}

std::vector<std::vector<int>> top_m_candidates(const MatrixXd& diffused, int top_m) {
    int n = static_cast<int>(diffused.rows());
    MatrixXd weight = diffused.cwiseMax(diffused.transpose());
    std::vector<std::vector<int>> candidates(n);
    std::vector<int> order;
    for (int i = 0; i < n; ++i) {
        order.clear();
        for (int j = 0; j < n; ++j)
            if (j != i && weight(i, j) > 0) order.push_back(j);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (weight(i, a) != weight(i, b)) return weight(i, a) > weight(i, b);
            return a < b;
        });
        if (static_cast<int>(order.size()) > top_m) order.resize(top_m);
        candidates[i] = order;
    }
    return candidates;
}

SparseGraph sparsify(const MatrixXd& diffused, const DiffusionConfig& cfg) {
    int n = static_cast<int>(diffused.rows());
    MatrixXd weight = diffused.cwiseMax(diffused.transpose());
    auto candidates = top_m_candidates(diffused, cfg.top_m);
    std::set<std::pair<int, int>> kept;
    for (int i = 0; i < n; ++i)
        for (int j : candidates[i]) kept.insert({std::min(i, j), std::max(i, j)});
    SparseGraph graph;
    graph.n = n;
    graph.kind = GraphKind::Latent;
    for (auto [i, j] : kept)
        if (weight(i, j) > cfg.delta) graph.edges.push_back({i, j, weight(i, j)});
    return graph;
}

SparseGraph spatial_knn(const std::vector<std::pair<int, int>>& coords, int k_spatial) {
    int n = static_cast<int>(coords.size());
    SparseGraph graph;
    graph.n = n;
    graph.kind = GraphKind::Spatial;
    if (n < 2) return graph;
    MatrixXd distances(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double ds = coords[i].first - coords[j].first;
            double dt = coords[i].second - coords[j].second;
            distances(i, j) = std::sqrt(ds * ds + dt * dt);
        }
    int k = std::min(k_spatial, n - 1);
    auto neighbors = knn(distances, k);
    std::set<std::pair<int, int>> kept;
    for (int i = 0; i < n; ++i)
        for (int j : neighbors[i]) kept.insert({std::min(i, j), std::max(i, j)});
    for (auto [i, j] : kept) graph.edges.push_back({i, j, 1.0});
    return graph;
}

HybridGraph build_hybrid_graph(const Bag& bag, const DiffusionConfig& cfg) {
    cfg.validate();
    int n = bag.n();
    MatrixXd features = bag.features.cast<double>();

    HybridGraph hybrid;
    hybrid.spatial = spatial_knn(bag.coords, cfg.k_spatial);

    SparseGraph initial;
    initial.n = n;
    initial.kind = GraphKind::Latent;
    if (n >= 2) {
        MatrixXd distances = MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                distances(i, j) = distances(j, i) =
                    cosine_distance(features.row(i).transpose(), features.row(j).transpose());
        int k = std::min(cfg.k_latent, n - 1);
        auto mutual = reciprocal_knn(knn(distances, k));
        std::set<std::pair<int, int>> kept;
        for (int i = 0; i < n; ++i)
            for (int j : mutual[i]) kept.insert({std::min(i, j), std::max(i, j)});
        for (auto [i, j] : kept) {
            // Random-walk mass must be nonnegative; similarity below zero drops the edge.
            double weight = cfg.use_similarity ? std::max(0.0, 1.0 - distances(i, j))
                                               : distances(i, j);
            initial.edges.push_back({i, j, weight});
        }
    }
    hybrid.latent = sparsify(ppr_diffuse(initial, cfg), cfg);
    return hybrid;
}

void write_graph_cache(const HybridGraph& graph, const fs::path& file) {
    if (graph.latent.n != graph.spatial.n)
        throw ValidationError("graph cache: node count mismatch between graphs");
    std::ostringstream out;
    out << "n=" << graph.latent.n << "\n";
    char line[128];
    for (const auto& edge : graph.latent.edges) {
        std::snprintf(line, sizeof(line), "lat %d %d %.17g\n", edge.i, edge.j, edge.weight);
        out << line;
    }
    for (const auto& edge : graph.spatial.edges) {
        std::snprintf(line, sizeof(line), "spa %d %d %.17g\n", edge.i, edge.j, edge.weight);
        out << line;
    }
    write_text_file(file, out.str());
}

HybridGraph read_graph_cache(const fs::path& file) {
    std::istringstream in(read_text_file(file));
    std::string header;
    if (!std::getline(in, header) || header.rfind("n=", 0) != 0)
        throw IoError("graph cache: missing n= header in " + file.string());
    int n = std::stoi(header.substr(2));
    HybridGraph graph;
    graph.latent.n = graph.spatial.n = n;
    graph.latent.kind = GraphKind::Latent;
    graph.spatial.kind = GraphKind::Spatial;
    std::string kind;
    int i, j;
    double weight;
    while (in >> kind >> i >> j >> weight) {
        if (i < 0 || j < 0 || i >= n || j >= n || i == j)
            throw IoError("graph cache: bad edge in " + file.string());
        if (kind == "lat")
            graph.latent.edges.push_back({i, j, weight});
        else if (kind == "spa")
            graph.spatial.edges.push_back({i, j, weight});
        else
            throw IoError("graph cache: unknown edge kind '" + kind + "'");
    }
    return graph;
}

}  // namespace racr
