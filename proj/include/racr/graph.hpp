#pragma once

#include <string>
#include <vector>

#include "racr/bag.hpp"
#include "racr/common.hpp"

namespace racr {

enum class GraphKind { Latent, Spatial };

struct Edge {
    int i, j;       // undirected pair, stored with i < j
    double weight;  // finite, >= 0
};

// Sparse undirected graph over a bag's patches. No stored self-loops.
struct SparseGraph {
    int n = 0;
    GraphKind kind = GraphKind::Latent;
    std::vector<Edge> edges;

    // Neighbor lists per node, sorted by weight descending then index.
    std::vector<std::vector<std::pair<int, double>>> neighbor_lists() const;
    bool has_edge(int a, int b) const;
};

struct DiffusionConfig {
    double alpha = 0.25;            // restart probability
    double truncation_tol = 1e-10;  // stop the series once theta_k falls below this
    int top_m = 5;                  // latent neighbors retained after diffusion
    double delta = 0.02;            // sparsification threshold (strict >)
    int k_latent = 8;
    int k_spatial = 8;
    bool use_similarity = true;     // edge weight 1-d (cosine similarity) vs literal distance
    int closed_form_max_n = 512;

    void validate() const;
};

// d = 1 - cos(f_i, f_j), in [0, 2]. Throws on a zero vector.
double cosine_distance(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b);

// k smallest distances per row of a full n x n distance matrix, self excluded,
// ties broken by smaller index. Throws when k >= n.
std::vector<std::vector<int>> knn(const MatrixXd& distances, int k);

// Mutual gating: j in r_i(k) iff j in N_k(i) and i in N_k(j).
std::vector<std::vector<int>> reciprocal_knn(const std::vector<std::vector<int>>& neighbors);

// Personalized-PageRank diffusion of a column-stochastic transition matrix
// built from the latent graph. Both routes agree within 1e-8 max-abs.
MatrixXd transition_matrix(const SparseGraph& latent);
MatrixXd ppr_diffuse_series(const MatrixXd& transition, double alpha, double truncation_tol);
MatrixXd ppr_diffuse_closed(const MatrixXd& transition, double alpha);
MatrixXd ppr_diffuse(const SparseGraph& latent, const DiffusionConfig& cfg);

// Per-node top_m selection on the symmetrized diffusion weights; an edge
// survives when either endpoint selects it and its weight is strictly > delta.
std::vector<std::vector<int>> top_m_candidates(const MatrixXd& diffused, int top_m);
SparseGraph sparsify(const MatrixXd& diffused, const DiffusionConfig& cfg);

SparseGraph spatial_knn(const std::vector<std::pair<int, int>>& coords, int k_spatial);

struct HybridGraph {
    SparseGraph latent;
    SparseGraph spatial;
};

HybridGraph build_hybrid_graph(const Bag& bag, const DiffusionConfig& cfg);

// Graph cache file: header "n=<N>" then one line per edge "kind i j weight".
void write_graph_cache(const HybridGraph& graph, const fs::path& file);
HybridGraph read_graph_cache(const fs::path& file);

}  // namespace racr
