#pragma once

#include <functional>
#include <vector>

#include "racr/common.hpp"

namespace racr {

// Reverse-mode autodiff over dense matrices. Nodes are pushed in topological
// order during the forward pass; backward() replays registered closures in
// reverse. Scalars are 1x1 matrices.
class Tape {
  public:
    using Var = int;

    Var push(MatrixXd value, std::function<void(Tape&)> backward = nullptr);

    const MatrixXd& value(Var v) const { return nodes_[v].value; }
    MatrixXd& grad(Var v) { return nodes_[v].grad; }
    const MatrixXd& grad(Var v) const { return nodes_[v].grad; }

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node.
    void backward(Var loss);
    void clear();
    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        MatrixXd value;
        MatrixXd grad;
        std::function<void(Tape&)> backward;
    };
    std::vector<Node> nodes_;
};

using Var = Tape::Var;

// Directed edge list for message passing: message target[e] <- source[e].
struct DirectedEdges {
    std::vector<int> target;
    std::vector<int> source;
    int n = 0;  // node count

    size_t count() const { return target.size(); }
};

namespace ops {

Var constant(Tape& t, MatrixXd value);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_const(Tape& t, Var a, double s);
Var mul_elem(Tape& t, Var a, Var b);
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var relu(Tape& t, Var a);
Var tanh_(Tape& t, Var a);
Var log_(Tape& t, Var a);
Var sum(Tape& t, Var a);  // scalar

Var select_rows(Tape& t, Var a, const std::vector<int>& rows);

// Per-row layer normalization with learnable scale/shift (both 1 x d).
Var row_layernorm(Tape& t, Var a, Var scale, Var shift, double eps = 1e-5);

// Rows divided by their L2 norm (epsilon-guarded).
Var row_l2_normalize(Tape& t, Var a, double eps = 1e-12);

// Softmax over an n x 1 column vector (max-subtracted).
Var softmax_vec(Tape& t, Var a);
// Row-wise softmax of an n x c matrix.
Var row_softmax(Tape& t, Var a);

// Per-edge bilinear logits: out[e] = dot(K.row(target[e]), Q.row(source[e])) / sqrt(d).
Var edge_dot(Tape& t, Var keys, Var queries, const DirectedEdges& edges);

// Softmax of edge logits grouped by target node; isolated nodes have no entries.
Var edge_softmax(Tape& t, Var logits, const DirectedEdges& edges);

// messages.row(i) = sum over edges targeting i of coeff[e] * values.row(source[e]).
Var edge_weighted_sum(Tape& t, Var coefficients, Var values, const DirectedEdges& edges);

// Softmax cross-entropy treating an n x 1 score vector as logits.
Var cross_entropy_logits(Tape& t, Var scores, int label);

// sum or mean over pairs of softplus(w[first] - w[second]); empty -> constant 0.
Var pairwise_softplus(Tape& t, Var w, const std::vector<std::pair<int, int>>& pairs, bool mean);

// RankNet terms as literally printed: sum over pairs of
// s * log(sigmoid(w_i - w_j)) + (1 - s) * log(1 - sigmoid(w_i - w_j)).
Var pairwise_ranknet_literal(Tape& t, Var w,
                             const std::vector<std::tuple<int, int, int>>& pairs_with_sign);

// Cosine of the angle between two matrices flattened to vectors.
Var frobenius_cosine(Tape& t, Var a, Var b);

}  // namespace ops

}  // namespace racr
