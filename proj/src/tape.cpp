#include "racr/tape.hpp"

#include <cmath>
#include <limits>

namespace racr {

Var Tape::push(MatrixXd value, std::function<void(Tape&)> backward) {
    Node node;
    node.grad = MatrixXd::Zero(value.rows(), value.cols());
    node.value = std::move(value);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return static_cast<Var>(nodes_.size()) - 1;
}

void Tape::backward(Var loss) {
    if (nodes_[loss].value.size() != 1)
        throw ValidationError("Tape::backward: loss must be scalar");
    nodes_[loss].grad(0, 0) = 1.0;
    for (int v = loss; v >= 0; --v)
        if (nodes_[v].backward) nodes_[v].backward(*this);
}

void Tape::clear() { nodes_.clear(); }

namespace ops {

static double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
static double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

Var constant(Tape& t, MatrixXd value) { return t.push(std::move(value)); }

Var add(Tape& t, Var a, Var b) {
    Var out = static_cast<Var>(t.size());
    return t.push(t.value(a) + t.value(b), [=](Tape& tp) {
        tp.grad(a) += tp.grad(out);
        tp.grad(b) += tp.grad(out);
    });
}

Var sub(Tape& t, Var a, Var b) {
    Var out = static_cast<Var>(t.size());
    return t.push(t.value(a) - t.value(b), [=](Tape& tp) {
        tp.grad(a) += tp.grad(out);
        tp.grad(b) -= tp.grad(out);
    });
}

Var scale(Tape& t, Var a, double s) {
    Var out = static_cast<Var>(t.size());
    return t.push(s * t.value(a), [=](Tape& tp) { tp.grad(a) += s * tp.grad(out); });
}

Var add_const(Tape& t, Var a, double s) {
    Var out = static_cast<Var>(t.size());
    return t.push(t.value(a).array() + s, [=](Tape& tp) { tp.grad(a) += tp.grad(out); });
}

Var mul_elem(Tape& t, Var a, Var b) {
    Var out = static_cast<Var>(t.size());
    return t.push(t.value(a).cwiseProduct(t.value(b)), [=](Tape& tp) {
        tp.grad(a) += tp.grad(out).cwiseProduct(tp.value(b));
        tp.grad(b) += tp.grad(out).cwiseProduct(tp.value(a));
    });
}

Var matmul(Tape& t, Var a, Var b) {
    Var out = static_cast<Var>(t.size());
    return t.push(t.value(a) * t.value(b), [=](Tape& tp) {
        tp.grad(a) += tp.grad(out) * tp.value(b).transpose();
        tp.grad(b) += tp.value(a).transpose() * tp.grad(out);
    });
}

Var transpose(Tape& t, Var a) {
    Var out = static_cast<Var>(t.size());
    return t.push(t.value(a).transpose(),
                  [=](Tape& tp) { tp.grad(a) += tp.grad(out).transpose(); });
}

Var relu(Tape& t, Var a) {
    Var out = static_cast<Var>(t.size());
    return t.push(t.value(a).cwiseMax(0.0), [=](Tape& tp) {
        tp.grad(a) += tp.grad(out).cwiseProduct(
            (tp.value(a).array() > 0.0).cast<double>().matrix());
    });
}

Var tanh_(Tape& t, Var a) {
    Var out = static_cast<Var>(t.size());
    return t.push(t.value(a).array().tanh(), [=](Tape& tp) {
        tp.grad(a) += tp.grad(out).cwiseProduct(
            (1.0 - tp.value(out).array().square()).matrix());
    });
}

Var log_(Tape& t, Var a) {
    Var out = static_cast<Var>(t.size());
    return t.push(t.value(a).array().log(), [=](Tape& tp) {
        tp.grad(a) += tp.grad(out).cwiseQuotient(tp.value(a));
    });
}

Var sum(Tape& t, Var a) {
    MatrixXd total(1, 1);
    total(0, 0) = t.value(a).sum();
    Var out = static_cast<Var>(t.size());
    return t.push(total, [=](Tape& tp) { tp.grad(a).array() += tp.grad(out)(0, 0); });
}

Var select_rows(Tape& t, Var a, const std::vector<int>& rows) {
    MatrixXd picked(rows.size(), t.value(a).cols());
    for (size_t r = 0; r < rows.size(); ++r) picked.row(r) = t.value(a).row(rows[r]);
    Var out = static_cast<Var>(t.size());
    return t.push(std::move(picked), [=, rows = rows](Tape& tp) {
        for (size_t r = 0; r < rows.size(); ++r)
            tp.grad(a).row(rows[r]) += tp.grad(out).row(r);
    });
}

Var row_layernorm(Tape& t, Var a, Var scale, Var shift, double eps) {
    const MatrixXd& x = t.value(a);
    int n = static_cast<int>(x.rows());
    MatrixXd normalized(n, x.cols());
    VectorXd inv_std(n);
    for (int r = 0; r < n; ++r) {
        double mean = x.row(r).mean();
        double var = (x.row(r).array() - mean).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        normalized.row(r) = (x.row(r).array() - mean) * inv_std(r);
    }
    MatrixXd y(n, x.cols());
    for (int r = 0; r < n; ++r)
        y.row(r) = normalized.row(r).cwiseProduct(t.value(scale).row(0)) + t.value(shift).row(0);
    Var out = static_cast<Var>(t.size());
    return t.push(std::move(y),
                  [=, normalized = std::move(normalized),
                   inv_std = std::move(inv_std)](Tape& tp) {
        const MatrixXd& g = tp.grad(out);
        for (int r = 0; r < n; ++r) {
            tp.grad(scale).row(0) += g.row(r).cwiseProduct(normalized.row(r));
            tp.grad(shift).row(0) += g.row(r);
            Eigen::RowVectorXd d_norm = g.row(r).cwiseProduct(tp.value(scale).row(0));
            double mean_dn = d_norm.mean();
            double mean_dn_xhat = d_norm.cwiseProduct(normalized.row(r)).mean();
            tp.grad(a).row(r) += inv_std(r) * (d_norm.array() - mean_dn -
                                               normalized.row(r).array() * mean_dn_xhat)
                                                  .matrix();
        }
    });
}

Var row_l2_normalize(Tape& t, Var a, double eps) {
    const MatrixXd& x = t.value(a);
    int n = static_cast<int>(x.rows());
    VectorXd inv_norm(n);
    MatrixXd y(n, x.cols());
    for (int r = 0; r < n; ++r) {
        inv_norm(r) = 1.0 / std::sqrt(x.row(r).squaredNorm() + eps);
        y.row(r) = x.row(r) * inv_norm(r);
    }
    Var out = static_cast<Var>(t.size());
    return t.push(std::move(y), [=, inv_norm = std::move(inv_norm)](Tape& tp) {
        const MatrixXd& g = tp.grad(out);
        for (int r = 0; r < n; ++r) {
            double along = tp.value(out).row(r).dot(g.row(r));
            tp.grad(a).row(r) += inv_norm(r) * (g.row(r) - along * tp.value(out).row(r));
        }
    });
}

Var softmax_vec(Tape& t, Var a) {
    const MatrixXd& x = t.value(a);
    if (x.cols() != 1) throw ValidationError("softmax_vec: expects a column vector");
    VectorXd y = (x.col(0).array() - x.maxCoeff()).exp();
    y /= y.sum();
    Var out = static_cast<Var>(t.size());
    return t.push(MatrixXd(y), [=](Tape& tp) {
        const MatrixXd& g = tp.grad(out);
        const MatrixXd& prob = tp.value(out);
        double inner = prob.col(0).dot(g.col(0));
        tp.grad(a).col(0) += prob.col(0).cwiseProduct(g.col(0)) - inner * prob.col(0);
    });
}

Var row_softmax(Tape& t, Var a) {
    const MatrixXd& x = t.value(a);
    MatrixXd y(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        Eigen::RowVectorXd e = (x.row(r).array() - x.row(r).maxCoeff()).exp();
        y.row(r) = e / e.sum();
    }
    Var out = static_cast<Var>(t.size());
    return t.push(std::move(y), [=](Tape& tp) {
        const MatrixXd& g = tp.grad(out);
        const MatrixXd& prob = tp.value(out);
        for (int r = 0; r < g.rows(); ++r) {
            double inner = prob.row(r).dot(g.row(r));
            tp.grad(a).row(r) += prob.row(r).cwiseProduct(g.row(r)) - inner * prob.row(r);
        }
    });
}

Var edge_dot(Tape& t, Var keys, Var queries, const DirectedEdges& edges) {
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(t.value(keys).cols()));
    MatrixXd logits(edges.count(), 1);
    for (size_t e = 0; e < edges.count(); ++e)
        logits(e, 0) = inv_sqrt_d * t.value(keys)
                                        .row(edges.target[e])
                                        .dot(t.value(queries).row(edges.source[e]));
    Var out = static_cast<Var>(t.size());
    return t.push(std::move(logits), [=, edges = edges](Tape& tp) {
        for (size_t e = 0; e < edges.count(); ++e) {
            double g = tp.grad(out)(e, 0) * inv_sqrt_d;
            tp.grad(keys).row(edges.target[e]) += g * tp.value(queries).row(edges.source[e]);
            tp.grad(queries).row(edges.source[e]) += g * tp.value(keys).row(edges.target[e]);
        }
    });
}

static std::vector<std::vector<int>> edges_by_target(const DirectedEdges& edges) {
    std::vector<std::vector<int>> groups(edges.n);
    for (size_t e = 0; e < edges.count(); ++e) groups[edges.target[e]].push_back(int(e));
    return groups;
}

Var edge_softmax(Tape& t, Var logits, const DirectedEdges& edges) {
    auto groups = edges_by_target(edges);
    const MatrixXd& x = t.value(logits);
    MatrixXd y = MatrixXd::Zero(x.rows(), 1);
    for (const auto& group : groups) {
        if (group.empty()) continue;
        double peak = -std::numeric_limits<double>::infinity();
        for (int e : group) peak = std::max(peak, x(e, 0));
        double total = 0;
        for (int e : group) total += std::exp(x(e, 0) - peak);
        for (int e : group) y(e, 0) = std::exp(x(e, 0) - peak) / total;
    }
    Var out = static_cast<Var>(t.size());
    return t.push(std::move(y), [=, groups = std::move(groups)](Tape& tp) {
        const MatrixXd& g = tp.grad(out);
        const MatrixXd& prob = tp.value(out);
        for (const auto& group : groups) {
            double inner = 0;
            for (int e : group) inner += prob(e, 0) * g(e, 0);
            for (int e : group) tp.grad(logits)(e, 0) += prob(e, 0) * (g(e, 0) - inner);
        }
    });
}

Var edge_weighted_sum(Tape& t, Var coefficients, Var values, const DirectedEdges& edges) {
    MatrixXd messages = MatrixXd::Zero(edges.n, t.value(values).cols());
    for (size_t e = 0; e < edges.count(); ++e)
        messages.row(edges.target[e]) +=
            t.value(coefficients)(e, 0) * t.value(values).row(edges.source[e]);
    Var out = static_cast<Var>(t.size());
    return t.push(std::move(messages), [=, edges = edges](Tape& tp) {
        const MatrixXd& g = tp.grad(out);
        for (size_t e = 0; e < edges.count(); ++e) {
            tp.grad(coefficients)(e, 0) +=
                g.row(edges.target[e]).dot(tp.value(values).row(edges.source[e]));
            tp.grad(values).row(edges.source[e]) +=
                tp.value(coefficients)(e, 0) * g.row(edges.target[e]);
        }
    });
}

Var cross_entropy_logits(Tape& t, Var scores, int label) {
    const MatrixXd& x = t.value(scores);
    if (x.cols() != 1) throw ValidationError("cross_entropy_logits: expects a column vector");
    double peak = x.maxCoeff();
    double lse = peak + std::log((x.col(0).array() - peak).exp().sum());
    MatrixXd loss(1, 1);
    loss(0, 0) = lse - x(label, 0);
    Var out = static_cast<Var>(t.size());
    return t.push(loss, [=](Tape& tp) {
        const MatrixXd& logits = tp.value(scores);
        VectorXd prob = (logits.col(0).array() - logits.maxCoeff()).exp();
        prob /= prob.sum();
        prob(label) -= 1.0;
        tp.grad(scores).col(0) += tp.grad(out)(0, 0) * prob;
    });
}

Var pairwise_softplus(Tape& t, Var w, const std::vector<std::pair<int, int>>& pairs, bool mean) {
    double norm = mean && !pairs.empty() ? 1.0 / pairs.size() : 1.0;
    MatrixXd loss = MatrixXd::Zero(1, 1);
    for (auto [i, j] : pairs) loss(0, 0) += norm * softplus(t.value(w)(i, 0) - t.value(w)(j, 0));
    Var out = static_cast<Var>(t.size());
    return t.push(loss, [=, pairs = pairs](Tape& tp) {
        double g = tp.grad(out)(0, 0);
        for (auto [i, j] : pairs) {
            double s = sigmoid(tp.value(w)(i, 0) - tp.value(w)(j, 0));
            tp.grad(w)(i, 0) += g * norm * s;
            tp.grad(w)(j, 0) -= g * norm * s;
        }
    });
}

Var pairwise_ranknet_literal(Tape& t, Var w,
                             const std::vector<std::tuple<int, int, int>>& pairs_with_sign) {
    MatrixXd loss = MatrixXd::Zero(1, 1);
    for (auto [i, j, s] : pairs_with_sign) {
        double z = t.value(w)(i, 0) - t.value(w)(j, 0);
        // s*log(sigmoid(z)) + (1-s)*log(1-sigmoid(z)) in overflow-safe form.
        loss(0, 0) += -double(s) * softplus(-z) - (1.0 - double(s)) * softplus(z);
    }
    Var out = static_cast<Var>(t.size());
    return t.push(loss, [=, pairs_with_sign = pairs_with_sign](Tape& tp) {
        double g = tp.grad(out)(0, 0);
        for (auto [i, j, s] : pairs_with_sign) {
            double z = tp.value(w)(i, 0) - tp.value(w)(j, 0);
            double dz = double(s) - sigmoid(z);
            tp.grad(w)(i, 0) += g * dz;
            tp.grad(w)(j, 0) -= g * dz;
        }
    });
}

Var frobenius_cosine(Tape& t, Var a, Var b) {
    double norm_a = t.value(a).norm(), norm_b = t.value(b).norm();
    if (norm_a == 0.0 || norm_b == 0.0) return constant(t, MatrixXd::Zero(1, 1));
    double inner = t.value(a).cwiseProduct(t.value(b)).sum();
    double cosine = inner / (norm_a * norm_b);
    MatrixXd value(1, 1);
    value(0, 0) = cosine;
    Var out = static_cast<Var>(t.size());
    return t.push(value, [=](Tape& tp) {
        double g = tp.grad(out)(0, 0);
        tp.grad(a) +=
            g * (tp.value(b) / (norm_a * norm_b) - cosine * tp.value(a) / (norm_a * norm_a));
        tp.grad(b) +=
            g * (tp.value(a) / (norm_a * norm_b) - cosine * tp.value(b) / (norm_b * norm_b));
    });
}

}  // namespace ops

}  // namespace racr
