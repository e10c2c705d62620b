#include "racr/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

namespace racr {

using nlohmann::json;
namespace op = racr::ops;

// --- parameters -----------------------------------------------------------

static MatrixXd xavier(int rows, int cols, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / (rows + cols)));
    MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = gauss(rng);
    return m;
}

ModelParams ModelParams::init(const TrainConfig& cfg, int d_f, uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.d_f = d_f;
    p.d_h = cfg.d_h;
    p.num_classes = cfg.num_classes;
    p.layers = cfg.layers;
    Rng rng(seed);

    p.tensors.push_back({"proj.w1", xavier(d_f, cfg.d_h, rng)});
    p.tensors.push_back({"proj.b1", MatrixXd::Zero(1, cfg.d_h)});
    p.tensors.push_back({"proj.w2", xavier(cfg.d_h, cfg.d_h, rng)});
    p.tensors.push_back({"proj.b2", MatrixXd::Zero(1, cfg.d_h)});
    for (int l = 0; l < cfg.layers; ++l) {
        std::string prefix = "layer" + std::to_string(l) + ".";
        for (const char* name : {"wk", "wv", "wq_lat", "wq_spa", "watt_lat", "watt_spa"})
            p.tensors.push_back({prefix + name, xavier(cfg.d_h, cfg.d_h, rng)});
        p.tensors.push_back({prefix + "ln_scale", MatrixXd::Ones(1, cfg.d_h)});
        p.tensors.push_back({prefix + "ln_shift", MatrixXd::Zero(1, cfg.d_h)});
    }
    p.tensors.push_back({"pool.u", xavier(cfg.d_h, cfg.d_h, rng)});
    p.tensors.push_back({"pool.a", xavier(cfg.d_h, 1, rng)});
    MatrixXd prototypes = xavier(cfg.num_classes, cfg.d_h, rng);
    for (int c = 0; c < prototypes.rows(); ++c) prototypes.row(c).normalize();
    p.tensors.push_back({"proto.z", prototypes});
    return p;
}

int ModelParams::index(const std::string& name) const {
    for (size_t i = 0; i < tensors.size(); ++i)
        if (tensors[i].name == name) return static_cast<int>(i);
    throw ValidationError("unknown parameter tensor: " + name);
}

MatrixXd& ModelParams::at(const std::string& name) { return tensors[index(name)].value; }
const MatrixXd& ModelParams::at(const std::string& name) const {
    return tensors[index(name)].value;
}

void ModelParams::renormalize_prototypes() {
    MatrixXd& z = at("proto.z");
    for (int c = 0; c < z.rows(); ++c) {
        double norm = z.row(c).norm();
        // already-unit rows are left untouched so repeated calls are stable
        if (norm > 1e-12 && std::abs(norm - 1.0) > 1e-12) z.row(c) /= norm;
    }
}

bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.d_f != b.d_f || a.d_h != b.d_h || a.num_classes != b.num_classes ||
        a.layers != b.layers || a.tensors.size() != b.tensors.size())
        return false;
    for (size_t i = 0; i < a.tensors.size(); ++i) {
        if (a.tensors[i].name != b.tensors[i].name) return false;
        if (a.tensors[i].value.rows() != b.tensors[i].value.rows() ||
            a.tensors[i].value.cols() != b.tensors[i].value.cols())
            return false;
        if (a.tensors[i].value != b.tensors[i].value) return false;
    }
    return true;
}

// --- checkpoint -----------------------------------------------------------

void save_checkpoint(const ModelParams& params, const TrainConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    json tensors = json::array();
    std::vector<float> payload;
    for (const auto& tensor : params.tensors) {
        tensors.push_back({{"name", tensor.name},
                           {"rows", tensor.value.rows()},
                           {"cols", tensor.value.cols()}});
        for (int r = 0; r < tensor.value.rows(); ++r)
            for (int c = 0; c < tensor.value.cols(); ++c)
                payload.push_back(static_cast<float>(tensor.value(r, c)));
    }
    json manifest{{"format", "racr-checkpoint-v1"},
                  {"d_f", params.d_f},
                  {"tensors", tensors},
                  {"payload", "params.f32"},
                  {"config", json::parse(config_to_json(cfg))}};
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    write_f32(dir / "params.f32", payload);
}

std::pair<ModelParams, TrainConfig> load_checkpoint(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw ManifestError("bad checkpoint manifest in " + dir.string() + ": " + e.what());
    }
    TrainConfig cfg = config_from_json(manifest.at("config").dump());
    int d_f = manifest.at("d_f").get<int>();
    ModelParams params = ModelParams::init(cfg, d_f, /*seed=*/0);

    auto payload = read_f32(dir / fs::path(manifest.value("payload", "params.f32")));
    size_t offset = 0, tensor_index = 0;
    for (const auto& entry : manifest.at("tensors")) {
        auto name = entry.at("name").get<std::string>();
        int rows = entry.at("rows").get<int>(), cols = entry.at("cols").get<int>();
        if (tensor_index >= params.tensors.size() ||
            params.tensors[tensor_index].name != name ||
            params.tensors[tensor_index].value.rows() != rows ||
            params.tensors[tensor_index].value.cols() != cols)
            throw ManifestError("checkpoint tensor list mismatch at " + name);
        if (offset + size_t(rows) * cols > payload.size())
            throw FeatureSizeError("checkpoint payload too short");
        MatrixXd& value = params.tensors[tensor_index].value;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) value(r, c) = payload[offset++];
        ++tensor_index;
    }
    if (offset != payload.size() || tensor_index != params.tensors.size())
        throw FeatureSizeError("checkpoint payload size mismatch");
    return {std::move(params), cfg};
}

// --- forward --------------------------------------------------------------

DirectedEdges directed_edges(const SparseGraph& graph) {
    DirectedEdges edges;
    edges.n = graph.n;
    for (const auto& edge : graph.edges) {
        edges.target.push_back(edge.i);
        edges.source.push_back(edge.j);
        edges.target.push_back(edge.j);
        edges.source.push_back(edge.i);
    }
    return edges;
}

double lambda1_at_epoch(const TrainConfig& cfg, int epoch) {
    if (cfg.warmup_epochs <= 0) return cfg.lambda1;
    double ramp = std::min(1.0, double(epoch) / cfg.warmup_epochs);
    return cfg.lambda1 * ramp;
}

std::vector<Var> push_params(Tape& tape, const ModelParams& params) {
    std::vector<Var> vars;
    vars.reserve(params.tensors.size());
    for (const auto& tensor : params.tensors) vars.push_back(tape.push(tensor.value));
    return vars;
}

namespace {

struct ParamView {
    const ModelParams& params;
    const std::vector<Var>& vars;
    Var operator()(const std::string& name) const { return vars[params.index(name)]; }
};

// X + broadcast row bias.
Var bias_add(Tape& t, Var x, Var bias) {
    Var ones = op::constant(t, MatrixXd::Ones(t.value(x).rows(), 1));
    return op::add(t, x, op::matmul(t, ones, bias));
}

// One graph's attention message: softmax over neighbors of bilinear key/query
// logits, then attention-weighted value aggregation.
Var graph_message(Tape& t, Var h, Var wk, Var wv, Var wq, Var watt, const DirectedEdges& edges) {
    Var keys = op::matmul(t, h, wk);
    Var values = op::matmul(t, h, wv);
    Var queries = op::matmul(t, op::matmul(t, h, wq), op::transpose(t, watt));
    Var logits = op::edge_dot(t, keys, queries, edges);
    Var coeff = op::edge_softmax(t, logits, edges);
    return op::edge_weighted_sum(t, coeff, values, edges);
}

std::vector<int> top_k_indices(const VectorXd& values, int k) {
    std::vector<int> order(values.size());
    for (int i = 0; i < values.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (values(a) != values(b)) return values(a) > values(b);
        return a < b;
    });
    order.resize(std::min<size_t>(order.size(), k));
    return order;
}

}  // namespace

BagForward forward_bag(Tape& tape, const std::vector<Var>& param_vars, const ModelParams& params,
                       const TrainConfig& cfg, const Bag& bag, const HybridGraph& graph,
                       double lambda1_effective, Rng* dropout_rng, Rng* pair_rng,
                       BagGates* gates) {
    ParamView pv{params, param_vars};
    const int n = bag.n();
    const int num_classes = cfg.num_classes;
    if (bag.num_classes != num_classes)
        throw ValidationError("bag class count disagrees with config: " + bag.bag_id);
    if (graph.latent.n != n || graph.spatial.n != n)
        throw ValidationError("graph/bag node count mismatch: " + bag.bag_id);

    Var features = op::constant(tape, bag.features.cast<double>());

    // Discrete structure (frozen when a filled BagGates is supplied). ReLU
    // active sets are part of it: a finite-difference probe that replays the
    // gates evaluates the same smooth piece of the objective.
    BagGates local;
    BagGates& g = (gates && gates->filled) ? *gates : local;
    const bool replay = g.filled;
    size_t relu_slot = 0;
    auto gated_relu = [&](Var x) -> Var {
        if (replay)
            return op::mul_elem(tape, x, op::constant(tape, g.relu_masks.at(relu_slot++)));
        g.relu_masks.push_back((tape.value(x).array() > 0.0).cast<double>());
        return op::relu(tape, x);
    };

    // Projection MLP: one nonlinear hidden layer, dropout on the hidden units.
    Var hidden = gated_relu(bias_add(tape, op::matmul(tape, features, pv("proj.w1")),
                                     pv("proj.b1")));
    if (dropout_rng && cfg.dropout > 0) {
        std::bernoulli_distribution keep(1.0 - cfg.dropout);
        MatrixXd mask(n, params.d_h);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < params.d_h; ++c)
                mask(r, c) = keep(*dropout_rng) ? 1.0 / (1.0 - cfg.dropout) : 0.0;
        hidden = op::mul_elem(tape, hidden, op::constant(tape, std::move(mask)));
    }
    Var h = bias_add(tape, op::matmul(tape, hidden, pv("proj.w2")), pv("proj.b2"));

    bool use_latent = cfg.graph_mode == "dual" || cfg.graph_mode == "latent";
    bool use_spatial = cfg.graph_mode == "dual" || cfg.graph_mode == "spatial";
    DirectedEdges latent_edges = directed_edges(graph.latent);
    DirectedEdges spatial_edges = directed_edges(graph.spatial);

    for (int l = 0; l < cfg.layers && (use_latent || use_spatial); ++l) {
        std::string prefix = "layer" + std::to_string(l) + ".";
        Var combined = -1;
        if (use_latent) {
            combined = graph_message(tape, h, pv(prefix + "wk"), pv(prefix + "wv"),
                                     pv(prefix + "wq_lat"), pv(prefix + "watt_lat"),
                                     latent_edges);
        }
        if (use_spatial) {
            Var spatial = graph_message(tape, h, pv(prefix + "wk"), pv(prefix + "wv"),
                                        pv(prefix + "wq_spa"), pv(prefix + "watt_spa"),
                                        spatial_edges);
            combined = combined < 0 ? spatial : op::add(tape, combined, spatial);
        }
        if (cfg.message_scale != 1.0) combined = op::scale(tape, combined, cfg.message_scale);
        Var normalized = op::row_layernorm(tape, combined, pv(prefix + "ln_scale"),
                                           pv(prefix + "ln_shift"));
        h = op::add(tape, h, gated_relu(normalized));
    }
    Var contextual = h;  // H^1

    // Patch attention over contextual features.
    Var gated = op::tanh_(tape, op::matmul(tape, contextual, op::transpose(tape, pv("pool.u"))));
    Var attention_logits = op::matmul(tape, gated, pv("pool.a"));
    Var attention = op::softmax_vec(tape, attention_logits);

    // Cosine-softmax patch class scores.
    Var unit_rows = op::row_l2_normalize(tape, contextual);
    Var scores = gated_relu(
        op::scale(tape, op::matmul(tape, unit_rows, op::transpose(tape, pv("proto.z"))),
                  1.0 / cfg.tau));
    Var bag_scores = op::matmul(tape, op::transpose(tape, scores), attention);

    int label = bag.grade.value;
    Var loss_grade;
    if (cfg.grade_loss_mode == "softmax") {
        loss_grade = op::cross_entropy_logits(tape, bag_scores, label);
    } else {
        Var picked = op::select_rows(tape, bag_scores, {label});
        loss_grade = op::scale(tape, op::log_(tape, op::add_const(tape, picked, 1e-8)), -1.0);
    }

    Var patch_probs = op::row_softmax(tape, scores);
    // Copies, not references: later pushes may reallocate the tape's storage.
    const MatrixXd prob_values = tape.value(patch_probs);
    const MatrixXd attention_values = tape.value(attention);

    if (!g.filled) {
        g.proto_mask = (prob_values.array() > 0.5).cast<double>();
        g.present.clear();
        for (int c = 0; c < num_classes; ++c)
            if (g.proto_mask.col(c).sum() > 0) g.present.push_back(c);

        auto by_attention = top_k_indices(attention_values.col(0), cfg.top_k);
        auto by_prob = top_k_indices(prob_values.col(label), cfg.top_k);
        std::set<int> merged(by_attention.begin(), by_attention.end());
        merged.insert(by_prob.begin(), by_prob.end());
        g.candidates.assign(merged.begin(), merged.end());

        g.intra_pairs.clear();
        for (int i : g.candidates)
            for (int j : g.candidates) {
                if (i == j) continue;
                long bin_i = static_cast<long>(std::floor(prob_values(i, label) / cfg.bin_width));
                long bin_j = static_cast<long>(std::floor(prob_values(j, label) / cfg.bin_width));
                if (bin_i < bin_j) g.intra_pairs.emplace_back(i, j);
            }
        if (static_cast<int>(g.intra_pairs.size()) > cfg.pair_cap) {
            if (pair_rng)
                std::shuffle(g.intra_pairs.begin(), g.intra_pairs.end(), *pair_rng);
            g.intra_pairs.resize(cfg.pair_cap);
        }
        g.filled = true;
        if (gates) *gates = g;
    }

    // Inter-grade ranking over WSI-level grade prototypes.
    Var loss_inter;
    std::vector<std::pair<int, int>> adjacent;
    for (size_t k = 0; k + 1 < g.present.size(); ++k)
        if (g.present[k + 1] == g.present[k] + 1)
            adjacent.emplace_back(static_cast<int>(k), static_cast<int>(k + 1));
    if (g.present.empty() || adjacent.empty()) {
        loss_inter = op::constant(tape, MatrixXd::Zero(1, 1));
    } else {
        Var gated_probs = op::mul_elem(tape, patch_probs, op::constant(tape, g.proto_mask));
        Var prototypes = op::matmul(tape, op::transpose(tape, gated_probs), contextual);
        Var proto_gated =
            op::tanh_(tape, op::matmul(tape, prototypes, op::transpose(tape, pv("pool.u"))));
        Var proto_logits = op::matmul(tape, proto_gated, pv("pool.a"));
        Var proto_attention =
            op::softmax_vec(tape, op::select_rows(tape, proto_logits, g.present));
        loss_inter = op::pairwise_softplus(tape, proto_attention, adjacent, /*mean=*/false);
    }

    // Intra-grade RankNet on the candidate set.
    Var loss_intra;
    if (g.intra_pairs.empty()) {
        loss_intra = op::constant(tape, MatrixXd::Zero(1, 1));
    } else if (cfg.intra_mode == "ranknet") {
        loss_intra = op::pairwise_softplus(tape, attention, g.intra_pairs, /*mean=*/true);
    } else {
        std::vector<std::tuple<int, int, int>> signed_pairs;
        for (auto [i, j] : g.intra_pairs) signed_pairs.emplace_back(i, j, 1);
        loss_intra = op::pairwise_ranknet_literal(tape, attention, signed_pairs);
    }

    // Diversity between the two graphs' attention weight matrices.
    Var loss_div = op::constant(tape, MatrixXd::Zero(1, 1));
    if (cfg.graph_mode == "dual") {
        Var accum = -1;
        for (int l = 0; l < cfg.layers; ++l) {
            std::string prefix = "layer" + std::to_string(l) + ".";
            Var w_lat = pv(prefix + "watt_lat"), w_spa = pv(prefix + "watt_spa");
            Var term;
            if (tape.value(w_lat).norm() == 0 || tape.value(w_spa).norm() == 0) {
                term = op::constant(tape, MatrixXd::Zero(1, 1));  // degenerate
            } else {
                Var cosine = op::frobenius_cosine(tape, w_lat, w_spa);
                term = cfg.diversity_mode == "decorrelate"
                           ? op::mul_elem(tape, cosine, cosine)
                           : op::add_const(tape, op::scale(tape, cosine, -1.0), 1.0);
            }
            accum = accum < 0 ? term : op::add(tape, accum, term);
        }
        loss_div = cfg.layers > 1 ? op::scale(tape, accum, 1.0 / cfg.layers) : accum;
    }

    Var rank_sum = op::add(tape, loss_inter, loss_intra);
    Var total = op::add(tape, loss_grade,
                        op::add(tape, op::scale(tape, rank_sum, lambda1_effective),
                                op::scale(tape, loss_div, cfg.lambda2)));

    BagForward out;
    out.loss_grade = tape.value(loss_grade)(0, 0);
    out.loss_inter = tape.value(loss_inter)(0, 0);
    out.loss_intra = tape.value(loss_intra)(0, 0);
    out.loss_div = tape.value(loss_div)(0, 0);
    out.total = tape.value(total)(0, 0);
    out.total_var = total;
    out.attention = attention_values.col(0);
    out.patch_probs = prob_values;
    out.bag_scores = tape.value(bag_scores).col(0);
    out.contextual = tape.value(contextual);
    out.bag_scores.maxCoeff(&out.predicted);

    const char* term_names[] = {"grade", "inter", "intra", "diversity"};
    double term_values[] = {out.loss_grade, out.loss_inter, out.loss_intra, out.loss_div};
    for (int i = 0; i < 4; ++i)
        if (!std::isfinite(term_values[i]))
            throw ValidationError(std::string("non-finite loss term: ") + term_names[i] +
                                  " on bag " + bag.bag_id);
    return out;
}

void ema_update_prototypes(ModelParams& params, const BagForward& forward, double momentum) {
    MatrixXd& prototypes = params.at("proto.z");
    for (int p = 0; p < forward.patch_probs.rows(); ++p) {
        int best;
        double confidence = forward.patch_probs.row(p).maxCoeff(&best);
        if (confidence <= 0.5) continue;
        VectorXd embedding = forward.contextual.row(p).transpose();
        double norm = embedding.norm();
        if (norm < 1e-12) continue;
        prototypes.row(best) =
            momentum * prototypes.row(best) + (1.0 - momentum) * (embedding / norm).transpose();
    }
    params.renormalize_prototypes();
}

}  // namespace racr
