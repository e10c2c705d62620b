#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "racr/bag.hpp"
#include "racr/config.hpp"
#include "racr/graph.hpp"
#include "racr/tape.hpp"

namespace racr {

struct NamedTensor {
    std::string name;
    MatrixXd value;
};

// All trainable tensors in a fixed order:
//   proj.w1 (d_f x d_h), proj.b1 (1 x d_h), proj.w2 (d_h x d_h), proj.b2 (1 x d_h)
//   per layer l: layer<l>.{wk, wv, wq_lat, wq_spa, watt_lat, watt_spa} (d_h x d_h),
//                layer<l>.{ln_scale, ln_shift} (1 x d_h)
//   pool.u (d_h x d_h), pool.a (d_h x 1), proto.z (C x d_h)
struct ModelParams {
    int d_f = 0, d_h = 0, num_classes = 0, layers = 1;
    std::vector<NamedTensor> tensors;

    static ModelParams init(const TrainConfig& cfg, int d_f, uint64_t seed);

    int index(const std::string& name) const;
    MatrixXd& at(const std::string& name);
    const MatrixXd& at(const std::string& name) const;
    // Rows of proto.z scaled back to unit length (cosine-classifier invariant).
    void renormalize_prototypes();
};

bool operator==(const ModelParams& a, const ModelParams& b);

// Checkpoint: manifest.json (tensor names/shapes + full config + d_f) and
// params.f32 with every tensor concatenated row-major as little-endian float32.
void save_checkpoint(const ModelParams& params, const TrainConfig& cfg, const fs::path& dir);
std::pair<ModelParams, TrainConfig> load_checkpoint(const fs::path& dir);

// Data-dependent discrete structure of one bag's loss (prototype gating, top-K
// candidates, ranking pairs). Capturing it once lets a finite-difference probe
// evaluate the same smooth piece of the objective.
struct BagGates {
    bool filled = false;
    MatrixXd proto_mask;                         // N x C, entries in {0,1}
    std::vector<int> present;                    // classes with >= 1 gated patch
    std::vector<int> candidates;                 // intra-grade candidate set S
    std::vector<std::pair<int, int>> intra_pairs;  // (i, j): bin(p_i) < bin(p_j)
    std::vector<MatrixXd> relu_masks;            // active sets, in application order
};

struct BagForward {
    double loss_grade = 0, loss_inter = 0, loss_intra = 0, loss_div = 0, total = 0;
    Var total_var = -1;
    VectorXd attention;      // w_n, sums to 1
    MatrixXd patch_probs;    // N x C softmax over classes
    VectorXd bag_scores;     // raw p_{b,c}
    MatrixXd contextual;     // H^1 rows (for EMA prototypes / analysis)
    int predicted = 0;
};

// Pushes every parameter tensor onto the tape (in ModelParams order) and
// returns their variable ids.
std::vector<Var> push_params(Tape& tape, const ModelParams& params);

// Builds the full per-bag objective on the tape. `dropout_rng` enables the
// projection-MLP dropout (training); null runs in eval mode. `pair_rng` seeds
// the intra-pair subsample when the cap bites.
BagForward forward_bag(Tape& tape, const std::vector<Var>& param_vars, const ModelParams& params,
                       const TrainConfig& cfg, const Bag& bag, const HybridGraph& graph,
                       double lambda1_effective, Rng* dropout_rng, Rng* pair_rng,
                       BagGates* gates = nullptr);

// Linear warm-up of lambda1 over the first warmup_epochs epochs.
double lambda1_at_epoch(const TrainConfig& cfg, int epoch);

DirectedEdges directed_edges(const SparseGraph& graph);

// EMA prototype refresh (prototype_mode == "ema"): confident patches
// (argmax class, probability > 0.5) pull their class prototype with momentum.
void ema_update_prototypes(ModelParams& params, const BagForward& forward, double momentum = 0.9);

}  // namespace racr
