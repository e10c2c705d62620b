#pragma once

#include <string>

#include "racr/graph.hpp"

namespace racr {

// Every knob of the pipeline, serialized as flat JSON with these exact keys.
struct TrainConfig {
    // architecture
    int num_classes = 4;
    int d_h = 64;       // embedding dimension
    int layers = 1;     // self-attention layers
    double dropout = 0.5;  // projection MLP only
    // hybrid graph
    double alpha = 0.25;
    double truncation_tol = 1e-10;
    int top_m = 5;          // latent neighbors retained after diffusion
    double delta = 0.02;
    int k_latent = 8;
    int k_spatial = 8;
    bool use_similarity = true;
    std::string graph_mode = "dual";  // dual | latent | spatial | none
    double message_scale = 1.0;       // 0.5 reproduces the averaged-message reading
    // MIL head
    double tau = 0.1;
    std::string prototype_mode = "trainable";  // trainable | ema
    std::string grade_loss_mode = "softmax";   // softmax | literal
    // ranking constraints
    int top_k = 16;
    double bin_width = 0.1;
    int pair_cap = 512;
    std::string intra_mode = "ranknet";        // ranknet | literal
    std::string diversity_mode = "decorrelate";  // decorrelate | literal
    // optimization
    double lambda1 = 0.2;
    double lambda2 = 0.1;
    double learning_rate = 1e-4;
    double weight_decay = 1e-3;
    int batch_size = 16;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int max_epochs = 60;
    int early_stop_patience = 9;
    int warmup_epochs = 10;
    double beta_cb = 0.999;  // class-balanced sampling
    uint64_t seed = 0;

    // Published defaults per dataset: "skin" (4-class), "head_neck" (4-class),
    // "lung" (3-class).
    static TrainConfig defaults(const std::string& dataset = "skin");

    DiffusionConfig diffusion() const;
    void validate() const;
};

std::string config_to_json(const TrainConfig& cfg);
// Unknown keys are rejected; missing keys keep the base value.
TrainConfig config_from_json(const std::string& json_text, TrainConfig base = {});

}  // namespace racr
