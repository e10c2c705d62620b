#include "racr/config.hpp"

#include <set>

#include <json.hpp>

namespace racr {

using nlohmann::json;

TrainConfig TrainConfig::defaults(const std::string& dataset) {
    TrainConfig cfg;
    if (dataset == "skin") {
        // baseline values above
    } else if (dataset == "head_neck") {
        cfg.lambda1 = 0.1;
        cfg.max_epochs = 100;
    } else if (dataset == "lung") {
        cfg.num_classes = 3;
        cfg.tau = 0.3;
        cfg.lambda1 = 0.3;
        cfg.max_epochs = 100;
    } else {
        throw ValidationError("unknown dataset preset: " + dataset);
    }
    return cfg;
}

DiffusionConfig TrainConfig::diffusion() const {
    DiffusionConfig d;
    d.alpha = alpha;
    d.truncation_tol = truncation_tol;
    d.top_m = top_m;
    d.delta = delta;
    d.k_latent = k_latent;
    d.k_spatial = k_spatial;
    d.use_similarity = use_similarity;
    return d;
}

void TrainConfig::validate() const {
    if (num_classes < 2) throw ValidationError("config: num_classes must be >= 2");
    if (d_h < 1 || layers < 1) throw ValidationError("config: bad architecture sizes");
    if (dropout < 0 || dropout >= 1) throw ValidationError("config: dropout must be in [0,1)");
    diffusion().validate();
    static const std::set<std::string> graph_modes{"dual", "latent", "spatial", "none"};
    if (!graph_modes.count(graph_mode)) throw ValidationError("config: bad graph_mode");
    if (tau <= 0) throw ValidationError("config: tau must be > 0");
    if (prototype_mode != "trainable" && prototype_mode != "ema")
        throw ValidationError("config: bad prototype_mode");
    if (grade_loss_mode != "softmax" && grade_loss_mode != "literal")
        throw ValidationError("config: bad grade_loss_mode");
    if (top_k < 1) throw ValidationError("config: top_k must be >= 1");
    if (bin_width <= 0) throw ValidationError("config: bin_width must be > 0");
    if (pair_cap < 1) throw ValidationError("config: pair_cap must be >= 1");
    if (intra_mode != "ranknet" && intra_mode != "literal")
        throw ValidationError("config: bad intra_mode");
    if (diversity_mode != "decorrelate" && diversity_mode != "literal")
        throw ValidationError("config: bad diversity_mode");
    if (lambda1 < 0 || lambda2 < 0) throw ValidationError("config: negative lambda");
    if (learning_rate < 0 || weight_decay < 0) throw ValidationError("config: bad optimizer values");
    if (batch_size < 1 || max_epochs < 1) throw ValidationError("config: bad loop sizes");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw ValidationError("config: betas must be in [0,1)");
    if (early_stop_patience < 1) throw ValidationError("config: bad patience");
    if (warmup_epochs < 0) throw ValidationError("config: bad warmup");
    if (beta_cb < 0 || beta_cb >= 1) throw ValidationError("config: beta_cb must be in [0,1)");
}

std::string config_to_json(const TrainConfig& c) {
    json out{{"num_classes", c.num_classes},
             {"d_h", c.d_h},
             {"layers", c.layers},
             {"dropout", c.dropout},
             {"alpha", c.alpha},
             {"truncation_tol", c.truncation_tol},
             {"top_m", c.top_m},
             {"delta", c.delta},
             {"k_latent", c.k_latent},
             {"k_spatial", c.k_spatial},
             {"use_similarity", c.use_similarity},
             {"graph_mode", c.graph_mode},
             {"message_scale", c.message_scale},
             {"tau", c.tau},
             {"prototype_mode", c.prototype_mode},
             {"grade_loss_mode", c.grade_loss_mode},
             {"top_k", c.top_k},
             {"bin_width", c.bin_width},
             {"pair_cap", c.pair_cap},
             {"intra_mode", c.intra_mode},
             {"diversity_mode", c.diversity_mode},
             {"lambda1", c.lambda1},
             {"lambda2", c.lambda2},
             {"learning_rate", c.learning_rate},
             {"weight_decay", c.weight_decay},
             {"batch_size", c.batch_size},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"max_epochs", c.max_epochs},
             {"early_stop_patience", c.early_stop_patience},
             {"warmup_epochs", c.warmup_epochs},
             {"beta_cb", c.beta_cb},
             {"seed", c.seed}};
    return out.dump(2) + "\n";
}

TrainConfig config_from_json(const std::string& json_text, TrainConfig base) {
    json parsed;
    try {
        parsed = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ManifestError(std::string("bad config json: ") + e.what());
    }
    static const std::set<std::string> known{
        "num_classes", "d_h", "layers", "dropout", "alpha", "truncation_tol", "top_m",
        "delta", "k_latent", "k_spatial", "use_similarity", "graph_mode", "message_scale",
        "tau", "prototype_mode", "grade_loss_mode", "top_k", "bin_width", "pair_cap",
        "intra_mode", "diversity_mode", "lambda1", "lambda2", "learning_rate",
        "weight_decay", "batch_size", "beta1", "beta2", "max_epochs",
        "early_stop_patience", "warmup_epochs", "beta_cb", "seed"};
    for (const auto& [key, value] : parsed.items())
        if (!known.count(key)) throw ValidationError("config: unknown key '" + key + "'");

    TrainConfig c = base;
    auto get = [&](const char* key, auto& field) {
        if (parsed.contains(key)) field = parsed.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("num_classes", c.num_classes);
    get("d_h", c.d_h);
    get("layers", c.layers);
    get("dropout", c.dropout);
    get("alpha", c.alpha);
    get("truncation_tol", c.truncation_tol);
    get("top_m", c.top_m);
    get("delta", c.delta);
    get("k_latent", c.k_latent);
    get("k_spatial", c.k_spatial);
    get("use_similarity", c.use_similarity);
    get("graph_mode", c.graph_mode);
    get("message_scale", c.message_scale);
    get("tau", c.tau);
    get("prototype_mode", c.prototype_mode);
    get("grade_loss_mode", c.grade_loss_mode);
    get("top_k", c.top_k);
    get("bin_width", c.bin_width);
    get("pair_cap", c.pair_cap);
    get("intra_mode", c.intra_mode);
    get("diversity_mode", c.diversity_mode);
    get("lambda1", c.lambda1);
    get("lambda2", c.lambda2);
    get("learning_rate", c.learning_rate);
    get("weight_decay", c.weight_decay);
    get("batch_size", c.batch_size);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("max_epochs", c.max_epochs);
    get("early_stop_patience", c.early_stop_patience);
    get("warmup_epochs", c.warmup_epochs);
    get("beta_cb", c.beta_cb);
    get("seed", c.seed);
    c.validate();
    return c;
}

}  // namespace racr
