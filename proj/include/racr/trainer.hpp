#pragma once

#include <string>
#include <vector>

#include "racr/bag.hpp"
#include "racr/config.hpp"
#include "racr/graph.hpp"
#include "racr/metrics.hpp"
#include "racr/model.hpp"

namespace racr {

// Decoupled-weight-decay adaptive-moment optimizer.
class AdamW {
  public:
    AdamW(const ModelParams& params, const TrainConfig& cfg);

    // grads[i] pairs with params.tensors[i]; frozen names are skipped.
    void step(ModelParams& params, const std::vector<MatrixXd>& grads);

    void freeze(const std::string& name) { frozen_.push_back(name); }

  private:
    double lr_, wd_, beta1_, beta2_;
    long t_ = 0;
    std::vector<MatrixXd> m_, v_;
    std::vector<std::string> frozen_;
};

struct EpochLog {
    int epoch = 0;
    double grade = 0, inter = 0, intra = 0, diversity = 0, total = 0;
    double val_macro_f1 = 0;
};

struct TrainResult {
    ModelParams best_params;
    int best_epoch = -1;
    double best_val_f1 = -1;
    std::vector<EpochLog> log;
    bool diverged = false;
    bool early_stopped = false;
};

std::string training_log_csv(const std::vector<EpochLog>& log);

// Per-bag graphs must align with `bags` by index (precomputed; they depend
// only on the frozen features).
TrainResult train(const std::vector<Bag>& bags, const std::vector<HybridGraph>& graphs,
                  const Fold& fold, const TrainConfig& cfg);

// Eval-mode forward passes over a subset of bags (no dropout, no tape reuse).
std::vector<BagForward> forward_subset(const std::vector<Bag>& bags,
                                       const std::vector<HybridGraph>& graphs,
                                       const std::vector<int>& indices,
                                       const ModelParams& params, const TrainConfig& cfg);

double validation_macro_f1(const std::vector<Bag>& bags, const std::vector<HybridGraph>& graphs,
                           const std::vector<int>& indices, const ModelParams& params,
                           const TrainConfig& cfg);

struct GradcheckEntry {
    std::string name;
    double max_rel_error = 0;
    bool pass = false;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    bool pass = false;
};

// Central finite differences (step 1e-4) against the analytic gradient of the
// full per-bag objective, on a tiny random instance. Every parameter tensor
// is checked; PASS iff relative error < 1e-4 (absolute fallback 1e-7).
GradcheckReport gradcheck(const TrainConfig& cfg, int num_patches, int d_f, uint64_t seed);

}  // namespace racr
