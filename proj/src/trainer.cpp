#include "racr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace racr {

// --- optimizer ------------------------------------------------------------

AdamW::AdamW(const ModelParams& params, const TrainConfig& cfg)
    : lr_(cfg.learning_rate), wd_(cfg.weight_decay), beta1_(cfg.beta1), beta2_(cfg.beta2) {
    for (const auto& tensor : params.tensors) {
        m_.push_back(MatrixXd::Zero(tensor.value.rows(), tensor.value.cols()));
        v_.push_back(MatrixXd::Zero(tensor.value.rows(), tensor.value.cols()));
    }
}

void AdamW::step(ModelParams& params, const std::vector<MatrixXd>& grads) {
    if (grads.size() != params.tensors.size())
        throw ValidationError("optimizer: gradient list size mismatch");
    constexpr double eps = 1e-8;
    ++t_;
    double bias1 = 1.0 - std::pow(beta1_, t_);
    double bias2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        if (std::find(frozen_.begin(), frozen_.end(), params.tensors[i].name) != frozen_.end())
            continue;
        const MatrixXd& g = grads[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        MatrixXd m_hat = m_[i] / bias1;
        MatrixXd v_hat = v_[i] / bias2;
        MatrixXd& p = params.tensors[i].value;
        p -= lr_ * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
        p -= lr_ * wd_ * p;  // decoupled decay
    }
}

// --- evaluation helpers ---------------------------------------------------

std::vector<BagForward> forward_subset(const std::vector<Bag>& bags,
                                       const std::vector<HybridGraph>& graphs,
                                       const std::vector<int>& indices,
                                       const ModelParams& params, const TrainConfig& cfg) {
    std::vector<BagForward> out;
    out.reserve(indices.size());
    for (int idx : indices) {
        Tape tape;
        auto vars = push_params(tape, params);
        Rng pair_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + idx);
        out.push_back(forward_bag(tape, vars, params, cfg, bags[idx], graphs[idx],
                                  cfg.lambda1, /*dropout_rng=*/nullptr, &pair_rng));
    }
    return out;
}

double validation_macro_f1(const std::vector<Bag>& bags, const std::vector<HybridGraph>& graphs,
                           const std::vector<int>& indices, const ModelParams& params,
                           const TrainConfig& cfg) {
    auto forwards = forward_subset(bags, graphs, indices, params, cfg);
    std::vector<int> truth, predicted;
    for (size_t k = 0; k < indices.size(); ++k) {
        truth.push_back(bags[indices[k]].grade.value);
        predicted.push_back(forwards[k].predicted);
    }
    return macro_metrics(confusion_matrix(truth, predicted, cfg.num_classes)).macro_f1;
}

// --- training loop --------------------------------------------------------

std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream out;
    out << "epoch,loss_grade,loss_inter,loss_intra,loss_diversity,loss_total,val_macro_f1\n";
    for (const auto& e : log) {
        char line[256];
        std::snprintf(line, sizeof line, "%d,%.8f,%.8f,%.8f,%.8f,%.8f,%.6f\n", e.epoch, e.grade,
                      e.inter, e.intra, e.diversity, e.total, e.val_macro_f1);
        out << line;
    }
    return out.str();
}

TrainResult train(const std::vector<Bag>& bags, const std::vector<HybridGraph>& graphs,
                  const Fold& fold, const TrainConfig& cfg) {
    cfg.validate();
    if (bags.size() != graphs.size())
        throw ValidationError("train: bag/graph list size mismatch");
    if (fold.train.empty() || fold.val.empty())
        throw ValidationError("train: fold has an empty train or val split");

    ModelParams params = ModelParams::init(cfg, bags[fold.train[0]].feature_dim(), cfg.seed);
    AdamW optimizer(params, cfg);
    if (cfg.prototype_mode == "ema") optimizer.freeze("proto.z");

    // Sampling probability per training bag: class weight spread over its class.
    std::vector<int> class_counts(cfg.num_classes, 0);
    for (int idx : fold.train) ++class_counts[bags[idx].grade.value];
    auto class_weights = class_balanced_weights(class_counts, cfg.beta_cb);
    std::vector<double> bag_weights;
    for (int idx : fold.train)
        bag_weights.push_back(class_weights[bags[idx].grade.value] /
                              class_counts[bags[idx].grade.value]);
    std::discrete_distribution<int> sampler(bag_weights.begin(), bag_weights.end());

    Rng sample_rng(cfg.seed);
    Rng dropout_rng(cfg.seed ^ 0x5bf03635ULL);
    Rng pair_rng(cfg.seed ^ 0xc2b2ae35ULL);

    TrainResult result;
    result.best_params = params;
    int stale_epochs = 0;
    const int bags_per_epoch = static_cast<int>(fold.train.size());

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        double lambda1_eff = lambda1_at_epoch(cfg, epoch);
        EpochLog log;
        log.epoch = epoch;
        int seen = 0;
        bool aborted = false;

        for (int start = 0; start < bags_per_epoch && !aborted; start += cfg.batch_size) {
            int batch = std::min(cfg.batch_size, bags_per_epoch - start);
            std::vector<MatrixXd> grads;
            for (const auto& tensor : params.tensors)
                grads.push_back(MatrixXd::Zero(tensor.value.rows(), tensor.value.cols()));
            std::vector<BagForward> forwards;

            for (int b = 0; b < batch; ++b) {
                int idx = fold.train[sampler(sample_rng)];
                Tape tape;
                auto vars = push_params(tape, params);
                BagForward fwd;
                try {
                    fwd = forward_bag(tape, vars, params, cfg, bags[idx], graphs[idx],
                                      lambda1_eff, &dropout_rng, &pair_rng);
                } catch (const ValidationError&) {
                    aborted = true;  // divergence: keep the last good checkpoint
                    break;
                }
                if (!std::isfinite(fwd.total)) {
                    aborted = true;
                    break;
                }
                tape.backward(fwd.total_var);
                for (size_t i = 0; i < vars.size(); ++i)
                    grads[i] += tape.grad(vars[i]) / batch;
                log.grade += fwd.loss_grade;
                log.inter += fwd.loss_inter;
                log.intra += fwd.loss_intra;
                log.diversity += fwd.loss_div;
                log.total += fwd.total;
                ++seen;
                forwards.push_back(std::move(fwd));
            }
            if (aborted) break;
            optimizer.step(params, grads);
            if (cfg.prototype_mode == "ema")
                for (const auto& fwd : forwards) ema_update_prototypes(params, fwd);
            params.renormalize_prototypes();
        }
        if (aborted) {
            result.diverged = true;
            break;
        }
        if (seen > 0) {
            log.grade /= seen;
            log.inter /= seen;
            log.intra /= seen;
            log.diversity /= seen;
            log.total /= seen;
        }
        log.val_macro_f1 = validation_macro_f1(bags, graphs, fold.val, params, cfg);
        result.log.push_back(log);

        if (log.val_macro_f1 > result.best_val_f1) {
            result.best_val_f1 = log.val_macro_f1;
            result.best_epoch = epoch;
            result.best_params = params;
            stale_epochs = 0;
        } else if (++stale_epochs >= cfg.early_stop_patience) {
            result.early_stopped = true;
            break;
        }
    }
    if (result.best_epoch < 0) result.best_params = params;
    return result;
}

// --- finite-difference harness -------------------------------------------

GradcheckReport gradcheck(const TrainConfig& cfg, int num_patches, int d_f, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Bag bag;
    bag.bag_id = "gradcheck";
    bag.num_classes = cfg.num_classes;
    bag.grade.value = cfg.num_classes - 1;
    int side = static_cast<int>(std::ceil(std::sqrt(double(num_patches))));
    bag.features = MatrixXf(num_patches, d_f);
    for (int p = 0; p < num_patches; ++p) {
        bag.coords.emplace_back(p % side, p / side);
        for (int c = 0; c < d_f; ++c)
            bag.features(p, c) = static_cast<float>(gauss(rng) + 0.1);
    }
    bag.validate();
    HybridGraph graph = build_hybrid_graph(bag, cfg.diffusion());

    ModelParams params = ModelParams::init(cfg, d_f, seed);
    double lambda1_eff = cfg.lambda1;

    BagGates gates;
    auto evaluate = [&](const ModelParams& p) {
        Tape local;
        auto local_vars = push_params(local, p);
        return forward_bag(local, local_vars, p, cfg, bag, graph, lambda1_eff,
                           /*dropout_rng=*/nullptr, /*pair_rng=*/nullptr, &gates)
            .total;
    };

    Tape tape;
    auto vars = push_params(tape, params);
    BagForward fwd = forward_bag(tape, vars, params, cfg, bag, graph, lambda1_eff, nullptr,
                                 nullptr, &gates);
    tape.backward(fwd.total_var);

    const double step = 1e-4;
    GradcheckReport report;
    report.pass = true;
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        const MatrixXd& analytic = tape.grad(vars[i]);
        GradcheckEntry entry{params.tensors[i].name, 0.0, true};
        for (int r = 0; r < analytic.rows(); ++r)
            for (int c = 0; c < analytic.cols(); ++c) {
                ModelParams probe = params;
                probe.tensors[i].value(r, c) += step;
                double plus = evaluate(probe);
                probe.tensors[i].value(r, c) -= 2 * step;
                double minus = evaluate(probe);
                double fd = (plus - minus) / (2 * step);
                double a = analytic(r, c);
                double denom = std::max(std::abs(a), std::abs(fd));
                if (denom < 1e-7) continue;  // absolute fallback near zero
                entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - fd) / denom);
            }
        entry.pass = entry.max_rel_error < 1e-4;
        report.pass = report.pass && entry.pass;
        report.entries.push_back(entry);
    }
    return report;
}

}  // namespace racr
