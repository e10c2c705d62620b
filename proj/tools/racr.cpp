// Command-line front end: synth | ingest | graph | train | eval | heatmap | gradcheck.
#include <atomic>
#include <cstdio>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "racr/bag.hpp"
#include "racr/config.hpp"
#include "racr/graph.hpp"
#include "racr/image.hpp"
#include "racr/ingest.hpp"
#include "racr/metrics.hpp"
#include "racr/model.hpp"
#include "racr/trainer.hpp"

using nlohmann::json;
using namespace racr;

namespace {

struct ConfigArgs {
    std::string file;
    std::vector<std::string> overrides;  // key=value
    std::optional<uint64_t> seed;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", file, "Flat JSON config file");
        cmd->add_option("--set", overrides, "Override a config key, e.g. --set lambda1=0.3");
        cmd->add_option("--seed", seed, "Random seed (overrides the config)");
    }

    TrainConfig resolve() const {
        TrainConfig cfg;
        if (!file.empty()) cfg = config_from_json(read_text_file(file), cfg);
        if (!overrides.empty()) {
            json patch = json::object();
            for (const auto& entry : overrides) {
                auto eq = entry.find('=');
                if (eq == std::string::npos)
                    throw ValidationError("--set expects key=value, got: " + entry);
                std::string key = entry.substr(0, eq), raw = entry.substr(eq + 1);
                json value = json::accept(raw) ? json::parse(raw) : json(raw);
                patch[key] = value;
            }
            cfg = config_from_json(patch.dump(), cfg);
        }
        if (seed) cfg.seed = *seed;
        return cfg;
    }
};

template <typename Fn>
void parallel_for(int n, int jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(jobs, n); ++t)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& thread : pool) thread.join();
}

std::vector<HybridGraph> graphs_for(const std::vector<Bag>& bags, const DiffusionConfig& dcfg,
                                    const fs::path& cache_dir, int jobs) {
    std::vector<HybridGraph> graphs(bags.size());
    parallel_for(static_cast<int>(bags.size()), jobs, [&](int i) {
        fs::path cache = cache_dir / (bags[i].bag_id + ".graph");
        if (!cache_dir.empty() && fs::exists(cache))
            graphs[i] = read_graph_cache(cache);
        else
            graphs[i] = build_hybrid_graph(bags[i], dcfg);
    });
    return graphs;
}

// Tile-grid raster of per-patch values in [0,1]: blue (0) -> red (1).
Image render_grid(const std::vector<std::pair<int, int>>& coords, const VectorXd& values,
                  int cell = 12) {
    int rows = 0, cols = 0;
    for (auto [s, t] : coords) {
        rows = std::max(rows, s + 1);
        cols = std::max(cols, t + 1);
    }
    Image image = Image::make(rows * cell, cols * cell, 3, 32);
    for (size_t p = 0; p < coords.size(); ++p) {
        double v = std::clamp(values(static_cast<int>(p)), 0.0, 1.0);
        uint8_t r = static_cast<uint8_t>(255 * v);
        uint8_t g = static_cast<uint8_t>(64 * (1 - std::abs(2 * v - 1)));
        uint8_t b = static_cast<uint8_t>(255 * (1 - v));
        auto [s, t] = coords[p];
        for (int y = 0; y < cell; ++y)
            for (int x = 0; x < cell; ++x) {
                image.at(s * cell + y, t * cell + x, 0) = r;
                image.at(s * cell + y, t * cell + x, 1) = g;
                image.at(s * cell + y, t * cell + x, 2) = b;
            }
    }
    return image;
}

VectorXd non_normal_confidence(const MatrixXd& patch_probs) {
    int start = patch_probs.cols() >= 4 ? 1 : 0;
    VectorXd out(patch_probs.rows());
    for (int p = 0; p < patch_probs.rows(); ++p)
        out(p) = patch_probs.row(p).tail(patch_probs.cols() - start).maxCoeff();
    return out;
}

int cmd_synth(const std::string& spec_file, const fs::path& out, uint64_t seed) {
    SynthSpec spec;
    if (!spec_file.empty())
        spec = synth_spec_from_json(read_text_file(spec_file));
    else
        spec.class_counts = {50, 50, 50, 50};
    auto bags = generate_synthetic_dataset(spec, seed);
    fs::create_directories(out);
    for (const auto& bag : bags) write_bag(bag, out);
    std::printf("wrote %zu bags to %s\n", bags.size(), out.string().c_str());
    return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data, const fs::path& out,
             const fs::path& cache_dir, int jobs) {
    auto [params, cfg] = load_checkpoint(checkpoint);
    auto bags = load_dataset(data);
    if (bags.empty()) throw ValidationError("eval: no bags found in " + data.string());
    auto graphs = graphs_for(bags, cfg.diffusion(), cache_dir, jobs);

    std::vector<BagForward> forwards(bags.size());
    parallel_for(static_cast<int>(bags.size()), jobs, [&](int i) {
        Tape tape;
        auto vars = push_params(tape, params);
        Rng pair_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + i);
        forwards[i] = forward_bag(tape, vars, params, cfg, bags[i], graphs[i], cfg.lambda1,
                                  nullptr, &pair_rng);
    });

    std::vector<int> truth, predicted;
    std::vector<VectorXd> scores;
    for (size_t b = 0; b < bags.size(); ++b) {
        truth.push_back(bags[b].grade.value);
        predicted.push_back(forwards[b].predicted);
        scores.push_back(forwards[b].bag_scores);
    }
    MatrixXd confusion = confusion_matrix(truth, predicted, cfg.num_classes);
    MacroMetrics macro = macro_metrics(confusion);
    ScalarMetric kappa = quadratic_weighted_kappa(confusion);
    ScalarMetric correlation = mcc(confusion);
    AucResult auc = auc_low_high(scores, truth, cfg.num_classes);

    fs::create_directories(out / "heatmaps");
    // Confusion CSV (rows = truth).
    std::string csv;
    for (int i = 0; i < confusion.rows(); ++i) {
        for (int j = 0; j < confusion.cols(); ++j)
            csv += (j ? "," : "") + std::to_string(static_cast<long>(confusion(i, j)));
        csv += "\n";
    }
    write_text_file(out / "confusion.csv", csv);

    // One-vs-rest PR curves over softmax class mass.
    std::vector<PrCurve> curves;
    for (int c = 0; c < cfg.num_classes; ++c) {
        std::vector<double> class_scores;
        std::vector<int> binary;
        for (size_t b = 0; b < bags.size(); ++b) {
            VectorXd e = (scores[b].array() - scores[b].maxCoeff()).exp();
            class_scores.push_back(e(c) / e.sum());
            binary.push_back(truth[b] == c ? 1 : 0);
        }
        curves.push_back(pr_curve(class_scores, binary));
    }
    write_text_file(out / "pr_curves.csv", pr_curves_to_csv(curves));

    // Per-bag heatmaps + aggregated localization.
    LocalizationGroup agg_correct, agg_incorrect;
    bool any_annotations = false;
    for (size_t b = 0; b < bags.size(); ++b) {
        Heatmap h = heatmap(forwards[b].attention);
        write_png(render_grid(bags[b].coords, h.a),
                  out / "heatmaps" / (bags[b].bag_id + "_attention.png"));
        write_png(render_grid(bags[b].coords, non_normal_confidence(forwards[b].patch_probs)),
                  out / "heatmaps" / (bags[b].bag_id + "_probability.png"));
        if (bags[b].annotations.empty()) continue;
        any_annotations = true;
        auto roi = roi_select(forwards[b].attention, forwards[b].patch_probs);
        auto local = localization(roi, bags[b].annotations, forwards[b].patch_probs);
        for (auto [group, add] : {std::pair{&agg_correct, &local.correct},
                                  std::pair{&agg_incorrect, &local.incorrect}}) {
            group->regions += add->regions;
            group->covered += add->covered;
            group->saliency += add->saliency * add->regions;
        }
    }
    json metrics{{"bags", bags.size()},
                 {"macro_precision", macro.macro_precision},
                 {"macro_recall", macro.macro_recall},
                 {"macro_f1", macro.macro_f1},
                 {"per_class_accuracy", std::vector<double>(macro.accuracy.begin(),
                                                            macro.accuracy.end())},
                 {"quadratic_weighted_kappa", kappa.value},
                 {"kappa_degenerate", kappa.degenerate},
                 {"mcc", correlation.value},
                 {"mcc_degenerate", correlation.degenerate}};
    if (auc.defined)
        metrics["auc_low_vs_high"] = auc.value;
    else
        metrics["auc_low_vs_high"] = nullptr;
    if (any_annotations) {
        auto pack = [](LocalizationGroup& g) {
            return json{{"regions", g.regions},
                        {"covered", g.covered},
                        {"sensitivity", g.regions ? double(g.covered) / g.regions : 0.0},
                        {"saliency", g.regions ? g.saliency / g.regions : 0.0}};
        };
        metrics["localization"] = {{"correct_grade", pack(agg_correct)},
                                   {"incorrect_grade", pack(agg_incorrect)}};
    }
    write_text_file(out / "metrics.json", metrics.dump(2) + "\n");
    std::printf("macro_f1=%.4f kappa=%.4f mcc=%.4f\n", macro.macro_f1, kappa.value,
                correlation.value);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rank-aware dual-graph attention MIL for ordinal tumor grading"};
    app.require_subcommand(1);

    // --- synth ---
    auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic planted dataset");
    std::string synth_spec_file;
    fs::path synth_out;
    uint64_t synth_seed = 0;
    synth->add_option("--spec", synth_spec_file, "Synthesis spec JSON");
    synth->add_option("--out", synth_out, "Output dataset directory")->required();
    synth->add_option("--seed", synth_seed, "Random seed");

    // --- ingest ---
    auto* ingest = app.add_subcommand("ingest", "Tile one slide image into a bag directory");
    fs::path ingest_image_file, ingest_out;
    std::string ingest_bag_id, ingest_provider;
    int ingest_grade = 0, ingest_classes = 4;
    uint64_t ingest_seed = 0;
    IngestConfig ingest_cfg;
    ingest->add_option("--image", ingest_image_file, "PPM or PNG slide image")->required();
    ingest->add_option("--out", ingest_out, "Dataset directory")->required();
    ingest->add_option("--bag-id", ingest_bag_id, "Bag identifier")->required();
    ingest->add_option("--grade", ingest_grade, "Bag grade label");
    ingest->add_option("--classes", ingest_classes, "Number of grade classes");
    ingest->add_option("--provider", ingest_provider, "Feature provider command")->required();
    ingest->add_option("--tile-size", ingest_cfg.tile_size, "Tile edge in pixels");
    ingest->add_option("--coverage", ingest_cfg.coverage_fraction, "Min tissue fraction");
    ingest->add_option("--entropy", ingest_cfg.entropy_threshold, "Gradient-entropy cutoff");
    ingest->add_option("--min-component", ingest_cfg.min_component_tiles,
                       "Tissue components below this many tiles are dropped");
    ingest->add_option("--seed", ingest_seed, "Random seed (unused; accepted for uniformity)");

    // --- graph ---
    auto* graph = app.add_subcommand("graph", "Precompute per-bag hybrid graph caches");
    fs::path graph_data, graph_out;
    int graph_jobs = 1;
    ConfigArgs graph_cfg;
    graph->add_option("--data", graph_data, "Dataset directory")->required();
    graph->add_option("--out", graph_out, "Cache directory")->required();
    graph->add_option("--jobs", graph_jobs, "Worker threads");
    graph_cfg.attach(graph);

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "Train on one cross-validation fold");
    fs::path train_data, train_out, train_cache;
    int train_fold = 0, train_jobs = 1;
    ConfigArgs train_cfg;
    train_cmd->add_option("--data", train_data, "Dataset directory")->required();
    train_cmd->add_option("--out", train_out, "Output directory")->required();
    train_cmd->add_option("--fold", train_fold, "Fold index (5-fold split)");
    train_cmd->add_option("--graphs", train_cache, "Graph cache directory (optional)");
    train_cmd->add_option("--jobs", train_jobs, "Worker threads for graph building");
    train_cfg.attach(train_cmd);

    // --- eval ---
    auto* eval_cmd = app.add_subcommand("eval", "Metrics, heatmaps, localization report");
    fs::path eval_checkpoint, eval_data, eval_out, eval_cache;
    int eval_jobs = 1;
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint directory")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
    eval_cmd->add_option("--out", eval_out, "Output directory")->required();
    eval_cmd->add_option("--graphs", eval_cache, "Graph cache directory (optional)");
    eval_cmd->add_option("--jobs", eval_jobs, "Worker threads");
    uint64_t eval_seed = 0;
    eval_cmd->add_option("--seed", eval_seed, "Random seed (accepted for uniformity)");

    // --- heatmap ---
    auto* heat = app.add_subcommand("heatmap", "Attention/probability rasters for one bag");
    fs::path heat_checkpoint, heat_bag, heat_out;
    heat->add_option("--checkpoint", heat_checkpoint, "Checkpoint directory")->required();
    heat->add_option("--bag", heat_bag, "Single bag directory")->required();
    heat->add_option("--out", heat_out, "Output path prefix")->required();
    uint64_t heat_seed = 0;
    heat->add_option("--seed", heat_seed, "Random seed (accepted for uniformity)");

    // --- gradcheck ---
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    int gc_n = 10, gc_df = 12, gc_dh = 8, gc_instances = 1;
    ConfigArgs gc_cfg;
    gc->add_option("--patches", gc_n, "Patches in the probe bag (<= 12)");
    gc->add_option("--df", gc_df, "Input feature dimension");
    gc->add_option("--dh", gc_dh, "Embedding dimension (<= 8)");
    gc->add_option("--instances", gc_instances, "Independent random instances");
    gc_cfg.attach(gc);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) return cmd_synth(synth_spec_file, synth_out, synth_seed);

        if (*ingest) {
            GradeLabel grade{ingest_grade};
            auto dir = ingest_image(ingest_image_file, ingest_out, ingest_bag_id, grade,
                                    ingest_classes, ingest_provider, ingest_cfg);
            std::printf("wrote %s\n", dir.string().c_str());
            return 0;
        }

        if (*graph) {
            TrainConfig cfg = graph_cfg.resolve();
            auto bags = load_dataset(graph_data);
            if (bags.empty()) throw ValidationError("graph: no bags in " + graph_data.string());
            fs::create_directories(graph_out);
            parallel_for(static_cast<int>(bags.size()), graph_jobs, [&](int i) {
                HybridGraph g = build_hybrid_graph(bags[i], cfg.diffusion());
                write_graph_cache(g, graph_out / (bags[i].bag_id + ".graph"));
            });
            std::printf("cached %zu graphs\n", bags.size());
            return 0;
        }

        if (*train_cmd) {
            TrainConfig cfg = train_cfg.resolve();
            auto bags = load_dataset(train_data);
            if (bags.empty()) throw ValidationError("train: no bags in " + train_data.string());
            auto graphs = graphs_for(bags, cfg.diffusion(), train_cache, train_jobs);
            std::vector<int> labels;
            for (const auto& bag : bags) labels.push_back(bag.grade.value);
            auto folds = stratified_kfold_labels(labels, SplitSpec{}, cfg.seed);
            if (train_fold < 0 || train_fold >= static_cast<int>(folds.size()))
                throw ValidationError("train: fold index out of range");
            TrainResult result = train(bags, graphs, folds[train_fold], cfg);
            fs::create_directories(train_out);
            save_checkpoint(result.best_params, cfg, train_out / "checkpoint");
            write_text_file(train_out / "train_log.csv", training_log_csv(result.log));
            json summary{{"best_epoch", result.best_epoch},
                         {"best_val_macro_f1", result.best_val_f1},
                         {"epochs_run", result.log.size()},
                         {"diverged", result.diverged},
                         {"early_stopped", result.early_stopped}};
            write_text_file(train_out / "summary.json", summary.dump(2) + "\n");
            std::printf("best val macro_f1=%.4f at epoch %d\n", result.best_val_f1,
                        result.best_epoch);
            return result.diverged ? 1 : 0;
        }

        if (*eval_cmd)
            return cmd_eval(eval_checkpoint, eval_data, eval_out, eval_cache, eval_jobs);

        if (*heat) {
            auto [params, cfg] = load_checkpoint(heat_checkpoint);
            Bag bag = read_bag(heat_bag);
            HybridGraph g = build_hybrid_graph(bag, cfg.diffusion());
            Tape tape;
            auto vars = push_params(tape, params);
            Rng pair_rng(heat_seed);
            BagForward fwd = forward_bag(tape, vars, params, cfg, bag, g, cfg.lambda1, nullptr,
                                         &pair_rng);
            Heatmap h = heatmap(fwd.attention);
            write_png(render_grid(bag.coords, h.a), heat_out.string() + "_attention.png");
            write_png(render_grid(bag.coords, non_normal_confidence(fwd.patch_probs)),
                      heat_out.string() + "_probability.png");
            std::printf("predicted grade %d\n", fwd.predicted);
            return 0;
        }

        if (*gc) {
            TrainConfig cfg = gc_cfg.resolve();
            cfg.d_h = gc_dh;
            bool all_pass = true;
            for (int inst = 0; inst < gc_instances; ++inst) {
                GradcheckReport report = gradcheck(cfg, gc_n, gc_df, cfg.seed + inst);
                for (const auto& entry : report.entries)
                    std::printf("instance %d  %-18s max_rel_err=%.3e  %s\n", inst,
                                entry.name.c_str(), entry.max_rel_error,
                                entry.pass ? "PASS" : "FAIL");
                all_pass = all_pass && report.pass;
            }
            std::printf("gradcheck %s\n", all_pass ? "PASS" : "FAIL");
            return all_pass ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
