#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "racr/common.hpp"

namespace racr {

// Ordinal grade code. 4-class mode: 0=normal 1=well 2=moderate 3=poor.
// 3-class (lung) mode: 0=normal 1=moderate 2=poor.
struct GradeLabel {
    int value = 0;

    friend bool operator==(const GradeLabel&, const GradeLabel&) = default;
    friend auto operator<=>(const GradeLabel&, const GradeLabel&) = default;
};

// Evaluation-only ground truth for a tumor region; never used in training.
struct RegionAnnotation {
    std::string region_id;
    std::vector<int> patch_indices;  // sorted, unique, < N
    GradeLabel region_grade;

    friend bool operator==(const RegionAnnotation&, const RegionAnnotation&) = default;
};

// One WSI: N patch features on a tile grid plus a single bag-level grade.
struct Bag {
    std::string bag_id;
    GradeLabel grade;
    int num_classes = 4;
    std::vector<std::pair<int, int>> coords;  // (s, t) tile-grid indices
    MatrixXf features;                        // N x d_f, row per patch
    std::vector<RegionAnnotation> annotations;

    int n() const { return static_cast<int>(coords.size()); }
    int feature_dim() const { return static_cast<int>(features.cols()); }

    // Throws ValidationError when an invariant is broken.
    void validate() const;
};

bool operator==(const Bag& a, const Bag& b);

struct SplitSpec {
    int fold_count = 5;
    double train_fraction = 0.64;
    double val_fraction = 0.16;
    double test_fraction = 0.20;
};

// Index lists into the dataset for one cross-validation fold.
struct Fold {
    std::vector<int> train, val, test;
};

struct SynthSpec {
    int num_classes = 4;
    std::vector<int> class_counts;  // bags per grade, size num_classes
    int d_f = 32;
    int min_patches = 30;
    int max_patches = 80;
    double noise_scale = 0.6;
    double planted_fraction = 0.25;     // fraction of tumor patches in a diseased bag
    double secondary_region_prob = 0.5; // chance a grade-g bag also carries a grade g-1 region
    // Optional explicit unit-norm signatures (num_classes-1 rows, d_f cols,
    // pairwise angle >= 60 degrees). Empty -> random orthonormal set.
    MatrixXd signatures;

    void validate() const;
};

// --- bag directory format -------------------------------------------------
// <dir>/<bag_id>/manifest.json   header: bag_id, grade, num_classes, n, d_f,
//                                coords, feature_file, annotations
// <dir>/<bag_id>/features.f32    little-endian row-major float32, N*d_f values

fs::path write_bag(const Bag& bag, const fs::path& directory);
Bag read_bag(const fs::path& bag_dir);

// Loads every subdirectory of `dataset_dir` that holds a manifest, sorted by bag_id.
std::vector<Bag> load_dataset(const fs::path& dataset_dir);

std::vector<Bag> generate_synthetic_dataset(const SynthSpec& spec, uint64_t seed);

std::vector<Fold> stratified_kfold(const std::vector<Bag>& bags, const SplitSpec& spec,
                                   uint64_t seed);
std::vector<Fold> stratified_kfold_labels(const std::vector<int>& labels, const SplitSpec& spec,
                                          uint64_t seed);

// Effective-number class weights (weight_c ~ (1-beta)/(1-beta^n_c), sum 1).
std::vector<double> class_balanced_weights(const std::vector<int>& class_counts, double beta);

SynthSpec synth_spec_from_json(const std::string& json_text);
std::string synth_spec_to_json(const SynthSpec& spec);

}  // namespace racr
