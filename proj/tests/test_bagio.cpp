#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "racr/bag.hpp"

using namespace racr;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("racr_bagio_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Bag random_bag(const std::string& id, Rng& rng, int num_classes = 4) {
    std::uniform_int_distribution<int> n_dist(1, 20), d_dist(2, 8);
    std::normal_distribution<double> g;
    Bag bag;
    bag.bag_id = id;
    bag.num_classes = num_classes;
    bag.grade.value = static_cast<int>(rng() % num_classes);
    int n = n_dist(rng), d_f = d_dist(rng);
    bag.features = MatrixXf(n, d_f);
    for (int p = 0; p < n; ++p) {
        bag.coords.emplace_back(p / 5, p % 5);
        for (int c = 0; c < d_f; ++c) bag.features(p, c) = static_cast<float>(g(rng));
    }
    return bag;
}

bool files_identical(const fs::path& a, const fs::path& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return ca == cb;
}

}  // namespace

TEST_CASE("single-patch zero-feature bag round-trips exactly") {
    auto dir = temp_dir("single");
    Bag bag;
    bag.bag_id = "b0";
    bag.grade.value = 0;
    bag.coords = {{0, 0}};
    bag.features = MatrixXf::Zero(1, 4);
    write_bag(bag, dir);
    CHECK(read_bag(dir / "b0") == bag);
}

TEST_CASE("load errors are distinguished") {
    auto dir = temp_dir("errors");
    Rng rng(1);
    Bag bag = random_bag("b", rng);
    write_bag(bag, dir);

    SUBCASE("truncated feature file -> byte-count error") {
        auto file = dir / "b" / "features.f32";
        fs::resize_file(file, fs::file_size(file) - 1);
        CHECK_THROWS_AS(read_bag(dir / "b"), FeatureSizeError);
    }
    SUBCASE("non-finite payload -> non-finite error") {
        auto file = dir / "b" / "features.f32";
        std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
        float nan = std::nanf("");
        f.write(reinterpret_cast<const char*>(&nan), sizeof nan);
        f.close();
        CHECK_THROWS_AS(read_bag(dir / "b"), NonFiniteError);
    }
    SUBCASE("malformed manifest -> manifest error") {
        write_text_file(dir / "b" / "manifest.json", "{not json");
        CHECK_THROWS_AS(read_bag(dir / "b"), ManifestError);
    }
}

TEST_CASE("random bags round-trip byte-identically") {
    auto dir1 = temp_dir("roundtrip1");
    auto dir2 = temp_dir("roundtrip2");
    Rng rng(77);
    for (int i = 0; i < 100; ++i) {
        Bag bag = random_bag("bag_" + std::to_string(i), rng);
        if (i % 3 == 0)
            bag.annotations.push_back({"r0", {0}, GradeLabel{bag.grade.value}});
        write_bag(bag, dir1);
        Bag loaded = read_bag(dir1 / bag.bag_id);
        CHECK(loaded == bag);
        write_bag(loaded, dir2);
        CHECK(files_identical(dir1 / bag.bag_id / "features.f32",
                              dir2 / bag.bag_id / "features.f32"));
        CHECK(files_identical(dir1 / bag.bag_id / "manifest.json",
                              dir2 / bag.bag_id / "manifest.json"));
    }
}

TEST_CASE("bag invariants are enforced") {
    Rng rng(3);
    Bag bag = random_bag("b", rng);
    SUBCASE("duplicate coordinates") {
        if (bag.n() >= 2) {
            bag.coords[1] = bag.coords[0];
            CHECK_THROWS_AS(bag.validate(), ValidationError);
        }
    }
    SUBCASE("grade out of range") {
        bag.grade.value = bag.num_classes;
        CHECK_THROWS_AS(bag.validate(), ValidationError);
    }
    SUBCASE("annotation index out of range") {
        bag.annotations.push_back({"r", {bag.n()}, GradeLabel{1}});
        CHECK_THROWS_AS(bag.validate(), ValidationError);
    }
}

TEST_CASE("synthetic generator: planted-grade label rule and determinism") {
    SynthSpec spec;
    spec.class_counts = {6, 5, 4, 3};
    spec.d_f = 16;
    spec.min_patches = 12;
    spec.max_patches = 30;

    auto bags = generate_synthetic_dataset(spec, 7);
    auto again = generate_synthetic_dataset(spec, 7);
    REQUIRE(bags.size() == 18);
    REQUIRE(again.size() == bags.size());
    for (size_t i = 0; i < bags.size(); ++i) CHECK(bags[i] == again[i]);

    std::vector<int> counts(4, 0);
    for (const auto& bag : bags) {
        bag.validate();
        ++counts[bag.grade.value];
        if (bag.grade.value == 0) {
            CHECK(bag.annotations.empty());
        } else {
            REQUIRE(!bag.annotations.empty());
            int worst = 0;
            for (const auto& region : bag.annotations)
                worst = std::max(worst, region.region_grade.value);
            CHECK(bag.grade.value == worst);  // label = worst planted grade
        }
    }
    CHECK(counts == std::vector<int>{6, 5, 4, 3});

    SUBCASE("datasets serialize byte-identically across runs") {
        auto d1 = temp_dir("synth1"), d2 = temp_dir("synth2");
        for (const auto& bag : bags) write_bag(bag, d1);
        for (const auto& bag : again) write_bag(bag, d2);
        for (const auto& bag : bags) {
            CHECK(files_identical(d1 / bag.bag_id / "manifest.json",
                                  d2 / bag.bag_id / "manifest.json"));
            CHECK(files_identical(d1 / bag.bag_id / "features.f32",
                                  d2 / bag.bag_id / "features.f32"));
        }
    }
}

TEST_CASE("degenerate synthesis specs are rejected") {
    SynthSpec spec;
    spec.class_counts = {2, 2, 2, 2};
    SUBCASE("no classes") {
        spec.num_classes = 0;
        spec.class_counts = {};
        CHECK_THROWS_AS(spec.validate(), ValidationError);
    }
    SUBCASE("negative noise") {
        spec.noise_scale = -0.1;
        CHECK_THROWS_AS(spec.validate(), ValidationError);
    }
}

TEST_CASE("stratified k-fold: proportions, partition, edge cases") {
    std::vector<int> labels;
    const std::vector<int> counts = {247, 383, 108, 77};
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < counts[c]; ++i) labels.push_back(c);

    auto folds = stratified_kfold_labels(labels, SplitSpec{}, 3);
    REQUIRE(folds.size() == 5);

    std::set<int> all_test;
    for (const auto& fold : folds) {
        std::vector<int> test_per_class(4, 0);
        for (int idx : fold.test) {
            CHECK(all_test.insert(idx).second);  // pairwise disjoint
            ++test_per_class[labels[idx]];
        }
        for (int c = 0; c < 4; ++c)  // ~20% of each class, within one sample
            CHECK(std::abs(test_per_class[c] - counts[c] / 5.0) <= 1.0);
        // train/val/test partition the dataset
        std::set<int> fold_union(fold.test.begin(), fold.test.end());
        for (int idx : fold.train) CHECK(fold_union.insert(idx).second);
        for (int idx : fold.val) CHECK(fold_union.insert(idx).second);
        CHECK(fold_union.size() == labels.size());
    }
    CHECK(all_test.size() == labels.size());  // test folds cover the dataset

    SUBCASE("single fold with all mass in train") {
        SplitSpec spec;
        spec.fold_count = 1;
        spec.train_fraction = 1;
        spec.val_fraction = 0;
        spec.test_fraction = 0;
        auto single = stratified_kfold_labels(labels, spec, 0);
        REQUIRE(single.size() == 1);
        CHECK(single[0].train.size() == labels.size());
        CHECK(single[0].val.empty());
        CHECK(single[0].test.empty());
    }
    SUBCASE("class smaller than fold count is rejected") {
        std::vector<int> tiny = {0, 0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
        CHECK_THROWS_AS(stratified_kfold_labels(tiny, SplitSpec{}, 0), ValidationError);
    }
}

TEST_CASE("class-balanced effective-number weights") {
    auto symmetric = class_balanced_weights({10, 10}, 0.9);
    CHECK(symmetric[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(symmetric[1] == doctest::Approx(0.5).epsilon(1e-12));

    auto uniform = class_balanced_weights({100, 10, 1}, 0.0);
    for (double w : uniform) CHECK(w == doctest::Approx(1.0 / 3).epsilon(1e-12));

    // direct evaluation of the effective-number formula as oracle
    double beta = 0.999;
    double e100 = (1 - std::pow(beta, 100)) / (1 - beta);
    double e10 = (1 - std::pow(beta, 10)) / (1 - beta);
    double w100 = 1 / e100, w10 = 1 / e10;
    auto weights = class_balanced_weights({100, 10}, beta);
    CHECK(weights[0] == doctest::Approx(w100 / (w100 + w10)).epsilon(1e-12));
    CHECK(weights[1] == doctest::Approx(w10 / (w100 + w10)).epsilon(1e-12));

    double total = 0;
    auto many = class_balanced_weights({5, 50, 500, 5000}, 0.999);
    for (size_t c = 0; c + 1 < many.size(); ++c) CHECK(many[c] >= many[c + 1]);
    for (double w : many) {
        CHECK(w > 0);
        total += w;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(class_balanced_weights({10}, 1.0), ValidationError);
}
